use clap::Parser;
use spatial_fusion::cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        let (category, code) = e.category();
        eprintln!("spfusion: {category} error: {e}");
        std::process::exit(code);
    }
}
