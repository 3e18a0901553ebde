//! Dynamic-trajectory HMC: trajectories double until a generalized no-U-turn
//! condition fails, and the next state is drawn multinomially from the whole
//! trajectory.

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::Target;
use crate::rng::Rng;

/// Energy error beyond which a trajectory is flagged divergent.
const MAX_DELTA_H: f64 = 1000.0;

#[derive(Debug, Clone)]
pub(crate) struct Point {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl Point {
    /// Evaluates the target at `q` with a zero momentum.
    pub fn at<T: Target + ?Sized>(target: &T, q: Vec<f64>) -> Self {
        let mut grad = vec![0.0; q.len()];
        let logp = eval(target, &q, &mut grad);
        Self { p: vec![0.0; q.len()], q, grad, logp }
    }
}

fn eval<T: Target + ?Sized>(target: &T, q: &[f64], grad: &mut [f64]) -> f64 {
    match target.log_density_grad(q, grad) {
        Ok(v) if v.is_finite() && grad.iter().all(|g| g.is_finite()) => v,
        _ => f64::NEG_INFINITY,
    }
}

pub(crate) fn kinetic(p: &[f64], inv_metric: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
}

pub(crate) fn hamiltonian(z: &Point, inv_metric: &[f64]) -> f64 {
    let h = -z.logp + kinetic(&z.p, inv_metric);
    if h.is_nan() {
        f64::INFINITY
    } else {
        h
    }
}

pub(crate) fn leapfrog<T: Target + ?Sized>(target: &T, z: &mut Point, eps: f64, inv_metric: &[f64]) {
    for (p, g) in z.p.iter_mut().zip(&z.grad) {
        *p += 0.5 * eps * g;
    }
    for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(inv_metric) {
        *q += eps * m * p;
    }
    z.logp = eval(target, &z.q, &mut z.grad);
    for (p, g) in z.p.iter_mut().zip(&z.grad) {
        *p += 0.5 * eps * g;
    }
}

pub(crate) fn sample_momentum(z: &mut Point, inv_metric: &[f64], rng: &mut Rng) {
    for (p, m) in z.p.iter_mut().zip(inv_metric) {
        *p = rng.sample::<f64, _>(StandardNormal) / m.sqrt();
    }
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

fn sharp(p: &[f64], inv_metric: &[f64]) -> Vec<f64> {
    p.iter().zip(inv_metric).map(|(a, b)| a * b).collect()
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

fn sum(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TransitionInfo {
    pub accept_stat: f64,
    pub n_leapfrog: usize,
    pub depth: usize,
    pub divergent: bool,
    pub energy: f64,
}

/// Trajectory ends carried through the doubling.
struct Edge {
    p: Vec<f64>,
    p_sharp: Vec<f64>,
}

pub(crate) struct Sampler<'a, T: Target + ?Sized> {
    pub target: &'a T,
    pub eps: f64,
    pub inv_metric: Vec<f64>,
    pub max_depth: usize,
    h0: f64,
    n_leapfrog: usize,
    sum_metro: f64,
    divergent: bool,
}

struct Subtree {
    /// Momentum and sharp momentum at the subtree's first and last leaf in
    /// the direction of integration.
    beg: Edge,
    end: Edge,
    rho: Vec<f64>,
    log_sum_weight: f64,
    propose: Point,
}

impl<'a, T: Target + ?Sized> Sampler<'a, T> {
    pub fn new(target: &'a T, eps: f64, inv_metric: Vec<f64>, max_depth: usize) -> Self {
        Self { target, eps, inv_metric, max_depth, h0: 0.0, n_leapfrog: 0, sum_metro: 0.0, divergent: false }
    }

    /// Builds a subtree of `2^depth` leaves starting from `z`, which is left
    /// at the last leaf. Returns `None` if the subtree is invalid.
    fn build_tree(&mut self, depth: usize, z: &mut Point, sign: f64, rng: &mut Rng) -> Option<Subtree> {
        if depth == 0 {
            leapfrog(self.target, z, sign * self.eps, &self.inv_metric);
            self.n_leapfrog += 1;
            let h = hamiltonian(z, &self.inv_metric);
            if h - self.h0 > MAX_DELTA_H {
                self.divergent = true;
            }
            let lw = self.h0 - h;
            self.sum_metro += if lw > 0.0 { 1.0 } else { lw.exp() };
            if self.divergent {
                return None;
            }
            let ps = sharp(&z.p, &self.inv_metric);
            return Some(Subtree {
                beg: Edge { p: z.p.clone(), p_sharp: ps.clone() },
                end: Edge { p: z.p.clone(), p_sharp: ps },
                rho: z.p.clone(),
                log_sum_weight: lw,
                propose: z.clone(),
            });
        }
        let left = self.build_tree(depth - 1, z, sign, rng)?;
        let right = self.build_tree(depth - 1, z, sign, rng)?;
        let lsw = log_sum_exp(left.log_sum_weight, right.log_sum_weight);
        let take_right = rng.random::<f64>() < (right.log_sum_weight - lsw).exp();
        let rho = sum(&left.rho, &right.rho);
        let mut ok = no_u_turn(&left.beg.p_sharp, &right.end.p_sharp, &rho);
        ok &= no_u_turn(&left.beg.p_sharp, &right.beg.p_sharp, &sum(&left.rho, &right.beg.p));
        ok &= no_u_turn(&left.end.p_sharp, &right.end.p_sharp, &sum(&right.rho, &left.end.p));
        if !ok {
            return None;
        }
        let propose = if take_right { right.propose } else { left.propose };
        Some(Subtree { beg: left.beg, end: right.end, rho, log_sum_weight: lsw, propose })
    }

    /// One transition from `current`; returns the new state.
    pub fn transition(&mut self, current: &Point, rng: &mut Rng) -> (Point, TransitionInfo) {
        let mut z0 = current.clone();
        sample_momentum(&mut z0, &self.inv_metric, rng);
        self.h0 = hamiltonian(&z0, &self.inv_metric);
        self.n_leapfrog = 0;
        self.sum_metro = 0.0;
        self.divergent = false;

        let ps0 = sharp(&z0.p, &self.inv_metric);
        let mut z_fwd = z0.clone();
        let mut z_bck = z0.clone();
        // ends of the whole trajectory, oriented forward in time
        let mut fwd_end = Edge { p: z0.p.clone(), p_sharp: ps0.clone() };
        let mut bck_end = Edge { p: z0.p.clone(), p_sharp: ps0 };
        let mut rho = z0.p.clone();
        let mut log_sum_weight = 0.0;
        let mut sample = z0;
        let mut depth = 0;

        while depth < self.max_depth {
            let forward = rng.random::<f64>() > 0.5;
            let sub = if forward {
                self.build_tree(depth, &mut z_fwd, 1.0, rng)
            } else {
                self.build_tree(depth, &mut z_bck, -1.0, rng)
            };
            let Some(sub) = sub else { break };
            depth += 1;
            if sub.log_sum_weight > log_sum_weight
                || rng.random::<f64>() < (sub.log_sum_weight - log_sum_weight).exp()
            {
                sample = sub.propose.clone();
            }
            log_sum_weight = log_sum_exp(log_sum_weight, sub.log_sum_weight);

            // orient the old tree and the new subtree forward in time
            let (old_rho, new_rho) = (rho.clone(), sub.rho.clone());
            add_into(&mut rho, &sub.rho);
            let ok = if forward {
                // old tree spans bck_end..fwd_end, subtree spans sub.beg..sub.end
                let mut ok = no_u_turn(&bck_end.p_sharp, &sub.end.p_sharp, &rho);
                ok &= no_u_turn(&bck_end.p_sharp, &sub.beg.p_sharp, &sum(&old_rho, &sub.beg.p));
                ok &= no_u_turn(&fwd_end.p_sharp, &sub.end.p_sharp, &sum(&new_rho, &fwd_end.p));
                fwd_end = sub.end;
                ok
            } else {
                // subtree runs backward in time: sub.end is the earliest point
                let mut ok = no_u_turn(&sub.end.p_sharp, &fwd_end.p_sharp, &rho);
                ok &= no_u_turn(&sub.end.p_sharp, &bck_end.p_sharp, &sum(&new_rho, &bck_end.p));
                ok &= no_u_turn(&sub.beg.p_sharp, &fwd_end.p_sharp, &sum(&old_rho, &sub.beg.p));
                bck_end = sub.end;
                ok
            };
            if !ok {
                break;
            }
        }
        let accept_stat = if self.n_leapfrog > 0 { self.sum_metro / self.n_leapfrog as f64 } else { 0.0 };
        let energy = hamiltonian(&sample, &self.inv_metric);
        let info = TransitionInfo { accept_stat, n_leapfrog: self.n_leapfrog, depth, divergent: self.divergent, energy };
        (sample, info)
    }

    /// Heuristic initial step size: double or halve until the one-step
    /// acceptance probability crosses 0.8.
    pub fn init_step_size(&mut self, current: &Point, rng: &mut Rng) {
        let target = 0.8f64.ln();
        let mut z = current.clone();
        sample_momentum(&mut z, &self.inv_metric, rng);
        let h0 = hamiltonian(&z, &self.inv_metric);
        leapfrog(self.target, &mut z, self.eps, &self.inv_metric);
        let delta = h0 - hamiltonian(&z, &self.inv_metric);
        let direction = if delta > target { 1 } else { -1 };
        for _ in 0..100 {
            let mut z = current.clone();
            sample_momentum(&mut z, &self.inv_metric, rng);
            let h0 = hamiltonian(&z, &self.inv_metric);
            leapfrog(self.target, &mut z, self.eps, &self.inv_metric);
            let delta = h0 - hamiltonian(&z, &self.inv_metric);
            if (direction == 1 && !(delta > target)) || (direction == -1 && !(delta < target)) {
                break;
            }
            self.eps = if direction == 1 { 2.0 * self.eps } else { 0.5 * self.eps };
            if self.eps > 1e7 || self.eps < 1e-12 {
                self.eps = self.eps.clamp(1e-12, 1e7);
                break;
            }
        }
    }
}
