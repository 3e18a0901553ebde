//! Small dense Cholesky routines for the per-position neighbor systems
//! (row-major, `n` at most a few dozen).

/// Relative diagonal jitter ladder applied after a failed factorization.
pub(crate) const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// In-place lower Cholesky of a row-major `n × n` SPD matrix. The strict
/// upper triangle is left untouched. Returns `false` when a pivot is not
/// positive.
pub(crate) fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    true
}

/// Factorizes `a` (row-major, unit-scale diagonal) into `l`, retrying with
/// escalating diagonal jitter. Returns the jitter used, or `None` if every
/// rung failed.
pub(crate) fn cholesky_with_jitter(a: &[f64], n: usize, l: &mut Vec<f64>) -> Option<f64> {
    l.clear();
    l.extend_from_slice(a);
    if cholesky_in_place(l, n) {
        return Some(0.0);
    }
    for &jit in &JITTER_LADDER {
        l.clear();
        l.extend_from_slice(a);
        for i in 0..n {
            l[i * n + i] += jit;
        }
        if cholesky_in_place(l, n) {
            return Some(jit);
        }
    }
    None
}

/// Solves `L Lᵀ x = b` in place given the lower factor.
pub(crate) fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
