//! Matrix-free linear operators and power-iteration operator norms.

use crate::error::{Error, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// A linear map between flat real vectors, given by its action and the
/// action of its adjoint.
pub trait LinearOperator {
    fn dim_in(&self) -> usize;
    fn dim_out(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]);
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]);
}

/// Power iteration on `op* op` from seeded random starts.
///
/// Runs up to 200 iterations per trial, stopping early when the Rayleigh
/// quotient changes by a relative factor below 1e-10; returns the square
/// root of the best Rayleigh quotient over `trials` starts. The Rayleigh
/// quotient of any vector lower-bounds the top eigenvalue, so the result
/// is a certified lower bound on the operator norm (and converges to it).
pub fn estimate_opnorm<O: LinearOperator>(op: &O, trials: usize, seed: u64) -> Result<f64> {
    if trials < 1 {
        return Err(Error::Parameter("trials must be >= 1".into()));
    }
    let n = op.dim_in();
    let m = op.dim_out();
    if n == 0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    let mut y = vec![0.0; m];
    let mut z = vec![0.0; n];
    for _ in 0..trials {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        for a in v.iter_mut() {
            *a /= norm;
        }
        let mut rq_prev = 0.0;
        for _ in 0..200 {
            op.apply(&v, &mut y);
            let rq = y.iter().map(|a| a * a).sum::<f64>();
            if rq == 0.0 {
                rq_prev = 0.0;
                break;
            }
            op.apply_adjoint(&y, &mut z);
            let zn = z.iter().map(|a| a * a).sum::<f64>().sqrt();
            if zn == 0.0 {
                rq_prev = rq;
                break;
            }
            for (a, b) in v.iter_mut().zip(&z) {
                *a = b / zn;
            }
            if (rq - rq_prev).abs() <= 1e-10 * rq.max(1e-300) {
                rq_prev = rq;
                break;
            }
            rq_prev = rq;
        }
        best = best.max(rq_prev);
    }
    Ok(best.sqrt())
}
