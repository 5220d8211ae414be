//! Cost functionals and their proximal calculus.
//!
//! Two quadratic kinds ship with proximal support:
//!
//! * `QuadraticPairwise`: `L(v) = sum_{i<j} |v_i - v_j|^2`. Through the
//!   pairwise-difference map `S` the kinetic objective becomes the
//!   perspective sum `sum J(pi, S(m))` with `J(pi, w) = |w|^2 / pi`.
//! * `QuadraticFull`: `L(v) = |v|^2 / 2`, i.e. the perspective `J / 2` on
//!   the raw momentum channels.
//!
//! The proximal operator of `gamma * J` reduces per point to the largest
//! real root of the cubic `(pi - a)(pi + 2 gamma)^2 = gamma * |m|^2`; the
//! conjugate prox follows from Moreau's identity. An additive
//! semi-convex shift adapter covers costs of the form `L + alpha|x|^2/2`
//! for evaluation-only use.

use crate::error::{Error, Result};
use crate::grid::{CenteredField, GridSpec};
use crate::measure::{CouplingTable, DiscreteMeasure};
use crate::par;

/// Cost families with proximal support.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    /// `L(v) = sum_{i<j} |v_i - v_j|^2` (k(k-1)/2 strict pair channels;
    /// identically zero at k = 1).
    QuadraticPairwise,
    /// `L(v) = |v|^2 / 2`.
    QuadraticFull,
}

impl CostKind {
    /// Number of channels of the transformed momentum block.
    pub fn channels(&self, k: usize) -> usize {
        match self {
            CostKind::QuadraticPairwise => k * (k - 1) / 2,
            CostKind::QuadraticFull => k,
        }
    }

    /// `c` such that the objective is the perspective sum `c |w|^2 / pi`
    /// over the transformed channels `w`.
    pub fn perspective_scale(&self) -> f64 {
        match self {
            CostKind::QuadraticPairwise => 1.0,
            CostKind::QuadraticFull => 0.5,
        }
    }
}

/// Evaluation of a static cost at a point of the product grid.
pub trait CostEval {
    fn eval(&self, x: &[f64]) -> f64;
}

impl CostEval for CostKind {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            CostKind::QuadraticPairwise => {
                let mut s = 0.0;
                for i in 0..x.len() {
                    for j in (i + 1)..x.len() {
                        let d = x[i] - x[j];
                        s += d * d;
                    }
                }
                s
            }
            CostKind::QuadraticFull => 0.5 * x.iter().map(|v| v * v).sum::<f64>(),
        }
    }
}

/// `L(x) + alpha |x|^2 / 2`, for evaluation only.
#[derive(Debug, Clone)]
pub struct ShiftedCost<C> {
    pub inner: C,
    pub alpha: f64,
}

impl<C: CostEval> CostEval for ShiftedCost<C> {
    fn eval(&self, x: &[f64]) -> f64 {
        self.inner.eval(x) + 0.5 * self.alpha * x.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Wrap a cost with a semi-convex quadratic shift and return the additive
/// correction `(alpha/2) sum_l int |x_l|^2 dmu_l`. Callers report static
/// values as the shifted optimum minus the correction.
pub fn semiconvex_shift<C: CostEval>(
    cost: C,
    alpha: f64,
    marginals: &[DiscreteMeasure],
) -> Result<(ShiftedCost<C>, f64)> {
    if alpha < 0.0 || !alpha.is_finite() {
        return Err(Error::Parameter("alpha must be nonnegative".into()));
    }
    let mut correction = 0.0;
    for mu in marginals {
        if mu.k != 1 {
            return Err(Error::Dimension("marginals must be 1D".into()));
        }
        for (j, w) in mu.mass.iter().enumerate() {
            let x = j as f64 / mu.n_x as f64;
            correction += 0.5 * alpha * x * x * w;
        }
    }
    Ok((ShiftedCost { inner: cost, alpha }, correction))
}

/// Static cost of a coupling: `sum_atoms mass * L(x_1, ..., x_k)` with
/// coordinates taken as real representatives in `[0, 1)`.
pub fn static_cost<C: CostEval>(gamma: &CouplingTable, cost: &C) -> Result<f64> {
    let n = gamma.n_x as f64;
    let mut total = 0.0;
    let mut buf = vec![0.0; gamma.k];
    for (mi, w) in &gamma.atoms {
        if *w < 0.0 {
            return Err(Error::Validation("negative atom mass".into()));
        }
        for (b, &c) in buf.iter_mut().zip(&mi.coords) {
            *b = c as f64 / n;
        }
        total += w * cost.eval(&buf);
    }
    Ok(total)
}

/// One point of the perspective function's domain: a mass value and the
/// transformed momentum block.
#[derive(Debug, Clone, PartialEq)]
pub struct PerspectivePoint {
    pub pi: f64,
    pub m: Vec<f64>,
}

/// `J(pi, m)` with the lower-semicontinuous convention: `|m|^2/pi` for
/// `pi > 0`, `0` at `(0, 0)`, `+inf` otherwise.
pub fn perspective_value(pi: f64, m_sq: f64) -> f64 {
    if pi > 0.0 {
        m_sq / pi
    } else if pi == 0.0 && m_sq == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

impl PerspectivePoint {
    pub fn value(&self) -> f64 {
        perspective_value(self.pi, self.m.iter().map(|v| v * v).sum())
    }
}

/// Largest real root of `(pi - a)(pi + 2 gamma)^2 = gamma * q` on
/// `[max(0, a), inf)`, or 0 when no positive root exists. Bracketed
/// safeguarded Newton, bisection fallback.
fn prox_cubic_root(gamma: f64, a: f64, q: f64) -> f64 {
    if q == 0.0 {
        return a.max(0.0);
    }
    let f = |pi: f64| {
        let s = pi + 2.0 * gamma;
        (pi - a) * s * s - gamma * q
    };
    let mut lo = a.max(0.0);
    if f(lo) >= 0.0 {
        // only possible when a <= 0: the prox hits the boundary
        return 0.0;
    }
    let mut hi = lo + q / (4.0 * gamma) + 1.0;
    debug_assert!(f(hi) > 0.0);
    let tol = 1e-12 * (gamma * q).max(1.0);
    let mut x = 0.5 * (lo + hi);
    for _ in 0..100 {
        let fx = f(x);
        if fx.abs() <= tol {
            return x;
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let s = x + 2.0 * gamma;
        let dfx = s * s + 2.0 * (x - a) * s;
        let newton = x - fx / dfx;
        x = if dfx > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-15 * (1.0 + x.abs()) {
            return x;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * (1.0 + lo.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Scalar core of the perspective prox: for input `(a, |m|^2 = q)` return
/// `(pi*, s)` with the prox equal to `(pi*, s * m)`.
pub(crate) fn prox_perspective_parts(gamma: f64, a: f64, q: f64) -> (f64, f64) {
    let pi = prox_cubic_root(gamma, a, q);
    if pi > 0.0 {
        (pi, pi / (pi + 2.0 * gamma))
    } else {
        (0.0, 0.0)
    }
}

/// Proximal operator of `gamma * J`: the unique minimizer of
/// `1/2 (pi - p.pi)^2 + 1/2 |m - p.m|^2 + gamma J(pi, m)` over `pi >= 0`.
pub fn prox_perspective(gamma: f64, p: &PerspectivePoint) -> Result<PerspectivePoint> {
    if gamma <= 0.0 || !gamma.is_finite() {
        return Err(Error::Parameter("gamma must be positive".into()));
    }
    let q: f64 = p.m.iter().map(|v| v * v).sum();
    let (pi, s) = prox_perspective_parts(gamma, p.pi, q);
    Ok(PerspectivePoint {
        pi,
        m: p.m.iter().map(|v| v * s).collect(),
    })
}

/// Proximal operator of `sigma * J^*` via Moreau's identity:
/// `p - sigma * Prox_{J/sigma}(p / sigma)`.
pub fn prox_conjugate(sigma: f64, p: &PerspectivePoint) -> Result<PerspectivePoint> {
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::Parameter("sigma must be positive".into()));
    }
    let scaled = PerspectivePoint {
        pi: p.pi / sigma,
        m: p.m.iter().map(|v| v / sigma).collect(),
    };
    let inner = prox_perspective(1.0 / sigma, &scaled)?;
    Ok(PerspectivePoint {
        pi: p.pi - sigma * inner.pi,
        m: p
            .m
            .iter()
            .zip(&inner.m)
            .map(|(v, w)| v - sigma * w)
            .collect(),
    })
}

/// Strict-pair index list `(i, j)` with `i < j`, lexicographic.
pub fn pair_channels(k: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in (i + 1)..k {
            out.push((i, j));
        }
    }
    out
}

/// Pointwise pairwise-difference map applied to a k-component field:
/// channel `(i, j)` is `m_i - m_j`.
pub fn pairwise_diff(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = m.len();
    pair_channels(k)
        .into_iter()
        .map(|(i, j)| {
            let (a, b) = (&m[i], &m[j]);
            let mut out = vec![0.0; a.len()];
            par::fill_indexed(&mut out, |t| a[t] - b[t]);
            out
        })
        .collect()
}

/// Adjoint of [`pairwise_diff`]: component `l` collects `+y_(l,j)` over
/// `j > l` and `-y_(i,l)` over `i < l`. The composite `S* S` equals
/// `k Id - ones ones^T` per point.
pub fn pairwise_diff_adjoint(y: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let pairs = pair_channels(k);
    assert_eq!(y.len(), pairs.len(), "channel count mismatch");
    let len = y.first().map_or(0, |c| c.len());
    (0..k)
        .map(|l| {
            let mut out = vec![0.0; len];
            par::fill_indexed(&mut out, |t| {
                let mut s = 0.0;
                for (c, &(i, j)) in pairs.iter().enumerate() {
                    if i == l {
                        s += y[c][t];
                    } else if j == l {
                        s -= y[c][t];
                    }
                }
                s
            });
            out
        })
        .collect()
}

/// Kinetic objective on the centered grid,
/// `(1/n_t) * sum_{t,x} L(m_c(t,x) / pi_c(t,x)) * pi_c(t,x)`,
/// i.e. the quadrature `density x cell volume` written on cell masses.
/// Returns `+inf` if any cell has `pi_c < 0`, or `pi_c = 0` with
/// `m_c != 0`.
pub fn dynamic_cost(u: &CenteredField, cost: CostKind, g: &GridSpec) -> Result<f64> {
    dynamic_cost_scaled(u, cost, g, 1.0)
}

/// [`dynamic_cost`] with the perspective channels weighted by `scale`;
/// `scale = 1` is the shipped convention.
pub fn dynamic_cost_scaled(
    u: &CenteredField,
    cost: CostKind,
    g: &GridSpec,
    scale: f64,
) -> Result<f64> {
    u.check(g)?;
    let cells = g.cells();
    let n = g.n_t * cells;
    let c = cost.perspective_scale() * scale;
    let total = match cost {
        CostKind::QuadraticPairwise => {
            let pairs = pair_channels(g.k);
            par::sum_indexed(n, |i| {
                let mut q = 0.0;
                for &(a, b) in &pairs {
                    let d = u.m[a][i] - u.m[b][i];
                    q += d * d;
                }
                perspective_value(u.pi[i], c * q)
            })
        }
        CostKind::QuadraticFull => par::sum_indexed(n, |i| {
            let mut q = 0.0;
            for ch in &u.m {
                q += ch[i] * ch[i];
            }
            perspective_value(u.pi[i], c * q)
        }),
    };
    Ok(total / g.n_t as f64)
}

/// Positive-part kinetic energy: like [`dynamic_cost_scaled`] but cells
/// with `pi_c <= 0` contribute zero instead of `+inf`.
///
/// The splitting scheme does not constrain the interpolated mass to be
/// nonnegative, and iterates approach zero-mass cells from below, so the
/// exact perspective sum is infinite along the whole trajectory whenever
/// the optimal coupling has empty cells. This is the finite surrogate
/// recorded in solver diagnostics; `min_mass` quantifies the clipped
/// negativity alongside it.
pub fn dynamic_cost_positive_part(
    u: &CenteredField,
    cost: CostKind,
    g: &GridSpec,
    scale: f64,
) -> Result<f64> {
    u.check(g)?;
    let cells = g.cells();
    let n = g.n_t * cells;
    let c = cost.perspective_scale() * scale;
    let pairs = match cost {
        CostKind::QuadraticPairwise => pair_channels(g.k),
        CostKind::QuadraticFull => Vec::new(),
    };
    let total = par::sum_indexed(n, |i| {
        if u.pi[i] <= 0.0 {
            return 0.0;
        }
        let mut q = 0.0;
        match cost {
            CostKind::QuadraticPairwise => {
                for &(a, b) in &pairs {
                    let d = u.m[a][i] - u.m[b][i];
                    q += d * d;
                }
            }
            CostKind::QuadraticFull => {
                for ch in &u.m {
                    q += ch[i] * ch[i];
                }
            }
        }
        c * q / u.pi[i]
    });
    Ok(total / g.n_t as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{MultiIndex, ScalingMode, StaggeredField};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn pp(pi: f64, m: Vec<f64>) -> PerspectivePoint {
        PerspectivePoint { pi, m }
    }

    #[test]
    fn static_cost_single_atom() {
        let mi = MultiIndex::from_coords(vec![2, 5], 10).unwrap(); // (0.2, 0.5)
        let t = CouplingTable::new(2, 10, vec![(mi, 1.0)]).unwrap();
        let v = static_cost(&t, &CostKind::QuadraticPairwise).unwrap();
        assert!((v - 0.09).abs() <= 1e-15);
    }

    #[test]
    fn static_cost_empty_table() {
        let t = CouplingTable::new(2, 4, vec![]).unwrap();
        assert_eq!(static_cost(&t, &CostKind::QuadraticPairwise).unwrap(), 0.0);
        assert_eq!(static_cost(&t, &CostKind::QuadraticFull).unwrap(), 0.0);
    }

    #[test]
    fn static_cost_three_marginals() {
        // point (0, 0.5, 1), k = 3: 0.25 + 1 + 0.25
        let v = CostKind::QuadraticPairwise.eval(&[0.0, 0.5, 1.0]);
        assert!((v - 1.5).abs() <= 1e-15);
    }

    #[test]
    fn prox_identity_when_momentum_zero() {
        let out = prox_perspective(1.0, &pp(1.0, vec![0.0])).unwrap();
        assert_eq!(out.pi, 1.0);
        assert_eq!(out.m, vec![0.0]);
    }

    #[test]
    fn prox_boundary_case() {
        let out = prox_perspective(1.0, &pp(-3.0, vec![0.0])).unwrap();
        assert_eq!((out.pi, out.m[0]), (0.0, 0.0));
    }

    #[test]
    fn prox_known_cubic_root() {
        // gamma = 1/2, p = (0, m) with |m|^2 = 2: pi* solves pi(pi+1)^2 = 1.
        let m = vec![2.0f64.sqrt()];
        let out = prox_perspective(0.5, &pp(0.0, m.clone())).unwrap();
        assert!((out.pi - 0.46557).abs() <= 1e-4);
        let s = out.pi / (out.pi + 1.0);
        assert!((out.m[0] - m[0] * s).abs() <= 1e-12);
        // residual of the cubic
        let r = out.pi * (out.pi + 1.0) * (out.pi + 1.0) - 1.0;
        assert!(r.abs() <= 1e-10);
    }

    /// Brute-force minimization of the prox objective on a (pi, |m|) grid
    /// with local refinement; independent of the cubic route.
    fn brute_force_prox(gamma: f64, a: f64, r_in: f64) -> (f64, f64) {
        let obj = |pi: f64, r: f64| {
            let j = if pi > 0.0 {
                r * r / pi
            } else if r == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            0.5 * (pi - a) * (pi - a) + 0.5 * (r - r_in) * (r - r_in) + gamma * j
        };
        let (mut lo_p, mut hi_p) = (0.0, a.max(0.0) + r_in * r_in / (4.0 * gamma) + 2.0);
        let (mut lo_r, mut hi_r) = (0.0, r_in.max(0.0));
        let mut best = (0.0, 0.0);
        for _ in 0..8 {
            let mut best_val = f64::INFINITY;
            for ip in 0..=120 {
                let pi = lo_p + (hi_p - lo_p) * ip as f64 / 120.0;
                for ir in 0..=120 {
                    let r = lo_r + (hi_r - lo_r).max(0.0) * ir as f64 / 120.0;
                    let v = obj(pi, r);
                    if v < best_val {
                        best_val = v;
                        best = (pi, r);
                    }
                }
            }
            let wp = (hi_p - lo_p) / 30.0;
            let wr = ((hi_r - lo_r) / 30.0).max(1e-14);
            lo_p = (best.0 - wp).max(0.0);
            hi_p = best.0 + wp;
            lo_r = (best.1 - wr).max(0.0);
            hi_r = best.1 + wr;
        }
        best
    }

    #[test]
    fn prox_matches_brute_force_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..25 {
            let gamma = rng.gen_range(0.05..5.0);
            let a = rng.gen_range(-3.0..3.0);
            let r = rng.gen_range(0.0..3.0);
            let out = prox_perspective(gamma, &pp(a, vec![r])).unwrap();
            let (bp, br) = brute_force_prox(gamma, a, r);
            assert!(
                (out.pi - bp).abs() <= 1e-5 && (out.m[0] - br).abs() <= 1e-5,
                "gamma={gamma} a={a} r={r}: got ({}, {}), brute ({bp}, {br})",
                out.pi,
                out.m[0]
            );
        }
    }

    #[test]
    fn prox_is_firmly_nonexpansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let gamma = rng.gen_range(0.05..5.0);
            let p = pp(rng.gen_range(-2.0..2.0), vec![rng.gen_range(-2.0..2.0)]);
            let q = pp(rng.gen_range(-2.0..2.0), vec![rng.gen_range(-2.0..2.0)]);
            let fp = prox_perspective(gamma, &p).unwrap();
            let fq = prox_perspective(gamma, &q).unwrap();
            let d_pi = fp.pi - fq.pi;
            let d_m = fp.m[0] - fq.m[0];
            let lhs = d_pi * d_pi + d_m * d_m;
            let rhs = d_pi * (p.pi - q.pi) + d_m * (p.m[0] - q.m[0]);
            assert!(lhs <= rhs + 1e-10);
        }
    }

    #[test]
    fn perspective_is_jointly_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let p = pp(rng.gen_range(0.01..2.0), vec![rng.gen_range(-2.0..2.0)]);
            let q = pp(rng.gen_range(0.01..2.0), vec![rng.gen_range(-2.0..2.0)]);
            let lam: f64 = rng.gen_range(0.0..1.0);
            let mix = pp(
                lam * p.pi + (1.0 - lam) * q.pi,
                vec![lam * p.m[0] + (1.0 - lam) * q.m[0]],
            );
            assert!(mix.value() <= lam * p.value() + (1.0 - lam) * q.value() + 1e-10);
        }
    }

    #[test]
    fn moreau_identity_holds_by_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let sigma = rng.gen_range(0.1..5.0);
            let p = pp(rng.gen_range(-2.0..2.0), vec![rng.gen_range(-2.0..2.0)]);
            let conj = prox_conjugate(sigma, &p).unwrap();
            let scaled = pp(p.pi / sigma, vec![p.m[0] / sigma]);
            let inner = prox_perspective(1.0 / sigma, &scaled).unwrap();
            assert!((p.pi - conj.pi - sigma * inner.pi).abs() <= 1e-12);
            assert!((p.m[0] - conj.m[0] - sigma * inner.m[0]).abs() <= 1e-12);
        }
    }

    #[test]
    fn conjugate_prox_examples() {
        let out = prox_conjugate(1.0, &pp(1.0, vec![0.0])).unwrap();
        assert!(out.pi.abs() <= 1e-12 && out.m[0].abs() <= 1e-12);
        for sigma in [0.3, 1.0, 4.0] {
            let out = prox_conjugate(sigma, &pp(0.0, vec![0.0])).unwrap();
            assert_eq!((out.pi, out.m[0]), (0.0, 0.0));
        }
    }

    /// The conjugate `J*` is the indicator of `{z_pi + |z_m|^2/4 <= 0}`, so
    /// `Prox_{sigma J*}` is the Euclidean projection onto that paraboloid
    /// set for every sigma. Check against a direct 1D search.
    #[test]
    fn conjugate_prox_is_paraboloid_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let sigma = rng.gen_range(0.1..5.0);
            let p = pp(rng.gen_range(-2.0..2.0), vec![rng.gen_range(-2.0..2.0)]);
            let out = prox_conjugate(sigma, &p).unwrap();
            // feasibility
            assert!(out.pi + 0.25 * out.m[0] * out.m[0] <= 1e-9);
            // optimality vs fine search over the boundary + interior point
            let mut best = f64::INFINITY;
            if p.pi + 0.25 * p.m[0] * p.m[0] <= 0.0 {
                best = 0.0;
            }
            for i in 0..=40_000 {
                let w = -4.0 + 8.0 * i as f64 / 40_000.0;
                let z_pi = -0.25 * w * w;
                let d = (z_pi - p.pi).powi(2) + (w - p.m[0]).powi(2);
                if d < best {
                    best = d;
                }
            }
            let got = (out.pi - p.pi).powi(2) + (out.m[0] - p.m[0]).powi(2);
            assert!(got <= best + 1e-6, "projection not optimal: {got} vs {best}");
        }
    }

    #[test]
    fn pairwise_diff_examples() {
        let m = vec![vec![3.0], vec![1.0]];
        let y = pairwise_diff(&m);
        assert_eq!(y.len(), 1);
        assert_eq!(y[0], vec![2.0]);

        let diag = vec![vec![1.0], vec![1.0], vec![1.0]];
        let y = pairwise_diff(&diag);
        assert!(y.iter().all(|c| c[0] == 0.0));
    }

    #[test]
    fn pairwise_diff_adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in [2usize, 3, 4] {
            let n = 17;
            let m: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let y: Vec<Vec<f64>> = (0..k * (k - 1) / 2)
                .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let sm = pairwise_diff(&m);
            let sy = pairwise_diff_adjoint(&y, k);
            let lhs: f64 = sm
                .iter()
                .zip(&y)
                .map(|(a, b)| par::dot(a, b))
                .sum();
            let rhs: f64 = m.iter().zip(&sy).map(|(a, b)| par::dot(a, b)).sum();
            assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn gram_map_is_k_identity_minus_ones() {
        let k = 4;
        let m: Vec<Vec<f64>> = (0..k).map(|l| vec![l as f64 + 0.5]).collect();
        let sts = pairwise_diff_adjoint(&pairwise_diff(&m), k);
        let sum: f64 = m.iter().map(|c| c[0]).sum();
        for l in 0..k {
            let expect = k as f64 * m[l][0] - sum;
            assert!((sts[l][0] - expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn pairwise_annihilates_exactly_the_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let c = rng.gen_range(-2.0..2.0);
            let diag = vec![vec![c], vec![c], vec![c]];
            assert!(pairwise_diff(&diag).iter().all(|ch| ch[0] == 0.0));
            let mut off = diag.clone();
            off[1][0] += rng.gen_range(0.1..1.0);
            assert!(pairwise_diff(&off).iter().any(|ch| ch[0] != 0.0));
        }
    }

    #[test]
    fn dynamic_cost_zero_velocity() {
        let g = GridSpec::new(2, 2, 3, ScalingMode::DividedDifferences).unwrap();
        let mut u = CenteredField::zeros(&g);
        for v in u.pi.iter_mut() {
            *v = 0.1;
        }
        assert_eq!(dynamic_cost(&u, CostKind::QuadraticPairwise, &g).unwrap(), 0.0);
    }

    #[test]
    fn dynamic_cost_constant_velocity() {
        // pi_c = 1/cells per cell, m_1 = c * pi_c: quadratic_full gives c^2/2.
        let g = GridSpec::new(2, 3, 4, ScalingMode::DividedDifferences).unwrap();
        let cells = g.cells() as f64;
        let c = 1.7;
        let mut u = CenteredField::zeros(&g);
        for v in u.pi.iter_mut() {
            *v = 1.0 / cells;
        }
        for v in u.m[0].iter_mut() {
            *v = c / cells;
        }
        let got = dynamic_cost(&u, CostKind::QuadraticFull, &g).unwrap();
        assert!((got - 0.5 * c * c).abs() <= 1e-12);
    }

    #[test]
    fn dynamic_cost_perspective_convention() {
        let g = GridSpec::new(2, 1, 2, ScalingMode::DividedDifferences).unwrap();
        let mut u = CenteredField::zeros(&g);
        u.m[0][0] = 0.3; // pi = 0 there
        assert_eq!(
            dynamic_cost(&u, CostKind::QuadraticPairwise, &g).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn dynamic_cost_pairwise_is_half_double_sum() {
        let g = GridSpec::new(3, 2, 3, ScalingMode::DividedDifferences).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut u = CenteredField::zeros(&g);
        for v in u.pi.iter_mut() {
            *v = rng.gen_range(0.01..1.0);
        }
        for chan in u.m.iter_mut() {
            for v in chan.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let ours = dynamic_cost(&u, CostKind::QuadraticPairwise, &g).unwrap();
        // double-sum convention evaluated directly
        let cells = g.cells();
        let mut double = 0.0;
        for i in 0..g.n_t * cells {
            let mut q = 0.0;
            for a in 0..g.k {
                for b in 0..g.k {
                    let d = u.m[a][i] - u.m[b][i];
                    q += d * d;
                }
            }
            double += q / u.pi[i];
        }
        double /= g.n_t as f64;
        assert!((2.0 * ours - double).abs() <= 1e-10 * (1.0 + double.abs()));
    }

    #[test]
    fn dynamic_cost_scaled_doubles() {
        let g = GridSpec::new(2, 2, 3, ScalingMode::DividedDifferences).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut u = CenteredField::zeros(&g);
        for v in u.pi.iter_mut() {
            *v = rng.gen_range(0.01..1.0);
        }
        for chan in u.m.iter_mut() {
            for v in chan.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let one = dynamic_cost_scaled(&u, CostKind::QuadraticPairwise, &g, 1.0).unwrap();
        let two = dynamic_cost_scaled(&u, CostKind::QuadraticPairwise, &g, 2.0).unwrap();
        assert_eq!(two, 2.0 * one);
    }

    #[test]
    fn dynamic_cost_accepts_staggered_via_interp() {
        let g = GridSpec::new(2, 2, 3, ScalingMode::DividedDifferences).unwrap();
        let u = StaggeredField::zeros(&g);
        let c = crate::grid::interp(&u, &g).unwrap();
        assert_eq!(dynamic_cost(&c, CostKind::QuadraticPairwise, &g).unwrap(), 0.0);
    }

    #[test]
    fn semiconvex_shift_examples() {
        let mu = DiscreteMeasure::delta(1, 2, &MultiIndex::from_coords(vec![1], 2).unwrap())
            .unwrap(); // atom at x = 0.5
        let (shifted, corr) = semiconvex_shift(CostKind::QuadraticFull, 2.0, &[mu.clone()]).unwrap();
        assert!((corr - 0.25).abs() <= 1e-15);
        let v = shifted.eval(&[1.0, 0.0]);
        assert!((v - (0.5 + 1.0)).abs() <= 1e-15);

        let (id, corr0) = semiconvex_shift(CostKind::QuadraticFull, 0.0, &[mu]).unwrap();
        assert_eq!(corr0, 0.0);
        assert_eq!(id.eval(&[1.0, 0.0]), 0.5);
    }

    #[test]
    fn semiconvex_shift_rejects_negative_alpha() {
        assert!(semiconvex_shift(CostKind::QuadraticFull, -1.0, &[]).is_err());
    }

    #[test]
    fn prox_rejects_bad_parameters() {
        assert!(prox_perspective(0.0, &pp(1.0, vec![0.0])).is_err());
        assert!(prox_conjugate(-1.0, &pp(1.0, vec![0.0])).is_err());
    }

    #[test]
    fn pairwise_at_k1_is_zero() {
        assert_eq!(CostKind::QuadraticPairwise.channels(1), 0);
        assert_eq!(CostKind::QuadraticPairwise.eval(&[0.7]), 0.0);
    }
}
