//! Centered/staggered grids on the periodic space-time domain and the
//! field containers living on them.
//!
//! Time is discretized on `[0, 1]` with `n_t` centered nodes
//! `{i/n_t + 1/(2 n_t)}` and `n_t + 1` staggered nodes `{i/n_t}`. Each of
//! the `k` spatial axes is a copy of the torus with `n_x` centered nodes
//! `{j/n_x}` and `n_x` staggered nodes `{j/n_x + 1/(2 n_x)}`. Mass lives
//! on staggered time x centered space; momentum component `l` lives on
//! centered time x (space staggered along axis `l` only). The objective
//! is evaluated on the fully centered grid, reached through the averaging
//! operator [`interp`].
//!
//! Spatial multi-indices are flattened row-major with axis 0 slowest:
//! `flat = sum_l coords[l] * n_x^(k-1-l)`.

use crate::error::{Error, Result};
use crate::par;

/// Finite-difference scaling of the discrete continuity equation.
///
/// Both modes describe the same affine constraint set when `n_t == n_x`;
/// `DividedDifferences` stays a consistent discretization of
/// `d_t pi + div m = eps * lap pi` on anisotropic grids, while
/// `PaperLiteral` keeps coefficients `1/n_t`, `1/n_x` for bit-level
/// comparison with implementations written that way.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingMode {
    DividedDifferences,
    PaperLiteral,
}

/// Grid dimensions shared by every field of a problem instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    /// Number of marginals (spatial axes of the product grid).
    pub k: usize,
    /// Temporal cells.
    pub n_t: usize,
    /// Spatial cells per axis.
    pub n_x: usize,
    pub scaling_mode: ScalingMode,
}

impl GridSpec {
    // Problem-level configuration requires k >= 2; the grid machinery
    // itself is well-defined (and tested) down to k = 1.
    pub fn new(k: usize, n_t: usize, n_x: usize, scaling_mode: ScalingMode) -> Result<Self> {
        if k < 1 {
            return Err(Error::Validation("k must be >= 1".into()));
        }
        if n_t < 1 {
            return Err(Error::Validation("n_t must be >= 1".into()));
        }
        if n_x < 2 {
            return Err(Error::Validation("n_x must be >= 2".into()));
        }
        // Guard against overflow of n_x^k.
        let mut cells: usize = 1;
        for _ in 0..k {
            cells = cells
                .checked_mul(n_x)
                .ok_or_else(|| Error::Validation("n_x^k overflows usize".into()))?;
        }
        Ok(GridSpec {
            k,
            n_t,
            n_x,
            scaling_mode,
        })
    }

    /// Number of cells of the spatial product grid, `n_x^k`.
    pub fn cells(&self) -> usize {
        self.n_x.pow(self.k as u32)
    }

    /// Stride of axis `l` in the row-major flat index.
    pub fn stride(&self, axis: usize) -> usize {
        self.n_x.pow((self.k - 1 - axis) as u32)
    }

    /// Flat spatial index shifted by +1 cell along `axis`, wrapping.
    pub fn shift_up(&self, flat: usize, axis: usize) -> usize {
        let s = self.stride(axis);
        let c = (flat / s) % self.n_x;
        if c + 1 == self.n_x {
            flat + s - s * self.n_x
        } else {
            flat + s
        }
    }

    /// Flat spatial index shifted by -1 cell along `axis`, wrapping.
    pub fn shift_down(&self, flat: usize, axis: usize) -> usize {
        let s = self.stride(axis);
        let c = (flat / s) % self.n_x;
        if c == 0 {
            flat + s * self.n_x - s
        } else {
            flat - s
        }
    }

    /// Coordinates `(c_t, c_x)` of the continuity stencil and the scale of
    /// the diffusion Laplacian for the active [`ScalingMode`].
    pub fn continuity_coefficients(&self) -> (f64, f64, f64) {
        match self.scaling_mode {
            ScalingMode::DividedDifferences => (
                self.n_t as f64,
                self.n_x as f64,
                (self.n_x * self.n_x) as f64,
            ),
            ScalingMode::PaperLiteral => (1.0 / self.n_t as f64, 1.0 / self.n_x as f64, 1.0),
        }
    }

    /// Centered spatial coordinate of grid index `j`, in `[0, 1)`.
    pub fn coord(&self, j: usize) -> f64 {
        j as f64 / self.n_x as f64
    }
}

/// A point of the spatial product grid, as coordinates and flat index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndex {
    pub coords: Vec<usize>,
    pub flat: usize,
}

impl MultiIndex {
    pub fn from_coords(coords: Vec<usize>, n_x: usize) -> Result<Self> {
        if coords.iter().any(|&c| c >= n_x) {
            return Err(Error::Validation(format!(
                "coordinate out of range for n_x = {n_x}: {coords:?}"
            )));
        }
        let mut flat = 0usize;
        for &c in &coords {
            flat = flat * n_x + c;
        }
        Ok(MultiIndex { coords, flat })
    }

    pub fn from_flat(flat: usize, k: usize, n_x: usize) -> Self {
        let mut coords = vec![0usize; k];
        let mut rest = flat;
        for l in (0..k).rev() {
            coords[l] = rest % n_x;
            rest /= n_x;
        }
        MultiIndex { coords, flat }
    }
}

/// The unknown of the discrete problem: mass on staggered-time slices and
/// `k` momentum components on axis-staggered spatial grids.
#[derive(Debug, Clone, PartialEq)]
pub struct StaggeredField {
    /// `(n_t + 1) * cells`, time-major.
    pub pi: Vec<f64>,
    /// `k` arrays of `n_t * cells`, time-major.
    pub m: Vec<Vec<f64>>,
}

impl StaggeredField {
    pub fn zeros(g: &GridSpec) -> Self {
        let cells = g.cells();
        StaggeredField {
            pi: vec![0.0; (g.n_t + 1) * cells],
            m: (0..g.k).map(|_| vec![0.0; g.n_t * cells]).collect(),
        }
    }

    pub fn conforms(&self, g: &GridSpec) -> bool {
        let cells = g.cells();
        self.pi.len() == (g.n_t + 1) * cells
            && self.m.len() == g.k
            && self.m.iter().all(|c| c.len() == g.n_t * cells)
    }

    pub fn check(&self, g: &GridSpec) -> Result<()> {
        if self.conforms(g) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "staggered field does not conform to grid k={} n_t={} n_x={}",
                g.k, g.n_t, g.n_x
            )))
        }
    }

    /// Euclidean norm over all components.
    pub fn norm(&self) -> f64 {
        let mut s = par::norm_sq(&self.pi);
        for c in &self.m {
            s += par::norm_sq(c);
        }
        s.sqrt()
    }

    /// `self += alpha * other`, componentwise.
    pub fn axpy(&mut self, alpha: f64, other: &StaggeredField) {
        par::axpy(alpha, &other.pi, &mut self.pi);
        for (a, b) in self.m.iter_mut().zip(&other.m) {
            par::axpy(alpha, b, a);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        par::for_each_indexed(&mut self.pi, |_, v| *v *= alpha);
        for c in &mut self.m {
            par::for_each_indexed(c, |_, v| *v *= alpha);
        }
    }

    /// Smallest entry of the mass component.
    pub fn min_mass(&self) -> f64 {
        -par::max_indexed(self.pi.len(), |i| -self.pi[i])
    }

    /// Time slice `t` of the mass component (length `cells`).
    pub fn pi_slice(&self, g: &GridSpec, t: usize) -> &[f64] {
        let cells = g.cells();
        &self.pi[t * cells..(t + 1) * cells]
    }

    /// Total number of scalar unknowns for fields on `g`.
    pub fn dof(g: &GridSpec) -> usize {
        let cells = g.cells();
        (g.n_t + 1) * cells + g.k * g.n_t * cells
    }

    /// Flatten as `[pi, m_0, ..., m_{k-1}]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.pi.len() + self.m.iter().map(Vec::len).sum::<usize>());
        out.extend_from_slice(&self.pi);
        for c in &self.m {
            out.extend_from_slice(c);
        }
        out
    }

    pub fn from_slice(g: &GridSpec, data: &[f64]) -> Result<Self> {
        if data.len() != Self::dof(g) {
            return Err(Error::Dimension(format!(
                "expected {} degrees of freedom, got {}",
                Self::dof(g),
                data.len()
            )));
        }
        let cells = g.cells();
        let n_pi = (g.n_t + 1) * cells;
        let per_m = g.n_t * cells;
        let mut out = StaggeredField::zeros(g);
        out.pi.copy_from_slice(&data[..n_pi]);
        for (l, c) in out.m.iter_mut().enumerate() {
            c.copy_from_slice(&data[n_pi + l * per_m..n_pi + (l + 1) * per_m]);
        }
        Ok(out)
    }
}

/// Mass and momentum colocated on the fully centered grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredField {
    /// `n_t * cells`, time-major.
    pub pi: Vec<f64>,
    /// `k` arrays of `n_t * cells`.
    pub m: Vec<Vec<f64>>,
}

impl CenteredField {
    pub fn zeros(g: &GridSpec) -> Self {
        let cells = g.cells();
        CenteredField {
            pi: vec![0.0; g.n_t * cells],
            m: (0..g.k).map(|_| vec![0.0; g.n_t * cells]).collect(),
        }
    }

    pub fn conforms(&self, g: &GridSpec) -> bool {
        let cells = g.cells();
        self.pi.len() == g.n_t * cells
            && self.m.len() == g.k
            && self.m.iter().all(|c| c.len() == g.n_t * cells)
    }

    pub fn check(&self, g: &GridSpec) -> Result<()> {
        if self.conforms(g) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "centered field does not conform to grid k={} n_t={} n_x={}",
                g.k, g.n_t, g.n_x
            )))
        }
    }
}

/// Staggered-to-centered averaging.
///
/// Mass at a centered time node is the mean of the two flanking staggered
/// slices; momentum component `l` at a centered spatial node is the mean
/// of the two staggered-axis-`l` neighbors, wrapped periodically. Each
/// momentum component averages only its own staggered axis.
pub fn interp(u: &StaggeredField, g: &GridSpec) -> Result<CenteredField> {
    u.check(g)?;
    let cells = g.cells();
    let mut out = CenteredField::zeros(g);
    {
        let pi_s = &u.pi;
        par::fill_indexed(&mut out.pi, |i| 0.5 * (pi_s[i + cells] + pi_s[i]));
    }
    for l in 0..g.k {
        let src = &u.m[l];
        par::fill_indexed(&mut out.m[l], |i| {
            let t = i / cells;
            let x = i % cells;
            0.5 * (src[i] + src[t * cells + g.shift_down(x, l)])
        });
    }
    Ok(out)
}

/// Exact adjoint of [`interp`] for the unweighted Euclidean inner
/// products on both variable sets: every staggered entry receives 1/2 of
/// each centered entry whose averaging stencil contains it.
pub fn interp_adjoint(u: &CenteredField, g: &GridSpec) -> Result<StaggeredField> {
    u.check(g)?;
    let cells = g.cells();
    let n_t = g.n_t;
    let mut out = StaggeredField::zeros(g);
    {
        let pi_c = &u.pi;
        par::fill_indexed(&mut out.pi, |i| {
            let s = i / cells;
            let mut v = 0.0;
            if s < n_t {
                v += 0.5 * pi_c[i];
            }
            if s > 0 {
                v += 0.5 * pi_c[i - cells];
            }
            v
        });
    }
    for l in 0..g.k {
        let src = &u.m[l];
        par::fill_indexed(&mut out.m[l], |i| {
            let t = i / cells;
            let x = i % cells;
            0.5 * (src[i] + src[t * cells + g.shift_up(x, l)])
        });
    }
    Ok(out)
}

/// Residual of the discrete continuity equation per centered cell.
///
/// ```text
/// r(t,x) = c_t [pi(t+) - pi(t-)] + c_x sum_l [m_l(x+) - m_l(x-)]
///          - eps * lap_scale * lap(pibar)(t,x)
/// ```
///
/// where `pibar` is the average of the two staggered slices flanking `t`
/// and `lap` is the periodic second difference summed over axes. The
/// coefficients depend on [`ScalingMode`].
pub fn divergence_residual(u: &StaggeredField, g: &GridSpec, diffusion: f64) -> Result<Vec<f64>> {
    u.check(g)?;
    let cells = g.cells();
    let (c_t, c_x, lap_scale) = g.continuity_coefficients();
    let eps = diffusion * lap_scale;
    let mut out = vec![0.0; g.n_t * cells];
    let pi_s = &u.pi;
    let m = &u.m;
    let k = g.k;
    par::fill_indexed(&mut out, |i| {
        let t = i / cells;
        let x = i % cells;
        let mut r = c_t * (pi_s[i + cells] - pi_s[i]);
        for (l, ml) in m.iter().enumerate().take(k) {
            r += c_x * (ml[i] - ml[t * cells + g.shift_down(x, l)]);
        }
        if eps != 0.0 {
            let pibar = |y: usize| 0.5 * (pi_s[(t + 1) * cells + y] + pi_s[t * cells + y]);
            let mut lap = 0.0;
            for l in 0..k {
                lap += pibar(g.shift_up(x, l)) - 2.0 * pibar(x) + pibar(g.shift_down(x, l));
            }
            r -= eps * lap;
        }
        r
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn spec(k: usize, n_t: usize, n_x: usize) -> GridSpec {
        GridSpec::new(k, n_t, n_x, ScalingMode::DividedDifferences).unwrap()
    }

    fn random_staggered(g: &GridSpec, rng: &mut impl Rng) -> StaggeredField {
        let mut u = StaggeredField::zeros(g);
        for v in u.pi.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for c in u.m.iter_mut() {
            for v in c.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        u
    }

    fn random_centered(g: &GridSpec, rng: &mut impl Rng) -> CenteredField {
        let mut u = CenteredField::zeros(g);
        for v in u.pi.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for c in u.m.iter_mut() {
            for v in c.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        u
    }

    #[test]
    fn multi_index_roundtrip() {
        let mi = MultiIndex::from_coords(vec![2, 0, 1], 3).unwrap();
        assert_eq!(mi.flat, 2 * 9 + 0 * 3 + 1);
        let back = MultiIndex::from_flat(mi.flat, 3, 3);
        assert_eq!(back.coords, vec![2, 0, 1]);
    }

    #[test]
    fn interp_two_point_time_average() {
        // n_t = 1, n_x = 2, k = 1: slices (a, b) constant in x.
        let g = spec(1, 1, 2);
        let mut u = StaggeredField::zeros(&g);
        u.pi = vec![3.0, 3.0, 7.0, 7.0];
        let c = interp(&u, &g).unwrap();
        assert_eq!(c.pi, vec![5.0, 5.0]);
    }

    #[test]
    fn interp_momentum_periodic_wrap() {
        // m_s values p at node 1/4 and q at node 3/4; both centered values
        // must be the same two-point average through the wrap.
        let g = spec(1, 1, 2);
        let mut u = StaggeredField::zeros(&g);
        let (p, q) = (2.0, 10.0);
        u.m[0] = vec![p, q];
        let c = interp(&u, &g).unwrap();
        assert_eq!(c.m[0], vec![(p + q) / 2.0, (q + p) / 2.0]);
    }

    #[test]
    fn interp_zero_is_zero() {
        let g = spec(2, 3, 4);
        let c = interp(&StaggeredField::zeros(&g), &g).unwrap();
        assert!(c.pi.iter().all(|&v| v == 0.0));
        assert!(c.m.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn adjoint_identity_random_pairs() {
        let g = spec(2, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let v = random_staggered(&g, &mut rng);
            let u = random_centered(&g, &mut rng);
            let iv = interp(&v, &g).unwrap();
            let au = interp_adjoint(&u, &g).unwrap();
            let lhs = crate::par::dot(&iv.pi, &u.pi)
                + (0..g.k)
                    .map(|l| crate::par::dot(&iv.m[l], &u.m[l]))
                    .sum::<f64>();
            let rhs = crate::par::dot(&v.pi, &au.pi)
                + (0..g.k)
                    .map(|l| crate::par::dot(&v.m[l], &au.m[l]))
                    .sum::<f64>();
            assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs() + rhs.abs()));
        }
    }

    #[test]
    fn adjoint_spreads_single_pi_entry() {
        // n_t = 1, k = 1: one centered pi value c goes as c/2 to both slices.
        let g = spec(1, 1, 2);
        let mut u = CenteredField::zeros(&g);
        u.pi = vec![4.0, 0.0];
        let s = interp_adjoint(&u, &g).unwrap();
        assert_eq!(s.pi, vec![2.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn divergence_stationary_field_is_zero() {
        let g = spec(2, 3, 4);
        let mut u = StaggeredField::zeros(&g);
        let cells = g.cells();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let slice: Vec<f64> = (0..cells).map(|_| rng.gen_range(0.0..1.0)).collect();
        for t in 0..=g.n_t {
            u.pi[t * cells..(t + 1) * cells].copy_from_slice(&slice);
        }
        let r = divergence_residual(&u, &g, 0.0).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn divergence_hand_stencil() {
        // n_t = 1, n_x = 2, k = 1, slices (1, 0): residual -n_t = -1 per cell.
        let g = spec(1, 1, 2);
        let mut u = StaggeredField::zeros(&g);
        u.pi = vec![1.0, 1.0, 0.0, 0.0];
        let r = divergence_residual(&u, &g, 0.0).unwrap();
        assert_eq!(r, vec![-1.0, -1.0]);
    }

    #[test]
    fn divergence_uniform_mass_has_no_laplacian_term() {
        let g = spec(2, 2, 3);
        let cells = g.cells();
        let mut u = StaggeredField::zeros(&g);
        for (i, v) in u.pi.iter_mut().enumerate() {
            *v = (i / cells) as f64; // constant in space, varies in time
        }
        let r0 = divergence_residual(&u, &g, 0.0).unwrap();
        let r1 = divergence_residual(&u, &g, 0.7).unwrap();
        for (a, b) in r0.iter().zip(&r1) {
            assert!((a - b).abs() <= 1e-15);
        }
        // pure time difference, c_t * 1
        assert!(r0.iter().all(|&v| (v - g.n_t as f64).abs() <= 1e-15));
    }

    #[test]
    fn divergence_linear_in_field() {
        let g = spec(2, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_staggered(&g, &mut rng);
        let v = random_staggered(&g, &mut rng);
        let (a, b) = (0.3, -1.7);
        let mut w = StaggeredField::zeros(&g);
        w.axpy(a, &u);
        w.axpy(b, &v);
        let ru = divergence_residual(&u, &g, 0.2).unwrap();
        let rv = divergence_residual(&v, &g, 0.2).unwrap();
        let rw = divergence_residual(&w, &g, 0.2).unwrap();
        for i in 0..rw.len() {
            assert!((rw[i] - (a * ru[i] + b * rv[i])).abs() <= 1e-12);
        }
    }

    #[test]
    fn scaling_modes_agree_up_to_n_squared() {
        let n = 4;
        let gd = GridSpec::new(2, n, n, ScalingMode::DividedDifferences).unwrap();
        let gl = GridSpec::new(2, n, n, ScalingMode::PaperLiteral).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = random_staggered(&gd, &mut rng);
        let rd = divergence_residual(&u, &gd, 0.1).unwrap();
        let rl = divergence_residual(&u, &gl, 0.1).unwrap();
        let f = (n * n) as f64;
        for i in 0..rd.len() {
            assert!((rd[i] - f * rl[i]).abs() <= 1e-12 * (1.0 + rd[i].abs()));
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let g = spec(2, 2, 3);
        let u = StaggeredField::zeros(&spec(2, 3, 3));
        assert!(matches!(interp(&u, &g), Err(Error::Dimension(_))));
    }
}
