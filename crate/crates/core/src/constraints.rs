//! The affine constraint system `A U^s = b` and the orthogonal projection
//! onto it.
//!
//! Rows, in order:
//!
//! 1. one continuity row per centered cell (optionally with a diffusion
//!    Laplacian acting on the time-averaged mass),
//! 2. `k * n_x` terminal-marginal rows: the axis sums of the `t = 1`
//!    staggered slice must equal each `mu_l`,
//! 3. (unless `free_initial`) one source row per product cell fixing
//!    `pi_s(0, .) = p`.
//!
//! `A` is never assembled. The projection `u - A*(A A*)^+ (A u - b)` runs
//! conjugate gradients on the consistent, possibly rank-deficient normal
//! system with a Jacobi (row-norm) preconditioner; any least-squares
//! multiplier yields the same projection because solutions differ by
//! `null(A*)`.

use crate::error::{Error, Result};
use crate::grid::{divergence_residual, GridSpec, StaggeredField};
use crate::measure::DiscreteMeasure;
use crate::par;

/// Block-wise constraint residuals and the smallest mass entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    pub continuity_inf: f64,
    pub marginal_inf: f64,
    pub source_inf: f64,
    pub min_mass: f64,
}

/// Immutable description of the constraint set, shareable across threads.
#[derive(Debug, Clone)]
pub struct ConstraintSystem {
    pub grid: GridSpec,
    pub marginals: Vec<DiscreteMeasure>,
    pub source: DiscreteMeasure,
    pub diffusion_epsilon: f64,
    pub projector_tolerance: f64,
    pub max_inner_iterations: usize,
    /// When false the initial slice is left free, reproducing the
    /// boundary set that fixes terminal marginals only.
    pub include_source: bool,
    rhs: Vec<f64>,
    /// diag(A A*) = squared row norms, for Jacobi preconditioning.
    precond: Vec<f64>,
}

impl ConstraintSystem {
    pub fn new(
        grid: GridSpec,
        marginals: Vec<DiscreteMeasure>,
        source: DiscreteMeasure,
        diffusion_epsilon: f64,
        free_initial: bool,
    ) -> Result<Self> {
        if marginals.len() != grid.k {
            return Err(Error::Dimension(format!(
                "expected {} marginals, got {}",
                grid.k,
                marginals.len()
            )));
        }
        for mu in &marginals {
            if mu.k != 1 || mu.n_x != grid.n_x {
                return Err(Error::Dimension("marginals must be 1D on the grid".into()));
            }
            if (mu.total() - 1.0).abs() > 1e-12 {
                return Err(Error::Validation("marginal must sum to 1".into()));
            }
        }
        if source.k != grid.k || source.n_x != grid.n_x {
            return Err(Error::Dimension(
                "source must live on the product grid".into(),
            ));
        }
        if (source.total() - 1.0).abs() > 1e-12 {
            return Err(Error::Validation("source must sum to 1".into()));
        }
        if diffusion_epsilon < 0.0 || !diffusion_epsilon.is_finite() {
            return Err(Error::Parameter("diffusion epsilon must be >= 0".into()));
        }
        let include_source = !free_initial;
        let cells = grid.cells();
        let n_cont = grid.n_t * cells;
        let n_marg = grid.k * grid.n_x;
        let rows = n_cont + n_marg + if include_source { cells } else { 0 };

        let mut rhs = vec![0.0; rows];
        for (l, mu) in marginals.iter().enumerate() {
            rhs[n_cont + l * grid.n_x..n_cont + (l + 1) * grid.n_x].copy_from_slice(&mu.mass);
        }
        if include_source {
            rhs[n_cont + n_marg..].copy_from_slice(&source.mass);
        }

        let mut sys = ConstraintSystem {
            grid,
            marginals,
            source,
            diffusion_epsilon,
            projector_tolerance: 1e-10,
            max_inner_iterations: 10 * rows,
            include_source,
            rhs,
            precond: Vec::new(),
        };
        sys.precond = sys.row_norms_squared();
        Ok(sys)
    }

    pub fn with_projector_tolerance(mut self, tol: f64) -> Result<Self> {
        if tol <= 0.0 || !tol.is_finite() {
            return Err(Error::Parameter("projector tolerance must be > 0".into()));
        }
        self.projector_tolerance = tol;
        Ok(self)
    }

    pub fn with_max_inner_iterations(mut self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("max inner iterations must be >= 1".into()));
        }
        self.max_inner_iterations = n;
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    fn n_cont(&self) -> usize {
        self.grid.n_t * self.grid.cells()
    }

    fn n_marg(&self) -> usize {
        self.grid.k * self.grid.n_x
    }

    /// Stacked constraint values `[continuity; marginal sums; source slice]`.
    pub fn apply_a(&self, u: &StaggeredField) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.rows()];
        self.apply_a_into(u, &mut out)?;
        Ok(out)
    }

    pub(crate) fn apply_a_into(&self, u: &StaggeredField, out: &mut [f64]) -> Result<()> {
        u.check(&self.grid)?;
        debug_assert_eq!(out.len(), self.rows());
        let g = &self.grid;
        let cells = g.cells();
        let n_cont = self.n_cont();
        let cont = divergence_residual(u, g, self.diffusion_epsilon)?;
        out[..n_cont].copy_from_slice(&cont);

        let terminal = &u.pi[g.n_t * cells..];
        let n_x = g.n_x;
        let k = g.k;
        let marg = &mut out[n_cont..n_cont + self.n_marg()];
        par::fill_indexed(marg, |row| {
            let l = row / n_x;
            let j = row % n_x;
            let stride = g.stride(l);
            let block = stride * n_x;
            let mut s = 0.0;
            let n_high = cells / block;
            for high in 0..n_high {
                let base = high * block + j * stride;
                for low in 0..stride {
                    s += terminal[base + low];
                }
            }
            s
        });

        if self.include_source {
            let src = &mut out[n_cont + k * n_x..];
            src.copy_from_slice(&u.pi[..cells]);
        }
        Ok(())
    }

    /// Exact adjoint of [`Self::apply_a`].
    pub fn apply_a_adjoint(&self, y: &[f64]) -> Result<StaggeredField> {
        let mut out = StaggeredField::zeros(&self.grid);
        self.apply_a_adjoint_into(y, &mut out)?;
        Ok(out)
    }

    pub(crate) fn apply_a_adjoint_into(&self, y: &[f64], out: &mut StaggeredField) -> Result<()> {
        if y.len() != self.rows() {
            return Err(Error::Dimension(format!(
                "constraint vector has {} entries, expected {}",
                y.len(),
                self.rows()
            )));
        }
        let g = self.grid;
        let cells = g.cells();
        let n_t = g.n_t;
        let n_x = g.n_x;
        let k = g.k;
        let (c_t, c_x, lap_scale) = g.continuity_coefficients();
        let eps = self.diffusion_epsilon * lap_scale;
        let n_cont = self.n_cont();
        let y_cont = &y[..n_cont];
        let y_marg = &y[n_cont..n_cont + self.n_marg()];
        let y_src = if self.include_source {
            &y[n_cont + self.n_marg()..]
        } else {
            &[][..]
        };

        par::fill_indexed(&mut out.pi, |i| {
            let s = i / cells;
            let x = i % cells;
            let mut v = 0.0;
            // transpose of the time difference
            if s >= 1 {
                v += c_t * y_cont[(s - 1) * cells + x];
            }
            if s < n_t {
                v -= c_t * y_cont[s * cells + x];
            }
            // transpose of the (symmetric) diffusion stencil through pibar
            if eps != 0.0 {
                for t in [s.wrapping_sub(1), s] {
                    if t < n_t {
                        let row = |yx: usize| y_cont[t * cells + yx];
                        let mut lap = 0.0;
                        for l in 0..k {
                            lap += row(g.shift_up(x, l)) - 2.0 * row(x) + row(g.shift_down(x, l));
                        }
                        v -= 0.5 * eps * lap;
                    }
                }
            }
            // marginal rows touch the terminal slice only
            if s == n_t {
                for l in 0..k {
                    let j = (x / g.stride(l)) % n_x;
                    v += y_marg[l * n_x + j];
                }
            }
            // source rows touch the initial slice only
            if s == 0 && self.include_source {
                v += y_src[x];
            }
            v
        });

        for l in 0..k {
            par::fill_indexed(&mut out.m[l], |i| {
                let t = i / cells;
                let x = i % cells;
                c_x * (y_cont[t * cells + x] - y_cont[t * cells + g.shift_up(x, l)])
            });
        }
        Ok(())
    }

    /// Squared Euclidean norm of each constraint row, accounting for
    /// stencil entries that coincide under periodic wrap (n_x = 2).
    fn row_norms_squared(&self) -> Vec<f64> {
        let g = self.grid;
        let cells = g.cells();
        let n_x = g.n_x;
        let k = g.k;
        let (c_t, c_x, lap_scale) = g.continuity_coefficients();
        let eps = self.diffusion_epsilon * lap_scale;
        let n_cont = self.n_cont();
        let mut out = vec![0.0; self.rows()];

        let cont = &mut out[..n_cont];
        par::fill_indexed(cont, |i| {
            let x = i % cells;
            if eps == 0.0 {
                return 2.0 * c_t * c_t + 2.0 * k as f64 * c_x * c_x;
            }
            // accumulate pi coefficients per (slice, cell); slices are
            // t and t+1 with identical spatial stencils
            let mut coeffs: Vec<(usize, f64)> = Vec::with_capacity(2 * k + 1);
            let mut add = |cell: usize, c: f64| {
                if let Some(e) = coeffs.iter_mut().find(|(y, _)| *y == cell) {
                    e.1 += c;
                } else {
                    coeffs.push((cell, c));
                }
            };
            add(x, k as f64 * eps);
            for l in 0..k {
                add(g.shift_up(x, l), -eps * 0.5);
                add(g.shift_down(x, l), -eps * 0.5);
            }
            let mut s = 0.0;
            for &(cell, c) in &coeffs {
                let time = if cell == x { c_t } else { 0.0 };
                s += (time + c) * (time + c); // slice t+1
                s += (-time + c) * (-time + c); // slice t
            }
            s + 2.0 * k as f64 * c_x * c_x
        });

        for v in out[n_cont..n_cont + self.n_marg()].iter_mut() {
            *v = (cells / n_x) as f64;
        }
        for v in out[n_cont + self.n_marg()..].iter_mut() {
            *v = 1.0;
        }
        out
    }

    /// Largest row norm of `A`, a cheap scale for roundoff floors.
    fn max_row_norm(&self) -> f64 {
        self.precond.iter().cloned().fold(0.0, f64::max).sqrt()
    }

    /// Preconditioned CG on `A A* lambda = rhs`, stopping at the absolute
    /// residual `tol_abs`. Returns the residual norm achieved and the
    /// iteration count.
    ///
    /// The system is consistent in exact arithmetic but roundoff leaves a
    /// small inconsistent (null-space) component in `rhs`, below which CG
    /// residuals cannot shrink and eventually grow; the best iterate seen
    /// is kept and restored if that happens.
    fn solve_normal(&self, rhs: &[f64], lambda: &mut [f64], tol_abs: f64) -> (f64, usize) {
        let rows = self.rows();
        let rhs_norm = par::norm_sq(rhs).sqrt();
        if rhs_norm == 0.0 {
            lambda.fill(0.0);
            return (0.0, 0);
        }
        let mut field = StaggeredField::zeros(&self.grid);
        let mut ap = vec![0.0; rows];

        let apply_normal = |x: &[f64], out: &mut [f64], field: &mut StaggeredField| {
            self.apply_a_adjoint_into(x, field).expect("shape");
            self.apply_a_into(field, out).expect("shape");
        };

        // r = rhs - AA* lambda (warm start supported)
        let mut r = vec![0.0; rows];
        if lambda.iter().any(|&v| v != 0.0) {
            apply_normal(lambda, &mut ap, &mut field);
            par::fill_indexed(&mut r, |i| rhs[i] - ap[i]);
        } else {
            r.copy_from_slice(rhs);
        }
        let mut res_norm = par::norm_sq(&r).sqrt();
        if res_norm <= tol_abs {
            return (res_norm, 0);
        }

        let precond = &self.precond;
        let mut z = vec![0.0; rows];
        par::fill_indexed(&mut z, |i| r[i] / precond[i]);
        let mut p = z.clone();
        let mut rz = par::dot(&r, &z);

        let mut best = lambda.to_vec();
        let mut best_res = res_norm;
        let mut iters = 0;
        while iters < self.max_inner_iterations {
            iters += 1;
            apply_normal(&p, &mut ap, &mut field);
            let p_ap = par::dot(&p, &ap);
            if p_ap <= 0.0 {
                // numerically in the null space; nothing further to gain
                break;
            }
            let alpha = rz / p_ap;
            par::axpy(alpha, &p, lambda);
            par::axpy(-alpha, &ap, &mut r);
            res_norm = par::norm_sq(&r).sqrt();
            if res_norm < best_res {
                best_res = res_norm;
                best.copy_from_slice(lambda);
            }
            if res_norm <= tol_abs {
                break;
            }
            if res_norm > 10.0 * best_res {
                // stagnated on the inconsistent component
                break;
            }
            par::fill_indexed(&mut z, |i| r[i] / precond[i]);
            let rz_new = par::dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            par::for_each_indexed(&mut p, |i, v| *v = z[i] + beta * *v);
        }
        if best_res < res_norm {
            lambda.copy_from_slice(&best);
            res_norm = best_res;
        }
        (res_norm, iters)
    }

    /// Least-squares multiplier of `A A* lambda = rhs` by preconditioned
    /// CG; returns the multiplier and the relative residual achieved.
    /// `A* lambda` is the orthogonal projection of any preimage of `rhs`
    /// onto `range(A*)`.
    pub fn least_squares_multiplier(&self, rhs: &[f64]) -> Result<(Vec<f64>, f64)> {
        if rhs.len() != self.rows() {
            return Err(Error::Dimension("constraint vector length mismatch".into()));
        }
        let mut lambda = vec![0.0; self.rows()];
        let rhs_norm = par::norm_sq(rhs).sqrt();
        let (res, _) = self.solve_normal(rhs, &mut lambda, self.projector_tolerance * rhs_norm);
        Ok((lambda, if rhs_norm > 0.0 { res / rhs_norm } else { 0.0 }))
    }

    /// Orthogonal projection onto `{A u = b}` from a cold start.
    pub fn project(&self, u: &StaggeredField) -> Result<StaggeredField> {
        let mut lambda = vec![0.0; self.rows()];
        self.project_warm(u, &mut lambda)
    }

    /// Orthogonal projection reusing a multiplier estimate across calls.
    ///
    /// The warm start only changes the CG starting point on a consistent
    /// singular system; all least-squares multipliers produce the same
    /// `A* lambda`, so the projection itself is unaffected.
    pub fn project_warm(&self, u: &StaggeredField, lambda: &mut Vec<f64>) -> Result<StaggeredField> {
        u.check(&self.grid)?;
        if lambda.len() != self.rows() {
            lambda.clear();
            lambda.resize(self.rows(), 0.0);
        }
        let mut residual = self.apply_a(u)?;
        par::for_each_indexed(&mut residual, |i, v| *v -= self.rhs[i]);
        let rhs_norm = par::norm_sq(&residual).sqrt();
        // below this level the residual of A u - b is indistinguishable
        // from roundoff of evaluating it
        let noise_floor = 1e-13 * self.max_row_norm() * (1.0 + u.norm());
        let tol_abs = (self.projector_tolerance * rhs_norm).max(noise_floor);
        let (res, iters) = self.solve_normal(&residual, lambda, tol_abs);
        if res > tol_abs {
            return Err(Error::Convergence {
                achieved: if rhs_norm > 0.0 { res / rhs_norm } else { res },
                tolerance: self.projector_tolerance,
                iterations: iters,
            });
        }
        let correction = self.apply_a_adjoint(lambda)?;
        let mut out = u.clone();
        out.axpy(-1.0, &correction);
        Ok(out)
    }

    /// Max-norm residual of each constraint block plus the minimum mass.
    pub fn residual_report(&self, u: &StaggeredField) -> Result<ResidualReport> {
        let v = self.apply_a(u)?;
        let n_cont = self.n_cont();
        let n_marg = self.n_marg();
        let block_inf = |range: std::ops::Range<usize>| {
            par::max_indexed(range.len(), |i| (v[range.start + i] - self.rhs[range.start + i]).abs())
                .max(0.0)
        };
        Ok(ResidualReport {
            continuity_inf: block_inf(0..n_cont),
            marginal_inf: block_inf(n_cont..n_cont + n_marg),
            source_inf: if self.include_source {
                block_inf(n_cont + n_marg..self.rows())
            } else {
                0.0
            },
            min_mass: u.min_mass(),
        })
    }
}
