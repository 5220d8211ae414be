//! Primal-dual proximal splitting for the discrete transport problem.
//!
//! With `K = Sbar o I`, `F` the perspective sum over the transformed
//! channels and `G` the indicator of the constraint set, the iteration is
//!
//! ```text
//! g   <- Prox_{sigma F*}(g + sigma K f)
//! h   <- Prox_{tau G}(h - tau K* g)        (= projection; tau-free)
//! f   <- h + theta (h - h_prev)
//! ```
//!
//! `Prox_{sigma F*}` acts independently per centered cell through
//! Moreau's identity and the cubic perspective prox; `Prox_{tau G}` is
//! the orthogonal projection of [`crate::constraints`], which ignores
//! `tau` because `G` is an indicator.

use crate::constraints::ConstraintSystem;
use crate::cost::{
    self, dynamic_cost_positive_part, pairwise_diff, pairwise_diff_adjoint, CostKind,
};
use crate::error::{Error, Result};
use crate::grid::{interp, interp_adjoint, CenteredField, GridSpec, StaggeredField};
use crate::measure::DiscreteMeasure;
use crate::opnorm::{estimate_opnorm, LinearOperator};
use crate::par;

/// Step sizes and loop controls of the primal-dual iteration.
#[derive(Debug, Clone, Copy)]
pub struct SolverParams {
    /// Extrapolation weight in `[0, 1]`.
    pub theta: f64,
    /// Dual step.
    pub sigma: f64,
    /// Primal step.
    pub tau: f64,
    pub iterations: usize,
    /// Diagnostics are recorded every `log_every` iterations (and always
    /// at the final one).
    pub log_every: usize,
    /// Fail instead of warn when `sigma * tau * |K|^2 >= 1`.
    pub enforce_step_rule: bool,
    /// Seed of the power-iteration start used for the operator norm.
    pub seed: u64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            theta: 1.0,
            sigma: 85.0,
            tau: 0.1,
            iterations: 5000,
            log_every: 10,
            enforce_step_rule: false,
            seed: 0,
        }
    }
}

impl SolverParams {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Parameter("theta must lie in [0, 1]".into()));
        }
        if self.sigma <= 0.0 || !self.sigma.is_finite() {
            return Err(Error::Parameter("sigma must be positive".into()));
        }
        if self.tau <= 0.0 || !self.tau.is_finite() {
            return Err(Error::Parameter("tau must be positive".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Parameter("log_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Dual variable: one mass channel plus the transformed momentum
/// channels, all on the centered grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DualField {
    pub pi: Vec<f64>,
    pub channels: Vec<Vec<f64>>,
}

impl DualField {
    pub fn zeros(g: &GridSpec, cost: CostKind) -> Self {
        let n = g.n_t * g.cells();
        DualField {
            pi: vec![0.0; n],
            channels: (0..cost.channels(g.k)).map(|_| vec![0.0; n]).collect(),
        }
    }
}

/// Iteration state of the splitting scheme.
#[derive(Debug, Clone)]
pub struct SolverState {
    /// Primal iterate.
    pub h: StaggeredField,
    /// Extrapolated primal iterate.
    pub f: StaggeredField,
    /// Dual iterate.
    pub g_dual: DualField,
    pub iteration: usize,
}

impl SolverState {
    pub fn zeros(g: &GridSpec, cost: CostKind) -> Self {
        SolverState {
            h: StaggeredField::zeros(g),
            f: StaggeredField::zeros(g),
            g_dual: DualField::zeros(g, cost),
            iteration: 0,
        }
    }
}

/// One logged diagnostics record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRow {
    pub iteration: usize,
    pub objective: f64,
    pub continuity_inf: f64,
    pub marginal_inf: f64,
    pub source_inf: f64,
    pub min_mass: f64,
    pub step_norm: f64,
}

/// Result of the step-size check `sigma * tau * |K|^2 < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRuleCheck {
    pub opnorm: f64,
    pub sigma_tau_opnorm_sq: f64,
    pub satisfied: bool,
}

/// Per-iteration records, appended in iteration order.
#[derive(Debug, Clone, Default)]
pub struct SolverDiagnostics {
    pub rows: Vec<DiagnosticsRow>,
    pub step_rule: Option<StepRuleCheck>,
}

/// `K u = (pi channel of I(u), pairwise differences of its momentum)`.
pub fn apply_k(u: &StaggeredField, g: &GridSpec, cost: CostKind) -> Result<DualField> {
    let ic = interp(u, g)?;
    let channels = match cost {
        CostKind::QuadraticPairwise => pairwise_diff(&ic.m),
        CostKind::QuadraticFull => ic.m,
    };
    Ok(DualField {
        pi: ic.pi,
        channels,
    })
}

/// Exact adjoint of [`apply_k`].
pub fn apply_k_adjoint(d: &DualField, g: &GridSpec, cost: CostKind) -> Result<StaggeredField> {
    if d.channels.len() != cost.channels(g.k) {
        return Err(Error::Dimension("dual channel count mismatch".into()));
    }
    let m = match cost {
        CostKind::QuadraticPairwise => pairwise_diff_adjoint(&d.channels, g.k),
        CostKind::QuadraticFull => d.channels.clone(),
    };
    interp_adjoint(
        &CenteredField {
            pi: d.pi.clone(),
            m,
        },
        g,
    )
}

/// `K` as a flat-vector operator, for operator-norm estimation.
pub struct KOperator<'a> {
    pub grid: &'a GridSpec,
    pub cost: CostKind,
}

impl LinearOperator for KOperator<'_> {
    fn dim_in(&self) -> usize {
        StaggeredField::dof(self.grid)
    }
    fn dim_out(&self) -> usize {
        (1 + self.cost.channels(self.grid.k)) * self.grid.n_t * self.grid.cells()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let u = StaggeredField::from_slice(self.grid, x).expect("dof");
        let d = apply_k(&u, self.grid, self.cost).expect("shape");
        let n = d.pi.len();
        out[..n].copy_from_slice(&d.pi);
        for (c, ch) in d.channels.iter().enumerate() {
            out[(c + 1) * n..(c + 2) * n].copy_from_slice(ch);
        }
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        let n = self.grid.n_t * self.grid.cells();
        let d = DualField {
            pi: y[..n].to_vec(),
            channels: (0..self.cost.channels(self.grid.k))
                .map(|c| y[(c + 1) * n..(c + 2) * n].to_vec())
                .collect(),
        };
        let u = apply_k_adjoint(&d, self.grid, self.cost).expect("shape");
        out.copy_from_slice(&u.to_vec());
    }
}

/// Apply `Prox_{sigma F*}` cellwise, where `F` is `scale * J` on the
/// transformed channels.
fn prox_dual_field(d: &mut DualField, sigma: f64, scale: f64) {
    let n = d.pi.len();
    let gamma = scale / sigma;
    // pass 1: per-cell cubic solve
    let mut parts = vec![(0.0f64, 0.0f64); n];
    {
        let channels = &d.channels;
        let pi = &d.pi;
        par::fill_indexed(&mut parts, |i| {
            let mut q = 0.0;
            for ch in channels {
                let w = ch[i] / sigma;
                q += w * w;
            }
            cost::prox_perspective_parts(gamma, pi[i] / sigma, q)
        });
    }
    // pass 2: apply Moreau's identity componentwise
    par::for_each_indexed(&mut d.pi, |i, v| *v -= sigma * parts[i].0);
    for ch in &mut d.channels {
        par::for_each_indexed(ch, |i, v| *v *= 1.0 - parts[i].1);
    }
}

/// Scratch state reused across steps: multiplier warm start for the
/// projection's inner CG.
#[derive(Debug, Clone, Default)]
pub struct PdScratch {
    lambda: Vec<f64>,
}

/// One primal-dual step (cold projection start).
pub fn pd_step(
    state: &SolverState,
    params: &SolverParams,
    c: &ConstraintSystem,
    cost: CostKind,
) -> Result<SolverState> {
    pd_step_with(state, params, c, cost, 1.0, &mut PdScratch::default())
}

/// One primal-dual step with an explicit cost scale and reusable scratch.
pub fn pd_step_with(
    state: &SolverState,
    params: &SolverParams,
    c: &ConstraintSystem,
    cost: CostKind,
    cost_scale: f64,
    scratch: &mut PdScratch,
) -> Result<SolverState> {
    params.validate()?;
    let g = &c.grid;

    // dual ascent through the conjugate prox
    let kf = apply_k(&state.f, g, cost)?;
    let mut y = state.g_dual.clone();
    par::for_each_indexed(&mut y.pi, |i, v| *v += params.sigma * kf.pi[i]);
    for (ch, kch) in y.channels.iter_mut().zip(&kf.channels) {
        par::for_each_indexed(ch, |i, v| *v += params.sigma * kch[i]);
    }
    prox_dual_field(&mut y, params.sigma, cost.perspective_scale() * cost_scale);

    // primal descent and projection (Prox_{tau G} ignores tau: G is an indicator)
    let kt = apply_k_adjoint(&y, g, cost)?;
    let mut w = state.h.clone();
    w.axpy(-params.tau, &kt);
    let h_next = c.project_warm(&w, &mut scratch.lambda)?;

    // extrapolation
    let mut f_next = h_next.clone();
    f_next.scale(1.0 + params.theta);
    f_next.axpy(-params.theta, &state.h);

    Ok(SolverState {
        h: h_next,
        f: f_next,
        g_dual: y,
        iteration: state.iteration + 1,
    })
}

/// Linear-in-time lift from the source to the product of the marginals,
/// with zero momentum. Feasible after projection.
pub fn product_lift_initialization(c: &ConstraintSystem) -> Result<StaggeredField> {
    let g = &c.grid;
    let cells = g.cells();
    let product = DiscreteMeasure::product(&c.marginals)?;
    let mut u = StaggeredField::zeros(g);
    for t in 0..=g.n_t {
        let w = t as f64 / g.n_t as f64;
        let slice = &mut u.pi[t * cells..(t + 1) * cells];
        par::fill_indexed(slice, |x| {
            (1.0 - w) * c.source.mass[x] + w * product.mass[x]
        });
    }
    Ok(u)
}

/// Run the splitting scheme.
///
/// Unless `enforce_step_rule` is set, a violated step-size condition only
/// produces a warning on stderr; the check (with the measured operator
/// norm) is recorded in the diagnostics either way.
pub fn solve(
    c: &ConstraintSystem,
    cost: CostKind,
    params: &SolverParams,
    init: Option<StaggeredField>,
) -> Result<(StaggeredField, CenteredField, SolverDiagnostics)> {
    solve_scaled(c, cost, params, init, 1.0)
}

/// [`solve`] with the objective channels weighted by `cost_scale`.
pub fn solve_scaled(
    c: &ConstraintSystem,
    cost: CostKind,
    params: &SolverParams,
    init: Option<StaggeredField>,
    cost_scale: f64,
) -> Result<(StaggeredField, CenteredField, SolverDiagnostics)> {
    params.validate()?;
    if cost_scale <= 0.0 || !cost_scale.is_finite() {
        return Err(Error::Parameter("cost scale must be positive".into()));
    }
    let g = &c.grid;

    let op = KOperator { grid: g, cost };
    let opnorm = estimate_opnorm(&op, 1, params.seed)?;
    let product = params.sigma * params.tau * opnorm * opnorm;
    let check = StepRuleCheck {
        opnorm,
        sigma_tau_opnorm_sq: product,
        satisfied: product < 1.0,
    };
    if !check.satisfied {
        if params.enforce_step_rule {
            return Err(Error::Parameter(format!(
                "step rule violated: sigma * tau * |K|^2 = {product:.6} >= 1 (|K| ~ {opnorm:.6})"
            )));
        }
        eprintln!(
            "warning: step rule violated: sigma*tau*|K|^2 = {product:.6} >= 1 (|K| ~ {opnorm:.6}); continuing"
        );
    }

    let init = match init {
        Some(u) => {
            u.check(g)?;
            u
        }
        None => product_lift_initialization(c)?,
    };
    let mut scratch = PdScratch::default();
    let h0 = c.project_warm(&init, &mut scratch.lambda)?;
    let mut state = SolverState {
        f: h0.clone(),
        h: h0,
        g_dual: DualField::zeros(g, cost),
        iteration: 0,
    };

    let mut diagnostics = SolverDiagnostics {
        rows: Vec::new(),
        step_rule: Some(check),
    };
    for it in 0..params.iterations {
        let prev_h = state.h.clone();
        state = pd_step_with(&state, params, c, cost, cost_scale, &mut scratch)?;
        let logged = (it + 1) % params.log_every == 0 || it + 1 == params.iterations;
        if logged {
            let mut d = state.h.clone();
            d.axpy(-1.0, &prev_h);
            let step_norm = d.norm();
            let centered = interp(&state.h, g)?;
            let objective = dynamic_cost_positive_part(&centered, cost, g, cost_scale)?;
            let rep = c.residual_report(&state.h)?;
            diagnostics.rows.push(DiagnosticsRow {
                iteration: it + 1,
                objective,
                continuity_inf: rep.continuity_inf,
                marginal_inf: rep.marginal_inf,
                source_inf: rep.source_inf,
                min_mass: rep.min_mass,
                step_norm,
            });
        }
    }
    let centered = interp(&state.h, g)?;
    Ok((state.h, centered, diagnostics))
}

/// Weak-duality probe: primal objective of `h` minus the dual value
/// induced by the current dual variable, `+inf` while the dual variable
/// is infeasible.
///
/// The dual value of `g` is `<g, K u0>` for any `u0` with `A u0 = b`,
/// valid when (a) every cell satisfies the conjugate domain constraint
/// `g_pi + |g_m|^2 / (4 scale) <= 0` and (b) `K* g` lies in `range(A*)`.
/// Both conditions are tested up to small tolerances (1e-8 relative
/// cellwise, 1e-6 relative on the range residual), so values near
/// convergence carry that slack. Reported in the same `1/n_t`-weighted
/// units as [`dynamic_cost_scaled`].
pub fn primal_dual_gap_probe(
    state: &SolverState,
    c: &ConstraintSystem,
    cost: CostKind,
) -> Result<f64> {
    let g = &c.grid;
    let scale = cost.perspective_scale();
    let primal = dynamic_cost_positive_part(&interp(&state.h, g)?, cost, g, 1.0)?;

    // (a) conjugate-domain feasibility per cell
    let d = &state.g_dual;
    let n = d.pi.len();
    let viol = par::max_indexed(n, |i| {
        let mut q = 0.0;
        for ch in &d.channels {
            q += ch[i] * ch[i];
        }
        let slack = d.pi[i] + q / (4.0 * scale);
        slack - 1e-8 * (1.0 + d.pi[i].abs() + q)
    });
    if viol > 0.0 {
        return Ok(f64::INFINITY);
    }

    // (b) K* g in range(A*): A* mult is the orthogonal projection of
    // K* g onto range(A*), so the remainder is its null(A) component.
    let ktg = apply_k_adjoint(d, g, cost)?;
    let ktg_norm = ktg.norm();
    let a_ktg = c.apply_a(&ktg)?;
    let (mult, _rel) = c.least_squares_multiplier(&a_ktg)?;
    let at_mult = c.apply_a_adjoint(&mult)?;
    let mut null_component = ktg;
    null_component.axpy(-1.0, &at_mult);
    if null_component.norm() > 1e-6 * (1.0 + ktg_norm) {
        return Ok(f64::INFINITY);
    }

    // dual value <g, K u0> with u0 = projection of the zero field
    let u0 = c.project(&StaggeredField::zeros(g))?;
    let ku0 = apply_k(&u0, g, cost)?;
    let mut dual = par::dot(&d.pi, &ku0.pi);
    for (ch, kch) in d.channels.iter().zip(&ku0.channels) {
        dual += par::dot(ch, kch);
    }
    Ok(primal - dual / g.n_t as f64)
}
