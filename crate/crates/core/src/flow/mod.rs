//! The moment-map flow on the perturbed slice.
//!
//! The flow `b' = −i A(ν_ε(b)) b` is integrated together with the group
//! trajectory `g' = g · iν_ε(b)`. Both are advanced by the same exponential
//! update, so that `b(t) = ρ(g(t)⁻¹) b(0)` holds up to rounding and is
//! checked at every accepted step. The Donaldson functional is accumulated
//! along the realized path of metrics, and runs that drive the extension to
//! zero are analysed for a Hilbert–Mumford destabilizer.

mod analysis;
mod donaldson;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{DolbeaultOp, LatticeField, MetricPerturbation};
use crate::linalg::small;
use crate::slice::{sigma_solve, PerturbedPoint, SliceContext, SliceError};

pub use analysis::{
    a_norm, blocks_equal_slope, bound_verify, destabilizer_extract, filtration_matches, gamma_observables, observable_distance, pairing_check, BlockDatum, BoundFit,
    Destabilizer, Observables, PairingCheck, PathKind, SweepPoint,
};
pub use donaldson::{donaldson_increment, donaldson_segment, metric_log, DonaldsonPath};

/// Errors of the flow layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("slice point left the ball: ‖b‖ = {norm:.4e} > {radius:.4e} at t = {t:.4e}")]
    BallExit { norm: f64, radius: f64, t: f64, trajectory: Vec<TrajRow> },
    #[error("no destabilizer: {0}")]
    NoDestabilizer(String),
    #[error("inconclusive destabilizer: log-velocity varies by {0:.3e}")]
    Inconclusive(f64),
    #[error("insufficient data: {found} sweep points, at least {needed} required")]
    InsufficientData { found: usize, needed: usize },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Slice(#[from] SliceError),
}

/// Tolerances and budgets of one flow run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    /// Convergence threshold on `‖ν‖_ε`.
    pub tol_nu: f64,
    /// Required `hym_residual` of the limit.
    pub tol_hym: f64,
    /// Local error tolerance on `b`, relative to `‖b‖ ‖ν‖ / ‖ν(b₀)‖`.
    pub rtol: f64,
    /// Relative local error tolerance on the averaged `ν` of a step.
    pub rtol_nu: f64,
    /// Allowed increase of `‖ν‖` in an accepted step.
    pub monotone_slack: f64,
    /// Orbit-identity tolerance.
    pub orbit_tol: f64,
    pub dt_initial: f64,
    pub dt_max: f64,
    pub max_steps: usize,
    pub t_max: f64,
    /// Destabilization: `‖Φ(b)‖` below this fraction of its initial value.
    pub collapse_ratio: f64,
    /// Destabilization: condition number of `g` above this value.
    pub cond_max: f64,
    /// Apply the starting-point rule `‖ν(b₀)‖ ≤ 2‖ν(0)‖` by halving `b₀`.
    pub start_rule: bool,
    /// Accumulate the Donaldson functional.
    pub donaldson: bool,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            tol_nu: 1e-6,
            tol_hym: 1e-5,
            rtol: 3e-4,
            rtol_nu: 5e-2,
            monotone_slack: 1e-9,
            orbit_tol: 1e-6,
            dt_initial: 0.1,
            dt_max: 20.0,
            max_steps: 400,
            t_max: 1e5,
            collapse_ratio: 1e-3,
            cond_max: 1e6,
            start_rule: true,
            donaldson: true,
        }
    }
}

/// One sampled row of a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajRow {
    pub t: f64,
    pub nu_norm: f64,
    pub phi: f64,
    pub b_norm: f64,
    pub step: usize,
    pub hym_residual: f64,
}

/// Diagnostics of one accepted step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub dt: f64,
    pub nu_start: f64,
    pub nu_end: f64,
    /// Increment of the Donaldson functional over the step.
    pub dphi: f64,
    /// `−2 ∫ ‖ν‖² dt` over the step.
    pub predicted: f64,
    /// `dphi / predicted`.
    pub ratio: f64,
    pub orbit_error: f64,
    /// Rejected attempts before this step.
    pub rejections: usize,
    pub sigma_norm: f64,
    pub phi_norm: f64,
}

/// Current state of a flow.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub t: f64,
    pub b: Vec<C64>,
    /// `g` as a row-major `r×r` matrix.
    pub g: Vec<C64>,
    pub phi: f64,
    pub nu_norm: f64,
    pub point: PerturbedPoint,
}

/// How a run ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Converged { b_inf: Vec<[f64; 2]>, nu_norm: f64, hym_residual: f64, cond_g: f64 },
    Destabilized { reason: String, phi_norm_ratio: f64, cond_g: f64, nu_norm: f64 },
    BudgetExceeded { reason: String, nu_norm: f64 },
}

impl Outcome {
    pub fn kind(&self) -> &'static str {
        match self {
            Outcome::Converged { .. } => "converged",
            Outcome::Destabilized { .. } => "destabilized",
            Outcome::BudgetExceeded { .. } => "budget_exceeded",
        }
    }
}

/// Serializable summary of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub eps: MetricPerturbation,
    pub eps_c0: f64,
    pub eps_class: f64,
    /// `b₀` after the starting-point rule.
    pub b0: Vec<[f64; 2]>,
    pub start_halvings: usize,
    pub outcome: Outcome,
    pub trajectory: Vec<TrajRow>,
    pub steps: Vec<StepRecord>,
    /// `log-velocity` `−iν` (Hermitian `r×r`) at each accepted step.
    pub log_velocity: Vec<Vec<[f64; 2]>>,
    pub g_final: Vec<[f64; 2]>,
    pub max_orbit_error: f64,
    /// Largest increase of `‖ν‖` over an accepted step (negative when
    /// strictly decreasing).
    pub max_nu_increase: f64,
    pub phi_min: f64,
    pub sigma_max: f64,
    pub initial_phi_norm: f64,
    pub final_phi_norm: f64,
}

/// A run with the limiting operator attached.
#[derive(Clone, Debug)]
pub struct FlowResult {
    pub report: FlowReport,
    pub state: FlowState,
    /// The limiting operator of a converged run.
    pub op_inf: Option<DolbeaultOp>,
    /// `Φ(b₀)` operator used by the Donaldson functional.
    pub op_start: DolbeaultOp,
}

fn pack(v: &[C64]) -> Vec<[f64; 2]> {
    v.iter().map(|c| [c.re, c.im]).collect()
}

/// `−i A(ν_ε(b)) b`.
pub fn vector_field(slice: &SliceContext, point: &PerturbedPoint) -> Vec<C64> {
    let a = slice.algebra().action_of(&point.nu);
    let b = DVector::from_column_slice(&point.b);
    let v = a * b * C64::new(0.0, -1.0);
    v.iter().copied().collect()
}

/// `exp(−i h A(ν̄)) b` for `𝔨` coordinates `y`.
fn advance(slice: &SliceContext, b: &[C64], y: &[f64], h: f64) -> Vec<C64> {
    if y.iter().all(|v| *v == 0.0) {
        return b.to_vec();
    }
    let a = slice.algebra().action_of(y) * C64::new(0.0, -h);
    let e = a.exp();
    (e * DVector::from_column_slice(b)).iter().copied().collect()
}

/// `g · exp(i h ν̄)`.
fn advance_group(slice: &SliceContext, g: &[C64], y: &[f64], h: f64) -> Vec<C64> {
    let r = slice.lattice().rank();
    let nu = slice.algebra().element(y, r);
    let m = small::to_matrix(&nu, r) * C64::new(0.0, h);
    let e = m.exp();
    let mut out = vec![C64::new(0.0, 0.0); r * r];
    small::from_matrix(&(small::to_matrix(g, r) * e), &mut out);
    out
}

/// `‖g‖ ‖g⁻¹‖` in the spectral norm.
pub fn condition_number(g: &[C64], r: usize) -> f64 {
    let m = small::to_matrix(g, r);
    let sv = m.singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn identity(r: usize) -> Vec<C64> {
    let mut g = vec![C64::new(0.0, 0.0); r * r];
    for i in 0..r {
        g[i * r + i] = C64::new(1.0, 0.0);
    }
    g
}

/// `‖ρ(g⁻¹) b₀ − b‖`.
fn orbit_error(slice: &SliceContext, g: &[C64], b0: &[C64], b: &[C64]) -> Result<f64, FlowError> {
    let r = slice.lattice().rank();
    let ginv = small::inverse(g, r).ok_or_else(|| FlowError::Config("group element became singular".into()))?;
    let rho = slice.rho(&ginv)?;
    let moved = rho * DVector::from_column_slice(b0);
    Ok(moved.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt())
}

/// Applies the starting-point rule: halves `b₀` until
/// `‖ν(b₀)‖ ≤ 2 ‖ν(0)‖`.
pub fn starting_point(
    slice: &SliceContext,
    eps: &MetricPerturbation,
    b0: &[C64],
) -> Result<(Vec<C64>, usize, PerturbedPoint), FlowError> {
    let zero = vec![C64::new(0.0, 0.0); b0.len()];
    let origin = sigma_solve(slice, eps, &zero, None)?;
    let bound = 2.0 * origin.nu_norm;
    let mut b = b0.to_vec();
    for halvings in 0..60 {
        let norm = SliceContext::coord_norm(&b);
        if norm <= slice.config().ball_radius {
            let p = sigma_solve(slice, eps, &b, None)?;
            if p.nu_norm <= bound {
                return Ok((b, halvings, p));
            }
        }
        for v in b.iter_mut() {
            *v *= 0.5;
        }
    }
    Ok((zero, 60, origin))
}

const BS_A: [[f64; 3]; 3] = [[0.5, 0.0, 0.0], [0.0, 0.75, 0.0], [2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0]];
const BS_E: [f64; 4] = [7.0 / 24.0, 0.25, 1.0 / 3.0, 0.125];

fn combo(ys: &[&[f64]], w: &[f64]) -> Vec<f64> {
    let k = ys[0].len();
    (0..k).map(|i| ys.iter().zip(w.iter()).map(|(y, c)| y[i] * c).sum()).collect()
}

/// Integrates the flow from `b0` (after the starting-point rule when
/// enabled).
pub fn integrate(slice: &SliceContext, eps: &MetricPerturbation, b0: &[C64], params: &FlowParams) -> Result<FlowResult, FlowError> {
    let ctx = slice.lattice().clone();
    let r = ctx.rank();
    let radius = slice.config().ball_radius;
    let (b0, halvings, start) = if params.start_rule {
        starting_point(slice, eps, b0)?
    } else {
        let p = sigma_solve(slice, eps, b0, None)?;
        (b0.to_vec(), 0, p)
    };
    let op_start = DolbeaultOp::with_gamma(ctx.clone(), start.phi.clone()).map_err(SliceError::from)?;
    let initial_phi_norm = ctx.norm(&start.phi);
    let mut donaldson = if params.donaldson { Some(DonaldsonPath::new(slice, &op_start, &start)?) } else { None };
    let mut state = FlowState { t: 0.0, b: b0.clone(), g: identity(r), phi: 0.0, nu_norm: start.nu_norm, point: start };
    let mut rows = vec![TrajRow {
        t: 0.0,
        nu_norm: state.nu_norm,
        phi: 0.0,
        b_norm: SliceContext::coord_norm(&state.b),
        step: 0,
        hym_residual: state.point.hym_residual(),
    }];
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut log_velocity = Vec::new();
    let mut max_orbit: f64 = 0.0;
    let mut max_increase = f64::NEG_INFINITY;
    let mut phi_min: f64 = 0.0;
    let mut sigma_max = state.point.sigma_norm();
    let mut dt = params.dt_initial;
    let nu_ref = state.nu_norm.max(f64::MIN_POSITIVE);
    let mut rejections = 0usize;

    let finish = |state: FlowState,
                  outcome: Outcome,
                  rows: Vec<TrajRow>,
                  steps: Vec<StepRecord>,
                  log_velocity: Vec<Vec<[f64; 2]>>,
                  max_orbit: f64,
                  max_increase: f64,
                  phi_min: f64,
                  sigma_max: f64|
     -> FlowResult {
        let converged = matches!(outcome, Outcome::Converged { .. });
        let report = FlowReport {
            eps: eps.clone(),
            eps_c0: eps.c0_norm(&ctx.grid),
            eps_class: eps.class_norm(),
            b0: pack(&b0),
            start_halvings: halvings,
            outcome,
            trajectory: rows,
            steps,
            log_velocity,
            g_final: pack(&state.g),
            max_orbit_error: max_orbit,
            max_nu_increase: max_increase,
            phi_min,
            sigma_max,
            initial_phi_norm,
            final_phi_norm: ctx.norm(&state.point.phi),
        };
        let op_inf = if converged { Some(state.point.op.clone()) } else { None };
        FlowResult { report, state, op_inf, op_start: op_start.clone() }
    };

    loop {
        let cond = condition_number(&state.g, r);
        if state.nu_norm <= params.tol_nu {
            let hym = state.point.hym_residual();
            let outcome = if hym <= params.tol_hym {
                Outcome::Converged { b_inf: pack(&state.b), nu_norm: state.nu_norm, hym_residual: hym, cond_g: cond }
            } else {
                Outcome::BudgetExceeded { reason: format!("‖ν‖ converged but hym residual {hym:.3e} exceeds tolerance"), nu_norm: state.nu_norm }
            };
            return Ok(finish(state, outcome, rows, steps, log_velocity, max_orbit, max_increase, phi_min, sigma_max));
        }
        let phi_norm = ctx.norm(&state.point.phi);
        let stalled = steps.last().is_some_and(|s| s.nu_start - s.nu_end <= 1e-3 * s.nu_start);
        if initial_phi_norm > 0.0 && phi_norm < params.collapse_ratio * initial_phi_norm && stalled {
            let outcome = Outcome::Destabilized {
                reason: "extension collapsed while ‖ν‖ stalled".into(),
                phi_norm_ratio: phi_norm / initial_phi_norm,
                cond_g: cond,
                nu_norm: state.nu_norm,
            };
            return Ok(finish(state, outcome, rows, steps, log_velocity, max_orbit, max_increase, phi_min, sigma_max));
        }
        if cond > params.cond_max {
            let outcome = Outcome::Destabilized {
                reason: "group trajectory diverged".into(),
                phi_norm_ratio: if initial_phi_norm > 0.0 { phi_norm / initial_phi_norm } else { 0.0 },
                cond_g: cond,
                nu_norm: state.nu_norm,
            };
            return Ok(finish(state, outcome, rows, steps, log_velocity, max_orbit, max_increase, phi_min, sigma_max));
        }
        if steps.len() >= params.max_steps || state.t >= params.t_max {
            let outcome = Outcome::BudgetExceeded { reason: format!("{} steps, t = {:.4e}", steps.len(), state.t), nu_norm: state.nu_norm };
            return Ok(finish(state, outcome, rows, steps, log_velocity, max_orbit, max_increase, phi_min, sigma_max));
        }
        if state.point.nu.iter().all(|v| *v == 0.0) || SliceContext::coord_norm(&vector_field(slice, &state.point)) == 0.0 {
            let outcome = Outcome::BudgetExceeded { reason: "stationary point with ‖ν‖ above tolerance".into(), nu_norm: state.nu_norm };
            return Ok(finish(state, outcome, rows, steps, log_velocity, max_orbit, max_increase, phi_min, sigma_max));
        }

        // One Bogacki–Shampine step in exponential form.
        let h = dt.min(params.dt_max);
        let y1 = state.point.nu.clone();
        let b2 = advance(slice, &state.b, &combo(&[&y1], &BS_A[0][..1]), h);
        let p2 = stage(slice, eps, &b2, &state.point.s, radius, state.t, &rows)?;
        let y2 = p2.nu.clone();
        let b3 = advance(slice, &state.b, &combo(&[&y1, &y2], &BS_A[1][..2]), h);
        let p3 = stage(slice, eps, &b3, &p2.s, radius, state.t, &rows)?;
        let y3 = p3.nu.clone();
        let ybar = combo(&[&y1, &y2, &y3], &BS_A[2]);
        let b_new = advance(slice, &state.b, &ybar, h);
        let p4 = stage(slice, eps, &b_new, &p3.s, radius, state.t, &rows)?;
        let y4 = p4.nu.clone();
        let yerr: Vec<f64> = ybar.iter().zip(combo(&[&y1, &y2, &y3, &y4], &BS_E).iter()).map(|(a, b)| a - b).collect();
        let err_vec = slice.algebra().action_of(&yerr) * DVector::from_column_slice(&state.b) * C64::new(h, 0.0);
        // The tolerance on `b` shrinks with `‖ν‖`: near the limit a fixed
        // error in `b` would dominate the small moment map.
        let nu_scale = (state.nu_norm / nu_ref).clamp(1e-8, 1.0);
        let err_b = err_vec.norm() / (params.rtol * nu_scale * SliceContext::coord_norm(&state.b).max(1e-12));
        let y1_norm = y1.iter().map(|v| v * v).sum::<f64>().sqrt();
        let err_nu = yerr.iter().map(|v| v * v).sum::<f64>().sqrt() / (params.rtol_nu * y1_norm.max(1e-300));
        let err = err_b.max(err_nu);
        let increase = p4.nu_norm - state.nu_norm;
        if err > 1.0 || increase > params.monotone_slack {
            rejections += 1;
            let factor = if err > 1.0 { (0.9 * err.powf(-1.0 / 3.0)).clamp(0.1, 0.5) } else { 0.5 };
            dt = h * factor;
            if dt < 1e-12 {
                return Err(FlowError::Config(format!("step size underflow at t = {:.4e}", state.t)));
            }
            continue;
        }
        let g_new = advance_group(slice, &state.g, &ybar, h);
        let orbit = orbit_error(slice, &g_new, &b0, &b_new)?;
        max_orbit = max_orbit.max(orbit);
        max_increase = max_increase.max(increase);
        let predicted = -2.0 * decay_integral(state.nu_norm.powi(2), p4.nu_norm.powi(2), h);
        let dphi = match donaldson.as_mut() {
            Some(d) => d.advance(slice, &g_new, &p4)?,
            None => 0.0,
        };
        let ratio = if predicted != 0.0 { dphi / predicted } else { f64::NAN };
        let nu_mat = slice.algebra().element(&y1, r);
        log_velocity.push(pack(&nu_mat.iter().map(|v| v * C64::new(0.0, -1.0)).collect::<Vec<_>>()));
        let t_new = state.t + h;
        let phi_new = state.phi + dphi;
        phi_min = phi_min.min(phi_new);
        sigma_max = sigma_max.max(p4.sigma_norm());
        steps.push(StepRecord {
            t: t_new,
            dt: h,
            nu_start: state.nu_norm,
            nu_end: p4.nu_norm,
            dphi,
            predicted,
            ratio,
            orbit_error: orbit,
            rejections,
            sigma_norm: p4.sigma_norm(),
            phi_norm: ctx.norm(&p4.phi),
        });
        rejections = 0;
        state = FlowState { t: t_new, b: b_new, g: g_new, phi: phi_new, nu_norm: p4.nu_norm, point: p4 };
        rows.push(TrajRow {
            t: state.t,
            nu_norm: state.nu_norm,
            phi: state.phi,
            b_norm: SliceContext::coord_norm(&state.b),
            step: steps.len(),
            hym_residual: state.point.hym_residual(),
        });
        let grow = if err > 0.0 { (0.9 * err.powf(-1.0 / 3.0)).clamp(0.2, 4.0) } else { 4.0 };
        dt = (h * grow).min(params.dt_max);
    }
}

/// `∫₀ʰ f` for `f` interpolated exponentially between `f0` and `f1` (the
/// logarithmic mean), which is exact for exponential decay.
fn decay_integral(f0: f64, f1: f64, h: f64) -> f64 {
    if f0 <= 0.0 || f1 <= 0.0 {
        return 0.5 * h * (f0 + f1);
    }
    let q = (f0 / f1).ln();
    if q.abs() < 1e-8 {
        0.5 * h * (f0 + f1)
    } else {
        h * (f0 - f1) / q
    }
}

fn stage(
    slice: &SliceContext,
    eps: &MetricPerturbation,
    b: &[C64],
    warm: &LatticeField,
    radius: f64,
    t: f64,
    rows: &[TrajRow],
) -> Result<PerturbedPoint, FlowError> {
    let norm = SliceContext::coord_norm(b);
    if norm > radius {
        return Err(FlowError::BallExit { norm, radius, t, trajectory: rows.to_vec() });
    }
    Ok(sigma_solve(slice, eps, b, Some(warm))?)
}

/// Matrix helper used by the analysis: `U† M U`.
pub(crate) fn rotate(m: &DMatrix<C64>, u: &DMatrix<C64>) -> DMatrix<C64> {
    u.adjoint() * m * u
}
