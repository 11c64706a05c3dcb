//! Post-processing of flow runs: the Hilbert–Mumford destabilizer, the
//! slope pairing, the quantitative bounds along a sweep of perturbations
//! and gauge-invariant observables of the limiting operator.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use super::{rotate, FlowError, FlowResult};
use crate::cone::{slope, SlopeDatum, ThetaClass};
use crate::lattice::{DolbeaultOp, LatticeField, Metric, MetricPerturbation};
use crate::linalg::{hermitian_eigen, small};
use crate::slice::{kuranishi_phi, SliceContext, SliceError};
use crate::Rat;

/// One block of the weight filtration of a destabilizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockDatum {
    pub eigenvalue: f64,
    pub rank: u32,
    /// Splitting components spanned by the block.
    pub components: Vec<usize>,
    /// First Chern class in θ coordinates.
    pub c1: Vec<i64>,
}

/// The limiting log-velocity of a destabilized run and its filtration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Destabilizer {
    /// Hermitian generator `ξ`, row-major.
    pub xi: Vec<[f64; 2]>,
    /// Eigenvalues of `ξ`, ascending.
    pub eigenvalues: Vec<f64>,
    pub blocks: Vec<BlockDatum>,
    /// Largest deviation of the normalized log-velocity from `ξ` over the
    /// averaging window.
    pub variation: f64,
    /// Relative size of the components of `Φ(b₀)` that do not decay under
    /// `e^{tξ}`.
    pub lower_residual: f64,
    pub decay_time: f64,
    /// `‖ρ(e^{Tξ}) b₀‖ / ‖b₀‖` at the decay time.
    pub decay_ratio: f64,
}

impl Destabilizer {
    /// The destabilizing subobject: the block of lowest weight.
    pub fn subobject(&self) -> Option<&BlockDatum> {
        self.blocks.first()
    }
}

/// Whether the first block of the filtration has the rank and class of
/// `source`.
pub fn filtration_matches(d: &Destabilizer, source: &SlopeDatum<Rat>) -> bool {
    let Some(first) = d.subobject() else {
        return false;
    };
    if first.rank != source.rank || first.c1.len() != source.c1.len() {
        return false;
    }
    first.c1.iter().zip(source.c1.iter()).all(|(a, b)| b.is_integer() && b.to_integer().to_i64() == Some(*a))
}

/// Whether every block has the slope of the total object at `theta`, in
/// exact arithmetic.
pub fn blocks_equal_slope(d: &Destabilizer, total: &SlopeDatum<Rat>, theta: &ThetaClass<Rat>) -> Result<bool, crate::cone::ConeError> {
    let mu = slope(total, theta)?;
    for b in &d.blocks {
        let datum = SlopeDatum::new(b.c1.iter().map(|&c| Rat::from_integer(c.into())).collect(), b.rank)?;
        if slope(&datum, theta)? != mu {
            return Ok(false);
        }
    }
    Ok(true)
}

fn unpack(v: &[[f64; 2]]) -> Vec<C64> {
    v.iter().map(|p| C64::new(p[0], p[1])).collect()
}

fn frob(m: &[C64]) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Extracts `ξ` from the last `window` log-velocities of a run and checks
/// its weight filtration against `Φ(b₀)`.
pub fn destabilizer_extract(slice: &SliceContext, result: &FlowResult, window: usize) -> Result<Destabilizer, FlowError> {
    let ctx = slice.lattice();
    let r = ctx.rank();
    if !matches!(result.report.outcome, super::Outcome::Destabilized { .. }) {
        return Err(FlowError::NoDestabilizer(format!("run ended as {}", result.report.outcome.kind())));
    }
    let hist = &result.report.log_velocity;
    if hist.is_empty() {
        return Err(FlowError::NoDestabilizer("the run took no steps".into()));
    }
    let w = window.clamp(1, hist.len());
    let tail: Vec<Vec<C64>> = hist[hist.len() - w..].iter().map(|m| unpack(m)).collect();
    let normalized: Vec<Vec<C64>> = tail
        .iter()
        .map(|m| {
            let n = frob(m);
            m.iter().map(|v| v / n).collect()
        })
        .collect();
    let mut avg = vec![C64::new(0.0, 0.0); r * r];
    for m in &normalized {
        for (a, v) in avg.iter_mut().zip(m.iter()) {
            *a += v;
        }
    }
    let n = frob(&avg);
    if !(n > 0.0) {
        return Err(FlowError::NoDestabilizer("vanishing log-velocity".into()));
    }
    let vol = ctx.grid.volume();
    // Unit norm in the L² pairing of constant sections.
    let xi: Vec<C64> = avg.iter().map(|v| v / (n * vol.sqrt())).collect();
    let variation = normalized
        .iter()
        .map(|m| m.iter().zip(xi.iter()).map(|(a, b)| (a - b * vol.sqrt()).norm_sqr()).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    if variation > 1e-3 {
        return Err(FlowError::Inconclusive(variation));
    }
    let xm = small::to_matrix(&xi, r);
    let herm = (&xm + xm.adjoint()) * C64::new(0.5, 0.0);
    let (vals, vecs) = hermitian_eigen(&herm);
    let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-6 * scale.max(1e-300);
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..r {
        match groups.last_mut() {
            Some(g) if (vals[i] - vals[*g.last().expect("nonempty")]).abs() <= tol => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    if groups.len() < 2 {
        return Err(FlowError::NoDestabilizer("ξ is a multiple of the identity".into()));
    }
    let mut blocks = Vec::new();
    for g in &groups {
        // Diagonal of the block projector in the splitting frame.
        let weights: Vec<f64> = (0..r).map(|k| g.iter().map(|&i| vecs[(k, i)].norm_sqr()).sum()).collect();
        let mut components = Vec::new();
        for (k, wk) in weights.iter().enumerate() {
            if (wk - 1.0).abs() <= 1e-6 {
                components.push(k);
            } else if wk.abs() > 1e-6 {
                return Err(FlowError::NoDestabilizer(format!("weight block is not a sum of splitting components (weight {wk:.3e})")));
            }
        }
        let flux = components.iter().fold([0i64; 2], |acc, &k| {
            let f = ctx.bundle.fluxes[k];
            [acc[0] + f[0], acc[1] + f[1]]
        });
        blocks.push(BlockDatum { eigenvalue: vals[g[0]], rank: components.len() as u32, components, c1: vec![flux[1], flux[0]] });
    }
    // Components of Φ(b₀) in the eigenbasis that do not decay.
    let phi = result.op_start.gamma();
    let block_of: Vec<usize> = (0..r).map(|i| groups.iter().position(|g| g.contains(&i)).expect("grouped")).collect();
    let (mut bad, mut total) = (0.0, 0.0);
    for c in 0..phi.components() {
        for s in 0..phi.sites() {
            let m = rotate(&small::to_matrix(phi.at(c, s), r), &vecs);
            for i in 0..r {
                for j in 0..r {
                    let a = m[(i, j)].norm_sqr();
                    total += a;
                    if block_of[i] >= block_of[j] {
                        bad += a;
                    }
                }
            }
        }
    }
    let lower_residual = if total > 0.0 { (bad / total).sqrt() } else { 0.0 };
    let gap = groups.windows(2).map(|p| vals[p[1][0]] - vals[p[0][0]]).fold(f64::INFINITY, f64::min);
    let decay_time = 100f64.ln() / gap;
    let e = (herm * C64::new(decay_time, 0.0)).exp();
    let mut em = vec![C64::new(0.0, 0.0); r * r];
    small::from_matrix(&e, &mut em);
    let b0 = unpack(&result.report.b0);
    let moved = slice.rho(&em)? * DVector::from_column_slice(&b0);
    let b0n = SliceContext::coord_norm(&b0);
    let decay_ratio = if b0n > 0.0 { moved.norm() / b0n } else { 0.0 };
    let mut xi_out = vec![C64::new(0.0, 0.0); r * r];
    small::from_matrix(&((&xm + xm.adjoint()) * C64::new(0.5, 0.0)), &mut xi_out);
    Ok(Destabilizer {
        xi: xi_out.iter().map(|c| [c.re, c.im]).collect(),
        eigenvalues: vals,
        blocks,
        variation,
        lower_residual,
        decay_time,
        decay_ratio,
    })
}

/// Both sides of the slope pairing for a coordinate subbundle `S`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairingCheck {
    /// `⟨ν(∂̄_b), a_S⟩_ε`.
    pub lhs: f64,
    /// `2π l_S([ω_ε]) − (1/rk S + 1/rk S⊥) ‖β‖²_ε`.
    pub rhs: f64,
    /// `l_S` at the perturbed class.
    pub l_s: f64,
    /// `‖β‖²_ε` of the `Hom(S⊥, S)` block of `Φ(b)`.
    pub beta_norm_sq: f64,
    pub error: f64,
}

/// Evaluates the pairing identity at `∂̄_b` (without the `σ` correction)
/// for the subbundle spanned by the splitting components in `sub`.
pub fn pairing_check(slice: &SliceContext, eps: &MetricPerturbation, b: &[C64], sub: &[usize]) -> Result<PairingCheck, FlowError> {
    let ctx = slice.lattice().clone();
    let r = ctx.rank();
    let rs = sub.len();
    if rs == 0 || rs >= r || sub.iter().any(|&k| k >= r) {
        return Err(FlowError::Config(format!("subbundle components {sub:?} out of range for rank {r}")));
    }
    let rq = r - rs;
    let metric = Metric::new(&ctx.grid, eps).map_err(SliceError::from)?;
    let kp = kuranishi_phi(slice, b)?;
    let op = DolbeaultOp::with_gamma(ctx.clone(), kp.alpha.clone()).map_err(SliceError::from)?;
    let x = op.hym_defect(&metric);
    let nu = x.scaled(C64::new(0.0, -1.0));
    let in_s = |k: usize| sub.contains(&k);
    let mut a = ctx.zeros(crate::lattice::Bidegree::SECTION, crate::lattice::Valued::End);
    for s in 0..a.sites() {
        let m = a.at_mut(0, s);
        for k in 0..r {
            m[k * r + k] = if in_s(k) { C64::new(0.0, 1.0 / rs as f64) } else { C64::new(0.0, -1.0 / rq as f64) };
        }
    }
    let lhs = metric.section_inner(&nu, &a);
    let mut beta = kp.alpha.zeros_like();
    for c in 0..beta.components() {
        for s in 0..beta.sites() {
            let src = kp.alpha.at(c, s).to_vec();
            let dst = beta.at_mut(c, s);
            for i in 0..r {
                for j in 0..r {
                    if in_s(i) && !in_s(j) {
                        dst[i * r + j] = src[i * r + j];
                    }
                }
            }
        }
    }
    let beta_norm_sq = metric.form01_inner(&beta, &beta);
    let theta = metric.class();
    let fsum = |pred: &dyn Fn(usize) -> bool| -> [f64; 2] {
        (0..r).filter(|&k| pred(k)).fold([0.0; 2], |acc, k| {
            let f = ctx.bundle.fluxes[k];
            [acc[0] + f[1] as f64, acc[1] + f[0] as f64]
        })
    };
    let cs = fsum(&|k| in_s(k));
    let cq = fsum(&|k| !in_s(k));
    let l_s = (cq[0] * theta[0] + cq[1] * theta[1]) / rq as f64 - (cs[0] * theta[0] + cs[1] * theta[1]) / rs as f64;
    let rhs = 2.0 * PI * l_s - (1.0 / rs as f64 + 1.0 / rq as f64) * beta_norm_sq;
    Ok(PairingCheck { lhs, rhs, l_s, beta_norm_sq, error: (lhs - rhs).abs() })
}

/// Kind of perturbation path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    Exact,
    Moduli,
    Mixed,
}

/// One converged point of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub eps_c0: f64,
    pub eps_class: f64,
    /// `‖ν‖` at the end of the run.
    pub nu_norm: f64,
    /// `‖b_∞‖`.
    pub b_norm: f64,
    /// `‖∂̄_ε − ∂̄₀‖_A`.
    pub op_distance: f64,
}

impl SweepPoint {
    /// The sweep entry of a converged run, or `None` otherwise.
    pub fn from_result(slice: &SliceContext, result: &FlowResult) -> Option<Self> {
        let op = result.op_inf.as_ref()?;
        let r = &result.report;
        let mut diff = op.gamma().clone();
        diff.axpy(C64::new(-1.0, 0.0), slice.op0().gamma());
        Some(Self {
            eps_c0: r.eps_c0,
            eps_class: r.eps_class,
            nu_norm: result.state.nu_norm,
            b_norm: SliceContext::coord_norm(&result.state.b),
            op_distance: a_norm(slice.op0(), &diff),
        })
    }
}

/// Fits of the quantitative bounds over a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundFit {
    pub kind: PathKind,
    pub points: usize,
    /// Smallest `C` with `‖b‖² ≤ C (‖ν‖ + ‖ε‖² + ‖[ε]‖)` at every point.
    pub b_bound_c: f64,
    /// Ratio between the largest and smallest nonzero per-point constants.
    pub b_bound_spread: f64,
    /// Least-squares slope of `log ‖∂̄_ε − ∂̄₀‖_A` against `log ‖ε‖`
    /// (`‖[ε]‖` on moduli paths).
    pub slope: f64,
    /// Smallest `C` with `‖∂̄_ε − ∂̄₀‖_A ≤ C ‖ε‖`.
    pub linear_c: f64,
    /// Ratio between the largest and smallest per-point linear constants.
    pub linear_spread: f64,
    pub passed: bool,
}

/// Fits the bounds over a sweep of at least four points.
///
/// Exact paths pass when one constant `C` covers `‖∂̄_ε − ∂̄₀‖_A ≤ C‖ε‖`
/// uniformly (spread at most 2). Moduli paths pass when the log-log slope
/// against `‖[ε]‖` is at most 0.65. Mixed paths are reported without a
/// verdict on the slope and pass on the `‖b‖²` bound alone. Every kind
/// also requires the per-point `‖b‖²` constants to agree within a factor
/// of 10.
pub fn bound_verify(kind: PathKind, sweep: &[SweepPoint]) -> Result<BoundFit, FlowError> {
    if sweep.len() < 4 {
        return Err(FlowError::InsufficientData { found: sweep.len(), needed: 4 });
    }
    let bc: Vec<f64> = sweep
        .iter()
        .map(|p| {
            let denom = p.nu_norm + p.eps_c0 * p.eps_c0 + p.eps_class;
            if denom > 0.0 {
                p.b_norm * p.b_norm / denom
            } else if p.b_norm == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let b_bound_c = bc.iter().copied().fold(0.0, f64::max);
    let b_bound_spread = spread(&bc);
    let size = |p: &SweepPoint| if kind == PathKind::Moduli { p.eps_class } else { p.eps_c0 };
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        sweep.iter().filter(|p| size(p) > 0.0 && p.op_distance > 0.0).map(|p| (size(p).ln(), p.op_distance.ln())).unzip();
    let slope = if xs.len() >= 2 {
        let mx = xs.iter().sum::<f64>() / xs.len() as f64;
        let my = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxy: f64 = xs.iter().zip(ys.iter()).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        sxy / sxx
    } else {
        f64::NAN
    };
    let lc: Vec<f64> = sweep.iter().map(|p| if p.eps_c0 > 0.0 { p.op_distance / p.eps_c0 } else { f64::INFINITY }).collect();
    let linear_c = lc.iter().copied().fold(0.0, f64::max);
    let linear_spread = spread(&lc);
    let bounded = b_bound_c.is_finite() && b_bound_spread <= 10.0;
    let passed = bounded
        && match kind {
            PathKind::Exact => linear_c.is_finite() && linear_spread <= 2.0,
            PathKind::Moduli => slope <= 0.65,
            PathKind::Mixed => true,
        };
    Ok(BoundFit { kind, points: sweep.len(), b_bound_c, b_bound_spread, slope, linear_c, linear_spread, passed })
}

fn spread(v: &[f64]) -> f64 {
    let nz: Vec<f64> = v.iter().copied().filter(|x| *x > 0.0).collect();
    if nz.is_empty() {
        return 1.0;
    }
    let max = nz.iter().copied().fold(0.0, f64::max);
    let min = nz.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

/// `‖γ‖_A`: the discrete `L²` norm plus the `L²` norm of the covariant
/// spectral derivatives.
pub fn a_norm(op0: &DolbeaultOp, gamma: &LatticeField) -> f64 {
    let ctx = op0.ctx();
    let lap = op0.rough_laplacian(gamma);
    (ctx.inner(gamma, gamma) + ctx.inner(gamma, &lap).max(0.0)).sqrt()
}

/// Gauge-invariant observables of an operator at a metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    /// Quantiles 0, 1/4, 1/2, 3/4, 1 of the pointwise eigenvalues of
    /// `Λ_ε iF`.
    pub spectrum: Vec<f64>,
    /// `‖γ_ij‖_ε` for every block `(i, j)`, row-major.
    pub block_norms: Vec<f64>,
    pub hym_residual: f64,
}

/// Observables of `op` in the metric.
pub fn gamma_observables(op: &DolbeaultOp, metric: &Metric) -> Observables {
    let r = op.ctx().rank();
    let lf = op.lambda_i_f(metric);
    let mut eig: Vec<f64> = Vec::with_capacity(lf.sites() * r);
    for s in 0..lf.sites() {
        let m = small::to_matrix(lf.at(0, s), r);
        let h: DMatrix<C64> = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        eig.extend(hermitian_eigen(&h).0);
    }
    eig.sort_by(f64::total_cmp);
    let q = |f: f64| eig[((eig.len() - 1) as f64 * f).round() as usize];
    let spectrum = vec![q(0.0), q(0.25), q(0.5), q(0.75), q(1.0)];
    let gamma = op.gamma();
    let mut block_norms = Vec::with_capacity(r * r);
    for i in 0..r {
        for j in 0..r {
            let mut part = gamma.zeros_like();
            for c in 0..gamma.components() {
                for s in 0..gamma.sites() {
                    part.at_mut(c, s)[i * r + j] = gamma.at(c, s)[i * r + j];
                }
            }
            block_norms.push(metric.form01_inner(&part, &part).max(0.0).sqrt());
        }
    }
    Observables { spectrum, block_norms, hym_residual: op.hym_residual(metric) }
}

/// Euclidean distance between two observable vectors.
pub fn observable_distance(a: &Observables, b: &Observables) -> f64 {
    let d: f64 = a.spectrum.iter().zip(b.spectrum.iter()).chain(a.block_norms.iter().zip(b.block_norms.iter())).map(|(x, y)| (x - y).powi(2)).sum();
    (d + (a.hym_residual - b.hym_residual).powi(2)).sqrt()
}
