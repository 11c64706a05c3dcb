//! Behaviour of the moment-map flow on T4-X: outcomes on both sides of the
//! wall, failure modes, the Donaldson functional, the destabilizer and the
//! post-processing of sweeps.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use hymwall::flow::{
    bound_verify, condition_number, destabilizer_extract, donaldson_increment, donaldson_segment, gamma_observables,
    integrate, observable_distance, pairing_check, FlowError, FlowParams, FlowResult, Outcome, PathKind, SweepPoint,
};
use hymwall::lattice::{
    Bidegree, BundleSpec, DolbeaultOp, ExactMode, LatticeContext, LatticeField, Metric, MetricPerturbation, TorusGrid,
    Valued,
};
use hymwall::slice::{kuranishi_phi, SliceConfig, SliceContext, SliceError};
use num_complex::Complex64 as C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

fn t4x() -> &'static Arc<SliceContext> {
    static SLICE: OnceLock<Arc<SliceContext>> = OnceLock::new();
    SLICE.get_or_init(|| {
        let bundle = BundleSpec::new(vec![[1, -1], [-1, 1]], vec![vec![false, true], vec![false, false]]).unwrap();
        let ctx = LatticeContext::new(TorusGrid::new(9, 1.0, 1.0).unwrap(), bundle);
        SliceContext::new(DolbeaultOp::base(ctx), SliceConfig::default()).unwrap()
    })
}

/// `b₀` with amplitude `a` on the lowest mode of the extension entry.
fn extension_start(slice: &SliceContext, a: f64) -> Vec<C64> {
    let mut b = vec![ZERO; slice.dim()];
    b[slice.basis().entry_indices(0, 1)[0]] = C64::new(a, 0.0);
    b
}

fn unstable_run() -> &'static FlowResult {
    static RUN: OnceLock<FlowResult> = OnceLock::new();
    RUN.get_or_init(|| {
        let slice = t4x();
        let params = FlowParams { donaldson: false, ..FlowParams::default() };
        integrate(slice, &MetricPerturbation::moduli(-0.01, 0.01), &extension_start(slice, 0.2), &params).unwrap()
    })
}

/// Smooth Hermitian `End`-valued section with a plane-wave profile.
fn hermitian_field(ctx: &LatticeContext, diag: [f64; 2], off: C64, wave: f64, k: usize) -> LatticeField {
    let mut f = ctx.zeros(Bidegree::SECTION, Valued::End);
    let n = ctx.grid.n as f64;
    for s in 0..f.sites() {
        let c = ctx.grid.coords(s);
        let ph = 2.0 * PI * c[k % 4] as f64 / n;
        let w = wave * ph.cos();
        let m = f.at_mut(0, s);
        m[0] = C64::new(diag[0] + w, 0.0);
        m[3] = C64::new(diag[1] - w, 0.0);
        m[1] = off * (1.0 + ph.sin());
        m[2] = m[1].conj();
    }
    f
}

fn point(nu: f64, b: f64, c0: f64, class: f64, dist: f64) -> SweepPoint {
    SweepPoint { eps_c0: c0, eps_class: class, nu_norm: nu, b_norm: b, op_distance: dist }
}

#[test]
fn stationary_starts_take_no_steps() {
    let slice = t4x();
    let zero = vec![ZERO; slice.dim()];
    let exact = MetricPerturbation {
        moduli: [0.0, 0.0],
        exact: vec![ExactMode { amplitude: 0.0005, kx: [1, 0], ky: [0, 0] }],
    };
    for eps in [MetricPerturbation::zero(), exact] {
        let run = integrate(slice, &eps, &zero, &FlowParams::default()).unwrap();
        assert!(run.report.steps.is_empty(), "{} steps", run.report.steps.len());
        match &run.report.outcome {
            Outcome::Converged { hym_residual, cond_g, .. } => {
                assert!(*hym_residual <= 1e-5);
                assert!((cond_g - 1.0).abs() <= 1e-12);
            }
            other => panic!("unexpected outcome {other:?}"),
        }
        assert!(run.op_inf.is_some());
    }
}

#[test]
fn stable_side_converges() {
    let slice = t4x();
    let params = FlowParams { donaldson: false, tol_nu: 1e-5, tol_hym: 1e-4, ..FlowParams::default() };
    let run = integrate(slice, &MetricPerturbation::moduli(0.01, -0.01), &extension_start(slice, 0.2), &params).unwrap();
    let rep = &run.report;
    match &rep.outcome {
        Outcome::Converged { nu_norm, hym_residual, cond_g, b_inf } => {
            assert!(*nu_norm <= 1e-5 && *hym_residual <= 1e-4 && cond_g.is_finite());
            let b = b_inf.iter().map(|c| c[0] * c[0] + c[1] * c[1]).sum::<f64>().sqrt();
            assert!(b > 0.3 && b < 0.4, "‖b∞‖ = {b}");
        }
        other => panic!("unexpected outcome {other:?}"),
    }
    assert!(rep.max_nu_increase <= 1e-8 && rep.max_orbit_error <= 1e-6);
    assert!(rep.trajectory.windows(2).all(|w| w[1].t > w[0].t));
    // Converged runs carry no destabilizer.
    assert!(matches!(destabilizer_extract(slice, &run, 5), Err(FlowError::NoDestabilizer(_))));
    let sp = SweepPoint::from_result(slice, &run).unwrap();
    assert!(sp.op_distance > 0.0 && (sp.eps_class - 0.02f64.sqrt() * 0.1).abs() <= 1e-12);
}

#[test]
fn unstable_side_destabilizes() {
    let slice = t4x();
    let run = unstable_run();
    let rep = &run.report;
    assert_eq!(rep.outcome.kind(), "destabilized");
    assert!(rep.max_nu_increase <= 1e-8 && rep.max_orbit_error <= 1e-6);
    assert!(run.op_inf.is_none() && SweepPoint::from_result(slice, run).is_none());
    let d = destabilizer_extract(slice, run, 5).unwrap();
    assert!(d.variation <= 1e-3 && d.decay_ratio <= 0.05);
    let sub = d.subobject().unwrap();
    assert_eq!(sub.components, vec![0]);
    assert_eq!(sub.c1, vec![-1, 1]);
    assert_eq!(sub.rank, 1);
    // ξ is diagonal, trace free, with the sub on the negative eigenvalue.
    let x: Vec<C64> = d.xi.iter().map(|c| C64::new(c[0], c[1])).collect();
    assert!(x[1].norm() <= 1e-6 && x[2].norm() <= 1e-6 && (x[0] + x[3]).norm() <= 1e-6 && x[0].re < 0.0);
}

#[test]
fn budgets_and_ball_are_enforced() {
    let slice = t4x();
    let eps = MetricPerturbation::moduli(-0.01, 0.01);
    let b0 = extension_start(slice, 0.2);
    let tight = FlowParams { max_steps: 2, donaldson: false, ..FlowParams::default() };
    let run = integrate(slice, &eps, &b0, &tight).unwrap();
    assert!(matches!(run.report.outcome, Outcome::BudgetExceeded { .. }), "{:?}", run.report.outcome);
    assert_eq!(run.report.steps.len(), 2);
    // Starts outside the ball are rejected by the Kuranishi map.
    let free = FlowParams { start_rule: false, donaldson: false, ..FlowParams::default() };
    assert!(matches!(integrate(slice, &eps, &extension_start(slice, 0.6), &free), Err(FlowError::Slice(SliceError::Radius { .. }))));
    // Far on the stable side the limit lies outside the ball.
    match integrate(slice, &MetricPerturbation::moduli(0.025, -0.025), &extension_start(slice, 0.4), &free) {
        Err(FlowError::BallExit { norm, radius, trajectory, .. }) => assert!(norm > radius && !trajectory.is_empty()),
        other => panic!("expected a ball exit, got {:?}", other.map(|r| r.report.outcome)),
    }
    // The starting-point rule halves the same start back inside.
    let ruled = FlowParams { max_steps: 1, donaldson: false, ..FlowParams::default() };
    let run = integrate(slice, &eps, &extension_start(slice, 0.6), &ruled).unwrap();
    assert!(run.report.start_halvings >= 1);
    // Perturbations outside the neighbourhood are rejected.
    assert!(matches!(
        integrate(slice, &MetricPerturbation::moduli(0.3, 0.0), &b0, &FlowParams::default()),
        Err(FlowError::Slice(_))
    ));
}

#[test]
fn donaldson_one_form_is_closed() {
    let slice = t4x();
    let ctx = slice.lattice();
    let kp = kuranishi_phi(slice, &extension_start(slice, 0.2)).unwrap();
    let op = DolbeaultOp::with_gamma(ctx.clone(), kp.alpha).unwrap();
    let metric = Metric::new(&ctx.grid, &MetricPerturbation::moduli(0.01, -0.01)).unwrap();
    let u1 = ctx.zeros(Bidegree::SECTION, Valued::End);
    for general in [false, true] {
        let (o2, o3) = if general { (C64::new(0.015, 0.006), C64::new(-0.009, 0.0)) } else { (ZERO, ZERO) };
        let u2 = hermitian_field(ctx, [0.09, -0.09], o2, 0.006, 2);
        let u3 = hermitian_field(ctx, [0.03, -0.06], o3, 0.009, 1);
        let a = donaldson_segment(&op, &metric, &u1, &u2).unwrap();
        let b = donaldson_segment(&op, &metric, &u2, &u3).unwrap();
        let c = donaldson_segment(&op, &metric, &u1, &u3).unwrap();
        assert!((a + b - c).abs() <= 1e-6, "triangle defect {}", a + b - c);
        assert!(a.abs() > 1e-4);
    }
    assert_eq!(donaldson_segment(&op, &metric, &u1, &u1).unwrap(), 0.0);
    assert_eq!(donaldson_increment(&op, &metric, &u1), 0.0);
}

#[test]
fn pairing_identity_examples() {
    let slice = t4x();
    let eps = MetricPerturbation::moduli(0.01, -0.01);
    let zero = vec![ZERO; slice.dim()];
    let p = pairing_check(slice, &eps, &zero, &[0]).unwrap();
    assert!((p.l_s - 0.04).abs() <= 1e-12 && p.beta_norm_sq == 0.0);
    assert!((p.lhs - 2.0 * PI * 0.04).abs() <= 1e-10, "lhs {}", p.lhs);
    for a in [0.01, 0.04] {
        let p = pairing_check(slice, &eps, &extension_start(slice, a), &[0]).unwrap();
        assert!(p.beta_norm_sq > 0.0 && p.error <= 1e-4 * p.lhs.abs().max(p.rhs.abs()), "{p:?}");
    }
    for bad in [&[][..], &[0, 1][..], &[2][..]] {
        assert!(matches!(pairing_check(slice, &eps, &zero, bad), Err(FlowError::Config(_))));
    }
}

#[test]
fn observables_are_deterministic_and_blockwise() {
    let slice = t4x();
    let ctx = slice.lattice();
    let kp = kuranishi_phi(slice, &extension_start(slice, 0.1)).unwrap();
    let op = DolbeaultOp::with_gamma(ctx.clone(), kp.alpha).unwrap();
    let metric = Metric::new(&ctx.grid, &MetricPerturbation::moduli(0.01, -0.01)).unwrap();
    let a = gamma_observables(&op, &metric);
    let b = gamma_observables(&op, &metric);
    assert!(observable_distance(&a, &b) <= 1e-8);
    assert_eq!(a.spectrum.len(), 5);
    assert!(a.spectrum.windows(2).all(|w| w[0] <= w[1]));
    // Only the extension block is populated.
    assert!(a.block_norms[1] > 0.0 && a.block_norms[0] == 0.0 && a.block_norms[2] == 0.0 && a.block_norms[3] == 0.0);
    let base = gamma_observables(slice.op0(), &metric);
    assert!(base.block_norms.iter().all(|x| *x == 0.0) && observable_distance(&a, &base) > 0.0);
}

#[test]
fn bound_verification_examples() {
    let three = vec![point(1e-7, 0.1, 0.01, 0.01, 0.1); 3];
    assert!(matches!(bound_verify(PathKind::Exact, &three), Err(FlowError::InsufficientData { found: 3, needed: 4 })));
    // Exact path: distance proportional to ‖ε‖ and ‖b‖² ∝ ‖ε‖².
    let exact: Vec<SweepPoint> = (0..4).map(|k| 0.01 * 0.5f64.powi(k)).map(|e| point(0.0, e, e, 0.0, 3.0 * e)).collect();
    let fit = bound_verify(PathKind::Exact, &exact).unwrap();
    assert!(fit.passed && (fit.slope - 1.0).abs() <= 1e-12 && (fit.linear_c - 3.0).abs() <= 1e-12 && (fit.b_bound_c - 1.0).abs() <= 1e-12);
    // Moduli path: square-root behaviour passes, linear behaviour does not.
    let sqrt: Vec<SweepPoint> = (0..4).map(|k| 0.01 * 0.5f64.powi(k)).map(|e| point(1e-7, e.sqrt(), e, e, e.sqrt())).collect();
    let fit = bound_verify(PathKind::Moduli, &sqrt).unwrap();
    assert!(fit.passed && (fit.slope - 0.5).abs() <= 1e-12);
    let linear: Vec<SweepPoint> = sqrt.iter().map(|p| SweepPoint { op_distance: p.eps_class, ..p.clone() }).collect();
    assert!(!bound_verify(PathKind::Moduli, &linear).unwrap().passed);
    // Constants that disagree by more than a factor 10 fail the b bound.
    let mut spread = sqrt.clone();
    spread[3].b_norm *= 5.0;
    let fit = bound_verify(PathKind::Mixed, &spread).unwrap();
    assert!(!fit.passed && fit.b_bound_spread > 10.0);
}

#[test]
fn condition_number_examples() {
    let id = [C64::new(1.0, 0.0), ZERO, ZERO, C64::new(1.0, 0.0)];
    assert!((condition_number(&id, 2) - 1.0).abs() <= 1e-12);
    let d = [C64::new(4.0, 0.0), ZERO, ZERO, C64::new(0.5, 0.0)];
    assert!((condition_number(&d, 2) - 8.0).abs() <= 1e-12);
}

#[test]
fn reports_round_trip_through_json() {
    let rep = &unstable_run().report;
    let text = serde_json::to_string(rep).unwrap();
    let back: hymwall::flow::FlowReport = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_string(&back).unwrap(), text);
}
