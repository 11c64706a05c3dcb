//! Structure of the Kuranishi slice on T4-X: dimensions and certificates,
//! the Kuranishi map, the perturbed point `σ(ε, b)`, equivariance and the
//! symplectic and moment-map identities.

use std::sync::{Arc, OnceLock};

use hymwall::lattice::{
    project_off, Bidegree, BundleSpec, DolbeaultOp, LatticeContext, LatticeField, Metric, MetricPerturbation,
    TorusGrid, Valued,
};
use hymwall::slice::{kuranishi_phi, moment_map, omega_form, sigma_solve, SliceConfig, SliceContext, SliceError};
use nalgebra::DVector;
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

fn t4x() -> &'static Arc<SliceContext> {
    static SLICE: OnceLock<Arc<SliceContext>> = OnceLock::new();
    SLICE.get_or_init(|| {
        let bundle = BundleSpec::new(vec![[1, -1], [-1, 1]], vec![vec![false, true], vec![false, false]]).unwrap();
        let ctx = LatticeContext::new(TorusGrid::new(9, 1.0, 1.0).unwrap(), bundle);
        SliceContext::new(DolbeaultOp::base(ctx), SliceConfig::default()).unwrap()
    })
}

fn random_coords(d: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<C64> {
    (0..d).map(|_| C64::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale))).collect()
}

fn diag_unitary(phase: f64) -> Vec<C64> {
    vec![C64::from_polar(1.0, phase), ZERO, ZERO, C64::from_polar(1.0, -phase)]
}

fn field_distance(a: &LatticeField, b: &LatticeField) -> f64 {
    let mut d = a.clone();
    d.axpy(-ONE, b);
    d.flat_norm_sq().sqrt()
}

#[test]
fn dimensions_are_certified() {
    let slice = t4x();
    assert_eq!(slice.dim(), 12);
    assert_eq!(slice.algebra().dim(), 1);
    let basis = slice.basis();
    assert!(basis.near_kernel.gap >= 10.0, "{:?}", basis.near_kernel);
    assert!(basis.resolution_gap >= 10.0, "resolution gap {}", basis.resolution_gap);
    assert!(slice.algebra().kernel.gap >= 10.0, "{:?}", slice.algebra().kernel);
    assert!(basis.gram_error(slice.lattice()) <= 1e-10);
    // Two flat modes on each diagonal entry and four Landau modes on each
    // off-diagonal entry.
    for (i, j, count) in [(0, 0, 2), (0, 1, 4), (1, 0, 4), (1, 1, 2)] {
        assert_eq!(basis.entry_indices(i, j).len(), count, "entry ({i}, {j})");
    }
    // 𝔨 is spanned by i·diag(1, −1)/√2 up to sign.
    let a = &slice.algebra().matrices[0];
    let h = std::f64::consts::FRAC_1_SQRT_2;
    assert!(a[1].norm() <= 1e-10 && a[2].norm() <= 1e-10);
    assert!((a[0].im.abs() - h).abs() <= 1e-10 && (a[0] + a[3]).norm() <= 1e-10 && a[0].re.abs() <= 1e-10);
    assert!(slice.algebra().action_residual <= 1e-10 && slice.algebra().parallel_residual <= 1e-10);
}

#[test]
fn small_examples_have_the_expected_dimensions() {
    // A single line bundle: no trace-free automorphisms.
    let ctx = LatticeContext::new(TorusGrid::new(5, 1.0, 1.0).unwrap(), BundleSpec::split(vec![[1, -1]]).unwrap());
    let slice = SliceContext::new(DolbeaultOp::base(ctx), SliceConfig::default()).unwrap();
    assert_eq!(slice.algebra().dim(), 0);
    // The trivial flat line: H^{0,1} of the torus is two-dimensional.
    let ctx = LatticeContext::new(TorusGrid::new(5, 1.0, 1.0).unwrap(), BundleSpec::split(vec![[0, 0]]).unwrap());
    let slice = SliceContext::new(DolbeaultOp::base(ctx), SliceConfig::default()).unwrap();
    assert_eq!(slice.dim(), 2);
    assert_eq!(slice.algebra().dim(), 0);
}

#[test]
fn non_hym_base_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ctx = LatticeContext::new(TorusGrid::new(5, 1.0, 1.0).unwrap(), BundleSpec::split(vec![[0, 0], [0, 0]]).unwrap());
    let g = LatticeField::random(5, 2, Bidegree::ZERO_ONE, Valued::End, &mut rng).scaled(C64::new(0.3, 0.0));
    let op = DolbeaultOp::with_gamma(ctx, g).unwrap();
    assert!(matches!(SliceContext::new(op, SliceConfig::default()), Err(SliceError::NotGradedHym(_))));
}

#[test]
fn kuranishi_map_examples() {
    let slice = t4x();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let zero = vec![ZERO; slice.dim()];
    assert_eq!(kuranishi_phi(slice, &zero).unwrap().alpha.max_abs(), 0.0);
    // Forms on the upper entry alone wedge to zero, so Φ(b) = v_b there.
    let mut up = vec![ZERO; slice.dim()];
    for &k in &slice.basis().entry_indices(0, 1) {
        up[k] = C64::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
    }
    let v = slice.expand(&up).unwrap();
    assert!(field_distance(&kuranishi_phi(slice, &up).unwrap().alpha, &v) <= 1e-12 * v.flat_norm_sq().sqrt());
    // In general Φ(b) − v_b is quadratic in b and orthogonal to V.
    let b = random_coords(slice.dim(), 0.1, &mut rng);
    let remainder = |t: f64| {
        let tb: Vec<C64> = b.iter().map(|x| x * t).collect();
        let alpha = kuranishi_phi(slice, &tb).unwrap().alpha;
        let back = slice.coordinates(&alpha);
        let err: f64 = back.iter().zip(tb.iter()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        assert!(err <= 1e-10 * t, "harmonic part of Φ(tb) differs from tb by {err}");
        field_distance(&alpha, &slice.expand(&tb).unwrap())
    };
    let (r1, r2) = (remainder(1.0), remainder(0.5));
    assert!(r1 > 0.0 && (r1 / r2 - 4.0).abs() <= 0.1, "remainder ratio {}", r1 / r2);
    assert!(matches!(kuranishi_phi(slice, &b[..3]), Err(SliceError::Dimension { expected: 12, found: 3 })));
}

#[test]
fn kuranishi_map_is_equivariant() {
    let slice = t4x();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let b = random_coords(slice.dim(), 0.1, &mut rng);
    let u = diag_unitary(0.7);
    let rho = slice.rho(&u).unwrap();
    let moved: Vec<C64> = (rho * DVector::from_column_slice(&b)).iter().copied().collect();
    let lhs = kuranishi_phi(slice, &moved).unwrap().alpha;
    let rhs = kuranishi_phi(slice, &b).unwrap().alpha;
    let ctx = slice.lattice();
    let mut conj = rhs.zeros_like();
    let uinv = [u[0].conj(), ZERO, ZERO, u[3].conj()];
    for c in 0..rhs.components() {
        for s in 0..rhs.sites() {
            let m = rhs.at(c, s);
            let x = [u[0] * m[0] * uinv[0], u[0] * m[1] * uinv[3], u[3] * m[2] * uinv[0], u[3] * m[3] * uinv[3]];
            conj.at_mut(c, s).copy_from_slice(&x);
        }
    }
    assert!(ctx.norm(&{
        let mut d = lhs.clone();
        d.axpy(-ONE, &conj);
        d
    }) <= 1e-10 * ctx.norm(&lhs));
}

#[test]
fn sigma_vanishes_at_the_origin() {
    let slice = t4x();
    let p = sigma_solve(slice, &MetricPerturbation::zero(), &vec![ZERO; slice.dim()], None).unwrap();
    assert!(p.sigma_norm() <= 10.0 * slice.sigma_target(), "σ(0,0) = {}", p.sigma_norm());
    assert!(p.nu_norm <= 1e-10 && p.hym_residual() <= 1e-10);
}

#[test]
fn sigma_has_no_linear_term_in_b() {
    let slice = t4x();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let v = random_coords(slice.dim(), 1.0, &mut rng);
    let vn = SliceContext::coord_norm(&v);
    let dir: Vec<C64> = v.iter().map(|x| x / vn).collect();
    let eps = MetricPerturbation::zero();
    let ts = [0.01, 0.02, 0.04, 0.08];
    let ys: Vec<f64> =
        ts.iter().map(|t| sigma_solve(slice, &eps, &dir.iter().map(|x| x * *t).collect::<Vec<_>>(), None).unwrap().sigma_norm()).collect();
    // Least squares ‖σ(0, t v)‖ ≈ c₁ t + c₂ t².
    let (mut a11, mut a12, mut a22, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (t, y) in ts.iter().zip(ys.iter()) {
        a11 += t * t;
        a12 += t * t * t;
        a22 += t * t * t * t;
        r1 += t * y;
        r2 += t * t * y;
    }
    let det = a11 * a22 - a12 * a12;
    let c1 = (r1 * a22 - r2 * a12) / det;
    let c2 = (a11 * r2 - a12 * r1) / det;
    assert!(c1.abs() <= 1e-3, "linear coefficient {c1} (quadratic {c2})");
    assert!(c2 > 0.0);
}

#[test]
fn sigma_bound_holds_with_one_constant() {
    let slice = t4x();
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let v = random_coords(slice.dim(), 1.0, &mut rng);
    let vn = SliceContext::coord_norm(&v);
    let ctx = slice.lattice();
    let mut ratios = Vec::new();
    for k in 0..4 {
        let s = 10f64.powf(-(k as f64) / 3.0);
        let eps = MetricPerturbation::moduli(0.01 * s, -0.01 * s);
        let b: Vec<C64> = v.iter().map(|x| x * (0.1 * s.sqrt() / vn)).collect();
        let p = sigma_solve(slice, &eps, &b, None).unwrap();
        let size = eps.c0_norm(&ctx.grid) + SliceContext::coord_norm(&b).powi(2);
        ratios.push(p.sigma_norm() / size);
    }
    let max = ratios.iter().copied().fold(0.0, f64::max);
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(max.is_finite() && min > 0.0 && max / min <= 10.0, "ratios {ratios:?}");
}

#[test]
fn sigma_solve_rejects_perturbations_outside_the_neighbourhood() {
    let slice = t4x();
    let err = sigma_solve(slice, &MetricPerturbation::moduli(0.2, 0.0), &vec![ZERO; slice.dim()], None).unwrap_err();
    assert!(matches!(err, SliceError::OutsideNeighborhood { .. }), "{err}");
}

#[test]
fn psi_linearizes_to_the_base_laplacian() {
    let slice = t4x();
    let ctx = slice.lattice();
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let op0 = slice.op0().clone();
    let metric = Metric::flat(&ctx.grid);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let raw = LatticeField::random(ctx.grid.n, 2, Bidegree::SECTION, Valued::End, &mut rng);
        let mut dir = raw.clone();
        dir.axpy(ONE, &raw.pointwise_adjoint());
        dir.scale(C64::new(0.5, 0.0));
        project_off(ctx, slice.section_kernel(), &mut dir);
        let n = ctx.norm(&dir);
        dir.scale(C64::new(1.0 / n, 0.0));
        let plus = slice.psi(&op0, &metric, &dir.scaled(C64::new(h, 0.0))).unwrap();
        let minus = slice.psi(&op0, &metric, &dir.scaled(C64::new(-h, 0.0))).unwrap();
        let mut fd = plus;
        fd.axpy(-ONE, &minus);
        fd.scale(C64::new(0.5 / h, 0.0));
        let lap = slice.base_section_laplacian(&dir);
        let mut d = fd;
        d.axpy(-ONE, &lap);
        worst = worst.max(ctx.norm(&d) / ctx.norm(&lap));
    }
    assert!(worst <= 1e-3, "relative Jacobian error {worst}");
}

#[test]
fn symplectic_form_is_positive_on_the_basis() {
    let slice = t4x();
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let eps = MetricPerturbation::moduli(0.005, -0.005);
    let b = random_coords(slice.dim(), 0.03, &mut rng);
    let base = sigma_solve(slice, &eps, &b, None).unwrap();
    for k in [0, 5, 6, 11] {
        let mut v = vec![ZERO; slice.dim()];
        v[k] = ONE;
        let iv: Vec<C64> = v.iter().map(|x| x * C64::i()).collect();
        let dv = slice.directional(&base, &v).unwrap();
        let div = slice.directional(&base, &iv).unwrap();
        let w = base.metric.omega_d(&dv.dphi, &div.dphi);
        assert!(w > 0.0, "Ω(e_{k}, i e_{k}) = {w}");
    }
}

#[test]
fn moment_property_holds() {
    let slice = t4x();
    let ctx = slice.lattice();
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let eps = MetricPerturbation::moduli(0.005, -0.005);
    let b = random_coords(slice.dim(), 0.04, &mut rng);
    let base = sigma_solve(slice, &eps, &b, None).unwrap();
    let mut a1 = ctx.zeros(Bidegree::SECTION, Valued::End);
    for s in 0..a1.sites() {
        a1.at_mut(0, s).copy_from_slice(&slice.algebra().matrices[0]);
    }
    let g11 = base.metric.section_inner(&a1, &a1);
    let ab: Vec<C64> = (slice.algebra().action_of(&[1.0]) * DVector::from_column_slice(&b)).iter().copied().collect();
    for _ in 0..2 {
        let v = random_coords(slice.dim(), 1.0, &mut rng);
        let lhs = slice.directional(&base, &v).unwrap().dnu[0] * g11;
        let rhs = 2.0 * omega_form(slice, &eps, &b, &ab, &v).unwrap();
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs());
        assert!(rel <= 1e-3, "⟨dν v, a⟩ = {lhs}, 2Ω(A b, v) = {rhs}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 4, .. ProptestConfig::default() })]

    #[test]
    fn moment_map_is_equivariant(phase in -3.0f64..3.0, seed in 0u64..1000) {
        let slice = t4x();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = MetricPerturbation::moduli(0.004, -0.004);
        let b = random_coords(slice.dim(), 0.05, &mut rng);
        let u = diag_unitary(phase);
        let moved: Vec<C64> = (slice.rho(&u).unwrap() * DVector::from_column_slice(&b)).iter().copied().collect();
        let nu = moment_map(slice, &eps, &b).unwrap();
        let nu_moved = moment_map(slice, &eps, &moved).unwrap();
        let ad = slice.adjoint_action(&u).unwrap();
        let expected = &ad * DVector::from_column_slice(&nu);
        for (x, y) in nu_moved.iter().zip(expected.iter()) {
            prop_assert!((x - y).abs() <= 1e-8, "ν(ρ(u)b) = {x}, Ad(u)ν(b) = {y}");
        }
    }
}
