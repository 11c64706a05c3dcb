//! The Donaldson functional along a path of Hermitian metrics.
//!
//! Metrics are represented relative to the base metric by `u = log k`, a
//! Hermitian `End`-valued section, on a fixed holomorphic structure
//! `∂̄_{b₀}`. The functional is the integral of the closed one-form
//! `k ↦ ∫ tr(k⁻¹ k' (Λ_ε iF_k − c_ε Id)) Vol_ε` along the straight path in
//! `u`, evaluated with an eight-point Gauss–Legendre rule.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use super::FlowError;
use crate::lattice::{DolbeaultOp, LatticeField, Metric};
use crate::linalg::{hermitian_eigen, small};
use crate::slice::{exp_hermitian, PerturbedPoint, SliceContext, SliceError};

pub(crate) const GL8_NODES: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
pub(crate) const GL8_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

/// `sinh(x)/x`.
fn sinhc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 + x * x / 6.0
    } else {
        x.sinh() / x
    }
}

/// `u = log(f† f)` pointwise for an invertible `End`-valued section `f`.
pub fn metric_log(f: &LatticeField) -> LatticeField {
    let r = f.rank();
    let mut out = f.zeros_like();
    for s in 0..f.sites() {
        let fs = f.at(0, s);
        let k = small::mul(&small::adjoint(fs, r), fs, r);
        let hk = hermitize(&k, r);
        out.at_mut(0, s).copy_from_slice(&small::hermitian_function(&hk, r, f64::ln));
    }
    out
}

fn hermitize(a: &[C64], r: usize) -> Vec<C64> {
    let adj = small::adjoint(a, r);
    a.iter().zip(adj.iter()).map(|(x, y)| (x + y) * 0.5).collect()
}

/// The integrand `∫ tr(w X) Vol_ε` of the derivative of the functional,
/// where `op` is `k^{1/2} · ∂̄_{b₀}` (the holomorphic structure seen in a
/// unitary frame), `X` its HYM defect and `w = k^{-1/2} k' k^{-1/2}` the
/// variation in the same frame.
pub fn donaldson_increment(op: &DolbeaultOp, metric: &Metric, w: &LatticeField) -> f64 {
    let x = op.hym_defect(metric);
    let adj = x.pointwise_adjoint();
    let mut h = x;
    h.axpy(C64::new(1.0, 0.0), &adj);
    h.scale(C64::new(0.5, 0.0));
    metric.section_inner(w, &h)
}

/// Change of the functional from `u0` to `u1` along the straight path.
pub fn donaldson_segment(op_start: &DolbeaultOp, metric: &Metric, u0: &LatticeField, u1: &LatticeField) -> Result<f64, FlowError> {
    let r = u0.rank();
    let mut delta = u1.clone();
    delta.axpy(C64::new(-1.0, 0.0), u0);
    if delta.max_abs() == 0.0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (node, weight) in GL8_NODES.iter().zip(GL8_WEIGHTS.iter()) {
        let tau = 0.5 * (node + 1.0);
        let mut u = u0.clone();
        u.axpy(C64::new(tau, 0.0), &delta);
        let mut half = u.zeros_like();
        let mut w = u.zeros_like();
        for s in 0..u.sites() {
            let us = hermitize(u.at(0, s), r);
            let (vals, vecs) = hermitian_eigen(&small::to_matrix(&us, r));
            let d = vecs.adjoint() * small::to_matrix(delta.at(0, s), r) * &vecs;
            let wd = DMatrix::from_fn(r, r, |i, j| d[(i, j)] * sinhc(0.5 * (vals[i] - vals[j])));
            small::from_matrix(&(&vecs * wd * vecs.adjoint()), w.at_mut(0, s));
            let e = DMatrix::from_fn(r, r, |i, j| if i == j { C64::new((0.5 * vals[i]).exp(), 0.0) } else { C64::new(0.0, 0.0) });
            small::from_matrix(&(&vecs * e * vecs.adjoint()), half.at_mut(0, s));
        }
        let op = op_start.gauge_act(&half).map_err(SliceError::from)?;
        total += 0.5 * weight * donaldson_increment(&op, metric, &w);
    }
    Ok(total)
}

/// Running accumulation of the functional along a flow.
#[derive(Clone, Debug)]
pub struct DonaldsonPath {
    op_start: DolbeaultOp,
    metric: Metric,
    u: LatticeField,
}

impl DonaldsonPath {
    /// Starts at the metric of `start` (`g = Id`, `k = e^{2σ}`).
    pub fn new(slice: &SliceContext, op_start: &DolbeaultOp, start: &PerturbedPoint) -> Result<Self, FlowError> {
        let r = slice.lattice().rank();
        let id: Vec<C64> = (0..r * r).map(|i| if i % (r + 1) == 0 { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) }).collect();
        Ok(Self { op_start: op_start.clone(), metric: start.metric.clone(), u: Self::log_metric(start, &id, r)? })
    }

    /// `log(f† f)` for `f = e^σ g⁻¹`.
    fn log_metric(point: &PerturbedPoint, g: &[C64], r: usize) -> Result<LatticeField, FlowError> {
        let ginv = small::inverse(g, r).ok_or_else(|| FlowError::Config("group element became singular".into()))?;
        let mut f = exp_hermitian(&point.s);
        for s in 0..f.sites() {
            let m = small::mul(f.at(0, s), &ginv, r);
            f.at_mut(0, s).copy_from_slice(&m);
        }
        Ok(metric_log(&f))
    }

    /// Moves to the metric of `point` with group element `g` and returns
    /// the increment of the functional.
    pub fn advance(&mut self, slice: &SliceContext, g: &[C64], point: &PerturbedPoint) -> Result<f64, FlowError> {
        let u = Self::log_metric(point, g, slice.lattice().rank())?;
        let d = donaldson_segment(&self.op_start, &self.metric, &self.u, &u)?;
        self.u = u;
        Ok(d)
    }

    pub fn current_log(&self) -> &LatticeField {
        &self.u
    }
}
