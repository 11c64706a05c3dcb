//! The finite-dimensional reduction around a graded HYM operator.
//!
//! A [`SliceContext`] holds the harmonic space `V` of `(0,1)`-forms with
//! values in `End(Gr E)`, the algebra `𝔨` of trace-free anti-Hermitian
//! parallel endomorphisms, and the kernels needed by the Green operators.
//! On top of it live the Kuranishi map `Φ`, the complex-gauge perturbation
//! `σ(ε, b)`, the moment map `ν_ε` and the pulled-back symplectic form
//! `Ω_ε`.

mod harmonic;
mod perturb;

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{DolbeaultOp, LatticeContext, LatticeError, LatticeField, Metric, SeparableLaplacian};
use crate::linalg::small;

pub use harmonic::{aut_algebra, harmonic_basis, AutAlgebra, HarmonicBasis, KernelCertificate};
pub use perturb::{
    complex_gauge, exp_hermitian, kuranishi_phi, moment_map, omega_form, sigma_solve, wedge_square, Directional, KuranishiPoint, PerturbedPoint,
    PerturbedRecord,
};

/// Errors of the slice layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SliceError {
    #[error("base operator is not graded HYM: residual {0:.3e}")]
    NotGradedHym(f64),
    #[error("ambiguous {what} kernel: {retained} modes at or below {threshold:.3e}, next eigenvalue {next:.3e} (gap factor {gap:.2} < {required})")]
    AmbiguousKernel { what: &'static str, retained: usize, threshold: f64, next: f64, gap: f64, required: f64 },
    #[error("{what}: {detail}")]
    Basis { what: &'static str, detail: String },
    #[error("slice point with ‖b‖ = {norm:.4e} is outside the ball of radius {radius:.4e}; shrink B")]
    Radius { norm: f64, radius: f64 },
    #[error("Kuranishi iteration diverged at ‖b‖ = {norm:.4e} (increment {increment:.3e}); shrink B")]
    KuranishiDivergence { norm: f64, increment: f64 },
    #[error("perturbation ‖ε‖ = {norm:.4e} exceeds the neighbourhood radius {radius:.4e}")]
    OutsideNeighborhood { norm: f64, radius: f64 },
    #[error("σ Newton iteration did not converge (‖Ψ‖ = {residual:.3e}, target {target:.3e}); ε or b too large")]
    Newton { residual: f64, target: f64 },
    #[error("moment map is not 𝔨-valued: residual {residual:.3e} above {tol:.3e}")]
    Consistency { residual: f64, tol: f64 },
    #[error("finite-difference step {0:.3e} underflows")]
    StepUnderflow(f64),
    #[error("coordinate vector has length {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// Thresholds, radii and tolerances of the slice construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SliceConfig {
    /// Eigenvalue threshold `τ_V` for the near-kernels of the Laplacians.
    pub tau: f64,
    /// Required ratio between the first discarded eigenvalue and the
    /// threshold (and, for the resolution stage, between discarded and
    /// retained energies).
    pub gap_factor: f64,
    /// Radius of the ball `B ⊂ V` in slice coordinates.
    pub ball_radius: f64,
    /// Radius of the neighbourhood `U` of `ε`, as a multiple of `min(t)`.
    pub neighborhood_factor: f64,
    /// Newton tolerance for `σ`, relative to the base curvature scale.
    pub tol_sigma: f64,
    /// Increment tolerance of the Kuranishi fixed point.
    pub tol_kuranishi: f64,
    /// Residual tolerance of the eigen-solves.
    pub tol_eigen: f64,
    /// Relative step of the finite differences in slice coordinates.
    pub fd_step: f64,
    /// Seed of the eigen-solver start vectors.
    pub seed: u64,
}

impl Default for SliceConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            gap_factor: 10.0,
            ball_radius: 0.5,
            neighborhood_factor: 0.05,
            tol_sigma: 1e-9,
            tol_kuranishi: 1e-12,
            tol_eigen: 1e-8,
            fd_step: 1e-4,
            seed: 7,
        }
    }
}

/// Immutable data of the slice around a graded operator.
#[derive(Debug)]
pub struct SliceContext {
    op0: DolbeaultOp,
    config: SliceConfig,
    basis: HarmonicBasis,
    algebra: AutAlgebra,
    /// Orthonormal kernel of `Δ₀` on `End`-valued sections.
    section_kernel: Vec<LatticeField>,
    /// Orthonormal near-kernel of `Δ_∂̄` on `End`-valued `(0,2)`-forms.
    kernel02: Vec<LatticeField>,
    sections: SeparableLaplacian,
    cutoff: f64,
    scale: f64,
}

impl SliceContext {
    /// Builds `V`, `𝔨` and the Green-operator kernels for `op0`.
    pub fn new(op0: DolbeaultOp, config: SliceConfig) -> Result<Arc<Self>, SliceError> {
        let ctx = op0.ctx().clone();
        let flat = Metric::flat(&ctx.grid);
        let residual = op0.hym_residual(&flat);
        if residual > 1e-8 {
            return Err(SliceError::NotGradedHym(residual));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let basis = harmonic_basis(&op0, &config, &mut rng)?;
        let (algebra, section_kernel) = aut_algebra(&op0, &basis, &config, &mut rng)?;
        let kernel02 = harmonic::kernel_02(&op0, &config, &mut rng)?;
        let sections = ctx.separable(crate::lattice::SeparableKind::Rough, crate::lattice::Bidegree::SECTION, crate::lattice::Valued::End)?;
        let cutoff = crate::lattice::dolbeault::kernel_cutoff(&ctx);
        let scale = curvature_scale(&ctx);
        Ok(Arc::new(Self { op0, config, basis, algebra, section_kernel, kernel02, sections, cutoff, scale }))
    }

    pub fn op0(&self) -> &DolbeaultOp {
        &self.op0
    }
    pub fn lattice(&self) -> &Arc<LatticeContext> {
        self.op0.ctx()
    }
    pub fn config(&self) -> &SliceConfig {
        &self.config
    }
    pub fn basis(&self) -> &HarmonicBasis {
        &self.basis
    }
    pub fn algebra(&self) -> &AutAlgebra {
        &self.algebra
    }
    pub fn section_kernel(&self) -> &[LatticeField] {
        &self.section_kernel
    }
    pub fn kernel02(&self) -> &[LatticeField] {
        &self.kernel02
    }
    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// `L²` norm of a field whose pointwise size is the largest base
    /// curvature; the unit of the `σ` tolerance.
    pub fn curvature_scale(&self) -> f64 {
        self.scale
    }

    /// Absolute Newton target for `‖Ψ‖`.
    pub fn sigma_target(&self) -> f64 {
        self.config.tol_sigma * self.scale
    }

    /// Radius of the `ε`-neighbourhood `U`.
    pub fn neighborhood_radius(&self) -> f64 {
        let t = self.lattice().grid.t;
        self.config.neighborhood_factor * t[0].min(t[1])
    }

    /// `v_b = Σ b_j e_j`.
    pub fn expand(&self, b: &[C64]) -> Result<LatticeField, SliceError> {
        self.check_dim(b)?;
        Ok(self.basis.expand(b))
    }

    /// Harmonic coordinates `⟨α, e_j⟩` of a `(0,1)`-form.
    pub fn coordinates(&self, alpha: &LatticeField) -> Vec<C64> {
        self.basis.coordinates(self.lattice(), alpha)
    }

    pub(crate) fn check_dim(&self, b: &[C64]) -> Result<(), SliceError> {
        if b.len() != self.dim() {
            return Err(SliceError::Dimension { expected: self.dim(), found: b.len() });
        }
        Ok(())
    }

    /// Euclidean norm of slice coordinates (the `L²` norm of `v_b`).
    pub fn coord_norm(b: &[C64]) -> f64 {
        b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Coordinate action `ρ(g)` of a constant invertible `g`:
    /// `ρ(g)_{jk} = ⟨g e_k g⁻¹, e_j⟩`.
    pub fn rho(&self, g: &[C64]) -> Result<DMatrix<C64>, SliceError> {
        let r = self.lattice().rank();
        let ginv = small::inverse(g, r).ok_or(SliceError::Lattice(LatticeError::SingularGauge(0)))?;
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        for k in 0..d {
            let moved = conjugate_form(&self.basis.fields[k], g, &ginv, r);
            let c = self.coordinates(&moved);
            for j in 0..d {
                m[(j, k)] = c[j];
            }
        }
        Ok(m)
    }

    /// Matrix of `Ad(u)` on `𝔨` coordinates for constant `u`:
    /// `⟨u a_k u⁻¹, a_j⟩₀`.
    pub fn adjoint_action(&self, u: &[C64]) -> Result<DMatrix<f64>, SliceError> {
        let r = self.lattice().rank();
        let uinv = small::inverse(u, r).ok_or(SliceError::Lattice(LatticeError::SingularGauge(0)))?;
        let vol = self.lattice().grid.volume();
        let m = &self.algebra.matrices;
        Ok(DMatrix::from_fn(m.len(), m.len(), |j, k| {
            let moved = small::mul(&small::mul(u, &m[k], r), &uinv, r);
            matrix_inner(&moved, &m[j]) * vol
        }))
    }

    /// Applies `Δ₀⁺` (the base Laplacian on sections inverted off its
    /// kernel) through the exact spectral calculus.
    pub(crate) fn section_green(&self, f: &LatticeField) -> LatticeField {
        let cutoff = self.cutoff;
        let data = self.sections.apply_function(f.data(), &|l| if l > cutoff { 1.0 / l } else { 0.0 });
        LatticeField::from_vec(f.n(), f.rank(), f.bidegree(), f.valued(), data).expect("same shape")
    }

    /// Applies the base section Laplacian through the spectral calculus.
    pub(crate) fn section_laplacian(&self, f: &LatticeField) -> LatticeField {
        let data = self.sections.apply_function(f.data(), &|l| l);
        LatticeField::from_vec(f.n(), f.rank(), f.bidegree(), f.valued(), data).expect("same shape")
    }
}

/// `2π max_k Σ_p |m_p^k| / t_p · √(r Vol)`.
fn curvature_scale(ctx: &LatticeContext) -> f64 {
    let t = ctx.grid.t;
    let pointwise = ctx
        .bundle
        .fluxes
        .iter()
        .map(|m| 2.0 * std::f64::consts::PI * (m[0].abs() as f64 / t[0] + m[1].abs() as f64 / t[1]))
        .fold(0.0, f64::max)
        .max(1.0);
    pointwise * (ctx.rank() as f64 * ctx.grid.volume()).sqrt()
}

/// `Re tr(a b†)` for row-major square matrices.
pub(crate) fn matrix_inner(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x * y.conj()).re).sum()
}

/// `g α g⁻¹` for a form and constant matrices.
pub(crate) fn conjugate_form(f: &LatticeField, g: &[C64], ginv: &[C64], r: usize) -> LatticeField {
    let mut out = f.zeros_like();
    for c in 0..f.components() {
        for s in 0..f.sites() {
            let m = small::mul(&small::mul(g, f.at(c, s), r), ginv, r);
            out.at_mut(c, s).copy_from_slice(&m);
        }
    }
    out
}

/// A constant `End`-valued section.
pub(crate) fn constant_section(ctx: &LatticeContext, m: &[C64]) -> LatticeField {
    let mut f = ctx.zeros(crate::lattice::Bidegree::SECTION, crate::lattice::Valued::End);
    for s in 0..f.sites() {
        f.at_mut(0, s).copy_from_slice(m);
    }
    f
}

/// Pointwise Hermitian part `(X + X†)/2` of an `End`-valued field.
pub(crate) fn hermitian_part(x: &LatticeField) -> LatticeField {
    let adj = x.pointwise_adjoint();
    let mut out = x.clone();
    out.axpy(C64::new(1.0, 0.0), &adj);
    out.scale(C64::new(0.5, 0.0));
    out
}
