//! Certified kernels: the harmonic space `V`, the algebra `𝔨` and the
//! `(0,2)` near-kernel used by the Kuranishi Green operator.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{constant_section, matrix_inner, SliceConfig, SliceError};
use crate::lattice::{lowest_modes, Bidegree, DolbeaultOp, LaplacianKind, LatticeContext, LatticeField, Valued};
use crate::linalg::hermitian_eigen;

/// How a numerical kernel was accepted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelCertificate {
    pub threshold: f64,
    /// Eigenvalues of the retained modes.
    pub values: Vec<f64>,
    /// Smallest discarded eigenvalue.
    pub next: f64,
    /// `next / threshold`.
    pub gap: f64,
}

/// Orthonormal basis of `V = H^{0,1}(End Gr E)`.
///
/// Every element is supported on a single `End` entry; elements are ordered
/// by entry (row-major) and, within an entry, by covariant energy.
#[derive(Clone, Debug)]
pub struct HarmonicBasis {
    pub fields: Vec<LatticeField>,
    /// `(i, j)` entry carrying each element.
    pub entries: Vec<(usize, usize)>,
    /// Rayleigh quotients of `Δ_∂̄` on each element.
    pub laplacian_values: Vec<f64>,
    /// Rayleigh quotients of the covariant (rough) Laplacian.
    pub energies: Vec<f64>,
    /// Certificate of the `Δ_∂̄` near-kernel.
    pub near_kernel: KernelCertificate,
    /// Energy threshold separating resolved modes from grid-scale partners.
    pub resolution_threshold: f64,
    /// Smallest discarded energy over largest retained energy (infinite
    /// when nothing is discarded).
    pub resolution_gap: f64,
}

impl HarmonicBasis {
    pub fn dim(&self) -> usize {
        self.fields.len()
    }

    /// `Σ b_j e_j`.
    pub fn expand(&self, b: &[C64]) -> LatticeField {
        let mut out = self.fields[0].zeros_like();
        for (c, f) in b.iter().zip(self.fields.iter()) {
            if *c != C64::new(0.0, 0.0) {
                out.axpy(*c, f);
            }
        }
        out
    }

    /// `⟨α, e_j⟩` for every basis element.
    pub fn coordinates(&self, ctx: &LatticeContext, alpha: &LatticeField) -> Vec<C64> {
        self.fields.iter().map(|e| ctx.hermitian(alpha, e)).collect()
    }

    /// Largest entry of `Gram − Id`.
    pub fn gram_error(&self, ctx: &LatticeContext) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.fields.iter().enumerate() {
            for (j, b) in self.fields.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((ctx.hermitian(a, b) - target).norm());
            }
        }
        worst
    }

    /// Indices of the elements on entry `(i, j)`.
    pub fn entry_indices(&self, i: usize, j: usize) -> Vec<usize> {
        (0..self.dim()).filter(|&k| self.entries[k] == (i, j)).collect()
    }
}

/// The Lie algebra `𝔨` of `K = Aut₀(Gr E, h)` with its action on `V`.
#[derive(Clone, Debug)]
pub struct AutAlgebra {
    /// Constant trace-free anti-Hermitian `r×r` matrices (row-major),
    /// orthonormal for `⟨a, b⟩₀ = Re ∫ tr(a b†) Vol₀`.
    pub matrices: Vec<Vec<C64>>,
    /// `action[k]_{jl} = ⟨[a_k, e_l], e_j⟩`: anti-Hermitian matrices.
    pub action: Vec<DMatrix<C64>>,
    /// Largest `‖[a_k, e_l] − Σ_j action_{jl} e_j‖` (zero when `V` is
    /// preserved).
    pub action_residual: f64,
    /// Largest `‖∇₀ a_k‖`.
    pub parallel_residual: f64,
    /// Certificate of the kernel of `Δ₀` on sections.
    pub kernel: KernelCertificate,
}

impl AutAlgebra {
    pub fn dim(&self) -> usize {
        self.matrices.len()
    }

    /// `Σ x_k a_k`.
    pub fn element(&self, x: &[f64], r: usize) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); r * r];
        for (xk, m) in x.iter().zip(self.matrices.iter()) {
            for (o, v) in out.iter_mut().zip(m.iter()) {
                *o += *xk * v;
            }
        }
        out
    }

    /// Action matrix `A(Σ x_k a_k)`.
    pub fn action_of(&self, x: &[f64]) -> DMatrix<C64> {
        let d = self.action.first().map_or(0, |m| m.nrows());
        let mut out = DMatrix::zeros(d, d);
        for (xk, m) in x.iter().zip(self.action.iter()) {
            out += m * C64::new(*xk, 0.0);
        }
        out
    }
}

/// Smallest eigenpairs below `config.tau`, grown until an eigenvalue above
/// the threshold is seen, and accepted only with a gap of
/// `config.gap_factor`.
fn certified_near_kernel<R: Rng>(
    op: &DolbeaultOp,
    kind: LaplacianKind,
    bidegree: Bidegree,
    what: &'static str,
    config: &SliceConfig,
    rng: &mut R,
) -> Result<(Vec<LatticeField>, KernelCertificate), SliceError> {
    let total = bidegree.components() * op.grid().sites() * op.ctx().rank().pow(2);
    let mut wanted = 8usize;
    loop {
        let block = (wanted / 2).max(4);
        let modes = lowest_modes(op, kind, bidegree, Valued::End, wanted, block, config.tol_eigen, rng)?;
        if let Some(k) = modes.values.iter().position(|&l| l > config.tau) {
            let next = modes.values[k];
            let gap = next / config.tau;
            if gap < config.gap_factor {
                return Err(SliceError::AmbiguousKernel {
                    what,
                    retained: k,
                    threshold: config.tau,
                    next,
                    gap,
                    required: config.gap_factor,
                });
            }
            let cert = KernelCertificate { threshold: config.tau, values: modes.values[..k].to_vec(), next, gap };
            return Ok((modes.fields.into_iter().take(k).collect(), cert));
        }
        if wanted * 2 + block > total || wanted >= 512 {
            return Err(SliceError::Basis { what, detail: format!("no eigenvalue above {} among the lowest {wanted}", config.tau) });
        }
        wanted *= 2;
    }
}

/// `H_{ij} = ⟨b_j, b_i⟩` for a list of fields.
fn gram(ctx: &LatticeContext, fields: &[LatticeField]) -> DMatrix<C64> {
    let n = fields.len();
    DMatrix::from_fn(n, n, |i, j| ctx.hermitian(&fields[j], &fields[i]))
}

/// `Σ_j c_j f_j`.
fn combine(fields: &[LatticeField], c: impl Fn(usize) -> C64) -> LatticeField {
    let mut out = fields[0].zeros_like();
    for (j, f) in fields.iter().enumerate() {
        out.axpy(c(j), f);
    }
    out
}

/// Restriction of a field to one `End` entry.
fn entry_part(f: &LatticeField, entry: usize) -> LatticeField {
    let mut out = f.zeros_like();
    let per = f.per_site();
    for (o, v) in out.data_mut().iter_mut().zip(f.data().iter()).skip(entry).step_by(per) {
        *o = *v;
    }
    out
}

/// `H^{0,1}` of the graded operator, certified in two stages.
///
/// 1. The near-kernel of `Δ_∂̄` on `(0,1)`-forms below `τ`, with a gap.
/// 2. Inside it, per `End` entry, the modes whose covariant energy lies
///    below the geometric mean of the Landau scale `2π Σ_p |m_p|/t_p` and
///    the grid scale `(πN)²/max t`, again with a gap. The discarded modes
///    are the lattice index partners of the genuine ones.
pub fn harmonic_basis<R: Rng>(op0: &DolbeaultOp, config: &SliceConfig, rng: &mut R) -> Result<HarmonicBasis, SliceError> {
    let ctx = op0.ctx().clone();
    let r = ctx.rank();
    let (near, near_kernel) = certified_near_kernel(op0, LaplacianKind::Dbar, Bidegree::ZERO_ONE, "harmonic (0,1)", config, rng)?;
    if near.is_empty() {
        return Err(SliceError::Basis { what: "harmonic (0,1)", detail: "empty near-kernel".into() });
    }
    let t = ctx.grid.t;
    let landau = (0..r * r)
        .map(|e| {
            (0..2).map(|p| ctx.bundle.entry_flux(Valued::End, e, p).abs() as f64 / t[p]).sum::<f64>() * 2.0 * std::f64::consts::PI
        })
        .fold(0.0, f64::max)
        .max(2.0 * std::f64::consts::PI / t[0].max(t[1]));
    let grid_scale = (std::f64::consts::PI * ctx.grid.n as f64).powi(2) / t[0].max(t[1]);
    let threshold = (landau * grid_scale).sqrt();

    let mut fields = Vec::new();
    let mut entries = Vec::new();
    let mut energies = Vec::new();
    let mut discarded_min = f64::INFINITY;
    let mut total_rank = 0usize;
    for e in 0..r * r {
        let parts: Vec<LatticeField> = near.iter().map(|f| entry_part(f, e)).collect();
        let (vals, vecs) = hermitian_eigen(&gram(&ctx, &parts));
        let mut adapted = Vec::new();
        for (k, &l) in vals.iter().enumerate() {
            if l > 0.5 {
                if (l - 1.0).abs() > 1e-6 {
                    return Err(SliceError::Basis { what: "harmonic (0,1)", detail: format!("near-kernel is not entry-decomposable (weight {l:.3e})") });
                }
                adapted.push(combine(&parts, |j| vecs[(j, k)] / l.sqrt()));
            } else if l > 1e-6 {
                return Err(SliceError::Basis { what: "harmonic (0,1)", detail: format!("near-kernel is not entry-decomposable (weight {l:.3e})") });
            }
        }
        total_rank += adapted.len();
        if adapted.is_empty() {
            continue;
        }
        let images: Vec<LatticeField> = adapted.iter().map(|f| op0.rough_laplacian(f)).collect();
        let m = adapted.len();
        let h = DMatrix::from_fn(m, m, |i, j| ctx.hermitian(&images[j], &adapted[i]));
        let (evals, evecs) = hermitian_eigen(&h);
        for (k, &l) in evals.iter().enumerate() {
            if l <= threshold {
                fields.push(combine(&adapted, |j| evecs[(j, k)]));
                entries.push((e / r, e % r));
                energies.push(l);
            } else {
                discarded_min = discarded_min.min(l);
            }
        }
    }
    if total_rank != near.len() {
        return Err(SliceError::Basis { what: "harmonic (0,1)", detail: format!("entry ranks sum to {total_rank}, expected {}", near.len()) });
    }
    let retained_max = energies.iter().copied().fold(0.0, f64::max);
    let resolution_gap = if discarded_min.is_finite() { discarded_min / retained_max.max(f64::MIN_POSITIVE) } else { f64::INFINITY };
    if resolution_gap < config.gap_factor {
        return Err(SliceError::AmbiguousKernel {
            what: "resolved harmonic (0,1)",
            retained: fields.len(),
            threshold,
            next: discarded_min,
            gap: resolution_gap,
            required: config.gap_factor,
        });
    }
    let laplacian_values = fields
        .iter()
        .map(|f| Ok(ctx.inner(&op0.laplacian(LaplacianKind::Dbar, f)?, f)))
        .collect::<Result<Vec<f64>, SliceError>>()?;
    Ok(HarmonicBasis { fields, entries, laplacian_values, energies, near_kernel, resolution_threshold: threshold, resolution_gap })
}

/// `𝔨` from the kernel of `Δ₀` on `End`-valued sections, and the
/// orthonormal basis of that kernel (constant sections).
pub fn aut_algebra<R: Rng>(
    op0: &DolbeaultOp,
    basis: &HarmonicBasis,
    config: &SliceConfig,
    rng: &mut R,
) -> Result<(AutAlgebra, Vec<LatticeField>), SliceError> {
    let ctx = op0.ctx().clone();
    let r = ctx.rank();
    let rr = r * r;
    let vol = ctx.grid.volume();
    let (modes, kernel) = certified_near_kernel(op0, LaplacianKind::Nabla, Bidegree::SECTION, "section", config, rng)?;
    // Parallel sections are constant matrices on the zero-flux entries.
    let sites = ctx.grid.sites();
    let mut means = Vec::new();
    for f in &modes {
        let mut mean = vec![C64::new(0.0, 0.0); rr];
        for s in 0..sites {
            for (m, v) in mean.iter_mut().zip(f.at(0, s).iter()) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= sites as f64;
        }
        let dev = (0..sites)
            .map(|s| f.at(0, s).iter().zip(mean.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        let size = mean.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if dev > 1e-6 * size.max(1e-300) {
            return Err(SliceError::Basis { what: "section kernel", detail: format!("kernel mode is not constant (deviation {dev:.3e})") });
        }
        means.push(mean);
    }
    // Exact constant kernel, orthonormal in the base metric.
    let mut section_kernel: Vec<Vec<C64>> = Vec::new();
    for m in &means {
        let mut v = m.clone();
        for q in &section_kernel {
            let c: C64 = q.iter().zip(v.iter()).map(|(a, b)| b * a.conj()).sum::<C64>() * vol;
            for (x, y) in v.iter_mut().zip(q.iter()) {
                *x -= c * y;
            }
        }
        let nrm = (v.iter().map(|x| x.norm_sqr()).sum::<f64>() * vol).sqrt();
        if nrm > 1e-8 {
            section_kernel.push(v.iter().map(|x| x / nrm).collect());
        }
    }
    // Trace-free anti-Hermitian parts, orthonormalized for Re tr(ab†)Vol₀.
    let mut matrices: Vec<Vec<C64>> = Vec::new();
    for m in &means {
        let anti: Vec<C64> = (0..rr).map(|k| (m[k] - m[(k % r) * r + k / r].conj()) * 0.5).collect();
        let herm_i: Vec<C64> = (0..rr).map(|k| (m[k] + m[(k % r) * r + k / r].conj()) * C64::new(0.0, 0.5)).collect();
        for mut a in [anti, herm_i] {
            let tr: C64 = (0..r).map(|i| a[i * r + i]).sum::<C64>() / r as f64;
            for i in 0..r {
                a[i * r + i] -= tr;
            }
            for _ in 0..2 {
                for q in &matrices {
                    let c = matrix_inner(&a, q) * vol;
                    for (x, y) in a.iter_mut().zip(q.iter()) {
                        *x -= c * y;
                    }
                }
            }
            let nrm = (matrix_inner(&a, &a) * vol).sqrt();
            if nrm > 1e-6 {
                matrices.push(a.iter().map(|x| x / nrm).collect());
            }
        }
    }
    let mut action = Vec::new();
    let mut action_residual: f64 = 0.0;
    let mut parallel_residual: f64 = 0.0;
    for a in &matrices {
        let field = constant_section(&ctx, a);
        let grad = op0.dbar(&field)?;
        let del = op0.del(&field)?;
        parallel_residual = parallel_residual.max(ctx.norm(&grad).hypot(ctx.norm(&del)));
        let d = basis.dim();
        let mut m = DMatrix::zeros(d, d);
        for (l, e) in basis.fields.iter().enumerate() {
            let comm = commutator_left(a, e, r);
            let c = basis.coordinates(&ctx, &comm);
            let mut rest = comm.clone();
            for (j, cj) in c.iter().enumerate() {
                m[(j, l)] = *cj;
                rest.axpy(-cj, &basis.fields[j]);
            }
            action_residual = action_residual.max(ctx.norm(&rest));
        }
        action.push(m);
    }
    let kernel_fields = section_kernel.iter().map(|m| constant_section(&ctx, m)).collect();
    Ok((AutAlgebra { matrices, action, action_residual, parallel_residual, kernel }, kernel_fields))
}

/// `[a, α] = aα − αa` for a constant matrix `a`.
pub(crate) fn commutator_left(a: &[C64], f: &LatticeField, r: usize) -> LatticeField {
    let mut out = f.zeros_like();
    for c in 0..f.components() {
        for s in 0..f.sites() {
            let x = f.at(c, s).to_vec();
            let dst = out.at_mut(c, s);
            crate::linalg::small::mul_acc(a, &x, C64::new(1.0, 0.0), dst, r);
            crate::linalg::small::mul_acc(&x, a, C64::new(-1.0, 0.0), dst, r);
        }
    }
    out
}

/// Near-kernel of `Δ_∂̄` on `End`-valued `(0,2)`-forms.
pub(crate) fn kernel_02<R: Rng>(op0: &DolbeaultOp, config: &SliceConfig, rng: &mut R) -> Result<Vec<LatticeField>, SliceError> {
    Ok(certified_near_kernel(op0, LaplacianKind::Dbar, Bidegree::ZERO_TWO, "harmonic (0,2)", config, rng)?.0)
}
