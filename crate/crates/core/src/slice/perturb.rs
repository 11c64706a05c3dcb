//! Kuranishi map, the perturbation `σ(ε, b)`, the moment map `ν_ε` and the
//! symplectic form `Ω_ε` on slice coordinates.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::{constant_section, hermitian_part, SliceContext, SliceError};
use crate::lattice::{
    green_solve, project_off, Bidegree, DolbeaultOp, LaplacianKind, LatticeField, Metric, MetricPerturbation, Valued,
};
use crate::linalg::{self, small};

const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Output of [`kuranishi_phi`].
#[derive(Clone, Debug)]
pub struct KuranishiPoint {
    /// `Φ(b)`, an `End`-valued `(0,1)`-form.
    pub alpha: LatticeField,
    pub iterations: usize,
    /// Norm of the last fixed-point increment.
    pub increment: f64,
}

/// `(α ∧ α)` as a `(0,2)`-form: `α₁α₂ − α₂α₁` on `dz̄₁ ∧ dz̄₂`.
pub fn wedge_square(alpha: &LatticeField) -> LatticeField {
    let r = alpha.rank();
    let mut out = alpha.zeros_with(Bidegree::ZERO_TWO);
    for s in 0..alpha.sites() {
        let a1 = alpha.at(0, s).to_vec();
        let a2 = alpha.at(1, s).to_vec();
        let dst = out.at_mut(0, s);
        small::mul_acc(&a1, &a2, ONE, dst, r);
        small::mul_acc(&a2, &a1, -ONE, dst, r);
    }
    out
}

/// `Φ(b)`: the solution of `α = v_b − ∂̄₀* G(α ∧ α)` by fixed-point
/// iteration from `α₀ = v_b`.
pub fn kuranishi_phi(slice: &SliceContext, b: &[C64]) -> Result<KuranishiPoint, SliceError> {
    slice.check_dim(b)?;
    let norm = SliceContext::coord_norm(b);
    let radius = slice.config().ball_radius;
    if norm > radius {
        return Err(SliceError::Radius { norm, radius });
    }
    let v = slice.expand(b)?;
    let op0 = slice.op0();
    let ctx = slice.lattice();
    let mut alpha = v.clone();
    let tol = slice.config().tol_kuranishi * norm.max(1e-300);
    let mut prev = f64::INFINITY;
    for it in 1..=200 {
        let w = wedge_square(&alpha);
        if w.max_abs() == 0.0 {
            return Ok(KuranishiPoint { alpha, iterations: it - 1, increment: 0.0 });
        }
        let g = green_solve(op0, LaplacianKind::Dbar, &w, slice.kernel02(), 1e-12)?;
        let mut next = v.clone();
        next.axpy(-ONE, &op0.dbar_adj(&g.x)?);
        let mut diff = next.clone();
        diff.axpy(-ONE, &alpha);
        let increment = ctx.norm(&diff);
        alpha = next;
        if increment <= tol {
            return Ok(KuranishiPoint { alpha, iterations: it, increment });
        }
        if it > 3 && increment > prev {
            return Err(SliceError::KuranishiDivergence { norm, increment });
        }
        prev = increment;
    }
    Err(SliceError::KuranishiDivergence { norm, increment: prev })
}

/// A solved point `∂̄_{ε,b} = e^{σ(ε,b)} · ∂̄_b` of the perturbed slice.
#[derive(Clone, Debug)]
pub struct PerturbedPoint {
    pub b: Vec<C64>,
    pub eps: MetricPerturbation,
    pub metric: Metric,
    /// `Φ(b)`.
    pub phi: LatticeField,
    /// `σ(ε, b)`: Hermitian, orthogonal to the kernel of `Δ₀`.
    pub s: LatticeField,
    /// `∂̄_{ε,b}`; its deformation is `Φ̃(ε, b)`.
    pub op: DolbeaultOp,
    /// `Λ_ε iF − c_ε Id` of `op` (Hermitian part).
    pub defect: LatticeField,
    /// Coordinates of `ν_ε(b)` in the basis of `𝔨`.
    pub nu: Vec<f64>,
    /// `‖ν_ε(b)‖_ε`.
    pub nu_norm: f64,
    /// `‖ν − Π_ε ν‖_ε`: the part of the moment map off `𝔨`.
    pub off_k_residual: f64,
    /// Final `‖Ψ‖`.
    pub psi_residual: f64,
    pub newton_iterations: usize,
    pub krylov_steps: usize,
}

/// Serializable summary of a [`PerturbedPoint`]; the field `σ` travels as
/// a binary snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbedRecord {
    pub b: Vec<[f64; 2]>,
    pub eps: MetricPerturbation,
    pub nu: Vec<f64>,
    pub nu_norm: f64,
    pub sigma_norm: f64,
    pub psi_residual: f64,
    pub newton_iterations: usize,
}

impl PerturbedPoint {
    /// `‖σ‖` in the base metric.
    pub fn sigma_norm(&self) -> f64 {
        self.op.ctx().norm(&self.s)
    }

    /// `‖Λ_ε iF − c_ε Id‖_ε` of `∂̄_{ε,b}`.
    pub fn hym_residual(&self) -> f64 {
        self.metric.section_norm(&self.defect)
    }

    /// `Φ̃(ε, b)`.
    pub fn phi_tilde(&self) -> &LatticeField {
        self.op.gamma()
    }

    /// `ν` as a constant `r×r` matrix.
    pub fn nu_matrix(&self, slice: &SliceContext) -> Vec<C64> {
        slice.algebra().element(&self.nu, slice.lattice().rank())
    }

    pub fn record(&self) -> PerturbedRecord {
        PerturbedRecord {
            b: self.b.iter().map(|c| [c.re, c.im]).collect(),
            eps: self.eps.clone(),
            nu: self.nu.clone(),
            nu_norm: self.nu_norm,
            sigma_norm: self.sigma_norm(),
            psi_residual: self.psi_residual,
            newton_iterations: self.newton_iterations,
        }
    }

    /// Binary snapshot of `σ`.
    pub fn sigma_snapshot(&self) -> Vec<u8> {
        self.s.to_snapshot_bytes()
    }
}

/// Pointwise `e^s` of a Hermitian section.
pub fn exp_hermitian(s: &LatticeField) -> LatticeField {
    let r = s.rank();
    let mut out = s.zeros_like();
    for site in 0..s.sites() {
        let e = small::hermitian_function(s.at(0, site), r, f64::exp);
        out.at_mut(0, site).copy_from_slice(&e);
    }
    out
}

/// `e^s · op`, with the identity shortcut at `s = 0`.
pub fn complex_gauge(op: &DolbeaultOp, s: &LatticeField) -> Result<DolbeaultOp, SliceError> {
    if s.max_abs() == 0.0 {
        return Ok(op.clone());
    }
    Ok(op.gauge_act(&exp_hermitian(s))?)
}

/// One evaluation of `Ψ(s) = Π_⊥(Λ_ε iF_{e^s·∂̄_b} − c_ε Id)`.
struct PsiEval {
    op: DolbeaultOp,
    defect: LatticeField,
    psi: LatticeField,
    norm: f64,
}

impl SliceContext {
    /// Projects a section off the kernel of `Δ₀` and takes its Hermitian
    /// part.
    pub(crate) fn clean_section(&self, s: &LatticeField) -> LatticeField {
        let mut h = hermitian_part(s);
        project_off(self.lattice(), self.section_kernel(), &mut h);
        h
    }

    fn psi_eval(&self, op_b: &DolbeaultOp, metric: &Metric, s: &LatticeField) -> Result<PsiEval, SliceError> {
        let op = complex_gauge(op_b, s)?;
        let defect = hermitian_part(&op.hym_defect(metric));
        let mut psi = defect.clone();
        project_off(self.lattice(), self.section_kernel(), &mut psi);
        let norm = self.lattice().norm(&psi);
        Ok(PsiEval { op, defect, psi, norm })
    }

    /// `Ψ(s)` for the operator `op_b` and metric: the projected HYM defect
    /// of `e^s · op_b`.
    pub fn psi(&self, op_b: &DolbeaultOp, metric: &Metric, s: &LatticeField) -> Result<LatticeField, SliceError> {
        Ok(self.psi_eval(op_b, metric, s)?.psi)
    }

    /// `Δ₀ h` on sections (the predicted linearization of `Ψ` at the
    /// graded point).
    pub fn base_section_laplacian(&self, h: &LatticeField) -> LatticeField {
        self.section_laplacian(h)
    }

    /// Newton–Krylov direction: GMRES on the complex-linear extension of
    /// the finite-difference Jacobian, preconditioned by `Δ₀⁺`.
    fn krylov_direction(&self, op_b: &DolbeaultOp, metric: &Metric, s: &LatticeField, psi: &LatticeField) -> Result<LatticeField, SliceError> {
        let ctx = self.lattice().clone();
        let shape = s.zeros_like();
        let wrap = |d: &[C64]| LatticeField::from_vec(shape.n(), shape.rank(), Bidegree::SECTION, Valued::End, d.to_vec()).expect("shape");
        let h = 1e-5;
        let jac_real = |dir: &LatticeField| -> LatticeField {
            let scale = dir.max_abs();
            if scale == 0.0 {
                return dir.zeros_like();
            }
            let mut plus = s.clone();
            plus.axpy(C64::new(h / scale, 0.0), dir);
            let mut minus = s.clone();
            minus.axpy(C64::new(-h / scale, 0.0), dir);
            let fp = self.psi(op_b, metric, &plus).expect("psi evaluation");
            let fm = self.psi(op_b, metric, &minus).expect("psi evaluation");
            let mut d = fp;
            d.axpy(-ONE, &fm);
            d.scale(C64::new(scale / (2.0 * h), 0.0));
            d
        };
        let apply = |z: &[C64]| -> Vec<C64> {
            let mut zf = wrap(z);
            project_off(&ctx, self.section_kernel(), &mut zf);
            let h1 = hermitian_part(&zf);
            let mut h2 = zf.scaled(-I);
            h2 = hermitian_part(&h2);
            let mut out = jac_real(&h1);
            out.axpy(I, &jac_real(&h2));
            project_off(&ctx, self.section_kernel(), &mut out);
            out.into_data()
        };
        let precond = |z: &[C64]| -> Vec<C64> {
            let mut g = self.section_green(&wrap(z));
            project_off(&ctx, self.section_kernel(), &mut g);
            g.into_data()
        };
        let rhs = psi.scaled(-ONE);
        let weights = ctx.weights(Bidegree::SECTION, Valued::End);
        let sol = linalg::gmres(&apply, &precond, &weights, rhs.data(), 1e-4, 40, 120)
            .or_else(|e| match e {
                linalg::SolverError::NoConvergence { .. } => Ok(linalg::LinearSolve { x: precond(rhs.data()), iterations: 0, residual: 1.0 }),
                other => Err(other),
            })
            .map_err(crate::lattice::LatticeError::from)?;
        Ok(self.clean_section(&wrap(&sol.x)))
    }

    /// Solves `Ψ(s) = 0` starting from `s0`.
    ///
    /// The fixed-point map `s ↦ s − Δ₀⁺ Ψ(s)` is accelerated by Anderson
    /// mixing over the last few iterates. A mixed step that fails to halve
    /// `‖Ψ‖` falls back to the plain step, and that in turn to a
    /// Newton–Krylov step with backtracking.
    fn newton(&self, op_b: &DolbeaultOp, metric: &Metric, s0: LatticeField) -> Result<(LatticeField, PsiEval, usize, usize), SliceError> {
        const DEPTH: usize = 4;
        let ctx = self.lattice().clone();
        let target = self.sigma_target();
        let mut s = self.clean_section(&s0);
        let mut cur = self.psi_eval(op_b, metric, &s)?;
        let mut krylov = 0usize;
        let mut prev: Option<(LatticeField, LatticeField)> = None;
        let mut hist: Vec<(LatticeField, LatticeField)> = Vec::new();
        for it in 0..80 {
            if cur.norm <= target {
                return Ok((s, cur, it, krylov));
            }
            let f = self.section_green(&cur.psi).scaled(-ONE);
            if let Some((ps, pf)) = prev.take() {
                let mut ds = s.clone();
                ds.axpy(-ONE, &ps);
                let mut df = f.clone();
                df.axpy(-ONE, &pf);
                hist.push((ds, df));
                if hist.len() > DEPTH {
                    hist.remove(0);
                }
            }
            let mut plain = s.clone();
            plain.axpy(ONE, &f);
            let plain = self.clean_section(&plain);
            let mixed = anderson_mix(&ctx, &plain, &f, &hist).map(|m| self.clean_section(&m));
            prev = Some((s.clone(), f));
            if let Some(m) = mixed {
                let next = self.psi_eval(op_b, metric, &m)?;
                if next.norm <= 0.5 * cur.norm {
                    s = m;
                    cur = next;
                    continue;
                }
            }
            let next = self.psi_eval(op_b, metric, &plain)?;
            if next.norm <= 0.5 * cur.norm {
                s = plain;
                cur = next;
                continue;
            }
            hist.clear();
            prev = None;
            krylov += 1;
            let dir = self.krylov_direction(op_b, metric, &s, &cur.psi)?;
            let mut step = 1.0;
            let mut accepted = false;
            while step > 1e-3 {
                let mut t = s.clone();
                t.axpy(C64::new(step, 0.0), &dir);
                let t = self.clean_section(&t);
                let e = self.psi_eval(op_b, metric, &t)?;
                if e.norm < cur.norm {
                    s = t;
                    cur = e;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                return Err(SliceError::Newton { residual: cur.norm, target });
            }
        }
        if cur.norm <= target {
            return Ok((s, cur, 80, krylov));
        }
        Err(SliceError::Newton { residual: cur.norm, target })
    }

    /// Coordinates of `Π_ε ν` and the off-`𝔨` residual for `ν = −iX`.
    pub(crate) fn project_moment(&self, metric: &Metric, defect: &LatticeField) -> (Vec<f64>, f64, f64) {
        let ctx = self.lattice();
        let nu_field = defect.scaled(-I);
        let fields: Vec<LatticeField> = self.algebra().matrices.iter().map(|m| constant_section(ctx, m)).collect();
        let k = fields.len();
        let gram = DMatrix::from_fn(k, k, |i, j| metric.section_inner(&fields[i], &fields[j]));
        let rhs = nalgebra::DVector::from_fn(k, |i, _| metric.section_inner(&nu_field, &fields[i]));
        let coords: Vec<f64> = if k == 0 {
            Vec::new()
        } else {
            let sol = gram.clone().lu().solve(&rhs).unwrap_or_else(|| nalgebra::DVector::zeros(k));
            sol.iter().copied().collect()
        };
        let mut rest = nu_field;
        for (c, f) in coords.iter().zip(fields.iter()) {
            rest.axpy(C64::new(-c, 0.0), f);
        }
        let norm_sq: f64 = (0..k).map(|i| (0..k).map(|j| coords[i] * gram[(i, j)] * coords[j]).sum::<f64>()).sum();
        (coords, norm_sq.max(0.0).sqrt(), metric.section_norm(&rest))
    }
}

/// Anderson update `s + f − Σ γ_k (Δs_k + Δf_k)` with `γ` minimizing
/// `‖f − Σ γ_k Δf_k‖`; `None` without history or for a singular system.
fn anderson_mix(ctx: &crate::lattice::LatticeContext, plain: &LatticeField, f: &LatticeField, hist: &[(LatticeField, LatticeField)]) -> Option<LatticeField> {
    let m = hist.len();
    if m == 0 {
        return None;
    }
    let gram = DMatrix::from_fn(m, m, |i, j| ctx.inner(&hist[i].1, &hist[j].1));
    let rhs = nalgebra::DVector::from_fn(m, |i, _| ctx.inner(&hist[i].1, f));
    let ridge = 1e-12 * (0..m).map(|i| gram[(i, i)]).fold(0.0, f64::max);
    let reg = gram + DMatrix::identity(m, m) * ridge;
    let gamma = reg.cholesky()?.solve(&rhs);
    let mut out = plain.clone();
    for (k, (ds, df)) in hist.iter().enumerate() {
        out.axpy(C64::new(-gamma[k], 0.0), ds);
        out.axpy(C64::new(-gamma[k], 0.0), df);
    }
    Some(out)
}

/// `σ(ε, b)` by Newton iteration on `Ψ`, optionally warm-started.
///
/// The quasi-Newton step uses the base Laplacian `Δ₀` (exact pseudo-inverse
/// through its spectral calculus); a step that fails to halve `‖Ψ‖` is
/// replaced by a Newton–Krylov step with finite-difference Jacobian
/// actions and a backtracking line search.
pub fn sigma_solve(
    slice: &SliceContext,
    eps: &MetricPerturbation,
    b: &[C64],
    warm: Option<&LatticeField>,
) -> Result<PerturbedPoint, SliceError> {
    let ctx = slice.lattice().clone();
    let radius = slice.neighborhood_radius();
    let norm = eps.c0_norm(&ctx.grid);
    if norm > radius * (1.0 + 1e-12) {
        return Err(SliceError::OutsideNeighborhood { norm, radius });
    }
    let metric = Metric::new(&ctx.grid, eps)?;
    let kp = kuranishi_phi(slice, b)?;
    let op_b = DolbeaultOp::with_gamma(ctx.clone(), kp.alpha.clone())?;
    let s0 = warm.cloned().unwrap_or_else(|| ctx.zeros(Bidegree::SECTION, Valued::End));
    let (s, eval, iterations, krylov) = slice.newton(&op_b, &metric, s0)?;
    let (nu, nu_norm, off) = slice.project_moment(&metric, &eval.defect);
    let tol = 10.0 * slice.sigma_target();
    if off > tol {
        return Err(SliceError::Consistency { residual: off, tol });
    }
    Ok(PerturbedPoint {
        b: b.to_vec(),
        eps: eps.clone(),
        metric,
        phi: kp.alpha,
        s,
        op: eval.op,
        defect: eval.defect,
        nu,
        nu_norm,
        off_k_residual: off,
        psi_residual: eval.norm,
        newton_iterations: iterations,
        krylov_steps: krylov,
    })
}

/// `ν_ε(b)` in `𝔨` coordinates.
pub fn moment_map(slice: &SliceContext, eps: &MetricPerturbation, b: &[C64]) -> Result<Vec<f64>, SliceError> {
    Ok(sigma_solve(slice, eps, b, None)?.nu)
}

/// Directional derivatives of `Φ̃(ε, ·)` and `ν_ε` at `b` along `v`.
#[derive(Clone, Debug)]
pub struct Directional {
    pub dphi: LatticeField,
    pub dnu: Vec<f64>,
}

impl SliceContext {
    /// Central differences with Richardson refinement at displacement
    /// `fd_step · B` in slice coordinates.
    pub fn directional(&self, base: &PerturbedPoint, v: &[C64]) -> Result<Directional, SliceError> {
        self.check_dim(v)?;
        let vn = SliceContext::coord_norm(v);
        if vn == 0.0 {
            return Ok(Directional { dphi: base.phi_tilde().zeros_like(), dnu: vec![0.0; base.nu.len()] });
        }
        let h = self.config().fd_step * self.config().ball_radius / vn;
        if !(h * vn > 1e-12) || !h.is_finite() {
            return Err(SliceError::StepUnderflow(h * vn));
        }
        let eval = |step: f64| -> Result<PerturbedPoint, SliceError> {
            let b: Vec<C64> = base.b.iter().zip(v.iter()).map(|(x, y)| x + y * step).collect();
            sigma_solve(self, &base.eps, &b, Some(&base.s))
        };
        let central = |h: f64| -> Result<(LatticeField, Vec<f64>), SliceError> {
            let p = eval(h)?;
            let m = eval(-h)?;
            let mut d = p.phi_tilde().clone();
            d.axpy(-ONE, m.phi_tilde());
            d.scale(C64::new(0.5 / h, 0.0));
            let dn = p.nu.iter().zip(m.nu.iter()).map(|(a, b)| (a - b) * 0.5 / h).collect();
            Ok((d, dn))
        };
        let (d1, n1) = central(h)?;
        let (d2, n2) = central(0.5 * h)?;
        let mut dphi = d2.scaled(C64::new(4.0 / 3.0, 0.0));
        dphi.axpy(C64::new(-1.0 / 3.0, 0.0), &d1);
        let dnu = n1.iter().zip(n2.iter()).map(|(a, b)| (4.0 * b - a) / 3.0).collect();
        Ok(Directional { dphi, dnu })
    }
}

/// `Ω_ε(v, w) = Ω^D_ε(dΦ̃ v, dΦ̃ w)` at `b`.
pub fn omega_form(slice: &SliceContext, eps: &MetricPerturbation, b: &[C64], v: &[C64], w: &[C64]) -> Result<f64, SliceError> {
    let base = sigma_solve(slice, eps, b, None)?;
    let dv = slice.directional(&base, v)?;
    let dw = slice.directional(&base, w)?;
    Ok(base.metric.omega_d(&dv.dphi, &dw.dphi))
}
