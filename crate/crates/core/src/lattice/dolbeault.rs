//! Dolbeault operators `∂̄ = ∂̄₀ + γ`, their Chern connections, curvature,
//! Laplacians and the Kähler identities.
//!
//! With `L_q = ∂̄_q + γ_q` and `K_p = ∂_p − γ_p†` (acting by commutator on
//! `End(E)` and by multiplication on `E`), the frame operators satisfy
//! `L_q† = −∂_q + γ_q†` and `K_p† = −∂̄_p − γ_p` in the flat site sum. Form
//! operators and their adjoints are assembled from these with the metric
//! weights `|dz̄_p|² = 2/t_p`, so every adjoint identity holds exactly.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::links::GaugeLinks;
use super::separable::{PlaneCache, SeparableKind, SeparableLaplacian};
use super::spectral::{Direction, Spectral};
use super::{einstein_constant, Bidegree, BundleSpec, LatticeError, LatticeField, Metric, TorusGrid, Valued};
use crate::linalg::{self, small, Weights};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Immutable data shared by all operators on one grid and bundle.
#[derive(Debug)]
pub struct LatticeContext {
    pub grid: TorusGrid,
    pub bundle: BundleSpec,
    pub links: GaugeLinks,
    spectral: Spectral,
    planes: PlaneCache,
}

impl LatticeContext {
    pub fn new(grid: TorusGrid, bundle: BundleSpec) -> Arc<Self> {
        let links = GaugeLinks::new(grid.n, &bundle);
        Arc::new(Self { spectral: Spectral::new(grid.n), planes: PlaneCache::default(), grid, bundle, links })
    }

    pub fn rank(&self) -> usize {
        self.bundle.rank()
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    /// Exact spectral calculus of a base Laplacian on a field shape.
    pub fn separable(&self, kind: SeparableKind, bidegree: Bidegree, valued: Valued) -> Result<SeparableLaplacian, LatticeError> {
        SeparableLaplacian::new(&self.spectral, &self.planes, &self.grid, &self.bundle, kind, bidegree, valued)
    }

    /// Inner-product weights (component weight times site volume) for a
    /// field shape in the base metric.
    pub fn weights(&self, bidegree: Bidegree, valued: Valued) -> Weights {
        let per = match valued {
            Valued::End => self.rank() * self.rank(),
            Valued::Vector => self.rank(),
        };
        let block = self.grid.sites() * per;
        let w = (0..bidegree.components())
            .map(|c| self.grid.component_weight(bidegree, c) * self.grid.site_volume())
            .collect();
        Weights { block, w }
    }

    pub fn zeros(&self, bidegree: Bidegree, valued: Valued) -> LatticeField {
        LatticeField::zeros(self.grid.n, self.rank(), bidegree, valued)
    }

    /// `⟨a, b⟩` in the base metric (real part of the Hermitian product).
    pub fn inner(&self, a: &LatticeField, b: &LatticeField) -> f64 {
        self.weights(a.bidegree(), a.valued()).dot(b.data(), a.data()).re
    }

    /// Hermitian product `⟨a, b⟩`, linear in `a`.
    pub fn hermitian(&self, a: &LatticeField, b: &LatticeField) -> C64 {
        self.weights(a.bidegree(), a.valued()).dot(b.data(), a.data())
    }

    pub fn norm(&self, a: &LatticeField) -> f64 {
        self.inner(a, a).max(0.0).sqrt()
    }
}

/// Frame operators from which all form operators are built.
#[derive(Clone, Copy, Debug)]
enum Prim {
    L(usize),
    LAdj(usize),
    K(usize),
    KAdj(usize),
}

/// Which Laplacian to apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LaplacianKind {
    Del,
    Dbar,
    Nabla,
}

/// Curvature of the Chern connection, split by type. The `(2,0)` part is
/// minus the adjoint of the `(0,2)` part.
#[derive(Clone, Debug)]
pub struct Curvature {
    /// Coefficients `c_{pq}` of `dz_p ∧ dz̄_q`.
    pub f11: LatticeField,
    /// Coefficient of `dz̄₁ ∧ dz̄₂`; the integrability residual of `∂̄`.
    pub f02: LatticeField,
}

impl Curvature {
    /// Real components `F_{ab}` (`a < b` over `x₁, y₁, x₂, y₂`) at one site,
    /// as `End` blocks, with `F = Σ_{a<b} F_{ab} da ∧ db`.
    pub fn real_components(&self, site: usize) -> Vec<((usize, usize), Vec<C64>)> {
        let per = self.f11.per_site();
        let r = self.f11.rank();
        // dz_p = dx_p + i dy_p; real axes: x_p = 2p, y_p = 2p + 1.
        let mut acc: std::collections::BTreeMap<(usize, usize), Vec<C64>> = std::collections::BTreeMap::new();
        let mut add = |a: usize, b: usize, coef: C64, m: &[C64]| {
            if a == b {
                return;
            }
            let (lo, hi, s) = if a < b { (a, b, coef) } else { (b, a, -coef) };
            let e = acc.entry((lo, hi)).or_insert_with(|| vec![ZERO; per]);
            for (x, y) in e.iter_mut().zip(m.iter()) {
                *x += s * y;
            }
        };
        // dz_p ∧ dz̄_q = (dx_p + i dy_p) ∧ (dx_q − i dy_q).
        for p in 0..2 {
            for q in 0..2 {
                let c = self.f11.at(2 * p + q, site);
                add(2 * p, 2 * q, ONE, c);
                add(2 * p, 2 * q + 1, -I, c);
                add(2 * p + 1, 2 * q, I, c);
                add(2 * p + 1, 2 * q + 1, ONE, c);
            }
        }
        // w dz̄₁∧dz̄₂ − w† dz₁∧dz₂.
        let w = self.f02.at(0, site);
        let wa = small::adjoint(w, r);
        let wneg: Vec<C64> = wa.iter().map(|v| -v).collect();
        for (coefs, m) in [([ONE, -I], w), ([ONE, I], &wneg[..])] {
            let (s1, s2) = (coefs[0], coefs[1]);
            add(0, 2, s1 * s1, m);
            add(0, 3, s1 * s2, m);
            add(1, 2, s2 * s1, m);
            add(1, 3, s2 * s2, m);
        }
        acc.into_iter().collect()
    }
}

/// Kähler identity residuals (relative).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KahlerResiduals {
    /// `‖Λ∂a − i∂̄*a‖ / ‖a‖` on `(0,1)`-forms.
    pub lambda_del: f64,
    /// `‖Δ_∂ s − iΛ∂̄∂ s‖ / ‖s‖` on sections.
    pub del_laplacian: f64,
    /// `‖(Δ_∂ − Δ_∂̄)s − (ΛiF)s‖ / ‖s‖` on sections.
    pub curvature: f64,
}

impl KahlerResiduals {
    pub fn max(&self) -> f64 {
        self.lambda_del.max(self.del_laplacian).max(self.curvature)
    }
}

/// `∂̄₀ + γ` on a fixed grid and bundle.
#[derive(Clone, Debug)]
pub struct DolbeaultOp {
    ctx: Arc<LatticeContext>,
    gamma: LatticeField,
    gamma_zero: bool,
}

impl DolbeaultOp {
    /// The split base operator `∂̄₀`.
    pub fn base(ctx: Arc<LatticeContext>) -> Self {
        let gamma = ctx.zeros(Bidegree::ZERO_ONE, Valued::End);
        Self { ctx, gamma, gamma_zero: true }
    }

    pub fn with_gamma(ctx: Arc<LatticeContext>, gamma: LatticeField) -> Result<Self, LatticeError> {
        let expect = ctx.zeros(Bidegree::ZERO_ONE, Valued::End);
        if !gamma.same_shape(&expect) {
            return Err(LatticeError::Shape { expected: expect.data().len(), found: gamma.data().len() });
        }
        let gamma_zero = gamma.data().iter().all(|v| *v == ZERO);
        Ok(Self { ctx, gamma, gamma_zero })
    }

    pub fn ctx(&self) -> &Arc<LatticeContext> {
        &self.ctx
    }
    pub fn grid(&self) -> &TorusGrid {
        &self.ctx.grid
    }
    pub fn bundle(&self) -> &BundleSpec {
        &self.ctx.bundle
    }
    pub fn gamma(&self) -> &LatticeField {
        &self.gamma
    }
    pub fn is_base(&self) -> bool {
        self.gamma_zero
    }

    // ---- primitive derivatives -------------------------------------------

    /// `dst += coef · D src` for the covariant derivative along one real axis
    /// of plane `p`, applied to one component.
    fn add_deriv(&self, p: usize, dir: Direction, valued: Valued, src: &[C64], coef: C64, dst: &mut [C64]) {
        let n = self.ctx.grid.n;
        let sp = &self.ctx.spectral;
        let r = self.ctx.rank();
        let per = match valued {
            Valued::End => r * r,
            Valued::Vector => r,
        };
        let fluxes: Vec<i64> = (0..per).map(|e| self.ctx.bundle.entry_flux(valued, e, p)).collect();
        let axis = 2 * p + usize::from(dir == Direction::Y);
        let stride = n.pow(3 - axis as u32);
        let partner_stride = match dir {
            Direction::X => n.pow(3 - (axis as u32 + 1)),
            Direction::Y => n.pow(3 - (axis as u32 - 1)),
        };
        let chunk_sites = n * n;
        dst.par_chunks_mut(chunk_sites * per).enumerate().for_each(|(ci, out)| {
            let mut line = vec![ZERO; n];
            let mut res = vec![ZERO; n];
            for ls in 0..chunk_sites {
                let s = ci * chunk_sites + ls;
                let j = (s / stride) % n;
                let partner = (s / partner_stride) % n;
                let s0 = s - j * stride;
                for e in 0..per {
                    for (l, v) in line.iter_mut().enumerate() {
                        *v = src[(s0 + l * stride) * per + e];
                    }
                    // Only the output at position j is needed from this line.
                    res[j] = ZERO;
                    let m = fluxes[e];
                    out[ls * per + e] += coef * line_value(sp, dir, m, partner, &line, j, &mut res);
                }
            }
        });
    }

    /// `dst += coef · g · src` with `g = γ_q` or `γ_q†`; commutator on `End`.
    fn add_mul(&self, q: usize, adjoint: bool, valued: Valued, src: &[C64], coef: C64, dst: &mut [C64]) {
        if self.gamma_zero {
            return;
        }
        let r = self.ctx.rank();
        let rr = r * r;
        let g = self.gamma.comp(q);
        match valued {
            Valued::End => {
                dst.par_chunks_mut(rr).enumerate().for_each(|(s, out)| {
                    let gs = &g[s * rr..(s + 1) * rr];
                    let gm = if adjoint { small::adjoint(gs, r) } else { gs.to_vec() };
                    let x = &src[s * rr..(s + 1) * rr];
                    small::mul_acc(&gm, x, coef, out, r);
                    small::mul_acc(x, &gm, -coef, out, r);
                });
            }
            Valued::Vector => {
                dst.par_chunks_mut(r).enumerate().for_each(|(s, out)| {
                    let gs = &g[s * rr..(s + 1) * rr];
                    let x = &src[s * r..(s + 1) * r];
                    for i in 0..r {
                        let mut acc = ZERO;
                        for k in 0..r {
                            let gik = if adjoint { gs[k * r + i].conj() } else { gs[i * r + k] };
                            acc += gik * x[k];
                        }
                        out[i] += coef * acc;
                    }
                });
            }
        }
    }

    fn add_dbar0(&self, q: usize, valued: Valued, src: &[C64], coef: C64, dst: &mut [C64]) {
        self.add_deriv(q, Direction::X, valued, src, coef * 0.5, dst);
        self.add_deriv(q, Direction::Y, valued, src, coef * I * 0.5, dst);
    }

    fn add_del0(&self, p: usize, valued: Valued, src: &[C64], coef: C64, dst: &mut [C64]) {
        self.add_deriv(p, Direction::X, valued, src, coef * 0.5, dst);
        self.add_deriv(p, Direction::Y, valued, src, -coef * I * 0.5, dst);
    }

    fn add_prim(&self, prim: Prim, valued: Valued, src: &[C64], coef: C64, dst: &mut [C64]) {
        match prim {
            Prim::L(q) => {
                self.add_dbar0(q, valued, src, coef, dst);
                self.add_mul(q, false, valued, src, coef, dst);
            }
            Prim::LAdj(q) => {
                self.add_del0(q, valued, src, -coef, dst);
                self.add_mul(q, true, valued, src, coef, dst);
            }
            Prim::K(p) => {
                self.add_del0(p, valued, src, coef, dst);
                self.add_mul(p, true, valued, src, -coef, dst);
            }
            Prim::KAdj(p) => {
                self.add_dbar0(p, valued, src, -coef, dst);
                self.add_mul(p, false, valued, src, -coef, dst);
            }
        }
    }

    fn apply_terms(&self, f: &LatticeField, out_b: Bidegree, terms: &[(usize, usize, Prim, C64)]) -> LatticeField {
        let mut out = f.zeros_with(out_b);
        for &(dc, sc, prim, coef) in terms {
            let src = f.comp(sc).to_vec();
            self.add_prim(prim, f.valued(), &src, coef, out.comp_mut(dc));
        }
        out
    }

    fn unsupported(op: &'static str, f: &LatticeField) -> LatticeError {
        let b = f.bidegree();
        LatticeError::Unsupported { op, p: b.p, q: b.q, valued: f.valued() }
    }

    fn w(&self, p: usize) -> C64 {
        C64::new(2.0 / self.ctx.grid.t[p], 0.0)
    }

    // ---- form operators --------------------------------------------------

    /// `∂̄` on sections, `(0,1)`- and `(1,0)`-forms.
    pub fn dbar(&self, f: &LatticeField) -> Result<LatticeField, LatticeError> {
        use Prim::*;
        let b = f.bidegree();
        Ok(match (b.p, b.q) {
            (0, 0) => self.apply_terms(f, Bidegree::ZERO_ONE, &[(0, 0, L(0), ONE), (1, 0, L(1), ONE)]),
            (0, 1) => self.apply_terms(f, Bidegree::ZERO_TWO, &[(0, 1, L(0), ONE), (0, 0, L(1), -ONE)]),
            (1, 0) => self.apply_terms(
                f,
                Bidegree::ONE_ONE,
                &[(0, 0, L(0), -ONE), (1, 0, L(1), -ONE), (2, 1, L(0), -ONE), (3, 1, L(1), -ONE)],
            ),
            _ => return Err(Self::unsupported("dbar", f)),
        })
    }

    /// Adjoint of [`DolbeaultOp::dbar`].
    pub fn dbar_adj(&self, f: &LatticeField) -> Result<LatticeField, LatticeError> {
        use Prim::*;
        let b = f.bidegree();
        let (w0, w1) = (self.w(0), self.w(1));
        Ok(match (b.p, b.q) {
            (0, 1) => self.apply_terms(f, Bidegree::SECTION, &[(0, 0, LAdj(0), w0), (0, 1, LAdj(1), w1)]),
            (0, 2) => self.apply_terms(f, Bidegree::ZERO_ONE, &[(1, 0, LAdj(0), w0), (0, 0, LAdj(1), -w1)]),
            (1, 1) => self.apply_terms(
                f,
                Bidegree::ONE_ZERO,
                &[(0, 0, LAdj(0), -w0), (0, 1, LAdj(1), -w1), (1, 2, LAdj(0), -w0), (1, 3, LAdj(1), -w1)],
            ),
            _ => return Err(Self::unsupported("dbar_adj", f)),
        })
    }

    /// `∂` (the `(1,0)` part of the Chern connection).
    pub fn del(&self, f: &LatticeField) -> Result<LatticeField, LatticeError> {
        use Prim::*;
        let b = f.bidegree();
        Ok(match (b.p, b.q) {
            (0, 0) => self.apply_terms(f, Bidegree::ONE_ZERO, &[(0, 0, K(0), ONE), (1, 0, K(1), ONE)]),
            (0, 1) => self.apply_terms(
                f,
                Bidegree::ONE_ONE,
                &[(0, 0, K(0), ONE), (1, 1, K(0), ONE), (2, 0, K(1), ONE), (3, 1, K(1), ONE)],
            ),
            (1, 0) => self.apply_terms(f, Bidegree::TWO_ZERO, &[(0, 1, K(0), ONE), (0, 0, K(1), -ONE)]),
            _ => return Err(Self::unsupported("del", f)),
        })
    }

    /// Adjoint of [`DolbeaultOp::del`].
    pub fn del_adj(&self, f: &LatticeField) -> Result<LatticeField, LatticeError> {
        use Prim::*;
        let b = f.bidegree();
        let (w0, w1) = (self.w(0), self.w(1));
        Ok(match (b.p, b.q) {
            (1, 0) => self.apply_terms(f, Bidegree::SECTION, &[(0, 0, KAdj(0), w0), (0, 1, KAdj(1), w1)]),
            (1, 1) => self.apply_terms(
                f,
                Bidegree::ZERO_ONE,
                &[(0, 0, KAdj(0), w0), (0, 2, KAdj(1), w1), (1, 1, KAdj(0), w0), (1, 3, KAdj(1), w1)],
            ),
            (2, 0) => self.apply_terms(f, Bidegree::ONE_ZERO, &[(1, 0, KAdj(0), w0), (0, 0, KAdj(1), -w1)]),
            _ => return Err(Self::unsupported("del_adj", f)),
        })
    }

    /// `Δ = D D* + D* D` for `D ∈ {∂, ∂̄}`; `Δ_∇ = Δ_∂ + Δ_∂̄` on sections.
    pub fn laplacian(&self, kind: LaplacianKind, f: &LatticeField) -> Result<LatticeField, LatticeError> {
        let b = f.bidegree();
        match kind {
            LaplacianKind::Dbar => match (b.p, b.q) {
                (0, 0) | (1, 0) => self.dbar_adj(&self.dbar(f)?),
                (0, 1) => {
                    let mut a = self.dbar_adj(&self.dbar(f)?)?;
                    a.axpy(ONE, &self.dbar(&self.dbar_adj(f)?)?);
                    Ok(a)
                }
                (0, 2) => self.dbar(&self.dbar_adj(f)?),
                _ => Err(Self::unsupported("laplacian(dbar)", f)),
            },
            LaplacianKind::Del => match (b.p, b.q) {
                (0, 0) | (0, 1) => self.del_adj(&self.del(f)?),
                (1, 0) => {
                    let mut a = self.del_adj(&self.del(f)?)?;
                    a.axpy(ONE, &self.del(&self.del_adj(f)?)?);
                    Ok(a)
                }
                (2, 0) => self.del(&self.del_adj(f)?),
                _ => Err(Self::unsupported("laplacian(del)", f)),
            },
            LaplacianKind::Nabla => {
                if b != Bidegree::SECTION {
                    return Err(Self::unsupported("laplacian(nabla)", f));
                }
                let mut a = self.laplacian(LaplacianKind::Del, f)?;
                a.axpy(ONE, &self.laplacian(LaplacianKind::Dbar, f)?);
                Ok(a)
            }
        }
    }

    /// Componentwise covariant Laplacian `Σ_p (2/t_p)(K_p†K_p + L_p†L_p)`.
    pub fn rough_laplacian(&self, f: &LatticeField) -> LatticeField {
        let mut out = f.zeros_like();
        for c in 0..f.components() {
            let src = f.comp(c).to_vec();
            for p in 0..2 {
                let w = self.w(p);
                let mut tmp = vec![ZERO; src.len()];
                self.add_prim(Prim::K(p), f.valued(), &src, ONE, &mut tmp);
                self.add_prim(Prim::KAdj(p), f.valued(), &tmp, w, out.comp_mut(c));
                let mut tmp = vec![ZERO; src.len()];
                self.add_prim(Prim::L(p), f.valued(), &src, ONE, &mut tmp);
                self.add_prim(Prim::LAdj(p), f.valued(), &tmp, w, out.comp_mut(c));
            }
        }
        out
    }

    // ---- curvature -------------------------------------------------------

    /// Curvature of the Chern connection of `(∂̄₀ + γ, h)`:
    /// `F = F₀ + ∇₀(γ − γ†) + (γ − γ†) ∧ (γ − γ†)`.
    pub fn chern_curvature(&self) -> Curvature {
        let ctx = &self.ctx;
        let r = ctx.rank();
        let rr = r * r;
        let mut f11 = ctx.zeros(Bidegree::ONE_ONE, Valued::End);
        let mut f02 = ctx.zeros(Bidegree::ZERO_TWO, Valued::End);
        // Base curvature from the plaquettes: c_pp = diag(B_p / 2).
        for s in 0..ctx.grid.sites() {
            let c = ctx.grid.coords(s);
            for p in 0..2 {
                let blk = f11.at_mut(3 * p, s);
                for k in 0..r {
                    let b = ctx.links.field_strength(k, p, c[2 * p], c[2 * p + 1]);
                    blk[k * r + k] += C64::new(0.5 * b, 0.0);
                }
            }
        }
        if self.gamma_zero {
            return Curvature { f11, f02 };
        }
        let alpha = &self.gamma;
        let alpha_adj = alpha.pointwise_adjoint();
        for p in 0..2 {
            for q in 0..2 {
                let dst = f11.comp_mut(2 * p + q);
                self.add_del0(p, Valued::End, alpha.comp(q), ONE, dst);
                self.add_dbar0(q, Valued::End, alpha_adj.comp(p), ONE, dst);
            }
        }
        for s in 0..ctx.grid.sites() {
            for p in 0..2 {
                for q in 0..2 {
                    let aq = alpha.at(q, s).to_vec();
                    let ap_adj = alpha_adj.at(p, s).to_vec();
                    let dst = f11.at_mut(2 * p + q, s);
                    small::mul_acc(&aq, &ap_adj, ONE, dst, r);
                    small::mul_acc(&ap_adj, &aq, -ONE, dst, r);
                }
            }
        }
        {
            let dst = f02.comp_mut(0);
            self.add_dbar0(0, Valued::End, alpha.comp(1), ONE, dst);
            self.add_dbar0(1, Valued::End, alpha.comp(0), -ONE, dst);
        }
        for s in 0..ctx.grid.sites() {
            let a1 = alpha.at(0, s).to_vec();
            let a2 = alpha.at(1, s).to_vec();
            let dst = &mut f02.comp_mut(0)[s * rr..(s + 1) * rr];
            small::mul_acc(&a1, &a2, ONE, dst, r);
            small::mul_acc(&a2, &a1, -ONE, dst, r);
        }
        Curvature { f11, f02 }
    }

    /// `Λ iF` for the given metric.
    pub fn lambda_i_f(&self, metric: &Metric) -> LatticeField {
        let mut l = metric.contract(&self.chern_curvature().f11).expect("curvature is a (1,1)-form");
        l.scale(I);
        l
    }

    /// `Λ iF − c Id` with the Einstein constant of the metric's class.
    pub fn hym_defect(&self, metric: &Metric) -> LatticeField {
        let mut x = self.lambda_i_f(metric);
        let c = einstein_constant(&self.ctx.bundle, metric.class());
        let r = self.ctx.rank();
        for s in 0..x.sites() {
            let blk = x.at_mut(0, s);
            for k in 0..r {
                blk[k * r + k] -= c;
            }
        }
        x
    }

    /// `‖Λ iF − c Id‖` in the discrete `L²` norm of the metric.
    pub fn hym_residual(&self, metric: &Metric) -> f64 {
        metric.section_norm(&self.hym_defect(metric))
    }

    /// Largest pointwise norm of the `(0,2)` curvature, `‖∂̄²‖`.
    pub fn integrability_residual(&self) -> f64 {
        let c = self.chern_curvature();
        let m = Metric::flat(&self.ctx.grid);
        let w = 4.0 / (self.ctx.grid.t[0] * self.ctx.grid.t[1]);
        let mut acc = 0.0;
        for s in 0..c.f02.sites() {
            acc += m.site_volume(s) * w * c.f02.at(0, s).iter().map(|v| v.norm_sqr()).sum::<f64>();
        }
        acc.sqrt()
    }

    // ---- gauge action ----------------------------------------------------

    /// `f · ∂̄ = f ∘ ∂̄ ∘ f⁻¹`, i.e. `γ' = f γ f⁻¹ + f ∂̄₀(f⁻¹)`.
    pub fn gauge_act(&self, f: &LatticeField) -> Result<Self, LatticeError> {
        let ctx = &self.ctx;
        let r = ctx.rank();
        let rr = r * r;
        if f.bidegree() != Bidegree::SECTION || f.valued() != Valued::End || f.n() != ctx.grid.n || f.rank() != r {
            return Err(Self::unsupported("gauge_act", f));
        }
        let mut finv = f.zeros_like();
        for s in 0..f.sites() {
            let inv = small::inverse(f.at(0, s), r).ok_or(LatticeError::SingularGauge(s))?;
            finv.at_mut(0, s).copy_from_slice(&inv);
        }
        let base = DolbeaultOp::base(ctx.clone());
        let dfinv = base.dbar(&finv)?;
        let mut gamma = ctx.zeros(Bidegree::ZERO_ONE, Valued::End);
        for q in 0..2 {
            for s in 0..f.sites() {
                let fs = f.at(0, s);
                let mut tmp = vec![ZERO; rr];
                small::mul_acc(fs, dfinv.at(q, s), ONE, &mut tmp, r);
                if !self.gamma_zero {
                    let fg = small::mul(fs, self.gamma.at(q, s), r);
                    small::mul_acc(&fg, finv.at(0, s), ONE, &mut tmp, r);
                }
                gamma.at_mut(q, s).copy_from_slice(&tmp);
            }
        }
        let op = Self::with_gamma(ctx.clone(), gamma)?;
        #[cfg(debug_assertions)]
        op.debug_check_equivariance(self, f);
        Ok(op)
    }

    /// For a constant unitary `f`, checks `F_{f·∂̄} = f F f*`.
    #[cfg(debug_assertions)]
    fn debug_check_equivariance(&self, before: &Self, f: &LatticeField) {
        let r = self.ctx.rank();
        let f0 = f.at(0, 0).to_vec();
        let constant = (0..f.sites()).all(|s| f.at(0, s).iter().zip(f0.iter()).all(|(a, b)| (a - b).norm() < 1e-14));
        let fa = small::adjoint(&f0, r);
        let prod = small::mul(&f0, &fa, r);
        let unitary = (0..r).all(|i| (0..r).all(|j| (prod[i * r + j] - if i == j { ONE } else { ZERO }).norm() < 1e-12));
        if !(constant && unitary) || self.ctx.grid.n > 9 {
            return;
        }
        let a = before.chern_curvature().f11;
        let b = self.chern_curvature().f11;
        let scale = a.max_abs().max(1.0);
        for c in 0..4 {
            for s in 0..a.sites() {
                let conj = small::mul(&small::mul(&f0, a.at(c, s), r), &fa, r);
                for (x, y) in conj.iter().zip(b.at(c, s).iter()) {
                    debug_assert!((x - y).norm() <= 1e-9 * scale, "curvature is not gauge equivariant");
                }
            }
        }
    }

    // ---- Kähler identities -----------------------------------------------

    /// Residuals of the three Kähler identities over random sample fields.
    /// With `smoothing = Some(τ)` the samples are `e^{−τ∇*∇}` applied to
    /// white noise, which suppresses grid-scale content.
    pub fn kahler_residuals<R: Rng>(&self, samples: usize, smoothing: Option<f64>, rng: &mut R) -> Result<KahlerResiduals, LatticeError> {
        let ctx = &self.ctx;
        let flat = Metric::flat(&ctx.grid);
        let lif = self.lambda_i_f(&flat);
        let mut out = KahlerResiduals::default();
        let smooth = |f: LatticeField, kind| -> Result<LatticeField, LatticeError> {
            match smoothing {
                None => Ok(f),
                Some(tau) => {
                    let sep = ctx.separable(kind, f.bidegree(), f.valued())?;
                    let d = sep.apply_function(f.data(), &|l| (-tau * l).exp());
                    LatticeField::from_vec(f.n(), f.rank(), f.bidegree(), f.valued(), d)
                }
            }
        };
        for _ in 0..samples {
            let a = LatticeField::random(ctx.grid.n, ctx.rank(), Bidegree::ZERO_ONE, Valued::End, rng);
            let a = smooth(a, SeparableKind::Rough)?;
            let an = ctx.norm(&a);
            if an > 0.0 {
                let lhs = metric_contract_flat(&flat, &self.del(&a)?);
                let mut rhs = self.dbar_adj(&a)?;
                rhs.scale(I);
                let mut diff = lhs;
                diff.axpy(-ONE, &rhs);
                out.lambda_del = out.lambda_del.max(ctx.norm(&diff) / an);
            }
            let s = LatticeField::random(ctx.grid.n, ctx.rank(), Bidegree::SECTION, Valued::End, rng);
            let s = smooth(s, SeparableKind::Rough)?;
            let sn = ctx.norm(&s);
            if sn == 0.0 {
                continue;
            }
            let ld = self.laplacian(LaplacianKind::Del, &s)?;
            let mut i_ldd = metric_contract_flat(&flat, &self.dbar(&self.del(&s)?)?);
            i_ldd.scale(I);
            let mut diff = ld.clone();
            diff.axpy(-ONE, &i_ldd);
            out.del_laplacian = out.del_laplacian.max(ctx.norm(&diff) / sn);
            let mut lhs = ld;
            lhs.axpy(-ONE, &self.laplacian(LaplacianKind::Dbar, &s)?);
            let r = ctx.rank();
            for site in 0..s.sites() {
                let l = lif.at(0, site).to_vec();
                let x = s.at(0, site).to_vec();
                let dst = lhs.at_mut(0, site);
                small::mul_acc(&l, &x, -ONE, dst, r);
                small::mul_acc(&x, &l, ONE, dst, r);
            }
            out.curvature = out.curvature.max(ctx.norm(&lhs) / sn);
        }
        Ok(out)
    }
}

fn metric_contract_flat(m: &Metric, f: &LatticeField) -> LatticeField {
    m.contract(f).expect("a (1,1)-form")
}

/// Value at position `j` of the covariant derivative of one line.
#[inline]
fn line_value(sp: &Spectral, dir: Direction, m: i64, partner: usize, line: &[C64], j: usize, _scratch: &mut [C64]) -> C64 {
    let n = line.len();
    let nf = n as f64;
    let two_pi = 2.0 * std::f64::consts::PI;
    match dir {
        Direction::X => {
            if m == 0 {
                let mut acc = ZERO;
                for (l, v) in line.iter().enumerate() {
                    acc += v * sp.s(j, l);
                }
                acc
            } else {
                let jy = partner;
                let mut acc = ZERO;
                for (l, v) in line.iter().enumerate() {
                    acc += sp.landau_phase(-m, l, jy) * v * sp.s(j, l);
                }
                sp.landau_phase(m, j, jy) * acc + C64::new(0.0, two_pi * m as f64 * jy as f64 / nf) * line[j]
            }
        }
        Direction::Y => {
            let mut acc = C64::new(0.0, -two_pi * m as f64 * partner as f64 / nf) * line[j];
            for (l, v) in line.iter().enumerate() {
                acc += v * sp.s(j, l);
            }
            acc
        }
    }
}

/// Result of [`green_solve`].
#[derive(Clone, Debug)]
pub struct GreenSolution {
    pub x: LatticeField,
    /// Norm of the kernel component removed from the right-hand side.
    pub projected: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Projects `f` off the span of an orthonormal `kernel` (base metric).
pub fn project_off(ctx: &LatticeContext, kernel: &[LatticeField], f: &mut LatticeField) -> f64 {
    let mut removed = f.zeros_like();
    for k in kernel {
        let c = ctx.hermitian(f, k);
        removed.axpy(c, k);
    }
    f.axpy(-ONE, &removed);
    ctx.norm(&removed)
}

/// Solves `Δ x = rhs_⊥` with `x ⊥ kernel` by preconditioned conjugate
/// gradients, where `rhs_⊥` is `rhs` projected off `kernel` (an
/// orthonormal basis of the numerical kernel). The preconditioner is the
/// exact inverse of the base Laplacian with its kernel floored.
pub fn green_solve(
    op: &DolbeaultOp,
    kind: LaplacianKind,
    rhs: &LatticeField,
    kernel: &[LatticeField],
    tol: f64,
) -> Result<GreenSolution, LatticeError> {
    let ctx = op.ctx().clone();
    let (b, v) = (rhs.bidegree(), rhs.valued());
    let sep_kind = match kind {
        LaplacianKind::Dbar => SeparableKind::Dbar,
        LaplacianKind::Del => SeparableKind::Del,
        LaplacianKind::Nabla => SeparableKind::Rough,
    };
    let sep = ctx.separable(sep_kind, b, v)?;
    let mut rhs_p = rhs.clone();
    let projected = project_off(&ctx, kernel, &mut rhs_p);
    let weights = ctx.weights(b, v);
    let shape = rhs.zeros_like();
    let wrap = |d: &[C64]| LatticeField::from_vec(shape.n(), shape.rank(), b, v, d.to_vec()).expect("shape");
    let apply = |x: &[C64]| -> Vec<C64> { op.laplacian(kind, &wrap(x)).expect("supported bidegree").into_data() };
    let cutoff = kernel_cutoff(&ctx);
    // Base modes below the cutoff are damped rather than removed: the
    // caller's kernel may be smaller than the base kernel.
    let precond = |x: &[C64]| -> Vec<C64> { sep.apply_function(x, &|l| 1.0 / l.max(cutoff)) };
    let project = |x: &mut [C64]| {
        let mut f = wrap(x);
        project_off(&ctx, kernel, &mut f);
        x.copy_from_slice(f.data());
    };
    let sol = linalg::cg(&apply, &precond, &project, &weights, rhs_p.data(), None, tol, 500)?;
    Ok(GreenSolution { x: wrap(&sol.x), projected, iterations: sol.iterations, residual: sol.residual })
}

/// Eigenvalue below which base Laplacian modes count as kernel in the
/// preconditioner.
pub fn kernel_cutoff(ctx: &LatticeContext) -> f64 {
    1e-3 * 2.0 / ctx.grid.t[0].max(ctx.grid.t[1])
}

/// Lowest eigenpairs of a Laplacian on one field shape.
#[derive(Clone, Debug)]
pub struct Modes {
    pub values: Vec<f64>,
    pub fields: Vec<LatticeField>,
    pub residuals: Vec<f64>,
}

/// Smallest `wanted` eigenpairs of `Δ` (`kind`) on fields of the given
/// shape, by LOBPCG preconditioned with the exact shifted inverse of the
/// base Laplacian. `block` extra vectors beyond `wanted` help resolve gaps.
#[allow(clippy::too_many_arguments)]
pub fn lowest_modes<R: Rng>(
    op: &DolbeaultOp,
    kind: LaplacianKind,
    bidegree: Bidegree,
    valued: Valued,
    wanted: usize,
    block: usize,
    tol: f64,
    rng: &mut R,
) -> Result<Modes, LatticeError> {
    let ctx = op.ctx().clone();
    let sep_kind = match kind {
        LaplacianKind::Dbar => SeparableKind::Dbar,
        LaplacianKind::Del => SeparableKind::Del,
        LaplacianKind::Nabla => SeparableKind::Rough,
    };
    let sep = ctx.separable(sep_kind, bidegree, valued)?;
    let shape = ctx.zeros(bidegree, valued);
    let wrap = |d: &[C64]| LatticeField::from_vec(shape.n(), shape.rank(), bidegree, valued, d.to_vec()).expect("shape");
    let apply = |x: &[C64]| -> Vec<C64> { op.laplacian(kind, &wrap(x)).expect("supported bidegree").into_data() };
    let shift = 0.1 * 2.0 / ctx.grid.t[0].max(ctx.grid.t[1]);
    let precond = |x: &[C64]| -> Vec<C64> { sep.apply_function(x, &|l| 1.0 / (l + shift)) };
    let weights = ctx.weights(bidegree, valued);
    // At γ = 0 the separable eigenvectors are exact and seed the block.
    let initial = if op.is_base() { sep.lowest_eigenvectors(wanted + block).1 } else { Vec::new() };
    let opts = linalg::LobpcgOptions { wanted, block: wanted + block, tol, max_iter: 300, initial };
    let pairs = linalg::lobpcg(&apply, &precond, &weights, &opts, rng)?;
    let fields = pairs.vectors.iter().take(wanted).map(|v| wrap(v)).collect();
    Ok(Modes {
        values: pairs.values.into_iter().take(wanted).collect(),
        fields,
        residuals: pairs.residuals.into_iter().take(wanted).collect(),
    })
}
