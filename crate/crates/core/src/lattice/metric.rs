//! Kähler metrics `ω_ε = ω₀ + ε` on the torus and the contraction `Λ`.
//!
//! A metric is stored through its Hermitian coefficients `g_{pq̄}` with
//! `ω = (i/2) Σ g_{pq̄} dz_p ∧ dz̄_q`, so that `ω₀` has `g = diag(t₁, t₂)` and
//! the volume form `ω²/2` has density `det g`.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::{Bidegree, LatticeError, LatticeField, TorusGrid, Valued};

/// An exact term `i∂∂̄φ` with `φ = a cos 2π(k·x + l·y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactMode {
    pub amplitude: f64,
    /// Frequencies along `x₁, x₂`.
    pub kx: [i64; 2],
    /// Frequencies along `y₁, y₂`.
    pub ky: [i64; 2],
}

/// A closed perturbation `ε`: a moduli shift of the class plus exact terms.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricPerturbation {
    pub moduli: [f64; 2],
    #[serde(default)]
    pub exact: Vec<ExactMode>,
}

impl MetricPerturbation {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn moduli(dt1: f64, dt2: f64) -> Self {
        Self { moduli: [dt1, dt2], exact: Vec::new() }
    }

    pub fn is_zero(&self) -> bool {
        self.moduli == [0.0, 0.0] && self.exact.iter().all(|m| m.amplitude == 0.0)
    }

    /// `‖[ε]‖`: Euclidean norm of the class shift.
    pub fn class_norm(&self) -> f64 {
        self.moduli[0].hypot(self.moduli[1])
    }

    /// `δg_{pq̄}` at a point with coordinates `x`, `y` in `[0,1)`.
    fn delta_g(&self, x: [f64; 2], y: [f64; 2]) -> [C64; 4] {
        let mut d = [C64::new(0.0, 0.0); 4];
        d[0] += self.moduli[0];
        d[3] += self.moduli[1];
        for m in &self.exact {
            let phase = 2.0 * PI * (m.kx[0] as f64 * x[0] + m.kx[1] as f64 * x[1] + m.ky[0] as f64 * y[0] + m.ky[1] as f64 * y[1]);
            let c = m.amplitude * phase.cos();
            for p in 0..2 {
                for q in 0..2 {
                    let zp = C64::new(m.kx[p] as f64, -(m.ky[p] as f64));
                    let zq = C64::new(m.kx[q] as f64, m.ky[q] as f64);
                    d[2 * p + q] += -2.0 * PI * PI * zp * zq * c;
                }
            }
        }
        d
    }

    /// `‖ε‖_{C⁰}`: largest Frobenius norm of `δg` over the grid.
    pub fn c0_norm(&self, grid: &TorusGrid) -> f64 {
        if self.exact.is_empty() {
            return self.class_norm();
        }
        let nf = grid.n as f64;
        (0..grid.sites())
            .map(|s| {
                let c = grid.coords(s);
                let d = self.delta_g([c[0] as f64 / nf, c[2] as f64 / nf], [c[1] as f64 / nf, c[3] as f64 / nf]);
                d.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            moduli: [self.moduli[0] * s, self.moduli[1] * s],
            exact: self.exact.iter().map(|m| ExactMode { amplitude: m.amplitude * s, ..*m }).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct SiteMetric {
    /// `g⁻¹` row-major.
    inv: [C64; 4],
    det: f64,
}

/// A Kähler metric sampled on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Metric {
    n: usize,
    /// Class coordinates `(t₁, t₂)` of `[ω]`.
    class: [f64; 2],
    sites: Vec<SiteMetric>,
    constant: bool,
}

impl Metric {
    /// `ω₀ + ε` on the grid's base metric.
    pub fn new(grid: &TorusGrid, eps: &MetricPerturbation) -> Result<Self, LatticeError> {
        let half = (grid.n as i64 - 1) / 2;
        for m in &eps.exact {
            for f in m.kx.iter().chain(m.ky.iter()) {
                if f.abs() > half {
                    return Err(LatticeError::UnresolvedMode(*f, grid.n));
                }
            }
        }
        let class = [grid.t[0] + eps.moduli[0], grid.t[1] + eps.moduli[1]];
        let constant = eps.exact.iter().all(|m| m.amplitude == 0.0);
        let nf = grid.n as f64;
        let count = if constant { 1 } else { grid.sites() };
        let mut sites = Vec::with_capacity(count);
        for s in 0..count {
            let c = grid.coords(s);
            let d = eps.delta_g([c[0] as f64 / nf, c[2] as f64 / nf], [c[1] as f64 / nf, c[3] as f64 / nf]);
            let g = [C64::new(grid.t[0], 0.0) + d[0], d[1], d[2], C64::new(grid.t[1], 0.0) + d[3]];
            let det = (g[0] * g[3] - g[1] * g[2]).re;
            if !(g[0].re > 0.0 && det > 0.0) {
                return Err(LatticeError::MetricNotPositive(s));
            }
            let inv = [g[3] / det, -g[1] / det, -g[2] / det, g[0] / det];
            sites.push(SiteMetric { inv, det });
        }
        Ok(Self { n: grid.n, class, sites, constant })
    }

    /// The flat metric `diag(t₁, t₂)` of the grid.
    pub fn flat(grid: &TorusGrid) -> Self {
        Self::new(grid, &MetricPerturbation::zero()).expect("flat metric is positive")
    }

    pub fn class(&self) -> [f64; 2] {
        self.class
    }

    pub fn is_constant(&self) -> bool {
        self.constant
    }

    fn site(&self, s: usize) -> &SiteMetric {
        if self.constant {
            &self.sites[0]
        } else {
            &self.sites[s]
        }
    }

    /// `(g⁻¹)_{ab}` at a site.
    pub fn inverse_at(&self, s: usize) -> [C64; 4] {
        self.site(s).inv
    }

    /// Volume carried by a site: `det g / N⁴`.
    pub fn site_volume(&self, s: usize) -> f64 {
        self.site(s).det / (self.n.pow(4) as f64)
    }

    /// `∫ Vol`.
    pub fn total_volume(&self) -> f64 {
        let sites = self.n.pow(4);
        if self.constant {
            self.sites[0].det
        } else {
            (0..sites).map(|s| self.site_volume(s)).sum()
        }
    }

    /// `Λ α` for an `End`- or `E`-valued `(1,1)`-form, defined by
    /// `(Λα) Vol = α ∧ ω`; in coordinates `Λα = −2i Σ (g⁻¹)_{qp} α_{pq̄}`.
    pub fn contract(&self, alpha: &LatticeField) -> Result<LatticeField, LatticeError> {
        let b = alpha.bidegree();
        if b != Bidegree::ONE_ONE {
            return Err(LatticeError::Unsupported { op: "contract", p: b.p, q: b.q, valued: alpha.valued() });
        }
        let mut out = alpha.zeros_with(Bidegree::SECTION);
        let per = alpha.per_site();
        for s in 0..alpha.sites() {
            let inv = self.inverse_at(s);
            for p in 0..2 {
                for q in 0..2 {
                    let coef = C64::new(0.0, -2.0) * inv[2 * q + p];
                    let src = alpha.at(2 * p + q, s);
                    let dst = &mut out.comp_mut(0)[s * per..(s + 1) * per];
                    for (d, v) in dst.iter_mut().zip(src.iter()) {
                        *d += coef * v;
                    }
                }
            }
        }
        Ok(out)
    }

    /// `Re ∫ tr(a b†) Vol` for `End`-valued sections, or `Re ∫ ⟨a, b⟩ Vol`
    /// for vector-valued ones.
    pub fn section_inner(&self, a: &LatticeField, b: &LatticeField) -> f64 {
        debug_assert!(a.same_shape(b) && a.bidegree() == Bidegree::SECTION);
        let per = a.per_site();
        let mut acc = 0.0;
        for s in 0..a.sites() {
            let w = self.site_volume(s);
            let mut part = 0.0;
            for (x, y) in a.comp(0)[s * per..(s + 1) * per].iter().zip(b.comp(0)[s * per..(s + 1) * per].iter()) {
                part += (x * y.conj()).re;
            }
            acc += w * part;
        }
        acc
    }

    pub fn section_norm(&self, a: &LatticeField) -> f64 {
        self.section_inner(a, a).max(0.0).sqrt()
    }

    /// `Re ∫ (α | β) Vol` for `(0,1)`-forms with
    /// `(α|β) = 2 Σ (g⁻¹)_{pq} tr(α_p β_q†)`.
    pub fn form01_inner(&self, a: &LatticeField, b: &LatticeField) -> f64 {
        debug_assert!(a.same_shape(b) && a.bidegree() == Bidegree::ZERO_ONE);
        let per = a.per_site();
        let mut acc = 0.0;
        for s in 0..a.sites() {
            let inv = self.inverse_at(s);
            let w = self.site_volume(s);
            let mut part = C64::new(0.0, 0.0);
            for p in 0..2 {
                for q in 0..2 {
                    let ap = &a.comp(p)[s * per..(s + 1) * per];
                    let bq = &b.comp(q)[s * per..(s + 1) * per];
                    let mut t = C64::new(0.0, 0.0);
                    for (x, y) in ap.iter().zip(bq.iter()) {
                        t += x * y.conj();
                    }
                    part += inv[2 * p + q] * t;
                }
            }
            acc += 2.0 * w * part.re;
        }
        acc
    }

    /// `Ω^D(α, β) = Re ∫ tr(α ∧ β†) ∧ ω` for `End`-valued `(0,1)`-forms.
    pub fn omega_d(&self, a: &LatticeField, b: &LatticeField) -> f64 {
        debug_assert!(a.same_shape(b) && a.bidegree() == Bidegree::ZERO_ONE && a.valued() == Valued::End);
        let per = a.per_site();
        let r = a.rank();
        let mut acc = 0.0;
        for s in 0..a.sites() {
            let inv = self.inverse_at(s);
            let w = self.site_volume(s);
            let mut part = C64::new(0.0, 0.0);
            for p in 0..2 {
                for q in 0..2 {
                    // tr(α_p β_q†) = Σ_ij α_p[i][j] conj(β_q[i][j]).
                    let ap = &a.comp(p)[s * per..(s + 1) * per];
                    let bq = &b.comp(q)[s * per..(s + 1) * per];
                    let mut t = C64::new(0.0, 0.0);
                    for i in 0..r * r {
                        t += ap[i] * bq[i].conj();
                    }
                    // dz̄_p ∧ dz_q ∧ ω = 2i (g⁻¹)_{pq} Vol.
                    part += C64::new(0.0, 2.0) * inv[2 * p + q] * t;
                }
            }
            acc += w * part.re;
        }
        acc
    }
}
