//! Flux line bundles on a flat complex 2-torus as lattice gauge fields.
//!
//! The torus is `ℂ²/(ℤ + iℤ)²` with Kähler form `ω = t₁ dx₁∧dy₁ + t₂ dx₂∧dy₂`
//! plus optional closed perturbations. Bundles are orthogonal sums of line
//! bundles with constant curvature, deformed by an `End(E)`-valued
//! `(0,1)`-form.

pub mod dolbeault;
pub mod field;
pub mod links;
pub mod metric;
pub mod separable;
pub mod spectral;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dolbeault::{
    green_solve, lowest_modes, project_off, Curvature, DolbeaultOp, GreenSolution, KahlerResiduals, LaplacianKind, LatticeContext, Modes,
};
pub use separable::{SeparableKind, SeparableLaplacian};
pub use field::{Bidegree, LatticeField, Valued};
pub use links::GaugeLinks;
pub use metric::{ExactMode, Metric, MetricPerturbation};

use crate::linalg::SolverError;

/// Errors of the lattice layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("grid size {0} must be odd and at least 5")]
    GridSize(usize),
    #[error("moduli must be positive, got ({0}, {1})")]
    Moduli(f64, f64),
    #[error("invalid bidegree ({p},{q})")]
    Bidegree { p: u8, q: u8 },
    #[error("field has {found} values, expected {expected}")]
    Shape { expected: usize, found: usize },
    #[error("operation `{op}` does not accept bidegree ({p},{q}) {valued:?} fields")]
    Unsupported { op: &'static str, p: u8, q: u8, valued: Valued },
    #[error("bundle specification: {0}")]
    Bundle(String),
    #[error("metric is not positive definite at site {0}")]
    MetricNotPositive(usize),
    #[error("exact metric mode with frequency {0} is not resolved on an N = {1} grid")]
    UnresolvedMode(i64, usize),
    #[error("gauge transformation is singular at site {0}")]
    SingularGauge(usize),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Grid size and moduli of the flat torus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusGrid {
    pub n: usize,
    pub t: [f64; 2],
}

impl TorusGrid {
    pub fn new(n: usize, t1: f64, t2: f64) -> Result<Self, LatticeError> {
        if n < 5 || n.is_multiple_of(2) {
            return Err(LatticeError::GridSize(n));
        }
        if !(t1 > 0.0 && t2 > 0.0 && t1.is_finite() && t2.is_finite()) {
            return Err(LatticeError::Moduli(t1, t2));
        }
        Ok(Self { n, t: [t1, t2] })
    }

    pub fn sites(&self) -> usize {
        self.n.pow(4)
    }

    /// `Vol(X) = t₁ t₂`.
    pub fn volume(&self) -> f64 {
        self.t[0] * self.t[1]
    }

    /// Volume carried by one site.
    pub fn site_volume(&self) -> f64 {
        self.volume() / self.sites() as f64
    }

    /// Pointwise norm weight of one frame component of a form of this
    /// bidegree (`|dz̄_p|² = 2/t_p`).
    pub fn component_weight(&self, b: Bidegree, comp: usize) -> f64 {
        let [t1, t2] = self.t;
        match (b.p, b.q) {
            (0, 0) => 1.0,
            (0, 1) | (1, 0) => 2.0 / self.t[comp],
            (1, 1) => 4.0 / (self.t[comp / 2] * self.t[comp % 2]),
            _ => 4.0 / (t1 * t2),
        }
    }

    /// Grid coordinates `(x₁, y₁, x₂, y₂)` of a site index.
    pub fn coords(&self, site: usize) -> [usize; 4] {
        let n = self.n;
        [site / (n * n * n), (site / (n * n)) % n, (site / n) % n, site % n]
    }
}

/// Orthogonal sum of flux line bundles with an extension pattern.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleSpec {
    /// `fluxes[k] = (m₁, m₂)`: first Chern numbers of line `k` on the two
    /// factor 2-cycles.
    pub fluxes: Vec<[i64; 2]>,
    /// `extensions[i][j]` (only `i < j` may be set) marks the blocks that
    /// carry extension data.
    pub extensions: Vec<Vec<bool>>,
}

impl BundleSpec {
    pub fn new(fluxes: Vec<[i64; 2]>, extensions: Vec<Vec<bool>>) -> Result<Self, LatticeError> {
        let r = fluxes.len();
        if r == 0 {
            return Err(LatticeError::Bundle("rank must be at least 1".into()));
        }
        let extensions = if extensions.is_empty() { vec![vec![false; r]; r] } else { extensions };
        if extensions.len() != r || extensions.iter().any(|row| row.len() != r) {
            return Err(LatticeError::Bundle(format!("extension mask must be {r}×{r}")));
        }
        for (i, row) in extensions.iter().enumerate() {
            for (j, &e) in row.iter().enumerate() {
                if e && j <= i {
                    return Err(LatticeError::Bundle(format!("extension mask entry ({i},{j}) is not strictly upper")));
                }
            }
        }
        Ok(Self { fluxes, extensions })
    }

    /// A split bundle without extension data.
    pub fn split(fluxes: Vec<[i64; 2]>) -> Result<Self, LatticeError> {
        Self::new(fluxes, Vec::new())
    }

    pub fn rank(&self) -> usize {
        self.fluxes.len()
    }

    /// Flux of a stored entry in plane `p`: `m_i − m_j` for `End` entry
    /// `(i, j)` and `m_i` for vector entry `i`.
    pub fn entry_flux(&self, valued: Valued, entry: usize, plane: usize) -> i64 {
        let r = self.rank();
        match valued {
            Valued::End => self.fluxes[entry / r][plane] - self.fluxes[entry % r][plane],
            Valued::Vector => self.fluxes[entry][plane],
        }
    }

    /// Pairing of `c₁(L_k)` with `[ω]`: `m₁ t₂ + m₂ t₁`.
    pub fn degree(&self, k: usize, t: [f64; 2]) -> f64 {
        self.fluxes[k][0] as f64 * t[1] + self.fluxes[k][1] as f64 * t[0]
    }
}

/// The Einstein constant `c = 2π Σ_k (m₁ᵏ t₂ + m₂ᵏ t₁) / (r t₁ t₂)`.
pub fn einstein_constant(bundle: &BundleSpec, t: [f64; 2]) -> f64 {
    let total: f64 = (0..bundle.rank()).map(|k| bundle.degree(k, t)).sum();
    2.0 * std::f64::consts::PI * total / (bundle.rank() as f64 * t[0] * t[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn einstein_constant_examples() {
        let t4x = BundleSpec::split(vec![[1, -1], [-1, 1]]).unwrap();
        assert!(einstein_constant(&t4x, [1.0, 1.0]).abs() < 1e-15);
        let line = BundleSpec::split(vec![[1, 0]]).unwrap();
        assert!((einstein_constant(&line, [1.0, 1.0]) - 2.0 * PI).abs() < 1e-14);
        let c1 = einstein_constant(&line, [1.3, 0.7]);
        let c2 = einstein_constant(&line, [2.6, 1.4]);
        assert!((c2 - c1 / 2.0).abs() < 1e-14);
    }

    #[test]
    fn grid_and_bundle_validation() {
        assert!(TorusGrid::new(8, 1.0, 1.0).is_err());
        assert!(TorusGrid::new(9, 0.0, 1.0).is_err());
        assert!(BundleSpec::new(vec![[0, 0], [0, 0]], vec![vec![false, false], vec![true, false]]).is_err());
        let b = BundleSpec::new(vec![[1, -1], [-1, 1]], vec![vec![false, true], vec![false, false]]).unwrap();
        assert_eq!(b.entry_flux(Valued::End, 1, 0), 2);
        assert_eq!(b.entry_flux(Valued::End, 2, 1), 2);
        assert_eq!(b.entry_flux(Valued::Vector, 1, 0), -1);
    }
}
