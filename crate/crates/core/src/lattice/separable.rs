//! Plane-separable structure of the base Laplacians.
//!
//! Without deformation every Laplacian used here is a sum
//! `w₁ A₁ ⊗ 1 + 1 ⊗ w₂ A₂` of operators acting on one complex plane each,
//! per frame component and matrix entry. The plane operators are
//! `P⁺ = −∂̄∂` and `P⁻ = −∂∂̄` for the entry's flux. Diagonalizing the
//! `N²×N²` plane matrices gives the exact spectrum of the base Laplacians and
//! exact shifted inverses, used as preconditioners and as independent
//! oracles.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use super::spectral::{Direction, Spectral};
use super::{Bidegree, BundleSpec, LatticeError, TorusGrid, Valued};
use crate::linalg::hermitian_eigen;

/// Which plane operator a factor uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PlaneKind {
    /// `−∂̄∂ = L L† = K† K`.
    Plus,
    /// `−∂∂̄ = L† L = K K†`.
    Minus,
    /// `P⁺ + P⁻ = −(D_x² + D_y²)/2`.
    Rough,
}

/// Eigen-decomposition of one plane operator.
#[derive(Debug)]
pub struct PlaneEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<C64>,
}

/// Cache of plane decompositions keyed by flux and kind.
#[derive(Debug, Default)]
pub struct PlaneCache {
    map: Mutex<HashMap<(i64, PlaneKind), Arc<PlaneEigen>>>,
}

fn dense(a: &[C64], n: usize) -> DMatrix<C64> {
    DMatrix::from_fn(n, n, |i, j| a[i * n + j])
}

impl PlaneCache {
    pub fn get(&self, spectral: &Spectral, m: i64, kind: PlaneKind) -> Arc<PlaneEigen> {
        if let Some(e) = self.map.lock().expect("plane cache lock").get(&(m, kind)) {
            return e.clone();
        }
        let n2 = spectral.n() * spectral.n();
        let dx = dense(&spectral.plane_matrix(Direction::X, m), n2);
        let dy = dense(&spectral.plane_matrix(Direction::Y, m), n2);
        let half = C64::new(0.5, 0.0);
        let i = C64::new(0.0, 1.0);
        let dbar = (&dx + &dy * i) * half;
        let del = (&dx - &dy * i) * half;
        let op = match kind {
            PlaneKind::Plus => -(&dbar * &del),
            PlaneKind::Minus => -(&del * &dbar),
            PlaneKind::Rough => -(&dbar * &del) - &del * &dbar,
        };
        let (values, vectors) = hermitian_eigen(&op);
        let e = Arc::new(PlaneEigen { values, vectors });
        self.map.lock().expect("plane cache lock").insert((m, kind), e.clone());
        e
    }
}

/// Which Laplacian the separable form describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SeparableKind {
    /// `Δ_∂̄ = ∂̄∂̄* + ∂̄*∂̄`.
    Dbar,
    /// `Δ_∂ = ∂∂* + ∂*∂`.
    Del,
    /// `∇*∇` on sections, applied componentwise to forms.
    Rough,
}

/// Plane kinds of the two factors for one frame component.
fn factor_kinds(kind: SeparableKind, b: Bidegree, comp: usize) -> Result<[PlaneKind; 2], LatticeError> {
    use PlaneKind::*;
    Ok(match (kind, b.p, b.q) {
        (SeparableKind::Rough, _, _) => [Rough, Rough],
        (SeparableKind::Dbar, 0, 0) => [Minus, Minus],
        (SeparableKind::Del, 0, 0) => [Plus, Plus],
        (SeparableKind::Dbar, 0, 1) => {
            if comp == 0 {
                [Plus, Minus]
            } else {
                [Minus, Plus]
            }
        }
        (SeparableKind::Dbar, 0, 2) => [Plus, Plus],
        (SeparableKind::Del, 1, 0) => {
            if comp == 0 {
                [Minus, Plus]
            } else {
                [Plus, Minus]
            }
        }
        (SeparableKind::Del, 2, 0) => [Minus, Minus],
        _ => return Err(LatticeError::Unsupported { op: "separable laplacian", p: b.p, q: b.q, valued: Valued::End }),
    })
}

/// Exact spectral calculus for a base Laplacian on one field shape.
#[derive(Debug, Clone)]
pub struct SeparableLaplacian {
    n: usize,
    comps: usize,
    per: usize,
    /// Per component and entry: the two plane factors.
    factors: Vec<[Arc<PlaneEigen>; 2]>,
    weights: [f64; 2],
}

impl SeparableLaplacian {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        spectral: &Spectral,
        cache: &PlaneCache,
        grid: &TorusGrid,
        bundle: &BundleSpec,
        kind: SeparableKind,
        bidegree: Bidegree,
        valued: Valued,
    ) -> Result<Self, LatticeError> {
        let r = bundle.rank();
        let per = match valued {
            Valued::End => r * r,
            Valued::Vector => r,
        };
        let comps = bidegree.components();
        let mut factors = Vec::with_capacity(comps * per);
        for c in 0..comps {
            let kinds = factor_kinds(kind, bidegree, c)?;
            for e in 0..per {
                let f0 = cache.get(spectral, bundle.entry_flux(valued, e, 0), kinds[0]);
                let f1 = cache.get(spectral, bundle.entry_flux(valued, e, 1), kinds[1]);
                factors.push([f0, f1]);
            }
        }
        Ok(Self { n: grid.n, comps, per, factors, weights: [2.0 / grid.t[0], 2.0 / grid.t[1]] })
    }

    /// All eigenvalues (unsorted), `comps · per · N⁴` of them.
    pub fn spectrum(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.factors.len() * self.n.pow(4));
        for [a, b] in &self.factors {
            for la in &a.values {
                for lb in &b.values {
                    out.push(self.weights[0] * la + self.weights[1] * lb);
                }
            }
        }
        out
    }

    /// The `count` lowest eigenpairs as flat-normalized vectors.
    pub fn lowest_eigenvectors(&self, count: usize) -> (Vec<f64>, Vec<Vec<C64>>) {
        let n2 = self.n * self.n;
        let sites = n2 * n2;
        let mut all: Vec<(f64, usize, usize, usize)> = Vec::with_capacity(self.factors.len() * sites);
        for (fi, [a, b]) in self.factors.iter().enumerate() {
            for (i, la) in a.values.iter().enumerate() {
                for (j, lb) in b.values.iter().enumerate() {
                    all.push((self.weights[0] * la + self.weights[1] * lb, fi, i, j));
                }
            }
        }
        all.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap_or(std::cmp::Ordering::Equal));
        let len = self.comps * self.per * sites;
        let mut values = Vec::with_capacity(count);
        let mut vectors = Vec::with_capacity(count);
        for &(v, fi, i, j) in all.iter().take(count) {
            let (c, e) = (fi / self.per, fi % self.per);
            let [a, b] = &self.factors[fi];
            let mut out = vec![C64::new(0.0, 0.0); len];
            let base = c * sites * self.per;
            for p1 in 0..n2 {
                for p2 in 0..n2 {
                    out[base + (p1 * n2 + p2) * self.per + e] = a.vectors[(p1, i)] * b.vectors[(p2, j)];
                }
            }
            values.push(v);
            vectors.push(out);
        }
        (values, vectors)
    }

    /// Applies `g(Δ)` for a scalar function `g` of the eigenvalue.
    pub fn apply_function(&self, data: &[C64], g: &dyn Fn(f64) -> f64) -> Vec<C64> {
        let n2 = self.n * self.n;
        let sites = n2 * n2;
        let mut out = vec![C64::new(0.0, 0.0); data.len()];
        for c in 0..self.comps {
            for e in 0..self.per {
                let [a, b] = &self.factors[c * self.per + e];
                let base = c * sites * self.per;
                let f = DMatrix::from_fn(n2, n2, |p1, p2| data[base + (p1 * n2 + p2) * self.per + e]);
                let mut gm = a.vectors.adjoint() * f * b.vectors.conjugate();
                for i in 0..n2 {
                    for j in 0..n2 {
                        gm[(i, j)] *= g(self.weights[0] * a.values[i] + self.weights[1] * b.values[j]);
                    }
                }
                let back = &a.vectors * gm * b.vectors.transpose();
                for p1 in 0..n2 {
                    for p2 in 0..n2 {
                        out[base + (p1 * n2 + p2) * self.per + e] = back[(p1, p2)];
                    }
                }
            }
        }
        out
    }
}
