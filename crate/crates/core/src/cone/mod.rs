//! Exact slope-stability cones.
//!
//! A vector bundle `E` is tested against an explicit finite list of candidate
//! subobjects, each summarized by a [`SlopeDatum`] (first Chern vector and
//! rank). Each candidate `S` contributes a linear wall
//! `l_S(θ) = μ_θ(E/S) − μ_θ(S)` on the space of metric classes `θ`; `E` is
//! stable at `θ` when every wall is strictly positive there. Everything is
//! computed in an exact ordered field so that the semistable case (a wall
//! vanishing) is decided by equality rather than by a tolerance.

pub mod lp;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::OrderedField;

/// Errors raised by the cone engine.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConeError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("subobject rank {sub} must satisfy 0 < rank < {total}")]
    RankOutOfRange { sub: u32, total: u32 },
    #[error("rank must be positive")]
    ZeroRank,
    #[error("candidate list is empty")]
    EmptyCandidates,
    #[error("region has no vertices")]
    EmptyRegion,
    #[error("region vertices {0} and {1} coincide")]
    DuplicateVertex(usize, usize),
    #[error("metric class lies outside the configured region")]
    OutsideRegion,
    #[error("metric class is unstable; it has no face")]
    UnstableInput,
    #[error("Chern entry {index} has denominator {denominator} not dividing {bound}")]
    LatticeDenominator { index: usize, denominator: String, bound: u64 },
}

/// Coordinates of a metric class `[Θ]` in a fixed basis.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThetaClass<T> {
    pub coords: Vec<T>,
}

impl<T: OrderedField> ThetaClass<T> {
    pub fn new(coords: Vec<T>) -> Self {
        Self { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// `c·θ` for a positive scalar `c`.
    pub fn scaled(&self, c: &T) -> Self {
        Self { coords: self.coords.iter().map(|x| x.clone() * c.clone()).collect() }
    }

    /// `λ θ₁ + (1 − λ) θ₂`.
    pub fn convex(&self, other: &Self, lambda: &T) -> Self {
        let mu = T::one() - lambda.clone();
        Self {
            coords: self
                .coords
                .iter()
                .zip(other.coords.iter())
                .map(|(a, b)| lambda.clone() * a.clone() + mu.clone() * b.clone())
                .collect(),
        }
    }
}

/// First Chern vector (pairing-dual coordinates) and rank of a subobject.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlopeDatum<T> {
    pub c1: Vec<T>,
    pub rank: u32,
}

impl<T: OrderedField> SlopeDatum<T> {
    pub fn new(c1: Vec<T>, rank: u32) -> Result<Self, ConeError> {
        if rank == 0 {
            return Err(ConeError::ZeroRank);
        }
        Ok(Self { c1, rank })
    }

    /// The slope vector `c1 / rank`.
    pub fn slope_vector(&self) -> Vec<T> {
        let r = T::from_u32(self.rank).expect("rank embeds into the field");
        self.c1.iter().map(|x| x.clone() / r.clone()).collect()
    }

    /// Checks that every Chern entry has a denominator dividing `rank · bound!`.
    pub fn check_lattice(&self, factorial_bound: u32) -> Result<(), ConeError> {
        let bound = u64::from(self.rank).saturating_mul(crate::scalar::factorial(factorial_bound));
        for (index, x) in self.c1.iter().enumerate() {
            let ok = x.denominator_u64().map(|d| d != 0 && bound % d == 0).unwrap_or(false);
            if !ok {
                return Err(ConeError::LatticeDenominator {
                    index,
                    denominator: x.denominator_u64().map_or_else(|| "huge".into(), |d| d.to_string()),
                    bound,
                });
            }
        }
        Ok(())
    }
}

/// A linear wall `l_S` with its source subobject.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WallFunctional<T> {
    pub coeffs: Vec<T>,
    pub source: SlopeDatum<T>,
    /// Index of the source in the caller's candidate list.
    pub source_index: usize,
}

impl<T: OrderedField> WallFunctional<T> {
    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }

    /// Exact evaluation `l_S(θ)`.
    pub fn eval(&self, theta: &ThetaClass<T>) -> T {
        dot(&self.coeffs, &theta.coords)
    }
}

/// Compact convex region of metric classes given by its vertices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region<T> {
    pub vertices: Vec<ThetaClass<T>>,
}

impl<T: OrderedField> Region<T> {
    pub fn new(vertices: Vec<ThetaClass<T>>) -> Result<Self, ConeError> {
        if vertices.is_empty() {
            return Err(ConeError::EmptyRegion);
        }
        let d = vertices[0].dim();
        for (i, v) in vertices.iter().enumerate() {
            if v.dim() != d {
                return Err(ConeError::DimensionMismatch { expected: d, found: v.dim() });
            }
            for (j, w) in vertices.iter().enumerate().take(i) {
                if v == w {
                    return Err(ConeError::DuplicateVertex(j, i));
                }
            }
        }
        Ok(Self { vertices })
    }

    /// Axis-aligned box `∏ [lo_i, hi_i]` as a vertex list.
    pub fn boxed(lo: &[T], hi: &[T]) -> Result<Self, ConeError> {
        let d = lo.len();
        let mut vertices = Vec::with_capacity(1 << d);
        for mask in 0..(1usize << d) {
            let coords = (0..d)
                .map(|k| if mask >> k & 1 == 1 { hi[k].clone() } else { lo[k].clone() })
                .collect();
            vertices.push(ThetaClass::new(coords));
        }
        vertices.dedup();
        Self::new(vertices)
    }

    pub fn ambient_dim(&self) -> usize {
        self.vertices[0].dim()
    }

    /// Dimension of the affine hull of the vertices.
    pub fn affine_dim(&self) -> usize {
        rank(&self.edge_directions())
    }

    fn edge_directions(&self) -> Vec<Vec<T>> {
        let base = &self.vertices[0].coords;
        self.vertices[1..]
            .iter()
            .map(|v| v.coords.iter().zip(base.iter()).map(|(a, b)| a.clone() - b.clone()).collect())
            .collect()
    }

    fn bounding_box(&self) -> (Vec<&T>, Vec<&T>) {
        let d = self.ambient_dim();
        let lo = (0..d).map(|k| self.vertices.iter().map(|v| &v.coords[k]).min().expect("nonempty region")).collect();
        let hi = (0..d).map(|k| self.vertices.iter().map(|v| &v.coords[k]).max().expect("nonempty region")).collect();
        (lo, hi)
    }

    /// Whether the vertices include every corner of the bounding box.
    fn is_box(&self, lo: &[&T], hi: &[&T]) -> bool {
        let free: Vec<usize> = (0..lo.len()).filter(|&k| lo[k] != hi[k]).collect();
        if free.len() >= usize::BITS as usize - 1 || self.vertices.len() < 1usize << free.len() {
            return false;
        }
        let mut corners = BTreeSet::new();
        for v in &self.vertices {
            let mut pattern = 0usize;
            for (bit, &k) in free.iter().enumerate() {
                if v.coords[k] == *hi[k] {
                    pattern |= 1 << bit;
                } else if v.coords[k] != *lo[k] {
                    return false;
                }
            }
            corners.insert(pattern);
        }
        corners.len() == 1usize << free.len()
    }

    /// Exact membership test `θ ∈ conv(vertices)`.
    ///
    /// Points outside the bounding box are rejected directly, and boxes
    /// (every corner of the bounding box present) accept every point inside
    /// it; other regions use a feasibility LP.
    pub fn contains(&self, theta: &ThetaClass<T>) -> Result<bool, ConeError> {
        let d = self.ambient_dim();
        if theta.dim() != d {
            return Err(ConeError::DimensionMismatch { expected: d, found: theta.dim() });
        }
        let (lo, hi) = self.bounding_box();
        if theta.coords.iter().zip(lo.iter().zip(hi.iter())).any(|(x, (l, h))| x < *l || x > *h) {
            return Ok(false);
        }
        if self.is_box(&lo, &hi) {
            return Ok(true);
        }
        let m = self.vertices.len();
        let mut a = Vec::with_capacity(d + 1);
        let mut b = Vec::with_capacity(d + 1);
        for k in 0..d {
            a.push(self.vertices.iter().map(|v| v.coords[k].clone()).collect());
            b.push(theta.coords[k].clone());
        }
        a.push(vec![T::one(); m]);
        b.push(T::one());
        let c = vec![T::zero(); m];
        Ok(!matches!(lp::maximize_eq(&a, &b, &c), lp::LpOutcome::Infeasible))
    }
}

/// Walls of the stability cone over a region.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StabilityCone<T> {
    pub total: SlopeDatum<T>,
    pub walls: Vec<WallFunctional<T>>,
    pub region: Region<T>,
    /// Set when some candidate has the slope vector of `E` itself, so that
    /// the stable cone is empty.
    pub empty_stable: bool,
}

/// Face of the cone containing a (semi)stable class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Face {
    pub active: Vec<usize>,
    pub dim: usize,
}

/// Stability verdict of a metric class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Stable,
    Semistable { active: Vec<usize> },
    Unstable { violated: Vec<usize> },
}

impl Verdict {
    pub fn kind(&self) -> &'static str {
        match self {
            Verdict::Stable => "stable",
            Verdict::Semistable { .. } => "semistable",
            Verdict::Unstable { .. } => "unstable",
        }
    }
}

fn dot<T: OrderedField>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b.iter()).fold(T::zero(), |acc, (x, y)| acc + x.clone() * y.clone())
}

fn check_dim<T>(expected: usize, v: &[T]) -> Result<(), ConeError> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(ConeError::DimensionMismatch { expected, found: v.len() })
    }
}

/// Exact rank of a list of row vectors (Gaussian elimination).
pub fn rank<T: OrderedField>(rows: &[Vec<T>]) -> usize {
    let mut m: Vec<Vec<T>> = rows.to_vec();
    if m.is_empty() {
        return 0;
    }
    let ncols = m[0].len();
    let mut r = 0;
    for c in 0..ncols {
        let Some(p) = (r..m.len()).find(|&i| !m[i][c].is_zero()) else { continue };
        m.swap(r, p);
        let pivot = m[r][c].clone();
        let prow = m[r].clone();
        for row in m.iter_mut().skip(r + 1) {
            if row[c].is_zero() {
                continue;
            }
            let f = row[c].clone() / pivot.clone();
            for (v, pv) in row.iter_mut().zip(prow.iter()) {
                *v = v.clone() - f.clone() * pv.clone();
            }
        }
        r += 1;
        if r == m.len() {
            break;
        }
    }
    r
}

/// `μ_θ(S) = (c1(S)·θ) / rk(S)`, exactly.
pub fn slope<T: OrderedField>(s: &SlopeDatum<T>, theta: &ThetaClass<T>) -> Result<T, ConeError> {
    check_dim(s.c1.len(), &theta.coords)?;
    let r = T::from_u32(s.rank).ok_or(ConeError::ZeroRank)?;
    if r.is_zero() {
        return Err(ConeError::ZeroRank);
    }
    Ok(dot(&s.c1, &theta.coords) / r)
}

/// The wall `l_S = c1(E/S)/rk(E/S) − c1(S)/rk(S)`; positive means `S` does
/// not destabilize.
pub fn wall_functional<T: OrderedField>(
    sub: &SlopeDatum<T>,
    total: &SlopeDatum<T>,
) -> Result<WallFunctional<T>, ConeError> {
    if sub.rank == 0 || sub.rank >= total.rank {
        return Err(ConeError::RankOutOfRange { sub: sub.rank, total: total.rank });
    }
    check_dim(total.c1.len(), &sub.c1)?;
    let rq = T::from_u32(total.rank - sub.rank).expect("rank embeds");
    let rs = T::from_u32(sub.rank).expect("rank embeds");
    let coeffs = total
        .c1
        .iter()
        .zip(sub.c1.iter())
        .map(|(e, s)| (e.clone() - s.clone()) / rq.clone() - s.clone() / rs.clone())
        .collect();
    Ok(WallFunctional { coeffs, source: sub.clone(), source_index: 0 })
}

/// Slope values of every candidate at every region vertex: `table[k][v]`.
fn vertex_slopes<T: OrderedField>(d: &[SlopeDatum<T>], k: &Region<T>) -> Result<Vec<Vec<T>>, ConeError> {
    k.vertices.iter().map(|phi| d.iter().map(|s| slope(s, phi)).collect()).collect()
}

/// Whether candidate `v` is dominated on `K` by the candidates in `others`:
/// `max_{θ∈K} min_{w} (μ_v − μ_w)(θ) ≤ 0`.
fn dominated<T: OrderedField>(table: &[Vec<T>], v: usize, others: &[usize]) -> bool {
    if others.is_empty() {
        return false;
    }
    // Slopes are affine in θ, so vertex values decide two cases without an
    // LP: a vertex where `v` beats every other member, or a single member at
    // least as large as `v` at every vertex.
    if table.iter().any(|row| others.iter().all(|&w| row[v] > row[w])) {
        return false;
    }
    if others.iter().any(|&w| table.iter().all(|row| row[w] >= row[v])) {
        return true;
    }
    // Row player chooses θ (mixture of vertices) to maximize the minimum of
    // μ_v − μ_w; negate to use the minimizing game solver.
    let payoff: Vec<Vec<T>> = table
        .iter()
        .map(|row| others.iter().map(|&w| row[w].clone() - row[v].clone()).collect())
        .collect();
    // min_λ max_w (μ_w − μ_v) = −max_λ min_w (μ_v − μ_w).
    let (value, _) = lp::minimax_rows(&payoff);
    !value.is_negative()
}

/// Minimal index set `F ⊂ D` with `max_D μ = max_F μ` on all of `K`.
///
/// Follows the finiteness construction: `a = min_K max_D μ` (an exact
/// matrix-game LP over the vertex mixture), the candidate set
/// `F_{K,a} = {v : max_{vertices} μ_v ≥ a}`, then pruning of dominated
/// members from the highest index down so that ties keep the lowest index.
pub fn finite_reduction<T: OrderedField>(d: &[SlopeDatum<T>], k: &Region<T>) -> Result<Vec<usize>, ConeError> {
    if d.is_empty() {
        return Err(ConeError::EmptyCandidates);
    }
    let dim = k.ambient_dim();
    for s in d {
        check_dim(dim, &s.c1)?;
    }
    let table = vertex_slopes(d, k)?;
    let a = reduction_level(&table);
    let mut f: Vec<usize> = (0..d.len())
        .filter(|&v| table.iter().map(|row| &row[v]).max().is_some_and(|m| *m >= a))
        .collect();
    for v in (0..d.len()).rev() {
        let Some(pos) = f.iter().position(|&x| x == v) else { continue };
        let others: Vec<usize> = f.iter().copied().filter(|&x| x != v).collect();
        if dominated(&table, v, &others) {
            f.remove(pos);
        }
    }
    Ok(f)
}

/// `a = min_K max_D μ`, computed from the vertex table.
///
/// The best single candidate's worst vertex gives a lower bound
/// `max_v min_k μ_v(φ_k) ≤ a`. When some candidate attains `max_D μ` at a
/// vertex with exactly that value, the bound is tight and the game LP is
/// skipped.
fn reduction_level<T: OrderedField>(table: &[Vec<T>]) -> T {
    let lower = (0..table[0].len())
        .map(|v| table.iter().map(|row| &row[v]).min().expect("nonempty region").clone())
        .max()
        .expect("nonempty candidates");
    let tight = table.iter().any(|row| row.iter().max().is_some_and(|m| *m == lower));
    if tight {
        return lower;
    }
    lp::minimax_rows(table).0
}

fn positive_multiple<T: OrderedField>(a: &[T], b: &[T]) -> bool {
    let Some(i) = a.iter().position(|x| !x.is_zero()) else { return b.iter().all(|x| x.is_zero()) };
    if b[i].is_zero() || a[i].is_positive() != b[i].is_positive() {
        return false;
    }
    let ratio = b[i].clone() / a[i].clone();
    a.iter().zip(b.iter()).all(|(x, y)| x.clone() * ratio.clone() == *y)
}

/// Builds the walls relevant on `K` from an explicit candidate list.
///
/// Candidates are first re-expressed as slope differences `μ(S) − μ(E)`
/// (which does not change which candidate attains the maximum), reduced with
/// [`finite_reduction`], and turned into walls. Candidates whose slope vector
/// equals that of `E` give zero walls; these are always kept and set
/// [`StabilityCone::empty_stable`]. Walls that are positive multiples of an
/// earlier wall are dropped.
pub fn build_cones<T: OrderedField>(
    total: &SlopeDatum<T>,
    d: &[SlopeDatum<T>],
    k: &Region<T>,
) -> Result<StabilityCone<T>, ConeError> {
    if d.is_empty() {
        return Err(ConeError::EmptyCandidates);
    }
    check_dim(k.ambient_dim(), &total.c1)?;
    for s in d {
        if s.rank == 0 || s.rank >= total.rank {
            return Err(ConeError::RankOutOfRange { sub: s.rank, total: total.rank });
        }
        check_dim(total.c1.len(), &s.c1)?;
    }
    let mu_e = total.slope_vector();
    let reduced: Vec<SlopeDatum<T>> = d
        .iter()
        .map(|s| SlopeDatum {
            c1: s.slope_vector().into_iter().zip(mu_e.iter()).map(|(a, b)| a - b.clone()).collect(),
            rank: 1,
        })
        .collect();
    let keep = finite_reduction(&reduced, k)?;
    let zero_members: Vec<usize> =
        (0..d.len()).filter(|&i| reduced[i].c1.iter().all(|x| x.is_zero())).collect();
    let mut members: BTreeSet<usize> = keep.into_iter().collect();
    members.extend(zero_members.iter().copied());

    let mut walls: Vec<WallFunctional<T>> = Vec::new();
    for i in members {
        let mut w = wall_functional(&d[i], total)?;
        w.source_index = i;
        if walls.iter().any(|x| positive_multiple(&x.coeffs, &w.coeffs)) {
            continue;
        }
        walls.push(w);
    }
    let empty_stable = walls.iter().any(|w| w.is_zero());
    Ok(StabilityCone { total: total.clone(), walls, region: k.clone(), empty_stable })
}

/// Signs of every wall at `θ` without the region check.
pub fn classify_unchecked<T: OrderedField>(theta: &ThetaClass<T>, cone: &StabilityCone<T>) -> Result<Verdict, ConeError> {
    let mut zero = Vec::new();
    let mut negative = Vec::new();
    for (i, w) in cone.walls.iter().enumerate() {
        check_dim(w.coeffs.len(), &theta.coords)?;
        let v = w.eval(theta);
        if v.is_zero() {
            zero.push(i);
        } else if v.is_negative() {
            negative.push(i);
        }
    }
    Ok(if !negative.is_empty() {
        Verdict::Unstable { violated: negative }
    } else if !zero.is_empty() {
        Verdict::Semistable { active: zero }
    } else {
        Verdict::Stable
    })
}

/// Exact classification of `θ ∈ K`.
pub fn classify<T: OrderedField>(theta: &ThetaClass<T>, cone: &StabilityCone<T>) -> Result<Verdict, ConeError> {
    if !cone.region.contains(theta)? {
        return Err(ConeError::OutsideRegion);
    }
    classify_unchecked(theta, cone)
}

/// Face of the cone through a (semi)stable `θ`.
pub fn face_of<T: OrderedField>(theta: &ThetaClass<T>, cone: &StabilityCone<T>) -> Result<Face, ConeError> {
    let active = match classify(theta, cone)? {
        Verdict::Stable => Vec::new(),
        Verdict::Semistable { active } => active,
        Verdict::Unstable { .. } => return Err(ConeError::UnstableInput),
    };
    let dirs = cone.region.edge_directions();
    let hull_dim = rank(&dirs);
    // Images of the hull directions under the active walls: rank(L·W).
    let lw: Vec<Vec<T>> = active
        .iter()
        .map(|&i| dirs.iter().map(|w| dot(&cone.walls[i].coeffs, w)).collect())
        .collect();
    let dim = hull_dim - if lw.is_empty() || dirs.is_empty() { 0 } else { rank(&lw) };
    Ok(Face { active, dim })
}

/// `F₁ ⊂ F₂` as faces, i.e. `f1.active ⊇ f2.active`.
pub fn graded_refines(f1: &Face, f2: &Face) -> bool {
    f2.active.iter().all(|i| f1.active.contains(i))
}
