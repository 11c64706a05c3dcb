//! Differential forms with values in `E` or `End(E)` sampled on the grid.

use std::io::{Read, Write};

use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::LatticeError;

/// Form bidegree `(p, q)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bidegree {
    pub p: u8,
    pub q: u8,
}

impl Bidegree {
    pub const SECTION: Self = Self { p: 0, q: 0 };
    pub const ZERO_ONE: Self = Self { p: 0, q: 1 };
    pub const ONE_ZERO: Self = Self { p: 1, q: 0 };
    pub const ONE_ONE: Self = Self { p: 1, q: 1 };
    pub const ZERO_TWO: Self = Self { p: 0, q: 2 };
    pub const TWO_ZERO: Self = Self { p: 2, q: 0 };

    pub fn new(p: u8, q: u8) -> Result<Self, LatticeError> {
        if p > 2 || q > 2 || p + q > 2 {
            return Err(LatticeError::Bidegree { p, q });
        }
        Ok(Self { p, q })
    }

    /// Number of frame components.
    ///
    /// `(0,1)` uses `dz̄₁, dz̄₂`; `(1,0)` uses `dz₁, dz₂`; `(1,1)` stores
    /// `dz_p ∧ dz̄_q` at index `2p + q`; `(0,2)` and `(2,0)` use
    /// `dz̄₁ ∧ dz̄₂` and `dz₁ ∧ dz₂`.
    pub fn components(self) -> usize {
        match (self.p, self.q) {
            (1, 1) => 4,
            (1, 0) | (0, 1) => 2,
            _ => 1,
        }
    }

    /// Eigenvalue `i^{p−q}` of the complex structure `J`.
    pub fn j_eigenvalue(self) -> C64 {
        match (i32::from(self.p) - i32::from(self.q)).rem_euclid(4) {
            0 => C64::new(1.0, 0.0),
            1 => C64::new(0.0, 1.0),
            2 => C64::new(-1.0, 0.0),
            _ => C64::new(0.0, -1.0),
        }
    }
}

/// Whether a field is valued in `End(E)` (r×r per site) or `E` (r per site).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Valued {
    End,
    Vector,
}

/// A sampled `(p,q)`-form.
///
/// Storage is `[component][site][entry]` with sites in row-major order over
/// `(x₁, y₁, x₂, y₂)` and `End` entries row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeField {
    n: usize,
    rank: usize,
    bidegree: Bidegree,
    valued: Valued,
    data: Vec<C64>,
}

impl LatticeField {
    pub fn zeros(n: usize, rank: usize, bidegree: Bidegree, valued: Valued) -> Self {
        let per = match valued {
            Valued::End => rank * rank,
            Valued::Vector => rank,
        };
        let len = bidegree.components() * n.pow(4) * per;
        Self { n, rank, bidegree, valued, data: vec![C64::new(0.0, 0.0); len] }
    }

    /// A zero field with the same shape as `self`.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.n, self.rank, self.bidegree, self.valued)
    }

    /// A field shaped like `self` with another bidegree.
    pub fn zeros_with(&self, bidegree: Bidegree) -> Self {
        Self::zeros(self.n, self.rank, bidegree, self.valued)
    }

    pub fn from_vec(n: usize, rank: usize, bidegree: Bidegree, valued: Valued, data: Vec<C64>) -> Result<Self, LatticeError> {
        let f = Self::zeros(n, rank, bidegree, valued);
        if f.data.len() != data.len() {
            return Err(LatticeError::Shape { expected: f.data.len(), found: data.len() });
        }
        Ok(Self { data, ..f })
    }

    /// I.i.d. standard complex Gaussian entries.
    pub fn random<R: Rng>(n: usize, rank: usize, bidegree: Bidegree, valued: Valued, rng: &mut R) -> Self {
        let mut f = Self::zeros(n, rank, bidegree, valued);
        for v in f.data.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *v = C64::new(re, im);
        }
        f
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn rank(&self) -> usize {
        self.rank
    }
    pub fn bidegree(&self) -> Bidegree {
        self.bidegree
    }
    pub fn valued(&self) -> Valued {
        self.valued
    }
    pub fn sites(&self) -> usize {
        self.n.pow(4)
    }
    /// Complex values per site and component.
    pub fn per_site(&self) -> usize {
        match self.valued {
            Valued::End => self.rank * self.rank,
            Valued::Vector => self.rank,
        }
    }
    pub fn components(&self) -> usize {
        self.bidegree.components()
    }
    pub fn data(&self) -> &[C64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    fn comp_len(&self) -> usize {
        self.sites() * self.per_site()
    }
    pub fn comp(&self, c: usize) -> &[C64] {
        let l = self.comp_len();
        &self.data[c * l..(c + 1) * l]
    }
    pub fn comp_mut(&mut self, c: usize) -> &mut [C64] {
        let l = self.comp_len();
        &mut self.data[c * l..(c + 1) * l]
    }
    /// Values of component `c` at one site.
    pub fn at(&self, c: usize, site: usize) -> &[C64] {
        let per = self.per_site();
        &self.comp(c)[site * per..(site + 1) * per]
    }
    pub fn at_mut(&mut self, c: usize, site: usize) -> &mut [C64] {
        let per = self.per_site();
        &mut self.comp_mut(c)[site * per..(site + 1) * per]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n == other.n && self.rank == other.rank && self.bidegree == other.bidegree && self.valued == other.valued
    }

    /// `self += a · other`.
    pub fn axpy(&mut self, a: C64, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (x, y) in self.data.iter_mut().zip(other.data.iter()) {
            *x += a * y;
        }
    }

    pub fn scale(&mut self, a: C64) {
        for x in self.data.iter_mut() {
            *x *= a;
        }
    }

    pub fn scaled(&self, a: C64) -> Self {
        let mut f = self.clone();
        f.scale(a);
        f
    }

    /// `Σ |v|²` over all stored values.
    pub fn flat_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    /// Largest absolute value.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Applies the complex structure `J = i^{p−q}`.
    pub fn apply_j(&self) -> Self {
        self.scaled(self.bidegree.j_eigenvalue())
    }

    /// Pointwise conjugate transpose of an `End`-valued field, keeping the
    /// component frame (the caller relabels the bidegree if needed).
    pub fn pointwise_adjoint(&self) -> Self {
        assert_eq!(self.valued, Valued::End, "adjoint needs End-valued data");
        let r = self.rank;
        let mut out = self.clone();
        for c in 0..self.components() {
            for s in 0..self.sites() {
                let src = self.at(c, s);
                let dst = out.at_mut(c, s);
                for i in 0..r {
                    for j in 0..r {
                        dst[i * r + j] = src[j * r + i].conj();
                    }
                }
            }
        }
        out
    }

    /// Writes the binary snapshot.
    ///
    /// Header: five little-endian `u32` words `N, r, p, q, kind` with
    /// `kind = 0` for `End` and `1` for `E`. Body: all values in storage
    /// order as little-endian `f64` pairs `(re, im)`.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let kind = match self.valued {
            Valued::End => 0u32,
            Valued::Vector => 1u32,
        };
        for word in [self.n as u32, self.rank as u32, u32::from(self.bidegree.p), u32::from(self.bidegree.q), kind] {
            w.write_all(&word.to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_snapshot_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 16 * self.data.len());
        self.write_snapshot(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Reads a snapshot written by [`LatticeField::write_snapshot`].
    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self, LatticeError> {
        let mut word = [0u8; 4];
        let mut header = [0u32; 5];
        for h in header.iter_mut() {
            r.read_exact(&mut word).map_err(|e| LatticeError::Snapshot(e.to_string()))?;
            *h = u32::from_le_bytes(word);
        }
        let [n, rank, p, q, kind] = header;
        let bidegree = Bidegree::new(p as u8, q as u8)?;
        let valued = match kind {
            0 => Valued::End,
            1 => Valued::Vector,
            k => return Err(LatticeError::Snapshot(format!("unknown value kind {k}"))),
        };
        if n == 0 || rank == 0 || n > 1024 {
            return Err(LatticeError::Snapshot(format!("implausible header N={n}, r={rank}")));
        }
        let mut f = Self::zeros(n as usize, rank as usize, bidegree, valued);
        let mut buf = [0u8; 8];
        for v in f.data.iter_mut() {
            r.read_exact(&mut buf).map_err(|e| LatticeError::Snapshot(e.to_string()))?;
            let re = f64::from_le_bytes(buf);
            r.read_exact(&mut buf).map_err(|e| LatticeError::Snapshot(e.to_string()))?;
            let im = f64::from_le_bytes(buf);
            *v = C64::new(re, im);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest).map_err(|e| LatticeError::Snapshot(e.to_string()))?;
        if !rest.is_empty() {
            return Err(LatticeError::Snapshot(format!("{} trailing bytes", rest.len())));
        }
        Ok(f)
    }
}
