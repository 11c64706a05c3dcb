//! Spectral covariant derivatives for flux line bundles on the unit torus.
//!
//! Each complex plane `z_p = x_p + i y_p` carries a constant magnetic field
//! of `m` flux quanta in Landau gauge. A section is sampled at `x, y ∈
//! {0, 1/N, …, (N−1)/N}` and the covariant derivatives are
//!
//! ```text
//! D_x f = M* S (M f) + 2πi m y f,    M = exp(−2πi m x y),
//! D_y f = S f − 2πi m x f,
//! ```
//!
//! where `S` is the spectral derivative matrix on `N` points. Conjugation by
//! `M` turns the twisted section into a periodic one before differentiating.
//! For odd `N` the matrix `S` is real and antisymmetric, so both `D_x` and
//! `D_y` are exactly anti-Hermitian and `[D_x, D_y] = −2πi m` holds on
//! resolved modes.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;

/// One of the four real coordinate directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    X,
    Y,
}

/// Precomputed spectral tables for an odd grid size.
#[derive(Clone, Debug)]
pub struct Spectral {
    n: usize,
    /// Row-major `N×N` real derivative matrix.
    s: Vec<f64>,
    /// `exp(2πi k / N²)` for `k = 0..N²`.
    roots: Vec<C64>,
}

impl Spectral {
    /// Builds the tables. `n` must be odd.
    pub fn new(n: usize) -> Self {
        assert!(n % 2 == 1, "spectral derivatives need an odd grid size");
        let half = (n - 1) / 2;
        let mut s = vec![0.0; n * n];
        for j in 0..n {
            for l in 0..n {
                let d = j as f64 - l as f64;
                let mut v = 0.0;
                for k in 1..=half {
                    let kf = k as f64;
                    v -= 4.0 * PI * kf / n as f64 * (2.0 * PI * kf * d / n as f64).sin();
                }
                s[j * n + l] = v;
            }
        }
        let n2 = n * n;
        let roots = (0..n2).map(|k| C64::from_polar(1.0, 2.0 * PI * k as f64 / n2 as f64)).collect();
        Self { n, s, roots }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Entry `S[j][l]` of the derivative matrix.
    #[inline]
    pub fn s(&self, j: usize, l: usize) -> f64 {
        self.s[j * self.n + l]
    }

    /// `exp(2πi · sign · m · jx · jy / N²)`.
    #[inline]
    pub fn landau_phase(&self, m: i64, jx: usize, jy: usize) -> C64 {
        let n2 = (self.n * self.n) as i64;
        let k = (m * (jx as i64) * (jy as i64)).rem_euclid(n2);
        self.roots[k as usize]
    }

    /// Applies the covariant derivative along one line.
    ///
    /// `line` holds the `N` values along the differentiated coordinate and
    /// `other` is the grid index of the partner coordinate in the same plane
    /// (`y` for [`Direction::X`], `x` for [`Direction::Y`]). The result is
    /// added to `out` after multiplication by `coef`.
    pub fn apply_line(&self, dir: Direction, m: i64, other: usize, line: &[C64], coef: C64, out: &mut [C64]) {
        let n = self.n;
        let nf = n as f64;
        match dir {
            Direction::X => {
                if m == 0 {
                    for j in 0..n {
                        let mut acc = C64::new(0.0, 0.0);
                        for (l, v) in line.iter().enumerate() {
                            acc += *v * self.s(j, l);
                        }
                        out[j] += coef * acc;
                    }
                } else {
                    let jy = other;
                    let twisted: Vec<C64> =
                        line.iter().enumerate().map(|(l, v)| self.landau_phase(-m, l, jy) * v).collect();
                    let shift = C64::new(0.0, 2.0 * PI * m as f64 * jy as f64 / nf);
                    for j in 0..n {
                        let mut acc = C64::new(0.0, 0.0);
                        for (l, v) in twisted.iter().enumerate() {
                            acc += *v * self.s(j, l);
                        }
                        out[j] += coef * (self.landau_phase(m, j, jy) * acc + shift * line[j]);
                    }
                }
            }
            Direction::Y => {
                let shift = C64::new(0.0, -2.0 * PI * m as f64 * other as f64 / nf);
                for j in 0..n {
                    let mut acc = shift * line[j];
                    for (l, v) in line.iter().enumerate() {
                        acc += *v * self.s(j, l);
                    }
                    out[j] += coef * acc;
                }
            }
        }
    }

    /// Dense `N²×N²` matrix of a plane derivative, indexed `x·N + y`.
    pub fn plane_matrix(&self, dir: Direction, m: i64) -> Vec<C64> {
        let n = self.n;
        let n2 = n * n;
        let mut mat = vec![C64::new(0.0, 0.0); n2 * n2];
        let mut line = vec![C64::new(0.0, 0.0); n];
        let mut out = vec![C64::new(0.0, 0.0); n];
        for col in 0..n2 {
            let (cx, cy) = (col / n, col % n);
            // A unit vector only touches the line through its own site.
            line.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
            out.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
            match dir {
                Direction::X => {
                    line[cx] = C64::new(1.0, 0.0);
                    self.apply_line(dir, m, cy, &line, C64::new(1.0, 0.0), &mut out);
                    for (j, v) in out.iter().enumerate() {
                        mat[(j * n + cy) * n2 + col] = *v;
                    }
                }
                Direction::Y => {
                    line[cy] = C64::new(1.0, 0.0);
                    self.apply_line(dir, m, cx, &line, C64::new(1.0, 0.0), &mut out);
                    for (j, v) in out.iter().enumerate() {
                        mat[(cx * n + j) * n2 + col] = *v;
                    }
                }
            }
        }
        mat
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_mul(a: &[C64], b: &[C64], n: usize) -> Vec<C64> {
        let mut c = vec![C64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for k in 0..n {
                let aik = a[i * n + k];
                for j in 0..n {
                    c[i * n + j] += aik * b[k * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn derivative_matrix_is_antisymmetric_and_exact_on_modes() {
        let sp = Spectral::new(9);
        for j in 0..9 {
            for l in 0..9 {
                assert!((sp.s(j, l) + sp.s(l, j)).abs() < 1e-12);
            }
        }
        // d/dx sin(2π·3x) = 6π cos(2π·3x).
        for j in 0..9 {
            let x = j as f64 / 9.0;
            let d: f64 = (0..9).map(|l| sp.s(j, l) * (2.0 * PI * 3.0 * l as f64 / 9.0).sin()).sum();
            assert!((d - 6.0 * PI * (2.0 * PI * 3.0 * x).cos()).abs() < 1e-10);
        }
    }

    #[test]
    fn plane_derivatives_are_anti_hermitian() {
        let sp = Spectral::new(7);
        let n2 = 49;
        for m in [-2i64, 0, 1, 3] {
            for dir in [Direction::X, Direction::Y] {
                let a = sp.plane_matrix(dir, m);
                for i in 0..n2 {
                    for j in 0..n2 {
                        assert!((a[i * n2 + j] + a[j * n2 + i].conj()).norm() < 1e-11);
                    }
                }
            }
        }
    }

    #[test]
    fn lowest_landau_level_is_exact() {
        // −(D_x² + D_y²) has eigenvalue 2π|m| with multiplicity |m| at the bottom.
        let sp = Spectral::new(9);
        let n2 = 81;
        for m in [1i64, 2, -2] {
            let dx = sp.plane_matrix(Direction::X, m);
            let dy = sp.plane_matrix(Direction::Y, m);
            let xx = dense_mul(&dx, &dx, n2);
            let yy = dense_mul(&dy, &dy, n2);
            let h = nalgebra::DMatrix::from_fn(n2, n2, |i, j| -(xx[i * n2 + j] + yy[i * n2 + j]));
            let mut ev: Vec<f64> = h.symmetric_eigen().eigenvalues.iter().copied().collect();
            ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let b = 2.0 * PI * m.unsigned_abs() as f64;
            for e in ev.iter().take(m.unsigned_abs() as usize) {
                assert!((e - b).abs() < 1e-8, "m={m}: {e} vs {b}");
            }
            assert!(ev[m.unsigned_abs() as usize] > 2.5 * b);
        }
    }
}
