//! Compact U(1) link variables realizing the flux of each line component.
//!
//! In each coordinate plane a line with `m` flux quanta gets links
//! `U_y(j_x, j_y) = e^{iφ j_x}` and `U_x = 1`, except on the last column where
//! `U_x(N−1, j_y) = e^{−iφ N j_y}` absorbs the integrality twist, with
//! `φ = 2πm/N²`. Every plaquette then equals `e^{iφ}` and the plaquette
//! angles of a plane add up to exactly `2πm`.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;

use super::BundleSpec;

/// Link variables per line component and plane.
#[derive(Clone, Debug, PartialEq)]
pub struct GaugeLinks {
    n: usize,
    /// `fluxes[k][p]`.
    fluxes: Vec<[i64; 2]>,
}

impl GaugeLinks {
    pub fn new(n: usize, bundle: &BundleSpec) -> Self {
        Self { n, fluxes: bundle.fluxes.clone() }
    }

    fn phi(&self, k: usize, p: usize) -> f64 {
        2.0 * PI * self.fluxes[k][p] as f64 / (self.n * self.n) as f64
    }

    /// Link along `x_p` leaving `(jx, jy)` in plane `p` for component `k`.
    pub fn link_x(&self, k: usize, p: usize, jx: usize, jy: usize) -> C64 {
        if jx + 1 == self.n {
            C64::from_polar(1.0, -self.phi(k, p) * (self.n * jy) as f64)
        } else {
            C64::new(1.0, 0.0)
        }
    }

    /// Link along `y_p` leaving `(jx, jy)`.
    pub fn link_y(&self, k: usize, p: usize, jx: usize, _jy: usize) -> C64 {
        C64::from_polar(1.0, self.phi(k, p) * jx as f64)
    }

    /// Plaquette `U_x(j) U_y(j+x̂) U_x(j+ŷ)* U_y(j)*`.
    pub fn plaquette(&self, k: usize, p: usize, jx: usize, jy: usize) -> C64 {
        let n = self.n;
        let (xp, yp) = ((jx + 1) % n, (jy + 1) % n);
        self.link_x(k, p, jx, jy) * self.link_y(k, p, xp, jy) * self.link_x(k, p, jx, yp).conj() * self.link_y(k, p, jx, jy).conj()
    }

    /// Field strength `B = arg(plaquette) · N²` of one plaquette, so that the
    /// curvature reads `iF = B dx ∧ dy` there.
    pub fn field_strength(&self, k: usize, p: usize, jx: usize, jy: usize) -> f64 {
        self.plaquette(k, p, jx, jy).arg() * (self.n * self.n) as f64
    }

    /// Total plaquette angle `Σ arg(U_□)` of component `k` in plane `p`.
    pub fn total_angle(&self, k: usize, p: usize) -> f64 {
        let mut acc = 0.0;
        for jx in 0..self.n {
            for jy in 0..self.n {
                acc += self.plaquette(k, p, jx, jy).arg();
            }
        }
        acc
    }

    /// `∫ tr(iF) ∧ ω` from plaquette angles: `Σ_k Σ_p angle_{k,p} · t_{p'}`
    /// where `p'` is the other plane.
    pub fn chern_weil_trace(&self, t: [f64; 2]) -> f64 {
        (0..self.fluxes.len()).map(|k| self.total_angle(k, 0) * t[1] + self.total_angle(k, 1) * t[0]).sum()
    }

    /// Largest deviation of any link from unit modulus.
    pub fn unitarity_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.fluxes.len() {
            for p in 0..2 {
                for jx in 0..self.n {
                    for jy in 0..self.n {
                        worst = worst.max((self.link_x(k, p, jx, jy).norm() - 1.0).abs());
                        worst = worst.max((self.link_y(k, p, jx, jy).norm() - 1.0).abs());
                    }
                }
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plaquettes_are_uniform_and_sum_to_the_flux() {
        let bundle = BundleSpec::split(vec![[1, -1], [3, 2]]).unwrap();
        let links = GaugeLinks::new(9, &bundle);
        assert!(links.unitarity_defect() < 1e-14);
        for (k, m) in [[1i64, -1], [3, 2]].iter().enumerate() {
            for p in 0..2 {
                let phi = 2.0 * PI * m[p] as f64 / 81.0;
                for jx in 0..9 {
                    for jy in 0..9 {
                        assert!((links.plaquette(k, p, jx, jy) - C64::from_polar(1.0, phi)).norm() < 1e-12);
                    }
                }
                assert!((links.total_angle(k, p) - 2.0 * PI * m[p] as f64).abs() < 1e-10);
            }
        }
    }
}
