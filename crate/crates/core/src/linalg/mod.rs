//! Iterative solvers on flat complex vectors with a weighted inner product,
//! plus small dense Hermitian helpers.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Failures of the iterative solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("{method} did not converge in {iterations} iterations (residual {residual:.3e}, target {target:.3e})")]
    NoConvergence { method: &'static str, iterations: usize, residual: f64, target: f64 },
    #[error("operator is not positive on the search space ({0})")]
    Indefinite(String),
}

/// Block-diagonal positive weights: `⟨a, b⟩ = Σ_k w_k Σ_{i ∈ block k} conj(a_i) b_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub block: usize,
    pub w: Vec<f64>,
}

impl Weights {
    pub fn uniform(len: usize, w: f64) -> Self {
        Self { block: len, w: vec![w] }
    }

    pub fn len(&self) -> usize {
        self.block * self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Conjugate-linear in `a`.
    pub fn dot(&self, a: &[C64], b: &[C64]) -> C64 {
        let mut acc = ZERO;
        for (k, wk) in self.w.iter().enumerate() {
            let lo = k * self.block;
            let mut part = ZERO;
            for (x, y) in a[lo..lo + self.block].iter().zip(b[lo..lo + self.block].iter()) {
                part += x.conj() * y;
            }
            acc += part * *wk;
        }
        acc
    }

    pub fn norm(&self, a: &[C64]) -> f64 {
        self.dot(a, a).re.max(0.0).sqrt()
    }
}

pub fn axpy(y: &mut [C64], a: C64, x: &[C64]) {
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += a * xi;
    }
}

fn scale(y: &mut [C64], a: C64) {
    for v in y.iter_mut() {
        *v *= a;
    }
}

/// Outcome of an iterative linear solve.
#[derive(Clone, Debug)]
pub struct LinearSolve {
    pub x: Vec<C64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Preconditioned conjugate gradients for a self-adjoint positive
/// semidefinite operator. `project` (if given) maps onto the complement of
/// the kernel and is applied to the right-hand side and every search
/// direction. The target is `‖A x − b‖ ≤ tol · ‖b‖`.
#[allow(clippy::too_many_arguments)]
pub fn cg(
    apply: &dyn Fn(&[C64]) -> Vec<C64>,
    precond: &dyn Fn(&[C64]) -> Vec<C64>,
    project: &dyn Fn(&mut [C64]),
    w: &Weights,
    b: &[C64],
    x0: Option<&[C64]>,
    tol: f64,
    max_iter: usize,
) -> Result<LinearSolve, SolverError> {
    let mut rhs = b.to_vec();
    project(&mut rhs);
    let bnorm = w.norm(&rhs);
    let mut x = x0.map_or_else(|| vec![ZERO; b.len()], |v| v.to_vec());
    project(&mut x);
    if bnorm == 0.0 {
        return Ok(LinearSolve { x: vec![ZERO; b.len()], iterations: 0, residual: 0.0 });
    }
    let target = tol * bnorm;
    let ax = apply(&x);
    let mut r: Vec<C64> = rhs.iter().zip(ax.iter()).map(|(a, c)| a - c).collect();
    project(&mut r);
    let mut z = precond(&r);
    project(&mut z);
    let mut p = z.clone();
    let mut rz = w.dot(&r, &z).re;
    let mut res = w.norm(&r);
    for it in 0..max_iter {
        if res <= target {
            return Ok(LinearSolve { x, iterations: it, residual: res / bnorm });
        }
        let ap = apply(&p);
        let pap = w.dot(&p, &ap).re;
        if pap <= 0.0 {
            return Err(SolverError::Indefinite(format!("pᴴAp = {pap:.3e}")));
        }
        let alpha = rz / pap;
        axpy(&mut x, C64::new(alpha, 0.0), &p);
        axpy(&mut r, C64::new(-alpha, 0.0), &ap);
        project(&mut r);
        res = w.norm(&r);
        z = precond(&r);
        project(&mut z);
        let rz_new = w.dot(&r, &z).re;
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(z.iter()) {
            *pi = zi + beta * *pi;
        }
    }
    if res <= target {
        return Ok(LinearSolve { x, iterations: max_iter, residual: res / bnorm });
    }
    Err(SolverError::NoConvergence { method: "cg", iterations: max_iter, residual: res / bnorm, target: tol })
}

/// Restarted GMRES with right preconditioning, in the weighted inner product.
#[allow(clippy::too_many_arguments)]
pub fn gmres(
    apply: &dyn Fn(&[C64]) -> Vec<C64>,
    precond: &dyn Fn(&[C64]) -> Vec<C64>,
    w: &Weights,
    b: &[C64],
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<LinearSolve, SolverError> {
    let n = b.len();
    let bnorm = w.norm(b);
    let mut x = vec![ZERO; n];
    if bnorm == 0.0 {
        return Ok(LinearSolve { x, iterations: 0, residual: 0.0 });
    }
    let mut total = 0;
    let mut res = bnorm;
    while total < max_iter {
        let ax = apply(&x);
        let r: Vec<C64> = b.iter().zip(ax.iter()).map(|(a, c)| a - c).collect();
        let beta = w.norm(&r);
        res = beta;
        if beta <= tol * bnorm {
            return Ok(LinearSolve { x, iterations: total, residual: beta / bnorm });
        }
        let mut v: Vec<Vec<C64>> = vec![r.iter().map(|c| c / beta).collect()];
        let mut z: Vec<Vec<C64>> = Vec::new();
        let mut h = vec![vec![ZERO; restart]; restart + 1];
        let mut cs = vec![ZERO; restart];
        let mut sn = vec![ZERO; restart];
        let mut g = vec![ZERO; restart + 1];
        g[0] = C64::new(beta, 0.0);
        let mut k_used = 0;
        for k in 0..restart {
            total += 1;
            let zk = precond(&v[k]);
            let mut wk = apply(&zk);
            z.push(zk);
            for (i, vi) in v.iter().enumerate() {
                let hik = w.dot(vi, &wk);
                h[i][k] = hik;
                axpy(&mut wk, -hik, vi);
            }
            let hn = w.norm(&wk);
            h[k + 1][k] = C64::new(hn, 0.0);
            for i in 0..k {
                let t = cs[i].conj() * h[i][k] + sn[i].conj() * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let (a, bb) = (h[k][k], h[k + 1][k]);
            let denom = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if denom == 0.0 {
                k_used = k;
                break;
            }
            cs[k] = a / denom;
            sn[k] = bb / denom;
            h[k][k] = C64::new(denom, 0.0);
            h[k + 1][k] = ZERO;
            g[k + 1] = -sn[k] * g[k];
            g[k] = cs[k].conj() * g[k];
            k_used = k + 1;
            res = g[k + 1].norm();
            if res <= tol * bnorm || hn == 0.0 || total >= max_iter {
                break;
            }
            v.push(wk.iter().map(|c| c / hn).collect());
        }
        let mut y = vec![ZERO; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            axpy(&mut x, *yj, &z[j]);
        }
        if res <= tol * bnorm {
            let ax = apply(&x);
            let r: Vec<C64> = b.iter().zip(ax.iter()).map(|(a, c)| a - c).collect();
            res = w.norm(&r);
            if res <= tol * bnorm * 1.01 {
                return Ok(LinearSolve { x, iterations: total, residual: res / bnorm });
            }
        }
    }
    Err(SolverError::NoConvergence { method: "gmres", iterations: total, residual: res / bnorm, target: tol })
}

/// Smallest eigenpairs of a self-adjoint operator.
#[derive(Clone, Debug)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<C64>>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

/// Orthonormalizes `vs` (and the companion images `avs`) against the
/// orthonormal set `qs` (with images `aqs`) and among themselves, dropping
/// numerically dependent vectors.
fn orthonormalize_block(
    w: &Weights,
    qs: &[Vec<C64>],
    aqs: Option<&[Vec<C64>]>,
    vs: Vec<Vec<C64>>,
    mut avs: Option<Vec<Vec<C64>>>,
) -> (Vec<Vec<C64>>, Option<Vec<Vec<C64>>>) {
    let mut out: Vec<Vec<C64>> = Vec::new();
    let mut aout: Vec<Vec<C64>> = Vec::new();
    for (idx, mut v) in vs.into_iter().enumerate() {
        let mut av = avs.as_mut().map(|a| std::mem::take(&mut a[idx]));
        let orig = w.norm(&v);
        if orig == 0.0 || !orig.is_finite() {
            continue;
        }
        for _ in 0..2 {
            for (k, q) in qs.iter().enumerate() {
                let c = w.dot(q, &v);
                axpy(&mut v, -c, q);
                if let (Some(av), Some(aq)) = (av.as_mut(), aqs) {
                    axpy(av, -c, &aq[k]);
                }
            }
            for (k, q) in out.iter().enumerate() {
                let c = w.dot(q, &v);
                axpy(&mut v, -c, q);
                if let Some(av) = av.as_mut() {
                    axpy(av, -c, &aout[k]);
                }
            }
        }
        let nv = w.norm(&v);
        if nv <= 1e-10 * orig {
            continue;
        }
        scale(&mut v, C64::new(1.0 / nv, 0.0));
        out.push(v);
        if let Some(mut av) = av {
            scale(&mut av, C64::new(1.0 / nv, 0.0));
            aout.push(av);
        }
    }
    let a = if avs.is_some() { Some(aout) } else { None };
    (out, a)
}

/// Orthonormal basis of the span of `vs` in the weighted inner product.
pub fn orthonormalize(w: &Weights, vs: Vec<Vec<C64>>) -> Vec<Vec<C64>> {
    orthonormalize_block(w, &[], None, vs, None).0
}

/// Eigen-decomposition of a small Hermitian matrix, ascending.
pub fn hermitian_eigen(h: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let n = h.nrows();
    let sym = (h + h.adjoint()) * C64::new(0.5, 0.0);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap_or(std::cmp::Ordering::Equal));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

fn combine(basis: &[Vec<C64>], coeffs: &DMatrix<C64>, col: usize, rows: std::ops::Range<usize>) -> Vec<C64> {
    let mut out = vec![ZERO; basis[0].len()];
    for (bi, r) in rows.enumerate() {
        let c = coeffs[(r, col)];
        if c != ZERO {
            axpy(&mut out, c, &basis[bi]);
        }
    }
    out
}

/// Settings for [`lobpcg`].
#[derive(Clone, Debug)]
pub struct LobpcgOptions {
    /// Number of eigenpairs whose residual must reach `tol`.
    pub wanted: usize,
    /// Block size (at least `wanted`).
    pub block: usize,
    /// Absolute residual target `‖A x − λ x‖ ≤ tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Starting vectors; the block is completed with preconditioned noise.
    pub initial: Vec<Vec<C64>>,
}

/// Locally optimal block preconditioned conjugate gradients for the
/// smallest eigenpairs, with the search basis orthonormalized each step.
pub fn lobpcg<R: Rng>(
    apply: &dyn Fn(&[C64]) -> Vec<C64>,
    precond: &dyn Fn(&[C64]) -> Vec<C64>,
    w: &Weights,
    opts: &LobpcgOptions,
    rng: &mut R,
) -> Result<EigenPairs, SolverError> {
    let n = w.len();
    let k = opts.block.max(opts.wanted).min(n);
    let wanted = opts.wanted.min(k);
    let random_vec = |rng: &mut R| -> Vec<C64> {
        (0..n)
            .map(|_| C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)))
            .collect()
    };
    let mut x: Vec<Vec<C64>> = orthonormalize(w, opts.initial.iter().take(k).cloned().collect());
    while x.len() < k {
        let mut cand: Vec<Vec<C64>> = x.clone();
        cand.extend((x.len()..k).map(|_| precond(&random_vec(rng))));
        x = orthonormalize(w, cand);
    }
    let rayleigh_ritz = |s: &[Vec<C64>], as_: &[Vec<C64>]| -> (Vec<f64>, DMatrix<C64>) {
        let m = s.len();
        let h = DMatrix::from_fn(m, m, |i, j| w.dot(&s[i], &as_[j]));
        hermitian_eigen(&h)
    };
    let mut ax: Vec<Vec<C64>> = x.iter().map(|v| apply(v)).collect();
    let (vals, c) = rayleigh_ritz(&x, &ax);
    let mut lambda: Vec<f64> = vals[..k].to_vec();
    let newx: Vec<Vec<C64>> = (0..k).map(|j| combine(&x, &c, j, 0..k)).collect();
    let newax: Vec<Vec<C64>> = (0..k).map(|j| combine(&ax, &c, j, 0..k)).collect();
    x = newx;
    ax = newax;
    let mut p: Vec<Vec<C64>> = Vec::new();
    let mut residuals = vec![f64::INFINITY; k];
    let residual_block = |x: &[Vec<C64>], ax: &[Vec<C64>], lambda: &[f64]| -> Vec<Vec<C64>> {
        (0..x.len())
            .map(|j| {
                let mut rj = ax[j].clone();
                axpy(&mut rj, C64::new(-lambda[j], 0.0), &x[j]);
                rj
            })
            .collect()
    };
    for it in 0..opts.max_iter {
        let mut r = residual_block(&x, &ax, &lambda);
        for j in 0..k {
            residuals[j] = w.norm(&r[j]);
        }
        if residuals[..wanted].iter().all(|&rr| rr <= opts.tol) {
            // Refresh the images so that the reported residuals are honest.
            ax = x.iter().map(|v| apply(v)).collect();
            r = residual_block(&x, &ax, &lambda);
            for j in 0..k {
                residuals[j] = w.norm(&r[j]);
            }
            if residuals[..wanted].iter().all(|&rr| rr <= opts.tol) {
                return Ok(EigenPairs { values: lambda, vectors: x, residuals, iterations: it });
            }
        }
        let active: Vec<usize> = (0..k).filter(|&j| residuals[j] > opts.tol).collect();
        let wv: Vec<Vec<C64>> = active.iter().map(|&j| precond(&r[j])).collect();
        let (wv, _) = orthonormalize_block(w, &x, None, wv, None);
        let aw: Vec<Vec<C64>> = wv.iter().map(|v| apply(v)).collect();
        let mut qs = x.clone();
        qs.extend(wv.iter().cloned());
        let mut aqs = ax.clone();
        aqs.extend(aw.iter().cloned());
        // Images of the orthonormalized directions are recomputed: when a
        // direction is nearly dependent, normalization amplifies the error
        // of a combined image.
        let (pv, _) = orthonormalize_block(w, &qs, None, p, None);
        let apv: Vec<Vec<C64>> = pv.iter().map(|v| apply(v)).collect();
        let nw = wv.len();
        let np = pv.len();
        let mut s = qs;
        s.extend(pv);
        let mut as_ = aqs;
        as_.extend(apv);
        let (vals, c) = rayleigh_ritz(&s, &as_);
        lambda = vals[..k].to_vec();
        let m = s.len();
        let xn: Vec<Vec<C64>> = (0..k).map(|j| combine(&s, &c, j, 0..m)).collect();
        let axn: Vec<Vec<C64>> = (0..k).map(|j| combine(&as_, &c, j, 0..m)).collect();
        p = (0..k).map(|j| combine(&s[k..], &c, j, k..k + nw + np)).collect();
        x = xn;
        ax = axn;
        // Periodically recompute images to stop drift.
        if it % 8 == 7 {
            ax = x.iter().map(|v| apply(v)).collect();
        }
    }
    let worst = residuals[..wanted].iter().copied().fold(0.0, f64::max);
    Err(SolverError::NoConvergence { method: "lobpcg", iterations: opts.max_iter, residual: worst, target: opts.tol })
}

/// Pointwise functions of small Hermitian matrices.
pub mod small {
    use super::*;

    /// Row-major `r×r` slice to a matrix.
    pub fn to_matrix(a: &[C64], r: usize) -> DMatrix<C64> {
        DMatrix::from_fn(r, r, |i, j| a[i * r + j])
    }

    pub fn from_matrix(m: &DMatrix<C64>, out: &mut [C64]) {
        let r = m.nrows();
        for i in 0..r {
            for j in 0..r {
                out[i * r + j] = m[(i, j)];
            }
        }
    }

    /// `f(H)` for Hermitian `H` through its eigen-decomposition.
    pub fn hermitian_function(a: &[C64], r: usize, f: impl Fn(f64) -> f64) -> Vec<C64> {
        let m = to_matrix(a, r);
        let (vals, vecs) = hermitian_eigen(&m);
        let d = DMatrix::from_fn(r, r, |i, j| if i == j { C64::new(f(vals[i]), 0.0) } else { ZERO });
        let res = &vecs * d * vecs.adjoint();
        let mut out = vec![ZERO; r * r];
        from_matrix(&res, &mut out);
        out
    }

    /// Daleckii–Krein derivative `d/dt f(H + tK)|₀` for Hermitian `H`, `K`.
    pub fn hermitian_derivative(
        a: &[C64],
        k: &[C64],
        r: usize,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64,
    ) -> Vec<C64> {
        let (vals, u) = hermitian_eigen(&to_matrix(a, r));
        let kt = u.adjoint() * to_matrix(k, r) * &u;
        let d = DMatrix::from_fn(r, r, |i, j| {
            let (li, lj) = (vals[i], vals[j]);
            let q = if (li - lj).abs() > 1e-9 * (1.0 + li.abs().max(lj.abs())) {
                (f(li) - f(lj)) / (li - lj)
            } else {
                df(0.5 * (li + lj))
            };
            kt[(i, j)] * q
        });
        let res = &u * d * u.adjoint();
        let mut out = vec![ZERO; r * r];
        from_matrix(&res, &mut out);
        out
    }

    /// General inverse; `None` when singular.
    pub fn inverse(a: &[C64], r: usize) -> Option<Vec<C64>> {
        let m = to_matrix(a, r);
        let scale = m.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if scale == 0.0 {
            return None;
        }
        let lu = m.clone().lu();
        let det = lu.determinant().norm();
        if !(det > 1e-13 * scale.powi(r as i32)) {
            return None;
        }
        let inv = lu.try_inverse()?;
        let mut out = vec![ZERO; r * r];
        from_matrix(&inv, &mut out);
        Some(out)
    }

    /// `C = A B` for row-major `r×r` slices, accumulated with weight `c`.
    #[inline]
    pub fn mul_acc(a: &[C64], b: &[C64], c: C64, out: &mut [C64], r: usize) {
        for i in 0..r {
            for k in 0..r {
                let aik = a[i * r + k] * c;
                if aik == ZERO {
                    continue;
                }
                for j in 0..r {
                    out[i * r + j] += aik * b[k * r + j];
                }
            }
        }
    }

    pub fn mul(a: &[C64], b: &[C64], r: usize) -> Vec<C64> {
        let mut out = vec![ZERO; r * r];
        mul_acc(a, b, C64::new(1.0, 0.0), &mut out, r);
        out
    }

    pub fn adjoint(a: &[C64], r: usize) -> Vec<C64> {
        let mut out = vec![ZERO; r * r];
        for i in 0..r {
            for j in 0..r {
                out[i * r + j] = a[j * r + i].conj();
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag_op(d: Vec<f64>) -> impl Fn(&[C64]) -> Vec<C64> {
        move |x: &[C64]| x.iter().zip(d.iter()).map(|(v, di)| v * di).collect()
    }

    #[test]
    fn cg_solves_with_kernel_projection() {
        let n = 50;
        let d: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let op = diag_op(d.clone());
        let w = Weights::uniform(n, 0.5);
        let b: Vec<C64> = (0..n).map(|i| C64::new(1.0, i as f64)).collect();
        let project = |v: &mut [C64]| v[0] = ZERO;
        let sol = cg(&op, &|v| v.to_vec(), &project, &w, &b, None, 1e-12, 200).unwrap();
        assert!(sol.x[0].norm() == 0.0);
        for i in 1..n {
            assert!((sol.x[i] * d[i] - b[i]).norm() < 1e-9);
        }
    }

    #[test]
    fn gmres_solves_nonsymmetric_system() {
        let n = 30;
        let apply = |x: &[C64]| -> Vec<C64> {
            (0..x.len()).map(|i| x[i] * (2.0 + i as f64) + if i + 1 < x.len() { x[i + 1] * 0.7 } else { ZERO }).collect()
        };
        let w = Weights::uniform(n, 1.0);
        let b: Vec<C64> = (0..n).map(|i| C64::new((i as f64).sin(), 1.0)).collect();
        let sol = gmres(&apply, &|v| v.to_vec(), &w, &b, 1e-12, 10, 200).unwrap();
        let r = apply(&sol.x);
        for i in 0..n {
            assert!((r[i] - b[i]).norm() < 1e-9);
        }
    }

    #[test]
    fn lobpcg_finds_degenerate_bottom() {
        let n = 200;
        let d: Vec<f64> = (0..n).map(|i| if i < 3 { 0.0 } else { 1.0 + i as f64 }).collect();
        let op = diag_op(d.clone());
        let pre = {
            let d = d.clone();
            move |x: &[C64]| -> Vec<C64> { x.iter().zip(d.iter()).map(|(v, di)| v / (di + 1.0)).collect() }
        };
        let w = Weights::uniform(n, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let opts = LobpcgOptions { wanted: 5, block: 6, tol: 1e-10, max_iter: 200, initial: Vec::new() };
        let e = lobpcg(&op, &pre, &w, &opts, &mut rng).unwrap();
        assert!(e.values[..3].iter().all(|v| v.abs() < 1e-10));
        assert!((e.values[3] - 4.0).abs() < 1e-9);
        assert!((e.values[4] - 5.0).abs() < 1e-9);
        for i in 0..5 {
            for j in 0..5 {
                let g = w.dot(&e.vectors[i], &e.vectors[j]);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((g - expect).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn small_matrix_functions() {
        let h = [C64::new(2.0, 0.0), C64::new(0.0, 1.0), C64::new(0.0, -1.0), C64::new(2.0, 0.0)];
        let (vals, _) = hermitian_eigen(&small::to_matrix(&h, 2));
        assert!((vals[0] - 1.0).abs() < 1e-12 && (vals[1] - 3.0).abs() < 1e-12);
        let e = small::hermitian_function(&h, 2, f64::exp);
        let l = small::hermitian_function(&e, 2, f64::ln);
        for (a, b) in l.iter().zip(h.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
        // Daleckii–Krein against a central difference.
        let k = [C64::new(0.3, 0.0), C64::new(0.1, 0.2), C64::new(0.1, -0.2), C64::new(-0.5, 0.0)];
        let d = small::hermitian_derivative(&h, &k, 2, f64::exp, f64::exp);
        let hstep = 1e-5;
        let plus: Vec<C64> = h.iter().zip(k.iter()).map(|(a, b)| a + b * hstep).collect();
        let minus: Vec<C64> = h.iter().zip(k.iter()).map(|(a, b)| a - b * hstep).collect();
        let ep = small::hermitian_function(&plus, 2, f64::exp);
        let em = small::hermitian_function(&minus, 2, f64::exp);
        for i in 0..4 {
            assert!(((ep[i] - em[i]) / (2.0 * hstep) - d[i]).norm() < 1e-7);
        }
        let inv = small::inverse(&h, 2).unwrap();
        let id = small::mul(&h, &inv, 2);
        assert!((id[0] - 1.0).norm() < 1e-12 && id[1].norm() < 1e-12);
        assert!(small::inverse(&[ZERO; 4], 2).is_none());
    }
}
