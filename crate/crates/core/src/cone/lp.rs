//! Exact two-phase simplex method over an ordered field.
//!
//! Problems are tiny (tens of variables), so a dense tableau with Bland's
//! anti-cycling rule is used. Every pivot is exact.

use crate::scalar::OrderedField;

/// Result of an exact linear program.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LpOutcome<T> {
    /// Optimal value and one optimal vertex.
    Optimal { value: T, x: Vec<T> },
    /// The constraint set is empty.
    Infeasible,
    /// The objective is unbounded above.
    Unbounded,
}

struct Tableau<T> {
    rows: Vec<Vec<T>>,
    basis: Vec<usize>,
    ncols: usize,
}

impl<T: OrderedField> Tableau<T> {
    fn rhs(&self, i: usize) -> &T {
        &self.rows[i][self.ncols]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c].clone();
        for v in self.rows[r].iter_mut() {
            if !v.is_zero() {
                *v = v.clone() / p.clone();
            }
        }
        let pivot_row = self.rows[r].clone();
        let support: Vec<usize> = (0..pivot_row.len()).filter(|&j| !pivot_row[j].is_zero()).collect();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r || row[c].is_zero() {
                continue;
            }
            let f = row[c].clone();
            for &j in &support {
                row[j] = row[j].clone() - f.clone() * pivot_row[j].clone();
            }
        }
        self.basis[r] = c;
    }

    fn reduced_costs(&self, cost: &[T]) -> Vec<T> {
        let mut red: Vec<T> = cost.to_vec();
        for (i, &bi) in self.basis.iter().enumerate() {
            let cb = &cost[bi];
            if cb.is_zero() {
                continue;
            }
            for (j, rj) in red.iter_mut().enumerate() {
                *rj = rj.clone() - cb.clone() * self.rows[i][j].clone();
            }
        }
        red
    }

    /// Runs primal simplex iterations; returns `false` on unboundedness.
    fn optimize(&mut self, cost: &[T], allowed: &dyn Fn(usize) -> bool) -> bool {
        loop {
            let red = self.reduced_costs(cost);
            let entering = (0..self.ncols).find(|&j| allowed(j) && red[j].is_positive());
            let Some(c) = entering else { return true };
            let mut best: Option<(usize, T)> = None;
            for i in 0..self.rows.len() {
                let a = &self.rows[i][c];
                if !a.is_positive() {
                    continue;
                }
                let ratio = self.rhs(i).clone() / a.clone();
                best = match best {
                    None => Some((i, ratio)),
                    Some((bi, br)) => {
                        if ratio < br || (ratio == br && self.basis[i] < self.basis[bi]) {
                            Some((i, ratio))
                        } else {
                            Some((bi, br))
                        }
                    }
                };
            }
            match best {
                None => return false,
                Some((r, _)) => self.pivot(r, c),
            }
        }
    }

    fn objective(&self, cost: &[T]) -> T {
        self.basis
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (i, &b)| acc + cost[b].clone() * self.rhs(i).clone())
    }
}

/// Maximizes `c·x` subject to `A x = b`, `x ≥ 0`, exactly.
///
/// `a` is given row-wise; every row must have `c.len()` entries.
pub fn maximize_eq<T: OrderedField>(a: &[Vec<T>], b: &[T], c: &[T]) -> LpOutcome<T> {
    let m = a.len();
    let n = c.len();
    assert_eq!(b.len(), m, "rhs length must match the number of rows");
    let ncols = n + m;
    let mut rows = Vec::with_capacity(m);
    for (i, (row, bi)) in a.iter().zip(b.iter()).enumerate() {
        assert_eq!(row.len(), n, "constraint row width must match the objective");
        let flip = bi.is_negative();
        let mut r: Vec<T> = Vec::with_capacity(ncols + 1);
        for v in row {
            r.push(if flip { -v.clone() } else { v.clone() });
        }
        for k in 0..m {
            r.push(if k == i { T::one() } else { T::zero() });
        }
        r.push(if flip { -bi.clone() } else { bi.clone() });
        rows.push(r);
    }
    let mut tab = Tableau { rows, basis: (n..n + m).collect(), ncols };

    // Phase 1: drive the artificial variables to zero.
    let mut phase1 = vec![T::zero(); ncols];
    for v in phase1.iter_mut().skip(n) {
        *v = -T::one();
    }
    tab.optimize(&phase1, &|_| true);
    if tab.objective(&phase1).is_negative() {
        return LpOutcome::Infeasible;
    }
    // Pivot remaining (zero-level) artificials out of the basis, or drop
    // their rows when they are linearly dependent.
    let mut i = 0;
    while i < tab.rows.len() {
        if tab.basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| !tab.rows[i][j].is_zero()) {
                tab.pivot(i, j);
                i += 1;
            } else {
                tab.rows.remove(i);
                tab.basis.remove(i);
            }
        } else {
            i += 1;
        }
    }

    // Phase 2 on the original objective, artificials frozen out.
    let mut cost = vec![T::zero(); ncols];
    cost[..n].clone_from_slice(c);
    if !tab.optimize(&cost, &|j| j < n) {
        return LpOutcome::Unbounded;
    }
    let mut x = vec![T::zero(); n];
    for (i, &bi) in tab.basis.iter().enumerate() {
        if bi < n {
            x[bi] = tab.rhs(i).clone();
        }
    }
    let value = x.iter().zip(c.iter()).fold(T::zero(), |acc, (xi, ci)| acc + xi.clone() * ci.clone());
    LpOutcome::Optimal { value, x }
}

/// Value of the zero-sum game `min_{λ ∈ Δ_rows} max_col (λᵀ P)_col`.
///
/// Returns the value together with an optimal row mixture `λ`.
pub fn minimax_rows<T: OrderedField>(payoff: &[Vec<T>]) -> (T, Vec<T>) {
    let rows = payoff.len();
    assert!(rows > 0, "payoff needs at least one row");
    let cols = payoff[0].len();
    assert!(cols > 0, "payoff needs at least one column");
    // Variables: λ_1..λ_rows, z⁺, z⁻, slack_1..slack_cols.
    let nv = rows + 2 + cols;
    let mut a = Vec::with_capacity(cols + 1);
    let mut b = Vec::with_capacity(cols + 1);
    for col in 0..cols {
        let mut r = vec![T::zero(); nv];
        for (k, prow) in payoff.iter().enumerate() {
            r[k] = prow[col].clone();
        }
        r[rows] = -T::one();
        r[rows + 1] = T::one();
        r[rows + 2 + col] = T::one();
        a.push(r);
        b.push(T::zero());
    }
    let mut sum = vec![T::zero(); nv];
    for v in sum.iter_mut().take(rows) {
        *v = T::one();
    }
    a.push(sum);
    b.push(T::one());
    let mut c = vec![T::zero(); nv];
    c[rows] = -T::one();
    c[rows + 1] = T::one();
    match maximize_eq(&a, &b, &c) {
        LpOutcome::Optimal { value, x } => (-value, x[..rows].to_vec()),
        other => unreachable!("a finite matrix game always has a value, got {other:?}"),
    }
}
