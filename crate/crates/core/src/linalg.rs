//! Sparse matrices and the two linear solvers used by the scheme: a banded LU
//! without pivoting and Jacobi-preconditioned BiCGStab.

use std::collections::VecDeque;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from rows of `(column, value)`; duplicate columns are summed and
    /// each row is sorted by column.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            for (c, v) in r {
                assert!(c < n, "column {c} out of range");
                if cols.len() > *row_ptr.last().unwrap() && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_into(x, &mut y);
        y
    }

    pub fn mul_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    /// Rows scaled by `s`.
    pub fn scale_rows(&self, s: &[f64]) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            for v in &mut out.vals[self.row_ptr[i]..self.row_ptr[i + 1]] {
                *v *= s[i];
            }
        }
        out
    }

    /// Largest entrywise difference against another matrix of the same size.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.n, other.n);
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - other.get(i, j)).abs());
            }
            for (j, v) in other.row(i) {
                worst = worst.max((v - self.get(i, j)).abs());
            }
        }
        worst
    }

    /// Reverse Cuthill-McKee ordering of the symmetrized pattern; returns
    /// `perm` with `perm[new] = old`.
    pub fn rcm_ordering(&self) -> Vec<usize> {
        let n = self.n;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            for (j, _) in self.row(i) {
                if i != j {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut by_degree: Vec<usize> = (0..n).collect();
        by_degree.sort_by_key(|&i| adj[i].len());
        for &start in &by_degree {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                order.push(v);
                let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !seen[w]).collect();
                next.sort_by_key(|&w| adj[w].len());
                for w in next {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        order.reverse();
        order
    }

    /// Half bandwidth under `perm` (`perm[new] = old`).
    pub fn bandwidth(&self, perm: &[usize]) -> usize {
        let mut inv = vec![0; self.n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut bw = 0;
        for i in 0..self.n {
            for (j, _) in self.row(i) {
                bw = bw.max(inv[i].abs_diff(inv[j]));
            }
        }
        bw
    }
}

/// LU factors of a permuted band matrix, computed without pivoting.
///
/// Safe when the matrix is column diagonally dominant: elimination keeps that
/// property, so every pivot stays positive.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    bw: usize,
    perm: Vec<usize>,
    band: Vec<f64>,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix, perm: Vec<usize>) -> Option<Self> {
        let n = a.n;
        let bw = a.bandwidth(&perm);
        let width = 2 * bw + 1;
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut band = vec![0.0; n * width];
        for old_i in 0..n {
            let i = inv[old_i];
            for (old_j, v) in a.row(old_i) {
                let j = inv[old_j];
                band[i * width + (j + bw - i)] += v;
            }
        }
        for k in 0..n {
            let pivot = band[k * width + bw];
            if !(pivot.is_finite() && pivot != 0.0) {
                return None;
            }
            let last = (k + bw).min(n - 1);
            for i in k + 1..=last {
                let lik = band[i * width + (k + bw - i)] / pivot;
                if lik == 0.0 {
                    continue;
                }
                band[i * width + (k + bw - i)] = lik;
                let (upper, lower) = band.split_at_mut(i * width);
                let row_k = &upper[k * width..];
                for j in k + 1..=last {
                    lower[j + bw - i] -= lik * row_k[j + bw - k];
                }
            }
        }
        Some(Self { n, bw, perm, band })
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw) = (self.n, self.bw);
        let width = 2 * bw + 1;
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let row = &self.band[i * width..(i + 1) * width];
            let mut s = y[i];
            for j in i.saturating_sub(bw)..i {
                s -= row[j + bw - i] * y[j];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let row = &self.band[i * width..(i + 1) * width];
            let mut s = y[i];
            for j in i + 1..=(i + bw).min(n - 1) {
                s -= row[j + bw - i] * y[j];
            }
            y[i] = s / row[bw];
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterStats {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Jacobi-preconditioned BiCGStab; stops when `‖b - Ax‖_∞ <= tol ‖b‖_∞`.
pub fn bicgstab(a: &CsrMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> IterStats {
    let n = a.n;
    let dinv: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let b_norm = inf_norm(b).max(f64::MIN_POSITIVE);
    let mut r = a.mul_vec(x);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut res = inf_norm(&r) / b_norm;
    if res <= tol {
        return IterStats {
            iterations: 0,
            residual: res,
            converged: true,
        };
    }
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            break;
        }
        let beta = rho_new / rho * alpha / omega;
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = dinv[i] * p[i];
        }
        a.mul_into(&y, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for i in 0..n {
            x[i] += alpha * y[i];
            r[i] -= alpha * v[i];
        }
        res = inf_norm(&r) / b_norm;
        if res <= tol {
            return IterStats {
                iterations: it,
                residual: res,
                converged: true,
            };
        }
        for i in 0..n {
            z[i] = dinv[i] * r[i];
        }
        a.mul_into(&z, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &r) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += omega * z[i];
            r[i] -= omega * t[i];
        }
        res = inf_norm(&r) / b_norm;
        if res <= tol {
            return IterStats {
                iterations: it,
                residual: res,
                converged: true,
            };
        }
    }
    // Recompute the true residual: the recursive one drifts.
    let ax = a.mul_vec(x);
    let true_res = inf_norm(&ax.iter().zip(b).map(|(p, q)| q - p).collect::<Vec<_>>()) / b_norm;
    IterStats {
        iterations: max_iter,
        residual: true_res,
        converged: true_res <= tol,
    }
}

/// `‖b - Ax‖_∞`.
pub fn residual_inf(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.mul_vec(x);
    ax.iter().zip(b).fold(0.0, |m, (p, q)| m.max((q - p).abs()))
}
