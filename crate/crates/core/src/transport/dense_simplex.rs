//! Textbook two-phase tableau simplex with Bland's rule, for tiny problems.

const EPS: f64 = 1e-12;

/// Minimizes `c·x` subject to `A x = b`, `x >= 0`, with `b >= 0`.
/// Returns `None` when infeasible.
pub fn minimize(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Option<(f64, Vec<f64>)> {
    let rows = a.len();
    let vars = c.len();
    let width = vars + rows + 1;
    // Tableau rows: constraints with one artificial each; last column is the rhs.
    let mut t: Vec<Vec<f64>> = (0..rows)
        .map(|r| {
            let mut row = vec![0.0; width];
            row[..vars].copy_from_slice(&a[r]);
            row[vars + r] = 1.0;
            row[width - 1] = b[r];
            row
        })
        .collect();
    let mut basis: Vec<usize> = (vars..vars + rows).collect();

    // Phase one: minimize the sum of artificials.
    let mut obj = vec![0.0; width];
    for row in &t {
        for (o, v) in obj.iter_mut().zip(row) {
            *o -= v;
        }
    }
    for o in &mut obj[vars..vars + rows] {
        *o = 0.0;
    }
    run(&mut t, &mut obj, &mut basis, vars + rows);
    if -obj[width - 1] > 1e-9 * (1.0 + b.iter().sum::<f64>()) {
        return None;
    }
    // Drive zero-level artificials out of the basis; drop redundant rows.
    let mut r = 0;
    while r < t.len() {
        if basis[r] >= vars {
            if let Some(col) = (0..vars).find(|&j| t[r][j].abs() > EPS) {
                pivot(&mut t, &mut obj, &mut basis, r, col);
            } else {
                t.remove(r);
                basis.remove(r);
                continue;
            }
        }
        r += 1;
    }

    // Phase two over the original columns only.
    let mut obj = vec![0.0; width];
    obj[..vars].copy_from_slice(c);
    for (r, &bv) in basis.iter().enumerate() {
        let cb = obj[bv];
        if cb != 0.0 {
            for (o, v) in obj.iter_mut().zip(&t[r]) {
                *o -= cb * v;
            }
        }
    }
    run(&mut t, &mut obj, &mut basis, vars);
    let mut x = vec![0.0; vars];
    for (r, &bv) in basis.iter().enumerate() {
        if bv < vars {
            x[bv] = t[r][width - 1];
        }
    }
    let value = c.iter().zip(&x).map(|(p, q)| p * q).sum();
    Some((value, x))
}

fn pivot(t: &mut [Vec<f64>], obj: &mut [f64], basis: &mut [usize], r: usize, col: usize) {
    let p = t[r][col];
    for v in t[r].iter_mut() {
        *v /= p;
    }
    let pivot_row = t[r].clone();
    for (i, row) in t.iter_mut().enumerate() {
        if i != r && row[col] != 0.0 {
            let f = row[col];
            for (v, pv) in row.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
        }
    }
    let f = obj[col];
    if f != 0.0 {
        for (v, pv) in obj.iter_mut().zip(&pivot_row) {
            *v -= f * pv;
        }
    }
    basis[r] = col;
}

/// Bland's rule: smallest improving column, smallest basis index on ties.
fn run(t: &mut [Vec<f64>], obj: &mut [f64], basis: &mut [usize], cols: usize) {
    let rhs = obj.len() - 1;
    loop {
        let Some(col) = (0..cols).find(|&j| obj[j] < -EPS) else {
            return;
        };
        let mut best: Option<(f64, usize, usize)> = None;
        for (r, row) in t.iter().enumerate() {
            if row[col] > EPS {
                let ratio = row[rhs] / row[col];
                let better = match best {
                    None => true,
                    Some((br, _, bb)) => ratio < br - EPS || (ratio <= br + EPS && basis[r] < bb),
                };
                if better {
                    best = Some((ratio, r, basis[r]));
                }
            }
        }
        let Some((_, r, _)) = best else {
            // Unbounded: cannot happen for transportation problems.
            return;
        };
        pivot(t, obj, basis, r, col);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_lp() {
        // min -x - y s.t. x + s1 = 1, y + s2 = 2
        let c = [-1.0, -1.0, 0.0, 0.0];
        let a = vec![vec![1.0, 0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0, 1.0]];
        let (v, x) = minimize(&c, &a, &[1.0, 2.0]).unwrap();
        assert!((v + 3.0).abs() < 1e-12);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_detected() {
        let a = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert!(minimize(&[1.0, 1.0], &a, &[1.0, 2.0]).is_none());
    }

    #[test]
    fn redundant_rows_are_dropped() {
        // 2x2 transportation with the usual redundant constraint.
        let c = [1.0, 2.0, 2.0, 1.0];
        let a = vec![
            vec![1.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0, 1.0],
        ];
        let (v, _) = minimize(&c, &a, &[0.3, 0.7, 0.6, 0.4]).unwrap();
        // x00 = 0.3, x11 = 0.4, x10 = 0.3.
        assert!((v - (0.3 + 0.4 + 0.6)).abs() < 1e-12);
    }
}
