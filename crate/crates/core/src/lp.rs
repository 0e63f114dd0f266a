//! Phase-one simplex for linear feasibility: find `x >= 0` with `A x = b`.
//!
//! Dense tableau with one artificial variable per row. Pricing is Dantzig's rule, falling
//! back to Bland's rule after a run of degenerate pivots so the method cannot cycle. On
//! termination the basic solution is recomputed from the original columns with an LU
//! solve, which removes the error accumulated by the tableau updates.

use nalgebra::{DMatrix, DVector};

const PIVOT_EPS: f64 = 1e-12;
const DEGENERATE_STREAK_LIMIT: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOneOutcome {
    /// Optimal sum of artificial variables; zero iff the system is feasible.
    pub artificial_sum: f64,
    /// Values of the structural variables at the final basis.
    pub x: Vec<f64>,
    /// Basic column indices; entries `>= cols` are artificial.
    pub basis: Vec<usize>,
    pub pivots: usize,
}

/// Solves the phase-one problem `min sum(s)` s.t. `A x + s = b`, `x, s >= 0`.
///
/// `a` is `rows x cols`; `b` may have any sign (rows are flipped as needed).
pub fn phase_one(a: &DMatrix<f64>, b: &[f64]) -> PhaseOneOutcome {
    let (rows, cols) = a.shape();
    assert_eq!(rows, b.len(), "rhs length must equal the row count");
    let width = cols + rows + 1;
    let rhs = width - 1;

    // Tableau rows 0..rows are constraints; row `rows` holds reduced costs.
    let mut t = DMatrix::<f64>::zeros(rows + 1, width);
    let mut sign = vec![1.0; rows];
    for i in 0..rows {
        if b[i] < 0.0 {
            sign[i] = -1.0;
        }
        for j in 0..cols {
            t[(i, j)] = sign[i] * a[(i, j)];
        }
        t[(i, cols + i)] = 1.0;
        t[(i, rhs)] = sign[i] * b[i];
    }
    for j in 0..cols {
        t[(rows, j)] = -(0..rows).map(|i| t[(i, j)]).sum::<f64>();
    }
    t[(rows, rhs)] = -(0..rows).map(|i| t[(i, rhs)]).sum::<f64>();

    let mut basis: Vec<usize> = (cols..cols + rows).collect();
    let mut pivots = 0;
    let mut degenerate_streak = 0;
    loop {
        let bland = degenerate_streak >= DEGENERATE_STREAK_LIMIT;
        let entering = if bland {
            (0..cols + rows).find(|&j| t[(rows, j)] < -PIVOT_EPS)
        } else {
            (0..cols + rows)
                .filter(|&j| t[(rows, j)] < -PIVOT_EPS)
                .min_by(|&x, &y| t[(rows, x)].total_cmp(&t[(rows, y)]))
        };
        let Some(enter) = entering else { break };

        let mut leave: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..rows {
            let coef = t[(i, enter)];
            if coef > PIVOT_EPS {
                let ratio = t[(i, rhs)] / coef;
                let better = match leave {
                    None => true,
                    Some(l) => {
                        ratio < best_ratio - PIVOT_EPS
                            || (ratio <= best_ratio + PIVOT_EPS && basis[i] < basis[l])
                    }
                };
                if better {
                    best_ratio = ratio;
                    leave = Some(i);
                }
            }
        }
        // Phase one is bounded below by zero, so an entering column always has a pivot row.
        let Some(row) = leave else { break };

        if best_ratio.abs() <= PIVOT_EPS {
            degenerate_streak += 1;
        } else {
            degenerate_streak = 0;
        }
        pivot(&mut t, row, enter);
        basis[row] = enter;
        pivots += 1;
    }

    let x = recompute_basic_solution(a, b, &basis).unwrap_or_else(|| {
        let mut x = vec![0.0; cols];
        for (i, &bj) in basis.iter().enumerate() {
            if bj < cols {
                x[bj] = t[(i, rhs)];
            }
        }
        x
    });
    let artificial_sum = (-t[(rows, rhs)]).max(0.0);
    PhaseOneOutcome {
        artificial_sum,
        x,
        basis,
        pivots,
    }
}

fn pivot(t: &mut DMatrix<f64>, row: usize, col: usize) {
    let p = t[(row, col)];
    let width = t.ncols();
    for j in 0..width {
        t[(row, j)] /= p;
    }
    for i in 0..t.nrows() {
        if i == row {
            continue;
        }
        let f = t[(i, col)];
        if f != 0.0 {
            for j in 0..width {
                let v = t[(row, j)];
                if v != 0.0 {
                    t[(i, j)] -= f * v;
                }
            }
        }
    }
}

/// Solves `B x_B = b` for the basis columns of `[A | I]` and scatters the structural part.
fn recompute_basic_solution(a: &DMatrix<f64>, b: &[f64], basis: &[usize]) -> Option<Vec<f64>> {
    let (rows, cols) = a.shape();
    let mut bmat = DMatrix::<f64>::zeros(rows, rows);
    for (k, &j) in basis.iter().enumerate() {
        if j < cols {
            bmat.set_column(k, &a.column(j));
        } else {
            bmat[(j - cols, k)] = 1.0;
        }
    }
    let xb = bmat.lu().solve(&DVector::from_column_slice(b))?;
    if xb.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut x = vec![0.0; cols];
    for (k, &j) in basis.iter().enumerate() {
        if j < cols {
            x[j] = xb[k];
        }
    }
    Some(x)
}
