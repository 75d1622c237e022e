//! Dense tableau simplex for `max c^T x  s.t.  A x <= b, x >= 0` with `b >= 0`.
//!
//! The slack basis is feasible from the start, so no phase I is needed.
//! Dantzig pricing, switching to Bland's rule after a run of degenerate
//! pivots to rule out cycling.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SimplexSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Optimal dual prices of the `<=` rows (all non-negative).
    pub dual: DVector<f64>,
    pub pivots: usize,
}

impl SimplexSolution {
    /// `b^T y - c^T x`; zero at an exact optimum.
    pub fn duality_gap(&self, b: &DVector<f64>) -> f64 {
        b.dot(&self.dual) - self.objective
    }
}

const PIVOT_TOL: f64 = 1e-11;
const DEGENERATE_RUN: usize = 50;

pub fn maximize(c: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<SimplexSolution> {
    let (m, n) = a.shape();
    if c.len() != n || b.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "A is {m}x{n}, c has {}, b has {}",
            c.len(),
            b.len()
        )));
    }
    if b.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidArgument("right-hand side must be non-negative".into()));
    }
    let cols = n + m + 1;
    let rhs = n + m;
    // rows 0..m constraints, row m objective (reduced costs, negated)
    let mut t = DMatrix::<f64>::zeros(m + 1, cols);
    for i in 0..m {
        for j in 0..n {
            t[(i, j)] = a[(i, j)];
        }
        t[(i, n + i)] = 1.0;
        t[(i, rhs)] = b[i];
    }
    for j in 0..n {
        t[(m, j)] = -c[j];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    let scale = c.amax().max(1.0);
    let max_pivots = 50 * (n + m) + 1000;
    let mut bland = false;
    let mut degenerate = 0;
    let mut pivots = 0;

    loop {
        let entering = if bland {
            (0..n + m).find(|&j| t[(m, j)] < -PIVOT_TOL * scale)
        } else {
            let (j, v) = (0..n + m)
                .map(|j| (j, t[(m, j)]))
                .fold((usize::MAX, 0.0), |acc, (j, v)| if v < acc.1 { (j, v) } else { acc });
            (v < -PIVOT_TOL * scale).then_some(j)
        };
        let Some(e) = entering else { break };

        // ratio test; ties broken by smallest basis index (Bland)
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let piv = t[(i, e)];
            if piv > PIVOT_TOL {
                let ratio = t[(i, rhs)] / piv;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - 1e-14 || (ratio <= lr + 1e-14 && basis[i] < basis[li]) {
                            Some((i, ratio))
                        } else {
                            Some((li, lr))
                        }
                    }
                };
            }
        }
        let Some((r, ratio)) = leave else {
            return Err(Error::Numerical("LP is unbounded".into()));
        };
        if ratio <= 1e-14 {
            degenerate += 1;
            if degenerate >= DEGENERATE_RUN {
                bland = true;
            }
        } else {
            degenerate = 0;
        }

        let p = t[(r, e)];
        for j in 0..cols {
            t[(r, j)] /= p;
        }
        let pivot_row = t.row(r).clone_owned();
        for i in 0..=m {
            if i != r {
                let f = t[(i, e)];
                if f != 0.0 {
                    for j in 0..cols {
                        t[(i, j)] -= f * pivot_row[j];
                    }
                }
            }
        }
        basis[r] = e;
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::Numerical(format!("simplex exceeded {max_pivots} pivots")));
        }
    }

    let mut x = DVector::zeros(n);
    for (i, &bi) in basis.iter().enumerate() {
        if bi < n {
            x[bi] = t[(i, rhs)].max(0.0);
        }
    }
    let dual = DVector::from_iterator(m, (0..m).map(|i| t[(m, n + i)].max(0.0)));
    Ok(SimplexSolution {
        objective: c.dot(&x),
        x,
        dual,
        pivots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_problem() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18  ->  (2, 6), 36
        let c = DVector::from_vec(vec![3.0, 5.0]);
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 3.0, 2.0]);
        let b = DVector::from_vec(vec![4.0, 12.0, 18.0]);
        let s = maximize(&c, &a, &b).unwrap();
        assert!((s.objective - 36.0).abs() < 1e-12);
        assert!((s.x[0] - 2.0).abs() < 1e-12 && (s.x[1] - 6.0).abs() < 1e-12);
        assert!(s.duality_gap(&b).abs() < 1e-12);
    }

    #[test]
    fn unbounded_is_reported() {
        let c = DVector::from_vec(vec![1.0, 0.0]);
        let a = DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0]);
        assert!(maximize(&c, &a, &b).is_err());
    }

    #[test]
    fn degenerate_problem_terminates() {
        // Beale's cycling example (as a max problem)
        let c = DVector::from_vec(vec![0.75, -20.0, 0.5, -6.0]);
        let a = DMatrix::from_row_slice(
            3,
            4,
            &[0.25, -8.0, -1.0, 9.0, 0.5, -12.0, -0.5, 3.0, 0.0, 0.0, 1.0, 0.0],
        );
        let b = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let s = maximize(&c, &a, &b).unwrap();
        assert!((s.objective - 1.25).abs() < 1e-12);
        assert!(s.duality_gap(&b).abs() < 1e-12);
    }
}
