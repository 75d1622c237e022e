//! Max-min transmission scheduling for a fixed trajectory.
//!
//! With rates fixed, choosing the fractions `x_m[w]` that maximize the worst
//! normalized upload `lambda = min_m (tau / I_min) sum_w R_m[w] x_m[w]` is a
//! small LP. Each slot row may sum to at most one.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Schedule, TimeGrid};
use crate::simplex;

/// Duality-gap tolerance of the LP solve.
pub const LP_GAP_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub schedule: Schedule,
    pub lambda: f64,
    pub status: LpStatus,
    /// `|dual objective - primal objective|` reported by the solver.
    pub duality_gap: f64,
    /// `(tau / I_min) R_m[w]`, W x M. Kept so the solution can be re-scored.
    pub normalized_rates: DMatrix<f64>,
}

/// Per-sensor `(tau / I_min) sum_w R_m[w] x_m[w]`.
pub fn data_ratios(normalized_rates: &DMatrix<f64>, x: &DMatrix<f64>) -> Vec<f64> {
    (0..x.ncols())
        .map(|m| normalized_rates.column(m).dot(&x.column(m)))
        .collect()
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn solve_schedule(rates: &DMatrix<f64>, grid: &TimeGrid, data_requirement: f64) -> Result<LpSolution> {
    let (w_count, m_count) = rates.shape();
    if w_count != grid.slot_count {
        return Err(Error::DimensionMismatch(format!(
            "{w_count} rate rows for {} slots",
            grid.slot_count
        )));
    }
    if m_count == 0 {
        return Err(Error::InvalidArgument("no sensors".into()));
    }
    if rates.iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
        return Err(Error::InvalidArgument("rates must be finite and non-negative".into()));
    }
    if !(data_requirement > 0.0) {
        return Err(Error::InvalidArgument("I_min must be positive".into()));
    }
    let a = rates * (grid.slot_length / data_requirement);
    for m in 0..m_count {
        if a.column(m).iter().all(|&v| v == 0.0) {
            warn!("sensor {} has zero rate in every slot; lambda is 0", m + 1);
        }
    }

    // variables: x[w][m] at w * M + m, then lambda
    let n = w_count * m_count + 1;
    let lam = n - 1;
    let rows = w_count + m_count;
    let mut lp = DMatrix::zeros(rows, n);
    let mut b = DVector::zeros(rows);
    for w in 0..w_count {
        for m in 0..m_count {
            lp[(w, w * m_count + m)] = 1.0;
        }
        b[w] = 1.0;
    }
    for m in 0..m_count {
        let r = w_count + m;
        lp[(r, lam)] = 1.0;
        for w in 0..w_count {
            lp[(r, w * m_count + m)] = -a[(w, m)];
        }
    }
    let mut c = DVector::zeros(n);
    c[lam] = 1.0;

    let sol = simplex::maximize(&c, &lp, &b)?;
    let gap = sol.duality_gap(&b).abs();
    if gap > LP_GAP_TOL * sol.objective.abs().max(1.0) {
        return Err(Error::Numerical(format!("LP duality gap {gap:.3e} above tolerance")));
    }
    let mut x = DMatrix::from_fn(w_count, m_count, |w, m| sol.x[w * m_count + m].clamp(0.0, 1.0));
    for w in 0..w_count {
        let s = x.row(w).sum();
        if s > 1.0 {
            x.row_mut(w).scale_mut(1.0 / s);
        }
    }
    // report lambda as realized by the returned schedule
    let lambda = min_of(&data_ratios(&a, &x));
    Ok(LpSolution {
        schedule: Schedule { x },
        lambda,
        status: LpStatus::Optimal,
        duality_gap: gap,
        normalized_rates: a,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundedSchedule {
    pub schedule: Schedule,
    pub lambda: f64,
    /// Relaxed lambda minus rounded lambda (never negative).
    pub degradation: f64,
}

/// Binary schedule from a relaxed solution.
///
/// Each slot goes to its largest fraction (lowest sensor index on ties; slots
/// the LP left idle stay idle). Then, while possible, one slot is handed to
/// the currently worst sensor if that strictly raises the minimum.
pub fn round_schedule(sol: &LpSolution) -> RoundedSchedule {
    let a = &sol.normalized_rates;
    let (w_count, m_count) = a.shape();
    let mut owner: Vec<Option<usize>> = (0..w_count)
        .map(|w| {
            let row = sol.schedule.x.row(w);
            let mut best: Option<usize> = None;
            for m in 0..m_count {
                if row[m] > 1e-9 && best.is_none_or(|b| row[m] > row[b]) {
                    best = Some(m);
                }
            }
            best
        })
        .collect();

    let mut ratios = vec![0.0; m_count];
    for (w, o) in owner.iter().enumerate() {
        if let Some(m) = *o {
            ratios[m] += a[(w, m)];
        }
    }
    loop {
        let cur = min_of(&ratios);
        let worst = (0..m_count).find(|&m| ratios[m] == cur).unwrap_or(0);
        let mut best: Option<(usize, f64)> = None;
        for w in 0..w_count {
            if owner[w] == Some(worst) || a[(w, worst)] == 0.0 {
                continue;
            }
            let mut trial = ratios.clone();
            trial[worst] += a[(w, worst)];
            if let Some(o) = owner[w] {
                trial[o] -= a[(w, o)];
            }
            let new_min = min_of(&trial);
            if new_min > cur * (1.0 + 1e-12) + 1e-300 && best.is_none_or(|(_, v)| new_min > v) {
                best = Some((w, new_min));
            }
        }
        let Some((w, _)) = best else { break };
        if let Some(o) = owner[w] {
            ratios[o] -= a[(w, o)];
        }
        ratios[worst] += a[(w, worst)];
        owner[w] = Some(worst);
    }

    let mut x = DMatrix::zeros(w_count, m_count);
    for (w, o) in owner.iter().enumerate() {
        if let Some(m) = *o {
            x[(w, m)] = 1.0;
        }
    }
    let lambda = min_of(&data_ratios(a, &x));
    RoundedSchedule {
        schedule: Schedule { x },
        lambda,
        degradation: (sol.lambda - lambda).max(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::par::stream_rng;
    use rand::Rng;

    fn grid(w: usize) -> TimeGrid {
        TimeGrid::new(w, 1.0)
    }

    /// Dual oracle: `lambda* = min over the simplex of sum_w max_m mu_m a[w][m]`.
    /// The objective is piecewise linear, so the minimum sits on a vertex of
    /// the arrangement of breakpoint lines (`M <= 3`).
    fn dual_oracle(a: &DMatrix<f64>) -> f64 {
        let (w_count, m_count) = a.shape();
        let f = |mu: &[f64]| -> f64 {
            (0..w_count)
                .map(|w| (0..m_count).map(|m| mu[m] * a[(w, m)]).fold(0.0, f64::max))
                .sum()
        };
        match m_count {
            1 => f(&[1.0]),
            2 => {
                let mut cands = vec![0.0, 1.0];
                for w in 0..w_count {
                    let s = a[(w, 0)] + a[(w, 1)];
                    if s > 0.0 {
                        cands.push(a[(w, 1)] / s);
                    }
                }
                cands.iter().map(|&t| f(&[t, 1.0 - t])).fold(f64::INFINITY, f64::min)
            }
            3 => {
                // lines p*mu1 + q*mu2 = r with mu3 = 1 - mu1 - mu2
                let mut lines = vec![(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (1.0, 1.0, 1.0)];
                for w in 0..w_count {
                    let (a1, a2, a3) = (a[(w, 0)], a[(w, 1)], a[(w, 2)]);
                    lines.push((a1, -a2, 0.0));
                    lines.push((a1 + a3, a3, a3));
                    lines.push((a3, a2 + a3, a3));
                }
                let mut best = f64::INFINITY;
                for i in 0..lines.len() {
                    for j in i + 1..lines.len() {
                        let (p1, q1, r1) = lines[i];
                        let (p2, q2, r2) = lines[j];
                        let det = p1 * q2 - p2 * q1;
                        if det.abs() < 1e-14 {
                            continue;
                        }
                        let m1 = (r1 * q2 - r2 * q1) / det;
                        let m2 = (p1 * r2 - p2 * r1) / det;
                        let m3 = 1.0 - m1 - m2;
                        if m1 >= -1e-12 && m2 >= -1e-12 && m3 >= -1e-12 {
                            best = best.min(f(&[m1.max(0.0), m2.max(0.0), m3.max(0.0)]));
                        }
                    }
                }
                best
            }
            _ => unimplemented!(),
        }
    }

    /// Best binary schedule by enumerating every owner assignment (idle allowed).
    fn binary_oracle(a: &DMatrix<f64>) -> f64 {
        let (w_count, m_count) = a.shape();
        let total = (m_count + 1).pow(w_count as u32);
        let mut best = 0.0f64;
        for code in 0..total {
            let mut c = code;
            let mut r = vec![0.0; m_count];
            for w in 0..w_count {
                let o = c % (m_count + 1);
                c /= m_count + 1;
                if o < m_count {
                    r[o] += a[(w, o)];
                }
            }
            best = best.max(min_of(&r));
        }
        best
    }

    fn random_rates(rng: &mut impl Rng, w: usize, m: usize) -> DMatrix<f64> {
        DMatrix::from_fn(w, m, |_, _| rng.random_range(0.0..10.0))
    }

    #[test]
    fn single_sensor_takes_everything() {
        let rates = DMatrix::from_element(10, 1, 3.0);
        let s = solve_schedule(&rates, &TimeGrid::new(10, 0.5), 2.0).unwrap();
        assert!((s.lambda - 0.5 * 10.0 * 3.0 / 2.0).abs() < 1e-12);
        assert!(s.schedule.x.iter().all(|&x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn identical_sensors_split_evenly() {
        let rates = DMatrix::from_element(7, 2, 4.0);
        let s = solve_schedule(&rates, &grid(7), 1.0).unwrap();
        assert!((s.lambda - 7.0 * 4.0 / 2.0).abs() < 1e-9);
        assert!(s.schedule.violations().is_empty());
    }

    #[test]
    fn four_slot_example() {
        let rates = DMatrix::from_row_slice(4, 2, &[2.0, 1.0, 2.0, 1.0, 1.0, 2.0, 1.0, 2.0]);
        let s = solve_schedule(&rates, &grid(4), 1.0).unwrap();
        let oracle = dual_oracle(&rates);
        assert!((oracle - 4.0).abs() < 1e-12);
        assert!((s.lambda - oracle).abs() < 1e-9);
        let r = round_schedule(&s);
        assert_eq!(r.schedule.x, DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]));
    }

    #[test]
    fn zero_rate_sensor_gives_zero_lambda() {
        let mut rates = DMatrix::from_element(5, 2, 1.0);
        rates.column_mut(1).fill(0.0);
        let s = solve_schedule(&rates, &grid(5), 1.0).unwrap();
        assert_eq!(s.lambda, 0.0);
    }

    #[test]
    fn matches_dual_oracle_and_dominates_binary() {
        let mut rng = stream_rng(77, 0);
        for trial in 0..60 {
            let w = 2 + trial % 5;
            let m = 1 + trial % 3;
            let rates = random_rates(&mut rng, w, m);
            let s = solve_schedule(&rates, &grid(w), 1.0).unwrap();
            let dual = dual_oracle(&rates);
            assert!((s.lambda - dual).abs() <= 1e-9 * dual.max(1.0), "{} vs {}", s.lambda, dual);
            let ratios = data_ratios(&s.normalized_rates, &s.schedule.x);
            assert!((min_of(&ratios) - s.lambda).abs() <= 1e-9 * s.lambda.max(1.0));
            assert!(s.schedule.violations().is_empty());
            let bin = binary_oracle(&rates);
            assert!(s.lambda >= bin - 1e-9);
            let r = round_schedule(&s);
            assert!(r.schedule.is_binary());
            assert!(r.lambda <= bin + 1e-12);
        }
    }

    #[test]
    fn rounding_never_beats_relaxation() {
        let mut rng = stream_rng(78, 0);
        for _ in 0..100 {
            let rates = random_rates(&mut rng, 12, 4);
            let s = solve_schedule(&rates, &grid(12), 1.0).unwrap();
            let r = round_schedule(&s);
            assert!(r.lambda <= s.lambda + 1e-9);
            assert!(r.degradation >= 0.0);
            assert!(r.schedule.violations().is_empty());
        }
    }

    #[test]
    fn binary_input_is_unchanged() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 0.2, 1.0, 1.0, 1.0]);
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        let lambda = min_of(&data_ratios(&a, &x));
        let sol = LpSolution {
            schedule: Schedule { x: x.clone() },
            lambda,
            status: LpStatus::Optimal,
            duality_gap: 0.0,
            normalized_rates: a,
        };
        let r = round_schedule(&sol);
        assert_eq!(r.schedule.x, x);
        assert_eq!(r.degradation, 0.0);
    }

    #[test]
    fn half_split_tie_goes_to_lower_index() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let sol = LpSolution {
            schedule: Schedule {
                x: DMatrix::from_row_slice(1, 2, &[0.5, 0.5]),
            },
            lambda: 0.5,
            status: LpStatus::Optimal,
            duality_gap: 0.0,
            normalized_rates: a,
        };
        let r = round_schedule(&sol);
        assert_eq!(r.schedule.x, DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        assert_eq!(r.lambda, 0.0);
        assert_eq!(r.degradation, 0.5);
    }

    #[test]
    fn scaling_rates_scales_lambda() {
        let mut rng = stream_rng(79, 0);
        let rates = random_rates(&mut rng, 9, 3);
        let s = solve_schedule(&rates, &grid(9), 1.0).unwrap();
        let k = 3.7;
        let scaled = solve_schedule(&(&rates * k), &grid(9), 1.0).unwrap();
        assert!((scaled.lambda - k * s.lambda).abs() < 1e-9 * scaled.lambda);
        let achieved = min_of(&data_ratios(&(&rates * k), &s.schedule.x));
        assert!((achieved - k * s.lambda).abs() < 1e-9 * scaled.lambda);
    }

    #[test]
    fn dimension_mismatch() {
        let rates = DMatrix::from_element(3, 2, 1.0);
        assert!(matches!(
            solve_schedule(&rates, &grid(4), 1.0),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
