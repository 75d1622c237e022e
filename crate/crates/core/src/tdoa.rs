//! TDoA positioning model.
//!
//! UAV 1 is the reference receiver. Measurements are range differences
//! `r_i - r_1` (meters) for the auxiliary UAVs `i = 2..N`, so the `c^2`
//! factor of the time-domain bound is already absorbed and every bound is
//! reported in m^2.
//!
//! Besides the bound itself the module carries a measurement simulator and
//! a damped Gauss-Newton estimator so the bound can be checked against
//! Monte-Carlo estimation error.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2xX, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Point, SensorSpec};
use crate::par::{stream_rng, Execution};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// FIM condition number above which a geometry is treated as singular.
pub const MAX_FIM_CONDITION: f64 = 1e12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    /// `Q = delta^2 I`
    #[default]
    Independent,
    /// `Q = delta^2 (I + 11^T) / 2`, the covariance obtained when all
    /// differences share the reference receiver's error.
    ReferenceCorrelated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Standard deviation of each range-difference error, meters (`c * dt`).
    pub delta: f64,
    #[serde(default)]
    pub covariance: CovarianceMode,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            delta: 1.0,
            covariance: CovarianceMode::Independent,
        }
    }
}

impl NoiseModel {
    pub fn independent(delta: f64) -> Self {
        Self {
            delta,
            covariance: CovarianceMode::Independent,
        }
    }

    /// Timing standard deviation in seconds.
    pub fn delta_seconds(&self) -> f64 {
        self.delta / SPEED_OF_LIGHT
    }

    /// Covariance shape `Q / delta^2` for `k` range differences.
    pub fn unit_covariance(&self, k: usize) -> DMatrix<f64> {
        match self.covariance {
            CovarianceMode::Independent => DMatrix::identity(k, k),
            CovarianceMode::ReferenceCorrelated => {
                (DMatrix::identity(k, k) + DMatrix::from_element(k, k, 1.0)) * 0.5
            }
        }
    }

    pub fn covariance(&self, k: usize) -> DMatrix<f64> {
        self.unit_covariance(k) * (self.delta * self.delta)
    }

    fn unit_precision(&self, k: usize) -> DMatrix<f64> {
        match self.covariance {
            CovarianceMode::Independent => DMatrix::identity(k, k),
            // Sherman-Morrison inverse of (I + 11^T) / 2
            CovarianceMode::ReferenceCorrelated => {
                (DMatrix::identity(k, k) - DMatrix::from_element(k, k, 1.0 / (k as f64 + 1.0))) * 2.0
            }
        }
    }
}

/// A transmitter at a horizontal position and height.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Emitter {
    pub position: Point,
    pub height: f64,
}

impl Emitter {
    pub fn new(position: Point, height: f64) -> Self {
        Self { position, height }
    }
}

impl From<&SensorSpec> for Emitter {
    fn from(s: &SensorSpec) -> Self {
        Self::new(s.true_position, s.height)
    }
}

/// 3D distances from each UAV to the emitter.
pub fn ranges(uavs: &[Point], altitude: f64, e: &Emitter) -> Vec<f64> {
    let dh2 = (altitude - e.height).powi(2);
    uavs.iter()
        .map(|u| ((u - e.position).norm_squared() + dh2).sqrt())
        .collect()
}

/// Noise-free range differences `r_i - r_1`, `i = 2..N`.
pub fn range_differences(uavs: &[Point], altitude: f64, e: &Emitter) -> DVector<f64> {
    let r = ranges(uavs, altitude, e);
    DVector::from_iterator(r.len().saturating_sub(1), r[1..].iter().map(|ri| ri - r[0]))
}

/// Derivatives of the range differences with respect to the emitter's
/// horizontal position; column `i - 2` is
/// `((x1 - x)/r1 - (xi - x)/ri, (y1 - y)/r1 - (yi - y)/ri)`.
pub fn jacobian(uavs: &[Point], altitude: f64, e: &Emitter) -> Result<Matrix2xX<f64>> {
    let r = ranges(uavs, altitude, e);
    if r.contains(&0.0) {
        return Err(Error::DegenerateGeometry("a UAV coincides with the emitter".into()));
    }
    let first = (uavs[0] - e.position) / r[0];
    Ok(Matrix2xX::from_fn(uavs.len() - 1, |row, col| {
        let other = (uavs[col + 1] - e.position) / r[col + 1];
        first[row] - other[row]
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrlbResult {
    /// `trace((H Q^-1 H^T)^-1)` in m^2.
    pub bound: f64,
    pub jacobian: Matrix2xX<f64>,
    /// Condition number of the Fisher information matrix.
    pub condition: f64,
}

impl CrlbResult {
    pub fn condition_ok(&self) -> bool {
        self.condition <= MAX_FIM_CONDITION
    }

    /// Root of the bound, in meters.
    pub fn rms_bound(&self) -> f64 {
        self.bound.sqrt()
    }
}

fn sym2_condition(f: &Matrix2<f64>) -> f64 {
    let tr = f[(0, 0)] + f[(1, 1)];
    let det = f[(0, 0)] * f[(1, 1)] - f[(0, 1)] * f[(1, 0)];
    let disc = ((f[(0, 0)] - f[(1, 1)]).powi(2) + 4.0 * f[(0, 1)] * f[(1, 0)]).max(0.0).sqrt();
    let hi = 0.5 * (tr + disc);
    // lo from det/hi avoids cancellation in (tr - disc)
    let lo = if hi > 0.0 { det / hi } else { 0.0 };
    if lo > 0.0 && hi.is_finite() {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Position bound for an emitter observed by `uavs` (UAV 1 first).
pub fn crlb(uavs: &[Point], altitude: f64, e: &Emitter, noise: &NoiseModel) -> Result<CrlbResult> {
    if uavs.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "2D TDoA needs at least 3 receivers, got {}",
            uavs.len()
        )));
    }
    let h = jacobian(uavs, altitude, e)?;
    let k = uavs.len() - 1;
    let p = noise.unit_precision(k);
    let hd = DMatrix::from_column_slice(2, k, h.as_slice());
    let fim_d = &hd * p * hd.transpose();
    let fim = Matrix2::new(fim_d[(0, 0)], fim_d[(0, 1)], fim_d[(1, 0)], fim_d[(1, 1)]);
    let condition = sym2_condition(&fim);
    if !(condition <= MAX_FIM_CONDITION) {
        return Err(Error::SingularGeometry { condition });
    }
    let det = fim[(0, 0)] * fim[(1, 1)] - fim[(0, 1)] * fim[(1, 0)];
    let trace_inv = (fim[(0, 0)] + fim[(1, 1)]) / det;
    Ok(CrlbResult {
        bound: noise.delta * noise.delta * trace_inv,
        jacobian: h,
        condition,
    })
}

/// Noisy range differences `r0 + e` with `e ~ N(0, Q)`.
pub fn simulate_measurements<R: Rng + ?Sized>(
    uavs: &[Point],
    altitude: f64,
    e: &Emitter,
    noise: &NoiseModel,
    rng: &mut R,
) -> DVector<f64> {
    let mut r = range_differences(uavs, altitude, e);
    if noise.delta == 0.0 {
        return r;
    }
    match noise.covariance {
        CovarianceMode::Independent => {
            for x in r.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *x += noise.delta * z;
            }
        }
        CovarianceMode::ReferenceCorrelated => {
            let common: f64 = rng.sample(StandardNormal);
            let s = noise.delta * std::f64::consts::FRAC_1_SQRT_2;
            for x in r.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *x += s * (z + common);
            }
        }
    }
    r
}

/// Same as [`simulate_measurements`] with a dedicated seeded stream.
pub fn simulate_measurements_seeded(
    uavs: &[Point],
    altitude: f64,
    e: &Emitter,
    noise: &NoiseModel,
    seed: u64,
) -> DVector<f64> {
    simulate_measurements(uavs, altitude, e, noise, &mut stream_rng(seed, 0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub position: Point,
    pub iterations: usize,
    /// Weighted squared residual at `position`.
    pub cost: f64,
}

const MAX_ESTIMATOR_ITERATIONS: usize = 100;
const ESTIMATOR_STEP_TOL: f64 = 1e-6;

fn weighted_residual(
    uavs: &[Point],
    altitude: f64,
    height: f64,
    at: &Point,
    measured: &DVector<f64>,
    precision: &DMatrix<f64>,
) -> (DVector<f64>, f64) {
    let r = measured - range_differences(uavs, altitude, &Emitter::new(*at, height));
    let cost = r.dot(&(precision * &r));
    (r, cost)
}

/// Gauss-Newton with Levenberg damping on the `Q`-weighted range-difference
/// residual. Stops once a step shorter than 1 um is accepted.
pub fn estimate_position(
    uavs: &[Point],
    altitude: f64,
    height: f64,
    measured: &DVector<f64>,
    noise: &NoiseModel,
    initial_guess: Point,
) -> Result<Estimate> {
    if uavs.len() < 3 || measured.len() != uavs.len() - 1 {
        return Err(Error::InvalidArgument(format!(
            "{} receivers and {} measurements",
            uavs.len(),
            measured.len()
        )));
    }
    let precision = noise.unit_precision(measured.len());
    let mut x = initial_guess;
    let (mut resid, mut cost) = weighted_residual(uavs, altitude, height, &x, measured, &precision);
    let mut damping = 0.0;
    for it in 1..=MAX_ESTIMATOR_ITERATIONS {
        let h = jacobian(uavs, altitude, &Emitter::new(x, height))?;
        let hd = DMatrix::from_column_slice(2, h.ncols(), h.as_slice());
        let hp = &hd * &precision;
        let normal = &hp * hd.transpose();
        let grad = &hp * &resid;
        let scale = normal[(0, 0)].max(normal[(1, 1)]);
        if !(scale > 0.0) {
            return Err(Error::DegenerateGeometry("zero Jacobian".into()));
        }
        loop {
            let a = Matrix2::new(
                normal[(0, 0)] + damping * normal[(0, 0)].max(1e-12 * scale),
                normal[(0, 1)],
                normal[(1, 0)],
                normal[(1, 1)] + damping * normal[(1, 1)].max(1e-12 * scale),
            );
            let step = a.try_inverse().map(|inv| inv * Vector2::new(grad[0], grad[1]));
            let Some(step) = step.filter(|s| s.iter().all(|v| v.is_finite())) else {
                damping = if damping == 0.0 { 1e-3 } else { damping * 10.0 };
                continue;
            };
            let trial = x + step;
            let (r_new, c_new) = weighted_residual(uavs, altitude, height, &trial, measured, &precision);
            if c_new <= cost {
                x = trial;
                resid = r_new;
                cost = c_new;
                damping = if damping < 1e-9 { 0.0 } else { damping / 10.0 };
                if step.norm() < ESTIMATOR_STEP_TOL {
                    return Ok(Estimate { position: x, iterations: it, cost });
                }
                break;
            }
            // stagnation: no descent even for a tiny damped step
            if step.norm() < ESTIMATOR_STEP_TOL {
                return Ok(Estimate { position: x, iterations: it, cost });
            }
            damping = if damping == 0.0 { 1e-3 } else { damping * 10.0 };
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_ESTIMATOR_ITERATIONS,
        last: x,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonteCarloStats {
    pub rmse: f64,
    pub median_error: f64,
    pub trials: usize,
    /// Trials whose estimator hit the iteration cap (their last iterate is
    /// still counted in the error statistics).
    pub failures: usize,
}

/// Monte-Carlo estimation error. Trial `t` draws from stream `t` of `seed`,
/// so the same trial sees the same standard-normal draws for any `delta`.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo(
    uavs: &[Point],
    altitude: f64,
    emitter: &Emitter,
    initial_guess: Point,
    noise: &NoiseModel,
    trials: usize,
    seed: u64,
    exec: Execution,
) -> Result<MonteCarloStats> {
    let outcomes = exec.map(trials, |t| {
        let mut rng = stream_rng(seed, t as u64);
        let meas = simulate_measurements(uavs, altitude, emitter, noise, &mut rng);
        match estimate_position(uavs, altitude, emitter.height, &meas, noise, initial_guess) {
            Ok(est) => Ok(((est.position - emitter.position).norm(), false)),
            Err(Error::NoConvergence { last, .. }) => Ok(((last - emitter.position).norm(), true)),
            Err(e) => Err(e),
        }
    });
    let mut errors = Vec::with_capacity(trials);
    let mut failures = 0;
    for o in outcomes {
        let (err, failed) = o?;
        errors.push(err);
        failures += failed as usize;
    }
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / trials as f64).sqrt();
    errors.sort_by(f64::total_cmp);
    let median_error = if trials == 0 {
        0.0
    } else if trials % 2 == 1 {
        errors[trials / 2]
    } else {
        0.5 * (errors[trials / 2 - 1] + errors[trials / 2])
    };
    Ok(MonteCarloStats {
        rmse,
        median_error,
        trials,
        failures,
    })
}

/// Auxiliary-UAV offsets relative to UAV 1, in a frame whose +x axis points
/// from UAV 1 toward the sensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Formation {
    pub aux_offsets: Vec<Point>,
}

impl Formation {
    /// Auxiliary UAVs trailing UAV 1 at `range`, +-150 degrees off the
    /// bearing to the sensor.
    pub fn trailing(range: f64) -> Self {
        let a = 150f64.to_radians();
        Self {
            aux_offsets: vec![
                Point::new(a.cos(), a.sin()) * range,
                Point::new(a.cos(), -a.sin()) * range,
            ],
        }
    }

    /// Receiver positions when the sensor is at `sensor` and UAV 1 sits at
    /// horizontal `distance` from it along `bearing` (radians, direction from
    /// UAV 1 to the sensor).
    pub fn place(&self, sensor: &Point, bearing: f64, distance: f64) -> Vec<Point> {
        let rot = nalgebra::Rotation2::new(bearing);
        let dir = rot * Point::new(1.0, 0.0);
        let main = sensor - dir * distance;
        std::iter::once(main)
            .chain(self.aux_offsets.iter().map(|o| main + rot * o))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmsePoint {
    pub distance: f64,
    pub crlb: f64,
    pub rmse: f64,
    pub trials: usize,
}

/// Estimation RMSE and bound as UAV 1 moves away from the sensor with the
/// formation held fixed. All distances share the same trial streams.
#[allow(clippy::too_many_arguments)]
pub fn rmse_vs_distance(
    distances: &[f64],
    formation: &Formation,
    altitude: f64,
    sensor_height: f64,
    noise: &NoiseModel,
    trials: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<RmsePoint>> {
    if trials < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 trials, got {trials}")));
    }
    let sensor = Point::new(0.0, 0.0);
    let emitter = Emitter::new(sensor, sensor_height);
    distances
        .iter()
        .map(|&d| {
            let uavs = formation.place(&sensor, 0.0, d);
            let bound = crlb(&uavs, altitude, &emitter, noise)?;
            let mc = monte_carlo(&uavs, altitude, &emitter, sensor, noise, trials, seed, exec)?;
            Ok(RmsePoint {
                distance: d,
                crlb: bound.bound,
                rmse: mc.rmse,
                trials,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapCell {
    pub x: f64,
    pub y: f64,
    pub crlb: f64,
    pub rmse: f64,
    pub trials: usize,
}

/// Bound and Monte-Carlo RMSE for emitters on a square grid around fixed
/// receivers. Singular cells report an infinite bound and NaN RMSE.
#[allow(clippy::too_many_arguments)]
pub fn crlb_map(
    uavs: &[Point],
    altitude: f64,
    center: Point,
    half_width: f64,
    cells: usize,
    noise: &NoiseModel,
    trials: usize,
    seed: u64,
    exec: Execution,
) -> Vec<MapCell> {
    let step = if cells > 1 { 2.0 * half_width / (cells - 1) as f64 } else { 0.0 };
    let mut out = Vec::with_capacity(cells * cells);
    for j in 0..cells {
        for i in 0..cells {
            let p = center + Point::new(-half_width + i as f64 * step, -half_width + j as f64 * step);
            let e = Emitter::new(p, 0.0);
            let (bound, rmse) = match crlb(uavs, altitude, &e, noise) {
                Ok(c) => {
                    let mc = monte_carlo(uavs, altitude, &e, p, noise, trials, seed, exec);
                    (c.bound, mc.map(|m| m.rmse).unwrap_or(f64::NAN))
                }
                Err(_) => (f64::INFINITY, f64::NAN),
            };
            out.push(MapCell {
                x: p.x,
                y: p.y,
                crlb: bound,
                rmse,
                trials,
            });
        }
    }
    out
}
