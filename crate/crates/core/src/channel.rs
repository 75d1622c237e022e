//! Ground-to-air channel: distance-only path loss, SINR, achievable rate and
//! uploaded data accounting.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Point, Scenario, Schedule, SensorSpec, Trajectory};
use crate::par::Execution;

/// Linear-scale channel parameters. Serialized with dB / dBm fields and
/// converted once at parse time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "ChannelConfig", into = "ChannelConfig")]
pub struct ChannelParams {
    /// Power gain at the 1 m reference distance (linear).
    pub beta0: f64,
    /// Path-loss exponent.
    pub alpha: f64,
    /// Total bandwidth B0 in Hz.
    pub bandwidth: f64,
    /// Receiver noise power in W.
    pub noise_power: f64,
    /// Sensor transmit power in W.
    pub transmit_power: f64,
}

#[derive(Serialize, Deserialize)]
struct ChannelConfig {
    #[serde(rename = "beta0_dB")]
    beta0_db: f64,
    alpha: f64,
    #[serde(rename = "B0")]
    bandwidth: f64,
    #[serde(rename = "sigma2_dBm")]
    noise_power_dbm: f64,
    #[serde(rename = "P_t")]
    transmit_power: f64,
}

impl From<ChannelConfig> for ChannelParams {
    fn from(c: ChannelConfig) -> Self {
        Self {
            beta0: db_to_linear(c.beta0_db),
            alpha: c.alpha,
            bandwidth: c.bandwidth,
            noise_power: dbm_to_watts(c.noise_power_dbm),
            transmit_power: c.transmit_power,
        }
    }
}

impl From<ChannelParams> for ChannelConfig {
    fn from(p: ChannelParams) -> Self {
        Self {
            beta0_db: 10.0 * p.beta0.log10(),
            alpha: p.alpha,
            bandwidth: p.bandwidth,
            noise_power_dbm: 10.0 * p.noise_power.log10() + 30.0,
            transmit_power: p.transmit_power,
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

impl Default for ChannelParams {
    /// -60 dB reference gain, alpha = 2, 1 MHz, -110 dBm noise, 0.1 W.
    fn default() -> Self {
        Self {
            beta0: 1e-6,
            alpha: 2.0,
            bandwidth: 1e6,
            noise_power: 1e-14,
            transmit_power: 0.1,
        }
    }
}

impl ChannelParams {
    /// Reference SNR `c0 = P_t * beta0 / sigma^2`.
    pub fn c0(&self) -> f64 {
        self.transmit_power * self.beta0 / self.noise_power
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, value) in [
            ("beta0", self.beta0),
            ("B0", self.bandwidth),
            ("sigma2", self.noise_power),
            ("P_t", self.transmit_power),
        ] {
            if !(value > 0.0) {
                v.push(format!("{name} must be positive"));
            }
        }
        if !(self.alpha >= 2.0) {
            v.push("alpha must be at least 2".into());
        }
        v
    }

    /// Rate with exclusive use of the band as a function of the squared
    /// horizontal distance `q` and the altitude gap `dh`.
    pub fn rate_from_sq_distance(&self, q: f64, dh: f64) -> f64 {
        let d2 = q + dh * dh;
        self.bandwidth * (1.0 + self.c0() / d2.powf(self.alpha / 2.0)).log2()
    }
}

/// Linear power gain between a UAV at `u` (altitude `altitude`) and a ground
/// point `s` at height `height`.
pub fn path_loss_at(u: &Point, s: &Point, height: f64, altitude: f64, p: &ChannelParams) -> Result<f64> {
    let d2 = (u - s).norm_squared() + (altitude - height).powi(2);
    if d2 == 0.0 {
        return Err(Error::DegenerateGeometry("UAV and sensor coincide".into()));
    }
    Ok(p.beta0 * d2.powf(-p.alpha / 2.0))
}

/// Path loss to the sensor's true position.
pub fn path_loss(u: &Point, sensor: &SensorSpec, altitude: f64, p: &ChannelParams) -> Result<f64> {
    path_loss_at(u, &sensor.true_position, sensor.height, altitude, p)
}

/// Achievable rate of `sensor` while `co_channel` sensors share the band
/// (`K = 1 + co_channel.len()`). The band is split evenly; the other
/// sensors' received powers count as interference.
///
/// With `K > 1` the interference uses each interferer's own path loss. This
/// path is experimental since planning only uses `K_max = 1`.
pub fn rate(
    u: &Point,
    sensor: &SensorSpec,
    co_channel: &[SensorSpec],
    p: &ChannelParams,
    altitude: f64,
) -> Result<f64> {
    let k = 1 + co_channel.len();
    let signal = p.transmit_power * path_loss(u, sensor, altitude, p)?;
    let mut interference = 0.0;
    for other in co_channel {
        interference += p.transmit_power * path_loss(u, other, altitude, p)?;
    }
    let sinr = signal / (interference + p.noise_power);
    Ok(p.bandwidth / k as f64 * (1.0 + sinr).log2())
}

/// Point of the uncertainty disk farthest from `u` in the horizontal plane.
pub fn worst_case_point(u: &Point, sensor: &SensorSpec) -> Point {
    let away = sensor.rough_center - u;
    let n = away.norm();
    let dir = if n > 0.0 { away / n } else { Point::new(1.0, 0.0) };
    sensor.rough_center + dir * sensor.uncertainty_radius
}

/// Horizontal distance from `u` to the farthest point of the uncertainty disk.
pub fn worst_case_distance(u: &Point, sensor: &SensorSpec) -> f64 {
    (u - sensor.rough_center).norm() + sensor.uncertainty_radius
}

/// Exclusive-band rate assuming the sensor sits at the far edge of its disk.
pub fn worst_case_rate(u: &Point, sensor: &SensorSpec, p: &ChannelParams, altitude: f64) -> f64 {
    let d = worst_case_distance(u, sensor);
    p.rate_from_sq_distance(d * d, altitude - sensor.height)
}

/// Worst-case rates `R_m[w]` for slots `1..=W` (row `w - 1`).
pub fn rate_matrix(traj: &Trajectory, scenario: &Scenario, exec: Execution) -> DMatrix<f64> {
    let w_count = traj.slot_count();
    let m_count = scenario.sensor_count();
    let h = scenario.fleet.altitude;
    let rows = exec.map(w_count, |w| {
        let u = traj.waypoints[w + 1];
        scenario
            .sensors
            .iter()
            .map(|s| worst_case_rate(&u, s, &scenario.channel, h))
            .collect::<Vec<_>>()
    });
    DMatrix::from_fn(w_count, m_count, |w, m| rows[w][m])
}

/// Rates at the sensors' true positions (what would actually be received).
pub fn true_rate_matrix(traj: &Trajectory, scenario: &Scenario) -> DMatrix<f64> {
    let h = scenario.fleet.altitude;
    DMatrix::from_fn(traj.slot_count(), scenario.sensor_count(), |w, m| {
        let s = &scenario.sensors[m];
        let q = (traj.waypoints[w + 1] - s.true_position).norm_squared();
        scenario.channel.rate_from_sq_distance(q, h - s.height)
    })
}

/// Bits uploaded per sensor, `tau * sum_w R_m[w] x_m[w]`, from a rate table.
pub fn data_from_rates(rates: &DMatrix<f64>, sched: &Schedule, tau: f64) -> Result<Vec<f64>> {
    if rates.shape() != sched.x.shape() {
        return Err(Error::DimensionMismatch(format!(
            "rates {:?} vs schedule {:?}",
            rates.shape(),
            sched.x.shape()
        )));
    }
    Ok((0..rates.ncols())
        .map(|m| tau * rates.column(m).dot(&sched.x.column(m)))
        .collect())
}

/// Worst-case bits uploaded per sensor over the task.
pub fn uploaded_data(traj: &Trajectory, sched: &Schedule, scenario: &Scenario) -> Result<Vec<f64>> {
    let rates = rate_matrix(traj, scenario, Execution::Sequential);
    data_from_rates(&rates, sched, scenario.grid.slot_length)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{straight_line_trajectory, TimeGrid};
    use proptest::prelude::*;

    fn below(h: f64) -> (Point, SensorSpec) {
        (Point::new(0.0, 0.0), SensorSpec::exact(Point::new(0.0, 0.0), h))
    }

    #[test]
    fn reference_distance_gain_is_beta0() {
        let p = ChannelParams::default();
        let (u, s) = below(99.0);
        let g = path_loss(&u, &s, 100.0, &p).unwrap();
        assert!((g - p.beta0).abs() < 1e-20);
    }

    #[test]
    fn gain_directly_below() {
        let p = ChannelParams::default();
        let (u, s) = below(0.0);
        let g = path_loss(&u, &s, 100.0, &p).unwrap();
        assert!((g - 1e-10).abs() < 1e-22);
    }

    #[test]
    fn inverse_square() {
        let p = ChannelParams::default();
        let s = SensorSpec::exact(Point::new(0.0, 0.0), 0.0);
        let near = path_loss(&Point::new(300.0, 0.0), &s, 400.0, &p).unwrap();
        let far = path_loss(&Point::new(600.0, 0.0), &s, 800.0, &p).unwrap();
        assert!((far / near - 0.25).abs() < 1e-12);
    }

    #[test]
    fn coincident_points_are_degenerate() {
        let p = ChannelParams::default();
        let (u, s) = below(100.0);
        assert!(matches!(path_loss(&u, &s, 100.0, &p), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn db_conversion() {
        assert!((db_to_linear(-60.0) - 1e-6).abs() < 1e-20);
        assert!((dbm_to_watts(-110.0) - 1e-14).abs() < 1e-26);
        assert!((ChannelParams::default().c0() - 1e7).abs() < 1e-6);
    }

    #[test]
    fn rate_directly_below() {
        // c0 = 0.1 * 1e-6 / 1e-14 = 1e7, d^2 = 1e4, SINR = 1e3
        let p = ChannelParams::default();
        let (u, s) = below(0.0);
        let r = rate(&u, &s, &[], &p, 100.0).unwrap();
        let expected = 1e6 * 1001f64.log2();
        assert!((r - expected).abs() < 1e-6);
        assert!((r - 9.967226e6).abs() < 1.0);
    }

    #[test]
    fn zero_signal_zero_rate() {
        let p = ChannelParams {
            transmit_power: 0.0,
            ..ChannelParams::default()
        };
        let (u, s) = below(0.0);
        assert_eq!(rate(&u, &s, &[], &p, 100.0).unwrap(), 0.0);
    }

    #[test]
    fn rate_decreases_with_distance() {
        let p = ChannelParams::default();
        let s = SensorSpec::exact(Point::new(0.0, 0.0), 0.0);
        let r: Vec<f64> = [0.0, 150.0, 600.0]
            .iter()
            .map(|&x| rate(&Point::new(x, 0.0), &s, &[], &p, 100.0).unwrap())
            .collect();
        assert!(r[0] > r[1] && r[1] > r[2]);
    }

    #[test]
    fn shared_band_splits_bandwidth_and_adds_interference() {
        let p = ChannelParams::default();
        let s = SensorSpec::exact(Point::new(0.0, 0.0), 0.0);
        let other = SensorSpec::exact(Point::new(300.0, 0.0), 0.0);
        let u = Point::new(0.0, 0.0);
        let alone = rate(&u, &s, &[], &p, 100.0).unwrap();
        let shared = rate(&u, &s, &[other], &p, 100.0).unwrap();
        assert!(shared < alone / 2.0);
    }

    #[test]
    fn worst_case_degenerate_disk_and_center() {
        let p = ChannelParams::default();
        let mut s = SensorSpec::exact(Point::new(200.0, 50.0), 0.0);
        let u = Point::new(120.0, 10.0);
        assert_eq!(worst_case_rate(&u, &s, &p, 100.0), rate(&u, &s, &[], &p, 100.0).unwrap());
        s.uncertainty_radius = 10.0;
        let at_center = worst_case_rate(&s.rough_center, &s, &p, 100.0);
        let ring = SensorSpec::exact(s.rough_center + Point::new(10.0, 0.0), 0.0);
        let expected = rate(&s.rough_center, &ring, &[], &p, 100.0).unwrap();
        assert!((at_center - expected).abs() < 1e-6);
    }

    #[test]
    fn worst_case_minimum_lies_on_far_boundary() {
        // dense grid over the disk: the minimum rate is at the far point
        let p = ChannelParams::default();
        let s = SensorSpec {
            true_position: Point::new(400.0, 300.0),
            height: 0.0,
            rough_center: Point::new(400.0, 300.0),
            uncertainty_radius: 10.0,
        };
        let u = Point::new(350.0, 260.0);
        let wc = worst_case_rate(&u, &s, &p, 100.0);
        let mut min_rate = f64::INFINITY;
        for i in -40..=40 {
            for j in -40..=40 {
                let d = Point::new(i as f64, j as f64) * 0.25;
                if d.norm() <= 10.0 {
                    let probe = SensorSpec::exact(s.rough_center + d, 0.0);
                    min_rate = min_rate.min(rate(&u, &probe, &[], &p, 100.0).unwrap());
                }
            }
        }
        assert!(wc <= min_rate + 1e-9);
        assert!((wc - min_rate) / wc < 1e-4);
        let far = worst_case_point(&u, &s);
        assert!(((far - u).norm() - worst_case_distance(&u, &s)).abs() < 1e-9);
    }

    #[test]
    fn uploaded_data_examples() {
        let mut sc = Scenario::reference();
        sc.grid = TimeGrid::new(4, 2.0);
        sc.fleet.end = Point::new(100.0, 0.0);
        let traj = straight_line_trajectory(&sc.fleet, &sc.grid).unwrap();
        let mut sched = Schedule::zeros(4, 5);
        assert!(uploaded_data(&traj, &sched, &sc).unwrap().iter().all(|&d| d == 0.0));

        let r = worst_case_rate(&traj.waypoints[3], &sc.sensors[1], &sc.channel, 100.0);
        sched.x[(2, 1)] = 1.0;
        let d = uploaded_data(&traj, &sched, &sc).unwrap();
        assert!((d[1] - 2.0 * r).abs() < 1e-6);
        sched.x[(2, 1)] = 0.5;
        let half = uploaded_data(&traj, &sched, &sc).unwrap();
        assert!((half[1] - r).abs() < 1e-6);
    }

    fn reference_rate(u: (f64, f64), s: (f64, f64), dh: f64, p: &ChannelParams) -> f64 {
        // transcribed directly: B0 log2(1 + c0 / d^alpha) with d the 3D distance
        let d = ((u.0 - s.0).powi(2) + (u.1 - s.1).powi(2) + dh * dh).sqrt();
        let c0 = p.transmit_power * p.beta0 / p.noise_power;
        p.bandwidth * (1.0 + c0 / d.powf(p.alpha)).log2()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn single_link_rate_matches_formula(
            ux in -1000.0..1000.0f64, uy in -1000.0..1000.0f64,
            sx in 0.0..1000.0f64, sy in 0.0..1000.0f64,
            h in 0.0..20.0f64, alpha in 2.0..4.0f64,
        ) {
            let p = ChannelParams { alpha, ..ChannelParams::default() };
            let s = SensorSpec::exact(Point::new(sx, sy), h);
            let r = rate(&Point::new(ux, uy), &s, &[], &p, 100.0).unwrap();
            let expected = reference_rate((ux, uy), (sx, sy), 100.0 - h, &p);
            prop_assert!(((r - expected) / expected).abs() < 1e-12);
        }

        #[test]
        fn uploaded_data_is_linear(a in 0.0..1.0f64, b in 0.0..1.0f64, k in 0.0..1.0f64) {
            let mut sc = Scenario::reference();
            sc.grid = TimeGrid::new(3, 1.0);
            sc.fleet.end = Point::new(60.0, 0.0);
            let traj = straight_line_trajectory(&sc.fleet, &sc.grid).unwrap();
            let mut s1 = Schedule::zeros(3, 5);
            let mut s2 = Schedule::zeros(3, 5);
            s1.x[(0, 0)] = a; s1.x[(1, 3)] = b;
            s2.x[(0, 0)] = b; s2.x[(2, 4)] = a;
            let combo = Schedule { x: &s1.x * k + &s2.x * (1.0 - k) };
            let d1 = uploaded_data(&traj, &s1, &sc).unwrap();
            let d2 = uploaded_data(&traj, &s2, &sc).unwrap();
            let dc = uploaded_data(&traj, &combo, &sc).unwrap();
            for m in 0..5 {
                let lin = k * d1[m] + (1.0 - k) * d2[m];
                prop_assert!((dc[m] - lin).abs() <= 1e-9 * lin.abs().max(1.0));
            }
        }
    }

    #[test]
    fn worst_case_never_exceeds_true_rate() {
        use rand::Rng;
        let p = ChannelParams::default();
        let mut rng = crate::par::stream_rng(11, 0);
        let center = Point::new(500.0, 500.0);
        for _ in 0..1000 {
            let u = Point::new(rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0));
            let rad: f64 = 10.0 * rng.random::<f64>().sqrt();
            let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let s = SensorSpec {
                true_position: center + Point::new(ang.cos(), ang.sin()) * rad,
                height: 0.0,
                rough_center: center,
                uncertainty_radius: 10.0,
            };
            let wc = worst_case_rate(&u, &s, &p, 100.0);
            assert!(wc <= rate(&u, &s, &[], &p, 100.0).unwrap() + 1e-9);
        }
    }
}
