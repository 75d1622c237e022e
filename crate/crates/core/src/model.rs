//! Domain types shared by every planner stage: sensors, fleet, time grid,
//! scenario, trajectories and schedules.
//!
//! Coordinates are planar meters. Altitudes are scalar attributes and never a
//! third coordinate.

use nalgebra::{DMatrix, Vector2};
use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::energy::EnergyParams;
use crate::error::{Error, Result};
use crate::tdoa::NoiseModel;

pub type Point = Vector2<f64>;

/// Absolute tolerance for geometric and feasibility checks (SI units).
pub const GEOM_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub true_position: Point,
    #[serde(rename = "h_m", default)]
    pub height: f64,
    pub rough_center: Point,
    #[serde(rename = "r_u", default)]
    pub uncertainty_radius: f64,
}

impl SensorSpec {
    /// Sensor whose position is known exactly.
    pub fn exact(position: Point, height: f64) -> Self {
        Self {
            true_position: position,
            height,
            rough_center: position,
            uncertainty_radius: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    #[serde(rename = "T")]
    pub period: f64,
    #[serde(rename = "W")]
    pub slot_count: usize,
    #[serde(rename = "tau")]
    pub slot_length: f64,
}

impl TimeGrid {
    pub fn new(slot_count: usize, slot_length: f64) -> Self {
        Self {
            period: slot_count as f64 * slot_length,
            slot_count,
            slot_length,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FleetSpec {
    #[serde(rename = "N")]
    pub uav_count: usize,
    #[serde(rename = "H")]
    pub altitude: f64,
    #[serde(rename = "u_s")]
    pub start: Point,
    #[serde(rename = "u_e")]
    pub end: Point,
    #[serde(rename = "V_max")]
    pub max_speed: f64,
    #[serde(rename = "R_max")]
    pub max_range: f64,
    #[serde(rename = "E_max")]
    pub max_energy: f64,
}

fn default_k_max() -> usize {
    1
}

/// A complete problem instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(rename = "L")]
    pub area_side: f64,
    pub sensors: Vec<SensorSpec>,
    pub fleet: FleetSpec,
    pub grid: TimeGrid,
    #[serde(default)]
    pub channel: ChannelParams,
    #[serde(default)]
    pub energy: EnergyParams,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(rename = "I_min")]
    pub data_requirement: f64,
    #[serde(rename = "K_max", default = "default_k_max")]
    pub max_connected: usize,
}

impl Scenario {
    /// Simulation defaults with the given sensors: 1 km square, 3 UAVs at
    /// 100 m, 100 one-second slots, 30 m/s, 50 m range, 20 Mbit per sensor.
    pub fn defaults_with_sensors(sensors: Vec<SensorSpec>) -> Self {
        Self {
            area_side: 1000.0,
            sensors,
            fleet: FleetSpec {
                uav_count: 3,
                altitude: 100.0,
                start: Point::new(0.0, 0.0),
                end: Point::new(1000.0, 0.0),
                max_speed: 30.0,
                max_range: 50.0,
                max_energy: 700e3,
            },
            grid: TimeGrid::new(100, 1.0),
            channel: ChannelParams::default(),
            energy: EnergyParams::default(),
            noise: NoiseModel::default(),
            data_requirement: 20e6,
            max_connected: 1,
        }
    }

    /// Reference deployment with five sensors and 10 m position uncertainty.
    pub fn reference() -> Self {
        let layout = [
            ((180.0, 120.0), (186.0, 114.0)),
            ((330.0, 420.0), (324.0, 428.0)),
            ((520.0, 160.0), (527.0, 153.0)),
            ((700.0, 380.0), (694.0, 372.0)),
            ((880.0, 90.0), (886.0, 97.0)),
        ];
        let sensors = layout
            .iter()
            .map(|&((tx, ty), (cx, cy))| SensorSpec {
                true_position: Point::new(tx, ty),
                height: 0.0,
                rough_center: Point::new(cx, cy),
                uncertainty_radius: 10.0,
            })
            .collect();
        Self::defaults_with_sensors(sensors)
    }

    /// Single-sensor positioning geometry: UAV 1 flies a 30-slot straight
    /// line through (200, 100) at slot 15; the sensor sits 20 m east and
    /// 100 m north of that point.
    pub fn mini() -> Self {
        let mut s = Self::defaults_with_sensors(vec![SensorSpec::exact(Point::new(220.0, 200.0), 0.0)]);
        s.area_side = 400.0;
        s.fleet.start = Point::new(50.0, 130.0);
        s.fleet.end = Point::new(350.0, 70.0);
        s.grid = TimeGrid::new(30, 1.0);
        s
    }

    pub fn sensor_count(&self) -> usize {
        self.sensors.len()
    }

    /// Check every invariant, reporting all violations at once.
    pub fn validate(self) -> Result<Self> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidScenario(violations))
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let g = &self.grid;
        if g.slot_count == 0 {
            v.push("W must be positive".into());
        }
        if !(g.slot_length > 0.0) {
            v.push("tau must be positive".into());
        }
        if (g.period - g.slot_count as f64 * g.slot_length).abs() > GEOM_TOL {
            v.push(format!(
                "T = {} does not equal W*tau = {}",
                g.period,
                g.slot_count as f64 * g.slot_length
            ));
        }
        let f = &self.fleet;
        if f.uav_count < 3 {
            v.push(format!("N = {} but 2D TDoA needs at least 3 UAVs", f.uav_count));
        }
        for (name, value) in [
            ("V_max", f.max_speed),
            ("R_max", f.max_range),
            ("E_max", f.max_energy),
            ("H", f.altitude),
        ] {
            if !(value > 0.0) {
                v.push(format!("{name} must be positive"));
            }
        }
        if !(self.area_side > 0.0) {
            v.push("L must be positive".into());
        }
        if self.sensors.is_empty() {
            v.push("at least one sensor is required".into());
        }
        let inside = |p: &Point| {
            (-GEOM_TOL..=self.area_side + GEOM_TOL).contains(&p.x)
                && (-GEOM_TOL..=self.area_side + GEOM_TOL).contains(&p.y)
        };
        for (m, s) in self.sensors.iter().enumerate() {
            if !(s.uncertainty_radius >= 0.0) {
                v.push(format!("sensor {m}: r_u must be non-negative"));
            }
            if (s.true_position - s.rough_center).norm() > s.uncertainty_radius + GEOM_TOL {
                v.push(format!("sensor {m}: true position lies outside its uncertainty disk"));
            }
            if !inside(&s.true_position) || !inside(&s.rough_center) {
                v.push(format!("sensor {m}: outside the {0}x{0} m area", self.area_side));
            }
            if s.height >= f.altitude {
                v.push(format!("sensor {m}: h_m must be below the flight altitude"));
            }
        }
        if !(self.data_requirement > 0.0) {
            v.push("I_min must be positive".into());
        }
        if self.max_connected == 0 {
            v.push("K_max must be at least 1".into());
        }
        v.extend(self.channel.violations());
        v.extend(self.energy.violations());
        if !(self.noise.delta >= 0.0) {
            v.push("delta must be non-negative".into());
        }
        v
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()
    }

    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Horizontal waypoints of one UAV at slot boundaries `0..=W`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub waypoints: Vec<Point>,
}

impl Trajectory {
    pub fn new(waypoints: Vec<Point>) -> Self {
        Self { waypoints }
    }

    /// Number of slots `W` (one less than the number of waypoints).
    pub fn slot_count(&self) -> usize {
        self.waypoints.len().saturating_sub(1)
    }

    /// Speed of slot `w` (1-based) given slot length `tau`.
    pub fn speed(&self, w: usize, tau: f64) -> f64 {
        (self.waypoints[w] - self.waypoints[w - 1]).norm() / tau
    }

    /// Speeds of slots `1..=W`.
    pub fn speeds(&self, tau: f64) -> Vec<f64> {
        (1..self.waypoints.len()).map(|w| self.speed(w, tau)).collect()
    }

    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|p| (p[1] - p[0]).norm()).sum()
    }

    pub fn reversed(&self) -> Self {
        let mut waypoints = self.waypoints.clone();
        waypoints.reverse();
        Self { waypoints }
    }

    /// Endpoint and per-slot speed violations, empty when the trajectory is valid.
    pub fn violations(&self, fleet: &FleetSpec, grid: &TimeGrid) -> Vec<String> {
        let mut v = Vec::new();
        if self.waypoints.len() != grid.slot_count + 1 {
            v.push(format!(
                "expected {} waypoints, found {}",
                grid.slot_count + 1,
                self.waypoints.len()
            ));
            return v;
        }
        if (self.waypoints[0] - fleet.start).norm() > GEOM_TOL {
            v.push("first waypoint differs from u_s".into());
        }
        if (self.waypoints[grid.slot_count] - fleet.end).norm() > GEOM_TOL {
            v.push("last waypoint differs from u_e".into());
        }
        let step = grid.slot_length * fleet.max_speed + GEOM_TOL;
        for w in 1..self.waypoints.len() {
            let d = (self.waypoints[w] - self.waypoints[w - 1]).norm();
            if d > step {
                v.push(format!("slot {w}: {:.6} m/s exceeds V_max", d / grid.slot_length));
            }
        }
        v
    }
}

/// Straight constant-speed flight from `u_s` to `u_e`.
pub fn straight_line_trajectory(fleet: &FleetSpec, grid: &TimeGrid) -> Result<Trajectory> {
    let w = grid.slot_count;
    let span = (fleet.end - fleet.start).norm();
    let reach = w as f64 * grid.slot_length * fleet.max_speed;
    if span > reach + GEOM_TOL {
        return Err(Error::Infeasible(format!(
            "u_s to u_e is {span:.3} m but at most {reach:.3} m is reachable"
        )));
    }
    let waypoints = (0..=w)
        .map(|k| fleet.start + (fleet.end - fleet.start) * (k as f64 / w as f64))
        .collect();
    Ok(Trajectory { waypoints })
}

/// Transmission fractions `x[w][m]`; row `w - 1` holds slot `w`.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub x: DMatrix<f64>,
}

impl Schedule {
    pub fn zeros(slots: usize, sensors: usize) -> Self {
        Self {
            x: DMatrix::zeros(slots, sensors),
        }
    }

    pub fn slot_count(&self) -> usize {
        self.x.nrows()
    }

    pub fn sensor_count(&self) -> usize {
        self.x.ncols()
    }

    /// Box and per-slot sum violations, empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for w in 0..self.x.nrows() {
            let row = self.x.row(w);
            if row.iter().any(|&x| !(-1e-9..=1.0 + 1e-9).contains(&x)) {
                v.push(format!("slot {}: entry outside [0, 1]", w + 1));
            }
            if row.sum() > 1.0 + 1e-9 {
                v.push(format!("slot {}: fractions sum to {}", w + 1, row.sum()));
            }
        }
        v
    }

    pub fn is_binary(&self) -> bool {
        self.x.iter().all(|&x| x == 0.0 || x == 1.0)
    }
}
