//! Rotary-wing propulsion power and trajectory energy.

use serde::{Deserialize, Serialize};

use crate::model::{TimeGrid, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    /// Blade profile power in hover (W).
    pub k_b: f64,
    /// Induced power in hover (W).
    pub k_i: f64,
    /// Air density (kg/m^3).
    pub rho: f64,
    /// Rotor solidity.
    pub s: f64,
    /// Fuselage drag ratio.
    pub d_r: f64,
    /// Rotor disc area (m^2).
    #[serde(rename = "A")]
    pub disc_area: f64,
    /// Blade tip speed (m/s).
    pub v_t: f64,
    /// Mean rotor induced velocity in hover (m/s).
    pub v0: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            k_b: 79.86,
            k_i: 88.63,
            rho: 1.225,
            s: 0.05,
            d_r: 0.6,
            disc_area: 0.503,
            v_t: 120.0,
            v0: 4.03,
        }
    }
}

impl EnergyParams {
    pub fn violations(&self) -> Vec<String> {
        [
            ("k_b", self.k_b),
            ("k_i", self.k_i),
            ("rho", self.rho),
            ("s", self.s),
            ("d_r", self.d_r),
            ("A", self.disc_area),
            ("v_t", self.v_t),
            ("v0", self.v0),
        ]
        .iter()
        .filter(|(_, v)| !(*v > 0.0))
        .map(|(n, _)| format!("{n} must be positive"))
        .collect()
    }

    pub fn hover_power(&self) -> f64 {
        self.k_b + self.k_i
    }

    /// Coefficient of the cubic parasitic term, `rho s d_r A / 2`.
    pub fn parasitic_coeff(&self) -> f64 {
        0.5 * self.rho * self.s * self.d_r * self.disc_area
    }

    /// Blade-profile plus parasitic power (the part without induced power).
    pub fn profile_parasitic(&self, v: f64) -> f64 {
        self.k_b * (1.0 + 3.0 * v * v / (self.v_t * self.v_t)) + self.parasitic_coeff() * v * v * v
    }
}

/// Normalized induced-power factor at speed `v`, the unique positive root of
/// `1/x^2 = x^2 + v^2/v0^2`.
pub fn induced_factor(v: f64, p: &EnergyParams) -> f64 {
    let a = v * v / (p.v0 * p.v0);
    // sqrt(1 + a^2/4) - a/2 rewritten as 1/(sqrt(1 + a^2/4) + a/2) to avoid cancellation
    (1.0 / ((1.0 + a * a / 4.0).sqrt() + a / 2.0)).sqrt()
}

pub fn propulsion_power(v: f64, p: &EnergyParams) -> f64 {
    p.profile_parasitic(v) + p.k_i * induced_factor(v, p)
}

/// Power with the induced factor replaced by the slack `varsigma`.
pub fn propulsion_power_slack(v: f64, varsigma: f64, p: &EnergyParams) -> f64 {
    p.profile_parasitic(v) + p.k_i * varsigma
}

/// Propulsion energy over all slots; hover slots cost `P_h * tau`.
pub fn trajectory_energy(traj: &Trajectory, grid: &TimeGrid, p: &EnergyParams) -> f64 {
    let tau = grid.slot_length;
    traj.speeds(tau).iter().map(|&v| tau * propulsion_power(v, p)).sum()
}

/// Most energy any flight on `grid` can use at speeds up to `v_max`.
/// Propulsion power is convex in speed, so its maximum is at an endpoint.
pub fn max_flight_energy(grid: &TimeGrid, p: &EnergyParams, v_max: f64) -> f64 {
    grid.period * propulsion_power(0.0, p).max(propulsion_power(v_max, p))
}

/// Speed minimizing propulsion power on `[0, v_hi]` (golden-section search).
pub fn min_power_speed(p: &EnergyParams, v_hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, v_hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    while b - a > 1e-9 {
        if propulsion_power(c, p) < propulsion_power(d, p) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    0.5 * (a + b)
}
