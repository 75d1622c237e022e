//! CSV artifacts. Every file has a one-line header; floats carry 9
//! significant digits so reruns compare byte-for-byte.

use std::path::Path;

use crate::bcd::BcdReport;
use crate::error::{Error, Result};
use crate::model::{Point, Scenario, Trajectory};
use crate::pso::{PopSet, PsoHistoryEntry};
use crate::spline::SplinePlan;
use crate::tdoa::RmsePoint;

/// `%.9g`-style formatting.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let exp = x.abs().log10().floor() as i32;
    // rounding can carry into the next decade
    let s = format!("{:.8e}", x);
    let exp = s.rsplit_once('e').and_then(|(_, e)| e.parse::<i32>().ok()).unwrap_or(exp);
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let mut f = format!("{:.*}", decimals, x);
        if f.contains('.') {
            f = f.trim_end_matches('0').trim_end_matches('.').to_string();
        }
        if f == "-0" {
            f = "0".into();
        }
        f
    } else {
        let (mant, e) = s.split_once('e').unwrap();
        let mant = if mant.contains('.') { mant.trim_end_matches('0').trim_end_matches('.') } else { mant };
        format!("{mant}e{e}")
    }
}

/// Accumulates rows and renders them as CSV text.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        writer.write_record(header).expect("writing to memory");
        Self { writer }
    }

    pub fn row<I, S>(&mut self, cells: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(cells).expect("writing to memory");
    }

    pub fn finish(self) -> String {
        let bytes = self.writer.into_inner().expect("writing to memory");
        String::from_utf8(bytes).expect("csv cells are utf-8")
    }
}

fn int(i: usize) -> String {
    i.to_string()
}

/// `slot,x,y,speed`; the speed of slot 0 is reported as 0.
pub fn trajectory_csv(traj: &Trajectory, tau: f64) -> String {
    let mut t = Table::new(&["slot", "x", "y", "speed"]);
    for (w, u) in traj.waypoints.iter().enumerate() {
        let v = if w == 0 { 0.0 } else { traj.speed(w, tau) };
        t.row([int(w), fmt_sig(u.x), fmt_sig(u.y), fmt_sig(v)]);
    }
    t.finish()
}

fn sensor_header(first: &str, m: usize) -> Vec<String> {
    std::iter::once(first.to_string()).chain((1..=m).map(|i| format!("sensor_{i}"))).collect()
}

/// Slot-by-sensor matrix, slots numbered from 1.
fn matrix_csv(mat: &nalgebra::DMatrix<f64>) -> String {
    let header = sensor_header("slot", mat.ncols());
    let mut t = Table::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    for w in 0..mat.nrows() {
        t.row(std::iter::once(int(w + 1)).chain((0..mat.ncols()).map(|m| fmt_sig(mat[(w, m)]))));
    }
    t.finish()
}

pub fn schedule_csv(report: &BcdReport) -> String {
    matrix_csv(&report.schedule.x)
}

pub fn rates_csv(report: &BcdReport) -> String {
    matrix_csv(&report.rates)
}

pub fn lambda_history_csv(report: &BcdReport) -> String {
    let mut t = Table::new(&["iteration", "lambda"]);
    for (i, l) in report.lambda_history.iter().enumerate() {
        t.row([int(i), fmt_sig(*l)]);
    }
    t.finish()
}

pub fn sca_log_csv(report: &BcdReport) -> String {
    let mut t = Table::new(&["iteration", "lambda", "kkt_residual", "energy_j", "newton_steps", "fell_back"]);
    for l in &report.log {
        t.row([
            int(l.iteration),
            fmt_sig(l.lambda),
            fmt_sig(l.kkt_residual),
            fmt_sig(l.energy),
            int(l.newton_steps),
            l.fell_back.to_string(),
        ]);
    }
    t.finish()
}

pub fn data_csv(report: &BcdReport, scenario: &Scenario) -> String {
    let mut t = Table::new(&["sensor", "worst_case_bits", "true_position_bits", "required_bits"]);
    for (m, (w, tr)) in report.uploaded_bits.iter().zip(&report.true_uploaded_bits).enumerate() {
        t.row([int(m + 1), fmt_sig(*w), fmt_sig(*tr), fmt_sig(scenario.data_requirement)]);
    }
    t.finish()
}

/// One row per (sensor, UAV); UAV 1 is the main UAV.
pub fn pops_csv(pops: &PopSet) -> String {
    let mut t = Table::new(&["sensor", "uav", "slot", "x", "y", "distance_to_main", "crlb_m2", "rms_error_m"]);
    for m in 0..pops.main_pops.len() {
        let main = pops.main_pops[m];
        let pts = std::iter::once(main).chain(pops.aux_pops[m].iter().copied());
        for (n, p) in pts.enumerate() {
            t.row([
                int(m + 1),
                int(n + 1),
                int(pops.main_slots[m]),
                fmt_sig(p.x),
                fmt_sig(p.y),
                fmt_sig((p - main).norm()),
                fmt_sig(pops.crlb[m]),
                fmt_sig(pops.crlb[m].sqrt()),
            ]);
        }
    }
    t.finish()
}

/// `uav,slot,x,y,speed,range_to_main`; auxiliary UAVs are numbered from 2.
pub fn aux_trajectories_csv(plans: &[SplinePlan], main: &Trajectory, tau: f64) -> String {
    let mut t = Table::new(&["uav", "slot", "x", "y", "speed", "range_to_main"]);
    for (n, p) in plans.iter().enumerate() {
        let tr = &p.trajectory;
        for (w, u) in tr.waypoints.iter().enumerate() {
            let v = if w == 0 { 0.0 } else { tr.speed(w, tau) };
            t.row([
                int(n + 2),
                int(w),
                fmt_sig(u.x),
                fmt_sig(u.y),
                fmt_sig(v),
                fmt_sig((u - main.waypoints[w]).norm()),
            ]);
        }
    }
    t.finish()
}

pub fn pso_history_csv(history: &[PsoHistoryEntry]) -> String {
    let mut t = Table::new(&["iteration", "best_fitness", "avg_crlb_m2"]);
    for h in history {
        t.row([int(h.iteration), fmt_sig(h.best_fitness), fmt_sig(h.avg_crlb_m2)]);
    }
    t.finish()
}

pub fn rmse_vs_distance_csv(points: &[RmsePoint]) -> String {
    let mut t = Table::new(&["distance_m", "crlb_m2", "sqrt_crlb_m", "rmse_m", "trials"]);
    for p in points {
        t.row([fmt_sig(p.distance), fmt_sig(p.crlb), fmt_sig(p.crlb.sqrt()), fmt_sig(p.rmse), int(p.trials)]);
    }
    t.finish()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseRow {
    pub variance: f64,
    /// 0-based sensor index.
    pub sensor: usize,
    pub crlb: f64,
    pub rmse: f64,
    pub trials: usize,
}

pub fn rmse_vs_noise_csv(rows: &[NoiseRow]) -> String {
    let mut t = Table::new(&["variance_m2", "sensor", "sqrt_crlb_m", "rmse_m", "trials"]);
    for r in rows {
        t.row([fmt_sig(r.variance), int(r.sensor + 1), fmt_sig(r.crlb.sqrt()), fmt_sig(r.rmse), int(r.trials)]);
    }
    t.finish()
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}

/// Reads a trajectory written by [`trajectory_csv`].
pub fn read_trajectory_csv(text: &str) -> Result<Trajectory> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut waypoints = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::InvalidArgument(format!("trajectory csv: {e}")))?;
        let field = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("trajectory csv row {}: bad column {k}", i + 1)))
        };
        if field(0)? as usize != i {
            return Err(Error::InvalidArgument(format!("trajectory csv row {}: slots must be 0, 1, 2, ...", i + 1)));
        }
        waypoints.push(Point::new(field(1)?, field(2)?));
    }
    if waypoints.len() < 2 {
        return Err(Error::InvalidArgument("trajectory csv needs at least two waypoints".into()));
    }
    Ok(Trajectory::new(waypoints))
}

/// Reads observation points written by [`pops_csv`].
pub fn read_pops_csv(text: &str) -> Result<PopSet> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    // (sensor, uav) -> (slot, point, crlb)
    let mut rows: Vec<(usize, usize, usize, Point, f64)> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::InvalidArgument(format!("pops csv: {e}")))?;
        let bad = |k: usize| Error::InvalidArgument(format!("pops csv row {}: bad column {k}", i + 1));
        let int = |k: usize| rec.get(k).and_then(|s| s.trim().parse::<usize>().ok()).ok_or_else(|| bad(k));
        let num = |k: usize| rec.get(k).and_then(|s| s.trim().parse::<f64>().ok()).ok_or_else(|| bad(k));
        rows.push((int(0)?, int(1)?, int(2)?, Point::new(num(3)?, num(4)?), num(6)?));
    }
    let sensors = rows.iter().map(|r| r.0).max().unwrap_or(0);
    let uavs = rows.iter().map(|r| r.1).max().unwrap_or(0);
    if sensors == 0 || uavs < 3 || rows.len() != sensors * uavs {
        return Err(Error::InvalidArgument(format!(
            "pops csv: expected one row per sensor and UAV (at least 3 UAVs), got {} rows",
            rows.len()
        )));
    }
    rows.sort_by_key(|r| (r.0, r.1));
    let mut set = PopSet {
        main_slots: Vec::new(),
        main_pops: Vec::new(),
        aux_pops: Vec::new(),
        crlb: Vec::new(),
        average_crlb: 0.0,
        feasible: true,
    };
    for chunk in rows.chunks(uavs) {
        let (m, _, slot, main, crlb) = chunk[0];
        if chunk.iter().enumerate().any(|(n, r)| r.0 != m || r.1 != n + 1) {
            return Err(Error::InvalidArgument(format!("pops csv: sensor {m} rows are incomplete")));
        }
        set.main_slots.push(slot);
        set.main_pops.push(main);
        set.aux_pops.push(chunk[1..].iter().map(|r| r.3).collect());
        set.crlb.push(crlb);
    }
    set.average_crlb = set.crlb.iter().sum::<f64>() / sensors as f64;
    Ok(set)
}
