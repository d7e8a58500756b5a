//! Two classical particles on a line with the attractive potential
//! `V(x) = −γ|x|^{3/2}` (cut off at separation `d`), released at rest from
//! coincidence.
//!
//! The equations of motion do not fix when the particles leave `x = 0`: every
//! pause time `T ≥ 0` gives a solution. Only closed forms are evaluated here;
//! numerics (finite differences, bisection) are used to check them. There is
//! no forward integrator, since from rest at `x = 0` it would always pick the
//! `T = ∞` solution.
//!
//! Energy uses the separation `x = x_R − x_L` with kinetic term `¼mẋ²`, so
//! `E = ¼mẋ² + V(x)`, which is `0` along every member of the family.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Breakpoint margin for residual grids, in units of the difference step.
pub const BREAKPOINT_MARGIN_STEPS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub m: f64,
    pub gamma: f64,
    pub d: f64,
}

impl SystemParams {
    pub fn new(m: f64, gamma: f64, d: f64) -> Result<Self> {
        for (name, v) in [("m", m), ("gamma", gamma), ("d", d)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::BadParams(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(Self { m, gamma, d })
    }

    /// `τ = 2(d m²/γ²)^{1/4}`, the time spent inside the interaction region.
    pub fn tau(&self) -> f64 {
        2.0 * (self.d * self.m * self.m / (self.gamma * self.gamma)).powf(0.25)
    }

    /// Speed of each particle after leaving the interaction region.
    pub fn exit_speed(&self) -> f64 {
        (self.gamma / self.m).sqrt() * self.d.powf(0.75)
    }
}

/// `V(x)` as a function of the separation.
pub fn potential(x: f64, params: &SystemParams) -> f64 {
    if x.abs() <= params.d {
        -params.gamma * x.abs().powf(1.5)
    } else {
        -params.gamma * params.d.powf(1.5)
    }
}

/// Force on the right particle, `−∂V/∂x_R` with `x = x_R − x_L`.
pub fn force_on_right(separation: f64, params: &SystemParams) -> f64 {
    if separation.abs() <= params.d {
        1.5 * params.gamma * separation.abs().sqrt() * separation.signum()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Pause,
    Interaction,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x_r: f64,
    pub x_l: f64,
    pub v_r: f64,
    pub v_l: f64,
}

impl State {
    pub fn separation(&self) -> f64 {
        self.x_r - self.x_l
    }
    pub fn relative_velocity(&self) -> f64 {
        self.v_r - self.v_l
    }
}

/// One member of the solution family, labelled by its pause time `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFamily {
    pub params: SystemParams,
    pub pause: f64,
    pub tau: f64,
}

impl TrajectoryFamily {
    pub fn new(params: SystemParams, pause: f64) -> Result<Self> {
        if !(pause.is_finite() && pause >= 0.0) {
            return Err(Error::BadParams(format!(
                "pause time must be finite and ≥ 0, got {pause}"
            )));
        }
        Ok(Self {
            params,
            pause,
            tau: params.tau(),
        })
    }

    /// `[T, T + τ]`
    pub fn breakpoints(&self) -> [f64; 2] {
        [self.pause, self.pause + self.tau]
    }

    pub fn branch_at(&self, t: f64) -> Branch {
        if t <= self.pause {
            Branch::Pause
        } else if t <= self.pause + self.tau {
            Branch::Interaction
        } else {
            Branch::Free
        }
    }

    /// Evaluates the formula of `branch` at `t` regardless of where `t` lies;
    /// used to compare one-sided limits at the junctions.
    pub fn eval_branch(&self, branch: Branch, t: f64) -> State {
        let p = &self.params;
        let (x, v) = match branch {
            Branch::Pause => (0.0, 0.0),
            Branch::Interaction => {
                let s = t - self.pause;
                let c = p.gamma * p.gamma / (p.m * p.m);
                (c / 32.0 * s.powi(4), c / 8.0 * s.powi(3))
            }
            Branch::Free => {
                let s = t - self.pause - self.tau;
                let u = p.exit_speed();
                (0.5 * p.d + u * s, u)
            }
        };
        State {
            x_r: x,
            x_l: -x,
            v_r: v,
            v_l: -v,
        }
    }

    pub fn eval(&self, t: f64) -> Result<State> {
        if t < 0.0 || t.is_nan() {
            return Err(Error::NegativeTime(t));
        }
        Ok(self.eval_branch(self.branch_at(t), t))
    }

    /// Largest position and velocity jumps between neighbouring branch
    /// formulas at `T` and `T + τ`.
    pub fn junction_gaps(&self) -> JunctionGaps {
        let [t1, t2] = self.breakpoints();
        let mut gaps = JunctionGaps::default();
        for (t, left, right) in [
            (t1, Branch::Pause, Branch::Interaction),
            (t2, Branch::Interaction, Branch::Free),
        ] {
            let l = self.eval_branch(left, t);
            let r = self.eval_branch(right, t);
            gaps.position = gaps
                .position
                .max((l.x_r - r.x_r).abs())
                .max((l.x_l - r.x_l).abs());
            gaps.velocity = gaps
                .velocity
                .max((l.v_r - r.v_r).abs())
                .max((l.v_l - r.v_l).abs());
        }
        gaps
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct JunctionGaps {
    pub position: f64,
    pub velocity: f64,
}

pub fn eval_trajectory(family: &TrajectoryFamily, t: f64) -> Result<State> {
    family.eval(t)
}

/// `E(t) = ¼mẋ² + V(x)` with `x = x_R − x_L`.
pub fn energy(family: &TrajectoryFamily, t: f64) -> Result<f64> {
    let s = family.eval(t)?;
    let xdot = s.relative_velocity();
    Ok(0.25 * family.params.m * xdot * xdot + potential(s.separation(), &family.params))
}

/// `max_t |E(t) − E(0)|` over `grid`.
pub fn energy_drift(family: &TrajectoryFamily, grid: &[f64]) -> Result<f64> {
    let e0 = energy(family, 0.0)?;
    let mut worst: f64 = 0.0;
    for &t in grid {
        worst = worst.max((energy(family, t)? - e0).abs());
    }
    Ok(worst)
}

/// `max |m ẍ − F|` over both particles and every grid time, with `ẍ` from
/// central differences of step `h`. Grid times must stay at least `10h`
/// away from both breakpoints.
pub fn ode_residual(family: &TrajectoryFamily, grid: &[f64], h: f64) -> Result<f64> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::BadParams(format!(
            "step h must be positive, got {h}"
        )));
    }
    let margin = BREAKPOINT_MARGIN_STEPS * h;
    let p = &family.params;
    let mut worst: f64 = 0.0;
    for &t in grid {
        for bp in family.breakpoints() {
            if (t - bp).abs() < margin {
                return Err(Error::GridTouchesBreakpoint {
                    t,
                    breakpoint: bp,
                    margin,
                });
            }
        }
        let lo = family.eval(t - h)?;
        let mid = family.eval(t)?;
        let hi = family.eval(t + h)?;
        let acc_r = (hi.x_r - 2.0 * mid.x_r + lo.x_r) / (h * h);
        let acc_l = (hi.x_l - 2.0 * mid.x_l + lo.x_l) / (h * h);
        let f_r = force_on_right(mid.separation(), p);
        worst = worst
            .max((p.m * acc_r - f_r).abs())
            .max((p.m * acc_l + f_r).abs());
    }
    Ok(worst)
}

/// `n` evenly spaced times strictly inside `[start + margin, end − margin]`.
pub fn interior_grid(start: f64, end: f64, n: usize, margin: f64) -> Vec<f64> {
    let a = start + margin;
    let b = end - margin;
    if n == 0 || b < a {
        return Vec::new();
    }
    if n == 1 {
        return vec![0.5 * (a + b)];
    }
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

/// A grid covering every branch up to `horizon`, keeping the breakpoint
/// margin for step `h`.
pub fn residual_grid(
    family: &TrajectoryFamily,
    horizon: f64,
    points_per_branch: usize,
    h: f64,
) -> Vec<f64> {
    // Slightly wider than the enforced margin so rounding cannot push a point inside it.
    let margin = 1.01 * BREAKPOINT_MARGIN_STEPS * h;
    let [t1, t2] = family.breakpoints();
    let mut grid = Vec::new();
    if t1 > 0.0 {
        grid.extend(
            interior_grid(0.0, t1.min(horizon), points_per_branch, margin)
                .into_iter()
                .filter(|&t| t >= h),
        );
    }
    if horizon > t1 {
        grid.extend(interior_grid(
            t1,
            t2.min(horizon),
            points_per_branch,
            margin,
        ));
    }
    if horizon > t2 {
        grid.extend(interior_grid(t2, horizon, points_per_branch, margin));
    }
    grid
}

/// Observed order `log(r₁/r₂)/log(h₁/h₂)` of the residual between two steps.
pub fn convergence_order(family: &TrajectoryFamily, grid: &[f64], h1: f64, h2: f64) -> Result<f64> {
    let r1 = ode_residual(family, grid, h1)?;
    let r2 = ode_residual(family, grid, h2)?;
    Ok((r1 / r2).ln() / (h1 / h2).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Detectors sit at `±position`.
    pub position: f64,
    pub switch_on: f64,
}

impl DetectorConfig {
    pub fn new(position: f64, params: &SystemParams) -> Result<Self> {
        if !(position.is_finite() && position > 0.5 * params.d) {
            return Err(Error::BadParams(format!(
                "detector position L = {position} must exceed d/2 = {}",
                0.5 * params.d
            )));
        }
        Ok(Self {
            position,
            switch_on: 0.0,
        })
    }
}

/// `T + τ + (L − d/2)·√(m/γ)·d^{−3/4}`
pub fn detection_time(family: &TrajectoryFamily, detectors: &DetectorConfig) -> f64 {
    let p = &family.params;
    family.pause + family.tau + (detectors.position - 0.5 * p.d) / p.exit_speed()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Readout {
    Detected { time: f64 },
    NoDetectionYet,
}

impl Readout {
    pub fn time(&self) -> Option<f64> {
        match *self {
            Readout::Detected { time } => Some(time),
            Readout::NoDetectionYet => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReadout {
    pub pause: f64,
    pub tau: f64,
    pub left: Readout,
    pub right: Readout,
    /// Closed-form detection time, for comparison.
    pub predicted: f64,
}

impl RunReadout {
    /// Both detectors report the same thing: both fired at the same time, or neither fired.
    pub fn agrees(&self) -> bool {
        self.left == self.right
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSimulation {
    pub runs: Vec<RunReadout>,
    /// Fraction of runs whose two readouts agree.
    pub within_run_agreement: f64,
    /// `max − min` of detection times over runs that detected.
    pub detection_time_spread: f64,
    pub all_detected: bool,
}

/// First time in `[0, horizon]` at which `reached(t)` holds, by bisection.
/// `reached` must be monotone.
fn first_crossing(horizon: f64, reached: impl Fn(f64) -> bool) -> Option<f64> {
    if !reached(horizon) {
        return None;
    }
    if reached(0.0) {
        return Some(0.0);
    }
    let (mut lo, mut hi) = (0.0_f64, horizon);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if reached(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Runs each family against the detector pair up to `horizon`. Detection times
/// are found by bisection on the trajectories, not from [`detection_time`].
pub fn simulate_detectors(
    families: &[TrajectoryFamily],
    detectors: &DetectorConfig,
    horizon: f64,
) -> Result<DetectorSimulation> {
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(Error::BadParams(format!(
            "horizon must be finite and ≥ 0, got {horizon}"
        )));
    }
    let l = detectors.position;
    let mut runs = Vec::with_capacity(families.len());
    for fam in families {
        let right = first_crossing(horizon, |t| fam.eval_branch(fam.branch_at(t), t).x_r >= l);
        let left = first_crossing(horizon, |t| fam.eval_branch(fam.branch_at(t), t).x_l <= -l);
        let wrap = |r: Option<f64>| match r {
            Some(time) => Readout::Detected { time },
            None => Readout::NoDetectionYet,
        };
        runs.push(RunReadout {
            pause: fam.pause,
            tau: fam.tau,
            left: wrap(left),
            right: wrap(right),
            predicted: detection_time(fam, detectors),
        });
    }
    let agreeing = runs.iter().filter(|r| r.agrees()).count();
    let times: Vec<f64> = runs.iter().filter_map(|r| r.right.time()).collect();
    let spread = match (
        times.iter().cloned().reduce(f64::min),
        times.iter().cloned().reduce(f64::max),
    ) {
        (Some(lo), Some(hi)) => hi - lo,
        _ => 0.0,
    };
    Ok(DetectorSimulation {
        within_run_agreement: if runs.is_empty() {
            1.0
        } else {
            agreeing as f64 / runs.len() as f64
        },
        detection_time_spread: spread,
        all_detected: runs
            .iter()
            .all(|r| r.right.time().is_some() && r.left.time().is_some()),
        runs,
    })
}

pub const TRAJECTORY_HEADER: [&str; 6] = ["t", "x_R", "x_L", "v_R", "v_L", "E"];
pub const SUMMARY_HEADER: [&str; 3] = ["T", "tau", "t_detect"];

pub fn write_trajectory_csv<W: Write>(
    out: W,
    family: &TrajectoryFamily,
    grid: &[f64],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Parse(format!("csv output failed: {e}"));
    w.write_record(TRAJECTORY_HEADER).map_err(io)?;
    for &t in grid {
        let s = family.eval(t)?;
        let e = energy(family, t)?;
        w.write_record([t, s.x_r, s.x_l, s.v_r, s.v_l, e].map(|v| v.to_string()))
            .map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::Parse(format!("csv output failed: {e}")))
}

/// One row per run; `t_detect` is left empty when nothing was detected by the horizon.
pub fn write_summary_csv<W: Write>(out: W, sim: &DetectorSimulation) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Parse(format!("csv output failed: {e}"));
    w.write_record(SUMMARY_HEADER).map_err(io)?;
    for run in &sim.runs {
        let detect = run.right.time().map(|t| t.to_string()).unwrap_or_default();
        w.write_record([run.pause.to_string(), run.tau.to_string(), detect])
            .map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::Parse(format!("csv output failed: {e}")))
}

/// `n` evenly spaced times on `[0, horizon]`.
pub fn uniform_grid(horizon: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n)
            .map(|i| horizon * i as f64 / (n - 1) as f64)
            .collect(),
    }
}
