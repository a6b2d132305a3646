//! Throw execution under perfect tracking, 3-D ballistic flight into a box,
//! and the success, latency and adaptive-throwing benchmarks.

use std::time::Instant;

use nalgebra::Rotation3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{position_and_jacobian, ArmModel, JointVector, Vec3};
use crate::planner::{
    adaptive_replan, select_time_optimal, Planner, PlannerError, ThrowConfiguration, ThrowQuery,
};
use crate::trajectory::{plan_trajectory, BoundaryState, JointTrajectory, TrajectoryError};

pub const SCHEMA_VERSION: u32 = 1;
const TERMINAL_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("trajectory ends {error} away from the throwing configuration")]
    TerminalMismatch { error: f64 },
    #[error("ball never descends through the box opening plane")]
    NoCrossing,
    #[error("invalid simulation settings: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub g: f64,
    pub ball_radius: f64,
    /// Opening size along the box's local x and y axes.
    pub opening: [f64; 2],
    pub wall_height: f64,
    pub max_time: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            g: 9.81,
            ball_radius: 0.05,
            opening: [0.25, 0.25],
            wall_height: 0.05,
            max_time: 10.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0) || !(self.max_time > 0.0) {
            return Err(SimError::InvalidConfig(
                "dt and max_time must be positive".into(),
            ));
        }
        if !(self.ball_radius < 0.5 * self.opening[0].min(self.opening[1])) {
            return Err(SimError::InvalidConfig(
                "ball does not fit through the opening".into(),
            ));
        }
        Ok(())
    }
}

/// Center of the box opening and its rotation about the vertical.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxPose {
    pub center: Vec3,
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Release {
    pub position: Vec3,
    pub velocity: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub success: bool,
    /// Ball center where it crosses the opening plane.
    pub landing_point: Vec3,
    pub crossing_velocity: Vec3,
    pub flight_time: f64,
    pub miss_distance: f64,
}

/// Release state at the end of `traj`, assuming perfect tracking and an
/// instant gripper opening.
pub fn execute_throw(
    traj: &JointTrajectory,
    cfg: &ThrowConfiguration,
    model: &ArmModel,
) -> Result<Release, SimError> {
    let end = traj.end_state();
    let error = (end.q - cfg.q)
        .abs()
        .max()
        .max((end.qd - cfg.qd).abs().max());
    if !(error <= TERMINAL_TOL) {
        return Err(SimError::TerminalMismatch { error });
    }
    Ok(release_from(model, cfg, &end.q, &end.qd))
}

pub fn release_from(
    model: &ArmModel,
    cfg: &ThrowConfiguration,
    q: &JointVector,
    qd: &JointVector,
) -> Release {
    let (ae, jac) = position_and_jacobian(model, q);
    let rot = Rotation3::from_axis_angle(&Vec3::z_axis(), cfg.base_yaw);
    Release {
        position: cfg.base + rot * ae,
        velocity: rot * (jac * qd),
    }
}

fn projectile(p: &Vec3, v: &Vec3, g: f64, t: f64) -> (Vec3, Vec3) {
    let grav = Vec3::new(0.0, 0.0, -g);
    (p + v * t + grav * (0.5 * t * t), v + grav * t)
}

/// Distance from a point to the axis-aligned rectangle `|x| <= hx, |y| <= hy`.
fn rect_distance(x: f64, y: f64, hx: f64, hy: f64) -> f64 {
    (x.abs() - hx).max(0.0).hypot((y.abs() - hy).max(0.0))
}

/// Steps the flight in closed form until the ball center descends through
/// the opening plane, then solves for the crossing within that step.
pub fn simulate_flight(
    release: &Release,
    pose: &BoxPose,
    sim: &SimConfig,
) -> Result<SimResult, SimError> {
    sim.validate()?;
    let plane = pose.center.z;
    let (mut p, mut v) = (release.position, release.velocity);
    let mut t = 0.0;
    while t < sim.max_time {
        let h = sim.dt.min(sim.max_time - t);
        let (pn, vn) = projectile(&p, &v, sim.g, h);
        let above = p.z - plane;
        if above >= 0.0 && pn.z - plane < 0.0 {
            // above + v.z s - g s²/2 = 0, root inside (0, h].
            let (a, b) = (0.5 * sim.g, -v.z);
            let disc = (b * b + 4.0 * a * above).max(0.0);
            let s = ((-b + disc.sqrt()) / (2.0 * a)).clamp(0.0, h);
            let (pc, vc) = projectile(&p, &v, sim.g, s);
            let rot = Rotation3::from_axis_angle(&Vec3::z_axis(), -pose.yaw);
            let local = rot * (pc - pose.center);
            let hx = 0.5 * sim.opening[0] - sim.ball_radius;
            let hy = 0.5 * sim.opening[1] - sim.ball_radius;
            let miss = rect_distance(local.x, local.y, hx, hy);
            return Ok(SimResult {
                success: miss == 0.0,
                landing_point: Vec3::new(pc.x, pc.y, plane),
                crossing_velocity: vc,
                flight_time: t + s,
                miss_distance: miss,
            });
        }
        (p, v) = (pn, vn);
        t += h;
    }
    Err(SimError::NoCrossing)
}

/// Box centered on the planned target, aligned with the world axes.
pub fn box_for(cfg: &ThrowConfiguration) -> BoxPose {
    BoxPose {
        center: cfg.target,
        yaw: 0.0,
    }
}

/// Trajectory from `start`, execution and flight for one configuration.
pub fn throw_and_fly(
    planner: &Planner,
    start: &BoundaryState,
    cfg: &ThrowConfiguration,
    sim: &SimConfig,
) -> Result<SimResult, SimError> {
    let traj = plan_trajectory(start, &cfg.boundary(), &planner.bounds)?;
    let release = execute_throw(&traj, cfg, &planner.model)?;
    simulate_flight(&release, &box_for(cfg), sim)
}

/// The arm's ready pose at rest.
pub fn home_state() -> BoundaryState {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
    BoundaryState {
        q: JointVector::from_column_slice(&[
            0.0,
            -FRAC_PI_4,
            0.0,
            -3.0 * FRAC_PI_4,
            0.0,
            FRAC_PI_2,
            FRAC_PI_4,
        ]),
        qd: JointVector::zeros(),
    }
}

/// Target heights `lo, lo + step, …, hi`.
pub fn height_range(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n)
        .map(|i| ((lo + i as f64 * step) * 1e9).round() / 1e9)
        .collect()
}

pub fn query_at_height(z: f64) -> ThrowQuery {
    ThrowQuery::new(Vec3::new(2.0, 0.0, z), Vec3::zeros())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessRow {
    pub height: f64,
    pub planned: usize,
    pub succeeded: usize,
    pub missed: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessReport {
    pub schema_version: u32,
    pub rows: Vec<SuccessRow>,
    pub total: usize,
    pub succeeded: usize,
    pub rate: f64,
}

pub fn run_success_benchmark(
    planner: &Planner,
    heights: &[f64],
    per_height_limit: Option<usize>,
    start: &BoundaryState,
    sim: &SimConfig,
) -> Result<SuccessReport, SimError> {
    sim.validate()?;
    let mut rows = Vec::with_capacity(heights.len());
    for &z in heights {
        let plans = match planner.plan(&query_at_height(z), per_height_limit) {
            Ok(p) => p,
            Err(PlannerError::NoSolution) => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let outcomes: Vec<Option<bool>> = plans
            .par_iter()
            .map(|cfg| {
                throw_and_fly(planner, start, cfg, sim)
                    .ok()
                    .map(|r| r.success)
            })
            .collect();
        rows.push(SuccessRow {
            height: z,
            planned: plans.len(),
            succeeded: outcomes.iter().filter(|o| **o == Some(true)).count(),
            missed: outcomes.iter().filter(|o| **o == Some(false)).count(),
            errors: outcomes.iter().filter(|o| o.is_none()).count(),
        });
    }
    let total: usize = rows.iter().map(|r| r.planned).sum();
    let succeeded: usize = rows.iter().map(|r| r.succeeded).sum();
    Ok(SuccessReport {
        schema_version: SCHEMA_VERSION,
        rows,
        total,
        succeeded,
        rate: if total == 0 {
            0.0
        } else {
            succeeded as f64 / total as f64
        },
    })
}

impl SuccessReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:>8} {:>9} {:>9} {:>7} {:>7}\n",
            "height", "planned", "success", "missed", "errors"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:>8.2} {:>9} {:>9} {:>7} {:>7}\n",
                r.height, r.planned, r.succeeded, r.missed, r.errors
            ));
        }
        s.push_str(&format!(
            "total {} succeeded {} rate {:.4}\n",
            self.total, self.succeeded, self.rate
        ));
        s
    }
}

/// Per-solution stage times of one query, microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub height: f64,
    pub solutions: usize,
    pub initial_guess_us: f64,
    pub full_configuration_us: f64,
    pub trajectory_us: f64,
    pub overall_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub schema_version: u32,
    pub rows: Vec<LatencyRow>,
    pub median_initial_guess_us: f64,
    pub median_full_configuration_us: f64,
    pub median_trajectory_us: f64,
    pub median_overall_us: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs `n_queries` plans over heights cycling through `heights`, timing
/// matching, assembly and trajectory generation per feasible solution.
/// Trajectory time is averaged over at most `trajectory_samples` solutions.
pub fn run_latency_benchmark(
    planner: &Planner,
    heights: &[f64],
    n_queries: usize,
    trajectory_samples: usize,
    start: &BoundaryState,
) -> LatencyReport {
    let mut rows = Vec::with_capacity(n_queries);
    for k in 0..n_queries {
        if heights.is_empty() {
            break;
        }
        let z = heights[k % heights.len()];
        let Ok((plans, stats)) = planner.plan_with_stats(&query_at_height(z), None) else {
            continue;
        };
        let n = plans.len() as f64;
        let sample: Vec<_> = plans.iter().take(trajectory_samples.max(1)).collect();
        let t = Instant::now();
        for cfg in &sample {
            let _ = std::hint::black_box(plan_trajectory(start, &cfg.boundary(), &planner.bounds));
        }
        let traj_us = t.elapsed().as_secs_f64() * 1e6 / sample.len() as f64;
        let guess_us = stats.match_seconds * 1e6 / n;
        let config_us = stats.assemble_seconds * 1e6 / n;
        rows.push(LatencyRow {
            height: z,
            solutions: plans.len(),
            initial_guess_us: guess_us,
            full_configuration_us: config_us,
            trajectory_us: traj_us,
            overall_us: guess_us + config_us + traj_us,
        });
    }
    LatencyReport {
        schema_version: SCHEMA_VERSION,
        median_initial_guess_us: median(rows.iter().map(|r| r.initial_guess_us).collect()),
        median_full_configuration_us: median(
            rows.iter().map(|r| r.full_configuration_us).collect(),
        ),
        median_trajectory_us: median(rows.iter().map(|r| r.trajectory_us).collect()),
        median_overall_us: median(rows.iter().map(|r| r.overall_us).collect()),
        rows,
    }
}

impl LatencyReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:>8} {:>9} {:>14} {:>14} {:>14} {:>14}\n",
            "height", "solutions", "guess_us", "config_us", "traj_us", "overall_us"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:>8.2} {:>9} {:>14.3} {:>14.3} {:>14.3} {:>14.3}\n",
                r.height,
                r.solutions,
                r.initial_guess_us,
                r.full_configuration_us,
                r.trajectory_us,
                r.overall_us
            ));
        }
        s.push_str(&format!(
            "{:>8} {:>9} {:>14.3} {:>14.3} {:>14.3} {:>14.3}\n",
            "median",
            "",
            self.median_initial_guess_us,
            self.median_full_configuration_us,
            self.median_trajectory_us,
            self.median_overall_us
        ));
        s
    }
}

/// A disturbance applied partway through a planned throw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub target: [f64; 3],
    #[serde(default)]
    pub base_position: [f64; 3],
    pub start_q: [f64; 7],
    /// Seconds after the throw motion starts.
    pub disturbance_time: f64,
    pub joint_deltas: [f64; 7],
    pub velocity_deltas: [f64; 7],
    #[serde(default = "default_n_sample")]
    pub n_sample: usize,
    /// Cap on configurations considered when choosing the original throw.
    #[serde(default)]
    pub plan_limit: Option<usize>,
}

fn default_n_sample() -> usize {
    100
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn is_undisturbed(&self) -> bool {
        self.joint_deltas
            .iter()
            .chain(&self.velocity_deltas)
            .all(|d| *d == 0.0)
    }

    pub fn query(&self) -> ThrowQuery {
        ThrowQuery::new(Vec3::from(self.target), Vec3::from(self.base_position))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub computation_ms: f64,
    pub trajectory_ms: f64,
    pub total_ms: f64,
    pub success: bool,
    pub fell_back: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveReport {
    pub schema_version: u32,
    pub scenario: String,
    pub original_duration_ms: f64,
    pub disturbance_time_ms: f64,
    pub keep_target: StrategyRow,
    pub resample: StrategyRow,
    pub n_sampled: usize,
    pub n_feasible_sampled: usize,
    /// `"keep_target"` or `"resample"`.
    pub winner: String,
}

impl AdaptiveReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "scenario {}  original {:.1} ms  disturbance at {:.1} ms\n",
            self.scenario, self.original_duration_ms, self.disturbance_time_ms
        );
        s.push_str(&format!(
            "{:<22} {:>14} {:>14} {:>12} {:>8}\n",
            "strategy", "computation_ms", "trajectory_ms", "total_ms", "success"
        ));
        for (name, r) in [
            ("(a) keep target", &self.keep_target),
            ("(b) resample", &self.resample),
        ] {
            s.push_str(&format!(
                "{:<22} {:>14.3} {:>14.1} {:>12.1} {:>8}\n",
                name, r.computation_ms, r.trajectory_ms, r.total_ms, r.success
            ));
        }
        s.push_str(&format!("winner {}\n", self.winner));
        s
    }
}

/// Plans the original time-optimal throw from `start_q`, disturbs it at the
/// scenario time, then compares re-timing against resampling.
pub fn run_adaptive_scenario(
    planner: &Planner,
    scenario: &Scenario,
    sim: &SimConfig,
) -> Result<AdaptiveReport, SimError> {
    let query = scenario.query();
    let plans = planner.plan(&query, scenario.plan_limit)?;
    let cached = planner.candidates(&query)?;
    let start = BoundaryState {
        q: JointVector::from(scenario.start_q),
        qd: JointVector::zeros(),
    };
    let original = select_time_optimal(&plans, &start, &planner.bounds)?;
    let t_d = scenario
        .disturbance_time
        .clamp(0.0, original.trajectory.duration);
    let (q, qd, _) = original.trajectory.sample(t_d)?;
    let limits = &planner.model.limits;
    let disturbed = BoundaryState {
        q: (q + JointVector::from(scenario.joint_deltas)).zip_zip_map(
            &limits.q_min,
            &limits.q_max,
            |v, lo, hi| v.clamp(lo, hi),
        ),
        qd: (qd + JointVector::from(scenario.velocity_deltas))
            .zip_map(&planner.bounds.v_max, |v, m| v.clamp(-m, m)),
    };
    let remaining = scenario.is_undisturbed().then(|| {
        (
            original.trajectory.duration - t_d,
            original.trajectory.clone(),
        )
    });
    let cmp = adaptive_replan(
        planner,
        &disturbed,
        &original.configuration,
        &cached,
        scenario.n_sample,
        &query,
        remaining,
    )?;
    let fly = |cfg: &ThrowConfiguration, traj: &Option<JointTrajectory>| -> bool {
        traj.as_ref()
            .and_then(|t| execute_throw(t, cfg, &planner.model).ok())
            .and_then(|r| simulate_flight(&r, &box_for(cfg), sim).ok())
            .is_some_and(|r| r.success)
    };
    let row = |r: &crate::planner::StrategyReport| StrategyRow {
        computation_ms: r.computation_seconds * 1e3,
        trajectory_ms: r.trajectory_seconds * 1e3,
        total_ms: r.total_seconds * 1e3,
        success: fly(&r.configuration, &r.trajectory),
        fell_back: r.fell_back,
    };
    Ok(AdaptiveReport {
        schema_version: SCHEMA_VERSION,
        scenario: scenario.name.clone(),
        original_duration_ms: original.trajectory.duration * 1e3,
        disturbance_time_ms: t_d * 1e3,
        keep_target: row(&cmp.keep_target),
        resample: row(&cmp.resample),
        n_sampled: cmp.n_sampled,
        n_feasible_sampled: cmp.n_feasible_sampled,
        winner: if cmp.resample_wins {
            "resample"
        } else {
            "keep_target"
        }
        .into(),
    })
}
