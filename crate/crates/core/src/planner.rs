//! Online throw planning: match the velocity hedgehog against tube samples,
//! assemble full throwing configurations, verify them and select among them.

use std::time::Instant;

use nalgebra::Rotation3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::brt::LevelSet;
use crate::flight::{FlightParams, FlyingState, LandingTargetSet};
use crate::hedgehog::{HedgehogGrids, VelocityHedgehog};
use crate::kinematics::{
    planar_yaw, position_and_jacobian, pseudoinverse, wrap_angle, ArmModel, JointVector,
    KinematicsError, Vec3, DEFAULT_PINV_CUTOFF,
};
use crate::trajectory::{
    min_duration, plan_trajectory, BoundaryState, JointTrajectory, KinematicBounds, TrajectoryError,
};

const MIN_RANGE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("hedgehog and tube index were built on different grids")]
    GridMismatch,
    #[error("release point too close to the target (range {range} m)")]
    DegenerateTriangle { range: f64 },
    #[error("flight cannot reach the release height")]
    Unreachable,
    #[error("no feasible throwing configuration")]
    NoSolution,
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Tube samples grouped by pitch bin and sorted by height.
#[derive(Debug, Clone, PartialEq)]
pub struct BrtIndex {
    pub grids: HedgehogGrids,
    bins: Vec<Vec<FlyingState>>,
}

impl BrtIndex {
    /// States whose pitch is not within half a spacing of a grid value are dropped.
    pub fn new(positives: &[FlyingState], grids: &HedgehogGrids) -> Self {
        let mut bins = vec![Vec::new(); grids.gamma.len()];
        for x in positives {
            if let Some(ig) = grids.gamma_bin(x.pitch()) {
                bins[ig].push(*x);
            }
        }
        for b in &mut bins {
            b.sort_by(|a, c| a.z.total_cmp(&c.z));
        }
        Self {
            grids: grids.clone(),
            bins,
        }
    }

    pub fn len(&self) -> usize {
        self.bins.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bin(&self, ig: usize) -> &[FlyingState] {
        &self.bins[ig]
    }

    /// Slice of pitch bin `ig` whose shifted height falls in height bin `iz`.
    fn height_slice(&self, ig: usize, iz: usize, shift: f64) -> &[FlyingState] {
        let grid = &self.grids;
        let key = |x: &FlyingState| {
            let z = x.z + shift;
            match grid.z_bin(z) {
                Some(i) => i as isize,
                None if z < grid.z[0] => -1,
                None => isize::MAX,
            }
        };
        let b = &self.bins[ig];
        let lo = b.partition_point(|x| key(x) < iz as isize);
        let hi = b.partition_point(|x| key(x) <= iz as isize);
        &b[lo..hi]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateGuess {
    pub q: JointVector,
    pub phi: f64,
    pub x: FlyingState,
    /// `(z, phi, gamma)` hedgehog cell.
    pub cell: [usize; 3],
}

/// Every pairing of a hedgehog cell with a tube state of the same height and
/// pitch bins that is strictly slower than the cell's maximum speed.
/// `z_shift` is the target height above the arm base plane.
pub fn match_candidates(
    hedgehog: &VelocityHedgehog,
    index: &BrtIndex,
    z_shift: f64,
) -> Result<Vec<CandidateGuess>, PlannerError> {
    let g = &hedgehog.grids;
    if g.z != index.grids.z || g.gamma != index.grids.gamma {
        return Err(PlannerError::GridMismatch);
    }
    let mut out = Vec::new();
    for iz in 0..g.z.len() {
        for ip in 0..g.phi.len() {
            for ig in 0..g.gamma.len() {
                let k = g.index(iz, ip, ig);
                let vmax = hedgehog.max_speed[k];
                if vmax <= 0.0 {
                    continue;
                }
                for x in index.height_slice(ig, iz, z_shift) {
                    if x.speed() < vmax {
                        out.push(CandidateGuess {
                            q: hedgehog.q_at[k],
                            phi: g.phi[ip],
                            x: *x,
                            cell: [iz, ip, ig],
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThrowQuery {
    /// Box center `B` on the opening plane, world frame.
    pub target: Vec3,
    pub base_position: Vec3,
    /// Horizontal direction of travel of the throw; defaults to base → target.
    pub incident: Option<Vec3>,
}

impl ThrowQuery {
    pub fn new(target: Vec3, base_position: Vec3) -> Self {
        Self {
            target,
            base_position,
            incident: None,
        }
    }

    pub fn incident_yaw(&self) -> Result<f64, PlannerError> {
        let dir = self.incident.unwrap_or(self.target - self.base_position);
        planar_yaw(&dir).map_err(|_| {
            PlannerError::InvalidQuery("incident direction has no horizontal component".into())
        })
    }
}

/// Slack of every inequality; feasible iff all are non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub q_lower: JointVector,
    pub q_upper: JointVector,
    pub qd_lower: JointVector,
    pub qd_upper: JointVector,
    /// `-f_brt`.
    pub brt: f64,
}

impl Margins {
    pub fn min(&self) -> f64 {
        [
            self.q_lower.min(),
            self.q_upper.min(),
            self.qd_lower.min(),
            self.qd_upper.min(),
            self.brt,
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min)
    }

    pub fn feasible(&self) -> bool {
        self.min() >= 0.0
    }
}

pub fn margins(model: &ArmModel, q: &JointVector, qd: &JointVector, f_brt: f64) -> Margins {
    let l = &model.limits;
    Margins {
        q_lower: q - l.q_min,
        q_upper: l.q_max - q,
        qd_lower: qd - l.qd_min,
        qd_upper: l.qd_max - qd,
        brt: -f_brt,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThrowConfiguration {
    pub q: JointVector,
    pub qd: JointVector,
    pub phi: f64,
    pub gamma: f64,
    pub x: FlyingState,
    /// Arm base frame origin `A`.
    pub base: Vec3,
    /// Release point `E`.
    pub release: Vec3,
    pub target: Vec3,
    /// Release velocity, world frame.
    pub velocity: Vec3,
    /// Rotation of the arm base frame about the vertical axis.
    pub base_yaw: f64,
    /// World heading of the horizontal release velocity.
    pub throw_yaw: f64,
    pub margins: Margins,
    pub f_brt: f64,
    pub cell: [usize; 3],
}

impl ThrowConfiguration {
    pub fn boundary(&self) -> BoundaryState {
        BoundaryState {
            q: self.q,
            qd: self.qd,
        }
    }

    pub fn feasible(&self) -> bool {
        self.margins.feasible()
    }
}

/// Places the arm for joint configuration `q`, throwing yaw `phi`, and the
/// ballistic arc that lands at the target with velocity `(rd, zd_land)`.
/// The arc is evaluated at the release height implied by `q` and the target.
#[allow(clippy::too_many_arguments)]
fn place(
    model: &ArmModel,
    level_set: &dyn LevelSet,
    flight: &FlightParams,
    q: &JointVector,
    phi: f64,
    landing: (f64, f64),
    ascending: bool,
    target: &Vec3,
    throw_yaw: f64,
    cell: [usize; 3],
) -> Result<ThrowConfiguration, PlannerError> {
    let (rd, zd_land) = landing;
    let g = flight.g;
    let (ae, jac) = position_and_jacobian(model, q);
    let z = ae.z + model.base_height - target.z;
    let zd_sq = zd_land * zd_land - 2.0 * g * z;
    if zd_sq < 0.0 {
        return Err(PlannerError::Unreachable);
    }
    let zd = if ascending || z < 0.0 {
        zd_sq.sqrt()
    } else {
        -zd_sq.sqrt()
    };
    let range = rd * (zd - zd_land) / g;
    if range < MIN_RANGE {
        return Err(PlannerError::DegenerateTriangle { range });
    }
    let x = FlyingState::new(-range, z, rd, zd);
    let heading = planar_yaw(&ae)? + phi;
    let v_arm = Vec3::new(rd * heading.cos(), rd * heading.sin(), zd);
    let qd = pseudoinverse(&jac, DEFAULT_PINV_CUTOFF) * v_arm;
    let f_brt = level_set.f_brt(&x);

    let base_yaw = wrap_angle(throw_yaw - heading);
    let rot = Rotation3::from_axis_angle(&Vec3::z_axis(), base_yaw);
    let (s, c) = throw_yaw.sin_cos();
    let release = target - Vec3::new(range * c, range * s, -z);
    Ok(ThrowConfiguration {
        q: *q,
        qd,
        phi,
        gamma: zd.atan2(rd),
        x,
        base: release - rot * ae,
        release,
        target: *target,
        velocity: rot * v_arm,
        base_yaw,
        throw_yaw,
        margins: margins(model, q, &qd, f_brt),
        f_brt,
        cell,
    })
}

/// Speed at landing of the arc through `x`.
pub fn landing_velocity(x: &FlyingState, flight: &FlightParams) -> (f64, f64) {
    (x.rd, -(x.zd * x.zd + 2.0 * flight.g * x.z).max(0.0).sqrt())
}

/// Full configuration from a guess: the guess's arc is re-evaluated at the
/// exact release height of its joint configuration.
pub fn assemble_throw(
    model: &ArmModel,
    level_set: &dyn LevelSet,
    flight: &FlightParams,
    guess: &CandidateGuess,
    query: &ThrowQuery,
) -> Result<ThrowConfiguration, PlannerError> {
    place(
        model,
        level_set,
        flight,
        &guess.q,
        guess.phi,
        landing_velocity(&guess.x, flight),
        guess.x.zd > 0.0,
        &query.target,
        query.incident_yaw()?,
        guess.cell,
    )
}

/// Margins recomputed from the world-frame geometry alone.
pub fn verify(model: &ArmModel, cfg: &ThrowConfiguration, level_set: &dyn LevelSet) -> Margins {
    let (ae, jac) = position_and_jacobian(model, &cfg.q);
    let rot = Rotation3::from_axis_angle(&Vec3::z_axis(), cfg.base_yaw);
    let release = cfg.base + rot * ae;
    let v_arm = rot.inverse() * cfg.velocity;
    let qd = pseudoinverse(&jac, DEFAULT_PINV_CUTOFF) * v_arm;
    let eb = cfg.target - release;
    let x = FlyingState::new(
        -eb.xy().norm(),
        -eb.z,
        cfg.velocity.xy().norm(),
        cfg.velocity.z,
    );
    margins(model, &cfg.q, &qd, level_set.f_brt(&x))
}

/// Coordinate search over the landing velocity inside the target set,
/// maximizing the smallest margin. At most `steps` evaluations.
pub fn refine(
    model: &ArmModel,
    level_set: &dyn LevelSet,
    flight: &FlightParams,
    set: &LandingTargetSet,
    cfg: &ThrowConfiguration,
    steps: usize,
) -> ThrowConfiguration {
    let mut best = *cfg;
    let mut best_min = best.margins.min();
    let (mut rd, mut zd) = landing_velocity(&cfg.x, flight);
    let mut step = (0.25 * set.rd_range.width(), 0.25 * set.zd_range.width());
    let mut evals = 0;
    while evals < steps && step.0.max(step.1) > 1e-6 {
        let mut improved = false;
        for (a, b) in [(step.0, 0.0), (-step.0, 0.0), (0.0, step.1), (0.0, -step.1)] {
            let cand = (rd + a, zd + b);
            if !set.contains_velocity(cand.0, cand.1) {
                continue;
            }
            if evals >= steps {
                break;
            }
            evals += 1;
            let ascending = cfg.x.zd > 0.0;
            let Ok(c) = place(
                model,
                level_set,
                flight,
                &cfg.q,
                cfg.phi,
                cand,
                ascending,
                &cfg.target,
                cfg.throw_yaw,
                cfg.cell,
            ) else {
                continue;
            };
            let m = c.margins.min();
            if m > best_min {
                (best, best_min, rd, zd) = (c, m, cand.0, cand.1);
                improved = true;
                break;
            }
        }
        if !improved {
            step = (0.5 * step.0, 0.5 * step.1);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanOptions {
    pub refine_steps: usize,
    /// Configurations whose smallest margin is at least `-refine_threshold`
    /// are refined before being rejected.
    pub refine_threshold: f64,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            refine_steps: 50,
            refine_threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanStats {
    pub n_guesses: usize,
    pub n_assembled: usize,
    pub n_refined: usize,
    pub n_feasible: usize,
    pub match_seconds: f64,
    pub assemble_seconds: f64,
}

/// Read-only planning artifacts.
pub struct Planner {
    pub model: ArmModel,
    pub hedgehog: VelocityHedgehog,
    pub index: BrtIndex,
    pub level_set: Box<dyn LevelSet + Send>,
    pub flight: FlightParams,
    pub target_set: LandingTargetSet,
    pub bounds: KinematicBounds,
    pub options: PlanOptions,
}

impl Planner {
    pub fn new(
        model: ArmModel,
        hedgehog: VelocityHedgehog,
        positives: &[FlyingState],
        level_set: Box<dyn LevelSet + Send>,
        flight: FlightParams,
        target_set: LandingTargetSet,
    ) -> Self {
        let index = BrtIndex::new(positives, &hedgehog.grids);
        let bounds = KinematicBounds::for_arm(&model);
        Self {
            model,
            hedgehog,
            index,
            level_set,
            flight,
            target_set,
            bounds,
            options: PlanOptions::default(),
        }
    }

    /// Target height above the arm base plane.
    pub fn z_shift(&self, query: &ThrowQuery) -> f64 {
        query.target.z - self.model.base_height
    }

    pub fn candidates(&self, query: &ThrowQuery) -> Result<Vec<CandidateGuess>, PlannerError> {
        match_candidates(&self.hedgehog, &self.index, self.z_shift(query))
    }

    pub fn assemble(
        &self,
        guess: &CandidateGuess,
        query: &ThrowQuery,
    ) -> Result<ThrowConfiguration, PlannerError> {
        assemble_throw(
            &self.model,
            self.level_set.as_ref(),
            &self.flight,
            guess,
            query,
        )
    }

    /// Assembled, refined if nearly feasible; `None` when still infeasible.
    pub fn realize(
        &self,
        guess: &CandidateGuess,
        query: &ThrowQuery,
        refined: &mut bool,
    ) -> Option<ThrowConfiguration> {
        let cfg = self.assemble(guess, query).ok()?;
        if cfg.feasible() {
            return Some(cfg);
        }
        if self.options.refine_steps == 0 || cfg.margins.min() < -self.options.refine_threshold {
            return None;
        }
        *refined = true;
        let r = refine(
            &self.model,
            self.level_set.as_ref(),
            &self.flight,
            &self.target_set,
            &cfg,
            self.options.refine_steps,
        );
        r.feasible().then_some(r)
    }

    /// Feasible configurations in candidate order, at most `limit` of them.
    pub fn plan_with_stats(
        &self,
        query: &ThrowQuery,
        limit: Option<usize>,
    ) -> Result<(Vec<ThrowConfiguration>, PlanStats), PlannerError> {
        query.incident_yaw()?;
        let t0 = Instant::now();
        let guesses = self.candidates(query)?;
        let mut stats = PlanStats {
            n_guesses: guesses.len(),
            match_seconds: t0.elapsed().as_secs_f64(),
            ..Default::default()
        };
        let t1 = Instant::now();
        let mut out = Vec::new();
        for g in &guesses {
            if limit.is_some_and(|l| out.len() >= l) {
                break;
            }
            stats.n_assembled += 1;
            let mut refined = false;
            if let Some(cfg) = self.realize(g, query, &mut refined) {
                out.push(cfg);
            }
            stats.n_refined += refined as usize;
        }
        stats.assemble_seconds = t1.elapsed().as_secs_f64();
        stats.n_feasible = out.len();
        if out.is_empty() {
            return Err(PlannerError::NoSolution);
        }
        Ok((out, stats))
    }

    pub fn plan(
        &self,
        query: &ThrowQuery,
        limit: Option<usize>,
    ) -> Result<Vec<ThrowConfiguration>, PlannerError> {
        self.plan_with_stats(query, limit).map(|(p, _)| p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub configuration: ThrowConfiguration,
    pub trajectory: JointTrajectory,
}

/// Minimum-duration candidate from `current`; ties go to the earlier one.
pub fn select_time_optimal(
    plans: &[ThrowConfiguration],
    current: &BoundaryState,
    bounds: &KinematicBounds,
) -> Result<Selection, PlannerError> {
    let mut best: Option<Selection> = None;
    for (i, cfg) in plans.iter().enumerate() {
        let goal = cfg.boundary();
        let Ok(lower) = min_duration(current, &goal, bounds) else {
            continue;
        };
        if best
            .as_ref()
            .is_some_and(|b| lower >= b.trajectory.duration)
        {
            continue;
        }
        let Ok(traj) = plan_trajectory(current, &goal, bounds) else {
            continue;
        };
        if best
            .as_ref()
            .is_none_or(|b| traj.duration < b.trajectory.duration)
        {
            best = Some(Selection {
                index: i,
                configuration: *cfg,
                trajectory: traj,
            });
        }
    }
    best.ok_or(PlannerError::NoSolution)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub computation_seconds: f64,
    pub trajectory_seconds: f64,
    pub total_seconds: f64,
    pub configuration: ThrowConfiguration,
    /// True when this strategy had to fall back to the original target.
    pub fell_back: bool,
    #[serde(skip)]
    pub trajectory: Option<JointTrajectory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveComparison {
    pub keep_target: StrategyReport,
    pub resample: StrategyReport,
    pub resample_wins: bool,
    pub n_sampled: usize,
    pub n_feasible_sampled: usize,
}

/// Evenly strided subset of `n` cached guesses.
pub fn stride_sample<T: Copy>(items: &[T], n: usize) -> Vec<T> {
    if n >= items.len() {
        return items.to_vec();
    }
    (0..n).map(|k| items[k * items.len() / n]).collect()
}

/// After a disturbance: (a) re-time to the original configuration, or
/// (b) assemble `n_sample` cached guesses and take the quickest to reach.
/// `remaining` replaces the re-timed duration of (a) when the disturbance
/// left the original motion untouched.
pub fn adaptive_replan(
    planner: &Planner,
    disturbed: &BoundaryState,
    original: &ThrowConfiguration,
    cached: &[CandidateGuess],
    n_sample: usize,
    query: &ThrowQuery,
    remaining: Option<(f64, JointTrajectory)>,
) -> Result<AdaptiveComparison, PlannerError> {
    let t0 = Instant::now();
    let (duration, traj) = match remaining {
        Some((d, t)) => (d, t),
        None => {
            let t = plan_trajectory(disturbed, &original.boundary(), &planner.bounds)?;
            (t.duration, t)
        }
    };
    let comp_a = t0.elapsed().as_secs_f64();
    let keep_target = StrategyReport {
        computation_seconds: comp_a,
        trajectory_seconds: duration,
        total_seconds: comp_a + duration,
        configuration: *original,
        fell_back: false,
        trajectory: Some(traj),
    };

    let t1 = Instant::now();
    let sampled = stride_sample(cached, n_sample);
    let mut feasible = Vec::new();
    for g in &sampled {
        let mut refined = false;
        if let Some(c) = planner.realize(g, query, &mut refined) {
            feasible.push(c);
        }
    }
    let n_feasible_sampled = feasible.len();
    let resample = match select_time_optimal(&feasible, disturbed, &planner.bounds) {
        Ok(sel) => {
            let comp = t1.elapsed().as_secs_f64();
            StrategyReport {
                computation_seconds: comp,
                trajectory_seconds: sel.trajectory.duration,
                total_seconds: comp + sel.trajectory.duration,
                configuration: sel.configuration,
                fell_back: false,
                trajectory: Some(sel.trajectory),
            }
        }
        Err(_) => {
            let comp = t1.elapsed().as_secs_f64() + keep_target.computation_seconds;
            StrategyReport {
                computation_seconds: comp,
                total_seconds: comp + keep_target.trajectory_seconds,
                fell_back: true,
                ..keep_target.clone()
            }
        }
    };
    Ok(AdaptiveComparison {
        resample_wins: resample.total_seconds <= keep_target.total_seconds,
        keep_target,
        resample,
        n_sampled: sampled.len(),
        n_feasible_sampled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brt::SimulatedLevelSet;
    use crate::flight::{generate_brt_data, membership_oracle, GenerationConfig};
    use crate::hedgehog::{generate_hedgehog, DEFAULT_SIGMA_MIN, DEFAULT_SPEED_CAP};
    use std::sync::OnceLock;

    fn oracle_level_set() -> SimulatedLevelSet {
        SimulatedLevelSet {
            set: LandingTargetSet::default(),
            flight: FlightParams::default(),
            horizon: 3.0,
            dt: 0.025,
        }
    }

    fn planner() -> &'static Planner {
        static P: OnceLock<Planner> = OnceLock::new();
        P.get_or_init(|| {
            let model = ArmModel::panda();
            let set = LandingTargetSet::default();
            let flight = FlightParams::default();
            let h = generate_hedgehog(
                &model,
                20_000,
                3,
                DEFAULT_SIGMA_MIN,
                &HedgehogGrids::default(),
                DEFAULT_SPEED_CAP,
            )
            .unwrap();
            let pos = generate_brt_data(&set, &GenerationConfig::default(), &flight).unwrap();
            Planner::new(model, h, &pos, Box::new(oracle_level_set()), flight, set)
        })
    }

    fn query(z: f64) -> ThrowQuery {
        ThrowQuery::new(Vec3::new(2.0, 0.5, z), Vec3::new(0.0, 0.0, 0.0))
    }

    #[test]
    fn strict_speed_boundary() {
        let grids = HedgehogGrids {
            z: vec![0.0],
            phi: vec![0.0],
            gamma: vec![0.5],
        };
        let q = JointVector::repeat(0.1);
        let h = |s: f64| VelocityHedgehog {
            grids: grids.clone(),
            max_speed: vec![s],
            q_at: vec![q],
            capped: vec![false],
            meta: crate::hedgehog::HedgehogMeta {
                arm: String::new(),
                seed: 0,
                n_samples: 1,
                n_retained: 1,
                sigma_min: 0.0,
                speed_cap: 10.0,
            },
        };
        let (s, c) = 0.5f64.sin_cos();
        let slow = FlyingState::new(-1.0, 0.0, c, s);
        let fast = FlyingState::new(-1.0, 0.0, 2.0 * c, 2.0 * s);
        let index = BrtIndex::new(&[slow, fast], &grids);
        let out = match_candidates(&h(2.0), &index, 0.0).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].x, slow);
        assert_eq!(out[0].q, q);
        let other = HedgehogGrids {
            gamma: vec![0.6],
            ..grids.clone()
        };
        assert!(matches!(
            match_candidates(&h(2.0), &BrtIndex::new(&[slow], &other), 0.0),
            Err(PlannerError::GridMismatch)
        ));
    }

    #[test]
    fn planar_triangle_example() {
        let model = ArmModel::planar_two_link();
        let flight = FlightParams::default();
        let ls = oracle_level_set();
        // Arc through z = 0.3 with (1.0, 1.905) that lands at r = 0.
        let (rd, zd) = (1.0, 1.905);
        let t_land = (zd + (zd * zd + 2.0 * flight.g * 0.3).sqrt()) / flight.g;
        let x = FlyingState::new(-rd * t_land, 0.3, rd, zd);
        let guess = CandidateGuess {
            q: JointVector::zeros(),
            phi: 0.0,
            x,
            cell: [0, 0, 0],
        };
        let q = ThrowQuery {
            target: Vec3::new(5.0, 1.0, -0.3),
            base_position: Vec3::zeros(),
            incident: Some(Vec3::new(1.0, 0.0, 0.0)),
        };
        let cfg = assemble_throw(&model, &ls, &flight, &guess, &q).unwrap();
        assert!((cfg.x.r - x.r).abs() < 1e-12 && (cfg.x.zd - zd).abs() < 1e-12);
        let ab = cfg.target - cfg.base;
        assert!((ab.xy().norm() - (2.0 + t_land)).abs() < 1e-12);
        assert!(
            ((cfg.target - cfg.release).z + 0.3).abs() < 1e-12
                || ((cfg.target - cfg.release).z - 0.3).abs() < 1e-12
        );
        assert!((cfg.release.z - cfg.target.z - 0.3).abs() < 1e-12);
        assert!(cfg.velocity.z > 0.0);
        let far = CandidateGuess {
            x: FlyingState::new(0.0, 0.3, 0.0, 1.0),
            ..guess
        };
        assert!(matches!(
            assemble_throw(&model, &ls, &flight, &far, &q),
            Err(PlannerError::DegenerateTriangle { .. })
        ));
    }

    fn check_triangle(p: &Planner, cfg: &ThrowConfiguration) {
        let (ae, _) = position_and_jacobian(&p.model, &cfg.q);
        let rot = Rotation3::from_axis_angle(&Vec3::z_axis(), cfg.base_yaw);
        let ab = cfg.target - cfg.base;
        let eb = cfg.target - cfg.release;
        assert!((ab - (rot * ae + eb)).abs().max() < 1e-9);
        assert!((eb.xy().norm() + cfg.x.r).abs() < 1e-9);
        assert!((cfg.velocity.norm() - cfg.x.speed()).abs() < 1e-9);
    }

    #[test]
    fn planned_configurations_hold_together() {
        let p = planner();
        let q = query(0.0);
        let plans = p.plan(&q, None).unwrap();
        assert!(plans.len() > 100, "{}", plans.len());
        let set = LandingTargetSet::default();
        let flight = FlightParams::default();
        for cfg in &plans {
            check_triangle(p, cfg);
            assert!(cfg.feasible());
            let independent = verify(&p.model, cfg, p.level_set.as_ref());
            assert!(independent.min() >= -1e-9, "{}", independent.min());
            assert!(membership_oracle(&cfg.x, &set, 10.0, 0.025, &flight));
        }
        let again = p.plan(&q, None).unwrap();
        assert_eq!(plans, again);
    }

    #[test]
    fn limit_truncates() {
        let p = planner();
        let all = p.plan(&query(0.0), None).unwrap();
        let one = p.plan(&query(0.0), Some(1)).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0], all[0]);
        assert_eq!(p.plan(&query(0.0), Some(10)).unwrap(), all[..10]);
    }

    #[test]
    fn doubled_velocity_breaks_a_limit() {
        let p = planner();
        let cfg = p.plan(&query(0.0), None).unwrap()[0];
        let mut fast = cfg;
        fast.velocity *= 2.0;
        let m = verify(&p.model, &fast, p.level_set.as_ref());
        assert!(m.qd_lower.min().min(m.qd_upper.min()) < 0.0);
        let outside = FlyingState::new(-1.0, 0.0, 4.9, 4.9);
        assert!(p.level_set.f_brt(&outside) > 0.0);
    }

    #[test]
    fn refine_never_lowers_the_smallest_margin() {
        let p = planner();
        let q = query(0.2);
        let guesses = p.candidates(&q).unwrap();
        let set = LandingTargetSet::default();
        let mut checked = 0;
        for g in guesses.iter().step_by(97).take(60) {
            let Ok(cfg) = p.assemble(g, &q) else { continue };
            let r0 = refine(&p.model, p.level_set.as_ref(), &p.flight, &set, &cfg, 0);
            assert_eq!(r0, cfg);
            let r = refine(&p.model, p.level_set.as_ref(), &p.flight, &set, &cfg, 50);
            assert!(r.margins.min() >= cfg.margins.min());
            check_triangle(p, &r);
            checked += 1;
        }
        assert!(checked > 10);
    }

    #[test]
    fn rotating_the_incident_direction_is_exact() {
        let p = planner();
        let base = ThrowQuery {
            target: Vec3::new(1.0, -0.5, 0.1),
            base_position: Vec3::zeros(),
            incident: Some(Vec3::new(1.0, 0.0, 0.0)),
        };
        let reference = p.plan(&base, Some(300)).unwrap();
        for theta in [0.3, -2.0, 3.0] {
            let rq = ThrowQuery {
                incident: Some(Vec3::new(f64::cos(theta), f64::sin(theta), 0.0)),
                ..base
            };
            let rotated = p.plan(&rq, Some(300)).unwrap();
            assert_eq!(reference.len(), rotated.len());
            let rot = Rotation3::from_axis_angle(&Vec3::z_axis(), theta);
            for (a, b) in reference.iter().zip(&rotated) {
                assert_eq!(
                    (a.q, a.qd, a.phi, a.gamma, a.x),
                    (b.q, b.qd, b.phi, b.gamma, b.x)
                );
                let expect = base.target + rot * (a.base - base.target);
                assert!((expect - b.base).abs().max() < 1e-9);
                assert!((rot * a.velocity - b.velocity).abs().max() < 1e-9);
            }
        }
    }

    #[test]
    fn time_optimal_selection() {
        let p = planner();
        let plans: Vec<_> = p
            .plan(&query(0.0), None)
            .unwrap()
            .into_iter()
            .take(40)
            .collect();
        let here = plans[7].boundary();
        let sel = select_time_optimal(&plans, &here, &p.bounds).unwrap();
        assert_eq!(sel.trajectory.duration, 0.0);
        assert!(sel.index <= 7);
        let start = BoundaryState {
            q: JointVector::from_column_slice(&[0.0, -0.785, 0.0, -2.356, 0.0, 1.571, 0.785]),
            qd: JointVector::zeros(),
        };
        let sel = select_time_optimal(&plans, &start, &p.bounds).unwrap();
        for c in &plans {
            let d = plan_trajectory(&start, &c.boundary(), &p.bounds)
                .unwrap()
                .duration;
            assert!(sel.trajectory.duration <= d);
        }
        let one = select_time_optimal(&plans[3..4], &start, &p.bounds).unwrap();
        assert_eq!(one.index, 0);
        assert!(select_time_optimal(&[], &start, &p.bounds).is_err());
    }

    #[test]
    fn adaptive_without_samples_falls_back() {
        let p = planner();
        let q = query(0.0);
        let plans = p.plan(&q, None).unwrap();
        let cached = p.candidates(&q).unwrap();
        let start = BoundaryState {
            q: JointVector::from_column_slice(&[0.0, -0.785, 0.0, -2.356, 0.0, 1.571, 0.785]),
            qd: JointVector::zeros(),
        };
        let cmp = adaptive_replan(p, &start, &plans[0], &cached, 0, &q, None).unwrap();
        assert!(cmp.resample.fell_back);
        assert_eq!(
            cmp.resample.trajectory_seconds,
            cmp.keep_target.trajectory_seconds
        );
        let cmp = adaptive_replan(p, &start, &plans[0], &cached, 100, &q, None).unwrap();
        assert_eq!(cmp.n_sampled, 100);
    }

    #[test]
    fn stride_sampling() {
        let v: Vec<usize> = (0..10).collect();
        assert_eq!(stride_sample(&v, 5), vec![0, 2, 4, 6, 8]);
        assert_eq!(stride_sample(&v, 20), v);
        assert!(stride_sample(&v, 0).is_empty());
    }
}
