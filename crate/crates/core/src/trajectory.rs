//! Jerk-limited point-to-point joint trajectories with nonzero end velocities.
//!
//! Each joint follows a velocity transition `v0 → vp`, an optional cruise at
//! `vp`, and a transition `vp → v1`. Every transition starts and ends with
//! zero acceleration and is itself time-optimal (trapezoidal or triangular
//! acceleration pulse), so a profile is described by `(vp, cruise time)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{ArmModel, JointVector, NUM_JOINTS};

pub const DEFAULT_A_MAX: f64 = 15.0;
pub const DEFAULT_J_MAX: f64 = 7500.0;
const GRID: usize = 400;
const ROOT_SAMPLES: usize = 48;
const BISECTIONS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("joint {joint}: boundary velocity {velocity} exceeds limit {limit}")]
    InfeasibleBoundary {
        joint: usize,
        velocity: f64,
        limit: f64,
    },
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("could not synchronize joints to a common duration (last tried {duration} s)")]
    SynchronizationFailure { duration: f64 },
    #[error("time {t} outside [0, {duration}]")]
    OutOfRange { t: f64, duration: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointBounds {
    pub v_max: f64,
    pub a_max: f64,
    pub j_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicBounds {
    pub v_max: JointVector,
    pub a_max: JointVector,
    pub j_max: JointVector,
}

impl KinematicBounds {
    /// Velocity limits of the arm (tightest side), default acceleration and jerk.
    pub fn for_arm(model: &ArmModel) -> Self {
        let l = &model.limits;
        Self {
            v_max: JointVector::from_fn(|i, _| l.qd_max[i].min(-l.qd_min[i])),
            a_max: JointVector::repeat(DEFAULT_A_MAX),
            j_max: JointVector::repeat(DEFAULT_J_MAX),
        }
    }

    pub fn joint(&self, i: usize) -> JointBounds {
        JointBounds {
            v_max: self.v_max[i],
            a_max: self.a_max[i],
            j_max: self.j_max[i],
        }
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let ok = |v: &JointVector| v.iter().all(|x| x.is_finite() && *x > 0.0);
        if ok(&self.v_max) && ok(&self.a_max) && ok(&self.j_max) {
            Ok(())
        } else {
            Err(TrajectoryError::InvalidBounds(
                "all limits must be finite and positive".into(),
            ))
        }
    }
}

/// Position and velocity; acceleration is zero at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryState {
    pub q: JointVector,
    pub qd: JointVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration: f64,
    pub jerk: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointProblem {
    pub q0: f64,
    pub v0: f64,
    pub q1: f64,
    pub v1: f64,
    pub bounds: JointBounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointProfile {
    pub q0: f64,
    pub v0: f64,
    pub segments: Vec<Segment>,
    pub duration: f64,
    /// Peak (cruise) velocity of the profile.
    pub vp: f64,
}

/// Advances `(q, v, a)` by `dt` under constant jerk.
pub fn step_state(q: f64, v: f64, a: f64, jerk: f64, dt: f64) -> (f64, f64, f64) {
    (
        q + dt * (v + dt * (a / 2.0 + dt * jerk / 6.0)),
        v + dt * (a + dt * jerk / 2.0),
        a + dt * jerk,
    )
}

impl JointProfile {
    /// State at `t`, clamped to the profile's span.
    pub fn state_at(&self, t: f64) -> (f64, f64, f64) {
        let (mut q, mut v, mut a) = (self.q0, self.v0, 0.0);
        let mut remaining = t.max(0.0);
        for s in &self.segments {
            let dt = remaining.min(s.duration);
            (q, v, a) = step_state(q, v, a, s.jerk, dt);
            remaining -= dt;
            if remaining <= 0.0 {
                break;
            }
        }
        (q, v, a)
    }
}

/// Time of the fastest zero-to-zero acceleration velocity change `dv`.
pub fn transition_time(dv: f64, b: &JointBounds) -> f64 {
    let dv = dv.abs();
    if dv >= b.a_max * b.a_max / b.j_max {
        dv / b.a_max + b.a_max / b.j_max
    } else {
        2.0 * (dv / b.j_max).sqrt()
    }
}

/// Distance covered during that transition (the pulse is symmetric).
pub fn transition_distance(va: f64, vb: f64, b: &JointBounds) -> f64 {
    0.5 * (va + vb) * transition_time(vb - va, b)
}

fn push_transition(va: f64, vb: f64, b: &JointBounds, out: &mut Vec<Segment>) {
    let dv = vb - va;
    if dv == 0.0 {
        return;
    }
    let jerk = b.j_max.copysign(dv);
    let mut push = |duration: f64, jerk: f64| {
        if duration > 0.0 {
            out.push(Segment { duration, jerk });
        }
    };
    if dv.abs() >= b.a_max * b.a_max / b.j_max {
        let ramp = b.a_max / b.j_max;
        push(ramp, jerk);
        push(dv.abs() / b.a_max - ramp, 0.0);
        push(ramp, -jerk);
    } else {
        let ramp = (dv.abs() / b.j_max).sqrt();
        push(ramp, jerk);
        push(ramp, -jerk);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Shape {
    vp: f64,
    cruise: f64,
    duration: f64,
}

impl JointProblem {
    pub fn new(q0: f64, v0: f64, q1: f64, v1: f64, bounds: JointBounds) -> Self {
        Self {
            q0,
            v0,
            q1,
            v1,
            bounds,
        }
    }

    /// Distance of both transitions through `vp` without cruising.
    fn distance(&self, vp: f64) -> f64 {
        transition_distance(self.v0, vp, &self.bounds)
            + transition_distance(vp, self.v1, &self.bounds)
    }

    fn transitions_time(&self, vp: f64) -> f64 {
        transition_time(vp - self.v0, &self.bounds) + transition_time(self.v1 - vp, &self.bounds)
    }

    /// Shape through `vp`, if the required cruise time is non-negative.
    fn shape(&self, vp: f64) -> Option<Shape> {
        let gap = self.q1 - self.q0 - self.distance(vp);
        let scale = 1e-12 * (1.0 + (self.q1 - self.q0).abs());
        let cruise = if gap.abs() <= scale {
            0.0
        } else if vp == 0.0 {
            return None;
        } else {
            let c = gap / vp;
            if c < 0.0 {
                return None;
            }
            c
        };
        Some(Shape {
            vp,
            cruise,
            duration: self.transitions_time(vp) + cruise,
        })
    }

    fn breakpoints(&self) -> Vec<f64> {
        let b = &self.bounds;
        let w = b.a_max * b.a_max / b.j_max;
        let mut pts = vec![
            -b.v_max,
            b.v_max,
            self.v0,
            self.v1,
            self.v0 - w,
            self.v0 + w,
            self.v1 - w,
            self.v1 + w,
        ];
        pts.retain(|p| p.abs() <= b.v_max);
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// Peak velocities at which both transitions alone cover the distance.
    fn exact_roots(&self) -> Vec<f64> {
        let target = self.q1 - self.q0;
        let f = |vp: f64| self.distance(vp) - target;
        let mut roots = Vec::new();
        for w in self.breakpoints().windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let mut prev = (lo, f(lo));
            if prev.1 == 0.0 {
                roots.push(lo);
            }
            for k in 1..=ROOT_SAMPLES {
                let x = lo + (hi - lo) * k as f64 / ROOT_SAMPLES as f64;
                let fx = f(x);
                if fx == 0.0 {
                    roots.push(x);
                } else if prev.1 != 0.0 && prev.1.signum() != fx.signum() {
                    roots.push(bisect(f, prev.0, x));
                }
                prev = (x, fx);
            }
        }
        roots.sort_by(f64::total_cmp);
        roots.dedup();
        roots
    }

    fn optimal_shape(&self) -> Shape {
        let v = self.bounds.v_max;
        let mut best: Option<Shape> = None;
        let candidates = self.exact_roots().into_iter().chain([v, -v]);
        for vp in candidates {
            if let Some(s) = self.shape(vp) {
                if best.is_none_or(|b| s.duration < b.duration) {
                    best = Some(s);
                }
            }
        }
        best.expect("a root exists whenever neither cruise at the velocity limit fits")
    }

    /// Sorted peak velocities covering both signs, dense near zero.
    fn sweep(&self) -> Vec<f64> {
        let v = self.bounds.v_max;
        let mut pts = self.breakpoints();
        pts.extend(self.exact_roots());
        for k in 1..=GRID {
            let x = v * k as f64 / GRID as f64;
            pts.extend([x, -x]);
        }
        for k in 1..=48 {
            let x = v * 0.5f64.powi(k) / GRID as f64;
            pts.extend([x, -x]);
        }
        pts.retain(|p| *p != 0.0);
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    fn waits_at_rest(&self) -> bool {
        (self.q1 - self.q0 - self.distance(0.0)).abs() <= 1e-12 * (1.0 + (self.q1 - self.q0).abs())
    }

    /// A shape lasting exactly `duration`, if one is found.
    fn shape_with_duration(&self, duration: f64) -> Option<Shape> {
        let best = self.optimal_shape();
        if duration <= best.duration {
            return (duration >= best.duration - 1e-12).then_some(best);
        }
        if self.waits_at_rest() {
            let t = self.transitions_time(0.0);
            if duration >= t {
                return Some(Shape {
                    vp: 0.0,
                    cruise: duration - t,
                    duration,
                });
            }
        }
        let samples: Vec<(f64, Option<Shape>)> = self
            .sweep()
            .into_iter()
            .map(|vp| (vp, self.shape(vp)))
            .collect();
        for w in samples.windows(2) {
            let (Some(a), Some(b)) = (w[0].1, w[1].1) else {
                continue;
            };
            if (a.duration - duration) * (b.duration - duration) > 0.0 {
                continue;
            }
            let (mut lo, mut hi) = if a.duration <= duration {
                (a, b)
            } else {
                (b, a)
            };
            let mut ok = true;
            for _ in 0..BISECTIONS {
                let mid = 0.5 * (lo.vp + hi.vp);
                if mid == lo.vp || mid == hi.vp {
                    break;
                }
                match self.shape(mid) {
                    Some(m) if m.duration <= duration => lo = m,
                    Some(m) => hi = m,
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
            // Absorb the residual time into the cruise at the bracketing velocity.
            let pick = if (hi.duration - duration).abs() < (lo.duration - duration).abs() {
                hi
            } else {
                lo
            };
            return Some(self.stretch(pick, duration));
        }
        None
    }

    /// Adjusts `cruise` of a nearly-matching shape so its duration is exact.
    fn stretch(&self, s: Shape, duration: f64) -> Shape {
        Shape {
            cruise: (s.cruise + duration - s.duration).max(0.0),
            duration,
            ..s
        }
    }

    /// Smallest reachable duration strictly above `t`, from sampled runs.
    fn next_reachable_after(&self, t: f64) -> Option<f64> {
        let mut next: Option<f64> = None;
        for (_, s) in self.sweep().into_iter().map(|vp| (vp, self.shape(vp))) {
            if let Some(s) = s {
                if s.duration > t && next.is_none_or(|n| s.duration < n) {
                    next = Some(s.duration);
                }
            }
        }
        next
    }

    fn profile(&self, s: Shape) -> JointProfile {
        let mut segments = Vec::with_capacity(7);
        push_transition(self.v0, s.vp, &self.bounds, &mut segments);
        if s.cruise > 0.0 {
            segments.push(Segment {
                duration: s.cruise,
                jerk: 0.0,
            });
        }
        push_transition(s.vp, self.v1, &self.bounds, &mut segments);
        JointProfile {
            q0: self.q0,
            v0: self.v0,
            duration: segments.iter().map(|g| g.duration).sum(),
            segments,
            vp: s.vp,
        }
    }

    fn check(&self, joint: usize) -> Result<(), TrajectoryError> {
        for v in [self.v0, self.v1] {
            if !(v.abs() <= self.bounds.v_max) {
                return Err(TrajectoryError::InfeasibleBoundary {
                    joint,
                    velocity: v,
                    limit: self.bounds.v_max,
                });
            }
        }
        Ok(())
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    if f(lo).abs() <= f(hi).abs() {
        lo
    } else {
        hi
    }
}

/// Minimum-duration profile for one joint.
pub fn plan_single(p: &JointProblem) -> Result<JointProfile, TrajectoryError> {
    p.check(0)?;
    Ok(p.profile(p.optimal_shape()))
}

/// A profile for one joint lasting exactly `duration`.
pub fn plan_with_duration(p: &JointProblem, duration: f64) -> Option<JointProfile> {
    p.shape_with_duration(duration).map(|s| p.profile(s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTrajectory {
    pub joints: Vec<JointProfile>,
    pub duration: f64,
}

/// Common duration for all joints: the slowest minimum, raised past any
/// duration some joint cannot realize.
pub fn synchronize(problems: &[JointProblem]) -> Result<JointTrajectory, TrajectoryError> {
    for (i, p) in problems.iter().enumerate() {
        p.check(i)?;
    }
    let minimal: Vec<JointProfile> = problems
        .iter()
        .map(|p| p.profile(p.optimal_shape()))
        .collect();
    let mut t_star = minimal.iter().map(|m| m.duration).fold(0.0, f64::max);
    for _ in 0..16 {
        let mut joints = Vec::with_capacity(problems.len());
        let mut blocked = None;
        for (p, m) in problems.iter().zip(&minimal) {
            if m.duration == t_star {
                joints.push(m.clone());
            } else if let Some(prof) = plan_with_duration(p, t_star) {
                joints.push(prof);
            } else {
                blocked = Some(p);
                break;
            }
        }
        match blocked {
            None => {
                return Ok(JointTrajectory {
                    joints,
                    duration: t_star,
                })
            }
            Some(p) => match p.next_reachable_after(t_star) {
                Some(t) => t_star = t,
                None => return Err(TrajectoryError::SynchronizationFailure { duration: t_star }),
            },
        }
    }
    Err(TrajectoryError::SynchronizationFailure { duration: t_star })
}

pub fn joint_problems(
    start: &BoundaryState,
    goal: &BoundaryState,
    bounds: &KinematicBounds,
) -> Vec<JointProblem> {
    (0..NUM_JOINTS)
        .map(|i| {
            JointProblem::new(
                start.q[i],
                start.qd[i],
                goal.q[i],
                goal.qd[i],
                bounds.joint(i),
            )
        })
        .collect()
}

/// Time-synchronized trajectory between two boundary states.
pub fn plan_trajectory(
    start: &BoundaryState,
    goal: &BoundaryState,
    bounds: &KinematicBounds,
) -> Result<JointTrajectory, TrajectoryError> {
    bounds.validate()?;
    synchronize(&joint_problems(start, goal, bounds))
}

/// Lower bound on the synchronized duration: the slowest joint's minimum.
pub fn min_duration(
    start: &BoundaryState,
    goal: &BoundaryState,
    bounds: &KinematicBounds,
) -> Result<f64, TrajectoryError> {
    let mut t: f64 = 0.0;
    for (i, p) in joint_problems(start, goal, bounds).iter().enumerate() {
        p.check(i)?;
        t = t.max(p.optimal_shape().duration);
    }
    Ok(t)
}

pub type TrajectorySample = (JointVector, JointVector, JointVector);

impl JointTrajectory {
    pub fn sample(&self, t: f64) -> Result<TrajectorySample, TrajectoryError> {
        if !(0.0..=self.duration).contains(&t) {
            return Err(TrajectoryError::OutOfRange {
                t,
                duration: self.duration,
            });
        }
        let mut out = (
            JointVector::zeros(),
            JointVector::zeros(),
            JointVector::zeros(),
        );
        for (i, j) in self.joints.iter().enumerate() {
            let (q, v, a) = j.state_at(t);
            out.0[i] = q;
            out.1[i] = v;
            out.2[i] = a;
        }
        Ok(out)
    }

    pub fn end_state(&self) -> BoundaryState {
        let (q, qd, _) = self.sample(self.duration).expect("duration is in range");
        BoundaryState { q, qd }
    }

    /// Rows `t, q1..q7, qd1..qd7` at `rate` samples per second, end included.
    pub fn to_csv(&self, rate: f64) -> String {
        let mut out = String::from("t");
        for p in ["q", "qd"] {
            for i in 1..=NUM_JOINTS {
                out.push_str(&format!(",{p}{i}"));
            }
        }
        out.push('\n');
        let n = (self.duration * rate).floor() as usize;
        let mut times: Vec<f64> = (0..=n)
            .map(|k| k as f64 / rate)
            .filter(|t| *t < self.duration)
            .collect();
        times.push(self.duration);
        for t in times {
            let (q, qd, _) = self.sample(t.min(self.duration)).expect("in range");
            out.push_str(&format!("{t}"));
            for v in q.iter().chain(qd.iter()) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}
