//! Planar object flight, backward-in-time integration from landing states,
//! and sampled positive/negative data for the backward reachable tube.
//!
//! Coordinates live in the throwing plane with the target at the origin:
//! `r` grows toward the target (release states have `r <= 0`), `z` is the
//! height above the box opening. The throwing range is `-r`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Comparison slack used when testing membership of the landing set.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum FlightError {
    #[error("horizon must be positive, got {0}")]
    InvalidHorizon(f64),
    #[error("time step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("sample count must be positive")]
    EmptySample,
    #[error("shift lists must contain 0")]
    MissingZeroShift,
    #[error("malformed dataset: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FlyingState {
    pub r: f64,
    pub z: f64,
    pub rd: f64,
    pub zd: f64,
}

impl FlyingState {
    pub const fn new(r: f64, z: f64, rd: f64, zd: f64) -> Self {
        Self { r, z, rd, zd }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.r, self.z, self.rd, self.zd]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn speed(&self) -> f64 {
        self.rd.hypot(self.zd)
    }

    /// Elevation of the velocity vector.
    pub fn pitch(&self) -> f64 {
        self.zd.atan2(self.rd)
    }

    pub fn range(&self) -> f64 {
        -self.r
    }

    fn axpy(self, h: f64, d: [f64; 4]) -> Self {
        Self::new(
            self.r + h * d[0],
            self.z + h * d[1],
            self.rd + h * d[2],
            self.zd + h * d[3],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlightParams {
    pub g: f64,
}

impl Default for FlightParams {
    fn default() -> Self {
        Self { g: 9.81 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Allowed landing positions (half-widths around the target) and velocities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandingTargetSet {
    pub r_slack: f64,
    pub z_slack: f64,
    pub rd_range: Interval,
    pub zd_range: Interval,
}

impl Default for LandingTargetSet {
    fn default() -> Self {
        Self {
            r_slack: 0.0,
            z_slack: 0.0,
            rd_range: Interval::new(0.2, 2.0),
            zd_range: Interval::new(-5.0, -2.0),
        }
    }
}

impl LandingTargetSet {
    pub fn contains(&self, x: &FlyingState) -> bool {
        x.r.abs() <= self.r_slack + MEMBERSHIP_TOL
            && x.z.abs() <= self.z_slack + MEMBERSHIP_TOL
            && self.rd_range.contains(x.rd, MEMBERSHIP_TOL)
            && self.zd_range.contains(x.zd, MEMBERSHIP_TOL)
    }

    pub fn contains_velocity(&self, rd: f64, zd: f64) -> bool {
        self.rd_range.contains(rd, MEMBERSHIP_TOL) && self.zd_range.contains(zd, MEMBERSHIP_TOL)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.rd_range.lo > 0.0 && self.rd_range.lo <= self.rd_range.hi) {
            return Err("horizontal landing velocity range must be positive and ordered".into());
        }
        if !(self.zd_range.hi < 0.0 && self.zd_range.lo <= self.zd_range.hi) {
            return Err("vertical landing velocity range must be negative and ordered".into());
        }
        if self.r_slack < 0.0 || self.z_slack < 0.0 {
            return Err("position slack must be non-negative".into());
        }
        Ok(())
    }
}

/// Autonomous flight dynamics `ẋ = f(x)`.
pub trait FlightModel: Sync {
    fn derivative(&self, x: &FlyingState) -> [f64; 4];

    /// Advances the state by `t` seconds (negative `t` runs backward).
    /// The default uses classical fourth-order Runge–Kutta with steps of at most 1 ms.
    fn advance(&self, x: &FlyingState, t: f64) -> FlyingState {
        let n = (t.abs() / 1e-3).ceil().max(1.0) as usize;
        let h = t / n as f64;
        let mut s = *x;
        for _ in 0..n {
            let k1 = self.derivative(&s);
            let k2 = self.derivative(&s.axpy(0.5 * h, k1));
            let k3 = self.derivative(&s.axpy(0.5 * h, k2));
            let k4 = self.derivative(&s.axpy(h, k3));
            let mut d = [0.0; 4];
            for i in 0..4 {
                d[i] = (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
            }
            s = s.axpy(h, d);
        }
        s
    }

    /// Time within `(0, t_max]` at which `z` first crosses zero, if any.
    fn z_crossing(&self, x: &FlyingState, t_max: f64) -> Option<f64> {
        crossing_by_bisection(self, x, t_max)
    }
}

fn crossing_by_bisection<M: FlightModel + ?Sized>(
    model: &M,
    x: &FlyingState,
    t_max: f64,
) -> Option<f64> {
    let z0 = x.z;
    if z0 == 0.0 {
        return None;
    }
    let (mut lo, mut hi) = (0.0, t_max);
    if model.advance(x, hi).z.signum() == z0.signum() {
        return None;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if model.advance(x, mid).z.signum() == z0.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(hi)
}

/// Pure projectile motion under gravity, stepped in closed form.
impl FlightModel for FlightParams {
    fn derivative(&self, x: &FlyingState) -> [f64; 4] {
        [x.rd, x.zd, 0.0, -self.g]
    }

    fn advance(&self, x: &FlyingState, t: f64) -> FlyingState {
        FlyingState::new(
            x.r + x.rd * t,
            x.z + x.zd * t - 0.5 * self.g * t * t,
            x.rd,
            x.zd - self.g * t,
        )
    }

    fn z_crossing(&self, x: &FlyingState, t_max: f64) -> Option<f64> {
        // z(t) = z0 + zd t - g t²/2 = 0, smallest positive root.
        let (a, b, c) = (-0.5 * self.g, x.zd, x.z);
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        let mut roots = [(-b + sq) / (2.0 * a), (-b - sq) / (2.0 * a)];
        roots.sort_by(f64::total_cmp);
        roots.into_iter().find(|&t| t > 0.0 && t <= t_max)
    }
}

/// State derivative of the projectile model.
pub fn dynamics(x: &FlyingState, p: &FlightParams) -> FlyingState {
    FlyingState::from_array(p.derivative(x))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlightTrajectory {
    /// `(t, state)` with strictly increasing `t`.
    pub samples: Vec<(f64, FlyingState)>,
}

/// Backward states at `t = -dt, -2dt, …, -horizon`, returned in increasing time.
pub fn integrate_backward<M: FlightModel + ?Sized>(
    landing: &FlyingState,
    horizon: f64,
    dt: f64,
    model: &M,
) -> Result<FlightTrajectory, FlightError> {
    if !(horizon > 0.0) {
        return Err(FlightError::InvalidHorizon(horizon));
    }
    if !(dt > 0.0) {
        return Err(FlightError::InvalidStep(dt));
    }
    let n = ((horizon / dt) - 1e-9).ceil().max(1.0) as usize;
    let mut samples = Vec::with_capacity(n);
    let mut state = *landing;
    let mut t_prev = 0.0;
    for k in 1..=n {
        let t = (k as f64 * dt).min(horizon);
        state = model.advance(&state, -(t - t_prev));
        t_prev = t;
        samples.push((-t, state));
    }
    samples.reverse();
    Ok(FlightTrajectory { samples })
}

/// Whether free flight from `x` enters the landing set within `horizon`.
///
/// The state is checked every `dt` and at every zero crossing of `z`, which
/// is located exactly for the projectile model and by bisection otherwise.
pub fn membership_oracle<M: FlightModel + ?Sized>(
    x: &FlyingState,
    set: &LandingTargetSet,
    horizon: f64,
    dt: f64,
    model: &M,
) -> bool {
    if set.contains(x) {
        return true;
    }
    let n = (horizon / dt).ceil().max(1.0) as usize;
    let mut state = *x;
    let mut t = 0.0;
    for _ in 0..n {
        let h = dt.min(horizon - t);
        if h <= 0.0 {
            break;
        }
        if let Some(tc) = model.z_crossing(&state, h) {
            let mut at = model.advance(&state, tc);
            at.z = 0.0;
            if set.contains(&at) {
                return true;
            }
        }
        state = model.advance(&state, h);
        t += h;
        if set.contains(&state) {
            return true;
        }
    }
    false
}

/// Landing velocities on a uniform cell-centred grid over the velocity box,
/// with `r = z = 0`. The grid factorisation of `n` is chosen to match the
/// box aspect ratio as closely as possible.
pub fn sample_landing_states(
    set: &LandingTargetSet,
    n: usize,
) -> Result<Vec<FlyingState>, FlightError> {
    if n == 0 {
        return Err(FlightError::EmptySample);
    }
    let aspect = set.rd_range.width() / set.zd_range.width();
    let n_rd = (1..=n)
        .filter(|d| n.is_multiple_of(*d))
        .min_by(|&a, &b| {
            let score = |d: usize| ((d * d) as f64 / (n as f64 * aspect)).ln().abs();
            score(a).total_cmp(&score(b))
        })
        .unwrap_or(1);
    let n_zd = n / n_rd;
    let mut out = Vec::with_capacity(n);
    for i in 0..n_rd {
        let rd = set.rd_range.lo + (i as f64 + 0.5) * set.rd_range.width() / n_rd as f64;
        for j in 0..n_zd {
            let zd = set.zd_range.lo + (j as f64 + 0.5) * set.zd_range.width() / n_zd as f64;
            out.push(FlyingState::new(0.0, 0.0, rd, zd));
        }
    }
    Ok(out)
}

/// Landing velocities drawn uniformly from the box scaled 3× about its centre,
/// rejecting anything inside the original box.
pub fn sample_outside_landing_states(
    set: &LandingTargetSet,
    n: usize,
    seed: u64,
) -> Vec<FlyingState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wide =
        |iv: &Interval| Interval::new(iv.mid() - 1.5 * iv.width(), iv.mid() + 1.5 * iv.width());
    let (wr, wz) = (wide(&set.rd_range), wide(&set.zd_range));
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let rd = rng.random_range(wr.lo..wr.hi);
        let zd = rng.random_range(wz.lo..wz.hi);
        if !set.contains_velocity(rd, zd) {
            out.push(FlyingState::new(0.0, 0.0, rd, zd));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub n_landing: usize,
    pub horizon: f64,
    pub dt: f64,
    pub v_cap: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            n_landing: 2160,
            horizon: 1.0,
            dt: 0.025,
            v_cap: 5.0,
        }
    }
}

fn aggregate_backward<M: FlightModel + ?Sized>(
    landings: &[FlyingState],
    cfg: &GenerationConfig,
    model: &M,
) -> Result<Vec<FlyingState>, FlightError> {
    let per_landing: Vec<Vec<FlyingState>> = landings
        .par_iter()
        .map(|l| {
            integrate_backward(l, cfg.horizon, cfg.dt, model).map(|traj| {
                traj.samples
                    .into_iter()
                    .rev()
                    .map(|(_, s)| s)
                    .filter(|s| s.rd.abs() <= cfg.v_cap && s.zd.abs() <= cfg.v_cap)
                    .collect()
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(per_landing.into_iter().flatten().collect())
}

/// States inside the tube: backward trajectories from a landing-state grid,
/// aggregated in landing order and velocity-filtered.
pub fn generate_brt_data<M: FlightModel + ?Sized>(
    set: &LandingTargetSet,
    cfg: &GenerationConfig,
    model: &M,
) -> Result<Vec<FlyingState>, FlightError> {
    let landings = sample_landing_states(set, cfg.n_landing)?;
    aggregate_backward(&landings, cfg, model)
}

/// States outside the tube, from landing velocities outside the box.
pub fn generate_negative_data<M: FlightModel + ?Sized>(
    set: &LandingTargetSet,
    cfg: &GenerationConfig,
    model: &M,
    seed: u64,
) -> Result<Vec<FlyingState>, FlightError> {
    if cfg.n_landing == 0 {
        return Err(FlightError::EmptySample);
    }
    let landings = sample_outside_landing_states(set, cfg.n_landing, seed);
    aggregate_backward(&landings, cfg, model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub n_positive: usize,
    pub n_negative: usize,
    pub generation: GenerationConfig,
    pub target_set: LandingTargetSet,
    pub flight: FlightParams,
    #[serde(default)]
    pub shifts_r: Vec<f64>,
    #[serde(default)]
    pub shifts_z: Vec<f64>,
    /// Crate version that wrote the data.
    #[serde(default)]
    pub version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrtDataset {
    pub positives: Vec<FlyingState>,
    pub negatives: Vec<FlyingState>,
    pub meta: DatasetMeta,
}

impl BrtDataset {
    /// Generates positives and negatives with the given settings.
    pub fn generate(
        set: &LandingTargetSet,
        cfg: &GenerationConfig,
        flight: &FlightParams,
        seed: u64,
    ) -> Result<Self, FlightError> {
        let positives = generate_brt_data(set, cfg, flight)?;
        let negatives = generate_negative_data(set, cfg, flight, seed)?;
        Ok(Self {
            meta: DatasetMeta {
                seed,
                n_positive: positives.len(),
                n_negative: negatives.len(),
                generation: *cfg,
                target_set: *set,
                flight: *flight,
                shifts_r: vec![0.0],
                shifts_z: vec![0.0],
                version: env!("CARGO_PKG_VERSION").into(),
            },
            positives,
            negatives,
        })
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// States followed by labels (1 = inside the tube).
    pub fn labeled(&self) -> (Vec<FlyingState>, Vec<bool>) {
        let states: Vec<_> = self
            .positives
            .iter()
            .chain(&self.negatives)
            .copied()
            .collect();
        let labels = std::iter::repeat_n(true, self.positives.len())
            .chain(std::iter::repeat_n(false, self.negatives.len()))
            .collect();
        (states, labels)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,z,rd,zd,label\n");
        let rows = self
            .positives
            .iter()
            .map(|s| (s, 1))
            .chain(self.negatives.iter().map(|s| (s, 0)));
        for (s, label) in rows {
            out.push_str(&format!("{},{},{},{},{}\n", s.r, s.z, s.rd, s.zd, label));
        }
        out
    }

    pub fn from_csv(text: &str, meta: DatasetMeta) -> Result<Self, FlightError> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "r,z,rd,zd,label" => {}
            other => {
                return Err(FlightError::Malformed(format!(
                    "unexpected header {other:?}"
                )));
            }
        }
        let (mut positives, mut negatives) = (Vec::new(), Vec::new());
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(FlightError::Malformed(format!(
                    "line {}: expected 5 fields",
                    lineno + 2
                )));
            }
            let num = |i: usize| {
                fields[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| FlightError::Malformed(format!("line {}: {e}", lineno + 2)))
            };
            let s = FlyingState::new(num(0)?, num(1)?, num(2)?, num(3)?);
            match fields[4].trim() {
                "1" => positives.push(s),
                "0" => negatives.push(s),
                l => {
                    return Err(FlightError::Malformed(format!(
                        "line {}: label {l}",
                        lineno + 2
                    )))
                }
            }
        }
        Ok(Self {
            positives,
            negatives,
            meta,
        })
    }

    pub fn write(&self, csv_path: &std::path::Path) -> Result<(), FlightError> {
        crate::io::write_atomic(csv_path, self.to_csv().as_bytes())?;
        let sidecar = crate::io::sidecar_path(csv_path);
        crate::io::write_atomic(
            &sidecar,
            serde_json::to_string_pretty(&self.meta)?.as_bytes(),
        )?;
        Ok(())
    }

    pub fn read(csv_path: &std::path::Path) -> Result<Self, FlightError> {
        let meta: DatasetMeta =
            serde_json::from_str(&std::fs::read_to_string(crate::io::sidecar_path(csv_path))?)?;
        Self::from_csv(&std::fs::read_to_string(csv_path)?, meta)
    }
}

/// Copies every state for each `(δr, δz)` shift; velocities are untouched.
pub fn augment_dataset(
    positives: &[FlyingState],
    negatives: &[FlyingState],
    shifts_r: &[f64],
    shifts_z: &[f64],
    meta: DatasetMeta,
) -> Result<BrtDataset, FlightError> {
    if !shifts_r.contains(&0.0) || !shifts_z.contains(&0.0) {
        return Err(FlightError::MissingZeroShift);
    }
    let shift = |states: &[FlyingState]| {
        let mut out = Vec::with_capacity(states.len() * shifts_r.len() * shifts_z.len());
        for &dr in shifts_r {
            for &dz in shifts_z {
                out.extend(
                    states
                        .iter()
                        .map(|s| FlyingState::new(s.r + dr, s.z + dz, s.rd, s.zd)),
                );
            }
        }
        out
    };
    let positives = shift(positives);
    let negatives = shift(negatives);
    Ok(BrtDataset {
        meta: DatasetMeta {
            n_positive: positives.len(),
            n_negative: negatives.len(),
            shifts_r: shifts_r.to_vec(),
            shifts_z: shifts_z.to_vec(),
            ..meta
        },
        positives,
        negatives,
    })
}
