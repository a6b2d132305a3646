//! Offline velocity capability map over (height, yaw, pitch) cells.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{
    self, planar_yaw, position_and_jacobian, pseudoinverse, ArmModel, JointVector, KinematicsError,
    PositionJacobian, PositionJacobianPinv, Vec3, DEFAULT_PINV_CUTOFF, NUM_JOINTS,
};

pub const DEFAULT_SIGMA_MIN: f64 = 0.1;
pub const DEFAULT_SPEED_CAP: f64 = 10.0;
pub const DESK_SAMPLES: usize = 100_000;
pub const FULL_SAMPLES: usize = 1_000_000;
const SHARD: usize = 2048;

#[derive(Debug, Error)]
pub enum HedgehogError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("no samples")]
    EmptySamples,
    #[error("malformed hedgehog file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgehogGrids {
    pub z: Vec<f64>,
    pub phi: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// `lo, lo + step, …` up to `hi` inclusive (rounded to the nearest count).
pub fn uniform_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

impl Default for HedgehogGrids {
    fn default() -> Self {
        let deg = |v: Vec<f64>| v.into_iter().map(f64::to_radians).collect();
        Self {
            z: uniform_grid(0.0, 1.2, 0.05),
            phi: deg(uniform_grid(-90.0, 90.0, 15.0)),
            gamma: deg(uniform_grid(20.0, 70.0, 5.0)),
        }
    }
}

fn nearest_bin(grid: &[f64], v: f64) -> Option<usize> {
    if grid.len() == 1 {
        return Some(0);
    }
    let i = grid.partition_point(|g| *g < v);
    let candidates = [i.checked_sub(1), (i < grid.len()).then_some(i)];
    let best = candidates
        .into_iter()
        .flatten()
        .min_by(|a, b| (grid[*a] - v).abs().total_cmp(&(grid[*b] - v).abs()))?;
    let spacing = if best + 1 < grid.len() && (v >= grid[best] || best == 0) {
        grid[best + 1] - grid[best]
    } else {
        grid[best] - grid[best - 1]
    };
    ((v - grid[best]).abs() <= 0.5 * spacing).then_some(best)
}

impl HedgehogGrids {
    pub fn validate(&self) -> Result<(), HedgehogError> {
        for (name, g) in [("z", &self.z), ("phi", &self.phi), ("gamma", &self.gamma)] {
            if g.is_empty() {
                return Err(HedgehogError::InvalidGrid(format!("{name} grid is empty")));
            }
            if g.iter().any(|v| !v.is_finite()) || g.windows(2).any(|w| w[1] <= w[0]) {
                return Err(HedgehogError::InvalidGrid(format!(
                    "{name} grid must be strictly increasing"
                )));
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.z.len(), self.phi.len(), self.gamma.len()]
    }

    pub fn num_cells(&self) -> usize {
        self.z.len() * self.phi.len() * self.gamma.len()
    }

    pub fn index(&self, iz: usize, ip: usize, ig: usize) -> usize {
        (iz * self.phi.len() + ip) * self.gamma.len() + ig
    }

    pub fn unindex(&self, flat: usize) -> (usize, usize, usize) {
        let ig = flat % self.gamma.len();
        let rest = flat / self.gamma.len();
        (rest / self.phi.len(), rest % self.phi.len(), ig)
    }

    /// Nearest height grid point within half a spacing.
    /// A one-point grid accepts every height.
    pub fn z_bin(&self, z: f64) -> Option<usize> {
        nearest_bin(&self.z, z)
    }

    pub fn gamma_bin(&self, gamma: f64) -> Option<usize> {
        nearest_bin(&self.gamma, gamma)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigSample {
    pub q: JointVector,
    /// End-effector offset from the base, `A⃗E`.
    pub ae: Vec3,
    pub jacobian: PositionJacobian,
}

/// Uniform random joint configurations within limits, keeping those whose
/// positional Jacobian has smallest singular value `>= sigma_min`.
pub fn sample_configurations(
    model: &ArmModel,
    n: usize,
    seed: u64,
    sigma_min: f64,
) -> Vec<ConfigSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (model.limits.q_min, model.limits.q_max);
    let qs: Vec<JointVector> = (0..n)
        .map(|_| JointVector::from_fn(|i, _| lo[i] + (hi[i] - lo[i]) * rng.random::<f64>()))
        .collect();
    qs.par_iter()
        .filter_map(|q| {
            let (ae, jacobian) = position_and_jacobian(model, q);
            if sigma_min > 0.0 && kinematics::singular_values(&jacobian)[2] < sigma_min {
                return None;
            }
            Some(ConfigSample {
                q: *q,
                ae,
                jacobian,
            })
        })
        .collect()
}

/// Release direction for arm yaw `psi`, throwing yaw `phi` and pitch `gamma`.
pub fn throw_direction(psi: f64, phi: f64, gamma: f64) -> Vec3 {
    let (sg, cg) = gamma.sin_cos();
    let (sy, cy) = (psi + phi).sin_cos();
    Vec3::new(cg * cy, cg * sy, sg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedBound {
    pub speed: f64,
    /// True when the cap, not a joint limit, determined `speed`.
    pub capped: bool,
}

/// Largest `s` with `qd_min <= s·u <= qd_max`, by the ratio test.
pub fn ratio_test(
    u: &JointVector,
    qd_min: &JointVector,
    qd_max: &JointVector,
    cap: f64,
) -> SpeedBound {
    let mut s = f64::INFINITY;
    for i in 0..NUM_JOINTS {
        let bound = if u[i] > 0.0 {
            qd_max[i] / u[i]
        } else if u[i] < 0.0 {
            qd_min[i] / u[i]
        } else {
            continue;
        };
        s = s.min(bound);
    }
    if s > cap {
        SpeedBound {
            speed: cap,
            capped: true,
        }
    } else {
        SpeedBound {
            speed: s.max(0.0),
            capped: false,
        }
    }
}

fn speed_with_pinv(
    model: &ArmModel,
    pinv: &PositionJacobianPinv,
    psi: f64,
    phi: f64,
    gamma: f64,
    cap: f64,
) -> SpeedBound {
    let u = pinv * throw_direction(psi, phi, gamma);
    ratio_test(&u, &model.limits.qd_min, &model.limits.qd_max, cap)
}

/// Maximum end-effector speed along the (phi, gamma) throwing direction at `q`.
pub fn max_speed_along(
    model: &ArmModel,
    q: &JointVector,
    phi: f64,
    gamma: f64,
    cap: f64,
) -> Result<SpeedBound, KinematicsError> {
    let (ae, jac) = position_and_jacobian(model, q);
    let psi = planar_yaw(&ae)?;
    Ok(speed_with_pinv(
        model,
        &pseudoinverse(&jac, DEFAULT_PINV_CUTOFF),
        psi,
        phi,
        gamma,
        cap,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgehogMeta {
    pub arm: String,
    pub seed: u64,
    pub n_samples: usize,
    pub n_retained: usize,
    pub sigma_min: f64,
    pub speed_cap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityHedgehog {
    pub grids: HedgehogGrids,
    /// Flattened `(z, phi, gamma)`, see [`HedgehogGrids::index`].
    pub max_speed: Vec<f64>,
    pub q_at: Vec<JointVector>,
    pub capped: Vec<bool>,
    pub meta: HedgehogMeta,
}

#[derive(Clone)]
struct CellBest {
    speed: Vec<f64>,
    sample: Vec<usize>,
    capped: Vec<bool>,
}

impl CellBest {
    fn new(n: usize) -> Self {
        Self {
            speed: vec![0.0; n],
            sample: vec![usize::MAX; n],
            capped: vec![false; n],
        }
    }

    fn offer(&mut self, cell: usize, speed: f64, sample: usize, capped: bool) {
        if speed > self.speed[cell] {
            self.speed[cell] = speed;
            self.sample[cell] = sample;
            self.capped[cell] = capped;
        }
    }
}

impl VelocityHedgehog {
    pub fn cell(&self, iz: usize, ip: usize, ig: usize) -> (f64, JointVector) {
        let k = self.grids.index(iz, ip, ig);
        (self.max_speed[k], self.q_at[k])
    }

    pub fn populated_cells(&self) -> usize {
        self.max_speed.iter().filter(|s| **s > 0.0).count()
    }

    fn manifest(&self) -> Manifest {
        let n = self.grids.num_cells();
        Manifest {
            format: "throwplan-hedgehog".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            grids: self.grids.clone(),
            shape: self.grids.shape(),
            joints: NUM_JOINTS,
            max_speed_offset: 0,
            q_at_offset: 8 * n,
            capped_offset: 8 * n * (1 + NUM_JOINTS),
            byte_len: 8 * n * (1 + NUM_JOINTS) + n,
            populated_cells: self.populated_cells(),
            total_cells: n,
            meta: self.meta.clone(),
        }
    }

    /// Binary blob plus JSON manifest next to it.
    pub fn write(&self, path: &Path) -> Result<(), HedgehogError> {
        let m = self.manifest();
        let mut bytes = Vec::with_capacity(m.byte_len);
        for s in &self.max_speed {
            bytes.extend_from_slice(&s.to_le_bytes());
        }
        for q in &self.q_at {
            for v in q.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes.extend(self.capped.iter().map(|c| *c as u8));
        crate::io::write_atomic(path, &bytes)?;
        crate::io::write_atomic(
            &crate::io::sidecar_path(path),
            serde_json::to_string_pretty(&m)?.as_bytes(),
        )?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, HedgehogError> {
        let m: Manifest =
            serde_json::from_str(&std::fs::read_to_string(crate::io::sidecar_path(path))?)?;
        m.grids.validate()?;
        let n = m.grids.num_cells();
        let bytes = std::fs::read(path)?;
        if m.shape != m.grids.shape()
            || m.joints != NUM_JOINTS
            || bytes.len() != m.byte_len
            || m.byte_len != 8 * n * (1 + NUM_JOINTS) + n
        {
            return Err(HedgehogError::Malformed(
                "size does not match manifest".into(),
            ));
        }
        let f = |off: usize| f64::from_le_bytes(bytes[off..off + 8].try_into().expect("8 bytes"));
        let max_speed = (0..n).map(|k| f(m.max_speed_offset + 8 * k)).collect();
        let q_at = (0..n)
            .map(|k| JointVector::from_fn(|i, _| f(m.q_at_offset + 8 * (NUM_JOINTS * k + i))))
            .collect();
        let capped = bytes[m.capped_offset..m.capped_offset + n]
            .iter()
            .map(|b| *b != 0)
            .collect();
        Ok(Self {
            grids: m.grids,
            max_speed,
            q_at,
            capped,
            meta: m.meta,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: String,
    grids: HedgehogGrids,
    shape: [usize; 3],
    joints: usize,
    max_speed_offset: usize,
    q_at_offset: usize,
    capped_offset: usize,
    byte_len: usize,
    populated_cells: usize,
    total_cells: usize,
    meta: HedgehogMeta,
}

/// Running per-cell maximum over samples; ties keep the earlier sample.
pub fn build_hedgehog(
    model: &ArmModel,
    samples: &[ConfigSample],
    grids: &HedgehogGrids,
    speed_cap: f64,
) -> Result<VelocityHedgehog, HedgehogError> {
    grids.validate()?;
    if samples.is_empty() {
        return Err(HedgehogError::EmptySamples);
    }
    let n_cells = grids.num_cells();
    let shards: Vec<CellBest> = samples
        .par_chunks(SHARD)
        .enumerate()
        .map(|(shard, chunk)| {
            let mut best = CellBest::new(n_cells);
            for (k, s) in chunk.iter().enumerate() {
                let Some(iz) = grids.z_bin(s.ae.z) else {
                    continue;
                };
                let Ok(psi) = planar_yaw(&s.ae) else { continue };
                let pinv = pseudoinverse(&s.jacobian, DEFAULT_PINV_CUTOFF);
                for (ip, &phi) in grids.phi.iter().enumerate() {
                    for (ig, &gamma) in grids.gamma.iter().enumerate() {
                        let b = speed_with_pinv(model, &pinv, psi, phi, gamma, speed_cap);
                        best.offer(
                            grids.index(iz, ip, ig),
                            b.speed,
                            shard * SHARD + k,
                            b.capped,
                        );
                    }
                }
            }
            best
        })
        .collect();
    let mut total = CellBest::new(n_cells);
    for shard in &shards {
        for c in 0..n_cells {
            if shard.sample[c] != usize::MAX {
                total.offer(c, shard.speed[c], shard.sample[c], shard.capped[c]);
            }
        }
    }
    let q_at = total
        .sample
        .iter()
        .map(|&i| {
            if i == usize::MAX {
                JointVector::zeros()
            } else {
                samples[i].q
            }
        })
        .collect();
    Ok(VelocityHedgehog {
        grids: grids.clone(),
        max_speed: total.speed,
        q_at,
        capped: total.capped,
        meta: HedgehogMeta {
            arm: model.name.clone(),
            seed: 0,
            n_samples: samples.len(),
            n_retained: samples.len(),
            sigma_min: 0.0,
            speed_cap,
        },
    })
}

/// Samples then builds, recording provenance.
pub fn generate_hedgehog(
    model: &ArmModel,
    n: usize,
    seed: u64,
    sigma_min: f64,
    grids: &HedgehogGrids,
    speed_cap: f64,
) -> Result<VelocityHedgehog, HedgehogError> {
    let samples = sample_configurations(model, n, seed, sigma_min);
    let mut h = build_hedgehog(model, &samples, grids, speed_cap)?;
    h.meta.seed = seed;
    h.meta.n_samples = n;
    h.meta.sigma_min = sigma_min;
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipHistogram {
    pub s1_edges: Vec<f64>,
    pub dot_edges: Vec<f64>,
    /// `counts[s1_bin][dot_bin]`.
    pub counts: Vec<Vec<u64>>,
    /// Mean `|u₁ · unit(A⃗E_xy)|` over the lowest and highest tenth by `s₁`.
    pub mean_dot_bottom_decile: f64,
    pub mean_dot_top_decile: f64,
}

impl ManipHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// `s₁(J_xy)` and `|u₁ · unit(A⃗E_xy)|`; the dot is 0 when either is degenerate.
pub fn manipulability_point(sample: &ConfigSample) -> (f64, f64) {
    let jxy = sample.jacobian.fixed_rows::<2>(0).into_owned();
    let top = kinematics::max_singular(&jxy);
    let horiz = sample.ae.xy();
    let norm = horiz.norm();
    let dot = if top.valid && norm > 1e-9 {
        (top.direction.dot(&horiz) / norm).abs().min(1.0)
    } else {
        0.0
    };
    (top.value, dot)
}

fn bin_of(v: f64, lo: f64, hi: f64, n: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    (((v - lo) / (hi - lo) * n as f64) as usize).min(n - 1)
}

pub fn manipulability_histogram(
    samples: &[ConfigSample],
    s1_bins: usize,
    dot_bins: usize,
) -> Result<ManipHistogram, HedgehogError> {
    if samples.is_empty() {
        return Err(HedgehogError::EmptySamples);
    }
    if s1_bins == 0 || dot_bins == 0 {
        return Err(HedgehogError::InvalidGrid(
            "histogram needs at least one bin per axis".into(),
        ));
    }
    let points: Vec<(f64, f64)> = samples.par_iter().map(manipulability_point).collect();
    let s1_max = points.iter().map(|p| p.0).fold(0.0, f64::max);
    let edges = |hi: f64, n: usize| {
        (0..=n)
            .map(|i| hi * i as f64 / n as f64)
            .collect::<Vec<_>>()
    };
    let mut counts = vec![vec![0u64; dot_bins]; s1_bins];
    for &(s1, dot) in &points {
        counts[bin_of(s1, 0.0, s1_max, s1_bins)][bin_of(dot, 0.0, 1.0, dot_bins)] += 1;
    }
    let mut sorted = points.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let tenth = (sorted.len() / 10).max(1);
    let mean = |s: &[(f64, f64)]| s.iter().map(|p| p.1).sum::<f64>() / s.len() as f64;
    Ok(ManipHistogram {
        s1_edges: edges(s1_max, s1_bins),
        dot_edges: edges(1.0, dot_bins),
        counts,
        mean_dot_bottom_decile: mean(&sorted[..tenth]),
        mean_dot_top_decile: mean(&sorted[sorted.len() - tenth..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn sample_at(model: &ArmModel, q: JointVector) -> ConfigSample {
        let (ae, jacobian) = position_and_jacobian(model, &q);
        ConfigSample { q, ae, jacobian }
    }

    #[test]
    fn default_grid_shape() {
        let g = HedgehogGrids::default();
        assert_eq!(g.shape(), [25, 13, 11]);
        assert_eq!(g.num_cells(), 3575);
        assert!((g.z[24] - 1.2).abs() < 1e-12);
        assert!((g.phi[0] + FRAC_PI_2).abs() < 1e-12);
        g.validate().unwrap();
        let (iz, ip, ig) = g.unindex(g.index(3, 7, 9));
        assert_eq!((iz, ip, ig), (3, 7, 9));
    }

    #[test]
    fn height_binning() {
        let g = HedgehogGrids::default();
        assert_eq!(g.z_bin(0.0), Some(0));
        assert_eq!(g.z_bin(0.024), Some(0));
        assert_eq!(g.z_bin(0.026), Some(1));
        assert_eq!(g.z_bin(-0.02), Some(0));
        assert_eq!(g.z_bin(-0.03), None);
        assert_eq!(g.z_bin(1.22), Some(24));
        assert_eq!(g.z_bin(1.3), None);
        let bad = HedgehogGrids {
            z: vec![0.0, 0.0],
            ..g
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn ratio_test_examples() {
        let lim = JointVector::repeat(2.0);
        let mut u = JointVector::zeros();
        u[0] = 0.5;
        u[1] = -1.0;
        let b = ratio_test(&u, &-lim, &lim, 10.0);
        assert_eq!(
            b,
            SpeedBound {
                speed: 2.0,
                capped: false
            }
        );
        let d = ratio_test(&u, &(-lim * 2.0), &(lim * 2.0), 10.0);
        assert_eq!(d.speed, 4.0);
        let z = ratio_test(&JointVector::zeros(), &-lim, &lim, 10.0);
        assert_eq!(
            z,
            SpeedBound {
                speed: 10.0,
                capped: true
            }
        );
    }

    #[test]
    fn sigma_filter_extremes() {
        let m = ArmModel::panda();
        assert_eq!(sample_configurations(&m, 1000, 1, 0.0).len(), 1000);
        assert!(sample_configurations(&m, 1000, 1, 10.0).is_empty());
        let s = sample_configurations(&m, 200, 3, 0.0);
        for c in &s {
            assert!(m.limits.within_position(&c.q));
        }
    }

    #[test]
    fn single_sample_single_cell() {
        let m = ArmModel::panda();
        let q = JointVector::from_column_slice(&[0.1, 0.3, -0.2, -1.5, 0.2, 1.8, 0.4]);
        let s = sample_at(&m, q);
        let grids = HedgehogGrids {
            z: vec![0.0],
            phi: vec![0.2],
            gamma: vec![0.7],
        };
        let h = build_hedgehog(&m, &[s], &grids, DEFAULT_SPEED_CAP).unwrap();
        let expect = max_speed_along(&m, &q, 0.2, 0.7, DEFAULT_SPEED_CAP)
            .unwrap()
            .speed;
        assert_eq!(h.cell(0, 0, 0), (expect, q));
        assert!(expect > 0.0);
    }

    #[test]
    fn slower_second_sample_does_not_replace() {
        let m = ArmModel::panda();
        let q = JointVector::from_column_slice(&[0.1, 0.3, -0.2, -1.5, 0.2, 1.8, 0.4]);
        let grids = HedgehogGrids {
            z: vec![0.0],
            phi: vec![0.0],
            gamma: vec![0.5],
        };
        let fast = sample_at(&m, q);
        let mut slow_model = m.clone();
        slow_model.limits.qd_max /= 2.0;
        slow_model.limits.qd_min /= 2.0;
        // Same geometry twice: the tie keeps the earlier one.
        let mut q2 = q;
        q2[6] += 0.3; // the last joint does not move the tool point
        let twin = sample_at(&m, q2);
        let h = build_hedgehog(&m, &[fast, twin], &grids, DEFAULT_SPEED_CAP).unwrap();
        assert_eq!(h.q_at[0], q);
        assert!(!h.q_at[0].iter().zip(q2.iter()).all(|(a, b)| a == b));
        // Homogeneity in the velocity limits.
        let full = max_speed_along(&m, &q, 0.0, 0.5, 100.0).unwrap().speed;
        let half = max_speed_along(&slow_model, &q, 0.0, 0.5, 100.0)
            .unwrap()
            .speed;
        assert!((full - 2.0 * half).abs() < 1e-12);
    }

    fn small_build() -> (ArmModel, VelocityHedgehog) {
        let m = ArmModel::panda();
        let h = generate_hedgehog(
            &m,
            5000,
            11,
            DEFAULT_SIGMA_MIN,
            &HedgehogGrids::default(),
            DEFAULT_SPEED_CAP,
        )
        .unwrap();
        (m, h)
    }

    #[test]
    fn cells_are_feasible_active_and_reproducible() {
        let (m, h) = small_build();
        assert!(h.populated_cells() > 0);
        let lim = &m.limits;
        for k in 0..h.grids.num_cells() {
            if h.max_speed[k] == 0.0 {
                continue;
            }
            let (iz, ip, ig) = h.grids.unindex(k);
            let (phi, gamma) = (h.grids.phi[ip], h.grids.gamma[ig]);
            let q = h.q_at[k];
            assert!(lim.within_position(&q));
            let again = max_speed_along(&m, &q, phi, gamma, DEFAULT_SPEED_CAP).unwrap();
            assert_eq!(again.speed, h.max_speed[k]);
            let (ae, jac) = position_and_jacobian(&m, &q);
            assert_eq!(h.grids.z_bin(ae.z), Some(iz));
            let psi = planar_yaw(&ae).unwrap();
            let qd = pseudoinverse(&jac, DEFAULT_PINV_CUTOFF)
                * throw_direction(psi, phi, gamma)
                * h.max_speed[k];
            let mut active = false;
            for i in 0..NUM_JOINTS {
                assert!(qd[i] <= lim.qd_max[i] + 1e-9 && qd[i] >= lim.qd_min[i] - 1e-9);
                active |=
                    (qd[i] - lim.qd_max[i]).abs() <= 1e-9 || (qd[i] - lim.qd_min[i]).abs() <= 1e-9;
            }
            assert!(active || h.capped[k]);
        }
    }

    #[test]
    fn more_samples_never_lower_a_cell() {
        let m = ArmModel::panda();
        let g = HedgehogGrids::default();
        let a = generate_hedgehog(&m, 3000, 5, DEFAULT_SIGMA_MIN, &g, DEFAULT_SPEED_CAP).unwrap();
        let b = generate_hedgehog(&m, 6000, 5, DEFAULT_SIGMA_MIN, &g, DEFAULT_SPEED_CAP).unwrap();
        for (x, y) in a.max_speed.iter().zip(&b.max_speed) {
            assert!(y >= x);
        }
        let again =
            generate_hedgehog(&m, 3000, 5, DEFAULT_SIGMA_MIN, &g, DEFAULT_SPEED_CAP).unwrap();
        assert_eq!(a, again);
    }

    #[test]
    fn file_round_trip_is_exact() {
        let (_, h) = small_build();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.bin");
        h.write(&path).unwrap();
        let back = VelocityHedgehog::read(&path).unwrap();
        assert_eq!(h, back);
        let first = std::fs::read(&path).unwrap();
        back.write(&path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
        std::fs::write(&path, &first[..10]).unwrap();
        assert!(matches!(
            VelocityHedgehog::read(&path),
            Err(HedgehogError::Malformed(_))
        ));
    }

    #[test]
    fn manipulability_dot_extremes() {
        let m = ArmModel::panda();
        let jac = PositionJacobian::from_fn(|r, c| if r == 0 && c == 0 { 2.0 } else { 0.0 });
        let along = ConfigSample {
            q: JointVector::zeros(),
            ae: Vec3::new(0.5, 0.0, 0.3),
            jacobian: jac,
        };
        let (s1, dot) = manipulability_point(&along);
        assert!((s1 - 2.0).abs() < 1e-12 && (dot - 1.0).abs() < 1e-12);
        let across = ConfigSample {
            ae: Vec3::new(0.0, 0.5, 0.3),
            ..along.clone()
        };
        assert!(manipulability_point(&across).1.abs() < 1e-12);
        let samples = sample_configurations(&m, 2000, 2, 0.0);
        let hist = manipulability_histogram(&samples, 10, 10).unwrap();
        assert_eq!(hist.total(), 2000);
        assert!(manipulability_histogram(&[], 10, 10).is_err());
    }
}
