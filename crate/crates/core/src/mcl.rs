//! Particle-based self-localization: odometry motion sampling, a
//! likelihood-field range-sensor model, the filter step, low-variance
//! resampling, and ancestry-traced fixed-lag smoothing.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{gaussian_logpdf, log_sum_exp, normalize_angle, Pose};
use crate::grid::{CellState, DistanceField, OccupancyGrid};
use crate::world::{apply_control, gauss, Control, MotionNoise, SensorScan};

/// One pose hypothesis with its importance weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub pose: Pose,
    pub weight: f64,
}

/// The particle population at one time step; weights sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    pub particles: Vec<Particle>,
    pub step: usize,
}

impl ParticleSet {
    /// All particles at `pose`, uniform weights.
    pub fn at_pose(pose: Pose, count: usize) -> ParticleSet {
        let w = 1.0 / count as f64;
        ParticleSet {
            particles: (0..count).map(|_| Particle { pose, weight: w }).collect(),
            step: 0,
        }
    }

    /// Particles drawn uniformly over the free cells of `grid` with uniform
    /// headings.
    pub fn uniform_over_free(grid: &OccupancyGrid, count: usize, rng: &mut impl Rng) -> ParticleSet {
        let free: Vec<(usize, usize)> = (0..grid.height)
            .flat_map(|y| (0..grid.width).map(move |x| (x, y)))
            .filter(|&(x, y)| grid.cell(x, y) == CellState::Free)
            .collect();
        assert!(!free.is_empty(), "map has no free cells");
        let w = 1.0 / count as f64;
        let particles = (0..count)
            .map(|_| {
                let (cx, cy) = free[rng.random_range(0..free.len())];
                let x = (cx as f64 + rng.random::<f64>()) * grid.resolution;
                let y = (cy as f64 + rng.random::<f64>()) * grid.resolution;
                let theta = normalize_angle(rng.random::<f64>() * std::f64::consts::TAU);
                Particle { pose: Pose::new(x, y, theta), weight: w }
            })
            .collect();
        ParticleSet { particles, step: 0 }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.particles.iter().map(|p| p.pose).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }

    /// Effective sample size `1 / sum(w^2)` of the normalized weights.
    pub fn effective_sample_size(&self) -> f64 {
        let sum_sq: f64 = self.particles.iter().map(|p| p.weight * p.weight).sum();
        if sum_sq > 0.0 {
            1.0 / sum_sq
        } else {
            0.0
        }
    }

    /// Weighted mean pose. Sums are centered on the first particle so a
    /// degenerate population (all particles identical) averages exactly to
    /// that pose.
    pub fn mean_pose(&self) -> Pose {
        let p0 = self.particles[0].pose;
        let mut dx = 0.0;
        let mut dy = 0.0;
        let mut sin = 0.0;
        let mut cos = 0.0;
        let mut total = 0.0;
        for p in &self.particles {
            dx += p.weight * (p.pose.x - p0.x);
            dy += p.weight * (p.pose.y - p0.y);
            sin += p.weight * p.pose.theta.sin();
            cos += p.weight * p.pose.theta.cos();
            total += p.weight;
        }
        if total <= 0.0 {
            return p0;
        }
        Pose::new(p0.x + dx / total, p0.y + dy / total, sin.atan2(cos))
    }
}

/// Draw from the motion model `p(x_t | x_{t-1}, u_t)`.
///
/// Zero noise reduces to the exact kinematic advance.
pub fn sample_motion_model(
    control: &Control,
    pose: &Pose,
    noise: &MotionNoise,
    rng: &mut impl Rng,
) -> Pose {
    let noisy = Control::new(
        control.rot1 + gauss(noise.sigma_rot1, rng),
        control.trans + gauss(noise.sigma_trans, rng),
        control.rot2 + gauss(noise.sigma_rot2, rng),
    );
    apply_control(pose, &noisy)
}

/// Log-density of moving `from -> to` under control `u`.
///
/// Inverts the rotate-translate-rotate decomposition and scores each
/// component against its commanded value.
pub fn motion_log_density(from: &Pose, to: &Pose, u: &Control, noise: &MotionNoise) -> f64 {
    let dx = to.x - from.x;
    let dy = to.y - from.y;
    let trans = (dx * dx + dy * dy).sqrt();
    let rot1 = if trans > 1e-9 {
        normalize_angle(dy.atan2(dx) - from.theta)
    } else {
        0.0
    };
    let rot2 = normalize_angle(to.theta - from.theta - rot1);

    let component = |value: f64, commanded: f64, sigma: f64, angular: bool| -> f64 {
        let diff = if angular { normalize_angle(value - commanded) } else { value - commanded };
        if sigma > 0.0 {
            gaussian_logpdf(diff, 0.0, sigma)
        } else if diff.abs() < 1e-9 {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    };
    component(rot1, u.rot1, noise.sigma_rot1, true)
        + component(trans, u.trans, noise.sigma_trans, false)
        + component(rot2, u.rot2, noise.sigma_rot2, true)
}

/// Likelihood-field sensor model parameters. Weights are the mixture of a
/// Gaussian around the nearest obstacle, a uniform term, and a max-range
/// term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorModelParams {
    pub z_hit: f64,
    pub z_random: f64,
    pub z_max: f64,
    /// Std dev of the hit Gaussian, cm.
    pub sigma_hit: f64,
    /// Per-beam log-density floor; also the value used for off-map poses.
    pub floor_log: f64,
}

impl Default for SensorModelParams {
    fn default() -> Self {
        SensorModelParams {
            z_hit: 0.85,
            z_random: 0.10,
            z_max: 0.05,
            sigma_hit: 10.0,
            floor_log: -12.0,
        }
    }
}

/// Precomputed obstacle distance field plus the mixture parameters.
#[derive(Debug, Clone)]
pub struct LikelihoodField {
    field: DistanceField,
    pub params: SensorModelParams,
}

impl LikelihoodField {
    pub fn new(grid: &OccupancyGrid, params: SensorModelParams) -> LikelihoodField {
        LikelihoodField { field: DistanceField::build(grid), params }
    }

    /// Log-likelihood of `scan` from `pose`; beams are independent.
    ///
    /// An off-map pose gets the configured floor for every beam rather
    /// than an error, which effectively kills the particle.
    pub fn log_likelihood(&self, scan: &SensorScan, pose: &Pose) -> f64 {
        let p = &self.params;
        if self.field.distance_at(pose.x, pose.y).is_none() {
            return p.floor_log * scan.ranges.len() as f64;
        }
        let norm = 1.0 / (p.sigma_hit * (2.0 * std::f64::consts::PI).sqrt());
        let uniform = p.z_random / scan.max_range;
        let max_component = p.z_max / scan.max_range;
        let mut total = 0.0;
        for (angle, range) in scan.angles.iter().zip(&scan.ranges) {
            let mut density = uniform;
            if *range >= scan.max_range - 1e-9 {
                density += max_component;
            } else {
                let ex = pose.x + range * (pose.theta + angle).cos();
                let ey = pose.y + range * (pose.theta + angle).sin();
                if let Some(d) = self.field.distance_at(ex, ey) {
                    if d.is_finite() {
                        density += p.z_hit * norm * (-0.5 * (d / p.sigma_hit).powi(2)).exp();
                    }
                }
            }
            total += density.ln().max(p.floor_log);
        }
        total
    }
}

/// Systematic (low-variance) resampling: source index per output slot.
///
/// Expected copy count of particle `i` is `m * w_i` and deviates by less
/// than one.
pub fn resample_indices(weights: &[f64], m: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let step = total / m as f64;
    let mut pointer = rng.random::<f64>() * step;
    let mut cumulative = weights[0];
    let mut idx = 0usize;
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        while pointer > cumulative && idx < weights.len() - 1 {
            idx += 1;
            cumulative += weights[idx];
        }
        out.push(idx);
        pointer += step;
    }
    Ok(out)
}

/// Resample a particle set; output weights are uniform `1/M`.
pub fn low_variance_resample(ps: &ParticleSet, rng: &mut impl Rng) -> Result<ParticleSet> {
    let indices = resample_indices(&ps.weights(), ps.len(), rng)?;
    let w = 1.0 / ps.len() as f64;
    Ok(ParticleSet {
        particles: indices.iter().map(|&i| Particle { pose: ps.particles[i].pose, weight: w }).collect(),
        step: ps.step,
    })
}

/// Filter configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MclConfig {
    pub motion: MotionNoise,
    pub sensor: SensorModelParams,
    /// Resample when `ESS < ess_ratio * M`.
    pub ess_ratio: f64,
}

impl Default for MclConfig {
    fn default() -> Self {
        MclConfig {
            motion: MotionNoise { sigma_rot1: 0.02, sigma_trans: 2.0, sigma_rot2: 0.02 },
            sensor: SensorModelParams::default(),
            ess_ratio: 0.5,
        }
    }
}

/// Per-step filter diagnostics.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct StepDiag {
    pub ess: f64,
    pub resampled: bool,
    /// All weights underflowed and were reset to uniform.
    pub degenerate: bool,
}

/// Outcome of one filter step, with resampling ancestry for smoothing.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub set: ParticleSet,
    /// `parents[m]` = index in the previous step's set this particle
    /// descends from.
    pub parents: Vec<usize>,
    pub diag: StepDiag,
}

/// One filter step with an optional extra per-pose log-weight factor.
///
/// Motion-samples every particle, weights by the sensor model (and the
/// extra factor when given) in log space, normalizes, and resamples when
/// the effective sample size drops below the configured ratio.
pub fn mcl_step_with_extra(
    ps: &ParticleSet,
    control: &Control,
    scan: &SensorScan,
    field: &LikelihoodField,
    cfg: &MclConfig,
    extra_log_weight: Option<&dyn Fn(&Pose) -> f64>,
    rng: &mut impl Rng,
) -> StepOutcome {
    let m = ps.len();
    let mut poses = Vec::with_capacity(m);
    for p in &ps.particles {
        poses.push(sample_motion_model(control, &p.pose, &cfg.motion, rng));
    }

    let mut logw = Vec::with_capacity(m);
    for (p, pose) in ps.particles.iter().zip(&poses) {
        let mut lw = if p.weight > 0.0 { p.weight.ln() } else { f64::NEG_INFINITY };
        lw += field.log_likelihood(scan, pose);
        if let Some(extra) = extra_log_weight {
            lw += extra(pose);
        }
        logw.push(lw);
    }

    let lse = log_sum_exp(&logw);
    let mut diag = StepDiag::default();
    let weights: Vec<f64> = if lse.is_finite() {
        logw.iter().map(|&lw| (lw - lse).exp()).collect()
    } else {
        diag.degenerate = true;
        vec![1.0 / m as f64; m]
    };

    let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    diag.ess = ess;

    if ess < cfg.ess_ratio * m as f64 {
        diag.resampled = true;
        let parents = resample_indices(&weights, m, rng).expect("weights normalized");
        let w = 1.0 / m as f64;
        let set = ParticleSet {
            particles: parents.iter().map(|&i| Particle { pose: poses[i], weight: w }).collect(),
            step: ps.step + 1,
        };
        StepOutcome { set, parents, diag }
    } else {
        let set = ParticleSet {
            particles: poses
                .into_iter()
                .zip(weights)
                .map(|(pose, weight)| Particle { pose, weight })
                .collect(),
            step: ps.step + 1,
        };
        StepOutcome { set, parents: (0..m).collect(), diag }
    }
}

/// Standard MCL step: motion sampling, sensor weighting, resampling.
pub fn mcl_step(
    ps: &ParticleSet,
    control: &Control,
    scan: &SensorScan,
    field: &LikelihoodField,
    cfg: &MclConfig,
    rng: &mut impl Rng,
) -> StepOutcome {
    mcl_step_with_extra(ps, control, scan, field, cfg, None, rng)
}

/// One stored step of filter history.
#[derive(Debug, Clone)]
struct HistoryStep {
    poses: Vec<Pose>,
    weights: Vec<f64>,
    /// Index into the previous stored step.
    parents: Vec<usize>,
}

/// Rolling window of particle history for fixed-lag smoothing.
///
/// With `capacity = Some(lag)` the window keeps the latest `lag + 1` steps;
/// `None` keeps everything (used offline to smooth a whole run).
#[derive(Debug, Clone)]
pub struct PoseHistory {
    capacity: Option<usize>,
    steps: VecDeque<HistoryStep>,
    /// Time step of the oldest stored entry.
    start_t: usize,
}

impl PoseHistory {
    pub fn with_lag(lag: usize) -> PoseHistory {
        PoseHistory { capacity: Some(lag), steps: VecDeque::new(), start_t: 0 }
    }

    pub fn unbounded() -> PoseHistory {
        PoseHistory { capacity: None, steps: VecDeque::new(), start_t: 0 }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Time step of the newest stored entry.
    pub fn latest_t(&self) -> Option<usize> {
        if self.steps.is_empty() {
            None
        } else {
            Some(self.start_t + self.steps.len() - 1)
        }
    }

    /// Record the initial particle set (identity ancestry).
    pub fn push_initial(&mut self, set: &ParticleSet) {
        self.push(set.poses(), set.weights(), (0..set.len()).collect());
    }

    /// Record one filter step outcome.
    pub fn push_step(&mut self, outcome: &StepOutcome) {
        self.push(outcome.set.poses(), outcome.set.weights(), outcome.parents.clone());
    }

    fn push(&mut self, poses: Vec<Pose>, weights: Vec<f64>, parents: Vec<usize>) {
        self.steps.push_back(HistoryStep { poses, weights, parents });
        if let Some(cap) = self.capacity {
            while self.steps.len() > cap + 1 {
                self.steps.pop_front();
                self.start_t += 1;
            }
        }
    }

    /// Ancestor index at window offset `offset` of the current particle `m`.
    fn ancestor_at(&self, mut m: usize, offset: usize) -> usize {
        for s in (offset + 1..self.steps.len()).rev() {
            m = self.steps[s].parents[m];
        }
        m
    }

    /// Smoothed mean pose at `lag` steps before the newest entry.
    ///
    /// Current weights are carried back through the resampling ancestry, so
    /// the estimate for step `t - lag` is conditioned on everything observed
    /// through `t`. `lag = 0` reproduces the online estimate.
    pub fn smoothed_mean(&self, lag: usize) -> Result<Pose> {
        if self.steps.len() < lag + 1 {
            return Err(Error::InsufficientHistory { have: self.steps.len(), need: lag + 1 });
        }
        let target = self.steps.len() - 1 - lag;
        let newest = self.steps.len() - 1;
        let weights = &self.steps[newest].weights;
        let target_poses = &self.steps[target].poses;

        let mut particles = Vec::with_capacity(weights.len());
        for (m, &w) in weights.iter().enumerate() {
            let idx = self.ancestor_at(m, target);
            particles.push(Particle { pose: target_poses[idx], weight: w });
        }
        Ok(ParticleSet { particles, step: self.start_t + target }.mean_pose())
    }

    /// Smoothed mean at absolute time step `t`, using at most `max_lag`
    /// steps of future data (truncated near the end of the window).
    pub fn smoothed_mean_at(&self, t: usize, max_lag: usize) -> Result<Pose> {
        let latest = self.latest_t().ok_or(Error::InsufficientHistory { have: 0, need: 1 })?;
        if t < self.start_t || t > latest {
            return Err(Error::InsufficientHistory { have: self.steps.len(), need: t + 1 });
        }
        let lag = (latest - t).min(max_lag);
        // Trim virtual view: smooth at offset (t - start) using data through
        // t + lag by walking ancestry only down from that step.
        let end = t - self.start_t + lag;
        let target = t - self.start_t;
        let weights = &self.steps[end].weights;
        let target_poses = &self.steps[target].poses;
        let mut particles = Vec::with_capacity(weights.len());
        for (m, &w) in weights.iter().enumerate() {
            let mut idx = m;
            for s in (target + 1..=end).rev() {
                idx = self.steps[s].parents[idx];
            }
            particles.push(Particle { pose: target_poses[idx], weight: w });
        }
        Ok(ParticleSet { particles, step: t }.mean_pose())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::seeded_stream;
    use crate::world::{simulate_scan, NoiseConfig};

    fn boxed_room() -> OccupancyGrid {
        let mut grid = OccupancyGrid::filled(60, 60, 10.0, CellState::Free);
        grid.fill_rect(0.0, 0.0, 600.0, 10.0, CellState::Occupied);
        grid.fill_rect(0.0, 590.0, 600.0, 600.0, CellState::Occupied);
        grid.fill_rect(0.0, 0.0, 10.0, 600.0, CellState::Occupied);
        grid.fill_rect(590.0, 0.0, 600.0, 600.0, CellState::Occupied);
        grid.fill_rect(200.0, 250.0, 260.0, 310.0, CellState::Occupied);
        grid
    }

    fn quiet_noise(beams: usize) -> NoiseConfig {
        NoiseConfig {
            motion: MotionNoise::NONE,
            beam_sigma: 0.0,
            max_range: 300.0,
            beam_count: beams,
            fov: std::f64::consts::PI,
            map_flip_rate: 0.0,
        }
    }

    #[test]
    fn motion_zero_noise_zero_control_is_identity() {
        let pose = Pose::new(10.0, 20.0, 0.5);
        let mut rng = seeded_stream(0, 0);
        let out = sample_motion_model(&Control::ZERO, &pose, &MotionNoise::NONE, &mut rng);
        assert_eq!(out, pose);
    }

    #[test]
    fn motion_zero_noise_translates_along_heading() {
        let pose = Pose::new(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let control = Control::new(0.0, 100.0, 0.0);
        let mut rng = seeded_stream(0, 0);
        let out = sample_motion_model(&control, &pose, &MotionNoise::NONE, &mut rng);
        assert!(out.x.abs() < 1e-9);
        assert!((out.y - 100.0).abs() < 1e-9);
    }

    #[test]
    fn motion_noise_spread_matches_sigma() {
        let pose = Pose::new(0.0, 0.0, 0.0);
        let control = Control::new(0.0, 100.0, 0.0);
        let noise = MotionNoise { sigma_rot1: 0.0, sigma_trans: 10.0, sigma_rot2: 0.0 };
        let mut rng = seeded_stream(7, 0);
        let n = 100_000;
        let mut xs = Vec::with_capacity(n);
        for _ in 0..n {
            xs.push(sample_motion_model(&control, &pose, &noise, &mut rng).x);
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((sd - 10.0).abs() < 0.3, "sd = {sd}");
    }

    #[test]
    fn motion_density_peaks_at_commanded_move() {
        let noise = MotionNoise { sigma_rot1: 0.05, sigma_trans: 5.0, sigma_rot2: 0.05 };
        let from = Pose::new(0.0, 0.0, 0.0);
        let u = Control::new(0.2, 50.0, -0.1);
        let exact = apply_control(&from, &u);
        let lp_exact = motion_log_density(&from, &exact, &u, &noise);
        let off = Pose::new(exact.x + 10.0, exact.y, exact.theta);
        assert!(lp_exact > motion_log_density(&from, &off, &u, &noise));
    }

    #[test]
    fn sensor_model_prefers_true_pose() {
        let grid = boxed_room();
        let noise = quiet_noise(15);
        let pose = Pose::new(150.0, 150.0, 0.7);
        let mut rng = seeded_stream(1, 0);
        let scan = simulate_scan(&grid, &pose, &noise, &mut rng).unwrap();
        let field = LikelihoodField::new(&grid, SensorModelParams::default());
        let at_truth = field.log_likelihood(&scan, &pose);
        let shifted = Pose::new(pose.x + 50.0, pose.y, pose.theta);
        assert!(at_truth >= field.log_likelihood(&scan, &shifted));
    }

    #[test]
    fn sensor_model_max_range_closed_form() {
        let grid = OccupancyGrid::filled(40, 40, 10.0, CellState::Free);
        let field = LikelihoodField::new(
            &grid,
            SensorModelParams { z_hit: 0.0, z_random: 0.0, z_max: 1.0, sigma_hit: 10.0, floor_log: -30.0 },
        );
        let beams = 7usize;
        let scan = SensorScan {
            angles: (0..beams).map(|i| i as f64 * 0.1).collect(),
            ranges: vec![300.0; beams],
            max_range: 300.0,
        };
        let got = field.log_likelihood(&scan, &Pose::new(200.0, 200.0, 0.0));
        let expected = beams as f64 * (1.0f64 / 300.0).ln();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn sensor_model_single_beam_gaussian_peak() {
        // Obstacle exactly at the beam endpoint: density is the mixture
        // with the Gaussian at zero distance error.
        let mut grid = OccupancyGrid::filled(60, 60, 10.0, CellState::Free);
        grid.fill_rect(300.0, 100.0, 310.0, 110.0, CellState::Occupied);
        let params = SensorModelParams { z_hit: 0.9, z_random: 0.1, z_max: 0.0, sigma_hit: 10.0, floor_log: -30.0 };
        let field = LikelihoodField::new(&grid, params);
        let pose = Pose::new(105.0, 105.0, 0.0);
        // Endpoint lands on the obstacle cell center (305, 105).
        let scan = SensorScan { angles: vec![0.0], ranges: vec![200.0], max_range: 400.0 };
        let got = field.log_likelihood(&scan, &pose)            ;
        let peak = 0.9 / (10.0 * (2.0 * std::f64::consts::PI).sqrt()) + 0.1 / 400.0;
        assert!((got - peak.ln()).abs() < 1e-9, "{got} vs {}", peak.ln());
    }

    #[test]
    fn off_map_pose_gets_floor() {
        let grid = boxed_room();
        let field = LikelihoodField::new(&grid, SensorModelParams::default());
        let scan = SensorScan { angles: vec![0.0, 0.1], ranges: vec![100.0, 100.0], max_range: 300.0 };
        let got = field.log_likelihood(&scan, &Pose::new(-50.0, 100.0, 0.0));
        assert_eq!(got, 2.0 * field.params.floor_log);
    }

    #[test]
    fn resampling_equal_weights_preserves_multiset() {
        let poses: Vec<Pose> = (0..8).map(|i| Pose::new(i as f64, 0.0, 0.0)).collect();
        let ps = ParticleSet {
            particles: poses.iter().map(|&pose| Particle { pose, weight: 0.125 }).collect(),
            step: 0,
        };
        let mut rng = seeded_stream(3, 0);
        let out = low_variance_resample(&ps, &mut rng).unwrap();
        let mut got: Vec<i64> = out.particles.iter().map(|p| p.pose.x as i64).collect();
        got.sort();
        assert_eq!(got, (0..8).collect::<Vec<i64>>());
        assert!(out.particles.iter().all(|p| (p.weight - 0.125).abs() < 1e-15));
    }

    #[test]
    fn resampling_point_mass_copies_winner() {
        let mut particles: Vec<Particle> = (0..5)
            .map(|i| Particle { pose: Pose::new(i as f64, 0.0, 0.0), weight: 0.0 })
            .collect();
        particles[3].weight = 1.0;
        let ps = ParticleSet { particles, step: 0 };
        let mut rng = seeded_stream(4, 0);
        let out = low_variance_resample(&ps, &mut rng).unwrap();
        assert!(out.particles.iter().all(|p| p.pose.x == 3.0));
    }

    #[test]
    fn resampling_systematic_copy_counts() {
        // Weights (0.75, 0.25) with M = 4: systematic arithmetic forces
        // exactly 3 and 1 copies for any draw.
        for seed in 0..20 {
            let mut rng = seeded_stream(seed, 0);
            let idx = resample_indices(&[0.75, 0.25], 4, &mut rng).unwrap();
            let zeros = idx.iter().filter(|&&i| i == 0).count();
            assert_eq!(zeros, 3, "seed {seed}: {idx:?}");
        }
    }

    #[test]
    fn resampling_zero_weights_error() {
        let mut rng = seeded_stream(0, 0);
        assert!(matches!(resample_indices(&[0.0, 0.0], 2, &mut rng), Err(Error::DegenerateWeights)));
    }

    #[test]
    fn resampling_is_unbiased() {
        let weights = [0.5, 0.3, 0.15, 0.05];
        let m = 20usize;
        let reps = 10_000usize;
        let mut rng = seeded_stream(9, 0);
        let mut counts = [0usize; 4];
        for _ in 0..reps {
            for i in resample_indices(&weights, m, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        for i in 0..4 {
            let mean = counts[i] as f64 / reps as f64;
            let expected = m as f64 * weights[i];
            // Systematic resampling keeps each count within 1 of its
            // expectation; 3 sigma of the empirical mean is far tighter.
            let se = 1.0 / (reps as f64).sqrt();
            assert!((mean - expected).abs() < 3.0 * se + 0.01, "i={i}: {mean} vs {expected}");
        }
    }

    #[test]
    fn noiseless_filter_tracks_exactly() {
        let grid = boxed_room();
        let noise = quiet_noise(11);
        let cfg = MclConfig {
            motion: MotionNoise::NONE,
            sensor: SensorModelParams::default(),
            ess_ratio: 0.5,
        };
        let field = LikelihoodField::new(&grid, cfg.sensor);
        let mut truth = Pose::new(150.0, 150.0, 0.0);
        let mut ps = ParticleSet::at_pose(truth, 50);
        let mut rng = seeded_stream(5, 0);
        for t in 0..100 {
            let control = Control::new(if t % 10 == 0 { 0.3 } else { 0.0 }, 6.0, 0.0);
            let (next, odom, scan) =
                crate::world::simulate_step(&truth, &control, &noise, &grid, &mut rng).unwrap();
            truth = next;
            let out = mcl_step(&ps, &odom, &scan, &field, &cfg, &mut rng);
            ps = out.set;
            let est = ps.mean_pose();
            assert_eq!(est.x, truth.x);
            assert_eq!(est.y, truth.y);
        }
    }

    #[test]
    fn particle_count_is_preserved() {
        let grid = boxed_room();
        let noise = quiet_noise(11);
        let cfg = MclConfig::default();
        let field = LikelihoodField::new(&grid, cfg.sensor);
        let mut rng = seeded_stream(6, 0);
        let mut ps = ParticleSet::uniform_over_free(&grid, 1000, &mut rng);
        let truth = Pose::new(150.0, 150.0, 0.0);
        let scan = simulate_scan(&grid, &truth, &noise, &mut rng).unwrap();
        for _ in 0..5 {
            let out = mcl_step(&ps, &Control::ZERO, &scan, &field, &cfg, &mut rng);
            ps = out.set;
            assert_eq!(ps.len(), 1000);
        }
    }

    #[test]
    fn smoothing_lag_zero_equals_online_estimate() {
        let grid = boxed_room();
        let noise = NoiseConfig { motion: MotionNoise { sigma_rot1: 0.01, sigma_trans: 1.5, sigma_rot2: 0.01 }, beam_sigma: 2.0, ..quiet_noise(11) };
        let cfg = MclConfig::default();
        let field = LikelihoodField::new(&grid, cfg.sensor);
        let mut truth = Pose::new(150.0, 150.0, 0.0);
        let mut ps = ParticleSet::at_pose(truth, 100);
        let mut history = PoseHistory::with_lag(10);
        history.push_initial(&ps);
        let mut rng = seeded_stream(8, 0);
        for _ in 0..20 {
            let control = Control::new(0.05, 5.0, 0.0);
            let (next, odom, scan) =
                crate::world::simulate_step(&truth, &control, &noise, &grid, &mut rng).unwrap();
            truth = next;
            let out = mcl_step(&ps, &odom, &scan, &field, &cfg, &mut rng);
            history.push_step(&out);
            ps = out.set;
        }
        let online = ps.mean_pose();
        let smoothed = history.smoothed_mean(0).unwrap();
        assert_eq!(online, smoothed);
    }

    #[test]
    fn smoothing_noiseless_recovers_truth() {
        let grid = boxed_room();
        let noise = quiet_noise(11);
        let cfg = MclConfig { motion: MotionNoise::NONE, ..MclConfig::default() };
        let field = LikelihoodField::new(&grid, cfg.sensor);
        let mut truth = Pose::new(150.0, 150.0, 0.0);
        let mut truths = vec![truth];
        let mut ps = ParticleSet::at_pose(truth, 50);
        let mut history = PoseHistory::with_lag(15);
        history.push_initial(&ps);
        let mut rng = seeded_stream(2, 0);
        for _ in 0..30 {
            let control = Control::new(0.02, 5.0, 0.0);
            let (next, odom, scan) =
                crate::world::simulate_step(&truth, &control, &noise, &grid, &mut rng).unwrap();
            truth = next;
            truths.push(truth);
            let out = mcl_step(&ps, &odom, &scan, &field, &cfg, &mut rng);
            history.push_step(&out);
            ps = out.set;
        }
        let smoothed = history.smoothed_mean(15).unwrap();
        let expected = truths[truths.len() - 1 - 15];
        assert!((smoothed.x - expected.x).abs() < 1e-9);
        assert!((smoothed.y - expected.y).abs() < 1e-9);
    }

    #[test]
    fn smoothing_insufficient_history_signals_not_ready() {
        let ps = ParticleSet::at_pose(Pose::new(0.0, 0.0, 0.0), 5);
        let mut history = PoseHistory::with_lag(10);
        history.push_initial(&ps);
        assert!(matches!(
            history.smoothed_mean(10),
            Err(Error::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn permutation_equivariance_zero_noise() {
        let grid = boxed_room();
        let noise = quiet_noise(9);
        let cfg = MclConfig { motion: MotionNoise::NONE, ..MclConfig::default() };
        let field = LikelihoodField::new(&grid, cfg.sensor);
        let mut rng = seeded_stream(10, 0);
        let truth = Pose::new(200.0, 220.0, 0.1);
        let scan = simulate_scan(&grid, &truth, &noise, &mut rng).unwrap();
        let poses: Vec<Pose> = (0..6)
            .map(|i| Pose::new(150.0 + 20.0 * i as f64, 200.0, 0.1))
            .collect();
        let make_set = |order: &[usize]| ParticleSet {
            particles: order.iter().map(|&i| Particle { pose: poses[i], weight: 1.0 / 6.0 }).collect(),
            step: 0,
        };
        let fwd = make_set(&[0, 1, 2, 3, 4, 5]);
        let perm = [3, 1, 5, 0, 2, 4];
        let rev = make_set(&perm);
        // With deterministic motion the sampled weights depend only on the
        // pose, so weights follow the permutation.
        let mut rng_a = seeded_stream(11, 0);
        let mut rng_b = seeded_stream(11, 0);
        let cfg_no_resample = MclConfig { ess_ratio: 0.0, ..cfg };
        let a = mcl_step(&fwd, &Control::ZERO, &scan, &field, &cfg_no_resample, &mut rng_a);
        let b = mcl_step(&rev, &Control::ZERO, &scan, &field, &cfg_no_resample, &mut rng_b);
        for (slot, &src) in perm.iter().enumerate() {
            assert_eq!(b.set.particles[slot].pose, a.set.particles[src].pose);
            assert!((b.set.particles[slot].weight - a.set.particles[src].weight).abs() < 1e-12);
        }
    }
}
