//! World simulation: kinematics, noisy odometry and range scans, and
//! scripted scenarios with teaching events.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{normalize_angle, Pose};
use crate::grid::OccupancyGrid;
use crate::speech::{render_utterance, TemplateSet, Utterance, Word};

/// Odometry increment in the rotate-translate-rotate decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub rot1: f64,
    /// Forward translation in cm; never negative.
    pub trans: f64,
    pub rot2: f64,
}

impl Control {
    pub const ZERO: Control = Control { rot1: 0.0, trans: 0.0, rot2: 0.0 };

    pub fn new(rot1: f64, trans: f64, rot2: f64) -> Control {
        Control { rot1, trans: trans.max(0.0), rot2 }
    }
}

/// Advance a pose by an exact control.
pub fn apply_control(pose: &Pose, control: &Control) -> Pose {
    let heading = pose.theta + control.rot1;
    Pose::new(
        pose.x + control.trans * heading.cos(),
        pose.y + control.trans * heading.sin(),
        normalize_angle(heading + control.rot2),
    )
}

/// Per-component Gaussian standard deviations of the odometry reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionNoise {
    pub sigma_rot1: f64,
    pub sigma_trans: f64,
    pub sigma_rot2: f64,
}

impl MotionNoise {
    pub const NONE: MotionNoise = MotionNoise { sigma_rot1: 0.0, sigma_trans: 0.0, sigma_rot2: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if self.sigma_rot1 < 0.0 || self.sigma_trans < 0.0 || self.sigma_rot2 < 0.0 {
            return Err(Error::Scenario("motion noise sigmas must be non-negative".into()));
        }
        Ok(())
    }
}

/// Simulation noise and sensor geometry, the `noise` block of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub motion: MotionNoise,
    /// Std dev of additive Gaussian noise on each beam, cm.
    pub beam_sigma: f64,
    pub max_range: f64,
    pub beam_count: usize,
    /// Total field of view of the forward fan, radians.
    pub fov: f64,
    /// Probability of flipping each free/occupied cell in the map handed to
    /// the robot (the true map stays exact). Zero by default.
    #[serde(default)]
    pub map_flip_rate: f64,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        self.motion.validate()?;
        if self.beam_sigma < 0.0 || !(self.max_range > 0.0) || self.beam_count == 0 {
            return Err(Error::Scenario("invalid sensor noise block".into()));
        }
        if !(0.0..1.0).contains(&self.map_flip_rate) {
            return Err(Error::Scenario("map_flip_rate must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Beam angles relative to the heading, strictly increasing.
    pub fn beam_angles(&self) -> Vec<f64> {
        if self.beam_count == 1 {
            return vec![0.0];
        }
        let half = self.fov / 2.0;
        (0..self.beam_count)
            .map(|i| -half + self.fov * i as f64 / (self.beam_count - 1) as f64)
            .collect()
    }
}

/// One range scan: a fixed fan of beams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorScan {
    /// Beam angles relative to the robot heading, strictly increasing.
    pub angles: Vec<f64>,
    /// Measured ranges, cm, clamped to `[0, max_range]`.
    pub ranges: Vec<f64>,
    pub max_range: f64,
}

/// A teaching event: at step `t` the utterer names the current place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeachingEvent {
    pub t: usize,
    /// Ground-truth place label (the clustering target).
    pub place: String,
    /// The name spoken for the place.
    pub name: Word,
    /// Template id into [`TemplateSet::standard`].
    pub template: usize,
}

/// A scripted run: map, start pose, odometry script, teaching schedule,
/// and noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    /// Map file path, resolved relative to the scenario file.
    pub map: String,
    pub initial_pose: Pose,
    pub controls: Vec<Control>,
    pub teaching_events: Vec<TeachingEvent>,
    pub noise: NoiseConfig,
}

impl Scenario {
    pub fn validate(&self, templates: &TemplateSet) -> Result<()> {
        self.noise.validate()?;
        let mut last: Option<usize> = None;
        for ev in &self.teaching_events {
            if ev.t > self.controls.len() {
                return Err(Error::Scenario(format!(
                    "teaching event at t={} exceeds control sequence length {}",
                    ev.t,
                    self.controls.len()
                )));
            }
            if let Some(prev) = last {
                if ev.t <= prev {
                    return Err(Error::Scenario("teaching times must be strictly increasing".into()));
                }
            }
            last = Some(ev.t);
            if ev.name.is_empty() {
                return Err(Error::Scenario(format!("empty name for place {:?}", ev.place)));
            }
            templates.get(ev.template)?;
        }
        if self.controls.iter().any(|c| c.trans < 0.0) {
            return Err(Error::Scenario("control trans must be non-negative".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Scenario, OccupancyGrid)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let scenario: Scenario = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let map_path = path.parent().unwrap_or_else(|| Path::new(".")).join(&scenario.map);
        let grid = OccupancyGrid::load(&map_path)?;
        Ok((scenario, grid))
    }

    /// Distinct place labels in teaching order.
    pub fn places(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for ev in &self.teaching_events {
            if !out.contains(&ev.place) {
                out.push(ev.place.clone());
            }
        }
        out
    }

    /// Distinct syllables used by names and templates, sorted.
    pub fn syllable_universe(&self, templates: &TemplateSet) -> Vec<String> {
        let mut syms = templates.syllables();
        for ev in &self.teaching_events {
            syms.extend(ev.name.0.iter().cloned());
        }
        syms.sort();
        syms.dedup();
        syms
    }
}

/// Ground-truth utterance attached to a teaching step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeachingRecord {
    pub place: String,
    pub name: Word,
    pub template: usize,
    pub syllables: Vec<String>,
    pub words: Vec<Word>,
}

/// One time step of a simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub truth: Pose,
    /// Odometry reading that led into this step; absent at `t = 0`.
    pub odom: Option<Control>,
    pub scan: SensorScan,
    pub teaching: Option<TeachingRecord>,
}

/// The full simulated run, one record per time step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub steps: Vec<StepRecord>,
}

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn teaching_steps(&self) -> Vec<&StepRecord> {
        self.steps.iter().filter(|s| s.teaching.is_some()).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            out.push_str(&serde_json::to_string(step).expect("step record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<TrajectoryLog> {
        let mut steps = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let step: StepRecord = serde_json::from_str(line)
                .map_err(|e| Error::json("trajectory.jsonl", e))?;
            steps.push(step);
        }
        Ok(TrajectoryLog { steps })
    }
}

/// Zero-mean Gaussian draw; exact zero when `sigma == 0`.
pub(crate) fn gauss(sigma: f64, rng: &mut impl Rng) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("valid sigma").sample(rng)
    } else {
        0.0
    }
}

/// Scan from `pose`: raycasts plus beam noise, clamped to `[0, max_range]`.
pub fn simulate_scan(
    grid: &OccupancyGrid,
    pose: &Pose,
    noise: &NoiseConfig,
    rng: &mut impl Rng,
) -> Result<SensorScan> {
    let angles = noise.beam_angles();
    let beam = Normal::new(0.0, noise.beam_sigma.max(0.0)).expect("valid sigma");
    let mut ranges = Vec::with_capacity(angles.len());
    for a in &angles {
        let true_range = grid.raycast(pose, pose.theta + a, noise.max_range)?;
        let noisy = if noise.beam_sigma > 0.0 { true_range + beam.sample(rng) } else { true_range };
        ranges.push(noisy.clamp(0.0, noise.max_range));
    }
    Ok(SensorScan { angles, ranges, max_range: noise.max_range })
}

/// Advance the true pose by the exact control and emit the noisy odometry
/// reading plus a noisy scan from the new pose.
pub fn simulate_step(
    true_pose: &Pose,
    control: &Control,
    noise: &NoiseConfig,
    grid: &OccupancyGrid,
    rng: &mut impl Rng,
) -> Result<(Pose, Control, SensorScan)> {
    noise.motion.validate()?;
    let new_pose = apply_control(true_pose, control);

    let m = &noise.motion;
    let odom = Control::new(
        control.rot1 + gauss(m.sigma_rot1, rng),
        control.trans + gauss(m.sigma_trans, rng),
        control.rot2 + gauss(m.sigma_rot2, rng),
    );

    let scan = simulate_scan(grid, &new_pose, noise, rng)?;
    Ok((new_pose, odom, scan))
}

/// Run a scenario start to finish.
///
/// The log has `controls.len() + 1` records; teaching events carry the
/// rendered ground-truth utterance. Identical `(scenario, seed)` inputs
/// produce byte-identical logs.
pub fn run_scenario(
    scenario: &Scenario,
    grid: &OccupancyGrid,
    templates: &TemplateSet,
    rng: &mut impl Rng,
) -> Result<TrajectoryLog> {
    scenario.validate(templates)?;
    let mut events: std::collections::BTreeMap<usize, &TeachingEvent> =
        scenario.teaching_events.iter().map(|e| (e.t, e)).collect();

    let mut steps = Vec::with_capacity(scenario.controls.len() + 1);
    let mut pose = scenario.initial_pose;
    let scan0 = simulate_scan(grid, &pose, &scenario.noise, rng)?;
    steps.push(StepRecord {
        t: 0,
        truth: pose,
        odom: None,
        scan: scan0,
        teaching: teaching_record(&mut events, 0, templates)?,
    });

    for (i, control) in scenario.controls.iter().enumerate() {
        let t = i + 1;
        let (next, odom, scan) = simulate_step(&pose, control, &scenario.noise, grid, rng)?;
        pose = next;
        steps.push(StepRecord {
            t,
            truth: pose,
            odom: Some(odom),
            scan,
            teaching: teaching_record(&mut events, t, templates)?,
        });
    }
    Ok(TrajectoryLog { steps })
}

fn teaching_record(
    events: &mut std::collections::BTreeMap<usize, &TeachingEvent>,
    t: usize,
    templates: &TemplateSet,
) -> Result<Option<TeachingRecord>> {
    let Some(ev) = events.remove(&t) else { return Ok(None) };
    let utt: Utterance = render_utterance(templates, ev.template, &ev.name, &ev.place)?;
    Ok(Some(TeachingRecord {
        place: ev.place.clone(),
        name: ev.name.clone(),
        template: ev.template,
        syllables: utt.syllables.clone(),
        words: utt.words(),
    }))
}
