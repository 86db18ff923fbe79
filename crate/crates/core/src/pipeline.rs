//! End-to-end experiment stages. Each stage reads the previous stage's
//! files from the per-seed run directory and writes its own, so stages can
//! be re-run independently. Every output embeds the config hash and seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::concepts::{
    gibbs_learn, GibbsOptions, Hyperparameters, SampleXContext, SpatialConceptModel, TeachingLog,
};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::geom::Pose;
use crate::grid::OccupancyGrid;
use crate::mcl::{mcl_step, LikelihoodField, MclConfig, ParticleSet, PoseHistory};
use crate::metrics::{ari, sentence_par, DpmHyper, ErrorSeries};
use crate::sampling::seeded_stream;
use crate::scenarios::resolve_scenario;
use crate::segment::{segment_corpus, Method, SegmentationResult};
use crate::speech::{
    corrupt_and_decode_word_groups, corrupt_to_lattice, render_utterance, CorpusRecord,
    SyllableInventory, TemplateSet, Utterance, Word, HELD_OUT_TEMPLATE,
};
use crate::speech_mcl::{mcl_step_with_speech, SpeechObservation};
use crate::world::{run_scenario, Scenario, TrajectoryLog};

// Independent rng stream per pipeline stage.
const STREAM_SIM: u64 = 0;
const STREAM_CHANNEL: u64 = 1;
const STREAM_MAP_FLIP: u64 = 2;
const STREAM_LEARN_MCL: u64 = 3;
const STREAM_SEGMENT: u64 = 4;
const STREAM_GIBBS: u64 = 5;
const STREAM_TEST_CHANNEL: u64 = 6;
const STREAM_LOC_INIT: u64 = 7;
const STREAM_LOC_PLAIN: u64 = 8;
const STREAM_LOC_SPEECH: u64 = 9;
const STREAM_DPM: u64 = 10;

/// Identifies the exact run that produced an artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    fn new(cfg: &ExperimentConfig, seed: u64) -> Provenance {
        Provenance { config_hash: cfg.content_hash(), seed }
    }

    fn comment(&self) -> String {
        format!("# provenance config={} seed={}", self.config_hash, self.seed)
    }
}

/// File layout of one run directory.
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> RunPaths {
        RunPaths { dir: Path::new(&cfg.out_dir).join(format!("s{seed}")) }
    }

    pub fn scenario(&self) -> PathBuf {
        self.dir.join("scenario.json")
    }
    pub fn map(&self) -> PathBuf {
        self.dir.join("map.grid")
    }
    pub fn trajectory(&self) -> PathBuf {
        self.dir.join("trajectory.jsonl")
    }
    pub fn corpus(&self) -> PathBuf {
        self.dir.join("corpus.jsonl")
    }
    pub fn segmented(&self) -> PathBuf {
        self.dir.join("segmented.json")
    }
    pub fn model(&self) -> PathBuf {
        self.dir.join("model.json")
    }
    pub fn localize_csv(&self) -> PathBuf {
        self.dir.join("localize.csv")
    }
    pub fn localize_summary(&self) -> PathBuf {
        self.dir.join("localize.json")
    }
    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.json")
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path, hint: &str) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact { path: path.to_path_buf(), hint: hint.to_string() });
    }
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, hint: &str) -> Result<T> {
    let text = read_text(path, hint)?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Resolve the configured scenario source to a scenario and its map.
pub fn load_scenario(cfg: &ExperimentConfig) -> Result<(Scenario, OccupancyGrid)> {
    if let Some(pair) = resolve_scenario(&cfg.scenario) {
        return Ok(pair);
    }
    let path = Path::new(&cfg.scenario);
    if !path.exists() {
        return Err(Error::Config(format!(
            "scenario {:?} is neither a built-in (builtin:room, builtin:floor) nor an existing file",
            cfg.scenario
        )));
    }
    Scenario::load(path)
}

/// The syllable inventory of a run: everything the scenario can utter plus
/// configured extras, pushed through the configured channel.
pub fn build_inventory(cfg: &ExperimentConfig, scenario: &Scenario, templates: &TemplateSet) -> SyllableInventory {
    let mut symbols = scenario.syllable_universe(templates);
    symbols.extend(cfg.channel.extra_symbols.iter().cloned());
    SyllableInventory::new(symbols, cfg.channel.band_tau, cfg.channel.p_delete, cfg.channel.p_insert)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioArtifact {
    provenance: Provenance,
    scenario: Scenario,
}

/// Simulate the scenario: write the resolved scenario, the map, the
/// trajectory log, and the lattice corpus.
pub fn cmd_simulate(cfg: &ExperimentConfig, seed: u64) -> Result<RunPaths> {
    cfg.validate()?;
    let paths = RunPaths::new(cfg, seed);
    let provenance = Provenance::new(cfg, seed);
    let templates = TemplateSet::standard();
    let (scenario, grid) = load_scenario(cfg)?;
    scenario.validate(&templates)?;

    let mut sim_rng = seeded_stream(seed, STREAM_SIM);
    let log = run_scenario(&scenario, &grid, &templates, &mut sim_rng)?;

    let inventory = build_inventory(cfg, &scenario, &templates);
    let mut channel_rng = seeded_stream(seed, STREAM_CHANNEL);
    let mut corpus = Vec::new();
    for step in log.teaching_steps() {
        let teaching = step.teaching.as_ref().expect("teaching step");
        let utt = Utterance::from_words(&teaching.words, &teaching.place);
        let (lattice, report) =
            corrupt_to_lattice(&utt, &inventory, cfg.channel.beam_width, &mut channel_rng);
        corpus.push(CorpusRecord {
            t: step.t,
            place: teaching.place.clone(),
            template: teaching.template,
            truth_syllables: teaching.syllables.clone(),
            truth_words: teaching.words.clone(),
            lattice,
            true_path_present: report.true_path_present,
            pruned_slots: report.pruned_slots,
        });
    }

    let mut stored = scenario.clone();
    stored.map = "map.grid".to_string();
    write_json(&paths.scenario(), &ScenarioArtifact { provenance: provenance.clone(), scenario: stored })?;

    let mut map_text = grid.to_text();
    let _ = writeln!(map_text, "; config={} seed={}", provenance.config_hash, seed);
    write_text(&paths.map(), &map_text)?;

    let mut trajectory_text = provenance.comment();
    trajectory_text.push('\n');
    trajectory_text.push_str(&log.to_jsonl());
    write_text(&paths.trajectory(), &trajectory_text)?;

    let mut corpus_text = provenance.comment();
    corpus_text.push('\n');
    for record in &corpus {
        corpus_text.push_str(&serde_json::to_string(record).expect("record serializes"));
        corpus_text.push('\n');
    }
    write_text(&paths.corpus(), &corpus_text)?;

    Ok(paths)
}

fn read_corpus(paths: &RunPaths) -> Result<Vec<CorpusRecord>> {
    let text = read_text(&paths.corpus(), "run `simulate` first")?;
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::json(paths.corpus(), e))?);
    }
    Ok(out)
}

fn read_trajectory(paths: &RunPaths) -> Result<TrajectoryLog> {
    let text = read_text(&paths.trajectory(), "run `simulate` first")?;
    TrajectoryLog::from_jsonl(&text)
}

fn read_scenario(paths: &RunPaths) -> Result<(Scenario, OccupancyGrid)> {
    let artifact: ScenarioArtifact = read_json(&paths.scenario(), "run `simulate` first")?;
    let grid = OccupancyGrid::load(&paths.map())?;
    Ok((artifact.scenario, grid))
}

/// The robot-side map: exact by default, optionally corrupted by the
/// configured flip rate.
fn robot_map(grid: &OccupancyGrid, scenario: &Scenario, seed: u64) -> OccupancyGrid {
    if scenario.noise.map_flip_rate > 0.0 {
        let mut rng = seeded_stream(seed, STREAM_MAP_FLIP);
        grid.corrupted(scenario.noise.map_flip_rate, &mut rng)
    } else {
        grid.clone()
    }
}

/// Filter sweep over a simulated trajectory with full ancestry retained.
struct FilterTrace {
    history: PoseHistory,
    online: Vec<Pose>,
}

fn run_filter_over_log(
    log: &TrajectoryLog,
    field: &LikelihoodField,
    cfg: &MclConfig,
    init: ParticleSet,
    rng: &mut impl rand::Rng,
) -> FilterTrace {
    let mut history = PoseHistory::unbounded();
    history.push_initial(&init);
    let mut online = vec![init.mean_pose()];
    let mut ps = init;
    for step in log.steps.iter().skip(1) {
        let control = step.odom.as_ref().expect("non-initial steps carry odometry");
        let outcome = mcl_step(&ps, control, &step.scan, field, cfg, rng);
        history.push_step(&outcome);
        ps = outcome.set;
        online.push(ps.mean_pose());
    }
    FilterTrace { history, online }
}

/// Everything `learn` writes to `model.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnArtifact {
    pub provenance: Provenance,
    pub method: Method,
    pub hyper: Hyperparameters,
    pub iterations: usize,
    pub model: SpatialConceptModel,
    /// Final concept assignment per teaching.
    pub concepts: Vec<usize>,
    /// Final position-distribution assignment per teaching.
    pub regions: Vec<usize>,
    pub teaching: Vec<TeachingMeta>,
    pub joint_trace: Vec<f64>,
    pub degenerate_draws: usize,
}

/// Per-teaching bookkeeping carried into evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TeachingMeta {
    pub t: usize,
    pub place: String,
    pub name: Word,
    /// Smoothed position estimate used for learning, cm.
    pub position: [f64; 2],
    /// True simulator position, cm.
    pub truth: [f64; 2],
}

/// Segmentation artifact written next to the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentedArtifact {
    pub provenance: Provenance,
    pub result: SegmentationResult,
}

/// Learn a model from the simulated artifacts: smooth teaching positions,
/// segment the corpus, and run the Gibbs learner.
pub fn cmd_learn(cfg: &ExperimentConfig, seed: u64) -> Result<RunPaths> {
    cfg.validate()?;
    let paths = RunPaths::new(cfg, seed);
    let provenance = Provenance::new(cfg, seed);
    let (scenario, grid) = read_scenario(&paths)?;
    let log = read_trajectory(&paths)?;
    let corpus = read_corpus(&paths)?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    // Teaching-time positions from the ancestry smoother. Learning runs
    // start from the true initial pose.
    let map = robot_map(&grid, &scenario, seed);
    let field = LikelihoodField::new(&map, cfg.localization.sensor);
    let mcl_cfg = MclConfig {
        motion: scenario.noise.motion,
        sensor: cfg.localization.sensor,
        ess_ratio: cfg.localization.ess_ratio,
    };
    let mut mcl_rng = seeded_stream(seed, STREAM_LEARN_MCL);
    let init = ParticleSet::at_pose(log.steps[0].truth, cfg.localization.particles);
    let trace = run_filter_over_log(&log, &field, &mcl_cfg, init, &mut mcl_rng);

    let times: Vec<usize> = corpus.iter().map(|r| r.t).collect();
    let mut positions = Vec::with_capacity(times.len());
    for &t in &times {
        let pose = trace.history.smoothed_mean_at(t, cfg.localization.lag)?;
        positions.push(pose.xy());
    }

    // Word segmentation over the lattices.
    let templates = TemplateSet::standard();
    let inventory = build_inventory(cfg, &scenario, &templates);
    let lattices: Vec<crate::speech::Lattice> = corpus.iter().map(|r| r.lattice.clone()).collect();
    let mut seg_opts = cfg.segment_options();
    seg_opts.inventory_size = Some(inventory.len());
    let mut seg_rng = seeded_stream(seed, STREAM_SEGMENT);
    let segmentation = segment_corpus(&lattices, cfg.method, &seg_opts, &mut seg_rng)?;

    // Bags of words over the discovered vocabulary.
    let vocabulary = segmentation.vocabulary.clone();
    let vocab_index: BTreeMap<&Word, usize> =
        vocabulary.iter().enumerate().map(|(i, w)| (w, i)).collect();
    let bows: Vec<Vec<u32>> = segmentation
        .utterances
        .iter()
        .map(|u| {
            let mut bow = vec![0u32; vocabulary.len()];
            for w in &u.words {
                bow[vocab_index[w]] += 1;
            }
            bow
        })
        .collect();

    let teaching_log = TeachingLog::new(times.clone(), positions, bows);
    let mut gibbs_rng = seeded_stream(seed, STREAM_GIBBS);
    let options = if cfg.model.sample_x {
        GibbsOptions {
            sample_x: Some(SampleXContext {
                trajectory: &log,
                field: &field,
                motion: &scenario.noise.motion,
                initial_poses: trace.online.clone(),
                candidates: cfg.model.pose_candidates,
            }),
        }
    } else {
        GibbsOptions::default()
    };
    let result = gibbs_learn(
        teaching_log,
        vocabulary,
        &cfg.model.hyper,
        cfg.model.iterations,
        options,
        &mut gibbs_rng,
    )?;

    let teaching: Vec<TeachingMeta> = corpus
        .iter()
        .enumerate()
        .map(|(i, r)| TeachingMeta {
            t: r.t,
            place: r.place.clone(),
            name: Word(r.truth_words[template_slot_index(r.template)].0.clone()),
            position: result.log.positions[i],
            truth: log.steps[r.t].truth.xy(),
        })
        .collect();

    write_json(&paths.segmented(), &SegmentedArtifact { provenance: provenance.clone(), result: segmentation })?;
    write_json(
        &paths.model(),
        &LearnArtifact {
            provenance,
            method: cfg.method,
            hyper: cfg.model.hyper.clone(),
            iterations: cfg.model.iterations,
            model: result.model,
            concepts: result.log.concepts,
            regions: result.log.regions,
            teaching,
            joint_trace: result.joint_trace,
            degenerate_draws: result.degenerate_draws,
        },
    )?;
    Ok(paths)
}

/// Index of the name slot within a rendered template.
fn template_slot_index(template: usize) -> usize {
    let set = TemplateSet::standard();
    set.templates[template]
        .words
        .iter()
        .position(|w| matches!(w, crate::speech::TemplateWord::Slot))
        .expect("every template has a slot")
}

/// Which localization arms to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeechArm {
    On,
    Off,
    Both,
}

impl std::str::FromStr for SpeechArm {
    type Err = Error;

    fn from_str(s: &str) -> Result<SpeechArm> {
        match s.to_ascii_lowercase().as_str() {
            "on" => Ok(SpeechArm::On),
            "off" => Ok(SpeechArm::Off),
            "both" => Ok(SpeechArm::Both),
            other => Err(Error::Config(format!("unknown speech arm {other:?}"))),
        }
    }
}

/// Summary written to `localize.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalizeSummary {
    pub provenance: Provenance,
    pub utterances: usize,
    pub threshold_cm: f64,
    pub plain: Option<ArmSummary>,
    pub speech: Option<ArmSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmSummary {
    pub mean_error_cm: f64,
    pub rmse_cm: f64,
    pub ear: f64,
}

fn arm_summary(series: &ErrorSeries, threshold: f64) -> ArmSummary {
    ArmSummary { mean_error_cm: series.mean_error(), rmse_cm: series.rmse(), ear: series.ear(threshold) }
}

/// Global-localization comparison: plain MCL versus speech-weighted MCL on
/// the same trajectory, scans, and utterances. Test utterances use the
/// held-out phrase with the true place name, corrupted through the channel
/// and snapped to the learned vocabulary.
pub fn cmd_localize(cfg: &ExperimentConfig, seed: u64, arm: SpeechArm) -> Result<RunPaths> {
    cfg.validate()?;
    let paths = RunPaths::new(cfg, seed);
    let provenance = Provenance::new(cfg, seed);
    let (scenario, grid) = read_scenario(&paths)?;
    let log = read_trajectory(&paths)?;
    let artifact: LearnArtifact = read_json(&paths.model(), "run `learn` first")?;
    let model = artifact.model;

    let map = robot_map(&grid, &scenario, seed);
    let field = LikelihoodField::new(&map, cfg.localization.sensor);
    let mcl_cfg = MclConfig {
        motion: scenario.noise.motion,
        sensor: cfg.localization.sensor,
        ess_ratio: cfg.localization.ess_ratio,
    };

    // Test utterances at every teaching step.
    let templates = TemplateSet::standard();
    let inventory = build_inventory(cfg, &scenario, &templates);
    let mut test_rng = seeded_stream(seed, STREAM_TEST_CHANNEL);
    let mut speech_at: BTreeMap<usize, SpeechObservation> = BTreeMap::new();
    for step in log.teaching_steps() {
        let teaching = step.teaching.as_ref().expect("teaching step");
        let utt = render_utterance(&templates, HELD_OUT_TEMPLATE, &teaching.name, &teaching.place)?;
        let groups =
            corrupt_and_decode_word_groups(&utt, &inventory, cfg.channel.beam_width, &mut test_rng);
        let tokens: Vec<Word> = if cfg.localization.full_sentence_bow {
            groups.into_iter().flatten().collect()
        } else {
            let slot = template_slot_index(HELD_OUT_TEMPLATE);
            groups.into_iter().nth(slot).flatten().into_iter().collect()
        };
        speech_at.insert(step.t, SpeechObservation::from_words_snapped(&tokens, &model));
    }

    // Shared uniform initialization keeps the arms paired.
    let mut init_rng = seeded_stream(seed, STREAM_LOC_INIT);
    let init = ParticleSet::uniform_over_free(&map, cfg.localization.particles, &mut init_rng);

    let run_arm = |use_speech: bool, stream: u64| -> ErrorSeries {
        let mut rng = seeded_stream(seed, stream);
        let mut ps = init.clone();
        let mut series = ErrorSeries::default();
        series.push(ps.mean_pose(), log.steps[0].truth);
        for step in log.steps.iter().skip(1) {
            let control = step.odom.as_ref().expect("non-initial steps carry odometry");
            let speech = if use_speech { speech_at.get(&step.t) } else { None };
            let outcome =
                mcl_step_with_speech(&ps, control, &step.scan, speech, &field, &model, &mcl_cfg, &mut rng);
            ps = outcome.set;
            series.push(ps.mean_pose(), step.truth);
        }
        series
    };

    let plain = match arm {
        SpeechArm::On => None,
        _ => Some(run_arm(false, STREAM_LOC_PLAIN)),
    };
    let speech = match arm {
        SpeechArm::Off => None,
        _ => Some(run_arm(true, STREAM_LOC_SPEECH)),
    };

    // CSV: one row per step; absent arms leave their columns empty.
    let mut csv = provenance.comment();
    csv.push('\n');
    csv.push_str("t,truth_x,truth_y,plain_x,plain_y,plain_err,speech_x,speech_y,speech_err,utterance\n");
    for (i, step) in log.steps.iter().enumerate() {
        let arm_cols = |series: &Option<ErrorSeries>| -> String {
            match series {
                Some(s) => format!(
                    "{:.3},{:.3},{:.3}",
                    s.estimates[i].x, s.estimates[i].y, s.errors[i]
                ),
                None => ",,".to_string(),
            }
        };
        let _ = writeln!(
            csv,
            "{},{:.3},{:.3},{},{},{}",
            step.t,
            step.truth.x,
            step.truth.y,
            arm_cols(&plain),
            arm_cols(&speech),
            u8::from(speech_at.contains_key(&step.t)),
        );
    }
    write_text(&paths.localize_csv(), &csv)?;

    let threshold = 50.0;
    write_json(
        &paths.localize_summary(),
        &LocalizeSummary {
            provenance,
            utterances: speech_at.len(),
            threshold_cm: threshold,
            plain: plain.as_ref().map(|s| arm_summary(s, threshold)),
            speech: speech.as_ref().map(|s| arm_summary(s, threshold)),
        },
    )?;
    Ok(paths)
}

/// Everything `evaluate` writes to `metrics.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsArtifact {
    pub provenance: Provenance,
    pub method: Method,
    /// Mean sentence accuracy of the segmentation output, delimiters
    /// scored as symbols.
    pub corpus_par: f64,
    /// Concept assignments against scenario place labels.
    pub ari: f64,
    /// Words-only baseline clustering against the same labels.
    pub dpm_ari: f64,
    /// Mean accuracy of the best-name query at each place (best true name
    /// per place).
    pub name_par: f64,
    /// Fraction of corpus lattices still containing the true path.
    pub true_path_rate: f64,
    pub localization: Option<LocalizeSummary>,
}

/// Compute every metric available in a run directory.
pub fn cmd_evaluate(cfg: &ExperimentConfig, seed: u64) -> Result<RunPaths> {
    cfg.validate()?;
    let paths = RunPaths::new(cfg, seed);
    let provenance = Provenance::new(cfg, seed);
    let corpus = read_corpus(&paths)?;
    let segmented: SegmentedArtifact = read_json(&paths.segmented(), "run `learn` first")?;
    let artifact: LearnArtifact = read_json(&paths.model(), "run `learn` first")?;

    let corpus_par = corpus_sentence_par(&corpus, &segmented.result)?;

    // Clustering quality against scenario place labels.
    let place_ids = place_labels(&corpus);
    let concept_labels: Vec<i64> = artifact.concepts.iter().map(|&c| c as i64).collect();
    let ari_value = ari(&place_ids, &concept_labels)?;

    let dpm_hyper = DpmHyper {
        gamma: cfg.model.hyper.gamma,
        beta0: cfg.model.hyper.beta0,
        l: cfg.model.hyper.l,
    };
    let vocabulary = &artifact.model.vocabulary;
    let vocab_index: BTreeMap<&Word, usize> =
        vocabulary.iter().enumerate().map(|(i, w)| (w, i)).collect();
    let bows: Vec<Vec<u32>> = segmented
        .result
        .utterances
        .iter()
        .map(|u| {
            let mut bow = vec![0u32; vocabulary.len()];
            for w in &u.words {
                bow[vocab_index[w]] += 1;
            }
            bow
        })
        .collect();
    let mut dpm_rng = seeded_stream(seed, STREAM_DPM);
    let dpm = crate::metrics::dpm_word_clustering(&bows, &dpm_hyper, cfg.model.iterations, &mut dpm_rng)?;
    let dpm_labels: Vec<i64> = dpm.iter().map(|&c| c as i64).collect();
    let dpm_ari_value = ari(&place_ids, &dpm_labels)?;

    let name_par = name_retrieval_par(&artifact)?;
    let true_path_rate =
        corpus.iter().filter(|r| r.true_path_present).count() as f64 / corpus.len() as f64;

    let localization: Option<LocalizeSummary> = if paths.localize_summary().exists() {
        Some(read_json(&paths.localize_summary(), "")?)
    } else {
        None
    };

    write_json(
        &paths.metrics(),
        &MetricsArtifact {
            provenance,
            method: cfg.method,
            corpus_par,
            ari: ari_value,
            dpm_ari: dpm_ari_value,
            name_par,
            true_path_rate,
            localization,
        },
    )?;
    Ok(paths)
}

/// Mean segmentation accuracy over the corpus.
pub fn corpus_sentence_par(corpus: &[CorpusRecord], seg: &SegmentationResult) -> Result<f64> {
    if corpus.len() != seg.utterances.len() {
        return Err(Error::LengthMismatch { left: corpus.len(), right: seg.utterances.len() });
    }
    let mut total = 0.0;
    for (record, utt) in corpus.iter().zip(&seg.utterances) {
        total += sentence_par(&record.truth_words, &utt.words)?;
    }
    Ok(total / corpus.len() as f64)
}

/// Dense integer labels of the scenario places, in corpus order.
pub fn place_labels(corpus: &[CorpusRecord]) -> Vec<i64> {
    let mut names: Vec<&str> = corpus.iter().map(|r| r.place.as_str()).collect();
    names.sort();
    names.dedup();
    corpus
        .iter()
        .map(|r| names.binary_search(&r.place.as_str()).unwrap() as i64)
        .collect()
}

/// Mean best-name accuracy over physical teaching spots: query the model
/// at each spot and score against the best of the names taught there.
///
/// A place label may cover several spots (same name, different corners of
/// the map); each spot is queried separately. True teaching positions at
/// one spot coincide exactly, so grouping by the rounded coordinate is
/// lossless.
pub fn name_retrieval_par(artifact: &LearnArtifact) -> Result<f64> {
    let mut per_spot: BTreeMap<(String, i64, i64), (Vec<[f64; 2]>, Vec<&Word>)> = BTreeMap::new();
    for meta in &artifact.teaching {
        let key = (
            meta.place.clone(),
            (meta.truth[0] * 10.0).round() as i64,
            (meta.truth[1] * 10.0).round() as i64,
        );
        let entry = per_spot.entry(key).or_default();
        entry.0.push(meta.truth);
        if !entry.1.contains(&&meta.name) {
            entry.1.push(&meta.name);
        }
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (_, (points, names)) in &per_spot {
        let mean = [
            points.iter().map(|p| p[0]).sum::<f64>() / points.len() as f64,
            points.iter().map(|p| p[1]).sum::<f64>() / points.len() as f64,
        ];
        let best = crate::speech_mcl::best_name_for_xy(mean, &artifact.model);
        let par_value = match best {
            Some(word) => names
                .iter()
                .map(|name| crate::metrics::par(name.syllables(), word.syllables()).unwrap_or(f64::NEG_INFINITY))
                .fold(f64::NEG_INFINITY, f64::max),
            None => 0.0,
        };
        total += par_value;
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(total / count as f64)
}

/// Published reference accuracies for the three segmentation methods,
/// reported alongside our desk-scale numbers.
pub const REFERENCE_PAR: [(Method, f64); 3] = [
    (Method::Lattice, 0.82),
    (Method::OneBest, 0.71),
    (Method::Syllables, 0.67),
];

/// One aggregated metric row of the cross-run report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub metric: String,
    pub method: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportArtifact {
    pub rows: Vec<ReportRow>,
    /// Reference accuracies recorded for comparison.
    pub reference_par: BTreeMap<String, f64>,
    pub runs: Vec<String>,
}

/// Aggregate `metrics.json` files from several run directories.
pub fn cmd_report(run_dirs: &[PathBuf], out_dir: &Path) -> Result<ReportArtifact> {
    let mut missing = Vec::new();
    let mut metrics = Vec::new();
    for dir in run_dirs {
        let path = dir.join("metrics.json");
        if !path.exists() {
            missing.push(path.display().to_string());
            continue;
        }
        let m: MetricsArtifact = read_json(&path, "")?;
        metrics.push(m);
    }
    if !missing.is_empty() {
        return Err(Error::MissingArtifact {
            path: PathBuf::from(missing.join(", ")),
            hint: "run `evaluate` in every run directory first".to_string(),
        });
    }
    if metrics.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut rows = Vec::new();
    let mut by_method: BTreeMap<String, Vec<&MetricsArtifact>> = BTreeMap::new();
    for m in &metrics {
        by_method.entry(m.method.to_string()).or_default().push(m);
    }
    let stat = |values: &[f64]| -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    for (method, group) in &by_method {
        let mut push = |metric: &str, values: Vec<f64>| {
            if values.is_empty() {
                return;
            }
            let (mean, sd) = stat(&values);
            rows.push(ReportRow {
                metric: metric.to_string(),
                method: method.clone(),
                n: values.len(),
                mean,
                sd,
            });
        };
        push("corpus_par", group.iter().map(|m| m.corpus_par).collect());
        push("ari", group.iter().map(|m| m.ari).collect());
        push("dpm_ari", group.iter().map(|m| m.dpm_ari).collect());
        push("name_par", group.iter().map(|m| m.name_par).collect());
        push(
            "mcl_mean_error_cm",
            group
                .iter()
                .filter_map(|m| m.localization.as_ref().and_then(|l| l.plain.as_ref()))
                .map(|a| a.mean_error_cm)
                .collect(),
        );
        push(
            "speech_mcl_mean_error_cm",
            group
                .iter()
                .filter_map(|m| m.localization.as_ref().and_then(|l| l.speech.as_ref()))
                .map(|a| a.mean_error_cm)
                .collect(),
        );
        push(
            "mcl_ear",
            group
                .iter()
                .filter_map(|m| m.localization.as_ref().and_then(|l| l.plain.as_ref()))
                .map(|a| a.ear)
                .collect(),
        );
        push(
            "speech_mcl_ear",
            group
                .iter()
                .filter_map(|m| m.localization.as_ref().and_then(|l| l.speech.as_ref()))
                .map(|a| a.ear)
                .collect(),
        );
    }

    let artifact = ReportArtifact {
        rows,
        reference_par: REFERENCE_PAR
            .iter()
            .map(|(m, v)| (m.to_string(), *v))
            .collect(),
        runs: run_dirs.iter().map(|d| d.display().to_string()).collect(),
    };

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_json(&out_dir.join("report.json"), &artifact)?;
    let mut csv = String::from("metric,method,n,mean,sd\n");
    for row in &artifact.rows {
        let _ = writeln!(csv, "{},{},{},{:.6},{:.6}", row.metric, row.method, row.n, row.mean, row.sd);
    }
    write_text(&out_dir.join("report.csv"), &csv)?;
    Ok(artifact)
}
