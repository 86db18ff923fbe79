//! Speech-augmented localization: the concept likelihood of an uttered
//! sentence multiplies particle weights, plus the best-name query.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::concepts::SpatialConceptModel;
use crate::geom::{log_sum_exp, Pose};
use crate::mcl::{mcl_step_with_extra, LikelihoodField, MclConfig, ParticleSet, StepOutcome};
use crate::metrics::levenshtein;
use crate::speech::Word;
use crate::world::{Control, SensorScan};

/// A recognized sentence at localization time, reduced to counts over the
/// learned vocabulary. Out-of-vocabulary tokens are kept for the record but
/// carry no weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeechObservation {
    /// Counts over the model vocabulary.
    pub bow: Vec<u32>,
    /// The tokens as decoded, before vocabulary lookup.
    pub raw_words: Vec<Word>,
    /// Tokens that had no vocabulary entry.
    pub oov: Vec<Word>,
}

impl SpeechObservation {
    /// Build an observation by exact vocabulary lookup.
    pub fn from_words(words: &[Word], model: &SpatialConceptModel) -> SpeechObservation {
        let mut bow = vec![0u32; model.vocabulary.len()];
        let mut oov = Vec::new();
        for w in words {
            match model.vocab_index(w) {
                Some(i) => bow[i] += 1,
                None => oov.push(w.clone()),
            }
        }
        SpeechObservation { bow, raw_words: words.to_vec(), oov }
    }

    /// Build an observation by snapping each token to its nearest
    /// vocabulary entry by syllable edit distance (ties prefer the
    /// lexicographically smaller word), mirroring recognition with a
    /// dictionary of learned words.
    pub fn from_words_snapped(words: &[Word], model: &SpatialConceptModel) -> SpeechObservation {
        let snapped: Vec<Word> = words
            .iter()
            .filter_map(|w| snap_to_vocabulary(w, &model.vocabulary).cloned())
            .collect();
        let mut obs = SpeechObservation::from_words(&snapped, model);
        obs.raw_words = words.to_vec();
        obs
    }

    pub fn is_empty(&self) -> bool {
        self.bow.iter().all(|&c| c == 0)
    }
}

/// Nearest vocabulary entry by syllable-level edit distance.
pub fn snap_to_vocabulary<'a>(word: &Word, vocabulary: &'a [Word]) -> Option<&'a Word> {
    vocabulary
        .iter()
        .map(|v| (levenshtein(word.syllables(), v.syllables()), v))
        .min_by(|(da, wa), (db, wb)| da.cmp(db).then_with(|| wa.cmp(wb)))
        .map(|(_, w)| w)
}

/// `ln p(bow | x, model)`: the concept-mixture likelihood of a sentence at
/// a pose, computed stably in log space.
///
/// An empty bag contributes a neutral word factor, leaving the
/// pose-dependent marginal.
pub fn log_speech_likelihood(obs: &SpeechObservation, pose: &Pose, model: &SpatialConceptModel) -> f64 {
    log_speech_likelihood_xy(obs, pose.xy(), model)
}

pub fn log_speech_likelihood_xy(
    obs: &SpeechObservation,
    xy: [f64; 2],
    model: &SpatialConceptModel,
) -> f64 {
    let region_ll = model.region_loglikes(xy);
    let per_concept: Vec<f64> = (0..model.l())
        .map(|c| {
            let mut word_term = 0.0;
            for (w, &count) in obs.bow.iter().enumerate() {
                if count > 0 {
                    word_term += count as f64 * model.word_dists[c][w].ln();
                }
            }
            let position_term = log_sum_exp(
                &region_ll
                    .iter()
                    .enumerate()
                    .map(|(k, ll)| ll + model.phi[c][k].ln())
                    .collect::<Vec<f64>>(),
            );
            model.pi[c].ln() + word_term + position_term
        })
        .collect();
    log_sum_exp(&per_concept)
}

/// One localization step, optionally weighted by a speech observation.
///
/// Without speech this is exactly the plain filter step (same draws from
/// the same rng stream); with speech every particle weight is additionally
/// multiplied by the sentence likelihood before normalization.
pub fn mcl_step_with_speech(
    ps: &ParticleSet,
    control: &Control,
    scan: &SensorScan,
    speech: Option<&SpeechObservation>,
    field: &LikelihoodField,
    model: &SpatialConceptModel,
    cfg: &MclConfig,
    rng: &mut impl Rng,
) -> StepOutcome {
    match speech {
        None => mcl_step_with_extra(ps, control, scan, field, cfg, None, rng),
        Some(obs) => {
            let extra = |pose: &Pose| log_speech_likelihood(obs, pose, model);
            mcl_step_with_extra(ps, control, scan, field, cfg, Some(&extra), rng)
        }
    }
}

/// The single word that best describes a position:
/// `argmax_w sum_C W_C[w] * (sum_k N(x | mu_k, Sigma_k) phi_C[k]) * pi[C]`.
///
/// Ties prefer the lexicographically smallest word; `None` on an empty
/// vocabulary.
pub fn best_name_for_position(pose: &Pose, model: &SpatialConceptModel) -> Option<Word> {
    best_name_for_xy(pose.xy(), model)
}

pub fn best_name_for_xy(xy: [f64; 2], model: &SpatialConceptModel) -> Option<Word> {
    if model.vocabulary.is_empty() {
        return None;
    }
    let region_ll = model.region_loglikes(xy);
    let concept_position: Vec<f64> = (0..model.l())
        .map(|c| {
            let position_term = log_sum_exp(
                &region_ll
                    .iter()
                    .enumerate()
                    .map(|(k, ll)| ll + model.phi[c][k].ln())
                    .collect::<Vec<f64>>(),
            );
            model.pi[c].ln() + position_term
        })
        .collect();

    let mut best: Option<(f64, &Word)> = None;
    for (w, word) in model.vocabulary.iter().enumerate() {
        let score = log_sum_exp(
            &concept_position
                .iter()
                .enumerate()
                .map(|(c, cp)| cp + model.word_dists[c][w].ln())
                .collect::<Vec<f64>>(),
        );
        best = match best {
            None => Some((score, word)),
            Some((bs, bw)) => {
                if score > bs || (score == bs && word < bw) {
                    Some((score, word))
                } else {
                    Some((bs, bw))
                }
            }
        };
    }
    best.map(|(_, w)| w.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Mat2;
    use crate::grid::{CellState, OccupancyGrid};
    use crate::mcl::{mcl_step, SensorModelParams};
    use crate::sampling::seeded_stream;
    use crate::world::MotionNoise;

    fn word(syls: &[&str]) -> Word {
        Word::from_syls(syls.iter().copied())
    }

    fn two_place_model() -> SpatialConceptModel {
        SpatialConceptModel {
            pi: vec![0.5, 0.5],
            phi: vec![vec![0.95, 0.05], vec![0.05, 0.95]],
            word_dists: vec![vec![0.9, 0.1], vec![0.1, 0.9]],
            mu: vec![[100.0, 100.0], [500.0, 400.0]],
            sigma: vec![Mat2::diag(400.0, 400.0), Mat2::diag(400.0, 400.0)],
            vocabulary: vec![word(&["ge", "N", "ka", "N"]), word(&["so", "fa"])],
        }
    }

    #[test]
    fn single_component_collapse_matches_gaussian_ratio() {
        let model = SpatialConceptModel {
            pi: vec![1.0],
            phi: vec![vec![1.0]],
            word_dists: vec![vec![1.0]],
            mu: vec![[100.0, 100.0]],
            sigma: vec![Mat2::diag(900.0, 900.0)],
            vocabulary: vec![word(&["a"])],
        };
        let obs = SpeechObservation { bow: vec![1], raw_words: vec![], oov: vec![] };
        let p1 = Pose::new(100.0, 100.0, 0.0);
        let p2 = Pose::new(160.0, 100.0, 0.0);
        let diff = log_speech_likelihood(&obs, &p1, &model) - log_speech_likelihood(&obs, &p2, &model);
        let expected = crate::geom::gaussian2_logpdf([100.0, 100.0], [100.0, 100.0], &Mat2::diag(900.0, 900.0))
            - crate::geom::gaussian2_logpdf([160.0, 100.0], [100.0, 100.0], &Mat2::diag(900.0, 900.0));
        assert!((diff - expected).abs() < 1e-12);
    }

    #[test]
    fn named_place_dominates_far_place() {
        let model = two_place_model();
        let obs = SpeechObservation { bow: vec![1, 0], raw_words: vec![], oov: vec![] };
        let at_named = log_speech_likelihood(&obs, &Pose::new(100.0, 100.0, 0.0), &model);
        let at_other = log_speech_likelihood(&obs, &Pose::new(500.0, 400.0, 0.0), &model);
        assert!(at_named > at_other);
    }

    #[test]
    fn likelihood_matches_brute_force_double_sum() {
        let model = SpatialConceptModel {
            pi: vec![0.6, 0.4],
            phi: vec![vec![0.7, 0.3], vec![0.2, 0.8]],
            word_dists: vec![vec![0.5, 0.25, 0.25], vec![0.1, 0.6, 0.3]],
            mu: vec![[50.0, 60.0], [300.0, 220.0]],
            sigma: vec![Mat2::new(400.0, 50.0, 50.0, 300.0), Mat2::diag(250.0, 650.0)],
            vocabulary: vec![word(&["a"]), word(&["b"]), word(&["c"])],
        };
        let obs = SpeechObservation { bow: vec![2, 0, 1], raw_words: vec![], oov: vec![] };
        let pose = Pose::new(120.0, 90.0, 0.3);

        // Oracle: direct double sum in linear space.
        let mut total = 0.0;
        for c in 0..2 {
            let mut word_term = 1.0;
            for (w, &count) in obs.bow.iter().enumerate() {
                word_term *= model.word_dists[c][w].powi(count as i32);
            }
            let mut pos = 0.0;
            for k in 0..2 {
                pos += crate::geom::gaussian2_logpdf(pose.xy(), model.mu[k], &model.sigma[k]).exp()
                    * model.phi[c][k];
            }
            total += model.pi[c] * word_term * pos;
        }

        let got = log_speech_likelihood(&obs, &pose, &model);
        let rel = (got - total.ln()).abs() / total.ln().abs();
        assert!(rel < 1e-12, "{got} vs {}", total.ln());
    }

    #[test]
    fn relabeling_concepts_and_regions_leaves_likelihood_unchanged() {
        let model = two_place_model();
        let permuted = SpatialConceptModel {
            pi: vec![model.pi[1], model.pi[0]],
            phi: vec![
                vec![model.phi[1][1], model.phi[1][0]],
                vec![model.phi[0][1], model.phi[0][0]],
            ],
            word_dists: vec![model.word_dists[1].clone(), model.word_dists[0].clone()],
            mu: vec![model.mu[1], model.mu[0]],
            sigma: vec![model.sigma[1], model.sigma[0]],
            vocabulary: model.vocabulary.clone(),
        };
        let obs = SpeechObservation { bow: vec![1, 1], raw_words: vec![], oov: vec![] };
        for pose in [Pose::new(100.0, 100.0, 0.0), Pose::new(444.0, 333.0, 1.0)] {
            let a = log_speech_likelihood(&obs, &pose, &model);
            let b = log_speech_likelihood(&obs, &pose, &permuted);
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn step_without_speech_is_bitwise_plain_mcl() {
        let mut grid = OccupancyGrid::filled(60, 60, 10.0, CellState::Free);
        grid.fill_rect(0.0, 0.0, 600.0, 10.0, CellState::Occupied);
        grid.fill_rect(0.0, 0.0, 10.0, 600.0, CellState::Occupied);
        let field = LikelihoodField::new(&grid, SensorModelParams::default());
        let cfg = MclConfig {
            motion: MotionNoise { sigma_rot1: 0.02, sigma_trans: 2.0, sigma_rot2: 0.02 },
            ..MclConfig::default()
        };
        let model = two_place_model();
        let mut rng = seeded_stream(1, 0);
        let ps = ParticleSet::uniform_over_free(&grid, 200, &mut rng);
        let scan =
            crate::world::simulate_scan(&grid, &Pose::new(300.0, 300.0, 0.0), &crate::world::NoiseConfig {
                motion: MotionNoise::NONE,
                beam_sigma: 0.0,
                max_range: 300.0,
                beam_count: 9,
                fov: std::f64::consts::PI,
                map_flip_rate: 0.0,
            }, &mut rng)
            .unwrap();
        let control = Control::new(0.0, 5.0, 0.0);

        let mut rng_a = seeded_stream(7, 3);
        let mut rng_b = seeded_stream(7, 3);
        let plain = mcl_step(&ps, &control, &scan, &field, &cfg, &mut rng_a);
        let speechless =
            mcl_step_with_speech(&ps, &control, &scan, None, &field, &model, &cfg, &mut rng_b);
        assert_eq!(plain.set, speechless.set);
        assert_eq!(plain.parents, speechless.parents);
    }

    #[test]
    fn speech_concentrates_mass_near_named_place() {
        let grid = OccupancyGrid::filled(60, 50, 10.0, CellState::Free);
        let field = LikelihoodField::new(&grid, SensorModelParams::default());
        let cfg = MclConfig { motion: MotionNoise::NONE, ..MclConfig::default() };
        let model = two_place_model();
        let mut rng = seeded_stream(2, 0);
        let ps = ParticleSet::uniform_over_free(&grid, 1000, &mut rng);

        // A flat scan (all max range) so only speech informs the step.
        let scan = SensorScan { angles: vec![0.0], ranges: vec![300.0], max_range: 300.0 };
        let obs = SpeechObservation { bow: vec![1, 0], raw_words: vec![], oov: vec![] };

        let mass_near = |set: &ParticleSet| -> f64 {
            set.particles
                .iter()
                .filter(|p| p.pose.distance_xy(&Pose::new(100.0, 100.0, 0.0)) < 100.0)
                .map(|p| p.weight)
                .sum()
        };
        let before = mass_near(&ps);
        let out = mcl_step_with_speech(&ps, &Control::ZERO, &scan, Some(&obs), &field, &model, &cfg, &mut rng);
        let after = mass_near(&out.set);
        assert!(after > before, "mass near named place {before:.3} -> {after:.3}");
        assert_eq!(out.set.len(), 1000);
    }

    #[test]
    fn best_name_single_concept_everywhere() {
        let model = SpatialConceptModel {
            pi: vec![1.0],
            phi: vec![vec![1.0]],
            word_dists: vec![vec![0.8, 0.2]],
            mu: vec![[100.0, 100.0]],
            sigma: vec![Mat2::diag(400.0, 400.0)],
            vocabulary: vec![word(&["ge", "N", "ka", "N"]), word(&["de", "su"])],
        };
        for pose in [Pose::new(0.0, 0.0, 0.0), Pose::new(400.0, 90.0, 2.0)] {
            assert_eq!(best_name_for_position(&pose, &model), Some(word(&["ge", "N", "ka", "N"])));
        }
    }

    #[test]
    fn best_name_separated_concepts_name_their_own_place() {
        let model = two_place_model();
        assert_eq!(
            best_name_for_position(&Pose::new(100.0, 100.0, 0.0), &model),
            Some(word(&["ge", "N", "ka", "N"]))
        );
        assert_eq!(
            best_name_for_position(&Pose::new(500.0, 400.0, 0.0), &model),
            Some(word(&["so", "fa"]))
        );
    }

    #[test]
    fn best_name_invariant_to_pi_rescaling() {
        // A constant factor on pi shifts every word score equally, so the
        // argmax is the same whether or not pi is normalized.
        let model = two_place_model();
        let mut scaled = model.clone();
        scaled.pi = model.pi.iter().map(|p| p * 3.0).collect();
        for pose in [
            Pose::new(100.0, 100.0, 0.0),
            Pose::new(500.0, 400.0, 0.0),
            Pose::new(280.0, 250.0, 1.0),
        ] {
            assert_eq!(
                best_name_for_position(&pose, &model),
                best_name_for_position(&pose, &scaled)
            );
        }
    }

    #[test]
    fn empty_vocabulary_returns_none() {
        let model = SpatialConceptModel {
            pi: vec![1.0],
            phi: vec![vec![1.0]],
            word_dists: vec![vec![]],
            mu: vec![[0.0, 0.0]],
            sigma: vec![Mat2::diag(1.0, 1.0)],
            vocabulary: vec![],
        };
        assert_eq!(best_name_for_position(&Pose::new(0.0, 0.0, 0.0), &model), None);
    }

    #[test]
    fn snapping_picks_nearest_word_with_lexicographic_ties() {
        let vocab = vec![word(&["de", "su"]), word(&["da", "yo"]), word(&["ge", "N"])];
        // Distance 1 to both "de su" and "da yo": the tie goes to "da yo"
        // (lexicographically smaller).
        let got = snap_to_vocabulary(&word(&["da", "su"]), &vocab).unwrap();
        assert_eq!(got, &word(&["da", "yo"]));
        let exact = snap_to_vocabulary(&word(&["ge", "N"]), &vocab).unwrap();
        assert_eq!(exact, &word(&["ge", "N"]));
    }

    #[test]
    fn observation_building_counts_and_oov() {
        let model = two_place_model();
        let obs = SpeechObservation::from_words(
            &[word(&["ge", "N", "ka", "N"]), word(&["zo", "zo"]), word(&["ge", "N", "ka", "N"])],
            &model,
        );
        assert_eq!(obs.bow, vec![2, 0]);
        assert_eq!(obs.oov, vec![word(&["zo", "zo"])]);
        assert!(!obs.is_empty());

        let snapped = SpeechObservation::from_words_snapped(&[word(&["so", "fa", "a"])], &model);
        assert_eq!(snapped.bow, vec![0, 1]);
        assert!(snapped.oov.is_empty());
    }
}
