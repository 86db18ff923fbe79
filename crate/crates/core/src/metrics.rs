//! Evaluation metrics: symbol accuracy from edit distance, adjusted Rand
//! index, localization error rates, and the words-only clustering baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::concepts::{sample_concept_weights, sample_dirichlet, sample_index};
use crate::error::{Error, Result};
use crate::geom::Pose;
use crate::speech::Word;

/// Unit-cost Levenshtein distance between two symbol sequences.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let n = b.len();
    let mut prev: Vec<usize> = (0..=n).collect();
    let mut cur = vec![0usize; n + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[n]
}

/// Symbol accuracy rate `1 - (S + D + I) / N` from edit-distance alignment.
///
/// Can go negative when the hypothesis is much longer than the reference;
/// values are reported raw.
pub fn par<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let d = levenshtein(reference, hypothesis);
    Ok(1.0 - d as f64 / reference.len() as f64)
}

/// Symbol used to score word boundaries as ordinary sequence positions.
pub const DELIMITER: &str = "|";

/// Flatten words into syllables with a delimiter symbol between words, so
/// segmentation quality enters the accuracy score.
pub fn delimited_symbols(words: &[Word]) -> Vec<String> {
    let mut out = Vec::new();
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            out.push(DELIMITER.to_string());
        }
        out.extend(w.0.iter().cloned());
    }
    out
}

/// Sentence accuracy with delimiters counted as symbols.
pub fn sentence_par(reference_words: &[Word], hypothesis_words: &[Word]) -> Result<f64> {
    par(&delimited_symbols(reference_words), &delimited_symbols(hypothesis_words))
}

/// Adjusted Rand index between two labelings of the same items.
pub fn ari(a: &[i64], b: &[i64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    let n = a.len();
    if n == 0 {
        return Err(Error::EmptyReference);
    }

    let mut a_labels: Vec<i64> = a.to_vec();
    a_labels.sort_unstable();
    a_labels.dedup();
    let mut b_labels: Vec<i64> = b.to_vec();
    b_labels.sort_unstable();
    b_labels.dedup();

    let ai = |x: i64| a_labels.binary_search(&x).unwrap();
    let bi = |x: i64| b_labels.binary_search(&x).unwrap();
    let mut table = vec![vec![0u64; b_labels.len()]; a_labels.len()];
    for i in 0..n {
        table[ai(a[i])][bi(b[i])] += 1;
    }

    let choose2 = |x: u64| (x * x.saturating_sub(1)) / 2;
    let sum_cells: u64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let row_sums: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<u64> = (0..b_labels.len())
        .map(|j| table.iter().map(|r| r[j]).sum())
        .collect();
    let sum_rows: u64 = row_sums.iter().map(|&c| choose2(c)).sum();
    let sum_cols: u64 = col_sums.iter().map(|&c| choose2(c)).sum();
    let total_pairs = choose2(n as u64);

    let expected = sum_rows as f64 * sum_cols as f64 / total_pairs.max(1) as f64;
    let max_index = 0.5 * (sum_rows + sum_cols) as f64;
    if (max_index - expected).abs() < 1e-12 {
        // Both labelings are all-singletons or all-one-cluster; agreement
        // is perfect when the tables coincide.
        return Ok(1.0);
    }
    Ok((sum_cells as f64 - expected) / (max_index - expected))
}

/// Euclidean position error `e_t` between a weighted-mean estimate and the
/// true pose, in cm.
pub fn localization_error(estimate: &Pose, truth: &Pose) -> f64 {
    estimate.distance_xy(truth)
}

/// Per-step localization errors of one run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ErrorSeries {
    pub errors: Vec<f64>,
    pub truths: Vec<Pose>,
    pub estimates: Vec<Pose>,
}

impl ErrorSeries {
    pub fn push(&mut self, estimate: Pose, truth: Pose) {
        self.errors.push(localization_error(&estimate, &truth));
        self.estimates.push(estimate);
        self.truths.push(truth);
    }

    pub fn mean_error(&self) -> f64 {
        if self.errors.is_empty() {
            return 0.0;
        }
        self.errors.iter().sum::<f64>() / self.errors.len() as f64
    }

    pub fn rmse(&self) -> f64 {
        if self.errors.is_empty() {
            return 0.0;
        }
        (self.errors.iter().map(|e| e * e).sum::<f64>() / self.errors.len() as f64).sqrt()
    }

    /// Estimation accuracy rate: fraction of steps with error strictly
    /// below `threshold`.
    pub fn ear(&self, threshold: f64) -> f64 {
        ear(&self.errors, threshold)
    }
}

/// Fraction of steps with error strictly below `threshold` (cm).
pub fn ear(errors: &[f64], threshold: f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    errors.iter().filter(|e| **e < threshold).count() as f64 / errors.len() as f64
}

/// Hyperparameters of the words-only mixture baseline; shared with the
/// concept model it is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpmHyper {
    pub gamma: f64,
    pub beta0: f64,
    pub l: usize,
}

/// Weak-limit Dirichlet-process mixture over bags-of-words, with
/// Dirichlet-multinomial components, Gibbs-sampled. Position information is
/// deliberately ignored: this is the clustering baseline.
pub fn dpm_word_clustering(
    bows: &[Vec<u32>],
    hyper: &DpmHyper,
    iterations: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    if bows.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let vocab_size = bows.iter().map(|b| b.len()).max().unwrap_or(0).max(1);
    let l = hyper.l;

    let mut weights = sample_dirichlet(&vec![hyper.gamma / l as f64; l], rng);
    let mut rows: Vec<Vec<f64>> = (0..l)
        .map(|_| sample_dirichlet(&vec![hyper.beta0; vocab_size], rng))
        .collect();
    let mut assignments = vec![0usize; bows.len()];

    for _ in 0..iterations {
        for (t, bow) in bows.iter().enumerate() {
            let logits: Vec<f64> = (0..l)
                .map(|c| {
                    let mut lp = weights[c].ln();
                    for (w, &count) in bow.iter().enumerate() {
                        if count > 0 {
                            lp += count as f64 * rows[c][w].ln();
                        }
                    }
                    lp
                })
                .collect();
            let (c, _) = sample_index(&logits, rng);
            assignments[t] = c;
        }
        weights = sample_concept_weights(&assignments, hyper.gamma, l, rng);
        let mut counts = vec![vec![0.0f64; vocab_size]; l];
        for (t, bow) in bows.iter().enumerate() {
            for (w, &c) in bow.iter().enumerate() {
                counts[assignments[t]][w] += c as f64;
            }
        }
        rows = counts
            .into_iter()
            .map(|row| {
                let alphas: Vec<f64> = row.iter().map(|c| c + hyper.beta0).collect();
                sample_dirichlet(&alphas, rng)
            })
            .collect();
    }
    Ok(assignments)
}
