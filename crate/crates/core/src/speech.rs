//! The speech channel: utterance templates, a syllable confusion channel,
//! and the recognition lattices it emits.
//!
//! Instead of an acoustic recognizer, teaching sentences pass through a
//! configurable confusion channel. Each true syllable is observed as a
//! (possibly wrong) syllable; the emitted lattice is a confusion network
//! whose edge scores are exact channel log-probabilities, so downstream
//! samplers can be validated against enumeration.

use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A word: a non-empty sequence of syllable symbols.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Word(pub Vec<String>);

impl Word {
    pub fn from_syls<I: IntoIterator<Item = S>, S: Into<String>>(syls: I) -> Word {
        Word(syls.into_iter().map(Into::into).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn syllables(&self) -> &[String] {
        &self.0
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.0 {
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

/// One ground-truth teaching sentence: syllables plus the word boundaries
/// that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub syllables: Vec<String>,
    /// Cumulative word-end indices; the last entry equals `syllables.len()`.
    pub boundaries: Vec<usize>,
    /// Scenario place label this sentence was uttered at.
    pub place: String,
}

impl Utterance {
    pub fn from_words(words: &[Word], place: &str) -> Utterance {
        let mut syllables = Vec::new();
        let mut boundaries = Vec::new();
        for w in words {
            syllables.extend(w.0.iter().cloned());
            boundaries.push(syllables.len());
        }
        Utterance { syllables, boundaries, place: place.to_string() }
    }

    pub fn words(&self) -> Vec<Word> {
        let mut out = Vec::with_capacity(self.boundaries.len());
        let mut start = 0;
        for &end in &self.boundaries {
            out.push(Word(self.syllables[start..end].to_vec()));
            start = end;
        }
        out
    }

    /// Index of the word containing syllable `i`.
    pub fn word_of_syllable(&self, i: usize) -> usize {
        self.boundaries.iter().position(|&end| i < end).unwrap_or(self.boundaries.len() - 1)
    }
}

/// A sentence template; `Slot` is filled with the place name.
#[derive(Debug, Clone, PartialEq)]
pub enum TemplateWord {
    Slot,
    Fixed(Word),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub words: Vec<TemplateWord>,
}

impl Template {
    fn new(words: Vec<TemplateWord>) -> Template {
        Template { words }
    }

    pub fn render(&self, name: &Word) -> Vec<Word> {
        self.words
            .iter()
            .map(|tw| match tw {
                TemplateWord::Slot => name.clone(),
                TemplateWord::Fixed(w) => w.clone(),
            })
            .collect()
    }
}

/// Index of the held-out phrase in [`TemplateSet::standard`]; used only for
/// localization-time utterances, never for teaching.
pub const HELD_OUT_TEMPLATE: usize = 10;

/// The teaching phrase inventory.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub templates: Vec<Template>,
}

impl TemplateSet {
    /// Ten teaching phrases plus the held-out localization phrase.
    pub fn standard() -> TemplateSet {
        fn w(syls: &[&str]) -> TemplateWord {
            TemplateWord::Fixed(Word::from_syls(syls.iter().copied()))
        }
        let s = TemplateWord::Slot;
        let templates = vec![
            Template::new(vec![s.clone(), w(&["da"]), w(&["yo"])]),
            Template::new(vec![s.clone(), w(&["de", "su"])]),
            Template::new(vec![w(&["ko", "ko"]), w(&["ga"]), s.clone()]),
            Template::new(vec![w(&["ko", "ko"]), w(&["wa"]), s.clone(), w(&["de", "su"])]),
            Template::new(vec![s.clone(), w(&["ni"]), w(&["ki"]), w(&["ma", "shi"]), w(&["ta"])]),
            Template::new(vec![s.clone(), w(&["wa"]), w(&["ko", "chi", "ra"]), w(&["de", "su"])]),
            Template::new(vec![
                w(&["ko", "chi", "ra"]),
                w(&["ga"]),
                s.clone(),
                w(&["ni"]),
                w(&["na", "ri"]),
                w(&["ma", "su"]),
            ]),
            Template::new(vec![
                w(&["ko", "no"]),
                w(&["ba", "sho"]),
                w(&["ga"]),
                s.clone(),
                w(&["da"]),
                w(&["yo"]),
            ]),
            Template::new(vec![
                w(&["ko", "no"]),
                w(&["ba", "sho"]),
                w(&["no"]),
                w(&["na", "ma", "e"]),
                w(&["wa"]),
                s.clone(),
            ]),
            Template::new(vec![
                w(&["ko", "ko"]),
                w(&["no"]),
                w(&["na", "ma", "e"]),
                w(&["wa"]),
                s.clone(),
                w(&["da"]),
                w(&["yo"]),
            ]),
            // Held out: the same surface phrase as templates 0/3 but with
            // fused function words, so it never coincides with teaching data.
            Template::new(vec![w(&["ko", "ko", "wa"]), s, w(&["da", "yo"])]),
        ];
        TemplateSet { templates }
    }

    pub fn training_ids(&self) -> std::ops::Range<usize> {
        0..HELD_OUT_TEMPLATE
    }

    pub fn get(&self, id: usize) -> Result<&Template> {
        self.templates.get(id).ok_or(Error::UnknownTemplate(id))
    }

    /// Union of syllables used by the fixed words of every template.
    pub fn syllables(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .templates
            .iter()
            .flat_map(|t| t.words.iter())
            .filter_map(|tw| match tw {
                TemplateWord::Fixed(w) => Some(w.0.clone()),
                TemplateWord::Slot => None,
            })
            .flatten()
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

/// Fill template `id` with `name`, keeping the template's word boundaries.
pub fn render_utterance(set: &TemplateSet, id: usize, name: &Word, place: &str) -> Result<Utterance> {
    if name.is_empty() {
        return Err(Error::EmptyWord);
    }
    let template = set.get(id)?;
    Ok(Utterance::from_words(&template.render(name), place))
}

/// The syllable inventory and its confusion channel.
///
/// Substitution probabilities follow a banded kernel on the inventory
/// ordering: `P(c | s) ∝ exp(-|idx(c) - idx(s)| / band_tau)`, so a single
/// temperature controls how often and how far observations stray.
#[derive(Debug, Clone)]
pub struct SyllableInventory {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
    /// `confusion[s][c]` = P(observe c | said s); each row sums to 1.
    confusion: Vec<Vec<f64>>,
    pub p_delete: f64,
    pub p_insert: f64,
}

/// Ordering key approximating acoustic similarity: syllables sharing a
/// vowel nucleus sit together, then by onset and coda. Banded confusion
/// over this order mixes e.g. te/de/ke rather than alphabet neighbors.
fn phonetic_key(syl: &str) -> (u8, String, String) {
    let vowels = ['a', 'i', 'u', 'e', 'o'];
    let chars: Vec<char> = syl.chars().collect();
    let pos = chars.iter().position(|c| vowels.contains(c)).unwrap_or(0);
    let nucleus = chars.get(pos).copied().unwrap_or('a');
    let rank = vowels.iter().position(|v| *v == nucleus).unwrap_or(0) as u8;
    let onset: String = chars[..pos].iter().collect();
    let coda: String = chars[pos..].iter().collect();
    (rank, onset, coda)
}

impl SyllableInventory {
    pub fn new(mut symbols: Vec<String>, band_tau: f64, p_delete: f64, p_insert: f64) -> SyllableInventory {
        symbols.sort();
        symbols.dedup();
        symbols.sort_by_key(|s| phonetic_key(s));
        let n = symbols.len();
        let index = symbols.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        let mut confusion = vec![vec![0.0; n]; n];
        for s in 0..n {
            if band_tau <= 0.0 {
                confusion[s][s] = 1.0;
                continue;
            }
            let mut total = 0.0;
            for c in 0..n {
                let d = (s as f64 - c as f64).abs();
                let w = (-d / band_tau).exp();
                confusion[s][c] = w;
                total += w;
            }
            for c in 0..n {
                confusion[s][c] /= total;
            }
        }
        SyllableInventory { symbols, index, confusion, p_delete, p_insert }
    }

    /// Identity channel over the same symbols.
    pub fn noise_free(symbols: Vec<String>) -> SyllableInventory {
        SyllableInventory::new(symbols, 0.0, 0.0, 0.0)
    }

    /// A small default inventory of thirty open syllables.
    pub fn basic_symbols() -> Vec<String> {
        [
            "a", "i", "u", "e", "o", "ka", "ki", "ku", "ke", "ko", "sa", "shi", "su", "se", "so",
            "ta", "chi", "tsu", "te", "to", "na", "ni", "nu", "ne", "no", "ha", "hi", "fu", "he",
            "ho",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn contains(&self, sym: &str) -> bool {
        self.index.contains_key(sym)
    }

    /// P(observe `c` | said `s`); `None` when either symbol is unknown.
    pub fn confusion_prob(&self, said: &str, observed: &str) -> Option<f64> {
        let s = *self.index.get(said)?;
        let c = *self.index.get(observed)?;
        Some(self.confusion[s][c])
    }

    fn sample_confused(&self, said: usize, rng: &mut impl Rng) -> usize {
        let row = &self.confusion[said];
        let mut u = rng.random::<f64>();
        for (c, p) in row.iter().enumerate() {
            u -= p;
            if u <= 0.0 {
                return c;
            }
        }
        row.len() - 1
    }
}

/// One scored hypothesis edge. `sym == None` marks an epsilon (skip) edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeEdge {
    pub from: usize,
    pub to: usize,
    pub sym: Option<String>,
    pub logp: f64,
}

/// A DAG of syllable hypotheses with log-probability scores.
///
/// Nodes are topologically ordered ids (every edge satisfies `from < to`);
/// node `source` is the unique entry and `sink` the unique exit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub nodes: Vec<usize>,
    pub edges: Vec<LatticeEdge>,
    pub source: usize,
    pub sink: usize,
}

impl Lattice {
    /// A single-path lattice spelling `syllables` with all scores `log 1`.
    pub fn linear(syllables: &[String]) -> Lattice {
        let n = syllables.len();
        let nodes = (0..=n).collect();
        let edges = syllables
            .iter()
            .enumerate()
            .map(|(i, s)| LatticeEdge { from: i, to: i + 1, sym: Some(s.clone()), logp: 0.0 })
            .collect();
        Lattice { nodes, edges, source: 0, sink: n }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Check the structural invariants: topological edge order, single
    /// source/sink, full reachability, finite scores.
    pub fn validate(&self) -> Result<()> {
        let n = self.node_count();
        if n == 0 {
            return Err(Error::InvalidLattice("no nodes".into()));
        }
        for (i, &id) in self.nodes.iter().enumerate() {
            if id != i {
                return Err(Error::InvalidLattice(format!("node ids must be 0..{n}, found {id}")));
            }
        }
        if self.source != 0 || self.sink != n - 1 {
            return Err(Error::InvalidLattice("source/sink must be first/last node".into()));
        }
        let mut in_deg = vec![0usize; n];
        let mut out_deg = vec![0usize; n];
        for e in &self.edges {
            if e.from >= n || e.to >= n || e.from >= e.to {
                return Err(Error::InvalidLattice(format!(
                    "edge {}->{} breaks topological order",
                    e.from, e.to
                )));
            }
            if !e.logp.is_finite() {
                return Err(Error::InvalidLattice("non-finite edge score".into()));
            }
            if matches!(&e.sym, Some(s) if s.is_empty()) {
                return Err(Error::InvalidLattice("empty syllable symbol".into()));
            }
            out_deg[e.from] += 1;
            in_deg[e.to] += 1;
        }
        for id in 0..n {
            if id != self.source && in_deg[id] == 0 {
                return Err(Error::InvalidLattice(format!("node {id} unreachable")));
            }
            if id != self.sink && out_deg[id] == 0 {
                return Err(Error::InvalidLattice(format!("node {id} is a dead end")));
            }
        }
        Ok(())
    }

    /// Number of distinct source-to-sink paths.
    pub fn path_count(&self) -> u128 {
        let n = self.node_count();
        let mut counts = vec![0u128; n];
        counts[self.source] = 1;
        for node in self.source..n {
            if counts[node] == 0 {
                continue;
            }
            for e in self.edges.iter().filter(|e| e.from == node) {
                counts[e.to] += counts[node];
            }
        }
        counts[self.sink]
    }

    /// Highest-scoring path; score ties prefer the lexicographically
    /// smallest syllable sequence.
    pub fn one_best_path(&self) -> Vec<&LatticeEdge> {
        let n = self.node_count();
        // Per node: best (score, syllable sequence, edges so far).
        let mut best: Vec<Option<(f64, Vec<String>, Vec<usize>)>> = vec![None; n];
        best[self.source] = Some((0.0, Vec::new(), Vec::new()));
        for node in self.source..n {
            let Some((score, syms, edges)) = best[node].clone() else { continue };
            for (idx, e) in self.edges.iter().enumerate().filter(|(_, e)| e.from == node) {
                let cand_score = score + e.logp;
                let mut cand_syms = syms.clone();
                if let Some(s) = &e.sym {
                    cand_syms.push(s.clone());
                }
                let mut cand_edges = edges.clone();
                cand_edges.push(idx);
                let better = match &best[e.to] {
                    None => true,
                    Some((old_score, old_syms, _)) => {
                        cand_score > *old_score
                            || (cand_score == *old_score && cand_syms < *old_syms)
                    }
                };
                if better {
                    best[e.to] = Some((cand_score, cand_syms, cand_edges));
                }
            }
        }
        match &best[self.sink] {
            Some((_, _, edges)) => edges.iter().map(|&i| &self.edges[i]).collect(),
            None => Vec::new(),
        }
    }

    /// Syllable sequence of the best path.
    pub fn one_best(&self) -> Vec<String> {
        self.one_best_path()
            .into_iter()
            .filter_map(|e| e.sym.clone())
            .collect()
    }
}

/// What happened to each true syllable while building a lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SlotOrigin {
    /// Slot produced by true syllable `index`, observed as `observed`.
    Spoken { index: usize, observed: String },
    /// Spurious slot inserted after true syllable position `after`.
    Inserted { after: usize, observed: String },
}

/// Per-lattice corruption diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorruptionReport {
    /// One entry per emitted slot, in lattice order.
    pub slots: Vec<SlotOrigin>,
    /// Indices of true syllables the channel dropped.
    pub deleted: Vec<usize>,
    /// Slots whose beam no longer contains the syllable that produced them.
    pub pruned_slots: usize,
    /// Whether the truth survives as a lattice path (its syllable sequence
    /// is spelled by some source-to-sink path).
    pub true_path_present: bool,
}

/// Pass `truth` through the channel and emit a confusion-network lattice.
///
/// Per surviving true syllable the slot holds the top `beam_width`
/// candidates ranked by the probability of producing the observation,
/// scored with exact channel log-probabilities. When `p_delete > 0` every
/// slot also carries an epsilon edge scored `ln p_delete`. Syllables
/// outside the inventory pass through unchanged.
pub fn corrupt_to_lattice(
    truth: &Utterance,
    inv: &SyllableInventory,
    beam_width: usize,
    rng: &mut impl Rng,
) -> (Lattice, CorruptionReport) {
    let beam_width = beam_width.max(1);
    let mut slots: Vec<(SlotOrigin, Vec<(String, f64)>)> = Vec::new();
    let mut deleted = Vec::new();

    for (i, syl) in truth.syllables.iter().enumerate() {
        match inv.index.get(syl.as_str()) {
            None => {
                // Unknown symbol: emitted verbatim with probability one.
                slots.push((
                    SlotOrigin::Spoken { index: i, observed: syl.clone() },
                    vec![(syl.clone(), 0.0)],
                ));
            }
            Some(&said) => {
                if inv.p_delete > 0.0 && rng.random::<f64>() < inv.p_delete {
                    deleted.push(i);
                } else {
                    let observed = inv.sample_confused(said, rng);
                    slots.push((
                        SlotOrigin::Spoken { index: i, observed: inv.symbols[observed].clone() },
                        slot_candidates(inv, observed, beam_width),
                    ));
                }
            }
        }
        if inv.p_insert > 0.0 && rng.random::<f64>() < inv.p_insert {
            let spurious = rng.random_range(0..inv.len());
            slots.push((
                SlotOrigin::Inserted { after: i, observed: inv.symbols[spurious].clone() },
                slot_candidates(inv, spurious, beam_width),
            ));
        }
    }

    // Degenerate case: everything deleted. Keep a single epsilon edge so the
    // lattice stays structurally valid.
    if slots.is_empty() {
        let lattice = Lattice {
            nodes: vec![0, 1],
            edges: vec![LatticeEdge { from: 0, to: 1, sym: None, logp: 0.0 }],
            source: 0,
            sink: 1,
        };
        let report = CorruptionReport {
            slots: Vec::new(),
            deleted,
            pruned_slots: 0,
            true_path_present: truth.syllables.is_empty(),
        };
        return (lattice, report);
    }

    let mut edges = Vec::new();
    let mut pruned_slots = 0;
    for (slot_idx, (origin, candidates)) in slots.iter().enumerate() {
        for (sym, logp) in candidates {
            edges.push(LatticeEdge {
                from: slot_idx,
                to: slot_idx + 1,
                sym: Some(sym.clone()),
                logp: *logp,
            });
        }
        if inv.p_delete > 0.0 {
            edges.push(LatticeEdge {
                from: slot_idx,
                to: slot_idx + 1,
                sym: None,
                logp: inv.p_delete.ln(),
            });
        }
        if let SlotOrigin::Spoken { index, .. } = origin {
            let true_sym = &truth.syllables[*index];
            if !candidates.iter().any(|(s, _)| s == true_sym) {
                pruned_slots += 1;
            }
        }
    }

    let node_count = slots.len() + 1;
    let lattice = Lattice {
        nodes: (0..node_count).collect(),
        edges,
        source: 0,
        sink: node_count - 1,
    };

    let true_path_present = spells(&lattice, &truth.syllables);
    let report = CorruptionReport {
        slots: slots.into_iter().map(|(o, _)| o).collect(),
        deleted,
        pruned_slots,
        true_path_present,
    };
    (lattice, report)
}

/// Top `beam` candidate syllables for an observation, ranked by the
/// likelihood of having produced it. Scores are `ln P(observed | candidate)`.
fn slot_candidates(inv: &SyllableInventory, observed: usize, beam: usize) -> Vec<(String, f64)> {
    let mut ranked: Vec<(usize, f64)> = (0..inv.len())
        .map(|said| (said, inv.confusion[said][observed]))
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    ranked
        .into_iter()
        .take(beam)
        .filter(|(_, p)| *p > 0.0)
        .map(|(said, p)| (inv.symbols[said].clone(), p.ln()))
        .collect()
}

/// Whether some source-to-sink path spells exactly `syllables`.
fn spells(lattice: &Lattice, syllables: &[String]) -> bool {
    // reachable[(node, consumed)] via DP over topological node order.
    let n = lattice.node_count();
    let m = syllables.len();
    let mut reach = vec![false; n * (m + 1)];
    reach[0] = true; // (source, 0)
    for node in 0..n {
        for k in 0..=m {
            if !reach[node * (m + 1) + k] {
                continue;
            }
            for e in lattice.edges.iter().filter(|e| e.from == node) {
                match &e.sym {
                    None => reach[e.to * (m + 1) + k] = true,
                    Some(s) => {
                        if k < m && *s == syllables[k] {
                            reach[e.to * (m + 1) + k + 1] = true;
                        }
                    }
                }
            }
        }
    }
    reach[lattice.sink * (m + 1) + m]
}

/// Corrupt an utterance, decode the best path, and carve it into word
/// tokens aligned with the true word boundaries (slot provenance).
///
/// This mimics recognizing with a dictionary at localization time: the
/// decoded tokens are then snapped to learned vocabulary entries. Inserted
/// slots attach to the word of the preceding true syllable; a fully
/// deleted word yields `None` in its position.
pub fn corrupt_and_decode_word_groups(
    truth: &Utterance,
    inv: &SyllableInventory,
    beam_width: usize,
    rng: &mut impl Rng,
) -> Vec<Option<Word>> {
    let (lattice, report) = corrupt_to_lattice(truth, inv, beam_width, rng);
    let path = lattice.one_best_path();
    let word_count = truth.boundaries.len();
    let mut groups: Vec<Vec<String>> = vec![Vec::new(); word_count];
    // Sausage shape: path edge i crosses slot i.
    for (slot_idx, edge) in path.iter().enumerate() {
        let Some(sym) = &edge.sym else { continue };
        let origin = &report.slots[slot_idx];
        let true_idx = match origin {
            SlotOrigin::Spoken { index, .. } => *index,
            SlotOrigin::Inserted { after, .. } => *after,
        };
        let word_idx = truth.word_of_syllable(true_idx.min(truth.syllables.len().saturating_sub(1)));
        groups[word_idx].push(sym.clone());
    }
    groups
        .into_iter()
        .map(|g| if g.is_empty() { None } else { Some(Word(g)) })
        .collect()
}

/// Like [`corrupt_and_decode_word_groups`] with empty groups dropped.
pub fn corrupt_and_decode_words(
    truth: &Utterance,
    inv: &SyllableInventory,
    beam_width: usize,
    rng: &mut impl Rng,
) -> Vec<Word> {
    corrupt_and_decode_word_groups(truth, inv, beam_width, rng)
        .into_iter()
        .flatten()
        .collect()
}

/// One teaching utterance as stored in the lattice corpus file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusRecord {
    /// Time step of the teaching event.
    pub t: usize,
    pub place: String,
    pub template: usize,
    pub truth_syllables: Vec<String>,
    pub truth_words: Vec<Word>,
    pub lattice: Lattice,
    pub true_path_present: bool,
    pub pruned_slots: usize,
}
