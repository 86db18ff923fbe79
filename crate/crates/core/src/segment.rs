//! Unsupervised word segmentation over recognition lattices.
//!
//! A Dirichlet-process unigram word model with a geometric-length, uniform-
//! syllable base measure, sampled by blocked Gibbs: per utterance the
//! (lattice path, segmentation) pair is drawn exactly by forward filtering
//! and backward sampling over the composed graph. The base measure depends
//! only on word length and table words live in a trie, which keeps the
//! composed state space small.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::sample_from_log_weights;
use crate::speech::{Lattice, Word};

/// Longest word the segmenter will hypothesize, in syllables. Longer words
/// carry negligible base mass and would blow up the sampler state space.
pub const MAX_WORD_LEN: usize = 12;

/// Base measure over words: geometric length, uniform syllables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseMeasure {
    pub inventory_size: usize,
    /// Probability of continuing a word after each syllable.
    pub p_cont: f64,
}

impl BaseMeasure {
    /// `ln[(1 - p) * p^(len-1) * V^(-len)]`; depends only on length.
    pub fn log_prob_len(&self, len: usize) -> f64 {
        debug_assert!(len >= 1);
        (1.0 - self.p_cont).ln()
            + (len as f64 - 1.0) * self.p_cont.ln()
            + len as f64 * (1.0 / self.inventory_size as f64).ln()
    }
}

/// Log base probability of a word; errors on the empty word.
pub fn base_logprob(base: &BaseMeasure, word: &Word) -> Result<f64> {
    if word.is_empty() {
        return Err(Error::EmptyWord);
    }
    Ok(base.log_prob_len(word.len()))
}

#[derive(Debug, Clone)]
struct TrieNode {
    children: BTreeMap<String, usize>,
    /// Current restaurant count of the word ending here; 0 if none.
    count: usize,
    /// Total counts at or below this node; lets the sampler skip dead
    /// branches.
    subtree: usize,
}

/// Dirichlet-process unigram language model with restaurant counts.
#[derive(Debug, Clone)]
pub struct UnigramDplm {
    counts: HashMap<Word, usize>,
    total: usize,
    pub concentration: f64,
    pub base: BaseMeasure,
    trie: Vec<TrieNode>,
}

impl UnigramDplm {
    pub fn new(concentration: f64, base: BaseMeasure) -> UnigramDplm {
        UnigramDplm {
            counts: HashMap::new(),
            total: 0,
            concentration,
            base,
            trie: vec![TrieNode { children: BTreeMap::new(), count: 0, subtree: 0 }],
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn count(&self, word: &Word) -> usize {
        self.counts.get(word).copied().unwrap_or(0)
    }

    /// Sorted view of the table, for tests and reports.
    pub fn snapshot(&self) -> BTreeMap<Word, usize> {
        self.counts.iter().map(|(w, c)| (w.clone(), *c)).collect()
    }

    pub fn add(&mut self, word: &Word) {
        debug_assert!(!word.is_empty());
        *self.counts.entry(word.clone()).or_insert(0) += 1;
        self.total += 1;
        let mut node = 0usize;
        self.trie[0].subtree += 1;
        for syl in word.syllables() {
            let next = match self.trie[node].children.get(syl) {
                Some(&n) => n,
                None => {
                    self.trie.push(TrieNode { children: BTreeMap::new(), count: 0, subtree: 0 });
                    let n = self.trie.len() - 1;
                    self.trie[node].children.insert(syl.clone(), n);
                    n
                }
            };
            node = next;
            self.trie[node].subtree += 1;
        }
        self.trie[node].count += 1;
    }

    pub fn remove(&mut self, word: &Word) {
        let c = self.counts.get_mut(word).expect("removing a word that was never added");
        *c -= 1;
        if *c == 0 {
            self.counts.remove(word);
        }
        self.total -= 1;
        let mut node = 0usize;
        self.trie[0].subtree -= 1;
        for syl in word.syllables() {
            node = self.trie[node].children[syl];
            self.trie[node].subtree -= 1;
        }
        self.trie[node].count -= 1;
    }

    /// Posterior predictive `(count(w) + conc * base(w)) / (total + conc)`.
    pub fn predictive(&self, word: &Word) -> f64 {
        let base = self.base.log_prob_len(word.len().max(1)).exp();
        (self.count(word) as f64 + self.concentration * base) / (self.total as f64 + self.concentration)
    }

    pub fn log_predictive(&self, word: &Word) -> f64 {
        self.predictive(word).ln()
    }

    /// `ln[conc * base(len) / (total + conc)]`: the new-word part of the
    /// predictive, which depends only on word length.
    fn log_new_word(&self, len: usize) -> f64 {
        self.concentration.ln() + self.base.log_prob_len(len)
            - (self.total as f64 + self.concentration).ln()
    }

    /// `ln[count / (total + conc)]`: the table part of the predictive.
    fn log_table_word(&self, count: usize) -> f64 {
        (count as f64).ln() - (self.total as f64 + self.concentration).ln()
    }
}

/// Knobs for the lattice segmentation sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentOptions {
    pub iterations: usize,
    pub concentration: f64,
    pub p_cont: f64,
    /// Base-measure inventory size; inferred from the corpus when `None`.
    pub inventory_size: Option<usize>,
    /// Multiplier on acoustic edge scores.
    pub acoustic_scale: f64,
    /// Starting temperature of a linear annealing schedule ending at 1.
    pub anneal_start_temp: f64,
    /// Debug mode: keep a proposal only when it improves the local score.
    pub greedy: bool,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        SegmentOptions {
            iterations: 100,
            concentration: 1.0,
            p_cont: 0.5,
            inventory_size: None,
            acoustic_scale: 1.0,
            anneal_start_temp: 6.0,
            greedy: false,
        }
    }
}

/// Segmentation method: sample over the full lattice, over the decoded
/// best path, or bypass segmentation syllable-by-syllable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Blocked Gibbs over the full lattice.
    #[serde(rename = "A", alias = "lattice")]
    Lattice,
    /// Blocked Gibbs over the 1-best decode as a linear lattice.
    #[serde(rename = "B", alias = "one-best", alias = "one_best")]
    OneBest,
    /// Every decoded syllable is its own token; no sampling.
    #[serde(rename = "C", alias = "bos", alias = "syllables")]
    Syllables,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::Lattice => "A",
            Method::OneBest => "B",
            Method::Syllables => "C",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        match s.to_ascii_uppercase().as_str() {
            "A" | "LATTICE" => Ok(Method::Lattice),
            "B" | "ONE-BEST" | "ONE_BEST" => Ok(Method::OneBest),
            "C" | "BOS" | "SYLLABLES" => Ok(Method::Syllables),
            other => Err(Error::Config(format!("unknown method {other:?}, expected A, B, or C"))),
        }
    }
}

/// One sampled (path, segmentation) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationDraw {
    /// Edge indices of the chosen lattice path.
    pub edges: Vec<usize>,
    /// Syllables the path spells (epsilon edges contribute nothing).
    pub syllables: Vec<String>,
    pub words: Vec<Word>,
    /// Acoustic log-score of the chosen path (unscaled).
    pub acoustic: f64,
}

// Composed-graph state: where we are in the lattice and what partial word
// we carry. A word started in the base channel only needs its length; one
// matched against the table walks the trie. The `emitted` bit excludes the
// all-epsilon path, which has no word sequence.
//
// States are addressed densely: mode 0 is idle, 1..=MAX_WORD_LEN are base
// lengths, and the rest are trie nodes. Epoch stamps avoid clearing the
// index between utterances.
#[derive(Debug, Clone, Copy)]
struct Transition {
    from: u32,
    logw: f64,
    edge: u32,
    closes: bool,
}

/// Reusable buffers for the forward-filter/backward-sample pass.
#[derive(Debug, Default)]
pub struct FfbsScratch {
    stamp: Vec<u32>,
    dense_id: Vec<u32>,
    epoch: u32,
    // Per-state data, truncated each call.
    cells: Vec<u32>,
    alpha: Vec<f64>,
    incoming: Vec<Vec<Transition>>,
    by_node: Vec<Vec<u32>>,
}

impl FfbsScratch {
    fn begin(&mut self, dense_size: usize, nodes: usize) {
        if self.stamp.len() < dense_size {
            self.stamp.resize(dense_size, 0);
            self.dense_id.resize(dense_size, 0);
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
        self.cells.clear();
        self.alpha.clear();
        if self.by_node.len() < nodes {
            self.by_node.resize_with(nodes, Vec::new);
        }
        for v in self.by_node.iter_mut().take(nodes) {
            v.clear();
        }
    }

    #[inline]
    fn intern(&mut self, cell: u32, node: usize) -> u32 {
        let c = cell as usize;
        if self.stamp[c] == self.epoch {
            return self.dense_id[c];
        }
        let id = self.cells.len() as u32;
        self.stamp[c] = self.epoch;
        self.dense_id[c] = id;
        self.cells.push(cell);
        self.alpha.push(f64::NEG_INFINITY);
        if self.incoming.len() <= id as usize {
            self.incoming.push(Vec::new());
        } else {
            self.incoming[id as usize].clear();
        }
        self.by_node[node].push(id);
        id
    }

    #[inline]
    fn lookup(&self, cell: u32) -> Option<u32> {
        let c = cell as usize;
        if self.stamp[c] == self.epoch {
            Some(self.dense_id[c])
        } else {
            None
        }
    }

    #[inline]
    fn push_transition(&mut self, target: u32, t: Transition) {
        let contribution = self.alpha[t.from as usize] + t.logw;
        let a = &mut self.alpha[target as usize];
        *a = log_add_exp(*a, contribution);
        self.incoming[target as usize].push(t);
    }
}

#[inline]
fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

// Dense mode layout.
const MODE_IDLE: u32 = 0;
const MODE_BASE0: u32 = 1; // Base { len } -> MODE_BASE0 + len - 1
fn mode_trie0() -> u32 {
    MODE_BASE0 + MAX_WORD_LEN as u32
}

/// Draw a (path, segmentation) pair proportionally to
/// `acoustic(path)^scale * prod_w predictive(w)`, exactly, with the word
/// predictives frozen at the current counts.
///
/// The caller must have removed the utterance's own counts first (blocked
/// Gibbs contract). `inv_temp` exponentiates the word predictives only;
/// acoustic scores keep their fixed scale so annealing explores
/// segmentations without forgetting the recognizer evidence.
pub fn sample_segmentation_lattice(
    lattice: &Lattice,
    lm: &UnigramDplm,
    opts: &SegmentOptions,
    inv_temp: f64,
    rng: &mut impl Rng,
) -> Result<SegmentationDraw> {
    let mut scratch = FfbsScratch::default();
    sample_segmentation_with_scratch(lattice, lm, opts, inv_temp, &mut scratch, rng)
}

/// [`sample_segmentation_lattice`] with caller-owned buffers, for tight
/// Gibbs loops.
pub fn sample_segmentation_with_scratch(
    lattice: &Lattice,
    lm: &UnigramDplm,
    opts: &SegmentOptions,
    inv_temp: f64,
    scratch: &mut FfbsScratch,
    rng: &mut impl Rng,
) -> Result<SegmentationDraw> {
    lattice.validate()?;
    let n = lattice.node_count();
    let modes = (mode_trie0() as usize) + lm.trie.len();
    let cell_of = |node: usize, mode: u32, emitted: bool| -> u32 {
        (((node * 2 + usize::from(emitted)) * modes) as u32) + mode
    };
    scratch.begin(n * 2 * modes, n);

    let mut edges_by_from: Vec<Vec<u32>> = vec![Vec::new(); n];
    for (i, e) in lattice.edges.iter().enumerate() {
        edges_by_from[e.from].push(i as u32);
    }

    let start = scratch.intern(cell_of(lattice.source, MODE_IDLE, false), lattice.source);
    scratch.alpha[start as usize] = 0.0;

    for node in 0..n {
        // States at this node are complete once we get here: every lattice
        // edge moves strictly forward.
        let mut cursor = 0usize;
        while cursor < scratch.by_node[node].len() {
            let sid = scratch.by_node[node][cursor];
            cursor += 1;
            let a = scratch.alpha[sid as usize];
            if !a.is_finite() {
                continue;
            }
            let cell = scratch.cells[sid as usize];
            let emitted = (cell as usize / modes) % 2 == 1;
            let mode = cell % modes as u32;
            for &edge_idx in &edges_by_from[node] {
                let edge = &lattice.edges[edge_idx as usize];
                let acoustic = opts.acoustic_scale * edge.logp;
                match &edge.sym {
                    None => {
                        let t = scratch.intern(cell_of(edge.to, mode, emitted), edge.to);
                        scratch.push_transition(
                            t,
                            Transition { from: sid, logw: acoustic, edge: edge_idx, closes: false },
                        );
                    }
                    Some(sym) => {
                        // Base channel: extend or close by length.
                        let len0 = if mode == MODE_IDLE {
                            Some(0usize)
                        } else if mode < mode_trie0() {
                            Some((mode - MODE_BASE0) as usize + 1)
                        } else {
                            None
                        };
                        if let Some(len0) = len0 {
                            let len1 = len0 + 1;
                            if len1 <= MAX_WORD_LEN {
                                let t = scratch.intern(
                                    cell_of(edge.to, MODE_BASE0 + len1 as u32 - 1, emitted),
                                    edge.to,
                                );
                                scratch.push_transition(
                                    t,
                                    Transition {
                                        from: sid,
                                        logw: acoustic,
                                        edge: edge_idx,
                                        closes: false,
                                    },
                                );
                                let t = scratch.intern(cell_of(edge.to, MODE_IDLE, true), edge.to);
                                scratch.push_transition(
                                    t,
                                    Transition {
                                        from: sid,
                                        logw: acoustic + inv_temp * lm.log_new_word(len1),
                                        edge: edge_idx,
                                        closes: true,
                                    },
                                );
                            }
                        }
                        // Table channel: walk live trie branches.
                        let trie0 = if mode == MODE_IDLE {
                            Some(0usize)
                        } else if mode >= mode_trie0() {
                            Some((mode - mode_trie0()) as usize)
                        } else {
                            None
                        };
                        if let Some(trie0) = trie0 {
                            if let Some(&trie1) = lm.trie[trie0].children.get(sym) {
                                if lm.trie[trie1].subtree > 0 {
                                    let t = scratch.intern(
                                        cell_of(edge.to, mode_trie0() + trie1 as u32, emitted),
                                        edge.to,
                                    );
                                    scratch.push_transition(
                                        t,
                                        Transition {
                                            from: sid,
                                            logw: acoustic,
                                            edge: edge_idx,
                                            closes: false,
                                        },
                                    );
                                    let count = lm.trie[trie1].count;
                                    if count > 0 {
                                        let t =
                                            scratch.intern(cell_of(edge.to, MODE_IDLE, true), edge.to);
                                        scratch.push_transition(
                                            t,
                                            Transition {
                                                from: sid,
                                                logw: acoustic + inv_temp * lm.log_table_word(count),
                                                edge: edge_idx,
                                                closes: true,
                                            },
                                        );
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let accept = match scratch.lookup(cell_of(lattice.sink, MODE_IDLE, true)) {
        Some(id) if scratch.alpha[id as usize].is_finite() => id,
        _ => return Err(Error::InvalidLattice("no segmentable path from source to sink".into())),
    };

    // Backward pass: walk ancestors proportionally to their forward mass.
    let mut chosen: Vec<Transition> = Vec::new();
    let mut cur = accept;
    let mut logw_buf: Vec<f64> = Vec::new();
    while cur != start {
        let options = &scratch.incoming[cur as usize];
        debug_assert!(!options.is_empty());
        logw_buf.clear();
        logw_buf.extend(options.iter().map(|t| scratch.alpha[t.from as usize] + t.logw));
        let pick = sample_from_log_weights(&logw_buf, rng)
            .ok_or_else(|| Error::InvalidLattice("underflow during backward sampling".into()))?;
        let t = options[pick];
        chosen.push(t);
        cur = t.from;
    }
    chosen.reverse();

    let mut words = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let mut syllables = Vec::new();
    let mut edges = Vec::with_capacity(chosen.len());
    let mut acoustic = 0.0;
    for t in &chosen {
        let edge = &lattice.edges[t.edge as usize];
        edges.push(t.edge as usize);
        acoustic += edge.logp;
        if let Some(sym) = &edge.sym {
            current.push(sym.clone());
            syllables.push(sym.clone());
        }
        if t.closes {
            debug_assert!(!current.is_empty());
            words.push(Word(std::mem::take(&mut current)));
        }
    }
    debug_assert!(current.is_empty(), "path ended inside a word");
    debug_assert_eq!(
        words.iter().flat_map(|w| w.0.iter().cloned()).collect::<Vec<_>>(),
        syllables,
        "segmentation must spell the sampled path"
    );

    Ok(SegmentationDraw { edges, syllables, words, acoustic })
}

/// Final segmentation of one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedUtterance {
    /// Syllables of the chosen lattice path.
    pub syllables: Vec<String>,
    pub words: Vec<Word>,
}

/// Output of [`segment_corpus`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationResult {
    pub method: Method,
    pub utterances: Vec<SegmentedUtterance>,
    /// Exchangeable corpus joint log-score after each Gibbs iteration.
    pub joint_trace: Vec<f64>,
    /// Distinct words of the final segmentation, sorted.
    pub vocabulary: Vec<Word>,
}

/// Blocked Gibbs segmentation of a lattice corpus.
pub fn segment_corpus(
    lattices: &[Lattice],
    method: Method,
    opts: &SegmentOptions,
    rng: &mut impl Rng,
) -> Result<SegmentationResult> {
    if lattices.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if opts.iterations == 0 {
        return Err(Error::Config("segmentation needs at least one iteration".into()));
    }

    if method == Method::Syllables {
        let utterances: Vec<SegmentedUtterance> = lattices
            .iter()
            .map(|lat| {
                let syllables = lat.one_best();
                let words = syllables.iter().map(|s| Word(vec![s.clone()])).collect();
                SegmentedUtterance { syllables, words }
            })
            .collect();
        let vocabulary = collect_vocabulary(&utterances);
        return Ok(SegmentationResult { method, utterances, joint_trace: Vec::new(), vocabulary });
    }

    let working: Vec<Lattice> = match method {
        Method::Lattice => lattices.to_vec(),
        Method::OneBest => lattices.iter().map(|l| Lattice::linear(&l.one_best())).collect(),
        Method::Syllables => unreachable!(),
    };
    let inventory_size = opts.inventory_size.unwrap_or_else(|| inventory_size_of(&working)).max(1);

    let base = BaseMeasure { inventory_size, p_cont: opts.p_cont };
    let mut lm = UnigramDplm::new(opts.concentration, base);
    let mut current: Vec<Option<SegmentationDraw>> = vec![None; working.len()];
    let mut joint_trace = Vec::with_capacity(opts.iterations);
    let mut scratch = FfbsScratch::default();

    for iter in 0..opts.iterations {
        // Geometric cooling from the start temperature down to 1.
        let temp = if opts.iterations > 1 {
            let frac = iter as f64 / (opts.iterations - 1) as f64;
            opts.anneal_start_temp.max(1.0).powf(1.0 - frac)
        } else {
            1.0
        };
        let inv_temp = 1.0 / temp.max(1e-6);

        for (i, lattice) in working.iter().enumerate() {
            if let Some(prev) = &current[i] {
                for w in &prev.words {
                    lm.remove(w);
                }
            }
            let draw =
                sample_segmentation_with_scratch(lattice, &lm, opts, inv_temp, &mut scratch, rng)?;
            let accepted = if opts.greedy {
                match &current[i] {
                    Some(prev) if local_score(prev, &lm, opts) > local_score(&draw, &lm, opts) => {
                        prev.clone()
                    }
                    _ => draw,
                }
            } else {
                draw
            };
            for w in &accepted.words {
                lm.add(w);
            }
            current[i] = Some(accepted);
        }

        joint_trace.push(corpus_joint_logprob(&current, opts, base));
    }

    let utterances: Vec<SegmentedUtterance> = current
        .into_iter()
        .map(|draw| {
            let d = draw.expect("every utterance sampled");
            SegmentedUtterance { syllables: d.syllables, words: d.words }
        })
        .collect();
    let vocabulary = collect_vocabulary(&utterances);
    Ok(SegmentationResult { method, utterances, joint_trace, vocabulary })
}

/// Utterance score with frozen counts: scaled acoustics plus predictives.
fn local_score(draw: &SegmentationDraw, lm: &UnigramDplm, opts: &SegmentOptions) -> f64 {
    opts.acoustic_scale * draw.acoustic
        + draw.words.iter().map(|w| lm.log_predictive(w)).sum::<f64>()
}

/// Exchangeable joint: replay the corpus into an empty model, scoring each
/// word with the predictive at its insertion time, plus scaled acoustics.
fn corpus_joint_logprob(
    current: &[Option<SegmentationDraw>],
    opts: &SegmentOptions,
    base: BaseMeasure,
) -> f64 {
    let mut lm = UnigramDplm::new(opts.concentration, base);
    let mut total = 0.0;
    for draw in current.iter().flatten() {
        total += opts.acoustic_scale * draw.acoustic;
        for w in &draw.words {
            total += lm.log_predictive(w);
            lm.add(w);
        }
    }
    total
}

fn collect_vocabulary(utterances: &[SegmentedUtterance]) -> Vec<Word> {
    let mut vocab: Vec<Word> = utterances
        .iter()
        .flat_map(|u| u.words.iter().cloned())
        .collect();
    vocab.sort();
    vocab.dedup();
    vocab
}

fn inventory_size_of(lattices: &[Lattice]) -> usize {
    let mut syms: Vec<&str> = lattices
        .iter()
        .flat_map(|l| l.edges.iter())
        .filter_map(|e| e.sym.as_deref())
        .collect();
    syms.sort();
    syms.dedup();
    syms.len()
}
