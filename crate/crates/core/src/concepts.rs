//! The spatial concept model: a weak-limit mixture pairing word
//! distributions over place names with Gaussian position distributions,
//! learned by Gibbs sampling from teaching-time positions and
//! bags-of-words.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::geom::{gaussian2_logpdf, Mat2, Pose};
use crate::mcl::{motion_log_density, LikelihoodField};
use crate::sampling::sample_from_log_weights;
use crate::speech::Word;
use crate::world::{MotionNoise, TrajectoryLog};

/// Jitter added to a covariance diagonal when a draw fails the SPD check.
const SPD_JITTER: f64 = 1e-6;
const SPD_RETRIES: usize = 3;

/// Model hyperparameters. `l` and `k` are the weak-limit truncation levels
/// of the concept and position mixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Concentration of the per-concept position mixture rows.
    pub alpha: f64,
    /// Concentration of the concept weights.
    pub gamma: f64,
    /// Symmetric Dirichlet mass per vocabulary entry of each word row.
    pub beta0: f64,
    pub m0: [f64; 2],
    pub kappa0: f64,
    pub v0: Mat2,
    pub nu0: f64,
    pub l: usize,
    pub k: usize,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            alpha: 1.5,
            gamma: 8.0,
            beta0: 0.5,
            m0: [0.0, 0.0],
            kappa0: 0.001,
            v0: Mat2::diag(1000.0, 1000.0),
            nu0: 2.0,
            l: 50,
            k: 50,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && self.gamma > 0.0
            && self.beta0 > 0.0
            && self.kappa0 > 0.0
            && self.nu0 > 1.0
            && self.l >= 1
            && self.k >= 1
            && self.v0.is_spd();
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid model hyperparameters".into()))
        }
    }

    pub fn niw_prior(&self) -> NiwParams {
        NiwParams { m: self.m0, kappa: self.kappa0, v: self.v0, nu: self.nu0 }
    }
}

/// Normal-inverse-Wishart parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NiwParams {
    pub m: [f64; 2],
    pub kappa: f64,
    pub v: Mat2,
    pub nu: f64,
}

/// Conjugate update of a normal-inverse-Wishart prior with 2-D points.
///
/// `kappa_n = kappa0 + n`, `nu_n = nu0 + n`,
/// `m_n = (kappa0 m0 + n xbar) / kappa_n`,
/// `V_n = V0 + S + (kappa0 n / kappa_n)(xbar - m0)(xbar - m0)^T`
/// with `S` the scatter around `xbar`.
pub fn niw_posterior(prior: &NiwParams, points: &[[f64; 2]]) -> NiwParams {
    let n = points.len();
    if n == 0 {
        return *prior;
    }
    let nf = n as f64;
    let mut xbar = [0.0, 0.0];
    for p in points {
        xbar[0] += p[0];
        xbar[1] += p[1];
    }
    xbar[0] /= nf;
    xbar[1] /= nf;

    let mut scatter = Mat2::zeros();
    for p in points {
        let d = [p[0] - xbar[0], p[1] - xbar[1]];
        scatter = scatter.add(&Mat2::outer(d));
    }

    let kappa_n = prior.kappa + nf;
    let nu_n = prior.nu + nf;
    let m_n = [
        (prior.kappa * prior.m[0] + nf * xbar[0]) / kappa_n,
        (prior.kappa * prior.m[1] + nf * xbar[1]) / kappa_n,
    ];
    let d0 = [xbar[0] - prior.m[0], xbar[1] - prior.m[1]];
    let v_n = prior
        .v
        .add(&scatter)
        .add(&Mat2::outer(d0).scale(prior.kappa * nf / kappa_n));
    NiwParams { m: m_n, kappa: kappa_n, v: v_n, nu: nu_n }
}

/// Draw from a 2-D inverse-Wishart via the Bartlett decomposition of the
/// Wishart on the inverse scale.
pub fn sample_inverse_wishart(v: &Mat2, nu: f64, rng: &mut impl Rng) -> Result<Mat2> {
    let v_inv = v.inverse().ok_or(Error::Config("singular IW scale".into()))?;
    let l = v_inv
        .cholesky()
        .ok_or(Error::Config("IW scale not positive definite".into()))?;
    let c0: f64 = ChiSquared::new(nu).map_err(|_| Error::Config("IW needs nu > d - 1".into()))?.sample(rng);
    let c1: f64 = ChiSquared::new(nu - 1.0)
        .map_err(|_| Error::Config("IW needs nu > d - 1".into()))?
        .sample(rng);
    let n10: f64 = StandardNormal.sample(rng);
    // A lower-triangular, W = (L A)(L A)^T ~ Wishart(nu, V^{-1}).
    let a = Mat2::new(c0.sqrt(), 0.0, n10, c1.sqrt());
    let la = Mat2::new(
        l.m[0][0] * a.m[0][0],
        0.0,
        l.m[1][0] * a.m[0][0] + l.m[1][1] * a.m[1][0],
        l.m[1][1] * a.m[1][1],
    );
    let w = Mat2::new(
        la.m[0][0] * la.m[0][0],
        la.m[0][0] * la.m[1][0],
        la.m[0][0] * la.m[1][0],
        la.m[1][0] * la.m[1][0] + la.m[1][1] * la.m[1][1],
    );
    w.inverse().ok_or(Error::Config("singular Wishart draw".into()))
}

/// Draw from a 2-D Gaussian.
pub fn sample_gaussian2(mean: [f64; 2], cov: &Mat2, rng: &mut impl Rng) -> Result<[f64; 2]> {
    let l = cov.cholesky().ok_or(Error::Config("covariance not SPD".into()))?;
    let z = [StandardNormal.sample(rng), StandardNormal.sample(rng)];
    let d = l.tri_mul(z);
    Ok([mean[0] + d[0], mean[1] + d[1]])
}

/// Dirichlet draw by normalized Gamma variates.
pub fn sample_dirichlet(alphas: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    let mut draws: Vec<f64> = alphas
        .iter()
        .map(|&a| {
            Gamma::new(a.max(1e-9), 1.0)
                .expect("positive shape")
                .sample(rng)
        })
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        for d in draws.iter_mut() {
            *d /= total;
        }
    } else {
        let uniform = 1.0 / alphas.len() as f64;
        draws.iter_mut().for_each(|d| *d = uniform);
    }
    draws
}

/// The learned model: concept weights, per-concept word and region rows,
/// and Gaussian position distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialConceptModel {
    /// Concept weights, length L.
    pub pi: Vec<f64>,
    /// Per-concept mixture over position distributions, L rows of length K.
    pub phi: Vec<Vec<f64>>,
    /// Per-concept word distributions, L rows over the vocabulary.
    pub word_dists: Vec<Vec<f64>>,
    /// Position distribution means, length K, cm.
    pub mu: Vec<[f64; 2]>,
    /// Position distribution covariances, length K, cm^2.
    pub sigma: Vec<Mat2>,
    pub vocabulary: Vec<Word>,
}

impl SpatialConceptModel {
    pub fn l(&self) -> usize {
        self.pi.len()
    }

    pub fn k(&self) -> usize {
        self.mu.len()
    }

    pub fn vocab_index(&self, word: &Word) -> Option<usize> {
        self.vocabulary.iter().position(|w| w == word)
    }

    /// Draw an initial model from the priors.
    pub fn init_from_prior(
        hyper: &Hyperparameters,
        vocabulary: Vec<Word>,
        rng: &mut impl Rng,
    ) -> Result<SpatialConceptModel> {
        hyper.validate()?;
        let l = hyper.l;
        let k = hyper.k;
        let v = vocabulary.len().max(1);
        let pi = sample_dirichlet(&vec![hyper.gamma / l as f64; l], rng);
        let phi = (0..l)
            .map(|_| sample_dirichlet(&vec![hyper.alpha / k as f64; k], rng))
            .collect();
        let word_dists = (0..l)
            .map(|_| sample_dirichlet(&vec![hyper.beta0; v], rng))
            .collect();
        let prior = hyper.niw_prior();
        let mut mu = Vec::with_capacity(k);
        let mut sigma = Vec::with_capacity(k);
        for _ in 0..k {
            let (m, s) = sample_niw(&prior, rng)?;
            mu.push(m);
            sigma.push(s);
        }
        Ok(SpatialConceptModel { pi, phi, word_dists, mu, sigma, vocabulary })
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.l();
        let k = self.k();
        let rows_ok = |rows: &[Vec<f64>], dim: usize| {
            rows.iter().all(|r| {
                r.len() == dim && (r.iter().sum::<f64>() - 1.0).abs() < 1e-9 && r.iter().all(|p| *p >= 0.0)
            })
        };
        let ok = (self.pi.iter().sum::<f64>() - 1.0).abs() < 1e-9
            && self.phi.len() == l
            && rows_ok(&self.phi, k)
            && self.word_dists.len() == l
            && rows_ok(&self.word_dists, self.vocabulary.len())
            && self.sigma.len() == k
            && self.sigma.iter().all(|s| s.is_spd());
        if ok {
            Ok(())
        } else {
            Err(Error::Config("model violates simplex/SPD invariants".into()))
        }
    }

    /// `ln N(x | mu_k, Sigma_k)` for every position distribution.
    pub fn region_loglikes(&self, xy: [f64; 2]) -> Vec<f64> {
        (0..self.k())
            .map(|k| gaussian2_logpdf(xy, self.mu[k], &self.sigma[k]))
            .collect()
    }
}

/// Draw `(mu, Sigma)` from a normal-inverse-Wishart, with SPD jitter
/// retries on numerically bad draws.
pub fn sample_niw(params: &NiwParams, rng: &mut impl Rng) -> Result<([f64; 2], Mat2)> {
    let mut v = params.v;
    for _ in 0..=SPD_RETRIES {
        match sample_inverse_wishart(&v, params.nu, rng) {
            Ok(sigma) if sigma.is_spd() => {
                let mean_cov = sigma.scale(1.0 / params.kappa);
                if let Ok(mu) = sample_gaussian2(params.m, &mean_cov, rng) {
                    return Ok((mu, sigma));
                }
            }
            _ => {}
        }
        v = v.add(&Mat2::diag(SPD_JITTER, SPD_JITTER));
    }
    Err(Error::Config("could not draw an SPD covariance".into()))
}

/// Teaching-time data and the sampler's assignments over it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeachingLog {
    /// Teaching time steps, strictly increasing.
    pub times: Vec<usize>,
    /// Estimated teaching positions (from the smoother), cm.
    pub positions: Vec<[f64; 2]>,
    /// Per-teaching bag-of-words over the vocabulary.
    pub bows: Vec<Vec<u32>>,
    /// Concept assignment per teaching.
    pub concepts: Vec<usize>,
    /// Position-distribution assignment per teaching.
    pub regions: Vec<usize>,
}

impl TeachingLog {
    pub fn new(times: Vec<usize>, positions: Vec<[f64; 2]>, bows: Vec<Vec<u32>>) -> TeachingLog {
        let n = times.len();
        assert_eq!(positions.len(), n);
        assert_eq!(bows.len(), n);
        TeachingLog { times, positions, bows, concepts: vec![0; n], regions: vec![0; n] }
    }

    /// Spread the initial assignments across the truncation levels so the
    /// first sweep starts from a diverse labeling.
    pub fn spread_assignments(&mut self, l: usize, k: usize) {
        for t in 0..self.len() {
            self.concepts[t] = t % l.max(1);
            self.regions[t] = t % k.max(1);
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Unnormalized log-posterior over position distributions for one teaching:
/// `ln N(x | mu_k, Sigma_k) + ln phi_{c}[k]`.
pub fn region_logits(xy: [f64; 2], concept: usize, model: &SpatialConceptModel) -> Vec<f64> {
    model
        .region_loglikes(xy)
        .into_iter()
        .enumerate()
        .map(|(k, ll)| ll + model.phi[concept][k].ln())
        .collect()
}

/// Unnormalized log-posterior over concepts for one teaching:
/// `ln Mult(bow | W_l) + ln phi_l[i] + ln pi[l]`.
pub fn concept_logits(bow: &[u32], region: usize, model: &SpatialConceptModel) -> Vec<f64> {
    (0..model.l())
        .map(|l| {
            let mut lp = model.pi[l].ln() + model.phi[l][region].ln();
            for (w, &count) in bow.iter().enumerate() {
                if count > 0 {
                    lp += count as f64 * model.word_dists[l][w].ln();
                }
            }
            lp
        })
        .collect()
}

/// Draw an index from unnormalized logits; `true` in the flag reports the
/// uniform fallback taken when everything underflowed.
pub fn sample_index(logits: &[f64], rng: &mut impl Rng) -> (usize, bool) {
    match sample_from_log_weights(logits, rng) {
        Some(i) => (i, false),
        None => (rng.random_range(0..logits.len()), true),
    }
}

/// Gibbs draw of the position-distribution index for one teaching.
pub fn sample_region(
    xy: [f64; 2],
    concept: usize,
    model: &SpatialConceptModel,
    rng: &mut impl Rng,
) -> (usize, bool) {
    sample_index(&region_logits(xy, concept, model), rng)
}

/// Gibbs draw of the concept index for one teaching.
pub fn sample_concept(
    bow: &[u32],
    region: usize,
    model: &SpatialConceptModel,
    rng: &mut impl Rng,
) -> (usize, bool) {
    sample_index(&concept_logits(bow, region, model), rng)
}

/// Gibbs draw of all word rows: `W_l ~ Dir(beta0 + counts_l)`.
pub fn sample_word_dists(
    concepts: &[usize],
    bows: &[Vec<u32>],
    beta0: f64,
    l: usize,
    vocab_size: usize,
    rng: &mut impl Rng,
) -> Vec<Vec<f64>> {
    let mut counts = vec![vec![0.0f64; vocab_size]; l];
    for (t, bow) in bows.iter().enumerate() {
        let row = &mut counts[concepts[t]];
        for (w, &c) in bow.iter().enumerate() {
            row[w] += c as f64;
        }
    }
    counts
        .into_iter()
        .map(|row| {
            let alphas: Vec<f64> = row.iter().map(|c| c + beta0).collect();
            sample_dirichlet(&alphas, rng)
        })
        .collect()
}

/// Gibbs draw of all position distributions from their NIW posteriors;
/// components with no data draw from the prior.
pub fn sample_positions(
    regions: &[usize],
    positions: &[[f64; 2]],
    hyper: &Hyperparameters,
    rng: &mut impl Rng,
) -> Result<(Vec<[f64; 2]>, Vec<Mat2>)> {
    let prior = hyper.niw_prior();
    let mut mu = Vec::with_capacity(hyper.k);
    let mut sigma = Vec::with_capacity(hyper.k);
    for k in 0..hyper.k {
        let points: Vec<[f64; 2]> = regions
            .iter()
            .zip(positions)
            .filter(|(r, _)| **r == k)
            .map(|(_, p)| *p)
            .collect();
        let post = niw_posterior(&prior, &points);
        let (m, s) = sample_niw(&post, rng)?;
        mu.push(m);
        sigma.push(s);
    }
    Ok((mu, sigma))
}

/// Gibbs draw of the concept weights: `Dir(gamma/L + occupancy)`.
pub fn sample_concept_weights(concepts: &[usize], gamma: f64, l: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut alphas = vec![gamma / l as f64; l];
    for &c in concepts {
        alphas[c] += 1.0;
    }
    sample_dirichlet(&alphas, rng)
}

/// Gibbs draw of every concept's region mixture: `Dir(alpha/K + counts)`.
pub fn sample_region_mixtures(
    concepts: &[usize],
    regions: &[usize],
    alpha: f64,
    l: usize,
    k: usize,
    rng: &mut impl Rng,
) -> Vec<Vec<f64>> {
    let mut counts = vec![vec![0.0f64; k]; l];
    for (c, r) in concepts.iter().zip(regions) {
        counts[*c][*r] += 1.0;
    }
    counts
        .into_iter()
        .map(|row| {
            let alphas: Vec<f64> = row.iter().map(|c| c + alpha / k as f64).collect();
            sample_dirichlet(&alphas, rng)
        })
        .collect()
}

/// Inputs for resampling one pose given its neighbors.
pub struct PoseNeighborhood<'a> {
    pub current: Pose,
    pub prev: Option<(&'a Pose, &'a crate::world::Control)>,
    pub next: Option<(&'a Pose, &'a crate::world::Control)>,
    pub scan: &'a crate::world::SensorScan,
    /// Concept factor, present at teaching times: (region index, concept).
    pub teaching: Option<(usize, usize)>,
}

/// Importance draw of one pose in the trajectory given its neighbors and,
/// at teaching times, the concept position term.
///
/// Candidates come from the forward motion prior; the remaining factors
/// (backward motion, scan likelihood, normalized region posterior) weight
/// them. Zero total weight keeps the current pose and reports it.
pub fn resample_pose(
    inputs: &PoseNeighborhood<'_>,
    model: &SpatialConceptModel,
    field: &LikelihoodField,
    motion: &MotionNoise,
    candidates: usize,
    rng: &mut impl Rng,
) -> (Pose, bool) {
    let mut cands = Vec::with_capacity(candidates);
    match inputs.prev {
        Some((prev, control)) => {
            for _ in 0..candidates {
                cands.push(crate::mcl::sample_motion_model(control, prev, motion, rng));
            }
        }
        None => {
            // No predecessor: perturb the current pose instead.
            let jitter = MotionNoise {
                sigma_rot1: motion.sigma_rot1.max(0.01),
                sigma_trans: motion.sigma_trans.max(1.0),
                sigma_rot2: motion.sigma_rot2.max(0.01),
            };
            for _ in 0..candidates {
                cands.push(crate::mcl::sample_motion_model(
                    &crate::world::Control::ZERO,
                    &inputs.current,
                    &jitter,
                    rng,
                ));
            }
        }
    }

    let logw: Vec<f64> = cands
        .iter()
        .map(|pose| {
            let mut lw = field.log_likelihood(inputs.scan, pose);
            if let Some((next, control)) = inputs.next {
                lw += motion_log_density(pose, next, control, motion);
            }
            if let Some((region, concept)) = inputs.teaching {
                // Unnormalized region factor, as in the assignment draw:
                // the normalizer over regions is dropped.
                lw += gaussian2_logpdf(pose.xy(), model.mu[region], &model.sigma[region])
                    + model.phi[concept][region].ln();
            }
            lw
        })
        .collect();

    match sample_from_log_weights(&logw, rng) {
        Some(i) => (cands[i], false),
        None => (inputs.current, true),
    }
}

/// Context for the optional trajectory-resampling pass of the learner.
pub struct SampleXContext<'a> {
    pub trajectory: &'a TrajectoryLog,
    pub field: &'a LikelihoodField,
    pub motion: &'a MotionNoise,
    /// Initial per-step pose estimates, refined across iterations.
    pub initial_poses: Vec<Pose>,
    pub candidates: usize,
}

/// Learner knobs.
#[derive(Default)]
pub struct GibbsOptions<'a> {
    /// When set, every iteration also resamples the full trajectory and
    /// refreshes teaching positions from it.
    pub sample_x: Option<SampleXContext<'a>>,
}

/// Learner output.
#[derive(Debug, Clone)]
pub struct GibbsResult {
    pub model: SpatialConceptModel,
    pub log: TeachingLog,
    /// Complete-data joint log-probability after each iteration.
    pub joint_trace: Vec<f64>,
    /// Draws that fell back to uniform after underflow.
    pub degenerate_draws: usize,
}

/// Gibbs-sample the spatial concept model from a teaching log.
///
/// Each iteration cycles region assignments, concept assignments, word
/// rows, position distributions, concept weights, and region mixtures, plus
/// the optional trajectory pass.
pub fn gibbs_learn(
    mut log: TeachingLog,
    vocabulary: Vec<Word>,
    hyper: &Hyperparameters,
    iterations: usize,
    mut options: GibbsOptions<'_>,
    rng: &mut impl Rng,
) -> Result<GibbsResult> {
    if log.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    hyper.validate()?;
    log.spread_assignments(hyper.l, hyper.k);
    let mut model = SpatialConceptModel::init_from_prior(hyper, vocabulary, rng)?;
    let mut degenerate = 0usize;
    let mut joint_trace = Vec::with_capacity(iterations);

    // Trajectory state for the optional pass.
    let mut poses: Option<Vec<Pose>> = options.sample_x.as_ref().map(|c| c.initial_poses.clone());

    for _ in 0..iterations {
        for t in 0..log.len() {
            let (region, fell_back) = sample_region(log.positions[t], log.concepts[t], &model, rng);
            log.regions[t] = region;
            degenerate += fell_back as usize;
        }
        for t in 0..log.len() {
            let (concept, fell_back) = sample_concept(&log.bows[t], log.regions[t], &model, rng);
            log.concepts[t] = concept;
            degenerate += fell_back as usize;
        }
        model.word_dists = sample_word_dists(
            &log.concepts,
            &log.bows,
            hyper.beta0,
            hyper.l,
            model.vocabulary.len().max(1),
            rng,
        );
        let (mu, sigma) = sample_positions(&log.regions, &log.positions, hyper, rng)?;
        model.mu = mu;
        model.sigma = sigma;
        model.pi = sample_concept_weights(&log.concepts, hyper.gamma, hyper.l, rng);
        model.phi =
            sample_region_mixtures(&log.concepts, &log.regions, hyper.alpha, hyper.l, hyper.k, rng);

        if let (Some(ctx), Some(xs)) = (options.sample_x.as_mut(), poses.as_mut()) {
            resample_trajectory(ctx, xs, &log, &model, &mut degenerate, rng);
            for (idx, &t) in log.times.iter().enumerate() {
                log.positions[idx] = xs[t].xy();
            }
        }

        joint_trace.push(joint_logprob(&log, &model, hyper));
    }

    Ok(GibbsResult { model, log, joint_trace, degenerate_draws: degenerate })
}

fn resample_trajectory(
    ctx: &SampleXContext<'_>,
    poses: &mut [Pose],
    log: &TeachingLog,
    model: &SpatialConceptModel,
    degenerate: &mut usize,
    rng: &mut impl Rng,
) {
    let steps = &ctx.trajectory.steps;
    for t in 0..poses.len() {
        let prev = if t > 0 {
            steps[t].odom.as_ref().map(|u| (&poses[t - 1], u))
        } else {
            None
        };
        // Split borrow: the next pose is read-only.
        let next_pose = if t + 1 < poses.len() { Some(poses[t + 1]) } else { None };
        let next_control = if t + 1 < steps.len() { steps[t + 1].odom.as_ref() } else { None };
        let teaching = log
            .times
            .iter()
            .position(|&tt| tt == t)
            .map(|idx| (log.regions[idx], log.concepts[idx]));
        let neighborhood = PoseNeighborhood {
            current: poses[t],
            prev: prev.map(|(p, u)| (&*p, u)),
            next: match (&next_pose, next_control) {
                (Some(np), Some(u)) => Some((np, u)),
                _ => None,
            },
            scan: &steps[t].scan,
            teaching,
        };
        let (pose, fell_back) =
            resample_pose(&neighborhood, model, ctx.field, ctx.motion, ctx.candidates, rng);
        poses[t] = pose;
        *degenerate += fell_back as usize;
    }
}

/// Complete-data joint log-probability: assignments, parameters, and the
/// teaching data under them.
pub fn joint_logprob(log: &TeachingLog, model: &SpatialConceptModel, hyper: &Hyperparameters) -> f64 {
    let mut total = 0.0;
    for t in 0..log.len() {
        let c = log.concepts[t];
        let r = log.regions[t];
        total += model.pi[c].ln();
        total += model.phi[c][r].ln();
        total += gaussian2_logpdf(log.positions[t], model.mu[r], &model.sigma[r]);
        for (w, &count) in log.bows[t].iter().enumerate() {
            if count > 0 {
                total += count as f64 * model.word_dists[c][w].ln();
            }
        }
    }
    total += dirichlet_logpdf(&model.pi, hyper.gamma / hyper.l as f64);
    for row in &model.phi {
        total += dirichlet_logpdf(row, hyper.alpha / hyper.k as f64);
    }
    for row in &model.word_dists {
        total += dirichlet_logpdf(row, hyper.beta0);
    }
    let prior = hyper.niw_prior();
    for k in 0..model.k() {
        total += niw_logpdf(&model.mu[k], &model.sigma[k], &prior);
    }
    total
}

/// Log-density of a symmetric Dirichlet at `x`.
fn dirichlet_logpdf(x: &[f64], alpha: f64) -> f64 {
    let k = x.len() as f64;
    let norm = ln_gamma(alpha * k) - k * ln_gamma(alpha);
    norm + x.iter().map(|&p| (alpha - 1.0) * p.max(1e-300).ln()).sum::<f64>()
}

/// Log-density of a 2-D normal-inverse-Wishart at `(mu, Sigma)`.
fn niw_logpdf(mu: &[f64; 2], sigma: &Mat2, p: &NiwParams) -> f64 {
    let d = 2.0;
    let det_v = p.v.det();
    let det_s = sigma.det();
    if det_s <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let inv_s = sigma.inverse().expect("SPD sigma");
    // ln IW(Sigma | V, nu)
    let ln_gamma2 = 0.5 * std::f64::consts::PI.ln() + ln_gamma(p.nu / 2.0) + ln_gamma((p.nu - 1.0) / 2.0);
    let trace = p.v.m[0][0] * inv_s.m[0][0]
        + p.v.m[0][1] * inv_s.m[1][0]
        + p.v.m[1][0] * inv_s.m[0][1]
        + p.v.m[1][1] * inv_s.m[1][1];
    let ln_iw = (p.nu / 2.0) * det_v.ln()
        - (p.nu * d / 2.0) * std::f64::consts::LN_2
        - ln_gamma2
        - ((p.nu + d + 1.0) / 2.0) * det_s.ln()
        - 0.5 * trace;
    // ln N(mu | m, Sigma / kappa)
    let ln_n = gaussian2_logpdf(*mu, p.m, &sigma.scale(1.0 / p.kappa));
    ln_iw + ln_n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::log_sum_exp;
    use crate::sampling::seeded_stream;

    fn tiny_model(l: usize, k: usize, vocab: &[&str]) -> SpatialConceptModel {
        let v = vocab.len();
        SpatialConceptModel {
            pi: vec![1.0 / l as f64; l],
            phi: vec![vec![1.0 / k as f64; k]; l],
            word_dists: vec![vec![1.0 / v as f64; v]; l],
            mu: (0..k).map(|i| [100.0 * i as f64, 0.0]).collect(),
            sigma: vec![Mat2::diag(100.0, 100.0); k],
            vocabulary: vocab.iter().map(|s| Word(vec![s.to_string()])).collect(),
        }
    }

    #[test]
    fn region_sampling_symmetric_case_is_even() {
        // Two identical-covariance Gaussians equidistant from the query:
        // probabilities must be exactly half each.
        let mut model = tiny_model(1, 2, &["a"]);
        model.mu = vec![[0.0, 0.0], [100.0, 0.0]];
        let logits = region_logits([50.0, 0.0], 0, &model);
        let norm = log_sum_exp(&logits);
        let p0 = (logits[0] - norm).exp();
        assert!((p0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn region_sampling_respects_point_mass_mixture() {
        let mut model = tiny_model(1, 3, &["a"]);
        model.phi[0] = vec![1.0, 0.0, 0.0];
        let mut rng = seeded_stream(0, 0);
        for _ in 0..50 {
            let (k, _) = sample_region([120.0, 30.0], 0, &model, &mut rng);
            assert_eq!(k, 0);
        }
    }

    #[test]
    fn region_sampling_frequencies_match_direct_normalization() {
        let mut model = tiny_model(1, 3, &["a"]);
        model.mu = vec![[0.0, 0.0], [60.0, 0.0], [0.0, 80.0]];
        model.sigma = vec![
            Mat2::diag(400.0, 400.0),
            Mat2::diag(900.0, 400.0),
            Mat2::diag(400.0, 900.0),
        ];
        model.phi[0] = vec![0.5, 0.3, 0.2];
        let xy = [30.0, 30.0];

        // Oracle: normalize the products directly.
        let probs: Vec<f64> = {
            let raw: Vec<f64> = (0..3)
                .map(|k| gaussian2_logpdf(xy, model.mu[k], &model.sigma[k]).exp() * model.phi[0][k])
                .collect();
            let z: f64 = raw.iter().sum();
            raw.iter().map(|r| r / z).collect()
        };

        let mut rng = seeded_stream(1, 0);
        let n = 10_000usize;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let (k, _) = sample_region(xy, 0, &model, &mut rng);
            counts[k] += 1;
        }
        let tv: f64 = (0..3)
            .map(|k| (counts[k] as f64 / n as f64 - probs[k]).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.02, "tv = {tv}");
    }

    #[test]
    fn concept_sampling_empty_bow_uniform_prior_is_uniform() {
        let model = tiny_model(4, 2, &["a", "b"]);
        let logits = concept_logits(&[0, 0], 0, &model);
        let norm = log_sum_exp(&logits);
        for l in &logits {
            assert!(((l - norm).exp() - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn concept_sampling_single_word_ratio() {
        let mut model = tiny_model(2, 2, &["a", "b"]);
        model.word_dists = vec![vec![0.9, 0.1], vec![0.1, 0.9]];
        let logits = concept_logits(&[1, 0], 0, &model);
        let norm = log_sum_exp(&logits);
        let p0 = (logits[0] - norm).exp();
        assert!((p0 - 0.9).abs() < 1e-12);
    }

    #[test]
    fn concept_sampling_frequencies_match_enumeration() {
        let mut model = tiny_model(3, 2, &["a", "b", "c"]);
        model.pi = vec![0.5, 0.25, 0.25];
        model.phi = vec![vec![0.7, 0.3], vec![0.4, 0.6], vec![0.5, 0.5]];
        model.word_dists = vec![
            vec![0.6, 0.3, 0.1],
            vec![0.2, 0.5, 0.3],
            vec![0.1, 0.2, 0.7],
        ];
        let bow = [2u32, 1, 0];
        let region = 1usize;

        let probs: Vec<f64> = {
            let raw: Vec<f64> = (0..3)
                .map(|l| {
                    model.pi[l]
                        * model.phi[l][region]
                        * model.word_dists[l][0].powi(2)
                        * model.word_dists[l][1]
                })
                .collect();
            let z: f64 = raw.iter().sum();
            raw.iter().map(|r| r / z).collect()
        };

        let mut rng = seeded_stream(2, 0);
        let n = 10_000usize;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let (l, _) = sample_concept(&bow, region, &model, &mut rng);
            counts[l] += 1;
        }
        let tv: f64 = (0..3)
            .map(|l| (counts[l] as f64 / n as f64 - probs[l]).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.02, "tv = {tv}");
    }

    #[test]
    fn word_rows_from_prior_have_symmetric_mean() {
        let mut rng = seeded_stream(3, 0);
        let n = 10_000usize;
        let mut sum = [0.0f64; 2];
        for _ in 0..n {
            let rows = sample_word_dists(&[], &[], 0.5, 1, 2, &mut rng);
            sum[0] += rows[0][0];
            sum[1] += rows[0][1];
        }
        assert!((sum[0] / n as f64 - 0.5).abs() < 0.01);
        assert!((sum[1] / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn word_rows_posterior_mean_matches_dirichlet_formula() {
        // Counts (10, 0) under concept 0 with beta0 = 0.5: the posterior
        // mean is (10.5/11, 0.5/11).
        let mut rng = seeded_stream(4, 0);
        let n = 20_000usize;
        let concepts = vec![0usize];
        let bows = vec![vec![10u32, 0]];
        let mut sum = 0.0;
        for _ in 0..n {
            let rows = sample_word_dists(&concepts, &bows, 0.5, 2, 2, &mut rng);
            sum += rows[0][0];
        }
        let mean = sum / n as f64;
        assert!((mean - 10.5 / 11.0).abs() < 0.005, "mean = {mean}");
    }

    #[test]
    fn word_rows_are_independent_across_concepts() {
        // Data assigned only to concept 1 leaves concept 0 on its prior.
        let mut rng = seeded_stream(5, 0);
        let n = 20_000usize;
        let concepts = vec![1usize];
        let bows = vec![vec![8u32, 0]];
        let mut sum0 = 0.0;
        for _ in 0..n {
            let rows = sample_word_dists(&concepts, &bows, 0.5, 2, 2, &mut rng);
            sum0 += rows[0][0];
        }
        assert!((sum0 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn niw_posterior_empty_is_prior() {
        let prior = Hyperparameters::default().niw_prior();
        let post = niw_posterior(&prior, &[]);
        assert_eq!(post, prior);
    }

    #[test]
    fn niw_posterior_single_point_at_prior_mean() {
        let prior = NiwParams { m: [10.0, -5.0], kappa: 2.0, v: Mat2::diag(100.0, 50.0), nu: 4.0 };
        let post = niw_posterior(&prior, &[[10.0, -5.0]]);
        assert_eq!(post.m, prior.m);
        assert_eq!(post.kappa, 3.0);
        assert_eq!(post.nu, 5.0);
        for i in 0..2 {
            for j in 0..2 {
                assert!((post.v.m[i][j] - prior.v.m[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn niw_posterior_matches_uncentered_oracle() {
        // Independent algebraic route: V_n = V0 + sum x x^T
        //   + kappa0 m0 m0^T - kappa_n m_n m_n^T.
        let prior = NiwParams { m: [3.0, 7.0], kappa: 0.7, v: Mat2::new(30.0, 4.0, 4.0, 12.0), nu: 3.5 };
        let points = [[1.2, -0.5], [4.4, 9.1], [-2.0, 3.3], [0.25, 0.75]];
        let post = niw_posterior(&prior, &points);

        let n = points.len() as f64;
        let kappa_n = prior.kappa + n;
        let nu_n = prior.nu + n;
        let sum: [f64; 2] = points.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
        let m_n = [
            (prior.kappa * prior.m[0] + sum[0]) / kappa_n,
            (prior.kappa * prior.m[1] + sum[1]) / kappa_n,
        ];
        let mut xxt = Mat2::zeros();
        for p in &points {
            xxt = xxt.add(&Mat2::outer(*p));
        }
        let v_n = prior
            .v
            .add(&xxt)
            .add(&Mat2::outer(prior.m).scale(prior.kappa))
            .sub(&Mat2::outer(m_n).scale(kappa_n));

        assert_eq!(post.kappa, kappa_n);
        assert_eq!(post.nu, nu_n);
        for i in 0..2 {
            assert!((post.m[i] - m_n[i]).abs() < 1e-10);
            for j in 0..2 {
                assert!((post.v.m[i][j] - v_n.m[i][j]).abs() < 1e-10, "v[{i}][{j}]");
            }
        }
    }

    #[test]
    fn empty_component_draws_from_prior() {
        let hyper = Hyperparameters {
            kappa0: 1.0,
            nu0: 5.0,
            v0: Mat2::diag(200.0, 200.0),
            m0: [25.0, -10.0],
            l: 1,
            k: 1,
            ..Hyperparameters::default()
        };
        let mut rng = seeded_stream(6, 0);
        let n = 20_000usize;
        let mut sum = [0.0f64; 2];
        for _ in 0..n {
            let (mu, _) = sample_positions(&[], &[], &hyper, &mut rng).unwrap();
            sum[0] += mu[0][0];
            sum[1] += mu[0][1];
        }
        // E[mu] = m0; the spread is wide, so use a generous band.
        assert!((sum[0] / n as f64 - 25.0).abs() < 1.0);
        assert!((sum[1] / n as f64 + 10.0).abs() < 1.0);
    }

    #[test]
    fn position_posterior_concentrates_on_data() {
        let mut rng = seeded_stream(7, 0);
        let hyper = Hyperparameters { l: 1, k: 1, ..Hyperparameters::default() };
        let truth_mean = [120.0, 340.0];
        let points: Vec<[f64; 2]> = (0..200)
            .map(|_| sample_gaussian2(truth_mean, &Mat2::diag(225.0, 225.0), &mut rng).unwrap())
            .collect();
        let regions = vec![0usize; points.len()];
        // Posterior sd of the mean is ~1.1 cm; average 20 draws so the
        // check sits at ~4 sigma of the draw mean.
        let draws = 20;
        let mut mean = [0.0f64; 2];
        for _ in 0..draws {
            let (mu, _) = sample_positions(&regions, &points, &hyper, &mut rng).unwrap();
            mean[0] += mu[0][0];
            mean[1] += mu[0][1];
        }
        mean[0] /= draws as f64;
        mean[1] /= draws as f64;
        // The draws concentrate on the posterior mean (essentially the
        // sample mean), which itself sits within ~3 se of the truth.
        let xbar = [
            points.iter().map(|p| p[0]).sum::<f64>() / points.len() as f64,
            points.iter().map(|p| p[1]).sum::<f64>() / points.len() as f64,
        ];
        assert!((mean[0] - xbar[0]).abs() < 0.8, "x: {} vs {}", mean[0], xbar[0]);
        assert!((mean[1] - xbar[1]).abs() < 0.8, "y: {} vs {}", mean[1], xbar[1]);
        assert!((xbar[0] - truth_mean[0]).abs() < 3.5);
        assert!((xbar[1] - truth_mean[1]).abs() < 3.5);
    }

    #[test]
    fn inverse_wishart_mean_matches_identity() {
        // E[Sigma] = V / (nu - 3) for d = 2 when nu > 3.
        let v = Mat2::new(50.0, 10.0, 10.0, 80.0);
        let nu = 7.0;
        let mut rng = seeded_stream(8, 0);
        let n = 30_000usize;
        let mut sum = Mat2::zeros();
        for _ in 0..n {
            let s = sample_inverse_wishart(&v, nu, &mut rng).unwrap();
            sum = sum.add(&s);
        }
        let mean = sum.scale(1.0 / n as f64);
        let expected = v.scale(1.0 / (nu - 3.0));
        for i in 0..2 {
            for j in 0..2 {
                let rel = (mean.m[i][j] - expected.m[i][j]).abs() / expected.m[i][j].abs().max(1.0);
                assert!(rel < 0.05, "[{i}][{j}] {} vs {}", mean.m[i][j], expected.m[i][j]);
            }
        }
    }

    #[test]
    fn concept_weight_posterior_mean_matches_formula() {
        // Counts (3, 1, 0, 0) with gamma = 8, L = 4: mean of component 0 is
        // (3 + 2) / (4 + 8).
        let mut rng = seeded_stream(9, 0);
        let concepts = vec![0, 0, 0, 1];
        let n = 20_000usize;
        let mut sum = 0.0;
        for _ in 0..n {
            let pi = sample_concept_weights(&concepts, 8.0, 4, &mut rng);
            sum += pi[0];
        }
        let mean = sum / n as f64;
        let expected = (3.0 + 2.0) / 12.0;
        assert!((mean - expected).abs() < 0.005, "mean = {mean}");
    }

    #[test]
    fn unused_region_mixture_row_keeps_prior_mean() {
        let mut rng = seeded_stream(10, 0);
        let n = 20_000usize;
        let mut sum = 0.0;
        for _ in 0..n {
            let phi = sample_region_mixtures(&[0], &[1], 1.5, 2, 4, &mut rng);
            sum += phi[1][0]; // concept 1 never used
        }
        assert!((sum / n as f64 - 0.25).abs() < 0.01);
    }

    #[test]
    fn gibbs_single_teaching_smoke() {
        let log = TeachingLog::new(vec![5], vec![[100.0, 100.0]], vec![vec![1, 0]]);
        let vocab = vec![Word(vec!["a".into()]), Word(vec!["b".into()])];
        let hyper = Hyperparameters { l: 3, k: 3, ..Hyperparameters::default() };
        let mut rng = seeded_stream(11, 0);
        let result = gibbs_learn(log, vocab, &hyper, 10, GibbsOptions::default(), &mut rng).unwrap();
        result.model.validate().unwrap();
        assert!(result.joint_trace.iter().all(|v| v.is_finite()));
        assert_eq!(result.joint_trace.len(), 10);
        assert!(result.log.concepts[0] < 3);
    }

    #[test]
    fn weak_limit_single_component_matches_niw_analytics() {
        // With L = K = 1 the position draw must come from the NIW posterior
        // of all the data; check first moments against the analytic m_n.
        let positions: Vec<[f64; 2]> = vec![[10.0, 20.0], [14.0, 18.0], [6.0, 25.0], [12.0, 21.0]];
        let hyper = Hyperparameters { l: 1, k: 1, ..Hyperparameters::default() };
        let post = niw_posterior(&hyper.niw_prior(), &positions);
        let mut rng = seeded_stream(12, 0);
        let n = 5_000usize;
        let mut sum = [0.0f64; 2];
        for _ in 0..n {
            let log = TeachingLog::new(
                vec![0, 1, 2, 3],
                positions.clone(),
                vec![vec![1], vec![1], vec![1], vec![1]],
            );
            let result = gibbs_learn(
                log,
                vec![Word(vec!["a".into()])],
                &hyper,
                1,
                GibbsOptions::default(),
                &mut rng,
            )
            .unwrap();
            sum[0] += result.model.mu[0][0];
            sum[1] += result.model.mu[0][1];
        }
        // E[mu] = m_n of the full-data posterior.
        assert!((sum[0] / n as f64 - post.m[0]).abs() < 0.5, "{} vs {}", sum[0] / n as f64, post.m[0]);
        assert!((sum[1] / n as f64 - post.m[1]).abs() < 0.5);
    }

    #[test]
    fn separable_clusters_are_recovered() {
        // Two far-apart places with disjoint two-word vocabularies.
        let mut rng = seeded_stream(13, 0);
        let mut times = Vec::new();
        let mut positions = Vec::new();
        let mut bows = Vec::new();
        let mut truth = Vec::new();
        for t in 0..40 {
            times.push(t);
            if t % 2 == 0 {
                positions.push([
                    100.0 + 10.0 * rng.random::<f64>(),
                    100.0 + 10.0 * rng.random::<f64>(),
                ]);
                bows.push(vec![1, 1, 0, 0]);
                truth.push(0usize);
            } else {
                positions.push([
                    700.0 + 10.0 * rng.random::<f64>(),
                    900.0 + 10.0 * rng.random::<f64>(),
                ]);
                bows.push(vec![0, 0, 1, 1]);
                truth.push(1usize);
            }
        }
        let vocab: Vec<Word> = ["a", "b", "c", "d"].iter().map(|s| Word(vec![s.to_string()])).collect();
        let hyper = Hyperparameters { l: 10, k: 10, ..Hyperparameters::default() };

        let mut wins = 0;
        for seed in 0..10u64 {
            let mut chain_rng = seeded_stream(seed, 40);
            let log = TeachingLog::new(times.clone(), positions.clone(), bows.clone());
            let result =
                gibbs_learn(log, vocab.clone(), &hyper, 100, GibbsOptions::default(), &mut chain_rng)
                    .unwrap();
            let ari = crate::metrics::ari(
                &truth.iter().map(|&c| c as i64).collect::<Vec<_>>(),
                &result.log.concepts.iter().map(|&c| c as i64).collect::<Vec<_>>(),
            )
            .unwrap();
            if ari >= 0.9 {
                wins += 1;
            }
        }
        assert!(wins >= 9, "ARI >= 0.9 in {wins}/10 seeds");
    }

    #[test]
    fn joint_logprob_improves_on_separable_data() {
        // Three clusters with overlapping function words and moderate
        // spatial spread: sorting them out takes a number of sweeps, so the
        // late-iteration joint should clearly beat the early one.
        let mut rng = seeded_stream(14, 0);
        let centers = [[150.0, 150.0], [350.0, 800.0], [420.0, 200.0]];
        let mut times = Vec::new();
        let mut positions = Vec::new();
        let mut bows = Vec::new();
        for t in 0..45usize {
            let c = t % 3;
            times.push(t);
            let jitter = sample_gaussian2([0.0, 0.0], &Mat2::diag(900.0, 900.0), &mut rng).unwrap();
            positions.push([centers[c][0] + jitter[0], centers[c][1] + jitter[1]]);
            // Own word twice, shared filler word once.
            let mut bow = vec![0u32; 4];
            bow[c] = 2;
            bow[3] = 1;
            bows.push(bow);
        }
        let vocab: Vec<Word> =
            ["a", "b", "c", "zz"].iter().map(|s| Word(vec![s.to_string()])).collect();
        let hyper = Hyperparameters { l: 15, k: 15, ..Hyperparameters::default() };
        let log = TeachingLog::new(times, positions, bows);
        let result = gibbs_learn(log, vocab, &hyper, 100, GibbsOptions::default(), &mut rng).unwrap();
        let median = |xs: &[f64]| {
            let mut v = xs.to_vec();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[v.len() / 2]
        };
        let early = median(&result.joint_trace[0..10]);
        let late = median(&result.joint_trace[49..100]);
        assert!(late > early, "late {late} vs early {early}");
        assert!(result.joint_trace.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn pose_resampling_flat_factors_follows_motion_prior() {
        use crate::grid::{CellState, OccupancyGrid};
        use crate::mcl::SensorModelParams;
        use crate::world::{Control, SensorScan};
        // Flat sensor (uniform-only mixture) and no concept factor: draws
        // must follow the forward motion prior.
        let grid = OccupancyGrid::filled(100, 100, 10.0, CellState::Free);
        let params = SensorModelParams { z_hit: 0.0, z_random: 1.0, z_max: 0.0, sigma_hit: 10.0, floor_log: -30.0 };
        let field = LikelihoodField::new(&grid, params);
        let model = tiny_model(1, 1, &["a"]);
        let motion = MotionNoise { sigma_rot1: 0.0, sigma_trans: 8.0, sigma_rot2: 0.0 };
        let prev = Pose::new(400.0, 500.0, 0.0);
        let control = Control::new(0.0, 50.0, 0.0);
        let scan = SensorScan { angles: vec![0.0], ranges: vec![500.0], max_range: 500.0 };
        let inputs = PoseNeighborhood {
            current: prev,
            prev: Some((&prev, &control)),
            next: None,
            scan: &scan,
            teaching: None,
        };
        let mut rng = seeded_stream(15, 0);
        let n = 10_000usize;
        let mut xs = Vec::with_capacity(n);
        for _ in 0..n {
            let (p, fell_back) = resample_pose(&inputs, &model, &field, &motion, 30, &mut rng);
            assert!(!fell_back);
            xs.push(p.x);
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((mean - 450.0).abs() < 0.5, "mean = {mean}");
        assert!((sd - 8.0).abs() < 0.4, "sd = {sd}");
    }

    #[test]
    fn pose_resampling_concentrates_on_peaked_concept() {
        use crate::grid::{CellState, OccupancyGrid};
        use crate::mcl::SensorModelParams;
        use crate::world::{Control, SensorScan};
        let grid = OccupancyGrid::filled(100, 100, 10.0, CellState::Free);
        let params = SensorModelParams { z_hit: 0.0, z_random: 1.0, z_max: 0.0, sigma_hit: 10.0, floor_log: -30.0 };
        let field = LikelihoodField::new(&grid, params);
        let mut model = tiny_model(1, 2, &["a"]);
        model.mu = vec![[430.0, 500.0], [470.0, 500.0]];
        model.sigma = vec![Mat2::diag(4.0, 4.0), Mat2::diag(4.0, 4.0)];
        let motion = MotionNoise { sigma_rot1: 0.0, sigma_trans: 20.0, sigma_rot2: 0.0 };
        let prev = Pose::new(400.0, 500.0, 0.0);
        let control = Control::new(0.0, 50.0, 0.0);
        let scan = SensorScan { angles: vec![0.0], ranges: vec![500.0], max_range: 500.0 };
        let inputs = PoseNeighborhood {
            current: prev,
            prev: Some((&prev, &control)),
            next: None,
            scan: &scan,
            teaching: Some((0, 0)), // region 0 at (430, 500)
        };
        let mut rng = seeded_stream(16, 0);
        let mut near = 0usize;
        let n = 2_000usize;
        for _ in 0..n {
            let (p, _) = resample_pose(&inputs, &model, &field, &motion, 50, &mut rng);
            if (p.x - 430.0).abs() < 15.0 {
                near += 1;
            }
        }
        assert!(near as f64 / n as f64 > 0.9, "near = {near}/{n}");
    }

    #[test]
    fn pose_resampling_gaussian_product_toy() {
        use crate::grid::{CellState, OccupancyGrid};
        use crate::mcl::SensorModelParams;
        use crate::world::{Control, SensorScan};
        // 1-D collapse: motion prior N(450, 10^2) times a concept factor
        // N(470, 15^2) on x. With a flat sensor the posterior over x is the
        // Gaussian product: mean 456.15, sd 8.32.
        let grid = OccupancyGrid::filled(200, 100, 10.0, CellState::Free);
        let params = SensorModelParams { z_hit: 0.0, z_random: 1.0, z_max: 0.0, sigma_hit: 10.0, floor_log: -30.0 };
        let field = LikelihoodField::new(&grid, params);
        let mut model = tiny_model(1, 1, &["a"]);
        model.mu = vec![[470.0, 500.0]];
        // Huge y variance isolates the x factor.
        model.sigma = vec![Mat2::diag(225.0, 1e8)];
        let motion = MotionNoise { sigma_rot1: 0.0, sigma_trans: 10.0, sigma_rot2: 0.0 };
        let prev = Pose::new(400.0, 500.0, 0.0);
        let control = Control::new(0.0, 50.0, 0.0);
        let scan = SensorScan { angles: vec![0.0], ranges: vec![900.0], max_range: 900.0 };
        let inputs = PoseNeighborhood {
            current: prev,
            prev: Some((&prev, &control)),
            next: None,
            scan: &scan,
            teaching: Some((0, 0)),
        };
        let mut rng = seeded_stream(17, 0);
        let n = 20_000usize;
        let mut xs = Vec::with_capacity(n);
        for _ in 0..n {
            let (p, _) = resample_pose(&inputs, &model, &field, &motion, 60, &mut rng);
            xs.push(p.x);
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let prec = 1.0f64 / 100.0 + 1.0 / 225.0;
        let expected_mean = (450.0 / 100.0 + 470.0 / 225.0) / prec;
        let expected_sd = (1.0 / prec).sqrt();
        assert!((mean - expected_mean).abs() < 0.35, "mean {mean} vs {expected_mean}");
        assert!((sd - expected_sd).abs() < 0.35, "sd {sd} vs {expected_sd}");
    }
}
