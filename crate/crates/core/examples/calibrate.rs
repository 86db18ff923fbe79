use toponym::concepts::{gibbs_learn, GibbsOptions, Hyperparameters, TeachingLog};
use toponym::config::ExperimentConfig;
use toponym::mcl::{LikelihoodField, MclConfig, ParticleSet};
use toponym::metrics::{ari, dpm_word_clustering, sentence_par, DpmHyper};
use toponym::pipeline::{build_inventory, load_scenario};
use toponym::sampling::seeded_stream;
use toponym::segment::{segment_corpus, Method, SegmentOptions};
use toponym::speech::{corrupt_to_lattice, TemplateSet, Utterance, Word};
use toponym::world::run_scenario;

fn env_f(name: &str, default: f64) -> f64 {
    std::env::var(name).ok().and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() {
    let tau = env_f("TAU", 0.33);
    let p_cont = env_f("PC", 0.7);
    let chains = env_f("CHAINS", 10.0) as usize;
    let beam = env_f("BEAM", 5.0) as usize;
    let p_del = env_f("PDEL", 0.02);
    let p_ins = env_f("PINS", 0.02);
    let corpus_seed = env_f("SEED", 0.0) as u64;

    let mut cfg = ExperimentConfig::room();
    cfg.channel.band_tau = tau;
    cfg.channel.p_delete = p_del;
    cfg.channel.p_insert = p_ins;
    cfg.channel.beam_width = beam;

    let templates = TemplateSet::standard();
    let (scenario, grid) = load_scenario(&cfg).unwrap();
    let inventory = build_inventory(&cfg, &scenario, &templates);

    // Simulate + corrupt once.
    let mut sim_rng = seeded_stream(corpus_seed, 0);
    let log = run_scenario(&scenario, &grid, &templates, &mut sim_rng).unwrap();
    let mut chan_rng = seeded_stream(corpus_seed, 1);
    let mut lattices = Vec::new();
    let mut truth_words: Vec<Vec<Word>> = Vec::new();
    let mut places = Vec::new();
    let mut times = Vec::new();
    for step in log.teaching_steps() {
        let teaching = step.teaching.as_ref().unwrap();
        let utt = Utterance::from_words(&teaching.words, &teaching.place);
        let (lat, _) = corrupt_to_lattice(&utt, &inventory, beam, &mut chan_rng);
        lattices.push(lat);
        truth_words.push(teaching.words.clone());
        places.push(teaching.place.clone());
        times.push(step.t);
    }
    let mut place_ids: Vec<String> = places.clone();
    place_ids.sort();
    place_ids.dedup();
    let truth_labels: Vec<i64> = places
        .iter()
        .map(|p| place_ids.binary_search(p).unwrap() as i64)
        .collect();

    // Teaching positions once.
    let field = LikelihoodField::new(&grid, cfg.localization.sensor);
    let mcl_cfg = MclConfig {
        motion: scenario.noise.motion,
        sensor: cfg.localization.sensor,
        ess_ratio: 0.5,
    };
    let mut mcl_rng = seeded_stream(corpus_seed, 3);
    let init = ParticleSet::at_pose(log.steps[0].truth, cfg.localization.particles);
    let mut history = toponym::mcl::PoseHistory::unbounded();
    history.push_initial(&init);
    let mut ps = init;
    for step in log.steps.iter().skip(1) {
        let outcome = toponym::mcl::mcl_step(&ps, step.odom.as_ref().unwrap(), &step.scan, &field, &mcl_cfg, &mut mcl_rng);
        history.push_step(&outcome);
        ps = outcome.set;
    }
    let positions: Vec<[f64; 2]> = times
        .iter()
        .map(|&t| history.smoothed_mean_at(t, 100).unwrap().xy())
        .collect();

    let hyper = Hyperparameters::default();
    for method in [Method::Lattice, Method::OneBest, Method::Syllables] {
        let mut pars = Vec::new();
        let mut aris = Vec::new();
        let mut dpms = Vec::new();
        let mut name_pars = Vec::new();
        for chain in 0..chains {
            let seg_opts = SegmentOptions {
                iterations: 100,
                p_cont,
                inventory_size: Some(inventory.len()),
                acoustic_scale: env_f("ASCALE", 1.0),
                ..SegmentOptions::default()
            };
            let mut seg_rng = seeded_stream(chain as u64, 4);
            let seg = segment_corpus(&lattices, method, &seg_opts, &mut seg_rng).unwrap();
            let par_mean: f64 = seg
                .utterances
                .iter()
                .zip(&truth_words)
                .map(|(u, t)| sentence_par(t, &u.words).unwrap())
                .sum::<f64>()
                / lattices.len() as f64;
            pars.push(par_mean);

            let vocab = seg.vocabulary.clone();
            let bows: Vec<Vec<u32>> = seg
                .utterances
                .iter()
                .map(|u| {
                    let mut bow = vec![0u32; vocab.len()];
                    for w in &u.words {
                        bow[vocab.binary_search(w).unwrap()] += 1;
                    }
                    bow
                })
                .collect();
            let tlog = TeachingLog::new(times.clone(), positions.clone(), bows.clone());
            let mut grng = seeded_stream(chain as u64, 5);
            let result = gibbs_learn(tlog, vocab, &hyper, 100, GibbsOptions::default(), &mut grng).unwrap();
            let labels: Vec<i64> = result.log.concepts.iter().map(|&c| c as i64).collect();
            aris.push(ari(&truth_labels, &labels).unwrap());

            // Best-name accuracy per physical spot.
            let mut spots: std::collections::BTreeMap<(String, i64, i64), (toponym::geom::Pose, Vec<Word>)> =
                std::collections::BTreeMap::new();
            for (i, step_t) in times.iter().enumerate() {
                let truth = log.steps[*step_t].truth;
                let key = (places[i].clone(), (truth.x * 10.0) as i64, (truth.y * 10.0) as i64);
                let name = truth_words[i]
                    .iter()
                    .max_by_key(|w| w.len())
                    .unwrap()
                    .clone();
                let entry = spots.entry(key).or_insert((truth, Vec::new()));
                if !entry.1.contains(&name) {
                    entry.1.push(name);
                }
            }
            let mut name_par_sum = 0.0;
            for (_, (pose, names)) in &spots {
                let best = toponym::speech_mcl::best_name_for_position(pose, &result.model);
                let v = match best {
                    Some(w) => names
                        .iter()
                        .map(|n| toponym::metrics::par(n.syllables(), w.syllables()).unwrap())
                        .fold(f64::NEG_INFINITY, f64::max),
                    None => 0.0,
                };
                name_par_sum += v;
            }
            name_pars.push(name_par_sum / spots.len() as f64);

            let mut drng = seeded_stream(chain as u64, 10);
            let dpm = dpm_word_clustering(
                &bows,
                &DpmHyper { gamma: hyper.gamma, beta0: hyper.beta0, l: hyper.l },
                100,
                &mut drng,
            )
            .unwrap();
            let dlabels: Vec<i64> = dpm.iter().map(|&c| c as i64).collect();
            dpms.push(ari(&truth_labels, &dlabels).unwrap());
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!(
            "method {method}: PAR {:.3}  ARI {:.3}  DPM {:.3}  namePAR {:.3}   (ari chains: {:?})",
            mean(&pars),
            mean(&aris),
            mean(&dpms),
            mean(&name_pars),
            aris.iter().map(|a| (a * 100.0).round() / 100.0).collect::<Vec<_>>()
        );
    }
}
