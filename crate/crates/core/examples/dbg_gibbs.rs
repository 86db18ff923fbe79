use toponym::concepts::*;
use toponym::metrics::ari;
use toponym::sampling::seeded_stream;
use toponym::speech::Word;

fn main() {
    // Idealized room corpus: perfect words, exact positions.
    let spots: [( &str, [f64;2], &[&str]); 8] = [
        ("entrance", [250.0, 60.0], &["geNkaN"]),
        ("tv", [95.0, 255.0], &["terebimae"]),
        ("trash", [405.0, 255.0], &["gomibako"]),
        ("sofa", [255.0, 325.0], &["sofaamae"]),
        ("kitchen", [395.0, 755.0], &["kiqchiN", "daidokoro"]),
        ("bookshelf", [95.0, 700.0], &["hoNdana"]),
        ("table", [150.0, 845.0], &["teeburunoatari"]),
        ("table", [420.0, 585.0], &["teeburunoatari"]),
    ];
    // vocab: 8 names + 8 function words
    let function_words = ["koko", "desu", "dayo", "ga", "wa", "kono", "basho", "namae"];
    let mut vocab: Vec<Word> = Vec::new();
    for (_, _, names) in &spots { for n in *names { vocab.push(Word(vec![n.to_string()])); } }
    for f in &function_words { vocab.push(Word(vec![f.to_string()])); }
    vocab.sort(); vocab.dedup();

    let mut times = Vec::new();
    let mut positions = Vec::new();
    let mut bows = Vec::new();
    let mut truth = Vec::new();
    let mut labels: Vec<&str> = spots.iter().map(|s| s.0).collect();
    labels.sort(); labels.dedup();
    let mut rng = seeded_stream(99, 0);
    use rand::Rng;
    let mut t = 0;
    for rep in 0..12 {
        for (si, (place, at, names)) in spots.iter().enumerate() {
            if rep >= 11 && si % 2 == 0 { continue; } // ~90 teachings
            times.push(t); t += 1;
            positions.push([at[0] + rng.random::<f64>()*6.0-3.0, at[1] + rng.random::<f64>()*6.0-3.0]);
            let name = names[rep % names.len()];
            let mut bow = vec![0u32; vocab.len()];
            bow[vocab.iter().position(|w| w.to_string() == name).unwrap()] += 1;
            // 3 function words per sentence
            for k in 0..3 {
                let f = function_words[(rep*3 + k + si) % function_words.len()];
                bow[vocab.iter().position(|w| w.to_string() == f).unwrap()] += 1;
            }
            bows.push(bow);
            truth.push(labels.iter().position(|l| l == place).unwrap() as i64);
        }
    }
    println!("n = {}", times.len());
    let hyper = Hyperparameters {
        m0: [
            std::env::var("M0X").ok().and_then(|s| s.parse().ok()).unwrap_or(0.0),
            std::env::var("M0Y").ok().and_then(|s| s.parse().ok()).unwrap_or(0.0),
        ],
        ..Hyperparameters::default()
    };
    for chain in 0..6u64 {
        let mut grng = seeded_stream(chain, 5);
        let log = TeachingLog::new(times.clone(), positions.clone(), bows.clone());
        let result = gibbs_learn(log, vocab.clone(), &hyper, 100, GibbsOptions::default(), &mut grng).unwrap();
        let got: Vec<i64> = result.log.concepts.iter().map(|&c| c as i64).collect();
        let distinct: std::collections::BTreeSet<i64> = got.iter().copied().collect();
        println!("chain {chain}: ARI {:.3}  concepts used {}", ari(&truth, &got).unwrap(), distinct.len());
    }
}
