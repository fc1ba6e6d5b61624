//! Acceptance criteria, run one after another by a plain `main` so that
//! every `[PASS]`/`[FAIL]` line reaches the test output.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use coref_core::config::{ModelConfig, TrainConfig};
use coref_core::corpus::{parse_conll, write_conll_documents, CharVocab, Clustering, Document, Genre, Span};
use coref_core::diffcore::gradcheck::check_gradients;
use coref_core::diffcore::{Graph, NodeId, ParamId, ParameterRegistry, Tensor};
use coref_core::encoder::{CharCnn, LstmDirection};
use coref_core::inference::{
    decode_antecedents, ensemble_predict, ensemble_scores, predict_antecedents,
    recover_clusters, Antecedent, AntecedentDecision,
};
use coref_core::metrics::{avg_f1, b_cubed, ceaf_phi4, muc, MetricResult};
use coref_core::model::{CorefModel, ModelError, Pruning};
use coref_core::nn::{Ffnn, Phase};
use coref_core::pruner::{enumerate_spans, mention_recall, prune_spans, span_budget};
use coref_core::scorer::EPSILON_SCORE;
use coref_core::trainer::{gold_antecedent_sets, marginal_nll, LogRecord, Trainer};

use common::{random_embeddings, story};

struct Outcome {
    label: &'static str,
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(label: &'static str, passed: bool, detail: &str) -> Self {
        Outcome {
            label,
            passed,
            detail: detail.to_string(),
        }
    }
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 8] = [
        ("1 gradient suite", criterion_1_gradient_suite),
        ("2 metric oracles", criterion_2_metric_oracles),
        ("3 overfit", criterion_3_overfit),
        ("4 pruning invariants", criterion_4_pruning),
        ("5 inference invariants", criterion_5_inference),
        ("6 ensemble degeneracy", criterion_6_ensemble),
        ("7 format round-trip", criterion_7_round_trip),
        ("8 dummy-gradient asymmetry", criterion_8_dummy_gradient),
    ];
    let mut failed = 0;
    for (label, run) in criteria {
        match std::panic::catch_unwind(run) {
            Ok(o) => {
                println!("[{}] {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.label, o.detail);
                failed += usize::from(!o.passed);
            }
            Err(_) => {
                println!("[FAIL] {label}: panicked");
                failed += 1;
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

const WORDS: [&str; 12] = [
    "Ann", "saw", "Bob", "she", "he", "it", "the", "dog", "ran", "to", "Paris", ".",
];

fn small_config() -> ModelConfig {
    ModelConfig {
        embedding_dims: vec![4],
        char_embedding_size: 3,
        filter_widths: vec![2, 3],
        filter_size: 3,
        lstm_size: 3,
        ffnn_depth: 2,
        ffnn_size: 4,
        feature_size: 2,
        max_span_width: 3,
        ..Default::default()
    }
}

/// Sentences of random words with random speakers and no gold clusters.
fn random_document(id: &str, sentences: usize, max_len: usize, rng: &mut impl Rng) -> Document {
    let sents: Vec<Vec<(&str, &str)>> = (0..sentences)
        .map(|_| {
            let speaker = if rng.random_bool(0.5) { "A" } else { "B" };
            (0..rng.random_range(1..=max_len))
                .map(|_| (WORDS[rng.random_range(0..WORDS.len())], speaker))
                .collect()
        })
        .collect();
    Document::from_sentences(id, &sents, Clustering::empty())
}

fn model_with(docs: &[Document], config: ModelConfig, embed_seed: u64, init_seed: u64) -> CorefModel {
    let embedder = Arc::new(random_embeddings(docs, config.embedding_dims[0], embed_seed));
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    CorefModel::new(config, CharVocab::build(docs), embedder, &mut rng).unwrap()
}

fn ids_with_prefix(reg: &ParameterRegistry, prefixes: &[&str]) -> Vec<ParamId> {
    reg.iter()
        .filter(|(_, name, _)| prefixes.iter().any(|p| name.starts_with(p)))
        .map(|(id, _, _)| id)
        .collect()
}

/// Moves every parameter, zero-initialised biases included, off the ReLU
/// kinks at exactly zero.
fn jitter(reg: &mut ParameterRegistry, rng: &mut ChaCha8Rng) {
    for id in reg.ids().collect::<Vec<_>>() {
        for x in reg.value_mut(id).data_mut() {
            *x += rng.random_range(-0.3..0.3);
        }
    }
}

fn criterion_1_gradient_suite() -> Outcome {
    let started = Instant::now();
    const H: f64 = 1e-5;
    let mut results: Vec<(&str, f64, usize)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let config = small_config();

    let doc = Document::from_sentences(
        "bc/grad",
        &[
            vec![("Ann", "a"), ("met", "a"), ("Bob", "a"), ("in", "a"), ("Oslo", "a")],
            vec![("She", "b"), ("thanked", "b"), ("him", "b"), (".", "b")],
        ],
        Clustering::new(vec![
            vec![Span::new(0, 0), Span::new(5, 5)],
            vec![Span::new(2, 2), Span::new(7, 7)],
        ])
        .unwrap(),
    );
    let vocab = CharVocab::build([&doc]);

    // character CNN, including a word shorter than the widest filter
    let mut reg = ParameterRegistry::new();
    let cnn = CharCnn::register(&mut reg, vocab.len(), &config, &mut rng).unwrap();
    jitter(&mut reg, &mut rng);
    let probe: Vec<f64> = (0..cnn.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let report_cnn = check_gradients(&reg, &[], H, 50, |g| {
        let r = g.input(Tensor::vector(probe.clone()))?;
        let a = cnn.forward(g, &vocab.encode("Oslo"))?;
        let b = cnn.forward(g, &vocab.encode("."))?;
        let la = g.dot(r, a)?;
        let lb = g.dot(r, b)?;
        g.add(la, lb)
    })
    .unwrap();
    results.push(("char CNN", report_cnn.max_rel_error, report_cnn.checked));

    // each LSTM direction, with and without a recurrent dropout mask
    for (label, reverse) in [("LSTM forward", false), ("LSTM backward", true)] {
        let mut reg = ParameterRegistry::new();
        let lstm = LstmDirection::register(&mut reg, "lstm", 4, 3, &mut rng).unwrap();
        jitter(&mut reg, &mut rng);
        let mut data_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let inputs: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| data_rng.random_range(-1.0..1.0)).collect()).collect();
        let probes: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| data_rng.random_range(-1.0..1.0)).collect()).collect();
        let mask = [1.25, 0.0, 1.25];
        let report = check_gradients(&reg, &[], H, 50, |g| {
            let xs: Vec<NodeId> = inputs.iter().map(|x| g.input(Tensor::vector(x.clone()))).collect::<Result<_, _>>()?;
            let mut terms = Vec::new();
            for state_mask in [None, Some(&mask[..])] {
                let hs = lstm.run(g, &xs, reverse, state_mask)?;
                for (h, p) in hs.iter().zip(&probes) {
                    let p = g.input(Tensor::vector(p.clone()))?;
                    terms.push(g.dot(p, *h)?);
                }
            }
            let all = g.concat(&terms)?;
            g.sum(all)
        })
        .unwrap();
        results.push((label, report.max_rel_error, report.checked));
    }

    // the three scoring networks in isolation
    for (label, dim) in [
        ("FFNN_m", config.span_dim()),
        ("FFNN_a", config.pair_dim()),
        ("FFNN_alpha", config.context_dim()),
    ] {
        let mut reg = ParameterRegistry::new();
        let ffnn = Ffnn::register(&mut reg, label, dim, config.ffnn_depth, config.ffnn_size, &mut rng).unwrap();
        jitter(&mut reg, &mut rng);
        let mut data_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let inputs: Vec<Vec<f64>> = (0..3).map(|_| (0..dim).map(|_| data_rng.random_range(-1.0..1.0)).collect()).collect();
        let report = check_gradients(&reg, &[], H, 50, |g| {
            let mut scores = Vec::new();
            for x in &inputs {
                let x = g.input(Tensor::vector(x.clone()))?;
                scores.push(ffnn.score(g, x, &mut Phase::Eval, 0.0)?);
            }
            let all = g.concat(&scores)?;
            g.sum(all)
        })
        .unwrap();
        results.push((label, report.max_rel_error, report.checked));
    }

    // attention, mention and antecedent scorers inside the full model
    let model = model_with(std::slice::from_ref(&doc), config.clone(), 3, 4);
    let spans = enumerate_spans(&doc, config.max_span_width);
    let head_probe: Vec<f64> = (0..config.word_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let attention_ids = ids_with_prefix(&model.params, &["attention/"]);
    let report_att = check_gradients(&model.params, &attention_ids, H, 50, |g| {
        let enc = model.encoder.encode(g, &doc, &model.embedder, &model.char_vocab, &mut Phase::Eval)?;
        let r = g.input(Tensor::vector(head_probe.clone()))?;
        let mut terms = Vec::new();
        for &s in spans.iter().filter(|s| s.width() > 1) {
            let (head, _) = model.encoder.head_attention(g, &enc, s)?;
            terms.push(g.dot(r, head)?);
        }
        let all = g.concat(&terms)?;
        g.sum(all)
    })
    .unwrap();
    results.push(("attention (in model)", report_att.max_rel_error, report_att.checked));

    let fixed = [Span::new(0, 0), Span::new(0, 1), Span::new(2, 2), Span::new(3, 4), Span::new(5, 5), Span::new(7, 7)];
    let loss_of = |g: &mut Graph<'_>| {
        let pass = model
            .forward(g, &doc, Pruning::Fixed(&fixed), &mut Phase::Eval)
            .map_err(|e| match e {
                ModelError::Diff(d) => d,
                other => panic!("{other}"),
            })?;
        let gold = gold_antecedent_sets(&pass.accepted, &pass.candidates, &doc.gold);
        marginal_nll(g, &pass, &gold)
    };
    let scorer_ids = ids_with_prefix(&model.params, &["mention/", "antecedent/", "features/"]);
    let report_scorers = check_gradients(&model.params, &scorer_ids, H, 50, loss_of).unwrap();
    results.push(("FFNN_m/FFNN_a/features (in model)", report_scorers.max_rel_error, report_scorers.checked));
    let report_full = check_gradients(&model.params, &[], H, 12, loss_of).unwrap();
    results.push(("full marginal NLL", report_full.max_rel_error, report_full.checked));

    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let elapsed = started.elapsed().as_secs_f64();
    for (label, err, n) in &results {
        println!("    {label:<36} max rel err {err:.2e} over {n} entries");
    }
    Outcome::new(
        "1 gradient suite",
        worst < 1e-4 && elapsed < 60.0 && results.iter().all(|r| r.2 > 0),
        &format!("worst relative error {worst:.2e}, {elapsed:.1} s"),
    )
}

/// Independent metric implementations over plain cluster lists.
mod oracle {
    use super::*;

    pub fn without_singletons(c: &[Vec<Span>]) -> Vec<Vec<Span>> {
        c.iter().filter(|k| k.len() >= 2).cloned().collect()
    }

    fn ratio(n: f64, d: f64) -> f64 {
        if d == 0.0 {
            0.0
        } else {
            n / d
        }
    }

    fn finish(gold: &[Vec<Span>], pred: &[Vec<Span>], p: (f64, f64), r: (f64, f64)) -> MetricResult {
        if gold.is_empty() && pred.is_empty() {
            return MetricResult::new(1.0, 1.0);
        }
        MetricResult::new(ratio(p.0, p.1), ratio(r.0, r.1))
    }

    /// Components of `keys[k]` under the "same cluster of `other`" relation,
    /// found by depth-first search over mention pairs.
    fn components(cluster: &[Span], other: &[Vec<Span>]) -> usize {
        let same = |a: Span, b: Span| other.iter().any(|o| o.contains(&a) && o.contains(&b));
        let mut seen = vec![false; cluster.len()];
        let mut count = 0;
        for s in 0..cluster.len() {
            if seen[s] {
                continue;
            }
            count += 1;
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(x) = stack.pop() {
                for y in 0..cluster.len() {
                    if !seen[y] && same(cluster[x], cluster[y]) {
                        seen[y] = true;
                        stack.push(y);
                    }
                }
            }
        }
        count
    }

    fn muc_side(keys: &[Vec<Span>], other: &[Vec<Span>]) -> (f64, f64) {
        keys.iter().fold((0.0, 0.0), |(n, d), k| {
            (n + (k.len() - components(k, other)) as f64, d + (k.len() - 1) as f64)
        })
    }

    pub fn muc(gold: &[Vec<Span>], pred: &[Vec<Span>]) -> MetricResult {
        let pred = without_singletons(pred);
        finish(gold, &pred, muc_side(&pred, gold), muc_side(gold, &pred))
    }

    fn b3_side(keys: &[Vec<Span>], other: &[Vec<Span>]) -> (f64, f64) {
        let mut num = 0.0;
        let mut den = 0.0;
        for k in keys {
            for m in k {
                let shared = match other.iter().find(|o| o.contains(m)) {
                    Some(o) => k.iter().filter(|x| o.contains(x)).count(),
                    None => 0,
                };
                num += shared as f64 / k.len() as f64;
                den += 1.0;
            }
        }
        (num, den)
    }

    pub fn b_cubed(gold: &[Vec<Span>], pred: &[Vec<Span>]) -> MetricResult {
        let pred = without_singletons(pred);
        finish(gold, &pred, b3_side(&pred, gold), b3_side(gold, &pred))
    }

    fn phi4(a: &[Span], b: &[Span]) -> f64 {
        let shared = a.iter().filter(|x| b.contains(x)).count();
        2.0 * shared as f64 / (a.len() + b.len()) as f64
    }

    /// Best total similarity over every injective map from the smaller side
    /// into the larger one.
    fn best_alignment(small: &[Vec<Span>], large: &[Vec<Span>], used: &mut Vec<bool>, i: usize) -> f64 {
        if i == small.len() {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for j in 0..large.len() {
            if used[j] {
                continue;
            }
            used[j] = true;
            let total = phi4(&small[i], &large[j]) + best_alignment(small, large, used, i + 1);
            used[j] = false;
            best = best.max(total);
        }
        best
    }

    pub fn ceaf(gold: &[Vec<Span>], pred: &[Vec<Span>]) -> MetricResult {
        let pred = without_singletons(pred);
        let (small, large) = if gold.len() <= pred.len() { (gold, &pred[..]) } else { (&pred[..], gold) };
        let best = best_alignment(small, large, &mut vec![false; large.len()], 0);
        finish(gold, &pred, (best, pred.len() as f64), (best, gold.len() as f64))
    }
}

/// Up to `max_clusters` clusters over a random subset of `universe`.
fn random_clusters(universe: &[Span], max_clusters: usize, rng: &mut impl Rng) -> Vec<Vec<Span>> {
    let k = rng.random_range(0..=max_clusters);
    let mut clusters = vec![Vec::new(); k];
    if k == 0 {
        return clusters;
    }
    for &s in universe {
        if rng.random_bool(0.6) {
            clusters[rng.random_range(0..k)].push(s);
        }
    }
    clusters.retain(|c| !c.is_empty());
    clusters
}

fn close(a: &MetricResult, b: &MetricResult) -> bool {
    (a.precision - b.precision).abs() <= 1e-12 && (a.recall - b.recall).abs() <= 1e-12 && (a.f1 - b.f1).abs() <= 1e-12
}

fn criterion_2_metric_oracles() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let universe: Vec<Span> = (0..14).map(|i| Span::new(i, i + i % 3)).collect();
    let mut disagreements = Vec::new();
    let trials = 300;
    for trial in 0..trials {
        let gold = random_clusters(&universe, 6, &mut rng);
        let pred = random_clusters(&universe, 6, &mut rng);
        let (g, p) = (Clustering::new(gold.clone()).unwrap(), Clustering::new(pred.clone()).unwrap());
        let pairs = [
            ("MUC", muc(&g, &p), oracle::muc(&gold, &pred)),
            ("B3", b_cubed(&g, &p), oracle::b_cubed(&gold, &pred)),
            ("CEAF", ceaf_phi4(&g, &p), oracle::ceaf(&gold, &pred)),
        ];
        for (name, fast, slow) in pairs {
            if !close(&fast, &slow) {
                disagreements.push(format!("trial {trial} {name}: {fast:?} vs {slow:?}"));
            }
        }
    }

    let s = |i: usize| Span::new(i, i);
    let c = |v: &[usize]| v.iter().map(|&i| s(i)).collect::<Vec<_>>();
    let cl = |v: Vec<Vec<Span>>| Clustering::new(v).unwrap();
    let exact = |r: MetricResult, p: f64, rc: f64| r.precision == p && r.recall == rc && r.f1 == MetricResult::new(p, rc).f1;
    let mut hand = Vec::new();
    let g = cl(vec![c(&[0, 1, 2])]);
    hand.push(("MUC identical", exact(muc(&g, &g), 1.0, 1.0)));
    hand.push(("MUC partial", exact(muc(&g, &cl(vec![c(&[0, 1])])), 1.0, 0.5)));
    hand.push(("MUC empty prediction", exact(muc(&g, &Clustering::empty()), 0.0, 0.0)));
    hand.push(("B3 identical", exact(b_cubed(&g, &g), 1.0, 1.0)));
    let merged = b_cubed(&cl(vec![c(&[0, 1]), c(&[2, 3])]), &cl(vec![c(&[0, 1, 2, 3])]));
    hand.push(("B3 merged", exact(merged, 0.5, 1.0) && (merged.f1 - 2.0 / 3.0).abs() < 1e-15));
    hand.push((
        "B3 singleton prediction",
        b_cubed(&cl(vec![c(&[0, 1])]), &cl(vec![c(&[0]), c(&[1])])).recall == 0.0,
    ));
    hand.push(("CEAF identical", exact(ceaf_phi4(&g, &g), 1.0, 1.0)));
    let ceaf = ceaf_phi4(&cl(vec![c(&[0, 1]), c(&[2])]), &cl(vec![c(&[0, 1, 2])]));
    hand.push(("CEAF partial", (ceaf.recall - 0.4).abs() < 1e-15 && (ceaf.precision - 0.8).abs() < 1e-15));
    let avg = avg_f1(&MetricResult::new(0.758, 0.758), &MetricResult::new(0.65, 0.65), &MetricResult::new(0.608, 0.608));
    hand.push(("avg_f1 published row", (avg - 0.672).abs() < 1e-12));
    let one = MetricResult::new(1.0, 1.0);
    let six = MetricResult::new(0.6, 0.6);
    hand.push(("avg_f1 trivial", avg_f1(&one, &one, &one) == 1.0 && (avg_f1(&six, &six, &six) - 0.6).abs() < 1e-15));
    let failed_hand: Vec<&str> = hand.iter().filter(|h| !h.1).map(|h| h.0).collect();

    let elapsed = started.elapsed().as_secs_f64();
    for d in disagreements.iter().take(5) {
        println!("    {d}");
    }
    Outcome::new(
        "2 metric oracles",
        disagreements.is_empty() && failed_hand.is_empty() && elapsed < 30.0,
        &format!(
            "{trials} random pairs, {} disagreements, {} hand examples ({} failed: {failed_hand:?}), {elapsed:.1} s",
            disagreements.len(),
            hand.len(),
            failed_hand.len()
        ),
    )
}

fn criterion_3_overfit() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let docs: Vec<Document> = (0..4).map(|i| story(i, 6, &mut rng)).collect();
    assert!(docs.iter().all(|d| d.sentences.len() <= 8 && d.gold.len() <= 3));
    let config = ModelConfig {
        embedding_dims: vec![50],
        lstm_size: 32,
        ffnn_depth: 2,
        ffnn_size: 32,
        ..Default::default()
    };
    let model = model_with(&docs, config, 5, 6);
    let train = TrainConfig {
        max_epochs: 200,
        eval_every: 5,
        patience: 40,
        ..Default::default()
    };
    let mut trainer = Trainer::new(model, train, 7).unwrap();
    let mut reached = None;
    let mut last = 0.0;
    let mut log = |r: &LogRecord| {
        if let LogRecord::Eval { results, .. } = r {
            last = results.avg_f1;
        }
    };
    while !trainer.is_finished() {
        trainer.train_epoch(&docs, &docs, &mut log).unwrap();
        if trainer.best_avg_f1.is_some_and(|f| f >= 0.95) {
            reached = Some(trainer.epoch);
            break;
        }
    }
    let best = trainer.best_avg_f1.unwrap_or(0.0);
    let trained = trainer.best_model();
    let recall = docs
        .iter()
        .map(|d| mention_recall(&ensemble_scores(&[&trained], d).unwrap().accepted_spans(), &d.gold))
        .fold(1.0, f64::min);
    let elapsed = started.elapsed().as_secs_f64();
    Outcome::new(
        "3 overfit",
        reached.is_some() && recall == 1.0 && elapsed < 300.0,
        &format!(
            "{} docs, best corpus avg F1 {best:.4} (last {last:.4}) reached at epoch {reached:?}, \
             lowest gold mention recall at λ=0.4 {recall:.3}, {elapsed:.1} s",
            docs.len()
        ),
    )
}

fn crosses(a: Span, b: Span) -> bool {
    (a.start < b.start && b.start <= a.end && a.end < b.end) || (b.start < a.start && a.start <= b.end && b.end < a.end)
}

fn criterion_4_pruning() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let lambdas = [0.1, 0.2, 0.3, 0.4, 0.5];
    let (mut crossings, mut over_budget, mut non_monotone, mut unordered) = (0, 0, 0, 0);
    let mut assignments = 0;
    for trial in 0..500 {
        // at least 10 tokens, so that floor(λT) ≥ 1 for every λ in the sweep
        let doc = loop {
            let d = random_document(&format!("nw/prune{trial}"), rng.random_range(1..=5), 14, &mut rng);
            if d.num_tokens() >= 10 {
                break d;
            }
        };
        assignments += 1;
        let width = rng.random_range(1..=10);
        let spans = enumerate_spans(&doc, width);
        // coarse scores so that ties occur
        let scores: Vec<f64> = spans.iter().map(|_| (rng.random_range(-8.0f64..8.0) * 2.0).round() / 2.0).collect();
        let mut pool = spans.clone();
        pool.shuffle(&mut rng);
        let gold: Vec<Vec<Span>> = pool.chunks(2).take(rng.random_range(1..=6)).filter(|c| c.len() == 2).map(<[Span]>::to_vec).collect();
        let gold = Clustering::new(gold).unwrap();

        let mut previous = -1.0;
        for &lambda in &lambdas {
            let kept: Vec<Span> = prune_spans(&spans, &scores, span_budget(lambda, doc.num_tokens()))
                .into_iter()
                .map(|i| spans[i])
                .collect();
            let limit = (lambda * doc.num_tokens() as f64 + 1e-9).floor() as usize;
            if kept.len() > limit {
                over_budget += 1;
            }
            if kept.windows(2).any(|w| w[0] >= w[1]) {
                unordered += 1;
            }
            for (a, &x) in kept.iter().enumerate() {
                for &y in &kept[a + 1..] {
                    if crosses(x, y) {
                        crossings += 1;
                    }
                }
            }
            let recall = mention_recall(&kept, &gold);
            if recall < previous {
                non_monotone += 1;
            }
            previous = recall;
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    Outcome::new(
        "4 pruning invariants",
        assignments == 500 && crossings + over_budget + non_monotone + unordered == 0 && elapsed < 30.0,
        &format!(
            "{assignments} assignments: {crossings} crossings, {over_budget} over budget, {unordered} out of order, \
             {non_monotone} recall decreases, {elapsed:.1} s"
        ),
    )
}

/// The most probable joint assignment, found by enumerating every
/// combination of antecedents and scoring it with explicitly normalised
/// probabilities.
fn brute_force_argmax(pair_scores: &[Vec<f64>], windows: &[std::ops::Range<usize>]) -> Vec<Antecedent> {
    let options: Vec<Vec<(Antecedent, f64)>> = pair_scores
        .iter()
        .zip(windows)
        .map(|(row, w)| {
            let z: f64 = 1.0 + row.iter().map(|s| s.exp()).sum::<f64>();
            let mut o = vec![(Antecedent::Epsilon, 1.0 / z)];
            o.extend(w.clone().zip(row).map(|(j, s)| (Antecedent::Span(j), s.exp() / z)));
            o
        })
        .collect();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    let mut choice = vec![0usize; options.len()];
    loop {
        let p: f64 = choice.iter().zip(&options).map(|(&c, o)| o[c].1).product();
        if p > best.0 {
            best = (p, choice.iter().zip(&options).map(|(&c, o)| o[c].0).collect());
        }
        let mut k = 0;
        while k < choice.len() && choice[k] + 1 == options[k].len() {
            choice[k] = 0;
            k += 1;
        }
        if k == choice.len() {
            break;
        }
        choice[k] += 1;
    }
    best.1
}

/// Connected components by breadth-first search over undirected links,
/// singletons dropped.
fn components_oracle(spans: &[Span], links: &[Option<usize>]) -> BTreeSet<BTreeSet<Span>> {
    let mut adjacent = vec![Vec::new(); spans.len()];
    for (i, l) in links.iter().enumerate() {
        if let Some(j) = *l {
            adjacent[i].push(j);
            adjacent[j].push(i);
        }
    }
    let mut seen = vec![false; spans.len()];
    let mut out = BTreeSet::new();
    for s in 0..spans.len() {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut queue = std::collections::VecDeque::from([s]);
        let mut group = BTreeSet::new();
        while let Some(x) = queue.pop_front() {
            group.insert(spans[x]);
            for &y in &adjacent[x] {
                if !seen[y] {
                    seen[y] = true;
                    queue.push_back(y);
                }
            }
        }
        if group.len() > 1 {
            out.insert(group);
        }
    }
    out
}

fn as_sets(c: &Clustering) -> BTreeSet<BTreeSet<Span>> {
    c.clusters().iter().map(|k| k.iter().copied().collect()).collect()
}

fn criterion_5_inference() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let (mut argmax_bad, mut distribution_bad, mut epsilon_bad, mut uf_bad) = (0, 0, 0, 0);
    let mut decided = 0;
    for d in 0..50 {
        let doc = random_document(&format!("tc/small{d}"), rng.random_range(1..=3), 5, &mut rng);
        let model = model_with(std::slice::from_ref(&doc), small_config(), d, 1000 + d);
        let prediction = predict_antecedents(&model, &doc).unwrap();
        let pair = prediction.scores.pair_scores();
        let expected = brute_force_argmax(&pair, &prediction.scores.windows);
        let got: Vec<Antecedent> = prediction.decisions.iter().map(|x| x.best).collect();
        if got != expected {
            argmax_bad += 1;
        }
        for (row, decision) in pair.iter().zip(&prediction.decisions) {
            decided += 1;
            let z: f64 = 1.0 + row.iter().map(|s| s.exp()).sum::<f64>();
            let explicit: Vec<f64> = std::iter::once(1.0 / z).chain(row.iter().map(|s| s.exp() / z)).collect();
            if explicit.iter().zip(&decision.distribution).any(|(a, b)| (a - b).abs() > 1e-12) {
                distribution_bad += 1;
            }
            // P(ε)·Z = exp(s(i, ε)) must be exactly exp(0)
            if (decision.distribution[0] * z - 1.0).abs() > 1e-12 {
                epsilon_bad += 1;
            }
        }
        let links: Vec<Option<usize>> = got.iter().map(|a| match a {
            Antecedent::Span(j) => Some(*j),
            Antecedent::Epsilon => None,
        }).collect();
        let spans = prediction.scores.accepted_spans();
        if as_sets(&prediction.clustering) != components_oracle(&spans, &links) {
            uf_bad += 1;
        }
    }

    // random link structures
    for _ in 0..200 {
        let n = rng.random_range(1..12);
        let spans: Vec<Span> = (0..n).map(|i| Span::new(i, i)).collect();
        let links: Vec<Option<usize>> = (0..n)
            .map(|i| if i > 0 && rng.random_bool(0.6) { Some(rng.random_range(0..i)) } else { None })
            .collect();
        let decisions: Vec<AntecedentDecision> = links
            .iter()
            .map(|l| AntecedentDecision {
                best: l.map_or(Antecedent::Epsilon, Antecedent::Span),
                distribution: Vec::new(),
            })
            .collect();
        if as_sets(&recover_clusters(&spans, &decisions)) != components_oracle(&spans, &links) {
            uf_bad += 1;
        }
    }

    // all-negative scores abstain
    let mut abstain_bad = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..10);
        let windows: Vec<_> = (0..n).map(|i: usize| i.saturating_sub(4)..i).collect();
        let scores: Vec<Vec<f64>> = windows.iter().map(|w| w.clone().map(|_| -rng.random_range(1e-9..20.0)).collect()).collect();
        let decisions = decode_antecedents(&scores, &windows);
        let spans: Vec<Span> = (0..n).map(|i| Span::new(i, i)).collect();
        if decisions.iter().any(|d| d.best != Antecedent::Epsilon) || !recover_clusters(&spans, &decisions).is_empty() {
            abstain_bad += 1;
        }
    }

    let failures = argmax_bad + distribution_bad + epsilon_bad + uf_bad + abstain_bad;
    Outcome::new(
        "5 inference invariants",
        failures == 0 && EPSILON_SCORE == 0.0 && decided > 0,
        &format!(
            "50 docs / {decided} spans: {argmax_bad} argmax, {distribution_bad} distribution, {epsilon_bad} ε-score, \
             {uf_bad} union-find, {abstain_bad} abstention mismatches"
        ),
    )
}

fn criterion_6_ensemble() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let docs: Vec<Document> = (0..6).map(|i| random_document(&format!("wb/ens{i}"), 3, 6, &mut rng)).collect();
    let base = model_with(&docs, small_config(), 1, 2);
    let restored = CorefModel::from_checkpoint(&base.to_checkpoint().unwrap(), base.embedder.clone()).unwrap();
    let mut identical = true;
    for doc in &docs {
        let single = predict_antecedents(&base, doc).unwrap();
        let triple = ensemble_predict(&[&base, &restored, &restored], doc).unwrap();
        identical &= single == triple;
    }

    let mut other_rng = ChaCha8Rng::seed_from_u64(3);
    let other = CorefModel::new(base.config.clone(), base.char_vocab.clone(), base.embedder.clone(), &mut other_rng).unwrap();
    let mut worst: f64 = 0.0;
    let mut same_pruning = true;
    for doc in &docs {
        let averaged = ensemble_scores(&[&base, &other], doc).unwrap();
        let mut graphs = [Graph::new(&base.params), Graph::new(&other.params)];
        let members = [&base, &other];
        let mut stages = Vec::new();
        let mut by_member = Vec::new();
        for (m, g) in members.iter().zip(graphs.iter_mut()) {
            let stage = m.mention_stage(g, doc, None, &mut Phase::Eval).unwrap();
            by_member.push(stage.mention_scores.iter().map(|&s| g.scalar(s)).collect::<Vec<f64>>());
            stages.push(stage);
        }
        let hand: Vec<f64> = by_member[0].iter().zip(&by_member[1]).map(|(a, b)| (a + b) / 2.0).collect();
        for (h, a) in hand.iter().zip(&averaged.mention_scores) {
            worst = worst.max((h - a).abs());
        }
        let spans: Vec<Span> = stages[0].spans.iter().map(|n| n.span).collect();
        let kept = prune_spans(&spans, &hand, span_budget(base.config.spans_per_word, doc.num_tokens()));
        same_pruning &= kept == averaged.accepted;

        let mut s_a = Vec::new();
        for ((m, g), stage) in members.iter().zip(graphs.iter_mut()).zip(&stages) {
            let nodes = kept.iter().map(|&k| stage.spans[k]).collect();
            let s_m = kept.iter().map(|&k| stage.mention_scores[k]).collect();
            let pass = m.antecedent_stage(g, doc, nodes, s_m, &mut Phase::Eval).unwrap();
            s_a.push(pass.antecedent_scores.iter().map(|r| r.iter().map(|&n| g.scalar(n)).collect::<Vec<_>>()).collect::<Vec<_>>());
        }
        for (i, row) in averaged.antecedent_scores.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                worst = worst.max(((s_a[0][i][k] + s_a[1][i][k]) / 2.0 - v).abs());
            }
        }
    }
    Outcome::new(
        "6 ensemble degeneracy",
        identical && same_pruning && worst <= 1e-9,
        &format!("identical members reproduce bitwise: {identical}; M=2 max deviation {worst:.2e}; shared pruning: {same_pruning}"),
    )
}

/// Spans within sentences, nested and adjacent ones included, grouped into
/// clusters of at least two mentions. Mentions of one cluster cross only by
/// sharing a boundary token; deeper crossings have no bracket notation.
fn random_annotated_document(id: usize, rng: &mut impl Rng) -> Document {
    let genre = Genre::ALL[rng.random_range(0..Genre::ALL.len())];
    let doc = random_document(&format!("{}/rt/{id:02}/rt_{id}", genre.code()), rng.random_range(1..=4), 9, rng);
    let mut pool: Vec<Span> = doc
        .sentences
        .iter()
        .flat_map(|r| {
            let r = r.clone();
            r.clone().flat_map(move |s| (s..r.end.min(s + 5)).map(move |e| Span::new(s, e)))
        })
        .filter(|_| rng.random_bool(0.35))
        .collect();
    pool.shuffle(rng);
    let mut clusters: Vec<Vec<Span>> = vec![Vec::new(); pool.len() / 3 + 1];
    for s in pool {
        let k = rng.random_range(0..clusters.len());
        if clusters[k].iter().all(|m| !crosses(*m, s) || m.end == s.start || s.end == m.start) {
            clusters[k].push(s);
        }
    }
    clusters.retain(|c| c.len() >= 2);
    let mut doc = doc;
    doc.part = rng.random_range(0..3);
    doc.gold = Clustering::new(clusters).unwrap();
    doc
}

fn criterion_7_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let docs: Vec<Document> = (0..200).map(|i| random_annotated_document(i, &mut rng)).collect();
    let nested = docs.iter().flat_map(|d| {
        let m: Vec<Span> = d.gold.mentions().collect();
        let pairs: Vec<(Span, Span)> = m.iter().flat_map(|a| m.iter().map(move |b| (*a, *b))).collect();
        pairs
    });
    let (mut nested_count, mut adjacent_count) = (0, 0);
    for (a, b) in nested {
        nested_count += usize::from(a != b && a.contains(&b));
        adjacent_count += usize::from(a.end + 1 == b.start);
    }

    let text = write_conll_documents(docs.iter().map(|d| (d, &d.gold))).unwrap();
    let parsed = parse_conll(&text).unwrap();
    let mut mismatched = 0;
    for (a, b) in docs.iter().zip(&parsed) {
        let words = |d: &Document| d.tokens.iter().map(|t| (t.text.clone(), t.speaker.clone(), t.sentence)).collect::<Vec<_>>();
        let same = a.doc_id == b.doc_id
            && a.part == b.part
            && a.genre == b.genre
            && a.sentences == b.sentences
            && words(a) == words(b)
            && a.gold == b.gold;
        mismatched += usize::from(!same);
    }
    let rewritten = write_conll_documents(parsed.iter().map(|d| (d, &d.gold))).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("round_trip.conll");
    fs::write(&path, &rewritten).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_coref"))
        .args(["evaluate", "--gold", path.to_str().unwrap(), "--system", path.to_str().unwrap()])
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    let corpus_f1: Option<f64> = stdout
        .lines()
        .find(|l| l.starts_with("corpus (micro)"))
        .and_then(|l| l.split_whitespace().last())
        .and_then(|v| v.parse().ok());

    Outcome::new(
        "7 format round-trip",
        parsed.len() == docs.len() && mismatched == 0 && rewritten == text && out.status.success() && corpus_f1 == Some(100.0),
        &format!(
            "{} docs ({nested_count} nested, {adjacent_count} adjacent mention pairs), {mismatched} mismatches, \
             rewrite identical: {}, evaluate self-score {corpus_f1:?}",
            docs.len(),
            rewritten == text
        ),
    )
}

fn criterion_8_dummy_gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut checked = 0usize;
    let mut negative = Vec::new();
    let mut worst_gap: f64 = 0.0;
    for instance in 0..20u64 {
        let doc = story(instance as usize, rng.random_range(2..=4), &mut rng);
        let model = model_with(std::slice::from_ref(&doc), small_config(), instance, 500 + instance);
        let mut g = Graph::new(&model.params);
        let pass = model.forward(&mut g, &doc, Pruning::Scored, &mut Phase::Eval).unwrap();
        let gold = gold_antecedent_sets(&pass.accepted, &pass.candidates, &doc.gold);
        let loss = marginal_nll(&mut g, &pass, &gold).unwrap();
        let grads = g.backward(loss).unwrap();
        for (i, gold_i) in gold.iter().enumerate() {
            if gold_i != &[Antecedent::Epsilon] {
                continue;
            }
            let row: Vec<f64> = pass.pair_scores[i].iter().map(|&n| g.scalar(n)).collect();
            let z: f64 = 1.0 + row.iter().map(|s| s.exp()).sum::<f64>();
            for (k, &node) in pass.antecedent_scores[i].iter().enumerate() {
                let grad = grads.node(node).map_or(0.0, |v| v[0]);
                checked += 1;
                if grad < 0.0 {
                    negative.push((instance, i, k, grad));
                }
                worst_gap = worst_gap.max((grad - row[k].exp() / z).abs());
            }
        }
    }
    Outcome::new(
        "8 dummy-gradient asymmetry",
        negative.is_empty() && checked > 0,
        &format!(
            "{checked} ∂loss/∂s_a entries for spans with GOLD = {{ε}}, {} negative; max gap to P(y = j) {worst_gap:.2e}",
            negative.len()
        ),
    )
}
