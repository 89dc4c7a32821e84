//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;

use mplda::codec::encode_checkpoint;
use mplda::corpus::{Corpus, TopicId};
use mplda::engine::{
    Engine, Executor, ModelParallelEngine, ParallelOptions, SerialEngine, StaleOptions,
    StaleSyncEngine, Staleness,
};
use mplda::kvstore::AuditAction;
use mplda::model::{self, DocTopicCounts, Hyperparameters, TopicTotals, WordTopicRow};
use mplda::sampler::{
    dense_conditional, AbcSampler, PassCounters, RngStream, WordCache,
};
use mplda::synthetic::{generate, topic_recovery, PlantedCorpus, PlantedSpec};

const ALPHA: f64 = 0.1;
const BETA: f64 = 0.01;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn hyper(k: usize, v: usize) -> Hyperparameters {
    Hyperparameters::symmetric(k, v, Some(ALPHA), BETA).unwrap()
}

fn planted(num_docs: usize) -> PlantedCorpus {
    generate(
        &PlantedSpec {
            num_docs,
            ..PlantedSpec::default()
        },
        2024,
    )
    .unwrap()
}

fn initialized(corpus: &Corpus, k: usize, seed: u64) -> Corpus {
    let mut c = corpus.clone();
    c.initialize_assignments(k, &mut RngStream::for_initialization(seed));
    c
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Random excluded-token state: counts for one document and one word.
struct SmallState {
    hyper: Hyperparameters,
    doc: DocTopicCounts,
    row: WordTopicRow,
    totals: TopicTotals,
}

fn random_state(rng: &mut RngStream) -> SmallState {
    let r = rng.inner();
    let k = r.random_range(1..=16usize);
    let v = r.random_range(1..=12usize);
    let alpha: Vec<f64> = (0..k).map(|_| r.random_range(0.01..2.0)).collect();
    let beta = r.random_range(0.001..1.0);
    let mut doc_z = Vec::new();
    let mut row_pairs = Vec::new();
    let mut totals = Vec::new();
    for topic in 0..k as TopicId {
        let dc = if r.random_bool(0.5) { r.random_range(0..=20u32) } else { 0 };
        let wc = if r.random_bool(0.5) { r.random_range(0..=20u32) } else { 0 };
        doc_z.extend(std::iter::repeat_n(topic, dc as usize));
        if wc > 0 {
            row_pairs.push((topic, wc));
        }
        let others = r.random_range(0..=20u32);
        totals.push(dc.max(wc) + others);
    }
    SmallState {
        hyper: Hyperparameters::new(alpha, v, beta).unwrap(),
        doc: DocTopicCounts::from_assignments(&doc_z, k).unwrap(),
        row: WordTopicRow::from_pairs(row_pairs),
        totals: TopicTotals::from_counts(totals),
    }
}

/// Independent dense evaluation, normalized.
fn oracle(s: &SmallState) -> Vec<f64> {
    let k = s.hyper.num_topics();
    let vb = s.hyper.vocab_size() as f64 * s.hyper.beta();
    let w: Vec<f64> = (0..k)
        .map(|t| {
            let t = t as TopicId;
            (s.doc.get(t) as f64 + s.hyper.alpha()[t as usize])
                * (s.row.get(t) as f64 + s.hyper.beta())
                / (s.totals.get(t) as f64 + vb)
        })
        .collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let z: f64 = v.iter().sum();
    v.into_iter().map(|x| x / z).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut rng = RngStream::new(1, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let mut s = random_state(&mut rng);
        let want = oracle(&s);
        let mut ctr = PassCounters::default();

        let mut abc = AbcSampler::new(&s.totals, &s.hyper, &mut ctr).map_err(err)?;
        abc.enter_document(&s.doc, &s.totals, &s.hyper, &mut ctr);
        let got = normalize(abc.topic_masses(&s.doc, &s.row, &s.totals, &s.hyper));
        worst = worst.max(max_abs_diff(&got, &want));

        let mut xy = WordCache::new(s.hyper.num_topics());
        xy.rebuild(0, &s.row, &s.totals, &s.hyper, &mut ctr);
        let got = normalize(xy.topic_masses(&s.doc, &s.hyper));
        worst = worst.max(max_abs_diff(&got, &want));

        // Reach an excluded state through the O(1) update path as well.
        let z = rng.inner().random_range(0..s.hyper.num_topics() as TopicId);
        model::increment(&mut s.doc, &mut s.row, &mut s.totals, z);
        let mut abc = AbcSampler::new(&s.totals, &s.hyper, &mut ctr).map_err(err)?;
        abc.enter_document(&s.doc, &s.totals, &s.hyper, &mut ctr);
        xy.rebuild(0, &s.row, &s.totals, &s.hyper, &mut ctr);
        let before = (s.doc.get(z), s.totals.get(z));
        model::decrement(&mut s.doc, &mut s.row, &mut s.totals, z).map_err(err)?;
        abc.update_topic(z, before, (s.doc.get(z), s.totals.get(z)), &s.hyper);
        xy.update_topic(z, s.row.get(z), s.totals.get(z), &s.hyper);
        let want = oracle(&s);
        worst = worst.max(max_abs_diff(
            &normalize(abc.topic_masses(&s.doc, &s.row, &s.totals, &s.hyper)),
            &want,
        ));
        worst = worst.max(max_abs_diff(&normalize(xy.topic_masses(&s.doc, &s.hyper)), &want));
    }
    let secs = started.elapsed().as_secs_f64();
    check(worst <= 1e-12, || format!("max deviation {worst:e} > 1e-12"))?;
    check(secs < 10.0, || format!("took {secs:.1} s"))?;
    Ok(format!("max deviation {worst:.1e} over 1000 states, {secs:.2} s"))
}

fn criterion_2() -> Outcome {
    let started = Instant::now();
    let p = planted(1000);
    let k = 8;
    let seed = 77;
    let corpus = initialized(&p.corpus, k, seed);
    let h = hyper(k, corpus.vocab_size());

    let mut serial = SerialEngine::new(corpus.clone(), h.clone(), seed).map_err(err)?;
    let mut parallel =
        ModelParallelEngine::new(corpus, h.clone(), &ParallelOptions::new(1, seed)).map_err(err)?;
    for _ in 0..20 {
        serial.run_iteration().map_err(err)?;
        parallel.run_iteration().map_err(err)?;
    }
    let a = encode_checkpoint(&h, &serial.rows().map_err(err)?);
    let b = encode_checkpoint(&h, &parallel.rows().map_err(err)?);
    let secs = started.elapsed().as_secs_f64();
    check(a == b, || "checkpoints differ".into())?;
    check(serial.documents() == parallel.documents(), || "assignments differ".into())?;
    check(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("{} byte checkpoints identical after 20 iterations, {secs:.2} s", a.len()))
}

fn criterion_3() -> Outcome {
    let p = planted(1000);
    let k = 16;
    let corpus = initialized(&p.corpus, k, 5);
    let h = hyper(k, corpus.vocab_size());
    let m = 4;
    let mut e = ModelParallelEngine::new(corpus, h, &ParallelOptions::new(m, 5)).map_err(err)?;
    e.run_iteration().map_err(err)?;

    let mut visits = 0u64;
    for w in e.workers() {
        for doc in w.visits().counts() {
            for &c in doc {
                check(c == 1, || format!("worker {} token visited {c} times", w.id()))?;
                visits += 1;
            }
        }
    }
    check(visits == e.total_tokens(), || "visit log does not cover the corpus".into())?;

    let mut checkouts: BTreeMap<(usize, u32), usize> = BTreeMap::new();
    let mut commits: BTreeMap<(usize, u32), usize> = BTreeMap::new();
    for entry in e.store().audit_log() {
        let map = match entry.action {
            AuditAction::Checkout => &mut checkouts,
            AuditAction::Commit => &mut commits,
        };
        *map.entry((entry.worker, entry.block)).or_default() += 1;
    }
    let all: BTreeSet<(usize, u32)> = (0..m).flat_map(|w| (0..m as u32).map(move |b| (w, b))).collect();
    for log in [&checkouts, &commits] {
        check(log.keys().copied().collect::<BTreeSet<_>>() == all, || {
            "ledger does not contain every (worker, block) pair".into()
        })?;
        check(log.values().all(|&n| n == 1), || "a (worker, block) pair repeats".into())?;
    }
    Ok(format!(
        "{visits} tokens resampled once each; {} ledger pairs each exactly once",
        all.len()
    ))
}

/// Recounts all three structures from `z` and compares with the engine.
fn recount_matches(e: &dyn Engine) -> Result<(), String> {
    let k = e.hyper().num_topics();
    let rows = e.rows().map_err(err)?;
    let totals = e.totals();
    let mut word = vec![vec![0u32; k]; rows.len()];
    let mut topic = vec![0u64; k];
    let mut n = 0u64;
    for (doc, counts) in e.doc_states() {
        let mut local = vec![0u32; k];
        for (&t, &z) in doc.tokens.iter().zip(&doc.assignments) {
            local[z as usize] += 1;
            word[t as usize][z as usize] += 1;
            topic[z as usize] += 1;
            n += 1;
        }
        let sum: u32 = local.iter().sum();
        check(sum as usize == doc.len(), || format!("doc {} lengths", doc.doc_id))?;
        for (t, &c) in local.iter().enumerate() {
            check(counts.get(t as TopicId) == c, || {
                format!("doc {} topic {t}: {} vs recount {c}", doc.doc_id, counts.get(t as TopicId))
            })?;
        }
    }
    for (t, row) in rows.iter().enumerate() {
        for (kk, &c) in word[t].iter().enumerate() {
            check(row.get(kk as TopicId) == c, || format!("C_k^t mismatch at ({t}, {kk})"))?;
        }
    }
    for (kk, &c) in topic.iter().enumerate() {
        check(totals.get(kk as TopicId) as u64 == c, || format!("C_k mismatch at {kk}"))?;
    }
    check(totals.sum() == n, || "sum_k C_k != N".into())
}

fn criterion_4() -> Outcome {
    let p = planted(1000);
    let k = 16;
    let corpus = initialized(&p.corpus, k, 9);
    let h = hyper(k, corpus.vocab_size());
    let mut e = ModelParallelEngine::new(corpus, h, &ParallelOptions::new(4, 9)).map_err(err)?;
    let mut rounds = 0;
    for _ in 0..50 {
        for _ in 0..4 {
            e.run_round().map_err(err)?;
            recount_matches(&e).map_err(|m| format!("round {rounds}: {m}"))?;
            rounds += 1;
        }
    }
    Ok(format!("{rounds} rounds, zero conservation violations"))
}

fn criterion_5(p: &PlantedCorpus) -> Outcome {
    let k = 16;
    let corpus = initialized(&p.corpus, k, 11);
    let h = hyper(k, corpus.vocab_size());
    let options = ParallelOptions {
        executor: Executor::Threaded,
        ..ParallelOptions::new(4, 11)
    };
    let mut e = ModelParallelEngine::new(corpus, h, &options).map_err(err)?;
    let mut worst_late: f64 = 0.0;
    let mut first: f64 = 0.0;
    for it in 1..=20 {
        for r in e.run_iteration().map_err(err)? {
            check(r.delta_start == 0.0, || {
                format!("iteration {it} round {}: delta at start {}", r.round, r.delta_start)
            })?;
            check((0.0..=2.0).contains(&r.delta_end), || "delta out of [0, 2]".into())?;
            if it == 1 {
                first = first.max(r.delta_end);
            } else {
                worst_late = worst_late.max(r.delta_end);
            }
        }
    }
    check(worst_late < 0.02, || format!("end-of-round delta reached {worst_late:.4}"))?;
    Ok(format!(
        "delta 0 at every round start; max end-of-round delta {first:.4} (iter 1), {worst_late:.4} (iters 2-20)"
    ))
}

fn likelihood_trace(e: &mut dyn Engine, iterations: usize) -> Result<Vec<f64>, String> {
    let mut trace = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        e.run_iteration().map_err(err)?;
        trace.push(e.log_likelihood().map_err(err)?);
    }
    Ok(trace)
}

fn criterion_6(p: &PlantedCorpus) -> Outcome {
    let k = 16;
    let m = 4;
    let mut wins = 0;
    let mut notes = Vec::new();
    for seed in 100..110u64 {
        let corpus = initialized(&p.corpus, k, seed);
        let h = hyper(k, corpus.vocab_size());
        let mut stale = StaleSyncEngine::new(
            corpus.clone(),
            h.clone(),
            &StaleOptions {
                executor: Executor::Threaded,
                ..StaleOptions::new(m, Staleness::Unbounded, seed)
            },
        )
        .map_err(err)?;
        let target = *likelihood_trace(&mut stale, 30)?.last().expect("30 iterations");
        let mut mp = ModelParallelEngine::new(
            corpus,
            h,
            &ParallelOptions {
                executor: Executor::Threaded,
                ..ParallelOptions::new(m, seed)
            },
        )
        .map_err(err)?;
        let trace = likelihood_trace(&mut mp, 30)?;
        match trace.iter().position(|&ll| ll >= target) {
            Some(i) => {
                wins += 1;
                notes.push(format!("{seed}:{}", i + 1));
            }
            None => {
                let best = trace.iter().cloned().fold(f64::MIN, f64::max);
                eprintln!(
                    "criterion 6 seed {seed}: model-parallel best {best:.1} below stale-sync {target:.1}"
                );
                notes.push(format!("{seed}:miss"));
            }
        }
    }
    check(wins >= 7, || format!("{wins}/10 seeds ({})", notes.join(" ")))?;
    Ok(format!(
        "{wins}/10 seeds reach the stale-sync iteration-30 value (seed:iteration {})",
        notes.join(" ")
    ))
}

fn criterion_7(p: &PlantedCorpus) -> Outcome {
    let k = 16;
    let ms = [1usize, 2, 4, 8];
    let mut mp = Vec::new();
    let mut stale = Vec::new();
    for &m in &ms {
        let corpus = initialized(&p.corpus, k, 21);
        let h = hyper(k, corpus.vocab_size());
        let mut e = ModelParallelEngine::new(
            corpus.clone(),
            h.clone(),
            &ParallelOptions {
                executor: Executor::Threaded,
                ..ParallelOptions::new(m, 21)
            },
        )
        .map_err(err)?;
        let mut s = StaleSyncEngine::new(
            corpus,
            h,
            &StaleOptions {
                executor: Executor::Threaded,
                ..StaleOptions::new(m, Staleness::Unbounded, 21)
            },
        )
        .map_err(err)?;
        for _ in 0..10 {
            e.run_iteration().map_err(err)?;
            s.run_iteration().map_err(err)?;
        }
        mp.push(e.memory().max_word_topic() as f64);
        stale.push(s.memory().max_word_topic() as f64);
    }
    // Least-squares fit of c / M.
    let c = ms.iter().zip(&mp).map(|(&m, &p)| p / m as f64).sum::<f64>()
        / ms.iter().map(|&m| 1.0 / (m * m) as f64).sum::<f64>();
    let mp_dev: Vec<f64> = ms
        .iter()
        .zip(&mp)
        .map(|(&m, &p)| (p - c / m as f64).abs() / (c / m as f64))
        .collect();
    let mean = stale.iter().sum::<f64>() / stale.len() as f64;
    let stale_dev: Vec<f64> = stale.iter().map(|s| (s - mean).abs() / mean).collect();
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.0}")).collect::<Vec<_>>().join("/");
    let summary = format!(
        "model-parallel {} (max dev {:.1}% from c/M), stale-sync {} (max dev {:.1}%)",
        fmt(&mp),
        100.0 * mp_dev.iter().cloned().fold(0.0, f64::max),
        fmt(&stale),
        100.0 * stale_dev.iter().cloned().fold(0.0, f64::max)
    );
    check(mp_dev.iter().all(|&d| d <= 0.30), || summary.clone())?;
    check(stale_dev.iter().all(|&d| d <= 0.10), || summary.clone())?;
    Ok(summary)
}

fn criterion_8() -> Outcome {
    let mut rng = RngStream::new(8, 0);
    let mut worst_ratio: f64 = 0.0;
    let mut checked = 0u64;
    for _ in 0..200 {
        let k = rng.inner().random_range(1..=64usize);
        let v = 20;
        let h = Hyperparameters::symmetric(k, v, Some(0.1), 0.01).unwrap();
        let len = rng.inner().random_range(1..=60usize);
        let tokens: Vec<u32> = (0..len).map(|_| rng.inner().random_range(0..v as u32)).collect();
        let mut z: Vec<TopicId> = (0..len).map(|_| rng.inner().random_range(0..k as TopicId)).collect();
        let mut rows = vec![WordTopicRow::new(); v];
        let mut totals = TopicTotals::zeros(k);
        for (&t, &zz) in tokens.iter().zip(&z) {
            rows[t as usize].increment(zz);
            totals.increment(zz);
        }
        // Background mass from other documents.
        for row in rows.iter_mut() {
            for _ in 0..rng.inner().random_range(0..30) {
                let kk = rng.inner().random_range(0..k as TopicId);
                row.increment(kk);
                totals.increment(kk);
            }
        }
        let mut doc = DocTopicCounts::from_assignments(&z, k).unwrap();

        // Dense oracle: exactly K per token.
        let mut ctr = PassCounters::default();
        dense_conditional(&doc, &rows[tokens[0] as usize], &totals, &h, &mut ctr).map_err(err)?;
        check(ctr.entries_touched == k as u64, || format!("dense touched {} for K={k}", ctr.entries_touched))?;

        // Three-bucket sampler, per token and per document including entry/exit.
        let mut ctr = PassCounters::default();
        let mut abc = AbcSampler::new(&totals, &h, &mut ctr).map_err(err)?;
        let mut doc_budget = 0u64;
        let mut touched = 0u64;
        let mut enter = PassCounters::default();
        abc.enter_document(&doc, &totals, &h, &mut enter);
        touched += enter.entries_touched;
        for n in 0..len {
            let t = tokens[n] as usize;
            let mut c = PassCounters::default();
            // K_d, K_t after exclusion, as seen by the sampler.
            let kd = doc.nnz() - usize::from(doc.get(z[n]) == 1);
            let kt = rows[t].nnz() - usize::from(rows[t].get(z[n]) == 1);
            z[n] = abc
                .resample(&mut doc, &mut rows[t], &mut totals, z[n], &h, &mut rng, &mut c)
                .map_err(err)?;
            let spent = c.entries_touched;
            let bound = 4 * (kd + kt + 1) as u64;
            check(spent <= bound, || format!("three-bucket token touched {spent} > {bound}"))?;
            worst_ratio = worst_ratio.max(spent as f64 / (kd + kt + 1) as f64);
            doc_budget += bound;
            touched += spent;
            checked += 1;
        }
        let mut leave = PassCounters::default();
        abc.leave_document(&doc, &totals, &h, &mut leave);
        touched += leave.entries_touched;
        check(touched <= doc_budget, || format!("document touched {touched} > {doc_budget}"))?;

        // Two-bucket sampler, per token (the per-word cache rebuild is
        // accounted separately).
        let mut cache = WordCache::new(k);
        for n in 0..len {
            let t = tokens[n] as usize;
            let mut c = PassCounters::default();
            cache.rebuild(t as u32, &rows[t], &totals, &h, &mut c);
            let zn = z[n];
            model::decrement(&mut doc, &mut rows[t], &mut totals, zn).map_err(err)?;
            cache.update_topic(zn, rows[t].get(zn), totals.get(zn), &h);
            let (kd, kt) = (doc.nnz(), rows[t].nnz());
            let mut c = PassCounters::default();
            let knew = mplda::sampler::sample_sparse_xy(&doc, &cache, &h, &mut rng, &mut c)
                .map_err(err)?;
            model::increment(&mut doc, &mut rows[t], &mut totals, knew);
            cache.update_topic(knew, rows[t].get(knew), totals.get(knew), &h);
            let spent = c.entries_touched + 2;
            let bound = 4 * (kd + kt + 1) as u64;
            check(spent <= bound, || format!("two-bucket token touched {spent} > {bound}"))?;
            worst_ratio = worst_ratio.max(spent as f64 / (kd + kt + 1) as f64);
            z[n] = knew;
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} sparse draws, worst touched/(K_d+K_t+1) = {worst_ratio:.2} (bound 4); dense = K"
    ))
}

fn criterion_9() -> Outcome {
    let mut rng = RngStream::new(9, 0);
    let k = 64;
    let v = 50;
    let alpha: Vec<f64> = (0..k).map(|_| rng.inner().random_range(0.01..1.0)).collect();
    let h = Hyperparameters::new(alpha, v, 0.01).unwrap();
    let mut doc = DocTopicCounts::new(k);
    let mut row = WordTopicRow::new();
    let mut totals = TopicTotals::from_counts((0..k).map(|_| rng.inner().random_range(0..50)).collect());
    let mut ctr = PassCounters::default();
    let mut abc = AbcSampler::new(&totals, &h, &mut ctr).map_err(err)?;
    abc.enter_document(&doc, &totals, &h, &mut ctr);
    let mut xy = WordCache::new(k);
    xy.rebuild(0, &row, &totals, &h, &mut ctr);

    let vb = v as f64 * h.beta();
    let mut worst: f64 = 0.0;
    let mut compare = |abc: &AbcSampler, xy: &WordCache, doc: &DocTopicCounts, row: &WordTopicRow, totals: &TopicTotals| {
        let mut smoothing = 0.0;
        let mut doc_mass = 0.0;
        let mut x = 0.0;
        for t in 0..k {
            let kk = t as TopicId;
            let den = totals.get(kk) as f64 + vb;
            smoothing += h.alpha()[t] * h.beta() / den;
            doc_mass += h.beta() * doc.get(kk) as f64 / den;
            let coef = (row.get(kk) as f64 + h.beta()) / den;
            x += h.alpha()[t] * coef;
            worst = worst.max((xy.coefficient(kk) - coef).abs());
        }
        worst = worst
            .max((abc.smoothing_mass() - smoothing).abs())
            .max((abc.doc_mass() - doc_mass).abs())
            .max((xy.x_mass() - x).abs());
    };

    for _ in 0..10_000 {
        let kk = rng.inner().random_range(0..k as TopicId);
        let before = (doc.get(kk), totals.get(kk));
        let grow = doc.get(kk) == 0 || row.get(kk) == 0 || rng.inner().random_bool(0.55);
        if grow {
            model::increment(&mut doc, &mut row, &mut totals, kk);
        } else {
            model::decrement(&mut doc, &mut row, &mut totals, kk).map_err(err)?;
        }
        abc.update_topic(kk, before, (doc.get(kk), totals.get(kk)), &h);
        xy.update_topic(kk, row.get(kk), totals.get(kk), &h);
    }
    compare(&abc, &xy, &doc, &row, &totals);
    abc.check_coherence(Some(&doc), &totals, &h).map_err(err)?;
    xy.check_coherence(&row, &totals, &h).map_err(err)?;
    check(worst <= 1e-10, || format!("cached masses drifted by {worst:e}"))?;
    Ok(format!("after 10000 operations max cache deviation {worst:.1e}"))
}

fn criterion_10(p: &PlantedCorpus) -> Outcome {
    let k = 10;
    let corpus = initialized(&p.corpus, k, 31);
    let h = hyper(k, corpus.vocab_size());
    let mut e = ModelParallelEngine::new(
        corpus,
        h,
        &ParallelOptions {
            executor: Executor::Threaded,
            ..ParallelOptions::new(4, 31)
        },
    )
    .map_err(err)?;
    for _ in 0..100 {
        e.run_iteration().map_err(err)?;
    }
    let sims = topic_recovery(&p.topics, &e.rows().map_err(err)?, k);
    let recovered = sims.iter().filter(|&&s| s > 0.8).count();
    let listing = sims.iter().map(|s| format!("{s:.2}")).collect::<Vec<_>>().join(" ");
    check(recovered >= 8, || format!("{recovered}/10 recovered: {listing}"))?;
    Ok(format!("{recovered}/10 planted topics recovered (cosine {listing})"))
}

fn main() -> ExitCode {
    let started = Instant::now();
    let big = planted(10_000);
    let criteria: Vec<Criterion> = vec![
        ("1 sampler equivalence", Box::new(criterion_1)),
        ("2 serial equivalence", Box::new(criterion_2)),
        ("3 exactly-once and rotation", Box::new(criterion_3)),
        ("4 conservation", Box::new(criterion_4)),
        ("5 delta error", Box::new(|| criterion_5(&big))),
        ("6 convergence gap", Box::new(|| criterion_6(&big))),
        ("7 memory scaling", Box::new(|| criterion_7(&big))),
        ("8 complexity probe", Box::new(criterion_8)),
        ("9 cache coherence", Box::new(criterion_9)),
        ("10 topic recovery", Box::new(|| criterion_10(&big))),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        match run() {
            Ok(detail) => println!("PASS criterion {name}: {detail} [{:.1}s]", t.elapsed().as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail} [{:.1}s]", t.elapsed().as_secs_f64());
            }
        }
    }
    println!(
        "acceptance: {failed} failed, total {:.1}s",
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
