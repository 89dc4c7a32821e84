//! Training drivers: the model-parallel rotation engine, the single-process
//! reference sweeps and the data-parallel stale-sync baseline.

mod parallel;
mod schedule;
mod serial;
mod stale;

pub use parallel::{ModelParallelEngine, ParallelOptions, Worker};
pub use schedule::{RoundBarrier, Schedule, TaskList};
pub use serial::{ForwardSerialEngine, SerialEngine};
pub use stale::{StaleOptions, StaleSyncEngine, Staleness};

use std::collections::BTreeMap;
use std::time::Instant;

use crate::corpus::{Document, TopicId};
use crate::error::{Error, Result};
use crate::kvstore::{Traffic, WorkerId};
use crate::metrics::{MemoryReport, MetricsRecord};
use crate::model::{DocTopicCounts, Hyperparameters, TopicTotals, WordTopicRow};
use crate::sampler::PassCounters;

/// How workers are stepped within a round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Executor {
    /// One thread; workers run one after another in id order, or in `order`.
    Deterministic { order: Option<Vec<usize>> },
    /// One OS thread per worker; joining them is the round barrier.
    Threaded,
}

impl Default for Executor {
    fn default() -> Self {
        Executor::Deterministic { order: None }
    }
}

impl Executor {
    /// Runs `f` once per worker and returns the results in worker order.
    pub(crate) fn run<W, T, F>(&self, workers: &mut [W], f: F) -> Result<Vec<T>>
    where
        W: Send,
        T: Send,
        F: Fn(usize, &mut W) -> Result<T> + Sync,
    {
        match self {
            Executor::Deterministic { order } => {
                let order: Vec<usize> = match order {
                    Some(o) => {
                        let mut sorted = o.clone();
                        sorted.sort_unstable();
                        if sorted != (0..workers.len()).collect::<Vec<_>>() {
                            return Err(Error::Config(format!(
                                "executor order {o:?} is not a permutation of {} workers",
                                workers.len()
                            )));
                        }
                        o.clone()
                    }
                    None => (0..workers.len()).collect(),
                };
                let mut out: Vec<Option<T>> = (0..workers.len()).map(|_| None).collect();
                for m in order {
                    out[m] = Some(f(m, &mut workers[m])?);
                }
                Ok(out.into_iter().map(|o| o.expect("every worker ran")).collect())
            }
            Executor::Threaded => std::thread::scope(|s| {
                let f = &f;
                let handles: Vec<_> = workers
                    .iter_mut()
                    .enumerate()
                    .map(|(m, w)| s.spawn(move || f(m, w)))
                    .collect();
                handles
                    .into_iter()
                    .enumerate()
                    .map(|(m, h)| {
                        h.join()
                            .map_err(|_| Error::Protocol(format!("worker {m} panicked")))?
                    })
                    .collect()
            }),
        }
    }
}

/// What happened in one round (one iteration for the single-round modes).
#[derive(Debug, Clone, Default)]
pub struct RoundReport {
    /// 1-based iteration this round belongs to.
    pub iteration: usize,
    pub round: usize,
    pub wall_seconds: f64,
    pub tokens: u64,
    pub counters: PassCounters,
    /// Replica drift right after totals were fetched.
    pub delta_start: f64,
    /// Replica drift after sampling, before totals were merged.
    pub delta_end: f64,
    pub traffic: BTreeMap<WorkerId, Traffic>,
    pub memory: MemoryReport,
}

/// Common surface of the three training modes.
pub trait Engine {
    fn mode_name(&self) -> &'static str;
    fn num_workers(&self) -> usize;
    fn hyper(&self) -> &Hyperparameters;
    fn total_tokens(&self) -> u64;
    fn iterations_done(&self) -> usize;
    fn run_iteration(&mut self) -> Result<Vec<RoundReport>>;
    /// Global word-topic rows, valid between iterations.
    fn rows(&self) -> Result<Vec<WordTopicRow>>;
    fn totals(&self) -> TopicTotals;
    /// Every document with its doc-topic counts, ordered by document id.
    fn doc_states(&self) -> Vec<(&Document, &DocTopicCounts)>;
    fn memory(&self) -> MemoryReport;

    fn documents(&self) -> Vec<Document> {
        self.doc_states().into_iter().map(|(d, _)| d.clone()).collect()
    }

    fn log_likelihood(&self) -> Result<f64> {
        let states = self.doc_states();
        crate::metrics::log_likelihood(
            states.iter().map(|&(_, c)| c),
            &self.rows()?,
            &self.totals(),
            self.hyper(),
        )
    }

    /// Recounts every count structure from the assignments and compares.
    fn verify_counts(&self) -> Result<()> {
        verify_counts(
            &self.doc_states(),
            &self.rows()?,
            &self.totals(),
            self.hyper().num_topics(),
        )
    }
}

/// Brute-force recount from `z`: checks `sum_k C_d^k = N_d` and the exact
/// doc-topic counts, `sum_t C_k^t = C_k` with exact rows, and `sum_k C_k = N`.
pub fn verify_counts(
    states: &[(&Document, &DocTopicCounts)],
    rows: &[WordTopicRow],
    totals: &TopicTotals,
    num_topics: usize,
) -> Result<()> {
    let mut recount_rows: Vec<BTreeMap<TopicId, u32>> = vec![BTreeMap::new(); rows.len()];
    let mut recount_totals = vec![0u64; num_topics];
    let mut n = 0u64;
    for &(doc, counts) in states {
        let mut local = vec![0u32; num_topics];
        for (&t, &z) in doc.tokens.iter().zip(&doc.assignments) {
            if z as usize >= num_topics || t as usize >= rows.len() {
                return Err(Error::Invariant(format!(
                    "document {}: token ({t}, {z}) out of range",
                    doc.doc_id
                )));
            }
            local[z as usize] += 1;
            *recount_rows[t as usize].entry(z).or_default() += 1;
            recount_totals[z as usize] += 1;
            n += 1;
        }
        let sum: u64 = counts.iter().map(|(_, c)| c as u64).sum();
        if sum != doc.len() as u64 {
            return Err(Error::Invariant(format!(
                "document {}: sum_k C_d^k = {sum}, N_d = {}",
                doc.doc_id,
                doc.len()
            )));
        }
        for (k, &c) in local.iter().enumerate() {
            if counts.get(k as TopicId) != c {
                return Err(Error::Invariant(format!(
                    "document {} topic {k}: stored {} recount {c}",
                    doc.doc_id,
                    counts.get(k as TopicId)
                )));
            }
        }
    }
    let mut column = vec![0u64; num_topics];
    for (t, (row, expected)) in rows.iter().zip(&recount_rows).enumerate() {
        if row.nnz() != expected.len() {
            return Err(Error::Invariant(format!(
                "term {t}: {} nonzero topics stored, {} recounted",
                row.nnz(),
                expected.len()
            )));
        }
        for (&k, &c) in expected {
            if row.get(k) != c {
                return Err(Error::Invariant(format!(
                    "term {t} topic {k}: stored {} recount {c}",
                    row.get(k)
                )));
            }
        }
        for &(k, c) in row.entries() {
            column[k as usize] += c as u64;
        }
    }
    for k in 0..num_topics {
        let total = totals.get(k as TopicId) as u64;
        if column[k] != total || recount_totals[k] != total {
            return Err(Error::Invariant(format!(
                "topic {k}: sum_t C_k^t = {}, C_k = {total}, recount {}",
                column[k], recount_totals[k]
            )));
        }
    }
    if totals.sum() != n {
        return Err(Error::Invariant(format!(
            "sum_k C_k = {} but N = {n}",
            totals.sum()
        )));
    }
    Ok(())
}

/// Runs `iterations` iterations and builds the metrics trace. `on_round` is
/// called with each round's report once its iteration has finished.
pub fn train<E, F>(engine: &mut E, iterations: usize, mut on_round: F) -> Result<Vec<MetricsRecord>>
where
    E: Engine + ?Sized,
    F: FnMut(&RoundReport, &E) -> Result<()>,
{
    let start = Instant::now();
    let mut records = vec![MetricsRecord {
        iteration: engine.iterations_done(),
        round: 0,
        wall_seconds: 0.0,
        log_likelihood: Some(engine.log_likelihood()?),
        delta: Some(0.0),
        tokens: 0,
        tokens_per_sec: 0.0,
        worker_entries: engine.memory().workers.iter().map(|w| w.total()).collect(),
    }];
    for _ in 0..iterations {
        let mut wall = start.elapsed().as_secs_f64();
        let reports = engine.run_iteration()?;
        let last = reports.len().saturating_sub(1);
        let ll = engine.log_likelihood()?;
        for (i, report) in reports.iter().enumerate() {
            on_round(report, engine)?;
            wall += report.wall_seconds;
            let rate = if report.wall_seconds > 0.0 {
                report.tokens as f64 / report.wall_seconds
            } else {
                0.0
            };
            records.push(MetricsRecord {
                iteration: report.iteration,
                round: report.round,
                wall_seconds: wall,
                log_likelihood: (i == last).then_some(ll),
                delta: Some(report.delta_end),
                tokens: report.tokens,
                tokens_per_sec: rate,
                worker_entries: report.memory.workers.iter().map(|w| w.total()).collect(),
            });
        }
        log::info!(
            "{} iteration {}: log-likelihood {ll:.4}",
            engine.mode_name(),
            engine.iterations_done()
        );
    }
    Ok(records)
}
