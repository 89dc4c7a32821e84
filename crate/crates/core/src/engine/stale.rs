use std::collections::BTreeMap;
use std::time::Instant;

use crate::codec::RowDeltas;
use crate::corpus::{partition_documents, Corpus, Document, TermId, TopicId};
use crate::error::{Error, Result};
use crate::kvstore::{KvClient, KvStore};
use crate::metrics::{delta_error, MemoryReport, WorkerMemory};
use crate::model::{
    slice_blocks, BlockPartition, CountModel, DocTopicCounts, Hyperparameters, TopicTotals,
    WordTopicRow,
};
use crate::sampler::{AbcSampler, PassCounters, RngStream, VisitLog};

use super::{Engine, Executor, RoundReport};

/// Tokens a worker samples between exchanges with the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Staleness {
    Tokens(u64),
    /// Exchange once, after the whole local pass.
    Unbounded,
}

impl Staleness {
    fn budget(self) -> u64 {
        match self {
            Staleness::Tokens(s) => s,
            Staleness::Unbounded => u64::MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaleOptions {
    pub workers: usize,
    pub staleness: Staleness,
    pub seed: u64,
    pub shards: Option<usize>,
    /// Largest dense replica (`V * K` entries) a worker may hold.
    pub memory_budget: Option<u64>,
    pub executor: Executor,
}

impl StaleOptions {
    pub fn new(workers: usize, staleness: Staleness, seed: u64) -> Self {
        Self {
            workers,
            staleness,
            seed,
            shards: None,
            memory_budget: None,
            executor: Executor::default(),
        }
    }
}

#[derive(Debug)]
struct StaleWorker {
    id: usize,
    documents: Vec<Document>,
    doc_topics: Vec<DocTopicCounts>,
    rows: Vec<WordTopicRow>,
    totals: TopicTotals,
    pending_rows: BTreeMap<TermId, BTreeMap<TopicId, i32>>,
    pending_totals: Vec<i64>,
    sampler: AbcSampler,
    rng: RngStream,
    counters: PassCounters,
    visits: VisitLog,
    cursor: (usize, usize),
    in_document: bool,
    peak_entries: usize,
}

impl StaleWorker {
    fn finished(&self) -> bool {
        self.cursor.0 >= self.documents.len()
    }

    fn restart(&mut self) {
        self.cursor = (0, 0);
        self.visits.reset();
    }

    /// Samples up to `budget` tokens from the cursor onwards.
    fn sample(&mut self, budget: u64, hyper: &Hyperparameters) -> Result<u64> {
        let mut done = 0;
        while done < budget && !self.finished() {
            let (d, n) = self.cursor;
            let doc = &mut self.documents[d];
            if n >= doc.len() {
                if self.in_document {
                    self.sampler
                        .leave_document(&self.doc_topics[d], &self.totals, hyper, &mut self.counters);
                    self.in_document = false;
                }
                self.cursor = (d + 1, 0);
                continue;
            }
            if !self.in_document {
                self.sampler
                    .enter_document(&self.doc_topics[d], &self.totals, hyper, &mut self.counters);
                self.in_document = true;
            }
            let t = doc.tokens[n];
            let z = doc.assignments[n];
            let k = self.sampler.resample(
                &mut self.doc_topics[d],
                &mut self.rows[t as usize],
                &mut self.totals,
                z,
                hyper,
                &mut self.rng,
                &mut self.counters,
            )?;
            if k != z {
                let row = self.pending_rows.entry(t).or_default();
                *row.entry(z).or_default() -= 1;
                *row.entry(k).or_default() += 1;
                self.pending_totals[z as usize] -= 1;
                self.pending_totals[k as usize] += 1;
            }
            doc.assignments[n] = k;
            self.visits.record(d, n);
            self.cursor = (d, n + 1);
            done += 1;
        }
        // Leave a finished trailing document so the sampler state is clean.
        if self.in_document {
            let (d, n) = self.cursor;
            if n >= self.documents[d].len() {
                self.sampler
                    .leave_document(&self.doc_topics[d], &self.totals, hyper, &mut self.counters);
                self.in_document = false;
                self.cursor = (d + 1, 0);
            }
        }
        Ok(done)
    }

    fn push(&mut self, client: &KvClient<'_, KvStore>) -> Result<()> {
        let deltas: RowDeltas = std::mem::take(&mut self.pending_rows)
            .into_iter()
            .map(|(t, row)| (t, row.into_iter().filter(|&(_, d)| d != 0).collect::<Vec<_>>()))
            .filter(|(_, row)| !row.is_empty())
            .collect();
        if !deltas.is_empty() {
            client.push_row_deltas(&deltas)?;
        }
        client.push_topic_delta(&self.pending_totals)?;
        self.pending_totals.iter_mut().for_each(|d| *d = 0);
        Ok(())
    }

    /// Replaces the replica with the store's state. Only topics whose total
    /// changed are touched in the sampler cache.
    fn fetch(&mut self, client: &KvClient<'_, KvStore>, hyper: &Hyperparameters) -> Result<()> {
        self.rows = client.fetch_all_rows()?;
        let fresh = client.fetch_topic_totals()?;
        let current = self
            .in_document
            .then(|| &self.doc_topics[self.cursor.0]);
        for (k, (&old, &new)) in self.totals.as_slice().iter().zip(fresh.as_slice()).enumerate() {
            if old != new {
                let dc = current.map(|c| c.get(k as TopicId)).unwrap_or(0);
                self.sampler.update_topic(k as TopicId, (dc, old), (dc, new), hyper);
            }
        }
        self.totals = fresh;
        let entries: usize = self.rows.iter().map(WordTopicRow::nnz).sum();
        self.peak_entries = self.peak_entries.max(entries);
        Ok(())
    }

    fn memory(&self) -> WorkerMemory {
        WorkerMemory {
            word_topic: self.peak_entries,
            doc_topic: self.doc_topics.iter().map(DocTopicCounts::nnz).sum(),
            totals: self.totals.len(),
        }
    }
}

/// Data-parallel baseline: every worker keeps a full replica, samples its
/// documents in order and exchanges deltas with the store every `S` tokens.
#[derive(Debug)]
pub struct StaleSyncEngine {
    hyper: Hyperparameters,
    store: KvStore,
    workers: Vec<StaleWorker>,
    staleness: Staleness,
    executor: Executor,
    num_tokens: u64,
    iteration: usize,
}

impl StaleSyncEngine {
    pub fn new(corpus: Corpus, hyper: Hyperparameters, options: &StaleOptions) -> Result<Self> {
        let k = hyper.num_topics();
        let v = corpus.vocab_size();
        if v != hyper.vocab_size() {
            return Err(Error::Shape {
                expected: hyper.vocab_size(),
                got: v,
            });
        }
        if let Some(budget) = options.memory_budget {
            let dense = v as u64 * k as u64;
            if dense > budget {
                return Err(Error::Config(format!(
                    "a full {v} x {k} model replica ({dense} entries) exceeds the budget of {budget}"
                )));
            }
        }
        if options.staleness == Staleness::Tokens(0) {
            return Err(Error::Config("staleness must be at least 1 token".into()));
        }
        let counts = CountModel::from_corpus(&corpus, k)?;
        let partition = BlockPartition::contiguous(v, options.workers.max(1))?;
        let blocks = slice_blocks(&counts.rows, &partition)?;
        let store = KvStore::new(
            blocks,
            counts.totals.clone(),
            options.shards.unwrap_or(options.workers),
        )?;
        let num_tokens = corpus.total_tokens();
        let mut workers = Vec::with_capacity(options.workers);
        for p in partition_documents(corpus, options.workers)? {
            let doc_topics = p
                .documents
                .iter()
                .map(|d| DocTopicCounts::from_assignments(&d.assignments, k))
                .collect::<Result<Vec<_>>>()?;
            let sampler = AbcSampler::new(&counts.totals, &hyper, &mut PassCounters::default())?;
            workers.push(StaleWorker {
                id: p.id,
                visits: VisitLog::for_partition(&p),
                rng: RngStream::for_worker(options.seed, p.id),
                documents: p.documents,
                doc_topics,
                peak_entries: counts.word_topic_nonzeros(),
                rows: counts.rows.clone(),
                totals: counts.totals.clone(),
                pending_rows: BTreeMap::new(),
                pending_totals: vec![0; k],
                sampler,
                counters: PassCounters::default(),
                cursor: (0, 0),
                in_document: false,
            });
        }
        Ok(Self {
            hyper,
            store,
            workers,
            staleness: options.staleness,
            executor: options.executor.clone(),
            num_tokens,
            iteration: 0,
        })
    }

    pub fn store(&self) -> &KvStore {
        &self.store
    }

    /// Drift of the replicas against the merged state, including deltas not
    /// yet pushed.
    fn drift(&self) -> Result<f64> {
        let mut truth: Vec<i64> = self
            .store
            .authoritative_totals()
            .as_slice()
            .iter()
            .map(|&c| c as i64)
            .collect();
        for w in &self.workers {
            for (t, d) in truth.iter_mut().zip(&w.pending_totals) {
                *t += d;
            }
        }
        let truth = TopicTotals::from_counts(truth.into_iter().map(|c| c as u32).collect());
        let replicas: Vec<TopicTotals> = self.workers.iter().map(|w| w.totals.clone()).collect();
        delta_error(&truth, &replicas, self.num_tokens)
    }
}

impl Engine for StaleSyncEngine {
    fn mode_name(&self) -> &'static str {
        "stale-sync"
    }

    fn num_workers(&self) -> usize {
        self.workers.len()
    }

    fn hyper(&self) -> &Hyperparameters {
        &self.hyper
    }

    fn total_tokens(&self) -> u64 {
        self.num_tokens
    }

    fn iterations_done(&self) -> usize {
        self.iteration
    }

    /// Steps of `S` tokens per worker, each followed by push-all then
    /// fetch-all, until every worker has finished its pass.
    fn run_iteration(&mut self) -> Result<Vec<RoundReport>> {
        let started = Instant::now();
        for w in &mut self.workers {
            w.restart();
            w.counters = PassCounters::default();
        }
        let budget = self.staleness.budget();
        let hyper = &self.hyper;
        let store = &self.store;
        let mut delta_end: f64 = 0.0;
        while self.workers.iter().any(|w| !w.finished()) {
            self.executor.run(&mut self.workers, |_, w| w.sample(budget, hyper))?;
            let drift = self.drift()?;
            delta_end = delta_end.max(drift);
            for w in &mut self.workers {
                w.push(&KvClient::new(w.id, store))?;
            }
            for w in &mut self.workers {
                w.fetch(&KvClient::new(w.id, store), hyper)?;
            }
        }
        if let Some(w) = self.workers.iter().find(|w| !w.visits.all_equal(1)) {
            return Err(Error::Invariant(format!(
                "worker {} did not resample every token exactly once",
                w.id
            )));
        }
        let totals = self.store.authoritative_totals();
        if totals.sum() != self.num_tokens {
            return Err(Error::Invariant(format!(
                "after merge sum_k C_k = {}, N = {}",
                totals.sum(),
                self.num_tokens
            )));
        }
        let mut counters = PassCounters::default();
        for w in &self.workers {
            counters.merge(&w.counters);
        }
        self.iteration += 1;
        Ok(vec![RoundReport {
            iteration: self.iteration,
            round: 0,
            wall_seconds: started.elapsed().as_secs_f64(),
            tokens: counters.tokens,
            counters,
            delta_start: 0.0,
            delta_end,
            traffic: self.store.take_traffic(),
            memory: self.memory(),
        }])
    }

    fn rows(&self) -> Result<Vec<WordTopicRow>> {
        self.store.snapshot_rows()
    }

    fn totals(&self) -> TopicTotals {
        self.store.authoritative_totals()
    }

    fn doc_states(&self) -> Vec<(&Document, &DocTopicCounts)> {
        let mut states: Vec<(&Document, &DocTopicCounts)> = self
            .workers
            .iter()
            .flat_map(|w| w.documents.iter().zip(&w.doc_topics))
            .collect();
        states.sort_by_key(|(d, _)| d.doc_id);
        states
    }

    fn memory(&self) -> MemoryReport {
        MemoryReport {
            workers: self.workers.iter().map(StaleWorker::memory).collect(),
            shards: self.store.shard_entries(),
        }
    }
}
