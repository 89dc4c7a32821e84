use std::time::Instant;

use crate::corpus::{partition_documents, Corpus, DataPartition, Document};
use crate::error::{Error, Result};
use crate::kvstore::{KvClient, KvStore};
use crate::metrics::{delta_error, MemoryReport, WorkerMemory};
use crate::model::{
    slice_blocks, CountModel, DocTopicCounts, Hyperparameters, TopicTotals, WordTopicRow,
};
use crate::sampler::{gibbs_pass_inverted, PassCounters, RngStream, VisitLog};

use super::{Engine, Executor, RoundBarrier, RoundReport, Schedule, TaskList};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelOptions {
    pub workers: usize,
    /// Defaults to one shard per worker.
    pub shards: Option<usize>,
    pub seed: u64,
    pub executor: Executor,
}

impl ParallelOptions {
    pub fn new(workers: usize, seed: u64) -> Self {
        Self {
            workers,
            shards: None,
            seed,
            executor: Executor::default(),
        }
    }
}

/// One worker's private state. Nothing here is shared with other workers.
#[derive(Debug)]
pub struct Worker {
    id: usize,
    partition: DataPartition,
    doc_topics: Vec<DocTopicCounts>,
    totals: TopicTotals,
    snapshot: TopicTotals,
    held: Option<u32>,
    rng: RngStream,
    counters: PassCounters,
    visits: VisitLog,
    peak_block_entries: usize,
}

impl Worker {
    fn new(partition: DataPartition, totals: TopicTotals, seed: u64) -> Result<Self> {
        let k = totals.len();
        let doc_topics = partition
            .documents
            .iter()
            .map(|d| DocTopicCounts::from_assignments(&d.assignments, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            id: partition.id,
            visits: VisitLog::for_partition(&partition),
            rng: RngStream::for_worker(seed, partition.id),
            partition,
            doc_topics,
            snapshot: totals.clone(),
            totals,
            held: None,
            counters: PassCounters::default(),
            peak_block_entries: 0,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn partition(&self) -> &DataPartition {
        &self.partition
    }

    pub fn doc_topics(&self) -> &[DocTopicCounts] {
        &self.doc_topics
    }

    pub fn totals_replica(&self) -> &TopicTotals {
        &self.totals
    }

    pub fn visits(&self) -> &VisitLog {
        &self.visits
    }

    pub fn held_block(&self) -> Option<u32> {
        self.held
    }

    /// Resident entries: the largest block held so far, local doc-topic
    /// counts and the totals replica.
    pub fn memory(&self) -> WorkerMemory {
        WorkerMemory {
            word_topic: self.peak_block_entries,
            doc_topic: self.doc_topics.iter().map(DocTopicCounts::nnz).sum(),
            totals: self.totals.len(),
        }
    }

    fn fetch_totals(&mut self, client: &KvClient<'_, KvStore>) -> Result<()> {
        let fresh = client.fetch_topic_totals()?;
        if fresh.len() != self.totals.len() {
            return Err(Error::Shape {
                expected: self.totals.len(),
                got: fresh.len(),
            });
        }
        self.snapshot = fresh.clone();
        self.totals = fresh;
        Ok(())
    }

    fn sample_block(
        &mut self,
        client: &KvClient<'_, KvStore>,
        task: &TaskList,
        round: u64,
        hyper: &Hyperparameters,
    ) -> Result<PassCounters> {
        if let Some(b) = self.held {
            return Err(Error::Protocol(format!(
                "worker {} still holds block {b}",
                self.id
            )));
        }
        let mut block = client.checkout_block(task.block, round)?;
        self.held = Some(block.id);
        self.counters = PassCounters::default();
        gibbs_pass_inverted(
            &mut self.partition,
            &mut self.doc_topics,
            &mut block,
            &task.terms,
            &mut self.totals,
            hyper,
            &mut self.rng,
            &mut self.counters,
            Some(&mut self.visits),
        )?;
        self.peak_block_entries = self.peak_block_entries.max(block.nonzeros());
        client.commit_block(&block)?;
        self.held = None;
        Ok(self.counters)
    }

    fn push_delta(&mut self, client: &KvClient<'_, KvStore>) -> Result<()> {
        client.push_topic_delta(&self.totals.delta_from(&self.snapshot))
    }
}

/// Workers, the store and the rotation schedule.
#[derive(Debug)]
pub struct ModelParallelEngine {
    hyper: Hyperparameters,
    schedule: Schedule,
    store: KvStore,
    workers: Vec<Worker>,
    executor: Executor,
    num_tokens: u64,
    iteration: usize,
    round: usize,
}

impl ModelParallelEngine {
    /// `corpus` must carry initial assignments.
    pub fn new(corpus: Corpus, hyper: Hyperparameters, options: &ParallelOptions) -> Result<Self> {
        let k = hyper.num_topics();
        if corpus.vocab_size() != hyper.vocab_size() {
            return Err(Error::Shape {
                expected: hyper.vocab_size(),
                got: corpus.vocab_size(),
            });
        }
        let counts = CountModel::from_corpus(&corpus, k)?;
        let schedule = Schedule::make(&corpus.term_frequencies(), options.workers)?;
        let blocks = slice_blocks(&counts.rows, schedule.blocks())?;
        let store = KvStore::new(
            blocks,
            counts.totals.clone(),
            options.shards.unwrap_or(options.workers),
        )?;
        let num_tokens = corpus.total_tokens();
        let workers = partition_documents(corpus, options.workers)?
            .into_iter()
            .map(|p| Worker::new(p, counts.totals.clone(), options.seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            hyper,
            schedule,
            store,
            workers,
            executor: options.executor.clone(),
            num_tokens,
            iteration: 0,
            round: 0,
        })
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn store(&self) -> &KvStore {
        &self.store
    }

    pub fn workers(&self) -> &[Worker] {
        &self.workers
    }

    pub fn set_executor(&mut self, executor: Executor) {
        self.executor = executor;
    }

    /// Next round to run within the current iteration.
    pub fn current_round(&self) -> usize {
        self.round
    }

    /// Global round counter, equal to every block's version between rounds.
    pub fn global_round(&self) -> u64 {
        (self.iteration * self.workers.len() + self.round) as u64
    }

    fn drift(&self) -> Result<f64> {
        let truth = TopicTotals::from_counts(
            self.store
                .recount_totals()
                .into_iter()
                .map(|c| c as u32)
                .collect(),
        );
        let replicas: Vec<TopicTotals> = self.workers.iter().map(|w| w.totals.clone()).collect();
        delta_error(&truth, &replicas, self.num_tokens)
    }

    /// Fetch totals, sample the assigned block, commit, barrier, merge totals.
    pub fn run_round(&mut self) -> Result<RoundReport> {
        let started = Instant::now();
        let m = self.workers.len();
        if self.round == 0 {
            for w in &mut self.workers {
                w.visits.reset();
            }
        }
        let round = self.global_round();
        let tasks = self.schedule.tasks(self.round);
        let store = &self.store;
        let hyper = &self.hyper;

        for w in &mut self.workers {
            w.fetch_totals(&KvClient::new(w.id, store))?;
        }
        let delta_start = self.drift()?;

        let counters = self.executor.run(&mut self.workers, |i, w| {
            w.sample_block(&KvClient::new(w.id, store), &tasks[i], round, hyper)
        })?;
        let mut barrier = RoundBarrier::new(round, m);
        for w in &self.workers {
            if w.held.is_none() {
                barrier.arrive(w.id)?;
            }
        }
        barrier.release()?;

        let delta_end = self.drift()?;
        for w in &mut self.workers {
            w.push_delta(&KvClient::new(w.id, store))?;
        }
        self.check_totals()?;

        let mut total = PassCounters::default();
        for c in &counters {
            total.merge(c);
        }
        let report = RoundReport {
            iteration: self.iteration + 1,
            round: self.round,
            wall_seconds: started.elapsed().as_secs_f64(),
            tokens: total.tokens,
            counters: total,
            delta_start,
            delta_end,
            traffic: self.store.take_traffic(),
            memory: self.memory(),
        };
        self.round += 1;
        if self.round == m {
            self.round = 0;
            self.iteration += 1;
            if let Some(w) = self.workers.iter().find(|w| !w.visits.all_equal(1)) {
                return Err(Error::Invariant(format!(
                    "iteration {}: worker {} did not resample every token exactly once",
                    self.iteration, w.id
                )));
            }
        }
        Ok(report)
    }

    /// Authoritative totals must equal the column sums and sum to N.
    fn check_totals(&self) -> Result<()> {
        let totals = self.store.authoritative_totals();
        if totals.sum() != self.num_tokens {
            return Err(Error::Invariant(format!(
                "after merge sum_k C_k = {}, N = {}",
                totals.sum(),
                self.num_tokens
            )));
        }
        let column = self.store.recount_totals();
        if totals.as_slice().iter().zip(&column).any(|(&a, &b)| a as u64 != b) {
            return Err(Error::Invariant(
                "authoritative totals disagree with word-topic column sums".into(),
            ));
        }
        Ok(())
    }
}

impl Engine for ModelParallelEngine {
    fn mode_name(&self) -> &'static str {
        "model-parallel"
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

    fn run_iteration(&mut self) -> Result<Vec<RoundReport>> {
        if self.round != 0 {
            return Err(Error::Protocol(format!(
                "iteration started at round {}",
                self.round
            )));
        }
        (0..self.workers.len()).map(|_| self.run_round()).collect()
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
            .flat_map(|w| w.partition.documents.iter().zip(&w.doc_topics))
            .collect();
        states.sort_by_key(|(d, _)| d.doc_id);
        states
    }

    fn memory(&self) -> MemoryReport {
        MemoryReport {
            workers: self.workers.iter().map(Worker::memory).collect(),
            shards: self.store.shard_entries(),
        }
    }
}
