use std::time::Instant;

use crate::corpus::{Corpus, DataPartition, Document, TermId};
use crate::error::{Error, Result};
use crate::metrics::{MemoryReport, WorkerMemory};
use crate::model::{CountModel, DocTopicCounts, Hyperparameters, TopicTotals, WordTopicRow};
use crate::sampler::{sample_term_postings, AbcSampler, PassCounters, RngStream, VisitLog, WordCache};

use super::{Engine, RoundReport};

struct SerialState {
    hyper: Hyperparameters,
    partition: DataPartition,
    doc_topics: Vec<DocTopicCounts>,
    rows: Vec<WordTopicRow>,
    totals: TopicTotals,
    rng: RngStream,
    num_tokens: u64,
    iteration: usize,
}

impl SerialState {
    fn new(corpus: Corpus, hyper: Hyperparameters, seed: u64) -> Result<Self> {
        if corpus.vocab_size() != hyper.vocab_size() {
            return Err(Error::Shape {
                expected: hyper.vocab_size(),
                got: corpus.vocab_size(),
            });
        }
        let num_tokens = corpus.total_tokens();
        let k = hyper.num_topics();
        let CountModel { rows, totals, .. } = CountModel::from_corpus(&corpus, k)?;
        let partition = DataPartition::new(0, corpus.documents);
        let doc_topics = partition
            .documents
            .iter()
            .map(|d| DocTopicCounts::from_assignments(&d.assignments, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            hyper,
            partition,
            doc_topics,
            rows,
            totals,
            rng: RngStream::for_worker(seed, 0),
            num_tokens,
            iteration: 0,
        })
    }

    fn report(&self, started: Instant, counters: PassCounters) -> RoundReport {
        RoundReport {
            iteration: self.iteration,
            round: 0,
            wall_seconds: started.elapsed().as_secs_f64(),
            tokens: counters.tokens,
            counters,
            delta_start: 0.0,
            delta_end: 0.0,
            traffic: Default::default(),
            memory: self.memory(),
        }
    }

    fn memory(&self) -> MemoryReport {
        let word_topic: usize = self.rows.iter().map(WordTopicRow::nnz).sum();
        MemoryReport {
            workers: vec![WorkerMemory {
                word_topic,
                doc_topic: self.doc_topics.iter().map(DocTopicCounts::nnz).sum(),
                totals: self.totals.len(),
            }],
            shards: vec![word_topic],
        }
    }

    fn doc_states(&self) -> Vec<(&Document, &DocTopicCounts)> {
        self.partition.documents.iter().zip(&self.doc_topics).collect()
    }
}

/// Single-process sweep in term-major order over the inverted index, using
/// the same per-term kernel and random stream as worker 0 of the
/// model-parallel engine.
pub struct SerialEngine {
    state: SerialState,
    visits: VisitLog,
}

impl SerialEngine {
    pub fn new(corpus: Corpus, hyper: Hyperparameters, seed: u64) -> Result<Self> {
        let state = SerialState::new(corpus, hyper, seed)?;
        Ok(Self {
            visits: VisitLog::for_partition(&state.partition),
            state,
        })
    }

    pub fn visits(&self) -> &VisitLog {
        &self.visits
    }
}

impl Engine for SerialEngine {
    fn mode_name(&self) -> &'static str {
        "serial"
    }

    fn num_workers(&self) -> usize {
        1
    }

    fn hyper(&self) -> &Hyperparameters {
        &self.state.hyper
    }

    fn total_tokens(&self) -> u64 {
        self.state.num_tokens
    }

    fn iterations_done(&self) -> usize {
        self.state.iteration
    }

    fn run_iteration(&mut self) -> Result<Vec<RoundReport>> {
        let started = Instant::now();
        let s = &mut self.state;
        let mut counters = PassCounters::default();
        let mut cache = WordCache::new(s.hyper.num_topics());
        self.visits.reset();
        let DataPartition {
            documents,
            inverted,
            ..
        } = &mut s.partition;
        for t in 0..s.rows.len() as TermId {
            sample_term_postings(
                t,
                inverted.postings(t),
                documents,
                &mut s.doc_topics,
                &mut s.rows[t as usize],
                &mut s.totals,
                &mut cache,
                &s.hyper,
                &mut s.rng,
                &mut counters,
                Some(&mut self.visits),
            )?;
        }
        s.iteration += 1;
        Ok(vec![s.report(started, counters)])
    }

    fn rows(&self) -> Result<Vec<WordTopicRow>> {
        Ok(self.state.rows.clone())
    }

    fn totals(&self) -> TopicTotals {
        self.state.totals.clone()
    }

    fn doc_states(&self) -> Vec<(&Document, &DocTopicCounts)> {
        self.state.doc_states()
    }

    fn memory(&self) -> MemoryReport {
        self.state.memory()
    }
}

/// Single-process document-major sweep with the three-bucket sampler. The
/// reference for the data-parallel baseline with one worker.
pub struct ForwardSerialEngine {
    state: SerialState,
    sampler: AbcSampler,
}

impl ForwardSerialEngine {
    pub fn new(corpus: Corpus, hyper: Hyperparameters, seed: u64) -> Result<Self> {
        let state = SerialState::new(corpus, hyper, seed)?;
        let sampler = AbcSampler::new(&state.totals, &state.hyper, &mut PassCounters::default())?;
        Ok(Self { state, sampler })
    }
}

impl Engine for ForwardSerialEngine {
    fn mode_name(&self) -> &'static str {
        "serial-forward"
    }

    fn num_workers(&self) -> usize {
        1
    }

    fn hyper(&self) -> &Hyperparameters {
        &self.state.hyper
    }

    fn total_tokens(&self) -> u64 {
        self.state.num_tokens
    }

    fn iterations_done(&self) -> usize {
        self.state.iteration
    }

    fn run_iteration(&mut self) -> Result<Vec<RoundReport>> {
        let started = Instant::now();
        let s = &mut self.state;
        let mut counters = PassCounters::default();
        for (doc, counts) in s.partition.documents.iter_mut().zip(&mut s.doc_topics) {
            if doc.is_empty() {
                continue;
            }
            self.sampler.enter_document(counts, &s.totals, &s.hyper, &mut counters);
            for n in 0..doc.len() {
                let t = doc.tokens[n] as usize;
                doc.assignments[n] = self.sampler.resample(
                    counts,
                    &mut s.rows[t],
                    &mut s.totals,
                    doc.assignments[n],
                    &s.hyper,
                    &mut s.rng,
                    &mut counters,
                )?;
            }
            self.sampler.leave_document(counts, &s.totals, &s.hyper, &mut counters);
        }
        s.iteration += 1;
        Ok(vec![s.report(started, counters)])
    }

    fn rows(&self) -> Result<Vec<WordTopicRow>> {
        Ok(self.state.rows.clone())
    }

    fn totals(&self) -> TopicTotals {
        self.state.totals.clone()
    }

    fn doc_states(&self) -> Vec<(&Document, &DocTopicCounts)> {
        self.state.doc_states()
    }

    fn memory(&self) -> MemoryReport {
        self.state.memory()
    }
}
