use crate::corpus::{DataPartition, Document, Posting, TermId, TopicId};
use crate::error::{Error, Result};
use crate::model::{self, DocTopicCounts, Hyperparameters, ModelBlock, TopicTotals, WordTopicRow};

use super::{within_cache_tolerance, PassCounters, RngStream, VisitLog};

/// Per-word cache for the two-bucket decomposition
///
/// ```text
/// p(k) ∝ coef_k alpha_k + coef_k C_d^k,   coef_k = (C_k^t + beta) / (C_k + V beta)
/// ```
///
/// Built in O(K) when a worker starts a term's posting list and maintained in
/// O(1) per count change while that term's tokens are resampled. The first
/// (smoothing) bucket's mass is cached; the document bucket is summed over the
/// document's nonzero topics for every token.
#[derive(Debug, Clone)]
pub struct WordCache {
    term: Option<TermId>,
    coef: Vec<f64>,
    x_mass: f64,
}

impl WordCache {
    pub fn new(num_topics: usize) -> Self {
        Self {
            term: None,
            coef: vec![0.0; num_topics],
            x_mass: 0.0,
        }
    }

    pub fn term(&self) -> Option<TermId> {
        self.term
    }

    pub fn x_mass(&self) -> f64 {
        self.x_mass
    }

    pub fn coefficient(&self, k: TopicId) -> f64 {
        self.coef[k as usize]
    }

    pub fn rebuild(
        &mut self,
        term: TermId,
        row: &WordTopicRow,
        totals: &TopicTotals,
        hyper: &Hyperparameters,
        counters: &mut PassCounters,
    ) {
        let beta = hyper.beta();
        let beta_sum = hyper.beta_sum();
        for (k, &c) in totals.as_slice().iter().enumerate() {
            self.coef[k] = beta / (c as f64 + beta_sum);
        }
        for &(k, c) in row.entries() {
            self.coef[k as usize] = (c as f64 + beta) / (totals.get(k) as f64 + beta_sum);
        }
        self.x_mass = self
            .coef
            .iter()
            .zip(hyper.alpha())
            .map(|(c, a)| c * a)
            .sum();
        self.term = Some(term);
        counters.cache_rebuild_entries += (totals.len() + row.nnz()) as u64;
    }

    /// Refreshes topic `k` after `C_k^t` or `C_k` changed. O(1).
    #[inline]
    pub fn update_topic(&mut self, k: TopicId, word_count: u32, total: u32, hyper: &Hyperparameters) {
        let fresh = (word_count as f64 + hyper.beta()) / (total as f64 + hyper.beta_sum());
        let slot = &mut self.coef[k as usize];
        self.x_mass += hyper.alpha()[k as usize] * (fresh - *slot);
        *slot = fresh;
    }

    /// Per-topic `X_k + Y_k` through the cached coefficients.
    pub fn topic_masses(&self, doc: &DocTopicCounts, hyper: &Hyperparameters) -> Vec<f64> {
        let mut masses: Vec<f64> = self
            .coef
            .iter()
            .zip(hyper.alpha())
            .map(|(c, a)| c * a)
            .collect();
        for (k, c) in doc.iter() {
            masses[k as usize] += self.coef[k as usize] * c as f64;
        }
        masses
    }

    pub fn check_coherence(
        &self,
        row: &WordTopicRow,
        totals: &TopicTotals,
        hyper: &Hyperparameters,
    ) -> Result<()> {
        let mut x = 0.0;
        for (k, &c) in totals.as_slice().iter().enumerate() {
            let fresh = (row.get(k as TopicId) as f64 + hyper.beta()) / (c as f64 + hyper.beta_sum());
            if !within_cache_tolerance(self.coef[k], fresh) {
                return Err(Error::Invariant(format!(
                    "word cache coefficient for topic {k} is {} but recomputes to {fresh}",
                    self.coef[k]
                )));
            }
            x += hyper.alpha()[k] * fresh;
        }
        if !within_cache_tolerance(self.x_mass, x) {
            return Err(Error::Invariant(format!(
                "cached smoothing mass {} recomputes to {x}",
                self.x_mass
            )));
        }
        Ok(())
    }
}

/// Draws a topic for a token of the cached word whose counts are already
/// excluded. The document bucket is walked first, then the smoothing bucket.
pub fn sample_sparse_xy(
    doc: &DocTopicCounts,
    cache: &WordCache,
    hyper: &Hyperparameters,
    rng: &mut RngStream,
    counters: &mut PassCounters,
) -> Result<TopicId> {
    let y_mass: f64 = doc
        .iter()
        .map(|(k, c)| cache.coef[k as usize] * c as f64)
        .sum();
    counters.entries_touched += doc.scan_cost() as u64;
    let total = y_mass + cache.x_mass;
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::Numerical(format!("conditional mass {total}")));
    }
    let mut u = rng.draw_uniform(total);

    if u < y_mass {
        counters.hits.doc += 1;
        let mut last = None;
        for (k, c) in doc.iter() {
            counters.walk_steps += 1;
            last = Some(k);
            u -= cache.coef[k as usize] * c as f64;
            if u < 0.0 {
                return Ok(k);
            }
        }
        if let Some(k) = last {
            return Ok(k);
        }
    }
    u = (u - y_mass).max(0.0);

    counters.hits.smoothing += 1;
    for (k, (c, a)) in cache.coef.iter().zip(hyper.alpha()).enumerate() {
        counters.walk_steps += 1;
        u -= c * a;
        if u < 0.0 {
            return Ok(k as TopicId);
        }
    }
    Ok((cache.coef.len() - 1) as TopicId)
}

/// Resamples every posting of `term` in order, rebuilding the word cache
/// first. Shared by the worker pass and the single-process reference sweep.
#[allow(clippy::too_many_arguments)]
pub fn sample_term_postings(
    term: TermId,
    postings: &[Posting],
    documents: &mut [Document],
    doc_topics: &mut [DocTopicCounts],
    row: &mut WordTopicRow,
    totals: &mut TopicTotals,
    cache: &mut WordCache,
    hyper: &Hyperparameters,
    rng: &mut RngStream,
    counters: &mut PassCounters,
    mut visits: Option<&mut VisitLog>,
) -> Result<()> {
    if postings.is_empty() {
        return Ok(());
    }
    cache.rebuild(term, row, totals, hyper, counters);
    for p in postings {
        let (d, n) = (p.doc as usize, p.pos as usize);
        let doc = &mut documents[d];
        debug_assert_eq!(doc.tokens[n], term);
        let z = doc.assignments[n];
        let counts = &mut doc_topics[d];

        model::decrement(counts, row, totals, z)?;
        cache.update_topic(z, row.get(z), totals.get(z), hyper);
        let k = sample_sparse_xy(counts, cache, hyper, rng, counters)?;
        model::increment(counts, row, totals, k);
        cache.update_topic(k, row.get(k), totals.get(k), hyper);
        counters.entries_touched += 2;
        counters.tokens += 1;

        doc.assignments[n] = k;
        if let Some(v) = visits.as_deref_mut() {
            v.record(d, n);
        }
    }
    if cfg!(debug_assertions) {
        cache.check_coherence(row, totals, hyper)?;
    }
    Ok(())
}

/// One worker's share of a round: resamples every local token whose term is in
/// `task`, term by term in ascending order, using the held block's rows and
/// the worker's topic-totals replica. The replica is updated locally only.
#[allow(clippy::too_many_arguments)]
pub fn gibbs_pass_inverted(
    partition: &mut DataPartition,
    doc_topics: &mut [DocTopicCounts],
    block: &mut ModelBlock,
    task: &[TermId],
    totals: &mut TopicTotals,
    hyper: &Hyperparameters,
    rng: &mut RngStream,
    counters: &mut PassCounters,
    mut visits: Option<&mut VisitLog>,
) -> Result<()> {
    if doc_topics.len() != partition.documents.len() {
        return Err(Error::Shape {
            expected: partition.documents.len(),
            got: doc_topics.len(),
        });
    }
    let DataPartition {
        documents,
        inverted,
        ..
    } = partition;
    let mut cache = WordCache::new(hyper.num_topics());
    for &t in task {
        let block_id = block.id;
        let row = block.row_mut(t).ok_or_else(|| {
            Error::Protocol(format!("term {t} is not in held block {block_id}"))
        })?;
        sample_term_postings(
            t,
            inverted.postings(t),
            documents,
            doc_topics,
            row,
            totals,
            &mut cache,
            hyper,
            rng,
            counters,
            visits.as_deref_mut(),
        )?;
    }
    Ok(())
}
