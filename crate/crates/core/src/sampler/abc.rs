use crate::corpus::TopicId;
use crate::error::{Error, Result};
use crate::model::{self, DocTopicCounts, Hyperparameters, TopicTotals, WordTopicRow};

use super::{within_cache_tolerance, PassCounters, RngStream};

/// Three-bucket sampler for document-major sweeps:
///
/// ```text
/// p(k) ∝ alpha_k beta / (C_k + Vb)          smoothing, dense, mass cached globally
///      + beta C_d^k / (C_k + Vb)            document bucket, mass cached per document
///      + (alpha_k + C_d^k) C_k^t / (C_k + Vb)  word bucket, built from the sparse row
/// ```
///
/// `coef[k] = (alpha_k + C_d^k) / (C_k + Vb)` is kept for every topic; only
/// the current document's nonzero topics deviate from `alpha_k / (C_k + Vb)`.
#[derive(Debug, Clone)]
pub struct AbcSampler {
    coef: Vec<f64>,
    smoothing_mass: f64,
    doc_mass: f64,
    in_document: bool,
}

#[inline]
fn denom(total: u32, hyper: &Hyperparameters) -> f64 {
    total as f64 + hyper.beta_sum()
}

impl AbcSampler {
    pub fn new(totals: &TopicTotals, hyper: &Hyperparameters, counters: &mut PassCounters) -> Result<Self> {
        if totals.len() != hyper.num_topics() {
            return Err(Error::Shape {
                expected: hyper.num_topics(),
                got: totals.len(),
            });
        }
        let beta = hyper.beta();
        let mut coef = Vec::with_capacity(totals.len());
        let mut smoothing_mass = 0.0;
        for (k, &c) in totals.as_slice().iter().enumerate() {
            let d = denom(c, hyper);
            coef.push(hyper.alpha()[k] / d);
            smoothing_mass += hyper.alpha()[k] * beta / d;
        }
        counters.cache_rebuild_entries += totals.len() as u64;
        Ok(Self {
            coef,
            smoothing_mass,
            doc_mass: 0.0,
            in_document: false,
        })
    }

    pub fn smoothing_mass(&self) -> f64 {
        self.smoothing_mass
    }

    pub fn doc_mass(&self) -> f64 {
        self.doc_mass
    }

    pub fn enter_document(
        &mut self,
        doc: &DocTopicCounts,
        totals: &TopicTotals,
        hyper: &Hyperparameters,
        counters: &mut PassCounters,
    ) {
        debug_assert!(!self.in_document);
        self.doc_mass = 0.0;
        for (k, c) in doc.iter() {
            let d = denom(totals.get(k), hyper);
            self.doc_mass += hyper.beta() * c as f64 / d;
            self.coef[k as usize] = (hyper.alpha()[k as usize] + c as f64) / d;
        }
        counters.entries_touched += doc.scan_cost() as u64;
        self.in_document = true;
    }

    pub fn leave_document(
        &mut self,
        doc: &DocTopicCounts,
        totals: &TopicTotals,
        hyper: &Hyperparameters,
        counters: &mut PassCounters,
    ) {
        for (k, _) in doc.iter() {
            self.coef[k as usize] = hyper.alpha()[k as usize] / denom(totals.get(k), hyper);
        }
        counters.entries_touched += doc.scan_cost() as u64;
        self.doc_mass = 0.0;
        self.in_document = false;
    }

    /// Moves topic `k`'s cached contributions from `(doc count, total)` `before`
    /// to `after`. O(1).
    pub fn update_topic(&mut self, k: TopicId, before: (u32, u32), after: (u32, u32), hyper: &Hyperparameters) {
        let alpha = hyper.alpha()[k as usize];
        let beta = hyper.beta();
        let d_old = denom(before.1, hyper);
        let d_new = denom(after.1, hyper);
        self.smoothing_mass += alpha * beta / d_new - alpha * beta / d_old;
        if self.in_document {
            self.doc_mass += beta * after.0 as f64 / d_new - beta * before.0 as f64 / d_old;
        }
        self.coef[k as usize] = (alpha + after.0 as f64) / d_new;
    }

    /// Draws a topic for a token whose counts are already excluded.
    pub fn sample(
        &self,
        doc: &DocTopicCounts,
        row: &WordTopicRow,
        totals: &TopicTotals,
        hyper: &Hyperparameters,
        rng: &mut RngStream,
        counters: &mut PassCounters,
    ) -> Result<TopicId> {
        let word_mass: f64 = row
            .entries()
            .iter()
            .map(|&(k, c)| self.coef[k as usize] * c as f64)
            .sum();
        counters.entries_touched += row.nnz() as u64;
        let total = word_mass + self.doc_mass + self.smoothing_mass;
        if !total.is_finite() || total <= 0.0 {
            return Err(Error::Numerical(format!("conditional mass {total}")));
        }
        let mut u = rng.draw_uniform(total);

        if u < word_mass {
            counters.hits.word += 1;
            let mut last = None;
            for &(k, c) in row.entries() {
                counters.walk_steps += 1;
                last = Some(k);
                u -= self.coef[k as usize] * c as f64;
                if u < 0.0 {
                    return Ok(k);
                }
            }
            if let Some(k) = last {
                return Ok(k);
            }
        }
        u = (u - word_mass).max(0.0);

        if u < self.doc_mass {
            counters.hits.doc += 1;
            let mut last = None;
            for (k, c) in doc.iter() {
                counters.walk_steps += 1;
                last = Some(k);
                u -= hyper.beta() * c as f64 / denom(totals.get(k), hyper);
                if u < 0.0 {
                    return Ok(k);
                }
            }
            if let Some(k) = last {
                return Ok(k);
            }
        }
        u = (u - self.doc_mass).max(0.0);

        counters.hits.smoothing += 1;
        let beta = hyper.beta();
        for (k, &c) in totals.as_slice().iter().enumerate() {
            counters.walk_steps += 1;
            u -= hyper.alpha()[k] * beta / denom(c, hyper);
            if u < 0.0 {
                return Ok(k as TopicId);
            }
        }
        Ok((totals.len() - 1) as TopicId)
    }

    /// Excludes the token (topic `z`), draws a new topic and restores counts.
    #[allow(clippy::too_many_arguments)]
    pub fn resample(
        &mut self,
        doc: &mut DocTopicCounts,
        row: &mut WordTopicRow,
        totals: &mut TopicTotals,
        z: TopicId,
        hyper: &Hyperparameters,
        rng: &mut RngStream,
        counters: &mut PassCounters,
    ) -> Result<TopicId> {
        let before = (doc.get(z), totals.get(z));
        model::decrement(doc, row, totals, z)?;
        self.update_topic(z, before, (doc.get(z), totals.get(z)), hyper);
        let k = self.sample(doc, row, totals, hyper, rng, counters)?;
        let before = (doc.get(k), totals.get(k));
        model::increment(doc, row, totals, k);
        self.update_topic(k, before, (doc.get(k), totals.get(k)), hyper);
        counters.entries_touched += 2;
        counters.tokens += 1;
        Ok(k)
    }

    /// Per-topic `A_k + B_k + C_k` as seen through the cached coefficients.
    pub fn topic_masses(
        &self,
        doc: &DocTopicCounts,
        row: &WordTopicRow,
        totals: &TopicTotals,
        hyper: &Hyperparameters,
    ) -> Vec<f64> {
        let beta = hyper.beta();
        let mut masses: Vec<f64> = totals
            .as_slice()
            .iter()
            .enumerate()
            .map(|(k, &c)| hyper.alpha()[k] * beta / denom(c, hyper))
            .collect();
        for (k, c) in doc.iter() {
            masses[k as usize] += beta * c as f64 / denom(totals.get(k), hyper);
        }
        for &(k, c) in row.entries() {
            masses[k as usize] += self.coef[k as usize] * c as f64;
        }
        masses
    }

    /// Compares every cached quantity with a from-scratch recomputation.
    pub fn check_coherence(
        &self,
        doc: Option<&DocTopicCounts>,
        totals: &TopicTotals,
        hyper: &Hyperparameters,
    ) -> Result<()> {
        let beta = hyper.beta();
        let mut smoothing = 0.0;
        let mut doc_mass = 0.0;
        for (k, &c) in totals.as_slice().iter().enumerate() {
            let d = denom(c, hyper);
            smoothing += hyper.alpha()[k] * beta / d;
            let dc = doc.map(|doc| doc.get(k as TopicId)).unwrap_or(0) as f64;
            doc_mass += beta * dc / d;
            let fresh = (hyper.alpha()[k] + dc) / d;
            if !within_cache_tolerance(self.coef[k], fresh) {
                return Err(Error::Invariant(format!(
                    "word-bucket coefficient for topic {k} is {} but recomputes to {fresh}",
                    self.coef[k]
                )));
            }
        }
        if !within_cache_tolerance(self.smoothing_mass, smoothing) {
            return Err(Error::Invariant(format!(
                "smoothing mass {} recomputes to {smoothing}",
                self.smoothing_mass
            )));
        }
        if !within_cache_tolerance(self.doc_mass, doc_mass) {
            return Err(Error::Invariant(format!(
                "document mass {} recomputes to {doc_mass}",
                self.doc_mass
            )));
        }
        Ok(())
    }
}
