//! Count statistics of collapsed LDA and the vocabulary-block view of the
//! word-topic table.

use crate::corpus::{Corpus, TermId, TopicId};
use crate::error::{Error, Result};

pub const DEFAULT_BETA: f64 = 0.01;

/// Symmetric-beta, per-topic-alpha Dirichlet priors.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    alpha: Vec<f64>,
    alpha_sum: f64,
    beta: f64,
    beta_sum: f64,
    vocab_size: usize,
}

impl Hyperparameters {
    /// Symmetric alpha. `None` selects the conventional `50 / K`.
    pub fn symmetric(
        num_topics: usize,
        vocab_size: usize,
        alpha: Option<f64>,
        beta: f64,
    ) -> Result<Self> {
        if num_topics == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        let a = alpha.unwrap_or(50.0 / num_topics as f64);
        Self::new(vec![a; num_topics], vocab_size, beta)
    }

    pub fn new(alpha: Vec<f64>, vocab_size: usize, beta: f64) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::Config("every alpha_k must be positive and finite".into()));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config("beta must be positive and finite".into()));
        }
        let alpha_sum = alpha.iter().sum();
        Ok(Self {
            alpha,
            alpha_sum,
            beta,
            beta_sum: vocab_size as f64 * beta,
            vocab_size,
        })
    }

    pub fn num_topics(&self) -> usize {
        self.alpha.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_sum(&self) -> f64 {
        self.alpha_sum
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `V * beta`, the smoothing mass in every topic's denominator.
    pub fn beta_sum(&self) -> f64 {
        self.beta_sum
    }
}

fn underflow(what: &str, k: TopicId) -> Error {
    Error::Protocol(format!("{what} count for topic {k} would go negative"))
}

/// Per-document topic counts `C_d^k`. Small documents keep a sparse list
/// sorted by topic; once more than half of the topics are in use the row
/// switches to a dense vector, and back once usage falls below a quarter. A
/// dense scan therefore never costs more than `4 K_d`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocTopicCounts {
    repr: DocRepr,
    num_topics: usize,
    total: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum DocRepr {
    Sparse(Vec<(TopicId, u32)>),
    Dense { counts: Vec<u32>, nnz: usize },
}

impl DocTopicCounts {
    pub fn new(num_topics: usize) -> Self {
        Self {
            repr: DocRepr::Sparse(Vec::new()),
            num_topics,
            total: 0,
        }
    }

    pub fn from_assignments(assignments: &[TopicId], num_topics: usize) -> Result<Self> {
        let mut row = Self::new(num_topics);
        for &z in assignments {
            if z as usize >= num_topics {
                return Err(Error::Invariant(format!(
                    "assignment {z} outside 0..{num_topics}"
                )));
            }
            row.increment(z);
        }
        Ok(row)
    }

    pub fn get(&self, k: TopicId) -> u32 {
        match &self.repr {
            DocRepr::Sparse(e) => e
                .binary_search_by_key(&k, |&(t, _)| t)
                .map(|i| e[i].1)
                .unwrap_or(0),
            DocRepr::Dense { counts, .. } => counts[k as usize],
        }
    }

    /// Number of nonzero topics, `K_d`.
    pub fn nnz(&self) -> usize {
        match &self.repr {
            DocRepr::Sparse(e) => e.len(),
            DocRepr::Dense { nnz, .. } => *nnz,
        }
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.repr, DocRepr::Dense { .. })
    }

    /// Entries visited by one pass of [`Self::iter`].
    pub fn scan_cost(&self) -> usize {
        match &self.repr {
            DocRepr::Sparse(e) => e.len(),
            DocRepr::Dense { counts, .. } => counts.len(),
        }
    }

    /// Nonzero `(topic, count)` pairs in ascending topic order.
    pub fn iter(&self) -> DocTopicIter<'_> {
        match &self.repr {
            DocRepr::Sparse(e) => DocTopicIter::Sparse(e.iter()),
            DocRepr::Dense { counts, .. } => DocTopicIter::Dense(counts.iter().enumerate()),
        }
    }

    pub fn increment(&mut self, k: TopicId) {
        debug_assert!((k as usize) < self.num_topics);
        self.total += 1;
        match &mut self.repr {
            DocRepr::Sparse(e) => {
                match e.binary_search_by_key(&k, |&(t, _)| t) {
                    Ok(i) => e[i].1 += 1,
                    Err(i) => e.insert(i, (k, 1)),
                }
                if e.len() * 2 > self.num_topics {
                    let mut counts = vec![0u32; self.num_topics];
                    for &(t, c) in e.iter() {
                        counts[t as usize] = c;
                    }
                    let nnz = e.len();
                    self.repr = DocRepr::Dense { counts, nnz };
                }
            }
            DocRepr::Dense { counts, nnz } => {
                if counts[k as usize] == 0 {
                    *nnz += 1;
                }
                counts[k as usize] += 1;
            }
        }
    }

    pub fn decrement(&mut self, k: TopicId) -> Result<()> {
        match &mut self.repr {
            DocRepr::Sparse(e) => {
                let i = e
                    .binary_search_by_key(&k, |&(t, _)| t)
                    .map_err(|_| underflow("doc-topic", k))?;
                e[i].1 -= 1;
                if e[i].1 == 0 {
                    e.remove(i);
                }
            }
            DocRepr::Dense { counts, nnz } => {
                let c = counts
                    .get_mut(k as usize)
                    .filter(|c| **c > 0)
                    .ok_or_else(|| underflow("doc-topic", k))?;
                *c -= 1;
                if *c == 0 {
                    *nnz -= 1;
                    if *nnz * 4 < self.num_topics {
                        let sparse = counts
                            .iter()
                            .enumerate()
                            .filter(|(_, &c)| c > 0)
                            .map(|(t, &c)| (t as TopicId, c))
                            .collect();
                        self.repr = DocRepr::Sparse(sparse);
                    }
                }
            }
        }
        self.total -= 1;
        Ok(())
    }
}

pub enum DocTopicIter<'a> {
    Sparse(std::slice::Iter<'a, (TopicId, u32)>),
    Dense(std::iter::Enumerate<std::slice::Iter<'a, u32>>),
}

impl Iterator for DocTopicIter<'_> {
    type Item = (TopicId, u32);

    fn next(&mut self) -> Option<Self::Item> {
        match self {
            DocTopicIter::Sparse(it) => it.next().copied(),
            DocTopicIter::Dense(it) => it
                .find(|(_, &c)| c > 0)
                .map(|(k, &c)| (k as TopicId, c)),
        }
    }
}

/// Sparse row of `C_k^t` for one term. Entries are ordered by descending
/// count, ties by ascending topic, and never hold a zero.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WordTopicRow {
    entries: Vec<(TopicId, u32)>,
}

#[inline]
fn precedes(a: (TopicId, u32), b: (TopicId, u32)) -> bool {
    a.1 > b.1 || (a.1 == b.1 && a.0 < b.0)
}

impl WordTopicRow {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a row from arbitrary `(topic, count)` pairs, summing duplicates
    /// and dropping zeros.
    pub fn from_pairs<I: IntoIterator<Item = (TopicId, u32)>>(pairs: I) -> Self {
        let mut entries: Vec<(TopicId, u32)> = Vec::new();
        let mut sorted: Vec<(TopicId, u32)> = pairs.into_iter().filter(|p| p.1 > 0).collect();
        sorted.sort_unstable_by_key(|p| p.0);
        for (k, c) in sorted {
            match entries.last_mut() {
                Some(last) if last.0 == k => last.1 += c,
                _ => entries.push((k, c)),
            }
        }
        entries.sort_unstable_by(|&a, &b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        Self { entries }
    }

    pub fn get(&self, k: TopicId) -> u32 {
        self.entries
            .iter()
            .find(|e| e.0 == k)
            .map(|e| e.1)
            .unwrap_or(0)
    }

    /// Number of nonzero topics, `K_t`.
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.1 as u64).sum()
    }

    pub fn entries(&self) -> &[(TopicId, u32)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn increment(&mut self, k: TopicId) {
        let mut i = match self.entries.iter().position(|e| e.0 == k) {
            Some(i) => {
                self.entries[i].1 += 1;
                i
            }
            None => {
                self.entries.push((k, 1));
                self.entries.len() - 1
            }
        };
        while i > 0 && precedes(self.entries[i], self.entries[i - 1]) {
            self.entries.swap(i, i - 1);
            i -= 1;
        }
    }

    pub fn decrement(&mut self, k: TopicId) -> Result<()> {
        let mut i = self
            .entries
            .iter()
            .position(|e| e.0 == k)
            .ok_or_else(|| underflow("word-topic", k))?;
        self.entries[i].1 -= 1;
        if self.entries[i].1 == 0 {
            self.entries.remove(i);
            return Ok(());
        }
        while i + 1 < self.entries.len() && precedes(self.entries[i + 1], self.entries[i]) {
            self.entries.swap(i, i + 1);
            i += 1;
        }
        Ok(())
    }

    /// Adds a signed delta to one topic, keeping the row canonical.
    pub fn apply_delta(&mut self, k: TopicId, delta: i64) -> Result<()> {
        let current = self.get(k) as i64;
        let updated = current + delta;
        if updated < 0 || updated > u32::MAX as i64 {
            return Err(underflow("word-topic", k));
        }
        if let Some(i) = self.entries.iter().position(|e| e.0 == k) {
            self.entries.remove(i);
        }
        if updated > 0 {
            let entry = (k, updated as u32);
            let at = self
                .entries
                .iter()
                .position(|&e| precedes(entry, e))
                .unwrap_or(self.entries.len());
            self.entries.insert(at, entry);
        }
        Ok(())
    }

    pub fn is_canonical(&self) -> bool {
        self.entries.iter().all(|e| e.1 > 0)
            && self.entries.windows(2).all(|w| precedes(w[0], w[1]))
    }
}

/// Dense `C_k` vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicTotals {
    counts: Vec<u32>,
}

impl TopicTotals {
    pub fn zeros(num_topics: usize) -> Self {
        Self {
            counts: vec![0; num_topics],
        }
    }

    pub fn from_counts(counts: Vec<u32>) -> Self {
        Self { counts }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn get(&self, k: TopicId) -> u32 {
        self.counts[k as usize]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.counts
    }

    pub fn sum(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn increment(&mut self, k: TopicId) {
        self.counts[k as usize] += 1;
    }

    pub fn decrement(&mut self, k: TopicId) -> Result<()> {
        let c = &mut self.counts[k as usize];
        if *c == 0 {
            return Err(underflow("topic-total", k));
        }
        *c -= 1;
        Ok(())
    }

    /// Elementwise `self - base`.
    pub fn delta_from(&self, base: &TopicTotals) -> Vec<i64> {
        self.counts
            .iter()
            .zip(&base.counts)
            .map(|(&a, &b)| a as i64 - b as i64)
            .collect()
    }

    pub fn apply_delta(&mut self, delta: &[i64]) -> Result<()> {
        if delta.len() != self.counts.len() {
            return Err(Error::Shape {
                expected: self.counts.len(),
                got: delta.len(),
            });
        }
        let mut next = Vec::with_capacity(self.counts.len());
        for (k, (&c, &d)) in self.counts.iter().zip(delta).enumerate() {
            let v = c as i64 + d;
            if v < 0 || v > u32::MAX as i64 {
                return Err(Error::Invariant(format!(
                    "topic total {k} would become {v} after delta"
                )));
            }
            next.push(v as u32);
        }
        self.counts = next;
        Ok(())
    }
}

/// Removes one token of topic `k` from the three count structures. Nothing is
/// modified if any of them would underflow.
pub fn decrement(
    doc: &mut DocTopicCounts,
    row: &mut WordTopicRow,
    totals: &mut TopicTotals,
    k: TopicId,
) -> Result<()> {
    if doc.get(k) == 0 || row.get(k) == 0 || totals.get(k) == 0 {
        return Err(Error::Protocol(format!(
            "decrement of topic {k} with counts doc={} word={} total={}",
            doc.get(k),
            row.get(k),
            totals.get(k)
        )));
    }
    doc.decrement(k)?;
    row.decrement(k)?;
    totals.decrement(k)
}

pub fn increment(doc: &mut DocTopicCounts, row: &mut WordTopicRow, totals: &mut TopicTotals, k: TopicId) {
    doc.increment(k);
    row.increment(k);
    totals.increment(k);
}

/// All three count structures for a whole corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountModel {
    pub doc_topics: Vec<DocTopicCounts>,
    pub rows: Vec<WordTopicRow>,
    pub totals: TopicTotals,
}

impl CountModel {
    /// Tallies counts from the corpus's current assignments.
    pub fn from_corpus(corpus: &Corpus, num_topics: usize) -> Result<Self> {
        corpus.check(Some(num_topics))?;
        let mut rows = vec![WordTopicRow::new(); corpus.vocab_size()];
        let mut totals = TopicTotals::zeros(num_topics);
        let mut doc_topics = Vec::with_capacity(corpus.num_docs());
        for doc in &corpus.documents {
            doc_topics.push(DocTopicCounts::from_assignments(&doc.assignments, num_topics)?);
            for (&t, &z) in doc.tokens.iter().zip(&doc.assignments) {
                rows[t as usize].increment(z);
                totals.increment(z);
            }
        }
        Ok(Self {
            doc_topics,
            rows,
            totals,
        })
    }

    pub fn num_topics(&self) -> usize {
        self.totals.len()
    }

    pub fn word_topic_nonzeros(&self) -> usize {
        self.rows.iter().map(WordTopicRow::nnz).sum()
    }

    /// Checks `sum_k C_d^k = N_d`, `sum_t C_k^t = C_k` and `sum_k C_k = N`.
    pub fn check_conservation(&self, doc_lengths: &[usize]) -> Result<()> {
        if doc_lengths.len() != self.doc_topics.len() {
            return Err(Error::Shape {
                expected: self.doc_topics.len(),
                got: doc_lengths.len(),
            });
        }
        for (d, (counts, &len)) in self.doc_topics.iter().zip(doc_lengths).enumerate() {
            let sum: u64 = counts.iter().map(|(_, c)| c as u64).sum();
            if sum != len as u64 || counts.total() as usize != len {
                return Err(Error::Invariant(format!(
                    "document {d}: doc-topic counts sum to {sum}, expected {len}"
                )));
            }
        }
        let mut column = vec![0u64; self.num_topics()];
        for (t, row) in self.rows.iter().enumerate() {
            if !row.is_canonical() {
                return Err(Error::Invariant(format!("row {t} is not canonical")));
            }
            for &(k, c) in row.entries() {
                column[k as usize] += c as u64;
            }
        }
        for (k, (&col, &tot)) in column.iter().zip(self.totals.as_slice()).enumerate() {
            if col != tot as u64 {
                return Err(Error::Invariant(format!(
                    "topic {k}: word-topic column sums to {col}, total says {tot}"
                )));
            }
        }
        let n: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        if self.totals.sum() != n {
            return Err(Error::Invariant(format!(
                "topic totals sum to {}, corpus has {n} tokens",
                self.totals.sum()
            )));
        }
        Ok(())
    }
}

/// Disjoint vocabulary blocks `V_0..V_{M-1}` covering `0..V`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    blocks: Vec<Vec<TermId>>,
    owner: Vec<u32>,
}

impl BlockPartition {
    /// Validates that `blocks` are disjoint and cover `0..vocab_size`.
    pub fn new(mut blocks: Vec<Vec<TermId>>, vocab_size: usize) -> Result<Self> {
        let mut owner = vec![u32::MAX; vocab_size];
        for (b, block) in blocks.iter_mut().enumerate() {
            block.sort_unstable();
            for &t in block.iter() {
                let slot = owner.get_mut(t as usize).ok_or_else(|| {
                    Error::Config(format!("block {b} contains term {t} outside vocabulary"))
                })?;
                if *slot != u32::MAX {
                    return Err(Error::Config(format!(
                        "term {t} appears in blocks {} and {b}",
                        *slot
                    )));
                }
                *slot = b as u32;
            }
        }
        if let Some(t) = owner.iter().position(|&o| o == u32::MAX) {
            return Err(Error::Config(format!("term {t} is not covered by any block")));
        }
        Ok(Self { blocks, owner })
    }

    /// Contiguous id ranges of near-equal size.
    pub fn contiguous(vocab_size: usize, num_blocks: usize) -> Result<Self> {
        if num_blocks == 0 {
            return Err(Error::Config("block count must be at least 1".into()));
        }
        let blocks = (0..num_blocks)
            .map(|b| {
                let lo = b * vocab_size / num_blocks;
                let hi = (b + 1) * vocab_size / num_blocks;
                (lo as TermId..hi as TermId).collect()
            })
            .collect();
        Self::new(blocks, vocab_size)
    }

    /// Terms sorted by descending frequency are dealt to blocks in serpentine
    /// order (0..M-1, then M-1..0, ...), so each block receives a comparable
    /// share of frequent terms.
    pub fn frequency_balanced(frequencies: &[u64], num_blocks: usize) -> Result<Self> {
        if num_blocks == 0 {
            return Err(Error::Config("block count must be at least 1".into()));
        }
        let mut order: Vec<TermId> = (0..frequencies.len() as TermId).collect();
        order.sort_by(|&a, &b| {
            frequencies[b as usize]
                .cmp(&frequencies[a as usize])
                .then(a.cmp(&b))
        });
        let mut blocks = vec![Vec::new(); num_blocks];
        for (rank, t) in order.into_iter().enumerate() {
            let lap = rank / num_blocks;
            let pos = rank % num_blocks;
            let b = if lap.is_multiple_of(2) { pos } else { num_blocks - 1 - pos };
            blocks[b].push(t);
        }
        Self::new(blocks, frequencies.len())
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, b: usize) -> &[TermId] {
        &self.blocks[b]
    }

    pub fn blocks(&self) -> &[Vec<TermId>] {
        &self.blocks
    }

    pub fn block_of(&self, t: TermId) -> usize {
        self.owner[t as usize] as usize
    }
}

/// The rows of one vocabulary block, as moved between store and workers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelBlock {
    pub id: u32,
    pub version: u64,
    terms: Vec<TermId>,
    rows: Vec<WordTopicRow>,
}

impl ModelBlock {
    pub fn new(id: u32, version: u64, terms: Vec<TermId>, rows: Vec<WordTopicRow>) -> Result<Self> {
        if terms.len() != rows.len() {
            return Err(Error::Shape {
                expected: terms.len(),
                got: rows.len(),
            });
        }
        if !terms.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Invariant(format!(
                "block {id} terms must be strictly ascending"
            )));
        }
        Ok(Self {
            id,
            version,
            terms,
            rows,
        })
    }

    pub fn terms(&self) -> &[TermId] {
        &self.terms
    }

    pub fn rows(&self) -> &[WordTopicRow] {
        &self.rows
    }

    pub fn contains(&self, t: TermId) -> bool {
        self.terms.binary_search(&t).is_ok()
    }

    pub fn row(&self, t: TermId) -> Option<&WordTopicRow> {
        self.terms.binary_search(&t).ok().map(|i| &self.rows[i])
    }

    pub fn row_mut(&mut self, t: TermId) -> Option<&mut WordTopicRow> {
        self.terms.binary_search(&t).ok().map(|i| &mut self.rows[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (TermId, &WordTopicRow)> {
        self.terms.iter().copied().zip(&self.rows)
    }

    pub fn nonzeros(&self) -> usize {
        self.rows.iter().map(WordTopicRow::nnz).sum()
    }
}

/// Distributes full-vocabulary rows into the blocks of `partition`.
pub fn slice_blocks(rows: &[WordTopicRow], partition: &BlockPartition) -> Result<Vec<ModelBlock>> {
    if rows.len() != partition.owner.len() {
        return Err(Error::Shape {
            expected: partition.owner.len(),
            got: rows.len(),
        });
    }
    partition
        .blocks()
        .iter()
        .enumerate()
        .map(|(b, terms)| {
            let block_rows = terms.iter().map(|&t| rows[t as usize].clone()).collect();
            ModelBlock::new(b as u32, 0, terms.clone(), block_rows)
        })
        .collect()
}

/// Reassembles full-vocabulary rows; blocks must be disjoint and cover `0..vocab_size`.
pub fn merge_blocks<'a, I>(blocks: I, vocab_size: usize) -> Result<Vec<WordTopicRow>>
where
    I: IntoIterator<Item = &'a ModelBlock>,
{
    let mut rows: Vec<Option<WordTopicRow>> = vec![None; vocab_size];
    for block in blocks {
        for (t, row) in block.iter() {
            let slot = rows.get_mut(t as usize).ok_or_else(|| {
                Error::Config(format!("block {} holds term {t} outside vocabulary", block.id))
            })?;
            if slot.is_some() {
                return Err(Error::Config(format!("term {t} present in two blocks")));
            }
            *slot = Some(row.clone());
        }
    }
    rows.into_iter()
        .enumerate()
        .map(|(t, r)| r.ok_or_else(|| Error::Config(format!("term {t} missing from blocks"))))
        .collect()
}
