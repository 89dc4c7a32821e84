//! Collapsed Gibbs conditionals: the dense reference, the document-sparse
//! three-bucket sampler for forward (document-major) sweeps, and the
//! two-bucket word-cached sampler used on the inverted index.

mod abc;
mod dense;
mod xy;

pub use abc::AbcSampler;
pub use dense::{dense_conditional, sample_dense, DenseConditional};
pub use xy::{gibbs_pass_inverted, sample_sparse_xy, sample_term_postings, WordCache};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::DataPartition;

/// Relative tolerance for comparing a cached mass with a fresh recomputation.
pub const CACHE_TOLERANCE: f64 = 1e-10;

pub(crate) fn within_cache_tolerance(cached: f64, fresh: f64) -> bool {
    (cached - fresh).abs() <= CACHE_TOLERANCE * fresh.abs().max(1.0)
}

/// Seeded, portable random stream. Streams with the same seed and different
/// ids are independent.
#[derive(Debug, Clone)]
pub struct RngStream(ChaCha8Rng);

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self(rng)
    }

    pub fn for_worker(seed: u64, worker: usize) -> Self {
        Self::new(seed, worker as u64)
    }

    /// Stream used for the initial topic assignment.
    pub fn for_initialization(seed: u64) -> Self {
        Self::new(seed, u64::MAX)
    }

    /// Uniform draw in `[0, mass)`.
    #[inline]
    pub fn draw_uniform(&mut self, mass: f64) -> f64 {
        self.0.random::<f64>() * mass
    }

    pub fn inner(&mut self) -> &mut ChaCha8Rng {
        &mut self.0
    }
}

/// Which additive bucket a draw landed in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BucketHits {
    /// Term-sparse bucket (`C` in the three-bucket form).
    pub word: u64,
    /// Document-sparse bucket (`B`, or `Y` in the two-bucket form).
    pub doc: u64,
    /// Dense smoothing bucket (`A`, or `X`).
    pub smoothing: u64,
}

/// Instrumentation exposed to metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PassCounters {
    pub tokens: u64,
    /// Topic entries read or written while building conditionals, including
    /// O(1) cache maintenance around each token.
    pub entries_touched: u64,
    /// Entries read while walking a bucket to locate the draw.
    pub walk_steps: u64,
    /// Entries read when a per-word cache is rebuilt (O(K) once per term).
    pub cache_rebuild_entries: u64,
    pub hits: BucketHits,
}

impl PassCounters {
    pub fn merge(&mut self, other: &PassCounters) {
        self.tokens += other.tokens;
        self.entries_touched += other.entries_touched;
        self.walk_steps += other.walk_steps;
        self.cache_rebuild_entries += other.cache_rebuild_entries;
        self.hits.word += other.hits.word;
        self.hits.doc += other.hits.doc;
        self.hits.smoothing += other.hits.smoothing;
    }
}

/// Per-token resample counts for one partition.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VisitLog {
    counts: Vec<Vec<u32>>,
}

impl VisitLog {
    pub fn for_partition(partition: &DataPartition) -> Self {
        Self {
            counts: partition
                .documents
                .iter()
                .map(|d| vec![0; d.len()])
                .collect(),
        }
    }

    #[inline]
    pub fn record(&mut self, doc: usize, pos: usize) {
        self.counts[doc][pos] += 1;
    }

    pub fn reset(&mut self) {
        for doc in &mut self.counts {
            doc.iter_mut().for_each(|c| *c = 0);
        }
    }

    /// True iff every token was visited exactly `times` times.
    pub fn all_equal(&self, times: u32) -> bool {
        self.counts.iter().flatten().all(|&c| c == times)
    }

    pub fn counts(&self) -> &[Vec<u32>] {
        &self.counts
    }
}
