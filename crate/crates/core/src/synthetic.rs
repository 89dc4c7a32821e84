//! Planted-topic corpora for checking that inference recovers known topics.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Gamma;

use crate::corpus::{Corpus, Document, TermId, Vocabulary};
use crate::error::{Error, Result};
use crate::model::WordTopicRow;
use crate::sampler::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub num_docs: usize,
    pub vocab_size: usize,
    pub num_topics: usize,
    /// Probability mass spread uniformly over the whole vocabulary.
    pub noise: f64,
    /// Symmetric Dirichlet parameter for document mixtures.
    pub doc_concentration: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            num_docs: 1000,
            vocab_size: 1000,
            num_topics: 10,
            noise: 0.05,
            doc_concentration: 0.2,
            min_len: 40,
            max_len: 80,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub corpus: Corpus,
    /// One distribution over the vocabulary per planted topic.
    pub topics: Vec<Vec<f64>>,
}

/// Topic `k` owns the contiguous range of `V / K` terms starting at
/// `k V / K`, weighted `1 / (rank + 1)` within the range.
pub fn planted_topics(spec: &PlantedSpec) -> Vec<Vec<f64>> {
    let (v, k) = (spec.vocab_size, spec.num_topics);
    (0..k)
        .map(|topic| {
            let lo = topic * v / k;
            let hi = (topic + 1) * v / k;
            let norm: f64 = (0..hi - lo).map(|r| 1.0 / (r as f64 + 1.0)).sum();
            let mut phi = vec![spec.noise / v as f64; v];
            for (r, p) in phi[lo..hi].iter_mut().enumerate() {
                *p += (1.0 - spec.noise) / (r as f64 + 1.0) / norm;
            }
            phi
        })
        .collect()
}

pub fn generate(spec: &PlantedSpec, seed: u64) -> Result<PlantedCorpus> {
    if spec.num_topics == 0 || spec.vocab_size < spec.num_topics {
        return Err(Error::Config(format!(
            "cannot plant {} topics in {} terms",
            spec.num_topics, spec.vocab_size
        )));
    }
    if spec.min_len > spec.max_len || !(0.0..=1.0).contains(&spec.noise) {
        return Err(Error::Config("invalid planted corpus parameters".into()));
    }
    let topics = planted_topics(spec);
    let words: Vec<WeightedIndex<f64>> = topics
        .iter()
        .map(|phi| WeightedIndex::new(phi).expect("positive weights"))
        .collect();
    let gamma = Gamma::new(spec.doc_concentration, 1.0)
        .map_err(|e| Error::Config(format!("document concentration: {e}")))?;
    let mut rng = RngStream::new(seed, 0);
    let rng = rng.inner();
    let mut documents = Vec::with_capacity(spec.num_docs);
    for d in 0..spec.num_docs {
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let mut theta: Vec<f64> = (0..spec.num_topics).map(|_| gamma.sample(rng)).collect();
        if theta.iter().sum::<f64>() <= 0.0 {
            theta.iter_mut().for_each(|x| *x = 1.0);
        }
        let mixture = WeightedIndex::new(&theta).map_err(|e| Error::Numerical(e.to_string()))?;
        let tokens: Vec<TermId> = (0..len)
            .map(|_| words[mixture.sample(rng)].sample(rng) as TermId)
            .collect();
        documents.push(Document::new(d as u32, tokens));
    }
    Ok(PlantedCorpus {
        corpus: Corpus::new(documents, Vocabulary::numbered(spec.vocab_size)),
        topics,
    })
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// For every planted topic, the best cosine similarity against the learned
/// topic-word count columns.
pub fn topic_recovery(planted: &[Vec<f64>], rows: &[WordTopicRow], num_topics: usize) -> Vec<f64> {
    let mut learned = vec![vec![0.0; rows.len()]; num_topics];
    for (t, row) in rows.iter().enumerate() {
        for &(k, c) in row.entries() {
            learned[k as usize][t] = c as f64;
        }
    }
    planted
        .iter()
        .map(|phi| {
            learned
                .iter()
                .map(|col| cosine(phi, col))
                .fold(0.0, f64::max)
        })
        .collect()
}
