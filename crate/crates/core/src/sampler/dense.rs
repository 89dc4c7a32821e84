use crate::corpus::TopicId;
use crate::error::{Error, Result};
use crate::model::{DocTopicCounts, Hyperparameters, TopicTotals, WordTopicRow};

use super::{PassCounters, RngStream};

/// Unnormalized full conditional over all K topics.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseConditional {
    pub weights: Vec<f64>,
    pub total: f64,
}

impl DenseConditional {
    pub fn normalized(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w / self.total).collect()
    }
}

/// `(C_d^k + alpha_k)(C_k^t + beta) / (C_k + V beta)` for every topic. The
/// counts passed in must already exclude the token being resampled.
pub fn dense_conditional(
    doc: &DocTopicCounts,
    row: &WordTopicRow,
    totals: &TopicTotals,
    hyper: &Hyperparameters,
    counters: &mut PassCounters,
) -> Result<DenseConditional> {
    let k_count = hyper.num_topics();
    if totals.len() != k_count {
        return Err(Error::Shape {
            expected: k_count,
            got: totals.len(),
        });
    }
    let mut doc_dense = vec![0u32; k_count];
    for (k, c) in doc.iter() {
        doc_dense[k as usize] = c;
    }
    let mut word_dense = vec![0u32; k_count];
    for &(k, c) in row.entries() {
        word_dense[k as usize] = c;
    }
    let beta = hyper.beta();
    let beta_sum = hyper.beta_sum();
    let mut weights = Vec::with_capacity(k_count);
    for k in 0..k_count {
        let denom = totals.as_slice()[k] as f64 + beta_sum;
        if denom <= 0.0 {
            return Err(Error::Invariant(format!(
                "topic {k} denominator {denom} is not positive"
            )));
        }
        let w = (doc_dense[k] as f64 + hyper.alpha()[k]) * (word_dense[k] as f64 + beta) / denom;
        weights.push(w);
    }
    counters.entries_touched += k_count as u64;
    let total = weights.iter().sum();
    Ok(DenseConditional { weights, total })
}

/// One uniform draw and a linear scan over the weights.
pub fn sample_dense(cond: &DenseConditional, rng: &mut RngStream) -> Result<TopicId> {
    if !cond.total.is_finite() || cond.total <= 0.0 {
        return Err(Error::Numerical(format!(
            "conditional mass {} is not a positive finite number",
            cond.total
        )));
    }
    let mut u = rng.draw_uniform(cond.total);
    let mut last = 0;
    for (k, &w) in cond.weights.iter().enumerate() {
        if w > 0.0 {
            last = k;
            u -= w;
            if u < 0.0 {
                return Ok(k as TopicId);
            }
        }
    }
    Ok(last as TopicId)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counters() -> PassCounters {
        PassCounters::default()
    }

    #[test]
    fn symmetric_empty_state_is_uniform() {
        let hyper = Hyperparameters::new(vec![1.0, 1.0], 2, 0.5).unwrap();
        let c = dense_conditional(
            &DocTopicCounts::new(2),
            &WordTopicRow::new(),
            &TopicTotals::zeros(2),
            &hyper,
            &mut counters(),
        )
        .unwrap();
        assert_eq!(c.weights, vec![0.5, 0.5]);
        assert_eq!(c.total, 1.0);
    }

    #[test]
    fn hand_evaluated_entries() {
        // C_d = (3,0), C^t = (2,0), C = (5,1), alpha = 0.1, beta = 0.01, V = 10.
        let hyper = Hyperparameters::new(vec![0.1, 0.1], 10, 0.01).unwrap();
        let doc = DocTopicCounts::from_assignments(&[0, 0, 0], 2).unwrap();
        let row = WordTopicRow::from_pairs([(0, 2)]);
        let totals = TopicTotals::from_counts(vec![5, 1]);
        let mut ctr = counters();
        let c = dense_conditional(&doc, &row, &totals, &hyper, &mut ctr).unwrap();
        let expected = [3.1 * 2.01 / 5.1, 0.1 * 0.01 / 1.1];
        for (got, want) in c.weights.iter().zip(expected) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
        assert_eq!(ctr.entries_touched, 2);
    }

    #[test]
    fn point_mass_always_selected() {
        let cond = DenseConditional {
            weights: vec![0.0, 0.0, 0.0, 2.5, 0.0],
            total: 2.5,
        };
        let mut rng = RngStream::new(1, 0);
        for _ in 0..1000 {
            assert_eq!(sample_dense(&cond, &mut rng).unwrap(), 3);
        }
    }

    #[test]
    fn non_finite_mass_rejected() {
        let mut rng = RngStream::new(1, 0);
        for total in [0.0, f64::NAN, f64::INFINITY] {
            let cond = DenseConditional {
                weights: vec![total],
                total,
            };
            assert!(matches!(sample_dense(&cond, &mut rng), Err(Error::Numerical(_))));
        }
    }

    #[test]
    fn uniform_frequencies_within_three_sigma() {
        let cond = DenseConditional {
            weights: vec![1.0; 4],
            total: 4.0,
        };
        let mut rng = RngStream::new(2024, 0);
        let n = 100_000;
        let mut hist = [0u64; 4];
        for _ in 0..n {
            hist[sample_dense(&cond, &mut rng).unwrap() as usize] += 1;
        }
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        let mut chi2 = 0.0;
        for &h in &hist {
            let dev = h as f64 - n as f64 * 0.25;
            assert!(dev.abs() < 3.0 * sigma, "{hist:?}");
            chi2 += dev * dev / (n as f64 * 0.25);
        }
        // chi-square with 3 dof: 99.9th percentile is 16.27
        assert!(chi2 < 16.27, "chi2 {chi2}");
    }

    #[test]
    fn draw_sequence_is_reproducible() {
        let cond = DenseConditional {
            weights: vec![0.3, 1.0, 0.2, 4.0],
            total: 5.5,
        };
        let run = || {
            let mut rng = RngStream::new(99, 5);
            (0..200).map(|_| sample_dense(&cond, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
