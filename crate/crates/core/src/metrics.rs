//! Training log-likelihood, replica drift, memory accounting and the metrics
//! trace.

use std::io::Write;

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{DocTopicCounts, Hyperparameters, TopicTotals, WordTopicRow};

/// Complete-data `log p(W, Z)` of the collapsed model:
///
/// ```text
/// K [lnG(V b) - V lnG(b)] + sum_k [sum_t lnG(C_k^t + b) - lnG(C_k + V b)]
///   + sum_d [lnG(sum a) - sum_k lnG(a_k) + sum_k lnG(C_d^k + a_k) - lnG(N_d + sum a)]
/// ```
///
/// Evaluated over nonzero entries only; zero counts cancel against the
/// normalizers.
pub fn log_likelihood<'a, D>(
    doc_topics: D,
    rows: &[WordTopicRow],
    totals: &TopicTotals,
    hyper: &Hyperparameters,
) -> Result<f64>
where
    D: IntoIterator<Item = &'a DocTopicCounts>,
{
    let k_count = hyper.num_topics();
    if totals.len() != k_count {
        return Err(Error::Shape {
            expected: k_count,
            got: totals.len(),
        });
    }
    if rows.len() != hyper.vocab_size() {
        return Err(Error::Shape {
            expected: hyper.vocab_size(),
            got: rows.len(),
        });
    }
    let beta = hyper.beta();
    let beta_sum = hyper.beta_sum();
    let lg_beta = ln_gamma(beta);

    let mut column = vec![0u64; k_count];
    let mut word = k_count as f64 * ln_gamma(beta_sum);
    for row in rows {
        for &(k, c) in row.entries() {
            column[k as usize] += c as u64;
            word += ln_gamma(c as f64 + beta) - lg_beta;
        }
    }
    for (k, (&col, &tot)) in column.iter().zip(totals.as_slice()).enumerate() {
        if col != tot as u64 {
            return Err(Error::Invariant(format!(
                "topic {k}: rows sum to {col} but total is {tot}"
            )));
        }
        word -= ln_gamma(tot as f64 + beta_sum);
    }

    let alpha = hyper.alpha();
    let alpha_sum = hyper.alpha_sum();
    let lg_alpha: Vec<f64> = alpha.iter().map(|&a| ln_gamma(a)).collect();
    let lg_alpha_sum = ln_gamma(alpha_sum);
    let mut doc = 0.0;
    for counts in doc_topics {
        doc += lg_alpha_sum - ln_gamma(counts.total() as f64 + alpha_sum);
        for (k, c) in counts.iter() {
            let k = k as usize;
            doc += ln_gamma(c as f64 + alpha[k]) - lg_alpha[k];
        }
    }
    let ll = word + doc;
    if !ll.is_finite() {
        return Err(Error::Numerical(format!("log-likelihood {ll}")));
    }
    Ok(ll)
}

/// `(1 / (M N)) sum_m ||T - T~_m||_1`. Zero when `n` is zero.
pub fn delta_error(truth: &TopicTotals, replicas: &[TopicTotals], n: u64) -> Result<f64> {
    if replicas.is_empty() || n == 0 {
        return Ok(0.0);
    }
    let mut l1 = 0u64;
    for replica in replicas {
        if replica.len() != truth.len() {
            return Err(Error::Shape {
                expected: truth.len(),
                got: replica.len(),
            });
        }
        l1 += truth
            .as_slice()
            .iter()
            .zip(replica.as_slice())
            .map(|(&a, &b)| (a as i64 - b as i64).unsigned_abs())
            .sum::<u64>();
    }
    Ok(l1 as f64 / (replicas.len() as f64 * n as f64))
}

/// Logical entries resident on one worker.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct WorkerMemory {
    pub word_topic: usize,
    pub doc_topic: usize,
    pub totals: usize,
}

impl WorkerMemory {
    pub fn total(&self) -> usize {
        self.word_topic + self.doc_topic + self.totals
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MemoryReport {
    pub workers: Vec<WorkerMemory>,
    pub shards: Vec<usize>,
}

impl MemoryReport {
    pub fn max_word_topic(&self) -> usize {
        self.workers.iter().map(|w| w.word_topic).max().unwrap_or(0)
    }
}

/// One row of the trace. `log_likelihood` is set on the last round of an
/// iteration (and on the iteration-0 row describing the initial state).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub round: usize,
    pub wall_seconds: f64,
    pub log_likelihood: Option<f64>,
    pub delta: Option<f64>,
    pub tokens: u64,
    pub tokens_per_sec: f64,
    pub worker_entries: Vec<usize>,
}

pub const CSV_HEADER: &str =
    "iteration,round,wall_seconds,log_likelihood,delta,tokens,tokens_per_sec,worker_entries";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.10e}")).unwrap_or_default()
}

/// `worker_entries` is `;`-separated, one value per worker.
pub fn write_csv<W: Write>(mut out: W, records: &[MetricsRecord]) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        let entries: Vec<String> = r.worker_entries.iter().map(usize::to_string).collect();
        writeln!(
            out,
            "{},{},{:.6},{},{},{},{:.1},{}",
            r.iteration,
            r.round,
            r.wall_seconds,
            opt(r.log_likelihood),
            opt(r.delta),
            r.tokens,
            r.tokens_per_sec,
            entries.join(";")
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub mode: String,
    pub iterations: usize,
    pub workers: usize,
    pub num_topics: usize,
    pub vocab_size: usize,
    pub tokens: u64,
    pub final_log_likelihood: Option<f64>,
    pub total_wall_seconds: f64,
    pub peak_entries_per_worker: Vec<usize>,
}

pub fn write_summary<W: Write>(out: W, summary: &Summary) -> Result<()> {
    serde_json::to_writer_pretty(out, summary)
        .map_err(|e| Error::Io(std::io::Error::other(e)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_corpus_is_zero() {
        let hyper = Hyperparameters::symmetric(3, 5, Some(0.5), 0.1).unwrap();
        let rows = vec![WordTopicRow::new(); 5];
        let ll = log_likelihood(std::iter::empty(), &rows, &TopicTotals::zeros(3), &hyper).unwrap();
        assert_eq!(ll, 0.0);
    }

    #[test]
    fn single_token_single_topic() {
        let hyper = Hyperparameters::symmetric(1, 7, Some(0.3), 0.2).unwrap();
        let mut rows = vec![WordTopicRow::new(); 7];
        rows[2].increment(0);
        let doc = DocTopicCounts::from_assignments(&[0], 1).unwrap();
        let ll = log_likelihood([&doc], &rows, &TopicTotals::from_counts(vec![1]), &hyper).unwrap();
        // lnG(Vb) + lnG(1+b) - lnG(b) - lnG(1+Vb) = ln(b / Vb)
        assert!((ll + 7f64.ln()).abs() < 1e-12, "{ll}");
    }

    #[test]
    fn inconsistent_totals_rejected() {
        let hyper = Hyperparameters::symmetric(2, 1, None, 0.1).unwrap();
        let rows = vec![WordTopicRow::from_pairs([(0, 1)])];
        let err = log_likelihood(std::iter::empty(), &rows, &TopicTotals::from_counts(vec![0, 1]), &hyper);
        assert!(matches!(err, Err(Error::Invariant(_))));
    }

    #[test]
    fn delta_bounds() {
        let t = TopicTotals::from_counts(vec![5, 0]);
        assert_eq!(delta_error(&t, std::slice::from_ref(&t), 5).unwrap(), 0.0);
        let disjoint = TopicTotals::from_counts(vec![0, 5]);
        assert_eq!(delta_error(&t, &[disjoint], 5).unwrap(), 2.0);
        let short = TopicTotals::from_counts(vec![5]);
        assert!(matches!(delta_error(&t, &[short], 5), Err(Error::Shape { .. })));
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_csv(
            &mut buf,
            &[MetricsRecord {
                iteration: 1,
                round: 0,
                wall_seconds: 0.5,
                log_likelihood: None,
                delta: Some(0.0),
                tokens: 10,
                tokens_per_sec: 20.0,
                worker_entries: vec![3, 4],
            }],
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let line = text.lines().nth(1).unwrap();
        assert_eq!(line, "1,0,0.500000,,0.0000000000e0,10,20.0,3;4");
    }
}
