//! Little-endian binary layouts shared by the model checkpoint and the
//! key-value store wire protocol, plus the text topic dump.
//!
//! Row:
//! ```text
//! u32 term | u32 K_t | K_t x (u32 topic, u32 count)
//! ```
//! Checkpoint:
//! ```text
//! b"MPLDACKP" | u32 format=1 | u32 K | u32 V | f64 beta | K x f64 alpha | V rows (term order)
//! ```
//! Block:
//! ```text
//! u32 block id | u64 version | u32 n_terms | n_terms rows (ascending term)
//! ```
//! Topic vector: `u32 K | K x i64`.
//! Row deltas: `u32 n | n x (u32 term | u32 m | m x (u32 topic, i32 delta))`.

use std::io::Write;

use crate::corpus::{TermId, TopicId, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{Hyperparameters, ModelBlock, WordTopicRow};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MPLDACKP";
pub const CHECKPOINT_FORMAT: u32 = 1;

/// Forward-only reader over a byte payload.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| {
            Error::Wire(format!(
                "needed {n} bytes at offset {}, payload has {}",
                self.pos,
                self.buf.len()
            ))
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Wire(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn put_row(out: &mut Vec<u8>, term: TermId, row: &WordTopicRow) {
    out.extend_from_slice(&term.to_le_bytes());
    out.extend_from_slice(&(row.nnz() as u32).to_le_bytes());
    for &(k, c) in row.entries() {
        out.extend_from_slice(&k.to_le_bytes());
        out.extend_from_slice(&c.to_le_bytes());
    }
}

pub fn get_row(r: &mut Reader<'_>, num_topics: Option<usize>) -> Result<(TermId, WordTopicRow)> {
    let term = r.u32()?;
    let n = r.u32()? as usize;
    let mut pairs = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let k = r.u32()?;
        let c = r.u32()?;
        if c == 0 {
            return Err(Error::Wire(format!("row {term} stores a zero count")));
        }
        if num_topics.is_some_and(|kk| k as usize >= kk) {
            return Err(Error::Wire(format!("row {term} topic {k} out of range")));
        }
        pairs.push((k, c));
    }
    let row = WordTopicRow::from_pairs(pairs.iter().copied());
    if row.entries() != pairs.as_slice() {
        return Err(Error::Wire(format!("row {term} is not in canonical order")));
    }
    Ok((term, row))
}

pub fn encode_block(block: &ModelBlock) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + block.terms().len() * 8 + block.nonzeros() * 8);
    out.extend_from_slice(&block.id.to_le_bytes());
    out.extend_from_slice(&block.version.to_le_bytes());
    out.extend_from_slice(&(block.terms().len() as u32).to_le_bytes());
    for (t, row) in block.iter() {
        put_row(&mut out, t, row);
    }
    out
}

pub fn decode_block(bytes: &[u8]) -> Result<ModelBlock> {
    let mut r = Reader::new(bytes);
    let id = r.u32()?;
    let version = r.u64()?;
    let n = r.u32()? as usize;
    let mut terms = Vec::with_capacity(n.min(1 << 20));
    let mut rows = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let (t, row) = get_row(&mut r, None)?;
        terms.push(t);
        rows.push(row);
    }
    r.finish()?;
    ModelBlock::new(id, version, terms, rows).map_err(|e| Error::Wire(e.to_string()))
}

pub fn encode_topic_vector(values: &[i64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + values.len() * 8);
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_topic_vector(bytes: &[u8]) -> Result<Vec<i64>> {
    let mut r = Reader::new(bytes);
    let n = r.u32()? as usize;
    let values = (0..n).map(|_| r.i64()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(values)
}

/// Sparse signed updates to word-topic rows, keyed by term.
pub type RowDeltas = Vec<(TermId, Vec<(TopicId, i32)>)>;

pub fn encode_row_deltas(deltas: &RowDeltas) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(deltas.len() as u32).to_le_bytes());
    for (t, entries) in deltas {
        out.extend_from_slice(&t.to_le_bytes());
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for &(k, d) in entries {
            out.extend_from_slice(&k.to_le_bytes());
            out.extend_from_slice(&d.to_le_bytes());
        }
    }
    out
}

pub fn decode_row_deltas(bytes: &[u8]) -> Result<RowDeltas> {
    let mut r = Reader::new(bytes);
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let t = r.u32()?;
        let m = r.u32()? as usize;
        let entries = (0..m)
            .map(|_| Ok((r.u32()?, r.i32()?)))
            .collect::<Result<Vec<_>>>()?;
        out.push((t, entries));
    }
    r.finish()?;
    Ok(out)
}

/// Serializes hyperparameters and every word-topic row in term order.
pub fn encode_checkpoint(hyper: &Hyperparameters, rows: &[WordTopicRow]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_FORMAT.to_le_bytes());
    out.extend_from_slice(&(hyper.num_topics() as u32).to_le_bytes());
    out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    out.extend_from_slice(&hyper.beta().to_le_bytes());
    for a in hyper.alpha() {
        out.extend_from_slice(&a.to_le_bytes());
    }
    for (t, row) in rows.iter().enumerate() {
        put_row(&mut out, t as TermId, row);
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Hyperparameters, Vec<WordTopicRow>)> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Wire("not a checkpoint (bad magic)".into()));
    }
    let mut r = Reader::new(&bytes[8..]);
    let format = r.u32()?;
    if format != CHECKPOINT_FORMAT {
        return Err(Error::Wire(format!("unsupported checkpoint format {format}")));
    }
    let k = r.u32()? as usize;
    let v = r.u32()? as usize;
    let beta = r.f64()?;
    let alpha = (0..k).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(v.min(1 << 24));
    for expected in 0..v {
        let (t, row) = get_row(&mut r, Some(k))?;
        if t as usize != expected {
            return Err(Error::Wire(format!("row {expected} labelled as term {t}")));
        }
        rows.push(row);
    }
    r.finish()?;
    Ok((Hyperparameters::new(alpha, v, beta)?, rows))
}

/// Writes `topic k: term:count ...` lines with the `top_n` heaviest terms of
/// every topic, ties broken by term id.
pub fn write_topic_dump<W: Write>(
    mut out: W,
    rows: &[WordTopicRow],
    num_topics: usize,
    vocabulary: &Vocabulary,
    top_n: usize,
) -> Result<()> {
    let mut columns: Vec<Vec<(TermId, u32)>> = vec![Vec::new(); num_topics];
    for (t, row) in rows.iter().enumerate() {
        for &(k, c) in row.entries() {
            columns[k as usize].push((t as TermId, c));
        }
    }
    for (k, mut col) in columns.into_iter().enumerate() {
        col.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        write!(out, "topic {k}:")?;
        for (t, c) in col.into_iter().take(top_n) {
            let name = vocabulary.term(t).map(str::to_owned).unwrap_or_else(|| t.to_string());
            write!(out, " {name}:{c}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_row() -> impl Strategy<Value = WordTopicRow> {
        proptest::collection::vec((0u32..32, 1u32..50), 0..12).prop_map(WordTopicRow::from_pairs)
    }

    proptest! {
        #[test]
        fn block_round_trip(rows in proptest::collection::vec(arb_row(), 0..20), id in 0u32..8, version in any::<u64>()) {
            let terms: Vec<TermId> = (0..rows.len() as u32).map(|t| t * 3 + 1).collect();
            let block = ModelBlock::new(id, version, terms, rows).unwrap();
            prop_assert_eq!(decode_block(&encode_block(&block)).unwrap(), block);
        }

        #[test]
        fn checkpoint_round_trip(rows in proptest::collection::vec(arb_row(), 1..20)) {
            let hyper = Hyperparameters::symmetric(32, rows.len(), Some(0.3), 0.02).unwrap();
            let (h2, r2) = decode_checkpoint(&encode_checkpoint(&hyper, &rows)).unwrap();
            prop_assert_eq!(h2, hyper);
            prop_assert_eq!(r2, rows);
        }
    }

    #[test]
    fn checkpoint_layout_is_little_endian() {
        let hyper = Hyperparameters::symmetric(2, 1, Some(0.5), 0.25).unwrap();
        let rows = vec![WordTopicRow::from_pairs([(1, 3)])];
        let bytes = encode_checkpoint(&hyper, &rows);
        let mut expected = Vec::new();
        expected.extend_from_slice(b"MPLDACKP");
        expected.extend_from_slice(&[1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
        expected.extend_from_slice(&0.25f64.to_le_bytes());
        expected.extend_from_slice(&0.5f64.to_le_bytes());
        expected.extend_from_slice(&0.5f64.to_le_bytes());
        expected.extend_from_slice(&[0, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(bytes, expected);
    }

    #[test]
    fn truncated_payloads_rejected() {
        let block = ModelBlock::new(0, 1, vec![2], vec![WordTopicRow::from_pairs([(0, 1)])]).unwrap();
        let bytes = encode_block(&block);
        assert!(decode_block(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_block(&extra).is_err());
        assert!(decode_checkpoint(b"nope").is_err());
    }

    #[test]
    fn topic_dump_format() {
        let vocab = Vocabulary::from_terms(["apple".into(), "pear".into(), "fig".into()]).unwrap();
        let rows = vec![
            WordTopicRow::from_pairs([(0, 2)]),
            WordTopicRow::from_pairs([(0, 5), (1, 1)]),
            WordTopicRow::from_pairs([(0, 2)]),
        ];
        let mut out = Vec::new();
        write_topic_dump(&mut out, &rows, 2, &vocab, 2).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "topic 0: pear:5 apple:2\ntopic 1: pear:1\n"
        );
    }

    #[test]
    fn delta_payload_round_trip() {
        let d: RowDeltas = vec![(4, vec![(0, -2), (3, 7)]), (9, vec![])];
        assert_eq!(decode_row_deltas(&encode_row_deltas(&d)).unwrap(), d);
        assert_eq!(decode_topic_vector(&encode_topic_vector(&[-1, 0, 5])).unwrap(), vec![-1, 0, 5]);
    }
}
