//! Sharded in-memory store for model blocks and the authoritative topic
//! totals. All traffic goes through [`Transport::call`] with serialized
//! payloads so that the volume moved per worker can be metered.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::sync::{Mutex, MutexGuard};

use crate::codec::{self, Reader};
use crate::corpus::TermId;
use crate::error::{Error, Result};
use crate::model::{ModelBlock, TopicTotals, WordTopicRow};

pub type WorkerId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    CheckoutBlock { worker: WorkerId, block: u32, round: u64 },
    CommitBlock { worker: WorkerId, payload: Vec<u8> },
    FetchTopicTotals { worker: WorkerId },
    PushTopicDelta { worker: WorkerId, payload: Vec<u8> },
    /// Data-parallel mode: additive updates to arbitrary rows.
    PushRowDeltas { worker: WorkerId, payload: Vec<u8> },
    /// Data-parallel mode: every row of the model.
    FetchAllRows { worker: WorkerId },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Block(Vec<u8>),
    Totals(Vec<u8>),
    Rows(Vec<u8>),
    Ack,
}

/// Request/response channel to the store.
pub trait Transport: Sync {
    fn call(&self, request: Request) -> Result<Response>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditAction {
    Checkout,
    Commit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditEntry {
    pub action: AuditAction,
    pub round: u64,
    pub block: u32,
    pub worker: WorkerId,
}

impl fmt::Display for AuditEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let action = match self.action {
            AuditAction::Checkout => "checkout",
            AuditAction::Commit => "commit",
        };
        write!(
            f,
            "{action} round={} block={} worker={}",
            self.round, self.block, self.worker
        )
    }
}

/// Payload volume for one worker. "out" is store to worker.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Traffic {
    pub requests: u64,
    pub block_bytes_out: u64,
    pub block_bytes_in: u64,
    pub totals_counters_out: u64,
    pub totals_counters_in: u64,
    pub row_bytes_out: u64,
    pub row_bytes_in: u64,
}

impl Traffic {
    pub fn total_bytes(&self) -> u64 {
        self.block_bytes_out
            + self.block_bytes_in
            + self.row_bytes_out
            + self.row_bytes_in
            + 8 * (self.totals_counters_out + self.totals_counters_in)
    }
}

#[derive(Debug)]
struct StoredBlock {
    block: ModelBlock,
    holder: Option<WorkerId>,
}

#[derive(Debug, Default)]
struct Shard {
    blocks: BTreeMap<u32, StoredBlock>,
    /// Present on shard 0 only.
    totals: Option<TopicTotals>,
}

#[derive(Debug)]
pub struct KvStore {
    shards: Vec<Mutex<Shard>>,
    num_topics: usize,
    vocab_size: usize,
    term_block: Vec<u32>,
    audit: Mutex<Vec<AuditEntry>>,
    traffic: Mutex<BTreeMap<WorkerId, Traffic>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl KvStore {
    /// `blocks` must be disjoint and cover `0..vocab_size`; block ids must be
    /// `0..blocks.len()`.
    pub fn new(blocks: Vec<ModelBlock>, totals: TopicTotals, num_shards: usize) -> Result<Self> {
        if num_shards == 0 {
            return Err(Error::Config("shard count must be at least 1".into()));
        }
        let vocab_size: usize = blocks.iter().map(|b| b.terms().len()).sum();
        let mut term_block = vec![u32::MAX; vocab_size];
        let mut shards: Vec<Shard> = (0..num_shards).map(|_| Shard::default()).collect();
        for (i, block) in blocks.into_iter().enumerate() {
            if block.id as usize != i {
                return Err(Error::Config(format!(
                    "block at position {i} has id {}",
                    block.id
                )));
            }
            for &t in block.terms() {
                match term_block.get_mut(t as usize) {
                    Some(slot) if *slot == u32::MAX => *slot = block.id,
                    _ => {
                        return Err(Error::Config(format!(
                            "term {t} duplicated or outside 0..{vocab_size}"
                        )))
                    }
                }
            }
            let shard = block.id as usize % num_shards;
            shards[shard].blocks.insert(
                block.id,
                StoredBlock {
                    block,
                    holder: None,
                },
            );
        }
        let num_topics = totals.len();
        shards[0].totals = Some(totals);
        Ok(Self {
            shards: shards.into_iter().map(Mutex::new).collect(),
            num_topics,
            vocab_size,
            term_block,
            audit: Mutex::new(Vec::new()),
            traffic: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn num_shards(&self) -> usize {
        self.shards.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.shards.iter().map(|s| lock(s).blocks.len()).sum()
    }

    pub fn num_topics(&self) -> usize {
        self.num_topics
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Shard hosting `block`; stable for the lifetime of the store.
    pub fn shard_of(&self, block: u32) -> usize {
        block as usize % self.shards.len()
    }

    fn meter(&self, worker: WorkerId, f: impl FnOnce(&mut Traffic)) {
        let mut traffic = lock(&self.traffic);
        let t = traffic.entry(worker).or_default();
        t.requests += 1;
        f(t);
    }

    fn audit(&self, entry: AuditEntry) {
        lock(&self.audit).push(entry);
    }

    fn checkout(&self, worker: WorkerId, block: u32, round: u64) -> Result<Vec<u8>> {
        let mut shard = lock(&self.shards[self.shard_of(block)]);
        let stored = shard
            .blocks
            .get_mut(&block)
            .ok_or_else(|| Error::Protocol(format!("no block {block} in store")))?;
        if let Some(holder) = stored.holder {
            return Err(Error::Protocol(format!(
                "worker {worker} requested block {block} already held by worker {holder}"
            )));
        }
        if stored.block.version != round {
            return Err(Error::StaleRound {
                block,
                version: stored.block.version,
                round,
            });
        }
        stored.holder = Some(worker);
        let payload = codec::encode_block(&stored.block);
        drop(shard);
        self.audit(AuditEntry {
            action: AuditAction::Checkout,
            round,
            block,
            worker,
        });
        let n = payload.len() as u64;
        self.meter(worker, |t| t.block_bytes_out += n);
        Ok(payload)
    }

    fn commit(&self, worker: WorkerId, payload: &[u8]) -> Result<()> {
        let incoming = codec::decode_block(payload)?;
        let id = incoming.id;
        let mut shard = lock(&self.shards[self.shard_of(id)]);
        let stored = shard
            .blocks
            .get_mut(&id)
            .ok_or_else(|| Error::Protocol(format!("commit of unknown block {id}")))?;
        if stored.holder != Some(worker) {
            return Err(Error::Protocol(format!(
                "worker {worker} committed block {id} held by {:?}",
                stored.holder
            )));
        }
        if incoming.terms() != stored.block.terms() {
            return Err(Error::Protocol(format!(
                "worker {worker} changed the term set of block {id}"
            )));
        }
        if incoming.version != stored.block.version {
            return Err(Error::Protocol(format!(
                "block {id} committed at version {}, store has {}",
                incoming.version, stored.block.version
            )));
        }
        let round = stored.block.version;
        stored.block = incoming;
        stored.block.version = round + 1;
        stored.holder = None;
        drop(shard);
        self.audit(AuditEntry {
            action: AuditAction::Commit,
            round,
            block: id,
            worker,
        });
        let n = payload.len() as u64;
        self.meter(worker, |t| t.block_bytes_in += n);
        Ok(())
    }

    fn fetch_totals(&self, worker: WorkerId) -> Result<Vec<u8>> {
        let shard = lock(&self.shards[0]);
        let totals = shard.totals.as_ref().expect("shard 0 hosts totals");
        let values: Vec<i64> = totals.as_slice().iter().map(|&c| c as i64).collect();
        drop(shard);
        let k = values.len() as u64;
        self.meter(worker, |t| t.totals_counters_out += k);
        Ok(codec::encode_topic_vector(&values))
    }

    fn push_delta(&self, worker: WorkerId, payload: &[u8]) -> Result<()> {
        let delta = codec::decode_topic_vector(payload)?;
        if delta.len() != self.num_topics {
            return Err(Error::Shape {
                expected: self.num_topics,
                got: delta.len(),
            });
        }
        let mut shard = lock(&self.shards[0]);
        shard
            .totals
            .as_mut()
            .expect("shard 0 hosts totals")
            .apply_delta(&delta)?;
        drop(shard);
        let k = delta.len() as u64;
        self.meter(worker, |t| t.totals_counters_in += k);
        Ok(())
    }

    fn push_row_deltas(&self, worker: WorkerId, payload: &[u8]) -> Result<()> {
        let deltas = codec::decode_row_deltas(payload)?;
        let mut by_shard: BTreeMap<usize, codec::RowDeltas> = BTreeMap::new();
        for (t, entries) in deltas {
            let block = *self
                .term_block
                .get(t as usize)
                .ok_or_else(|| Error::Protocol(format!("row delta for unknown term {t}")))?;
            by_shard.entry(self.shard_of(block)).or_default().push((t, entries));
        }
        for (s, items) in by_shard {
            let mut shard = lock(&self.shards[s]);
            for (t, entries) in items {
                let block = self.term_block[t as usize];
                let stored = shard.blocks.get_mut(&block).expect("routed block exists");
                if stored.holder.is_some() {
                    return Err(Error::Protocol(format!(
                        "row delta for term {t} while block {block} is checked out"
                    )));
                }
                let row = stored.block.row_mut(t).expect("routed term exists");
                for (k, d) in entries {
                    if k as usize >= self.num_topics {
                        return Err(Error::Wire(format!("topic {k} out of range")));
                    }
                    row.apply_delta(k, d as i64)?;
                }
            }
        }
        let n = payload.len() as u64;
        self.meter(worker, |t| t.row_bytes_in += n);
        Ok(())
    }

    fn fetch_all_rows(&self, worker: WorkerId) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.vocab_size as u32).to_le_bytes());
        let mut rows: Vec<(TermId, Vec<u8>)> = Vec::new();
        for shard in &self.shards {
            let shard = lock(shard);
            for stored in shard.blocks.values() {
                for (t, row) in stored.block.iter() {
                    let mut buf = Vec::new();
                    codec::put_row(&mut buf, t, row);
                    rows.push((t, buf));
                }
            }
        }
        rows.sort_unstable_by_key(|r| r.0);
        for (_, buf) in rows {
            out.extend_from_slice(&buf);
        }
        let n = out.len() as u64;
        self.meter(worker, |t| t.row_bytes_out += n);
        Ok(out)
    }

    /// Authoritative totals, read at a barrier without metering.
    pub fn authoritative_totals(&self) -> TopicTotals {
        lock(&self.shards[0])
            .totals
            .clone()
            .expect("shard 0 hosts totals")
    }

    /// `sum_t C_k^t` over every stored block.
    pub fn recount_totals(&self) -> Vec<u64> {
        let mut column = vec![0u64; self.num_topics];
        for shard in &self.shards {
            for stored in lock(shard).blocks.values() {
                for (_, row) in stored.block.iter() {
                    for &(k, c) in row.entries() {
                        column[k as usize] += c as u64;
                    }
                }
            }
        }
        column
    }

    /// All rows in term order, read at a barrier. Fails if a block is checked out.
    pub fn snapshot_rows(&self) -> Result<Vec<WordTopicRow>> {
        let mut rows: Vec<Option<WordTopicRow>> = vec![None; self.vocab_size];
        for shard in &self.shards {
            for (id, stored) in &lock(shard).blocks {
                if let Some(w) = stored.holder {
                    return Err(Error::Protocol(format!(
                        "snapshot while block {id} is held by worker {w}"
                    )));
                }
                for (t, row) in stored.block.iter() {
                    rows[t as usize] = Some(row.clone());
                }
            }
        }
        Ok(rows.into_iter().map(Option::unwrap_or_default).collect())
    }

    /// Nonzero word-topic entries stored per shard.
    pub fn shard_entries(&self) -> Vec<usize> {
        self.shards
            .iter()
            .map(|s| lock(s).blocks.values().map(|b| b.block.nonzeros()).sum())
            .collect()
    }

    /// Nonzero word-topic entries per block id.
    pub fn block_entries(&self) -> BTreeMap<u32, usize> {
        let mut out = BTreeMap::new();
        for shard in &self.shards {
            for (&id, stored) in &lock(shard).blocks {
                out.insert(id, stored.block.nonzeros());
            }
        }
        out
    }

    pub fn holder(&self, block: u32) -> Option<WorkerId> {
        lock(&self.shards[self.shard_of(block)])
            .blocks
            .get(&block)
            .and_then(|b| b.holder)
    }

    pub fn block_version(&self, block: u32) -> Option<u64> {
        lock(&self.shards[self.shard_of(block)])
            .blocks
            .get(&block)
            .map(|b| b.block.version)
    }

    pub fn audit_log(&self) -> Vec<AuditEntry> {
        lock(&self.audit).clone()
    }

    pub fn write_audit_log<W: Write>(&self, mut out: W) -> Result<()> {
        for entry in lock(&self.audit).iter() {
            writeln!(out, "{entry}")?;
        }
        Ok(())
    }

    /// Returns and resets the per-worker traffic counters.
    pub fn take_traffic(&self) -> BTreeMap<WorkerId, Traffic> {
        std::mem::take(&mut *lock(&self.traffic))
    }
}

impl Transport for KvStore {
    fn call(&self, request: Request) -> Result<Response> {
        match request {
            Request::CheckoutBlock {
                worker,
                block,
                round,
            } => self.checkout(worker, block, round).map(Response::Block),
            Request::CommitBlock { worker, payload } => {
                self.commit(worker, &payload).map(|_| Response::Ack)
            }
            Request::FetchTopicTotals { worker } => self.fetch_totals(worker).map(Response::Totals),
            Request::PushTopicDelta { worker, payload } => {
                self.push_delta(worker, &payload).map(|_| Response::Ack)
            }
            Request::PushRowDeltas { worker, payload } => {
                self.push_row_deltas(worker, &payload).map(|_| Response::Ack)
            }
            Request::FetchAllRows { worker } => self.fetch_all_rows(worker).map(Response::Rows),
        }
    }
}

fn unexpected(what: &str, got: Response) -> Error {
    Error::Wire(format!("expected {what} response, got {got:?}"))
}

/// Typed client bound to one worker.
pub struct KvClient<'a, T: Transport + ?Sized> {
    worker: WorkerId,
    transport: &'a T,
}

impl<'a, T: Transport + ?Sized> KvClient<'a, T> {
    pub fn new(worker: WorkerId, transport: &'a T) -> Self {
        Self { worker, transport }
    }

    pub fn worker(&self) -> WorkerId {
        self.worker
    }

    pub fn checkout_block(&self, block: u32, round: u64) -> Result<ModelBlock> {
        match self.transport.call(Request::CheckoutBlock {
            worker: self.worker,
            block,
            round,
        })? {
            Response::Block(bytes) => codec::decode_block(&bytes),
            other => Err(unexpected("block", other)),
        }
    }

    pub fn commit_block(&self, block: &ModelBlock) -> Result<()> {
        match self.transport.call(Request::CommitBlock {
            worker: self.worker,
            payload: codec::encode_block(block),
        })? {
            Response::Ack => Ok(()),
            other => Err(unexpected("ack", other)),
        }
    }

    pub fn fetch_topic_totals(&self) -> Result<TopicTotals> {
        match self.transport.call(Request::FetchTopicTotals {
            worker: self.worker,
        })? {
            Response::Totals(bytes) => {
                let values = codec::decode_topic_vector(&bytes)?;
                let counts = values
                    .into_iter()
                    .map(|v| u32::try_from(v).map_err(|_| Error::Wire(format!("total {v}"))))
                    .collect::<Result<Vec<_>>>()?;
                Ok(TopicTotals::from_counts(counts))
            }
            other => Err(unexpected("totals", other)),
        }
    }

    pub fn push_topic_delta(&self, delta: &[i64]) -> Result<()> {
        match self.transport.call(Request::PushTopicDelta {
            worker: self.worker,
            payload: codec::encode_topic_vector(delta),
        })? {
            Response::Ack => Ok(()),
            other => Err(unexpected("ack", other)),
        }
    }

    pub fn push_row_deltas(&self, deltas: &codec::RowDeltas) -> Result<()> {
        match self.transport.call(Request::PushRowDeltas {
            worker: self.worker,
            payload: codec::encode_row_deltas(deltas),
        })? {
            Response::Ack => Ok(()),
            other => Err(unexpected("ack", other)),
        }
    }

    pub fn fetch_all_rows(&self) -> Result<Vec<WordTopicRow>> {
        match self.transport.call(Request::FetchAllRows {
            worker: self.worker,
        })? {
            Response::Rows(bytes) => {
                let mut r = Reader::new(&bytes);
                let v = r.u32()? as usize;
                let mut rows = Vec::with_capacity(v);
                for expected in 0..v {
                    let (t, row) = codec::get_row(&mut r, None)?;
                    if t as usize != expected {
                        return Err(Error::Wire(format!("row {expected} labelled {t}")));
                    }
                    rows.push(row);
                }
                r.finish()?;
                Ok(rows)
            }
            other => Err(unexpected("rows", other)),
        }
    }
}
