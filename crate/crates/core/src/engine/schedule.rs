use log::warn;

use crate::corpus::TermId;
use crate::error::{Error, Result};
use crate::model::BlockPartition;

/// Block rotation over `M` workers: in round `r` worker `m` holds block
/// `(m + r) mod M`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    blocks: BlockPartition,
}

/// Terms one worker samples in one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskList {
    pub worker: usize,
    pub block: u32,
    pub terms: Vec<TermId>,
}

impl Schedule {
    pub fn new(blocks: BlockPartition) -> Result<Self> {
        if blocks.num_blocks() == 0 {
            return Err(Error::Config("schedule needs at least one block".into()));
        }
        Ok(Self { blocks })
    }

    /// Frequency-balanced blocks, one per worker. Empty blocks (V < M) are
    /// allowed.
    pub fn make(frequencies: &[u64], num_workers: usize) -> Result<Self> {
        if num_workers == 0 {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        if frequencies.len() < num_workers {
            warn!(
                "vocabulary of {} terms is smaller than {num_workers} workers; some blocks are empty",
                frequencies.len()
            );
        }
        Self::new(BlockPartition::frequency_balanced(frequencies, num_workers)?)
    }

    pub fn num_workers(&self) -> usize {
        self.blocks.num_blocks()
    }

    pub fn blocks(&self) -> &BlockPartition {
        &self.blocks
    }

    pub fn owner(&self, worker: usize, round: usize) -> u32 {
        ((worker + round) % self.num_workers()) as u32
    }

    pub fn tasks(&self, round: usize) -> Vec<TaskList> {
        (0..self.num_workers())
            .map(|m| {
                let block = self.owner(m, round);
                TaskList {
                    worker: m,
                    block,
                    terms: self.blocks.block(block as usize).to_vec(),
                }
            })
            .collect()
    }
}

/// Completion flags for one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundBarrier {
    round: u64,
    done: Vec<bool>,
}

impl RoundBarrier {
    pub fn new(round: u64, workers: usize) -> Self {
        Self {
            round,
            done: vec![false; workers],
        }
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn arrive(&mut self, worker: usize) -> Result<()> {
        match self.done.get_mut(worker) {
            Some(flag) if !*flag => {
                *flag = true;
                Ok(())
            }
            Some(_) => Err(Error::Protocol(format!(
                "worker {worker} reached barrier {} twice",
                self.round
            ))),
            None => Err(Error::Protocol(format!("unknown worker {worker} at barrier"))),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.done.iter().all(|&d| d)
    }

    /// Errors unless every worker has arrived.
    pub fn release(&self) -> Result<()> {
        if let Some(m) = self.done.iter().position(|&d| !d) {
            return Err(Error::Protocol(format!(
                "round {} released before worker {m} committed",
                self.round
            )));
        }
        Ok(())
    }
}
