//! Emulated one-sided communication.
//!
//! Each PE exposes a [`Window`] holding the last value it received for every
//! (neighbor, block) pair. Senders write into a receiver's window with
//! [`one_sided_put`]; receivers never act on incoming data. The simulator
//! stages puts through a [`Network`] and applies them at the end-of-iteration
//! barrier in ascending `(src, block, dst)` order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mixing::MixingMatrix;
use crate::objectives::ModelLayout;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CommError {
    #[error("PE {dst} is not a neighbor of PE {src}")]
    NotNeighbor { src: usize, dst: usize },
    #[error("PE index {0} out of range")]
    UnknownPe(usize),
    #[error("block {0} out of range")]
    UnknownBlock(usize),
    #[error("payload length {got} does not match block length {expected}")]
    PayloadLength { expected: usize, got: usize },
    #[error("sparse index {index} out of range for block length {len}")]
    SparseIndexOutOfRange { index: usize, len: usize },
    #[error("sparse indices must be strictly increasing")]
    SparseIndexOrder,
    #[error("top-k percentage must be in (0, 100], got {0}")]
    BadPercentage(f64),
    #[error("cannot sparsify an empty block")]
    EmptyBlock,
    #[error("regular run sent no messages")]
    NoBaseline,
}

/// How a triggered block is encoded on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayloadMode {
    #[default]
    Dense,
    TopK {
        percent: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Dense(Vec<f64>),
    /// `(index, value)` pairs with strictly increasing indices.
    Sparse(Vec<(usize, f64)>),
}

impl Payload {
    /// Scalars on the wire; each sparse index counts as one scalar.
    pub fn scalar_volume(&self) -> u64 {
        match self {
            Payload::Dense(v) => v.len() as u64,
            Payload::Sparse(e) => 2 * e.len() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub src: usize,
    pub dst: usize,
    pub block: usize,
    pub payload: Payload,
    pub sent_iter: usize,
}

/// Last value received from one neighbor for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    values: Vec<f64>,
    written_iter: Option<usize>,
}

impl Slot {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iteration of the most recent write, `None` before the first put lands.
    pub fn written_iter(&self) -> Option<usize> {
        self.written_iter
    }
}

/// Receiver-side memory region written by neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    owner: usize,
    neighbors: Vec<usize>,
    /// `slots[neighbor_pos][block]`
    slots: Vec<Vec<Slot>>,
}

impl Window {
    /// Zero-filled slots for every neighbor of `owner`.
    pub fn new(owner: usize, neighbors: &[usize], layout: &ModelLayout) -> Self {
        let slots = neighbors
            .iter()
            .map(|_| {
                layout
                    .blocks()
                    .iter()
                    .map(|b| Slot {
                        values: vec![0.0; b.len()],
                        written_iter: None,
                    })
                    .collect()
            })
            .collect();
        Self {
            owner,
            neighbors: neighbors.to_vec(),
            slots,
        }
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn slot(&self, src: usize, block: usize) -> Option<&Slot> {
        let pos = self.neighbors.binary_search(&src).ok()?;
        self.slots[pos].get(block)
    }

    /// Last received value of `block` from `src`.
    pub fn value(&self, src: usize, block: usize) -> Option<&[f64]> {
        self.slot(src, block).map(Slot::values)
    }

    fn slot_mut(&mut self, src: usize, block: usize) -> Result<&mut Slot, CommError> {
        let pos = self
            .neighbors
            .binary_search(&src)
            .map_err(|_| CommError::NotNeighbor {
                src,
                dst: self.owner,
            })?;
        self.slots[pos]
            .get_mut(block)
            .ok_or(CommError::UnknownBlock(block))
    }
}

/// Cumulative communication counters with per-block and per-PE breakdowns.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CommStats {
    pub messages_sent: u64,
    pub scalar_volume: u64,
    pub block_messages: Vec<u64>,
    pub block_volume: Vec<u64>,
    pub pe_messages: Vec<u64>,
    pub pe_volume: Vec<u64>,
}

impl CommStats {
    pub fn new(num_pes: usize, num_blocks: usize) -> Self {
        Self {
            messages_sent: 0,
            scalar_volume: 0,
            block_messages: vec![0; num_blocks],
            block_volume: vec![0; num_blocks],
            pe_messages: vec![0; num_pes],
            pe_volume: vec![0; num_pes],
        }
    }

    /// Count `count` messages of `volume` scalars each, sent by `src` for `block`.
    pub fn record(&mut self, src: usize, block: usize, volume: u64, count: u64) {
        fn bump(v: &mut Vec<u64>, i: usize, by: u64) {
            if v.len() <= i {
                v.resize(i + 1, 0);
            }
            v[i] += by;
        }
        self.messages_sent += count;
        self.scalar_volume += volume * count;
        bump(&mut self.block_messages, block, count);
        bump(&mut self.block_volume, block, volume * count);
        bump(&mut self.pe_messages, src, count);
        bump(&mut self.pe_volume, src, volume * count);
    }
}

fn validate(msg: &Message, windows: &[Window]) -> Result<(), CommError> {
    let window = windows.get(msg.dst).ok_or(CommError::UnknownPe(msg.dst))?;
    if msg.src >= windows.len() {
        return Err(CommError::UnknownPe(msg.src));
    }
    let slot = window.slot(msg.src, msg.block).ok_or_else(|| {
        if window.neighbors.binary_search(&msg.src).is_err() {
            CommError::NotNeighbor {
                src: msg.src,
                dst: msg.dst,
            }
        } else {
            CommError::UnknownBlock(msg.block)
        }
    })?;
    let len = slot.values.len();
    match &msg.payload {
        Payload::Dense(v) if v.len() != len => Err(CommError::PayloadLength {
            expected: len,
            got: v.len(),
        }),
        Payload::Dense(_) => Ok(()),
        Payload::Sparse(entries) => {
            for pair in entries.windows(2) {
                if pair[0].0 >= pair[1].0 {
                    return Err(CommError::SparseIndexOrder);
                }
            }
            match entries.last() {
                Some(&(index, _)) if index >= len => {
                    Err(CommError::SparseIndexOutOfRange { index, len })
                }
                _ => Ok(()),
            }
        }
    }
}

fn write(msg: &Message, windows: &mut [Window]) -> Result<(), CommError> {
    let slot = windows[msg.dst].slot_mut(msg.src, msg.block)?;
    match &msg.payload {
        Payload::Dense(v) => slot.values.copy_from_slice(v),
        Payload::Sparse(entries) => {
            for &(i, v) in entries {
                slot.values[i] = v;
            }
        }
    }
    slot.written_iter = Some(msg.sent_iter);
    Ok(())
}

/// Write `msg` into the destination window and account for it.
///
/// Dense payloads overwrite the slot; sparse payloads overwrite only the
/// listed indices.
pub fn one_sided_put(
    msg: &Message,
    windows: &mut [Window],
    stats: &mut CommStats,
) -> Result<(), CommError> {
    validate(msg, windows)?;
    write(msg, windows)?;
    stats.record(msg.src, msg.block, msg.payload.scalar_volume(), 1);
    Ok(())
}

/// Number of entries kept by top-k sparsification: `ceil(len * percent / 100)`.
pub fn topk_count(len: usize, percent: f64) -> Result<usize, CommError> {
    if !(percent > 0.0 && percent <= 100.0) {
        return Err(CommError::BadPercentage(percent));
    }
    let kept = (len as f64 * percent / 100.0).ceil() as usize;
    Ok(kept.clamp(1, len))
}

/// Keep the largest-magnitude entries; ties go to the lower index. Output
/// is sorted by index.
pub fn topk_sparsify(value: &[f64], percent: f64) -> Result<Vec<(usize, f64)>, CommError> {
    if value.is_empty() {
        return Err(CommError::EmptyBlock);
    }
    let kept = topk_count(value.len(), percent)?;
    let mut order: Vec<usize> = (0..value.len()).collect();
    order.sort_by(|&a, &b| value[b].abs().total_cmp(&value[a].abs()).then(a.cmp(&b)));
    order.truncate(kept);
    order.sort_unstable();
    Ok(order.into_iter().map(|i| (i, value[i])).collect())
}

/// Encode `value` according to `mode`.
pub fn make_payload(value: &[f64], mode: PayloadMode) -> Result<Payload, CommError> {
    match mode {
        PayloadMode::Dense => Ok(Payload::Dense(value.to_vec())),
        PayloadMode::TopK { percent } => topk_sparsify(value, percent).map(Payload::Sparse),
    }
}

/// Percent of the regular algorithm's messages and scalar volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommPercentages {
    pub message_pct: f64,
    pub volume_pct: f64,
}

pub fn message_percentage(
    event: &CommStats,
    regular: &CommStats,
) -> Result<CommPercentages, CommError> {
    if regular.messages_sent == 0 || regular.scalar_volume == 0 {
        return Err(CommError::NoBaseline);
    }
    Ok(CommPercentages {
        message_pct: 100.0 * event.messages_sent as f64 / regular.messages_sent as f64,
        volume_pct: 100.0 * event.scalar_volume as f64 / regular.scalar_volume as f64,
    })
}

/// Windows of every PE plus the queue of staged puts.
///
/// A put issued at iteration `k` is applied at the barrier of iteration
/// `k + staleness`.
#[derive(Debug, Clone)]
pub struct Network {
    windows: Vec<Window>,
    pending: Vec<(usize, Message)>,
    stats: CommStats,
    staleness: usize,
}

impl Network {
    pub fn new(mixing: &MixingMatrix, layout: &ModelLayout, staleness: usize) -> Self {
        let windows = (0..mixing.n())
            .map(|i| Window::new(i, mixing.neighbors(i), layout))
            .collect();
        Self {
            windows,
            pending: Vec::new(),
            stats: CommStats::new(mixing.n(), layout.num_blocks()),
            staleness,
        }
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn window(&self, pe: usize) -> &Window {
        &self.windows[pe]
    }

    pub fn stats(&self) -> &CommStats {
        &self.stats
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Stage one put per neighbor of `src`. Returns the number of messages.
    pub fn broadcast(
        &mut self,
        src: usize,
        block: usize,
        value: &[f64],
        mode: PayloadMode,
        k: usize,
    ) -> Result<usize, CommError> {
        let window = self.windows.get(src).ok_or(CommError::UnknownPe(src))?;
        let payload = make_payload(value, mode)?;
        let dsts = window.neighbors.clone();
        for &dst in &dsts {
            let msg = Message {
                src,
                dst,
                block,
                payload: payload.clone(),
                sent_iter: k,
            };
            validate(&msg, &self.windows)?;
            self.stats
                .record(src, block, msg.payload.scalar_volume(), 1);
            self.pending.push((k + self.staleness, msg));
        }
        Ok(dsts.len())
    }

    /// Barrier of iteration `k`: apply every put due by `k`.
    pub fn deliver(&mut self, k: usize) {
        if self.pending.is_empty() {
            return;
        }
        self.pending
            .sort_by_key(|(due, m)| (*due, m.src, m.block, m.dst));
        let split = self.pending.partition_point(|(due, _)| *due <= k);
        let due: Vec<_> = self.pending.drain(..split).collect();
        for (_, msg) in &due {
            write(msg, &mut self.windows).expect("validated when staged");
        }
    }
}
