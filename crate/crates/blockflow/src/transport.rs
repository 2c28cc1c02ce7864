//! Simulated message passing under a virtual clock.
//!
//! Every rank keeps its own virtual clock, advanced by computation costs
//! and by waits on transfer completion. Messages move through a
//! parameterized latency/bandwidth model: a transfer posted at time `t`
//! completes at `max(t, channel_free) + alpha + size/beta`, where
//! `channel_free` is the completion time of the previous message on the
//! same directed link when link serialization is enabled. Receives
//! complete when the matching send's data has arrived and the receive has
//! been posted, whichever is later.
//!
//! Identical programs with identical model parameters replay to identical
//! clocks, handle states, and metrics.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::layout::Rank;
use crate::node::Tag;

/// Fixed-latency plus bandwidth cost model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyModel {
    /// Fixed per-message latency in virtual time units.
    pub alpha: f64,
    /// Bandwidth in bytes per virtual time unit (`f64::INFINITY` disables
    /// the bandwidth term).
    pub beta: f64,
    /// When set, messages on the same directed link serialize.
    pub serialize_links: bool,
    /// Virtual time charged per element of computation.
    pub compute_cost: f64,
}

impl LatencyModel {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 {
            return Err(Error::invalid("alpha must be >= 0"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::invalid("beta must be > 0"));
        }
        if self.compute_cost < 0.0 {
            return Err(Error::invalid("compute cost must be >= 0"));
        }
        Ok(())
    }

    fn transfer_time(&self, bytes: usize) -> f64 {
        self.alpha + bytes as f64 / self.beta
    }
}

impl Default for LatencyModel {
    /// Defaults tuned so that moving one sub-view-block costs about as
    /// much as computing one, which leaves the blocking baseline waiting
    /// for a large fraction of its makespan on communication-bound
    /// kernels.
    fn default() -> Self {
        LatencyModel {
            alpha: 1000.0,
            beta: 256.0,
            serialize_links: true,
            compute_cost: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HandleId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandleState {
    InFlight,
    Complete,
    Consumed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandleKind {
    Send,
    Recv,
}

/// Non-blocking transfer handle owned by one rank.
#[derive(Debug, Clone)]
pub struct CommHandle {
    pub id: HandleId,
    pub rank: Rank,
    pub kind: HandleKind,
    pub message: usize,
    pub posted_at: f64,
    /// Known once both sides of the transfer are determined.
    pub completion: Option<f64>,
    pub state: HandleState,
}

/// One message moving between ranks.
#[derive(Debug, Clone)]
pub struct TransportMessage {
    pub src: Rank,
    pub dst: Rank,
    pub tag: Tag,
    pub payload: Vec<u8>,
    pub size: usize,
    /// Wire arrival time at the destination.
    pub arrival: f64,
    pub consumed: bool,
}

/// The transport: per-rank clocks, in-flight handles, and link state.
#[derive(Debug)]
pub struct Transport {
    pub model: LatencyModel,
    nprocs: usize,
    clock: Vec<f64>,
    wait_time: Vec<f64>,
    compute_time: Vec<f64>,
    messages: Vec<TransportMessage>,
    handles: Vec<CommHandle>,
    /// Completion time of the last message on each directed link.
    link_free: BTreeMap<(Rank, Rank), f64>,
    /// Sends whose receive has not been posted yet, by tag.
    unmatched_sends: BTreeMap<Tag, usize>,
    /// Receives whose send has not been posted yet, by tag.
    unmatched_recvs: BTreeMap<Tag, HandleId>,
    pub messages_sent: u64,
    pub bytes_sent: u64,
}

impl Transport {
    pub fn new(nprocs: usize, model: LatencyModel) -> Self {
        Transport {
            model,
            nprocs,
            clock: vec![0.0; nprocs],
            wait_time: vec![0.0; nprocs],
            compute_time: vec![0.0; nprocs],
            messages: Vec::new(),
            handles: Vec::new(),
            link_free: BTreeMap::new(),
            unmatched_sends: BTreeMap::new(),
            unmatched_recvs: BTreeMap::new(),
            messages_sent: 0,
            bytes_sent: 0,
        }
    }

    pub fn nprocs(&self) -> usize {
        self.nprocs
    }

    pub fn now(&self, rank: Rank) -> f64 {
        self.clock[rank]
    }

    pub fn wait_time(&self, rank: Rank) -> f64 {
        self.wait_time[rank]
    }

    pub fn compute_time(&self, rank: Rank) -> f64 {
        self.compute_time[rank]
    }

    /// Global makespan: the latest per-rank clock.
    pub fn makespan(&self) -> f64 {
        self.clock.iter().copied().fold(0.0, f64::max)
    }

    pub fn handle(&self, id: HandleId) -> &CommHandle {
        &self.handles[id.0 as usize]
    }

    pub fn message_of(&self, id: HandleId) -> &TransportMessage {
        &self.messages[self.handles[id.0 as usize].message]
    }

    /// Advance a rank's clock by a computation cost and account it.
    pub fn advance_compute(&mut self, rank: Rank, cost: f64) {
        self.clock[rank] += cost;
        self.compute_time[rank] += cost;
    }

    /// Post a non-blocking send at the rank's current time. The wire
    /// arrival is fixed immediately from the latency model; the handle
    /// completes at arrival.
    pub fn post_send(&mut self, src: Rank, dst: Rank, tag: Tag, payload: Vec<u8>) -> Result<HandleId> {
        if self.unmatched_sends.contains_key(&tag) {
            return Err(Error::MatchAmbiguity(format!("two sends posted for tag {tag}")));
        }
        let now = self.clock[src];
        let size = payload.len();
        let depart = if self.model.serialize_links {
            let free = self.link_free.entry((src, dst)).or_insert(0.0);
            now.max(*free)
        } else {
            now
        };
        let arrival = depart + self.model.transfer_time(size);
        if self.model.serialize_links {
            self.link_free.insert((src, dst), arrival);
        }
        let msg_idx = self.messages.len();
        self.messages.push(TransportMessage {
            src,
            dst,
            tag: tag.clone(),
            payload,
            size,
            arrival,
            consumed: false,
        });
        self.messages_sent += 1;
        self.bytes_sent += size as u64;

        let id = HandleId(self.handles.len() as u64);
        self.handles.push(CommHandle {
            id,
            rank: src,
            kind: HandleKind::Send,
            message: msg_idx,
            posted_at: now,
            completion: Some(arrival),
            state: HandleState::InFlight,
        });
        // Resolve a receive that was posted ahead of this send.
        if let Some(recv_id) = self.unmatched_recvs.remove(&tag) {
            let recv = &mut self.handles[recv_id.0 as usize];
            recv.message = msg_idx;
            recv.completion = Some(arrival.max(recv.posted_at));
        } else {
            self.unmatched_sends.insert(tag, msg_idx);
        }
        Ok(id)
    }

    /// Post a non-blocking receive. It completes once the matching send's
    /// data has arrived; posting before the send is fine.
    pub fn post_recv(&mut self, dst: Rank, src: Rank, tag: Tag) -> Result<HandleId> {
        if self.unmatched_recvs.contains_key(&tag) {
            return Err(Error::MatchAmbiguity(format!(
                "two receives posted for tag {tag}"
            )));
        }
        let now = self.clock[dst];
        let id = HandleId(self.handles.len() as u64);
        let (message, completion) = match self.unmatched_sends.remove(&tag) {
            Some(msg_idx) => {
                let arrival = self.messages[msg_idx].arrival;
                (msg_idx, Some(arrival.max(now)))
            }
            None => {
                self.unmatched_recvs.insert(tag.clone(), id);
                (usize::MAX, None)
            }
        };
        let _ = src;
        self.handles.push(CommHandle {
            id,
            rank: dst,
            kind: HandleKind::Recv,
            message,
            posted_at: now,
            completion,
            state: HandleState::InFlight,
        });
        Ok(id)
    }

    /// All handles from `candidates` whose completion time has passed the
    /// owning rank's clock. Never advances any clock.
    pub fn test_complete(&self, candidates: &[HandleId]) -> Vec<HandleId> {
        candidates
            .iter()
            .copied()
            .filter(|&id| {
                let h = &self.handles[id.0 as usize];
                h.state == HandleState::InFlight
                    && h.completion.map_or(false, |c| c <= self.clock[h.rank])
            })
            .collect()
    }

    /// Earliest determined completion among in-flight candidates, if any.
    pub fn earliest_completion(&self, candidates: &[HandleId]) -> Option<(HandleId, f64)> {
        candidates
            .iter()
            .copied()
            .filter_map(|id| {
                let h = &self.handles[id.0 as usize];
                if h.state == HandleState::InFlight {
                    h.completion.map(|c| (id, c))
                } else {
                    None
                }
            })
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
    }

    /// Block the calling rank until the earliest in-flight completion
    /// among `candidates`, advancing its clock and accounting the advance
    /// as wait time. Errors if nothing can complete.
    pub fn wait_any(&mut self, rank: Rank, candidates: &[HandleId]) -> Result<HandleId> {
        let owned: Vec<HandleId> = candidates
            .iter()
            .copied()
            .filter(|&id| self.handles[id.0 as usize].rank == rank)
            .collect();
        if owned
            .iter()
            .all(|&id| self.handles[id.0 as usize].state != HandleState::InFlight)
        {
            return Err(Error::Deadlock(format!(
                "rank {rank} waited with no transfer in flight"
            )));
        }
        match self.earliest_completion(&owned) {
            Some((id, t)) => {
                self.advance_to(rank, t);
                Ok(id)
            }
            None => Err(Error::Deadlock(format!(
                "rank {rank} waited on transfers whose matches were never posted"
            ))),
        }
    }

    /// Advance a rank's clock to `t`, accounting the advance as wait time.
    pub fn advance_to(&mut self, rank: Rank, t: f64) {
        if t > self.clock[rank] {
            self.wait_time[rank] += t - self.clock[rank];
            self.clock[rank] = t;
        }
    }

    /// Mark a handle's transfer as done and hand back the payload for a
    /// receive. Panics if the completion time is still in the rank's
    /// future.
    pub fn consume(&mut self, id: HandleId) -> Option<Vec<u8>> {
        let h = &mut self.handles[id.0 as usize];
        assert_eq!(h.state, HandleState::InFlight, "handle {id:?} consumed twice");
        let completion = h.completion.expect("consuming an unmatched transfer");
        assert!(
            completion <= self.clock[h.rank] + 1e-9,
            "handle consumed before completion"
        );
        h.state = HandleState::Consumed;
        let kind = h.kind;
        let msg_idx = h.message;
        match kind {
            HandleKind::Recv => {
                let msg = &mut self.messages[msg_idx];
                assert!(!msg.consumed, "message consumed twice");
                msg.consumed = true;
                Some(msg.payload.clone())
            }
            HandleKind::Send => None,
        }
    }

    /// Has a send been posted for this tag and not yet matched?
    pub fn has_send(&self, tag: &Tag) -> bool {
        self.unmatched_sends.contains_key(tag)
    }

    /// Every posted send must have been consumed by exactly one receive
    /// and no handle may remain in flight.
    pub fn check_conservation(&self) -> Result<()> {
        if let Some(h) = self.handles.iter().find(|h| h.state == HandleState::InFlight) {
            return Err(Error::Deadlock(format!(
                "transfer {:?} of rank {} still in flight at flush end",
                h.id, h.rank
            )));
        }
        if let Some(m) = self.messages.iter().find(|m| !m.consumed) {
            return Err(Error::Deadlock(format!(
                "message {} from rank {} to rank {} was never received",
                m.tag, m.src, m.dst
            )));
        }
        if !self.unmatched_recvs.is_empty() {
            return Err(Error::Deadlock("receives left unmatched at flush end".into()));
        }
        Ok(())
    }
}
