//! Flush execution engines.
//!
//! The latency-hiding flush loops per rank: (1) initiate every
//! communication operation in the ready queue, (2) poll completions
//! non-blockingly and retire them, promoting dependents, (3) only when no
//! communication of that rank is ready, execute exactly one computation,
//! (4) repeat. A rank blocks on transfer progress only when it has neither
//! ready communication nor ready computation, and that blocked time is
//! accounted as wait time. Ranks are interleaved by a conservative
//! next-event rule over their virtual clocks, which makes every run
//! bit-reproducible.
//!
//! The blocking engine executes operations in recorded order and waits for
//! every transfer at initiation — the baseline an eager runtime without
//! latency-hiding would produce. The naive generation-by-generation
//! evaluator is kept only to demonstrate how barrier-style evaluation
//! deadlocks on programs whose receives are matched by sends recorded in a
//! later generation.

use std::collections::BTreeMap;

use crate::dag::DagGraph;
use crate::error::{Error, Result};
use crate::layout::Rank;
use crate::node::{OpId, OpKind, OpPayload};
use crate::runtime::{FlushMode, Runtime};
use crate::transport::HandleId;
use crate::value::{decode_payload, encode_payload};

/// Log event kinds, one line per scheduling action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogEvent {
    Initiate,
    Complete,
    ComputeStart,
    ComputeEnd,
    StallStart,
    StallEnd,
}

impl std::fmt::Display for LogEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LogEvent::Initiate => "initiate",
            LogEvent::Complete => "complete",
            LogEvent::ComputeStart => "compute-start",
            LogEvent::ComputeEnd => "compute-end",
            LogEvent::StallStart => "stall-start",
            LogEvent::StallEnd => "stall-end",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub time: f64,
    pub rank: Rank,
    pub op: OpId,
    pub kind: OpKind,
    pub event: LogEvent,
}

impl std::fmt::Display for LogRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "t={:.3} rank={} {} {} {}",
            self.time, self.rank, self.op, self.kind, self.event
        )
    }
}

/// Sequenced executed-op log; the substrate for scheduling assertions.
#[derive(Debug, Default)]
pub struct ExecLog {
    records: Vec<LogRecord>,
}

impl ExecLog {
    pub fn new() -> Self {
        ExecLog::default()
    }

    pub fn push(&mut self, time: f64, rank: Rank, op: OpId, kind: OpKind, event: LogEvent) {
        self.records.push(LogRecord { time, rank, op, kind, event });
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    /// Line-delimited textual form.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }

    /// Sequence position of the first record matching the filter.
    pub fn position<F: Fn(&LogRecord) -> bool>(&self, f: F) -> Option<usize> {
        self.records.iter().position(f)
    }
}

/// Outcome of the naive generation-by-generation evaluator.
#[derive(Debug)]
pub enum BspOutcome {
    Completed,
    /// No progress was possible: the listed operations were stuck behind
    /// transfers whose matching sends belong to a later generation.
    Deadlock { stuck: Vec<OpId>, executed: usize },
}

/// What a rank can do next in the latency-hiding loop.
#[derive(Debug, Clone, Copy, PartialEq)]
enum NextAction {
    /// Ready work or an already-complete transfer at the current clock.
    Act,
    /// Nothing ready; block until this completion time.
    Wait(f64),
}

impl Runtime {
    /// Execute every recorded operation under the configured mode.
    pub fn flush(&mut self) -> Result<()> {
        match self.config.mode {
            FlushMode::LatencyHiding => self.flush_latency_hiding(),
            FlushMode::Blocking => self.flush_blocking(),
        }
    }

    fn flush_epilogue(&mut self) -> Result<()> {
        self.transport.check_conservation()?;
        if !self.deps.is_empty() {
            return Err(Error::Deadlock(format!(
                "{} operations never executed",
                self.deps.live_ops()
            )));
        }
        self.program.clear();
        self.stores.clear_scratches();
        self.flushes += 1;
        Ok(())
    }

    fn flush_latency_hiding(&mut self) -> Result<()> {
        if self.program.is_empty() {
            return Ok(());
        }
        let nprocs = self.config.nprocs;
        let mut inflight: Vec<Vec<HandleId>> = vec![Vec::new(); nprocs];
        let mut handle_op: BTreeMap<HandleId, OpId> = BTreeMap::new();
        let mut remaining: Vec<usize> = vec![0; nprocs];
        for &op in &self.program {
            remaining[self.deps.get(op).rank] += 1;
        }

        loop {
            // Conservative next-event selection: the rank with the
            // earliest actionable time goes first; ties break on rank id.
            let mut best: Option<(f64, Rank, NextAction)> = None;
            for rank in 0..nprocs {
                if remaining[rank] == 0 {
                    continue;
                }
                let now = self.transport.now(rank);
                let has_ready = !self.deps.ready_queue().comm_is_empty(rank)
                    || !self.deps.ready_queue().comp_is_empty(rank);
                let completed = !self.transport.test_complete(&inflight[rank]).is_empty();
                let candidate = if has_ready || completed {
                    (now, rank, NextAction::Act)
                } else if let Some((_, t)) = self.transport.earliest_completion(&inflight[rank]) {
                    (now.max(t), rank, NextAction::Wait(now.max(t)))
                } else {
                    // Blocked on transfers whose matches are not posted
                    // yet; another rank has to act first.
                    continue;
                };
                let better = match &best {
                    None => true,
                    Some((t, r, _)) => candidate.0 < *t || (candidate.0 == *t && rank < *r),
                };
                if better {
                    best = Some(candidate);
                }
            }

            let Some((_, rank, action)) = best else {
                if remaining.iter().all(|&n| n == 0) {
                    break;
                }
                return Err(Error::Deadlock(format!(
                    "operations remain on ranks {:?} but none can progress",
                    (0..nprocs).filter(|&r| remaining[r] > 0).collect::<Vec<_>>()
                )));
            };

            if let NextAction::Wait(t) = action {
                // Invariant: a rank blocks on communication only when it
                // has no ready computation.
                if !self.deps.ready_queue().comp_is_empty(rank) {
                    return Err(Error::InvariantViolation(format!(
                        "rank {rank} blocked while a computation was ready"
                    )));
                }
                let now = self.transport.now(rank);
                let op = handle_op[&self
                    .transport
                    .earliest_completion(&inflight[rank])
                    .expect("wait action without a determined completion")
                    .0];
                let kind = self.deps.get(op).kind;
                self.log.push(now, rank, op, kind, LogEvent::StallStart);
                self.transport.advance_to(rank, t);
                self.log.push(t, rank, op, kind, LogEvent::StallEnd);
            }

            self.step_rank(rank, &mut inflight, &mut handle_op, &mut remaining)?;
        }
        self.flush_epilogue()
    }

    /// One scheduling pass for `rank`: initiate all ready communication,
    /// drain completions, then run at most one computation.
    fn step_rank(
        &mut self,
        rank: Rank,
        inflight: &mut [Vec<HandleId>],
        handle_op: &mut BTreeMap<HandleId, OpId>,
        remaining: &mut [usize],
    ) -> Result<()> {
        loop {
            let mut acted = false;
            while let Some(op) = self.deps.pop_ready_comm(rank) {
                let handle = self.initiate_comm(rank, op)?;
                inflight[rank].push(handle);
                handle_op.insert(handle, op);
                acted = true;
            }
            let done = self.transport.test_complete(&inflight[rank]);
            for handle in done {
                let op = handle_op.remove(&handle).expect("completion without an op");
                inflight[rank].retain(|&h| h != handle);
                self.complete_comm(rank, handle, op)?;
                remaining[rank] -= 1;
                acted = true;
            }
            if !acted {
                break;
            }
            // Retirements may have released more communication; loop back
            // to initiate it before considering any computation.
        }

        if let Some(op) = self.deps.pop_ready_comp(rank) {
            // Invariant: computation starts only when the rank has no
            // ready communication.
            if !self.deps.ready_queue().comm_is_empty(rank) {
                return Err(Error::InvariantViolation(format!(
                    "rank {rank} computed {op} while communication was ready"
                )));
            }
            self.run_compute(rank, op)?;
            remaining[rank] -= 1;
        }
        Ok(())
    }

    /// Post the message or receive for a communication operation at the
    /// rank's current virtual time.
    fn initiate_comm(&mut self, rank: Rank, op: OpId) -> Result<HandleId> {
        let node = self.deps.get(op);
        let kind = node.kind;
        let payload = node.payload.clone();
        let now = self.transport.now(rank);
        self.log.push(now, rank, op, kind, LogEvent::Initiate);
        match payload {
            OpPayload::Send { to, tag, src, bytes } => {
                let elems = bytes / 8;
                let values = self.stores.read_region(rank, &src, elems);
                let data = encode_payload(&values);
                debug_assert_eq!(data.len(), bytes);
                self.transport.post_send(rank, to, tag, data)
            }
            OpPayload::Recv { from, tag, .. } => self.transport.post_recv(rank, from, tag),
            other => unreachable!("{other:?} is not a communication payload"),
        }
    }

    /// Consume a completed transfer: apply a receive's payload to its
    /// target, log, and retire the operation.
    fn complete_comm(&mut self, rank: Rank, handle: HandleId, op: OpId) -> Result<()> {
        let completion = self
            .transport
            .handle(handle)
            .completion
            .expect("completed handle without a time");
        let kind = self.deps.get(op).kind;
        let payload = self.transport.consume(handle);
        if let Some(bytes) = payload {
            let OpPayload::Recv { dst, .. } = self.deps.get(op).payload.clone() else {
                unreachable!("payload delivered to a non-receive");
            };
            let dtype = match &dst {
                crate::node::DataRef::Block { array, .. } => self.stores.array_dtype(*array),
                crate::node::DataRef::Scratch { id, .. } => self.stores.scratch_info(*id).dtype,
                crate::node::DataRef::Const(_) => unreachable!(),
            };
            let values = decode_payload(dtype, &bytes)?;
            self.stores.write_region(rank, &dst, &values);
        }
        self.log.push(completion, rank, op, kind, LogEvent::Complete);
        self.deps.retire(op);
        if self.config.deep_validate {
            self.deps
                .check_ready_completeness()
                .map_err(Error::InvariantViolation)?;
        }
        Ok(())
    }

    /// Execute one computation: advance the rank's clock by its cost and
    /// apply the payload to the rank's store.
    fn run_compute(&mut self, rank: Rank, op: OpId) -> Result<()> {
        let cost = self.compute_cost(&self.deps.get(op).payload);
        let now = self.transport.now(rank);
        self.log.push(now, rank, op, OpKind::Compute, LogEvent::ComputeStart);
        self.transport.advance_compute(rank, cost);
        self.execute_compute(rank, op);
        self.log
            .push(self.transport.now(rank), rank, op, OpKind::Compute, LogEvent::ComputeEnd);
        self.deps.retire(op);
        if self.config.deep_validate {
            self.deps
                .check_ready_completeness()
                .map_err(Error::InvariantViolation)?;
        }
        Ok(())
    }

    /// Execute in recorded order (a legal topological order), waiting for
    /// each communication operation at initiation.
    fn flush_blocking(&mut self) -> Result<()> {
        if self.program.is_empty() {
            return Ok(());
        }
        let order = self.program.clone();
        for op in order {
            let node = self.deps.get(op);
            let rank = node.rank;
            let kind = node.kind;
            match kind {
                OpKind::Compute => {
                    self.deps.take_ready(op);
                    self.run_compute(rank, op)?;
                }
                OpKind::Send => {
                    self.deps.take_ready(op);
                    let handle = self.initiate_comm(rank, op)?;
                    let completion = self
                        .transport
                        .handle(handle)
                        .completion
                        .expect("posted send without arrival");
                    self.transport.advance_to(rank, completion);
                    self.complete_comm(rank, handle, op)?;
                }
                OpKind::Recv => {
                    self.deps.take_ready(op);
                    let handle = self.initiate_comm(rank, op)?;
                    let completion = self
                        .transport
                        .handle(handle)
                        .completion
                        .ok_or_else(|| {
                            Error::Deadlock(format!(
                                "blocking flush reached {op} before its matching send"
                            ))
                        })?;
                    self.transport.advance_to(rank, completion);
                    self.complete_comm(rank, handle, op)?;
                }
            }
        }
        self.flush_epilogue()
    }

    /// Generation-by-generation evaluation: run everything currently
    /// ready, then block on all of the generation's transfers before
    /// retiring the generation and starting over. Returns a deadlock
    /// report when the barrier can never be crossed. Kept as a
    /// demonstration; a deadlocked runtime is not reusable.
    pub fn naive_bsp_flush(&mut self) -> Result<BspOutcome> {
        let mut executed = 0usize;
        loop {
            let mut generation: Vec<OpId> = self.deps.ready_ops(true);
            generation.extend(self.deps.ready_ops(false));
            generation.sort();
            if generation.is_empty() {
                if self.deps.is_empty() {
                    self.transport.check_conservation()?;
                    self.program.clear();
                    self.stores.clear_scratches();
                    return Ok(BspOutcome::Completed);
                }
                let mut stuck: Vec<OpId> = self.program.iter().copied()
                    .filter(|&id| self.deps.contains(id))
                    .collect();
                stuck.sort();
                return Ok(BspOutcome::Deadlock { stuck, executed });
            }

            let mut posted: Vec<(HandleId, OpId, Rank)> = Vec::new();
            for &op in &generation {
                let node = self.deps.get(op);
                let rank = node.rank;
                match node.kind {
                    OpKind::Send | OpKind::Recv => {
                        self.deps.take_ready(op);
                        let handle = self.initiate_comm(rank, op)?;
                        posted.push((handle, op, rank));
                    }
                    OpKind::Compute => {
                        self.deps.take_ready(op);
                        let cost = self.compute_cost(&self.deps.get(op).payload);
                        let now = self.transport.now(rank);
                        self.log.push(now, rank, op, OpKind::Compute, LogEvent::ComputeStart);
                        self.transport.advance_compute(rank, cost);
                        self.execute_compute(rank, op);
                        self.log.push(
                            self.transport.now(rank),
                            rank,
                            op,
                            OpKind::Compute,
                            LogEvent::ComputeEnd,
                        );
                    }
                }
            }

            // Barrier: every transfer of this generation must finish
            // before the next generation starts. Transfers whose matching
            // send is in a later generation can never finish.
            if posted.iter().any(|&(h, _, _)| self.transport.handle(h).completion.is_none()) {
                let stuck: Vec<OpId> = posted
                    .iter()
                    .filter(|&&(h, _, _)| self.transport.handle(h).completion.is_none())
                    .map(|&(_, op, _)| op)
                    .collect();
                return Ok(BspOutcome::Deadlock { stuck, executed });
            }
            for (handle, op, rank) in posted {
                let completion = self.transport.handle(handle).completion.unwrap();
                self.transport.advance_to(rank, completion);
                self.complete_comm(rank, handle, op)?;
                executed += 1;
            }
            for &op in &generation {
                if self.deps.contains(op) {
                    // Computations retire here; transfers already did.
                    self.deps.retire(op);
                    executed += 1;
                }
            }
        }
    }

    /// Execute the recorded program through the full-graph baseline:
    /// FIFO over in-degree-zero nodes, blocking each transfer
    /// individually. Produces the same final contents as the other
    /// engines; used as a cross-check.
    pub fn flush_via_dag(&mut self) -> Result<()> {
        if self.program.is_empty() {
            return Ok(());
        }
        let mut dag = DagGraph::new();
        for &op in &self.program {
            dag.insert(self.deps.get(op).clone());
        }
        let order = {
            let mut executed: Vec<OpId> = Vec::new();
            // First pass decides the order; execution happens against the
            // runtime below so the borrow of `dag` stays local.
            let this = &mut *self;
            let mut err: Option<Error> = None;
            dag.schedule_blocking(|node| {
                if err.is_some() {
                    return true; // drain; error reported after
                }
                let rank = node.rank;
                match node.kind {
                    OpKind::Recv => {
                        // A receive can only run once its matching send
                        // has been posted.
                        let OpPayload::Recv { ref tag, .. } = node.payload else {
                            unreachable!()
                        };
                        if !this.transport_has_send(tag) {
                            return false;
                        }
                    }
                    OpKind::Send | OpKind::Compute => {}
                }
                match this.execute_like_blocking(node.id, rank) {
                    Ok(()) => {
                        executed.push(node.id);
                        true
                    }
                    Err(e) => {
                        err = Some(e);
                        true
                    }
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            executed
        };
        debug_assert_eq!(order.len(), self.program.len());
        self.flush_epilogue()
    }

    fn execute_like_blocking(&mut self, op: OpId, rank: Rank) -> Result<()> {
        match self.deps.get(op).kind {
            OpKind::Compute => {
                self.deps.take_ready(op);
                self.run_compute(rank, op)
            }
            OpKind::Send | OpKind::Recv => {
                self.deps.take_ready(op);
                let handle = self.initiate_comm(rank, op)?;
                let completion = self
                    .transport
                    .handle(handle)
                    .completion
                    .expect("transfer executed before it was matched");
                self.transport.advance_to(rank, completion);
                self.complete_comm(rank, handle, op)
            }
        }
    }

    fn transport_has_send(&self, tag: &crate::node::Tag) -> bool {
        self.transport.has_send(tag)
    }
}
