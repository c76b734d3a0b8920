//! Discrete-event driver on a virtual clock.
//!
//! Agents and the executor are awaited inline; their reported durations
//! decide when the completion is delivered. Completions at the same instant
//! are delivered in a fixed order (targets, approximations, executions,
//! timers, interrupts; then by step index and insertion order), so a given
//! set of agents always yields the same event log.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;

use async_trait::async_trait;
use tokio::sync::{mpsc, Semaphore};

use crate::agent::{Agent, Executor};
use crate::config::EngineConfig;
use crate::events::Event;
use crate::presentation::{InterruptError, UserInterrupt};
use crate::time::Micros;
use crate::types::AgentKind;

use super::{check_executor, Command, Coordinator, EngineError, Input, InterruptRequest, PlanResult};

/// Decides how virtual time maps onto wall time.
#[async_trait]
pub trait Pacer: Send {
    /// Resolves once instant `t` may be processed. Must be cancel-safe.
    async fn wait_until(&mut self, t: Micros);

    /// Virtual time at which an interrupt arriving now is stamped, given the
    /// last processed instant and the next scheduled one.
    fn current(&self, last: Micros, _next: Option<Micros>) -> Micros {
        last
    }
}

/// Runs as fast as possible.
#[derive(Debug, Default, Clone, Copy)]
pub struct ImmediatePacer;

#[async_trait]
impl Pacer for ImmediatePacer {
    async fn wait_until(&mut self, _t: Micros) {}
}

/// Follows wall time: one virtual second takes `factor` wall seconds.
#[derive(Debug, Clone)]
pub struct ScaledPacer {
    factor: f64,
    anchor: tokio::time::Instant,
}

impl ScaledPacer {
    pub fn new(factor: f64) -> Self {
        ScaledPacer {
            factor: factor.max(0.0),
            anchor: tokio::time::Instant::now(),
        }
    }
}

#[async_trait]
impl Pacer for ScaledPacer {
    async fn wait_until(&mut self, t: Micros) {
        let deadline = self.anchor + t.as_duration().mul_f64(self.factor);
        tokio::time::sleep_until(deadline).await;
    }

    fn current(&self, last: Micros, next: Option<Micros>) -> Micros {
        if self.factor <= 0.0 {
            return last;
        }
        let v = Micros::from_duration(self.anchor.elapsed().div_f64(self.factor));
        let v = v.max(last);
        match next {
            Some(n) => v.min(n),
            None => v,
        }
    }
}

/// Frozen clock: each call to [`PausedPacer::advance`] releases one instant.
#[derive(Debug, Clone)]
pub struct PausedPacer {
    permits: Arc<Semaphore>,
}

impl Default for PausedPacer {
    fn default() -> Self {
        PausedPacer {
            permits: Arc::new(Semaphore::new(0)),
        }
    }
}

impl PausedPacer {
    pub fn new() -> Self {
        PausedPacer::default()
    }

    /// Lets the driver process `instants` more distinct timestamps.
    pub fn advance(&self, instants: usize) {
        self.permits.add_permits(instants);
    }
}

#[async_trait]
impl Pacer for PausedPacer {
    async fn wait_until(&mut self, _t: Micros) {
        if let Ok(permit) = self.permits.acquire().await {
            permit.forget();
        }
    }
}

/// A simulated human watching the event stream.
pub trait VirtualUser: Send {
    /// Sees every event as it is logged; returns interrupts to deliver and
    /// the virtual time at which to deliver each.
    fn observe(&mut self, event: &Event) -> Vec<(Micros, UserInterrupt)>;

    fn acknowledge(&mut self, _interrupt: &UserInterrupt, _result: &Result<(), InterruptError>) {}
}

/// Delivers a fixed list of interrupts at absolute times.
#[derive(Debug, Clone, Default)]
pub struct ScriptedUser {
    script: Vec<(Micros, UserInterrupt)>,
    fired: bool,
}

impl ScriptedUser {
    pub fn new(script: Vec<(Micros, UserInterrupt)>) -> Self {
        ScriptedUser {
            script,
            fired: false,
        }
    }
}

impl VirtualUser for ScriptedUser {
    fn observe(&mut self, _event: &Event) -> Vec<(Micros, UserInterrupt)> {
        if std::mem::replace(&mut self.fired, true) {
            return Vec::new();
        }
        self.script.clone()
    }
}

/// Outcome of one interrupt delivered by a [`VirtualUser`].
pub type InterruptAck = (UserInterrupt, Result<(), InterruptError>);

enum Payload {
    Input(Input),
    Interrupt(UserInterrupt),
}

struct Item {
    at: Micros,
    class: u8,
    index: usize,
    seq: u64,
    payload: Payload,
}

impl Item {
    fn key(&self) -> (Micros, u8, usize, u64) {
        (self.at, self.class, self.index, self.seq)
    }
}

impl PartialEq for Item {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl Eq for Item {}
impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Item {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other.key().cmp(&self.key())
    }
}

const CLASS_TARGET: u8 = 0;
const CLASS_APPROX: u8 = 1;
const CLASS_EXEC: u8 = 2;
const CLASS_TIMER: u8 = 3;
const CLASS_INTERRUPT: u8 = 4;

struct Queue {
    heap: BinaryHeap<Item>,
    seq: u64,
}

impl Queue {
    fn push(&mut self, at: Micros, class: u8, index: usize, payload: Payload) {
        self.seq += 1;
        self.heap.push(Item {
            at,
            class,
            index,
            seq: self.seq,
            payload,
        });
    }

    fn next_at(&self) -> Option<Micros> {
        self.heap.peek().map(|i| i.at)
    }

    fn pop_at(&mut self, now: Micros) -> Option<Item> {
        if self.next_at() == Some(now) {
            self.heap.pop()
        } else {
            None
        }
    }
}

struct Workers {
    approx: Arc<dyn Agent>,
    target: Arc<dyn Agent>,
    executor: Arc<dyn Executor>,
}

pub struct VirtualDriver {
    task: String,
    config: EngineConfig,
    workers: Workers,
    user: Option<Box<dyn VirtualUser>>,
    pacer: Box<dyn Pacer>,
    external: Option<mpsc::Receiver<InterruptRequest>>,
    sink: Option<Box<dyn FnMut(&Event) + Send>>,
}

impl VirtualDriver {
    pub fn new(
        task: impl Into<String>,
        approx: Arc<dyn Agent>,
        target: Arc<dyn Agent>,
        executor: Arc<dyn Executor>,
        config: EngineConfig,
    ) -> Self {
        VirtualDriver {
            task: task.into(),
            config,
            workers: Workers {
                approx,
                target,
                executor,
            },
            user: None,
            pacer: Box::new(ImmediatePacer),
            external: None,
            sink: None,
        }
    }

    pub fn with_user(mut self, user: Box<dyn VirtualUser>) -> Self {
        self.user = Some(user);
        self
    }

    pub fn with_pacer(mut self, pacer: Box<dyn Pacer>) -> Self {
        self.pacer = pacer;
        self
    }

    /// Interrupts from outside (e.g. HTTP), stamped with the pacer's notion
    /// of the current virtual time.
    pub fn with_interrupts(mut self, rx: mpsc::Receiver<InterruptRequest>) -> Self {
        self.external = Some(rx);
        self
    }

    /// Called with every event as soon as it is logged.
    pub fn with_sink(mut self, sink: Box<dyn FnMut(&Event) + Send>) -> Self {
        self.sink = Some(sink);
        self
    }

    pub async fn run(self) -> Result<PlanResult, EngineError> {
        self.run_detailed().await.map(|(r, _)| r)
    }

    /// Blocks the current thread; only valid with pacers that don't need a
    /// tokio timer (the default [`ImmediatePacer`]).
    pub fn run_blocking(self) -> Result<PlanResult, EngineError> {
        futures::executor::block_on(self.run())
    }

    /// Also returns how each user-scheduled interrupt was acknowledged.
    pub async fn run_detailed(mut self) -> Result<(PlanResult, Vec<InterruptAck>), EngineError> {
        check_executor(&self.config, self.workers.executor.as_ref())?;
        let mut coord = Coordinator::new(self.task.clone(), self.config.clone())?;
        let mut q = Queue {
            heap: BinaryHeap::new(),
            seq: 0,
        };
        let mut emitted = 0usize;
        let mut acks = Vec::new();
        let mut now = Micros::ZERO;

        coord.start(now);
        self.workers.dispatch(&mut coord, &mut q, now).await;
        self.flush(&coord, &mut q, &mut emitted, now);

        while !coord.is_done() {
            let next = q.next_at();
            if self.external.is_some() {
                let req = {
                    let pacer = &mut self.pacer;
                    let rx = self.external.as_mut().expect("checked");
                    let wait = async move {
                        match next {
                            Some(t) => pacer.wait_until(t).await,
                            None => std::future::pending().await,
                        }
                    };
                    tokio::select! {
                        biased;
                        req = rx.recv() => Some(req),
                        _ = wait => None,
                    }
                };
                match req {
                    Some(Some(req)) => {
                        now = self.pacer.current(now, next);
                        let result = coord.interrupt(now, req.interrupt);
                        let _ = req.reply.send(result);
                        coord.settle(now);
                        self.workers.dispatch(&mut coord, &mut q, now).await;
                        self.flush(&coord, &mut q, &mut emitted, now);
                        continue;
                    }
                    Some(None) => {
                        self.external = None;
                        continue;
                    }
                    None => {}
                }
            } else if let Some(t) = next {
                self.pacer.wait_until(t).await;
            }
            let Some(t) = next else { break };
            now = t;
            loop {
                while let Some(item) = q.pop_at(now) {
                    match item.payload {
                        Payload::Input(input) => coord.handle(now, input),
                        Payload::Interrupt(ui) => {
                            let result = coord.interrupt(now, ui.clone());
                            if let Some(user) = self.user.as_mut() {
                                user.acknowledge(&ui, &result);
                            }
                            acks.push((ui, result));
                        }
                    }
                    self.workers.dispatch(&mut coord, &mut q, now).await;
                    if coord.is_done() {
                        break;
                    }
                }
                coord.settle(now);
                self.workers.dispatch(&mut coord, &mut q, now).await;
                self.flush(&coord, &mut q, &mut emitted, now);
                if coord.is_done() || q.next_at() != Some(now) {
                    break;
                }
            }
        }
        let result = coord.into_result();
        // a stall appends a terminal event
        if let Some(sink) = self.sink.as_mut() {
            for e in &result.events.events[emitted..] {
                sink(e);
            }
        }
        Ok((result, acks))
    }

    fn flush(&mut self, coord: &Coordinator, q: &mut Queue, emitted: &mut usize, now: Micros) {
        let events = &coord.events().events[*emitted..];
        *emitted += events.len();
        for e in events {
            if let Some(sink) = self.sink.as_mut() {
                sink(e);
            }
            if let Some(user) = self.user.as_mut() {
                for (at, ui) in user.observe(e) {
                    let index = ui.index;
                    q.push(at.max(now), CLASS_INTERRUPT, index, Payload::Interrupt(ui));
                }
            }
        }
    }
}

impl Workers {
    async fn dispatch(&self, coord: &mut Coordinator, q: &mut Queue, now: Micros) {
        for cmd in coord.take_commands() {
            match cmd {
                Command::Launch {
                    pid,
                    kind,
                    request,
                    delay,
                } => {
                    let (agent, class) = match kind {
                        AgentKind::Approximation => (&self.approx, CLASS_APPROX),
                        AgentKind::Target => (&self.target, CLASS_TARGET),
                    };
                    let result = agent.propose(&request).await;
                    let latency = result.as_ref().map(|x| x.latency).unwrap_or_default();
                    q.push(
                        now + delay + latency,
                        class,
                        request.index,
                        Payload::Input(Input::ProcessDone { pid, result }),
                    );
                }
                Command::Cancel { pid } => q.heap.retain(|i| {
                    !matches!(i.payload, Payload::Input(Input::ProcessDone { pid: p, .. }) if p == pid)
                }),
                Command::Execute { xid, step } => {
                    let result = self.executor.execute(&step).await;
                    let d = result
                        .as_ref()
                        .map(|o| o.exec_duration)
                        .unwrap_or_default();
                    q.push(
                        now + d,
                        CLASS_EXEC,
                        step.index,
                        Payload::Input(Input::ExecDone { xid, result }),
                    );
                }
                Command::StartTimer { tid, after } => {
                    q.push(now + after, CLASS_TIMER, 0, Payload::Input(Input::Timer { tid }))
                }
            }
        }
    }
}
