//! Wall-clock driver on tokio: agent calls run as spawned tasks and are
//! aborted on cancellation.

use std::collections::HashMap;
use std::sync::Arc;

use tokio::sync::mpsc;
use tokio::task::AbortHandle;
use tokio::time::Instant;

use crate::agent::{Agent, Executor};
use crate::config::EngineConfig;
use crate::events::Event;
use crate::time::Micros;
use crate::types::{AgentKind, ProcessId};

use super::{check_executor, Command, Coordinator, EngineError, Input, InterruptRequest, PlanResult};

pub struct LiveDriver {
    task: String,
    config: EngineConfig,
    approx: Arc<dyn Agent>,
    target: Arc<dyn Agent>,
    executor: Arc<dyn Executor>,
    external: Option<mpsc::Receiver<InterruptRequest>>,
    sink: Option<Box<dyn FnMut(&Event) + Send>>,
}

impl LiveDriver {
    pub fn new(
        task: impl Into<String>,
        approx: Arc<dyn Agent>,
        target: Arc<dyn Agent>,
        executor: Arc<dyn Executor>,
        config: EngineConfig,
    ) -> Self {
        LiveDriver {
            task: task.into(),
            config,
            approx,
            target,
            executor,
            external: None,
            sink: None,
        }
    }

    pub fn with_interrupts(mut self, rx: mpsc::Receiver<InterruptRequest>) -> Self {
        self.external = Some(rx);
        self
    }

    pub fn with_sink(mut self, sink: Box<dyn FnMut(&Event) + Send>) -> Self {
        self.sink = Some(sink);
        self
    }

    /// Must be called inside a tokio runtime with the time driver enabled.
    pub async fn run(mut self) -> Result<PlanResult, EngineError> {
        check_executor(&self.config, self.executor.as_ref())?;
        let mut coord = Coordinator::new(self.task.clone(), self.config.clone())?;
        let (tx, mut rx) = mpsc::unbounded_channel::<Input>();
        let mut tasks: HashMap<ProcessId, AbortHandle> = HashMap::new();
        let mut aux: Vec<AbortHandle> = Vec::new();
        let start = Instant::now();
        let clock = || Micros::from_duration(start.elapsed());
        let mut emitted = 0;

        coord.start(clock());
        self.dispatch(&mut coord, &tx, &mut tasks, &mut aux);
        self.flush(&coord, &mut emitted);

        while !coord.is_done() {
            tokio::select! {
                Some(input) = rx.recv() => {
                    if let Input::ProcessDone { pid, .. } = &input {
                        tasks.remove(pid);
                    }
                    coord.handle(clock(), input);
                }
                req = async {
                    match self.external.as_mut() {
                        Some(ext) => ext.recv().await,
                        None => std::future::pending().await,
                    }
                } => match req {
                    Some(req) => {
                        let result = coord.interrupt(clock(), req.interrupt);
                        let _ = req.reply.send(result);
                    }
                    None => self.external = None,
                },
            }
            coord.settle(clock());
            self.dispatch(&mut coord, &tx, &mut tasks, &mut aux);
            self.flush(&coord, &mut emitted);
        }
        for h in tasks.values().chain(aux.iter()) {
            h.abort();
        }
        Ok(coord.into_result())
    }

    fn dispatch(
        &self,
        coord: &mut Coordinator,
        tx: &mpsc::UnboundedSender<Input>,
        tasks: &mut HashMap<ProcessId, AbortHandle>,
        aux: &mut Vec<AbortHandle>,
    ) {
        for cmd in coord.take_commands() {
            let tx = tx.clone();
            match cmd {
                Command::Launch {
                    pid,
                    kind,
                    request,
                    delay,
                } => {
                    let agent = match kind {
                        AgentKind::Approximation => self.approx.clone(),
                        AgentKind::Target => self.target.clone(),
                    };
                    let handle = tokio::spawn(async move {
                        tokio::time::sleep(delay.as_duration()).await;
                        let result = agent.propose(&request).await;
                        let _ = tx.send(Input::ProcessDone { pid, result });
                    });
                    tasks.insert(pid, handle.abort_handle());
                }
                Command::Cancel { pid } => {
                    if let Some(h) = tasks.remove(&pid) {
                        h.abort();
                    }
                }
                Command::Execute { xid, step } => {
                    let executor = self.executor.clone();
                    let handle = tokio::spawn(async move {
                        let result = executor.execute(&step).await;
                        let _ = tx.send(Input::ExecDone { xid, result });
                    });
                    aux.push(handle.abort_handle());
                }
                Command::StartTimer { tid, after } => {
                    let handle = tokio::spawn(async move {
                        tokio::time::sleep(after.as_duration()).await;
                        let _ = tx.send(Input::Timer { tid });
                    });
                    aux.push(handle.abort_handle());
                }
            }
        }
        aux.retain(|h| !h.is_finished());
    }

    fn flush(&mut self, coord: &Coordinator, emitted: &mut usize) {
        let events = &coord.events().events[*emitted..];
        *emitted += events.len();
        if let Some(sink) = self.sink.as_mut() {
            for e in events {
                sink(e);
            }
        }
    }
}

/// Runs a speculative plan against real agents on the wall clock.
pub async fn run_plan(
    task: &str,
    approx: Arc<dyn Agent>,
    target: Arc<dyn Agent>,
    executor: Arc<dyn Executor>,
    config: EngineConfig,
    interrupts: Option<mpsc::Receiver<InterruptRequest>>,
) -> Result<PlanResult, EngineError> {
    let mut driver = LiveDriver::new(task, approx, target, executor, config);
    if let Some(rx) = interrupts {
        driver = driver.with_interrupts(rx);
    }
    driver.run().await
}
