use std::collections::BTreeSet;
use std::fs::File;
use std::io::Write as _;
use std::path::Path;
use std::sync::{Arc, Mutex};

use specplan_agents::{Cassette, ChatTransport, HttpTransport, RemoteAgent};
use specplan_core::analytics::measure_log;
use specplan_core::engine::{
    ImmediatePacer, InterruptRequest, LiveDriver, Pacer, PausedPacer, ScaledPacer, VirtualDriver,
};
use specplan_core::simkit::{make_sim_agents, SimExecutor};
use specplan_core::{
    Agent, EchoExecutor, EngineError, Event, EventKind, EventLog, Executor, InterruptError, Outcome,
    PlanResult, UserInterrupt, WindowKind,
};
use tokio::sync::{mpsc, oneshot, watch};

use crate::api::{
    ClockSpec, CreateSession, MetricsResponse, OpenWindow, SessionInfo, SessionMode, SessionStatus,
};
use crate::error::ApiError;

struct Finished {
    outcome: Option<Outcome>,
    error: Option<String>,
    events: EventLog,
}

#[derive(Default)]
struct Shared {
    lines: Vec<String>,
    windows: BTreeSet<(usize, WindowKind)>,
    log_file: Option<File>,
    persist_error: Option<String>,
    finished: Option<Finished>,
}

/// One hosted run. The driver task appends to `shared` through its event
/// sink and bumps `progress`; subscribers wait on `progress`.
pub struct Session {
    pub id: String,
    request: CreateSession,
    shared: Mutex<Shared>,
    progress: watch::Sender<u64>,
    interrupts: mpsc::Sender<InterruptRequest>,
    pacer: Option<PausedPacer>,
}

/// Events after a given sequence number, plus the final status once the run
/// is over and nothing is left to deliver.
pub struct Snapshot {
    pub lines: Vec<String>,
    pub finished: Option<SessionStatus>,
}

enum Plan {
    Virtual {
        task: String,
        approx: Arc<dyn Agent>,
        target: Arc<dyn Agent>,
        executor: Arc<dyn Executor>,
    },
    Live {
        task: String,
        approx: Arc<dyn Agent>,
        target: Arc<dyn Agent>,
    },
}

fn build_plan(req: &CreateSession) -> Result<Plan, ApiError> {
    match &req.mode {
        SessionMode::Simulated(sim) => {
            let world = sim.world();
            let base = sim.base();
            let (approx, target) = make_sim_agents(&world, &base.approx_spec(), &base.target_spec());
            Ok(Plan::Virtual {
                task: req.task.clone().unwrap_or_else(|| world.task()),
                approx,
                target,
                executor: Arc::new(SimExecutor { exec_time: sim.exec }),
            })
        }
        SessionMode::Live(live) => {
            let task = req.task.clone().unwrap_or_default();
            let token = req.config.terminate_token.clone();
            let transport = |cfg: &specplan_agents::AgentEndpointConfig| -> Result<Arc<dyn ChatTransport>, ApiError> {
                let http: Arc<dyn ChatTransport> = Arc::new(HttpTransport::new(cfg.timeout, cfg.max_retries));
                match &live.cassette {
                    None => Ok(http),
                    Some(c) => Cassette::open(c.mode.into(), &c.path, http)
                        .map(|c| Arc::new(c) as Arc<dyn ChatTransport>)
                        .map_err(|e| ApiError::bad_request(Some("mode.live.cassette.path".into()), e.to_string())),
                }
            };
            let agent = |cfg: &specplan_agents::AgentEndpointConfig| -> Result<Arc<dyn Agent>, ApiError> {
                let a = RemoteAgent::new(cfg.clone(), transport(cfg)?)
                    .map_err(|e| ApiError::bad_request(Some(e.field.clone()), e.message))?
                    .with_terminate_token(token.clone());
                Ok(Arc::new(a))
            };
            let approx = agent(&live.approximation)?;
            let target = agent(&live.target)?;
            let replaying = live
                .cassette
                .as_ref()
                .is_some_and(|c| c.mode == crate::api::CassetteModeSpec::Replay);
            // recorded latencies only mean something on the virtual clock
            if replaying {
                Ok(Plan::Virtual {
                    task,
                    approx,
                    target,
                    executor: Arc::new(EchoExecutor::default()),
                })
            } else {
                Ok(Plan::Live { task, approx, target })
            }
        }
    }
}

impl Session {
    /// Validates, builds agents and starts the run on the current runtime.
    pub fn start(id: String, request: CreateSession, log_dir: Option<&Path>) -> Result<Arc<Session>, ApiError> {
        let plan = build_plan(&request)?;
        let log_file = match log_dir {
            Some(dir) => {
                let open = std::fs::create_dir_all(dir).and_then(|_| File::create(dir.join(format!("{id}.jsonl"))));
                Some(open.map_err(|e| ApiError::new(axum::http::StatusCode::INTERNAL_SERVER_ERROR, format!("cannot open log file: {e}")))?)
            }
            None => None,
        };
        let (tx, rx) = mpsc::channel(16);
        let paused = (request.clock == ClockSpec::Paused).then(PausedPacer::new);
        let session = Arc::new(Session {
            id,
            shared: Mutex::new(Shared {
                log_file,
                ..Shared::default()
            }),
            progress: watch::Sender::new(0),
            interrupts: tx,
            pacer: paused.clone(),
            request,
        });
        let pacer: Box<dyn Pacer> = match (session.request.clock, paused) {
            (_, Some(p)) => Box::new(p),
            (ClockSpec::Scaled(f), None) => Box::new(ScaledPacer::new(f)),
            _ => Box::new(ImmediatePacer),
        };
        let config = session.request.config.clone();
        let sink_session = session.clone();
        let sink = Box::new(move |e: &Event| sink_session.push_event(e));
        let runner = session.clone();
        tokio::spawn(async move {
            let result = match plan {
                Plan::Virtual {
                    task,
                    approx,
                    target,
                    executor,
                } => {
                    VirtualDriver::new(task, approx, target, executor, config)
                        .with_pacer(pacer)
                        .with_interrupts(rx)
                        .with_sink(sink)
                        .run()
                        .await
                }
                Plan::Live { task, approx, target } => {
                    LiveDriver::new(task, approx, target, Arc::new(EchoExecutor::default()), config)
                        .with_interrupts(rx)
                        .with_sink(sink)
                        .run()
                        .await
                }
            };
            runner.finish(result);
        });
        Ok(session)
    }

    fn push_event(&self, e: &Event) {
        let line = e.to_json_line();
        {
            let mut s = self.shared.lock().expect("session lock poisoned");
            if let Some(w) = e.window {
                match e.kind {
                    EventKind::WindowOpen => {
                        s.windows.insert((e.index, w));
                    }
                    EventKind::WindowClosed => {
                        s.windows.remove(&(e.index, w));
                    }
                    _ => {}
                }
            }
            if let Some(f) = s.log_file.as_mut() {
                if let Err(err) = writeln!(f, "{line}") {
                    s.persist_error.get_or_insert(err.to_string());
                }
            }
            s.lines.push(line);
        }
        self.progress.send_modify(|v| *v += 1);
    }

    fn finish(&self, result: Result<PlanResult, EngineError>) {
        {
            let mut s = self.shared.lock().expect("session lock poisoned");
            s.windows.clear();
            if let Some(f) = s.log_file.as_mut() {
                let _ = f.flush();
            }
            s.finished = Some(match result {
                Ok(r) => Finished {
                    error: r.failure().map(|f| f.to_string()),
                    outcome: Some(r.outcome),
                    events: r.events,
                },
                Err(e) => Finished {
                    outcome: None,
                    error: Some(e.to_string()),
                    events: EventLog::default(),
                },
            });
        }
        self.progress.send_modify(|v| *v += 1);
    }

    fn status_of(s: &Shared) -> SessionStatus {
        match &s.finished {
            Some(Finished {
                outcome: Some(Outcome::Terminated | Outcome::Overflow),
                ..
            }) => SessionStatus::Completed,
            Some(_) => SessionStatus::Failed,
            None if !s.windows.is_empty() => SessionStatus::AwaitingInterruptWindow,
            None => SessionStatus::Running,
        }
    }

    pub fn status(&self) -> SessionStatus {
        Session::status_of(&self.shared.lock().expect("session lock poisoned"))
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.progress.subscribe()
    }

    /// Log lines with sequence numbers above `after`.
    pub fn snapshot(&self, after: u64) -> Snapshot {
        let s = self.shared.lock().expect("session lock poisoned");
        let from = (after as usize).min(s.lines.len());
        Snapshot {
            lines: s.lines[from..].to_vec(),
            finished: s.finished.is_some().then(|| Session::status_of(&s)),
        }
    }

    /// The session's event log as stored, one JSON object per line.
    pub fn log_text(&self) -> String {
        let s = self.shared.lock().expect("session lock poisoned");
        let mut out = String::new();
        for l in &s.lines {
            out.push_str(l);
            out.push('\n');
        }
        out
    }

    pub fn info(&self) -> SessionInfo {
        let s = self.shared.lock().expect("session lock poisoned");
        SessionInfo {
            id: self.id.clone(),
            status: Session::status_of(&s),
            events: s.lines.len(),
            outcome: s
                .finished
                .as_ref()
                .and_then(|f| f.outcome.as_ref())
                .map(|o| o.label().to_string()),
            error: s
                .finished
                .as_ref()
                .and_then(|f| f.error.clone())
                .or_else(|| s.persist_error.clone()),
            open_windows: s
                .windows
                .iter()
                .map(|&(index, window)| OpenWindow { index, window })
                .collect(),
            clock: self.request.clock,
        }
    }

    pub fn metrics(&self) -> Result<MetricsResponse, ApiError> {
        let s = self.shared.lock().expect("session lock poisoned");
        let status = Session::status_of(&s);
        let Some(f) = &s.finished else {
            return Err(ApiError::conflict(
                "session is still running",
                status.as_str(),
            ));
        };
        Ok(MetricsResponse {
            id: self.id.clone(),
            status,
            outcome: f
                .outcome
                .as_ref()
                .map(|o| o.label())
                .unwrap_or("failed")
                .to_string(),
            partial: status == SessionStatus::Failed,
            metrics: measure_log(&f.events, &self.request.prices),
        })
    }

    /// Forwards an interrupt to the run and waits for its verdict. A run
    /// that has ended answers [`InterruptError::Finished`].
    pub async fn interrupt(&self, interrupt: UserInterrupt) -> Result<(), InterruptError> {
        let (reply, rx) = oneshot::channel();
        if self.interrupts.send(InterruptRequest { interrupt, reply }).await.is_err() {
            return Err(InterruptError::Finished);
        }
        rx.await.unwrap_or(Err(InterruptError::Finished))
    }

    pub fn advance(&self, instants: usize) -> Result<(), ApiError> {
        match &self.pacer {
            Some(p) => {
                p.advance(instants);
                Ok(())
            }
            None => Err(ApiError::conflict(
                "session clock is not paused",
                self.status().as_str(),
            )),
        }
    }
}
