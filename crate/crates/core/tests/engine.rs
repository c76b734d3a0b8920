use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use specplan_core::engine::{run_plan, run_sequential, ScriptedUser, VirtualDriver};
use specplan_core::presentation::{project_transcript, recorded_presentations, replay_presentations};
use specplan_core::simkit::{make_sim_agents, sim_config, SimAgentSpec, SimExecutor, SimWorld};
use specplan_core::*;

const GT: [&str; 7] = [
    "split money",
    "verify A's Venmo",
    "collect from A",
    "collect from B",
    "send receipt",
    "notify group",
    "terminate",
];

fn secs(s: f64) -> Micros {
    Micros::from_secs_f64(s)
}

/// Target always answers the script; the approximation guesses wrong at
/// step 1 ("request money from A") when its prefix is correct.
fn venmo_agents(
    approx_latency: fn(usize) -> f64,
    target_latency: fn(usize) -> f64,
) -> (Arc<dyn Agent>, Arc<dyn Agent>) {
    let approx = FnAgent(move |r: &StepRequest| {
        let action = if r.index == 1 { "request money from A" } else { GT[r.index] };
        Ok(StepExchange::simple(action, 10, secs(approx_latency(r.index))))
    });
    let target = FnAgent(move |r: &StepRequest| {
        Ok(StepExchange::simple(GT[r.index], 20, secs(target_latency(r.index))))
    });
    (Arc::new(approx), Arc::new(target))
}

fn run_virtual(
    approx: Arc<dyn Agent>,
    target: Arc<dyn Agent>,
    config: EngineConfig,
    script: Vec<(Micros, UserInterrupt)>,
) -> (PlanResult, Vec<(UserInterrupt, Result<(), InterruptError>)>) {
    let driver = VirtualDriver::new("pay back friends", approx, target, Arc::new(EchoExecutor::default()), config)
        .with_user(Box::new(ScriptedUser::new(script)));
    futures::executor::block_on(driver.run_detailed()).unwrap()
}

fn cancelled_at(log: &EventLog, t: Micros) -> Vec<(AgentKind, usize)> {
    log.of_kind(EventKind::ProcessCancelled)
        .filter(|e| e.t == t)
        .map(|e| (e.agent.unwrap(), e.index))
        .collect()
}

fn assert_presentation_consistent(r: &PlanResult) {
    assert_eq!(recorded_presentations(&r.events), r.presented);
    let replayed = replay_presentations(&r.events);
    let key = |p: &Presented| (p.slot, p.index, p.content.clone(), p.t);
    assert_eq!(
        replayed.iter().map(key).collect::<Vec<_>>(),
        r.presented.iter().map(key).collect::<Vec<_>>()
    );
    assert_eq!(project_transcript(&r.presented), r.contents());
}

#[test]
fn matching_first_step_is_verified_and_speculation_continues() {
    let (a, t) = venmo_agents(|_| 1.0, |_| 3.0);
    let (r, _) = run_virtual(a, t, EngineConfig::simulated(4), vec![]);
    let first = r.events.of_kind(EventKind::StepVerified).next().unwrap();
    assert_eq!((first.index, first.content.as_deref()), (0, Some("split money")));
    assert_eq!(first.source, Some(Source::Approximation));
    // step 1 of the approximation started before step 0 was verified
    let a1 = r
        .events
        .iter()
        .position(|e| e.kind == EventKind::ProcessStarted && e.index == 1)
        .unwrap();
    let v0 = r.events.iter().position(|e| e.kind == EventKind::StepVerified).unwrap();
    assert!(a1 < v0);
    assert_eq!(r.contents(), GT);
}

#[test]
fn mismatch_repairs_step_and_cancels_downstream() {
    // T0 wins step 0 at 0.5; T1 then finishes at 5.0 while A0..A4 are done,
    // T4 finished early, and T2, T3, T5, A5 are still running.
    let (a, t) = venmo_agents(
        |_| 1.0,
        |i| match i {
            0 => 0.5,
            1 => 4.5,
            4 => 0.5,
            _ => 100.0,
        },
    );
    let (r, _) = run_virtual(a, t, EngineConfig::simulated(10), vec![]);
    let rejected: Vec<_> = r.events.of_kind(EventKind::StepRejected).collect();
    assert_eq!(rejected.len(), 1);
    assert_eq!(rejected[0].index, 1);
    assert_eq!(rejected[0].content.as_deref(), Some("verify A's Venmo"));
    assert_eq!(rejected[0].t, secs(5.0));
    let mut cancelled = cancelled_at(&r.events, secs(5.0));
    cancelled.sort();
    assert_eq!(
        cancelled,
        vec![
            (AgentKind::Approximation, 5),
            (AgentKind::Target, 2),
            (AgentKind::Target, 3),
            (AgentKind::Target, 5)
        ]
    );
    assert_eq!(r.contents(), GT);
    assert_eq!(r.trajectory.entries[1].step.source, Source::Target);
    assert!(r.trajectory.task_prompt.contains("Step 1: verify A's Venmo"));
    assert!(!r.trajectory.task_prompt.contains("request money from A →"));
    r.events.check_invariants(Some(10)).unwrap();
    assert_presentation_consistent(&r);
}

#[test]
fn mismatch_at_last_proposed_step_cancels_nothing() {
    let approx = FnAgent(|r: &StepRequest| Ok(StepExchange::simple(format!("guess {}", r.index), 1, secs(1.0))));
    let target = FnAgent(|r: &StepRequest| {
        let a = if r.index == 1 { "terminate" } else { "step" };
        Ok(StepExchange::simple(a, 1, secs(3.0)))
    });
    let (r, _) = run_virtual(Arc::new(approx), Arc::new(target), EngineConfig::simulated(1), vec![]);
    assert_eq!(r.events.count(EventKind::StepRejected), 2);
    assert_eq!(r.events.count(EventKind::ProcessCancelled), 0);
    assert_eq!(r.contents(), vec!["step", "terminate"]);
}

#[test]
fn k_one_matches_target_only_and_never_speculates_deeper() {
    let world = SimWorld::new(8, 1.0, 3);
    let spec_a = SimAgentSpec::new(AgentKind::Approximation, secs(2.0), 10);
    let spec_t = SimAgentSpec::new(AgentKind::Target, secs(8.0), 20);
    let (a, t) = make_sim_agents(&world, &spec_a, &spec_t);
    let (r, _) = run_virtual(a, t.clone(), sim_config(&world, 1), vec![]);
    let seq = futures::executor::block_on(run_sequential(
        "x",
        t.as_ref(),
        AgentKind::Target,
        &SimExecutor::default(),
        &sim_config(&world, 1),
    ))
    .unwrap();
    assert_eq!(r.contents(), seq.contents());
    r.events.check_invariants(Some(1)).unwrap();
}

#[test]
fn perfect_approximation_has_no_rejections_or_cancellations() {
    let world = SimWorld::new(10, 1.0, 11);
    let (a, t) = make_sim_agents(
        &world,
        &SimAgentSpec::new(AgentKind::Approximation, secs(2.0), 10),
        &SimAgentSpec::new(AgentKind::Target, secs(8.0), 20),
    );
    let (r, _) = run_virtual(a, t, sim_config(&world, 10), vec![]);
    assert_eq!(r.events.count(EventKind::StepRejected), 0);
    assert_eq!(r.events.count(EventKind::ProcessCancelled), 0);
    assert_eq!(r.outcome, Outcome::Terminated);
    assert!(terminate_check(&r.trajectory, &EngineConfig::default()));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let run = || {
        let world = SimWorld::new(12, 0.5, 42);
        let (a, t) = make_sim_agents(
            &world,
            &SimAgentSpec::new(AgentKind::Approximation, secs(1.5), 10),
            &SimAgentSpec::new(AgentKind::Target, secs(6.0), 20),
        );
        run_virtual(a, t, sim_config(&world, 4), vec![]).0.events.to_jsonl()
    };
    assert_eq!(run(), run());
}

/// After each rejection at `j` (and the cancellations it triggers), nothing
/// with index above `j` is still running.
fn assert_no_orphans(log: &EventLog) {
    let mut running: std::collections::BTreeSet<(usize, AgentKind)> = Default::default();
    let events = &log.events;
    let mut pos = 0;
    while pos < events.len() {
        let e = &events[pos];
        match (e.kind, e.agent) {
            (EventKind::ProcessStarted, Some(k)) => {
                running.insert((e.index, k));
            }
            (EventKind::ProcessFinished | EventKind::ProcessCancelled, Some(k)) => {
                running.remove(&(e.index, k));
            }
            (EventKind::StepRejected, _) => {
                let j = e.index;
                while pos + 1 < events.len() && events[pos + 1].kind == EventKind::ProcessCancelled {
                    pos += 1;
                    running.remove(&(events[pos].index, events[pos].agent.unwrap()));
                }
                assert!(
                    running.iter().all(|(i, _)| *i <= j),
                    "orphans after rejection at {j}: {running:?}"
                );
            }
            _ => {}
        }
        pos += 1;
    }
}

#[test]
fn fuzz_rejections_leave_no_orphans() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for seed in 0..20u64 {
        let n = rng.random_range(2..=12);
        let k = rng.random_range(1..=6);
        let world = SimWorld::new(n, rng.random_range(0.0..1.0), seed);
        let mut spec_a = SimAgentSpec::new(AgentKind::Approximation, secs(1.0), 5);
        let mut spec_t = SimAgentSpec::new(AgentKind::Target, secs(5.0), 9);
        spec_a.latency_overrides = (0..n).map(|_| Micros(rng.random_range(100_000..3_000_000))).collect();
        spec_t.latency_overrides = (0..n).map(|_| Micros(rng.random_range(100_000..9_000_000))).collect();
        let (a, t) = make_sim_agents(&world, &spec_a, &spec_t);
        let (r, _) = run_virtual(a, t, sim_config(&world, k), vec![]);
        assert_no_orphans(&r.events);
        r.events.check_invariants(Some(k)).unwrap();
        assert_eq!(r.contents(), world.ground_truth, "seed {seed}");
        assert_presentation_consistent(&r);
    }
}

fn latency_override(index: usize, content: &str) -> UserInterrupt {
    UserInterrupt {
        kind: InterruptKind::LatencyOverride,
        index,
        content: content.into(),
        received_at: Micros::ZERO,
    }
}

fn target_override(index: usize, content: &str) -> UserInterrupt {
    UserInterrupt {
        kind: InterruptKind::TargetOverride,
        ..latency_override(index, content)
    }
}

#[test]
fn latency_override_adopts_user_step() {
    // approx 1 is shown at 8 when target 0 is presented; window for step 1 opens
    let (a, t) = venmo_agents(|_| 2.0, |_| 8.0);
    let ui = latency_override(1, "request money via Venmo");
    let (r, acks) = run_virtual(a, t, EngineConfig::simulated(4), vec![(secs(9.0), ui)]);
    assert_eq!(acks.len(), 1);
    assert!(acks[0].1.is_ok());
    let step1 = &r.trajectory.entries[1].step;
    assert_eq!(step1.content, "request money via Venmo");
    assert_eq!(step1.source, Source::User);
    assert!(cancelled_at(&r.events, secs(9.0)).contains(&(AgentKind::Target, 1)));
    assert_eq!(r.trajectory.entries[2].step.content, GT[2]);
    assert_eq!(r.outcome, Outcome::Terminated);
    assert_presentation_consistent(&r);
}

#[test]
fn latency_override_after_target_finished_is_stale() {
    let (a, t) = venmo_agents(|_| 2.0, |_| 8.0);
    // target 1 ends at 2 + 8 = 10
    let (_, acks) = run_virtual(a, t, EngineConfig::simulated(4), vec![(secs(10.5), latency_override(1, "x"))]);
    assert!(matches!(acks[0].1, Err(InterruptError::Stale { index: 1, .. })));
}

#[test]
fn two_interrupts_in_one_window_first_wins() {
    let (a, t) = venmo_agents(|_| 2.0, |_| 8.0);
    let script = vec![
        (secs(9.0), latency_override(1, "first")),
        (secs(9.0), latency_override(1, "second")),
    ];
    let (r, acks) = run_virtual(a, t, EngineConfig::simulated(4), script);
    assert!(acks[0].1.is_ok());
    assert!(acks[1].1.as_ref().unwrap_err().is_stale());
    assert_eq!(r.trajectory.entries[1].step.content, "first");
}

#[test]
fn equal_target_override_cancels_nothing() {
    let (a, t) = venmo_agents(|_| 2.0, |_| 8.0);
    let (r, acks) = run_virtual(a, t, EngineConfig::simulated(4), vec![(secs(8.5), target_override(0, "split money"))]);
    assert!(acks[0].1.is_ok());
    assert!(cancelled_at(&r.events, secs(8.5)).is_empty());
    assert_eq!(r.trajectory.entries[0].step.source, Source::User);
    assert_eq!(r.contents(), GT);
}

#[test]
fn differing_target_override_cancels_downstream() {
    let (a, t) = venmo_agents(|_| 2.0, |_| 8.0);
    let (r, acks) = run_virtual(a, t, EngineConfig::simulated(4), vec![(secs(8.5), target_override(0, "split bill"))]);
    assert!(acks[0].1.is_ok());
    let cancelled = cancelled_at(&r.events, secs(8.5));
    assert!(!cancelled.is_empty());
    assert!(cancelled.iter().all(|(_, i)| *i > 0));
    assert_eq!(r.trajectory.entries[0].step.content, "split bill");
    assert_eq!(r.trajectory.entries[0].step.source, Source::User);
    assert_presentation_consistent(&r);
}

#[test]
fn override_of_old_step_is_backtracking() {
    let (a, t) = venmo_agents(|_| 2.0, |_| 8.0);
    let (_, acks) = run_virtual(a, t, EngineConfig::simulated(4), vec![(secs(30.0), target_override(0, "x"))]);
    assert!(matches!(acks[0].1, Err(InterruptError::Backtrack { index: 0, .. })));
}

#[test]
fn empty_interrupt_content_is_rejected() {
    let (a, t) = venmo_agents(|_| 2.0, |_| 8.0);
    let (_, acks) = run_virtual(a, t, EngineConfig::simulated(4), vec![(secs(9.0), latency_override(1, " "))]);
    assert_eq!(acks[0].1, Err(InterruptError::EmptyContent));
}

#[test]
fn retryable_errors_are_retried_with_backoff() {
    let calls = Arc::new(AtomicUsize::new(0));
    let c = calls.clone();
    let target = FnAgent(move |r: &StepRequest| {
        if r.index == 0 && c.fetch_add(1, Ordering::SeqCst) == 0 {
            return Err(AgentError::Transport {
                message: "503".into(),
                retryable: true,
            });
        }
        Ok(StepExchange::simple("terminate", 1, secs(1.0)))
    });
    let approx = FnAgent(|_: &StepRequest| Ok(StepExchange::simple("terminate", 1, secs(5.0))));
    let mut config = EngineConfig::simulated(2);
    config.retry_backoff = secs(0.5);
    let (r, _) = run_virtual(Arc::new(approx), Arc::new(target), config, vec![]);
    assert_eq!(r.outcome, Outcome::Terminated);
    // 0.5 s backoff + 1 s second attempt, before the 5 s approximation
    assert_eq!(r.events.last_time(), secs(1.5));
    assert_eq!(calls.load(Ordering::SeqCst), 2);
}

#[test]
fn target_failure_reports_step_index() {
    let target = FnAgent(|r: &StepRequest| {
        if r.index == 1 {
            Err(AgentError::Other("boom".into()))
        } else {
            Ok(StepExchange::simple("a", 1, secs(1.0)))
        }
    });
    let approx = FnAgent(|_: &StepRequest| Ok(StepExchange::simple("a", 1, secs(1.0))));
    let (r, _) = run_virtual(Arc::new(approx), Arc::new(target), EngineConfig::simulated(2), vec![]);
    match r.clone().into_result() {
        Err(EngineError::Plan(PlanFailure::Agent { index, kind, .. })) => {
            assert_eq!((index, kind), (1, AgentKind::Target))
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(r.events.events.last().unwrap().kind, EventKind::Terminated);
}

#[test]
fn overflow_is_flagged_but_returned() {
    let agent = || FnAgent(|_: &StepRequest| Ok(StepExchange::simple("again", 1, secs(1.0))));
    let mut config = EngineConfig::simulated(2);
    config.max_steps = 3;
    let (r, _) = run_virtual(Arc::new(agent()), Arc::new(agent()), config, vec![]);
    assert!(r.is_overflow());
    assert_eq!(r.trajectory.len(), 3);
    assert!(r.into_result().is_ok());
}

struct Effectful;

#[async_trait]
impl Executor for Effectful {
    async fn execute(&self, _: &Step) -> Result<Observation, ExecutionError> {
        Ok(Observation::default())
    }
    fn side_effecting(&self) -> bool {
        true
    }
}

#[test]
fn side_effecting_executor_needs_opt_in() {
    let (a, t) = venmo_agents(|_| 1.0, |_| 2.0);
    let run = |config: EngineConfig| {
        futures::executor::block_on(
            VirtualDriver::new("t", a.clone(), t.clone(), Arc::new(Effectful), config).run(),
        )
    };
    assert!(matches!(run(EngineConfig::simulated(2)), Err(EngineError::SideEffectingExecutor)));
    let mut ok = EngineConfig::simulated(2);
    ok.allow_side_effecting_speculation = true;
    assert!(run(ok).is_ok());
}

#[test]
fn failed_execution_of_verified_step_is_fatal() {
    struct FailOn(&'static str);
    #[async_trait]
    impl Executor for FailOn {
        async fn execute(&self, s: &Step) -> Result<Observation, ExecutionError> {
            if s.content == self.0 {
                Err(ExecutionError("no such account".into()))
            } else {
                Ok(Observation::default())
            }
        }
    }
    let (a, t) = venmo_agents(|_| 1.0, |_| 2.0);
    // the wrong speculative step fails to execute, but it is rejected anyway
    let r = futures::executor::block_on(
        VirtualDriver::new("t", a.clone(), t.clone(), Arc::new(FailOn("request money from A")), EngineConfig::simulated(4)).run(),
    )
    .unwrap();
    assert_eq!(r.outcome, Outcome::Terminated);
    let r = futures::executor::block_on(
        VirtualDriver::new("t", a, t, Arc::new(FailOn("send receipt")), EngineConfig::simulated(4)).run(),
    )
    .unwrap();
    assert!(matches!(r.failure(), Some(PlanFailure::Execution { index: 4, .. })));
}

/// Agent that really waits, for the wall-clock driver.
struct Sleepy {
    approx: bool,
}

#[async_trait]
impl Agent for Sleepy {
    async fn propose(&self, r: &StepRequest) -> Result<StepExchange, AgentError> {
        let (action, ms) = if self.approx {
            (if r.index == 1 { "request money from A" } else { GT[r.index] }, 20)
        } else {
            (GT[r.index], 80)
        };
        tokio::time::sleep(std::time::Duration::from_millis(ms)).await;
        Ok(StepExchange::simple(action, 1, Micros::from_millis(ms)))
    }
}

#[tokio::test(start_paused = true)]
async fn live_driver_matches_target_only_plan() {
    let r = run_plan(
        "pay back friends",
        Arc::new(Sleepy { approx: true }),
        Arc::new(Sleepy { approx: false }),
        Arc::new(EchoExecutor::default()),
        EngineConfig::default(),
        None,
    )
    .await
    .unwrap();
    assert_eq!(r.contents(), GT);
    assert_eq!(r.events.count(EventKind::StepRejected), 1);
    r.events.check_invariants(Some(4)).unwrap();
    assert_no_orphans(&r.events);
    assert_presentation_consistent(&r);
}

#[tokio::test(start_paused = true)]
async fn live_driver_accepts_interrupts_over_channel() {
    let (tx, rx) = tokio::sync::mpsc::channel(4);
    let handle = tokio::spawn(run_plan(
        "pay back friends",
        Arc::new(Sleepy { approx: true }),
        Arc::new(Sleepy { approx: false }),
        Arc::new(EchoExecutor::default()),
        EngineConfig::default(),
        Some(rx),
    ));
    // target 0 is presented at 80 ms; approx 1 (ready since 40 ms) follows
    tokio::time::sleep(std::time::Duration::from_millis(90)).await;
    let (reply, ack) = tokio::sync::oneshot::channel();
    tx.send(specplan_core::engine::InterruptRequest {
        interrupt: latency_override(1, "request money via Venmo"),
        reply,
    })
    .await
    .unwrap();
    assert_eq!(ack.await.unwrap(), Ok(()));
    let r = handle.await.unwrap().unwrap();
    assert_eq!(r.trajectory.entries[1].step.source, Source::User);
    assert_eq!(r.outcome, Outcome::Terminated);
}
