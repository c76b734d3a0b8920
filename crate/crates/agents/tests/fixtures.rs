//! Offline runs from committed cassettes.
//!
//! The cassettes are produced by a scripted transport (fixed latencies and
//! token counts) recorded through [`Cassette`]. Set
//! `SPECPLAN_UPDATE_FIXTURES=1` to rewrite them.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use async_trait::async_trait;
use specplan_agents::*;
use specplan_core::engine::VirtualDriver;
use specplan_core::*;

const PIPELINE: [&str; 10] = [
    "Image Denoising",
    "Image Super-resolution",
    "Image Colorization",
    "Image Captioning",
    "Text Summarization",
    "Machine Translation",
    "Sentiment Analysis",
    "Question Answering",
    "Text-to-Speech",
    "terminate",
];

const TASK: &str = "Given a noisy, low-resolution black-and-white photo, produce a spoken German summary of its caption and its sentiment.";

/// Stands in for two hosted models: "large" follows the pipeline, "small"
/// gets step 3 wrong. Latency 2 s / 8 s, 10 / 20 completion tokens.
struct Scripted;

#[async_trait]
impl ChatTransport for Scripted {
    async fn complete(&self, request: &ChatRequest) -> Result<Completion, AgentError> {
        let prompt = &request.messages[1].content;
        let index = prompt.lines().filter(|l| l.starts_with("Step ")).count();
        let on_track = (0..index).all(|j| prompt.contains(&format!("Step {j}: {} →", PIPELINE[j])));
        let small = request.endpoint.model_id == "small";
        let action = match (on_track, small, index) {
            (false, _, _) => "Ask the user for help".to_string(),
            (true, true, 3) => "Object Detection".to_string(),
            (true, _, i) => PIPELINE[i.min(PIPELINE.len() - 1)].to_string(),
        };
        Ok(Completion {
            text: format!("Action: {action}"),
            prompt_tokens: prompt.split_whitespace().count() as u64,
            completion_tokens: if small { 10 } else { 20 },
            latency: Micros::from_secs(if small { 2 } else { 8 }),
        })
    }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn agents(approx: Arc<dyn ChatTransport>, target: Arc<dyn ChatTransport>) -> (Arc<dyn Agent>, Arc<dyn Agent>) {
    let cfg = |model: &str| AgentEndpointConfig::new("http://models.invalid/v1", model, PromptStyle::Direct);
    (
        Arc::new(RemoteAgent::new(cfg("small"), approx).unwrap()),
        Arc::new(RemoteAgent::new(cfg("large"), target).unwrap()),
    )
}

fn run(approx: Arc<dyn Agent>, target: Arc<dyn Agent>) -> PlanResult {
    let driver = VirtualDriver::new(
        TASK,
        approx,
        target,
        Arc::new(EchoExecutor::default()),
        EngineConfig::simulated(10),
    );
    futures::executor::block_on(driver.run()).unwrap()
}

fn record_ten_step(path: &Path) -> PlanResult {
    let _ = std::fs::remove_file(path);
    let cassette: Arc<dyn ChatTransport> = Arc::new(Cassette::record(path, Arc::new(Scripted)).unwrap());
    let (a, t) = agents(cassette.clone(), cassette);
    run(a, t)
}

#[test]
fn ten_step_cassette_replays_offline() {
    let path = fixture("ten_step_plan.jsonl");
    if std::env::var_os("SPECPLAN_UPDATE_FIXTURES").is_some() {
        record_ten_step(&path);
    }
    let cassette: Arc<dyn ChatTransport> = Arc::new(Cassette::replay(&path).unwrap());
    let (a, t) = agents(cassette.clone(), cassette);
    let r = run(a, t);
    assert_eq!(r.outcome, Outcome::Terminated);
    assert_eq!(r.contents(), PIPELINE);
    assert_eq!(r.events.count(EventKind::StepRejected), 1);
    r.events.check_invariants(Some(10)).unwrap();

    // replay is deterministic end to end and matches the recorded run
    let dir = tempfile::tempdir().unwrap();
    let rerecorded = record_ten_step(&dir.path().join("c.jsonl"));
    assert_eq!(rerecorded.events.to_jsonl(), r.events.to_jsonl());
    assert_eq!(
        std::fs::read_to_string(dir.path().join("c.jsonl")).unwrap(),
        std::fs::read_to_string(&path).unwrap()
    );
}

#[test]
fn recorded_latency_and_tokens_reach_the_event_log() {
    let cassette: Arc<dyn ChatTransport> = Arc::new(Cassette::replay(fixture("ten_step_plan.jsonl")).unwrap());
    let (a, t) = agents(cassette.clone(), cassette);
    let r = run(a, t);
    let first_target = r
        .events
        .of_kind(EventKind::ProcessFinished)
        .find(|e| e.agent == Some(AgentKind::Target))
        .unwrap();
    assert_eq!(first_target.t, Micros::from_secs(8));
    assert_eq!(first_target.tokens, Some(20));
    assert_eq!(first_target.prompt_tokens, Some(TASK.split_whitespace().count() as u64));
}

#[test]
fn direct_fixture_answers_super_resolution() {
    let path = fixture("openagi_direct.jsonl");
    let task = "Given a low-resolution image, return a sharper high-resolution version of it.";
    let request = StepRequest {
        index: 0,
        task: task.into(),
        trajectory: Trajectory::new(task, Vec::new()),
    };
    let cfg = AgentEndpointConfig::new("http://models.invalid/v1", "large", PromptStyle::Direct);
    if std::env::var_os("SPECPLAN_UPDATE_FIXTURES").is_some() {
        let _ = std::fs::remove_file(&path);
        struct One;
        #[async_trait]
        impl ChatTransport for One {
            async fn complete(&self, _: &ChatRequest) -> Result<Completion, AgentError> {
                Ok(Completion {
                    text: "Action: Image Super-resolution".into(),
                    prompt_tokens: 61,
                    completion_tokens: 6,
                    latency: Micros::from_millis(850),
                })
            }
        }
        let agent = RemoteAgent::new(cfg.clone(), Arc::new(Cassette::record(&path, Arc::new(One)).unwrap())).unwrap();
        futures::executor::block_on(agent.propose(&request)).unwrap();
    }
    let agent = RemoteAgent::new(cfg, Arc::new(Cassette::replay(&path).unwrap())).unwrap();
    let ex = futures::executor::block_on(agent.propose(&request)).unwrap();
    assert_eq!(ex.action, "Image Super-resolution");
    assert_eq!(ex.latency, Micros::from_millis(850));
}
