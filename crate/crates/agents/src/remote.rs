use std::sync::Arc;

use async_trait::async_trait;
use futures::future::try_join_all;
use specplan_core::{Agent, AgentError, Micros, StepExchange, StepRequest};

use crate::config::{AgentEndpointConfig, ConfigError, Endpoint, PromptStyle};
use crate::parse::parse_action;
use crate::transport::{ChatMessage, ChatRequest, ChatTransport, Completion, HttpTransport};

fn direct_system(terminate: &str) -> String {
    format!(
        "You are a planning agent. You get a task and the steps taken so far, each with its \
         observation. Reply with the next step only, as a single line `Action: <step>`. When the \
         task is complete, reply `Action: {terminate}`."
    )
}

fn reasoning_system(terminate: &str) -> String {
    format!(
        "You are a planning agent. You get a task and the steps taken so far, each with its \
         observation. Think briefly about what should happen next, then finish with a final line \
         `Action: <step>`. When the task is complete, the action is `{terminate}`."
    )
}

fn thought_system(terminate: &str) -> String {
    format!(
        "You are a planning agent. You get a task and the steps taken so far, each with its \
         observation. Reason about what should happen next and reply with your reasoning only, \
         starting with `Thought:`. Do not state the action yet. If the task is complete, say so; \
         the action will then be `{terminate}`."
    )
}

const ACT_PROMPT: &str = "Now state the next step as a single line `Action: <step>`.";

fn debate_followup(others: &[&str]) -> String {
    let mut out = String::from("Other agents answered:\n");
    for (i, a) in others.iter().enumerate() {
        out.push_str(&format!("--- agent {} ---\n{}\n", i + 1, a.trim()));
    }
    out.push_str("Reconsider the next step in light of their answers and finish with a final line `Action: <step>`.");
    out
}

/// Usage summed over the calls of one step.
#[derive(Default)]
struct Tally {
    prompt_tokens: u64,
    completion_tokens: u64,
    latency: Micros,
}

impl Tally {
    fn add(&mut self, c: &Completion) {
        self.prompt_tokens += c.prompt_tokens;
        self.completion_tokens += c.completion_tokens;
    }

    fn exchange(self, raw_text: String, action: String) -> StepExchange {
        StepExchange {
            prompt_tokens: self.prompt_tokens,
            completion_tokens: self.completion_tokens,
            latency: self.latency,
            raw_text,
            action,
        }
    }
}

/// Chat-completion agent. Latency and token counts come from the
/// transport's completions, so cassette replays reproduce them exactly.
pub struct RemoteAgent {
    config: AgentEndpointConfig,
    transport: Arc<dyn ChatTransport>,
    terminate_token: String,
}

impl RemoteAgent {
    pub fn new(config: AgentEndpointConfig, transport: Arc<dyn ChatTransport>) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(RemoteAgent {
            config,
            transport,
            terminate_token: "terminate".into(),
        })
    }

    /// Agent talking HTTP with the config's timeout and retry budget.
    pub fn http(config: AgentEndpointConfig) -> Result<Self, ConfigError> {
        let transport = Arc::new(HttpTransport::new(config.timeout, config.max_retries));
        RemoteAgent::new(config, transport)
    }

    pub fn with_terminate_token(mut self, token: impl Into<String>) -> Self {
        self.terminate_token = token.into();
        self
    }

    pub fn config(&self) -> &AgentEndpointConfig {
        &self.config
    }

    async fn call(&self, endpoint: Endpoint, messages: Vec<ChatMessage>) -> Result<Completion, AgentError> {
        self.transport
            .complete(&ChatRequest {
                endpoint,
                style: self.config.style,
                messages,
            })
            .await
    }

    async fn single(&self, system: String, prompt: &str) -> Result<StepExchange, AgentError> {
        let c = self
            .call(self.config.endpoint(), vec![ChatMessage::system(system), ChatMessage::user(prompt)])
            .await?;
        let mut tally = Tally::default();
        tally.add(&c);
        tally.latency = c.latency;
        let action = parse_action(&c.text).map_err(|e| AgentError::Parse { raw_text: e.raw_text })?;
        Ok(tally.exchange(c.text, action))
    }

    async fn react(&self, prompt: &str) -> Result<StepExchange, AgentError> {
        let mut messages = vec![
            ChatMessage::system(thought_system(&self.terminate_token)),
            ChatMessage::user(prompt),
        ];
        let thought = self.call(self.config.endpoint(), messages.clone()).await?;
        messages.push(ChatMessage::assistant(thought.text.clone()));
        messages.push(ChatMessage::user(ACT_PROMPT));
        let act = self.call(self.config.endpoint(), messages).await?;
        let mut tally = Tally::default();
        tally.add(&thought);
        tally.add(&act);
        tally.latency = thought.latency + act.latency;
        let raw = format!("{}\n{}", thought.text.trim_end(), act.text);
        let action = parse_action(&act.text).map_err(|_| AgentError::Parse { raw_text: raw.clone() })?;
        Ok(tally.exchange(raw, action))
    }

    async fn debate(&self, prompt: &str, agents: usize, rounds: usize) -> Result<StepExchange, AgentError> {
        let mut tally = Tally::default();
        let mut transcript = String::new();
        let mut answers: Vec<String> = Vec::new();
        for round in 0..rounds {
            let calls = (0..agents).map(|d| {
                let mut messages = vec![
                    ChatMessage::system(format!(
                        "{} You are debater {} of {agents}.",
                        reasoning_system(&self.terminate_token),
                        d + 1
                    )),
                    ChatMessage::user(prompt),
                ];
                if round > 0 {
                    let others: Vec<&str> = answers
                        .iter()
                        .enumerate()
                        .filter(|(o, _)| *o != d)
                        .map(|(_, a)| a.as_str())
                        .collect();
                    messages.push(ChatMessage::assistant(answers[d].clone()));
                    messages.push(ChatMessage::user(debate_followup(&others)));
                }
                self.call(self.config.debater(d), messages)
            });
            let replies = try_join_all(calls).await?;
            // debaters of a round run concurrently
            tally.latency += replies.iter().map(|c| c.latency).max().unwrap_or_default();
            for (d, c) in replies.iter().enumerate() {
                tally.add(c);
                transcript.push_str(&format!("[round {} agent {}]\n{}\n", round + 1, d + 1, c.text.trim_end()));
            }
            answers = replies.into_iter().map(|c| c.text).collect();
        }
        let votes: Vec<String> = answers.iter().filter_map(|a| parse_action(a).ok()).collect();
        let action = majority(&votes).ok_or_else(|| AgentError::Parse {
            raw_text: transcript.clone(),
        })?;
        Ok(tally.exchange(transcript, action))
    }
}

/// Most frequent vote; ties go to the earliest debater.
pub fn majority(votes: &[String]) -> Option<String> {
    let mut best: Option<(&String, usize)> = None;
    for v in votes {
        let n = votes.iter().filter(|o| *o == v).count();
        if best.is_none_or(|(_, b)| n > b) {
            best = Some((v, n));
        }
    }
    best.map(|(v, _)| v.clone())
}

#[async_trait]
impl Agent for RemoteAgent {
    async fn propose(&self, request: &StepRequest) -> Result<StepExchange, AgentError> {
        let prompt = request.trajectory.task_prompt.as_str();
        match self.config.style {
            PromptStyle::Direct => self.single(direct_system(&self.terminate_token), prompt).await,
            PromptStyle::ChainOfThought => self.single(reasoning_system(&self.terminate_token), prompt).await,
            PromptStyle::ReAct => self.react(prompt).await,
            PromptStyle::MultiAgentDebate { agents, rounds } => self.debate(prompt, agents, rounds).await,
        }
    }
}
