//! Metrics measured directly from an event log.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::events::{EventKind, EventLog};
use crate::time::Micros;
use crate::types::{AgentKind, Source};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TokenPrice {
    /// Price per prompt token.
    pub input: f64,
    /// Price per completion token.
    pub output: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PriceTable {
    pub approximation: TokenPrice,
    pub target: TokenPrice,
}

impl PriceTable {
    pub fn for_kind(&self, kind: AgentKind) -> TokenPrice {
        match kind {
            AgentKind::Approximation => self.approximation,
            AgentKind::Target => self.target,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let all = [
            self.approximation.input,
            self.approximation.output,
            self.target.input,
            self.target.output,
        ];
        if all.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err("prices must be finite and non-negative".into());
        }
        Ok(())
    }
}

/// Single-run metrics. Durations are seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "TT")]
    pub tt: f64,
    #[serde(rename = "min_TT")]
    pub min_tt: f64,
    #[serde(rename = "ST")]
    pub st: f64,
    #[serde(rename = "min_ST")]
    pub min_st: f64,
    #[serde(rename = "TO")]
    pub to: f64,
    #[serde(rename = "min_TO")]
    pub min_to: f64,
    #[serde(rename = "SO")]
    pub so: f64,
    #[serde(rename = "min_SO")]
    pub min_so: f64,
    #[serde(rename = "MC")]
    pub mc: f64,
    #[serde(rename = "min_MC")]
    pub min_mc: f64,
    pub cost: f64,
    pub steps: usize,
}

/// Number of authoritative steps at the end of the log.
pub fn verified_steps(events: &EventLog) -> usize {
    let mut len = 0usize;
    for e in events.iter() {
        if matches!(e.kind, EventKind::StepVerified | EventKind::StepRejected) {
            len = e.index + 1;
        }
    }
    len
}

/// Peak number of simultaneously running processes, in log order.
pub fn measured_concurrency(events: &EventLog) -> usize {
    let mut cur = 0usize;
    let mut best = 0usize;
    for e in events.iter().filter(|e| e.agent.is_some()) {
        match e.kind {
            EventKind::ProcessStarted => {
                cur += 1;
                best = best.max(cur);
            }
            EventKind::ProcessFinished | EventKind::ProcessCancelled => cur = cur.saturating_sub(1),
            _ => {}
        }
    }
    best
}

pub fn measure_metrics(events: &EventLog, prices: &PriceTable, steps: usize) -> MetricsReport {
    let tt = events.last_time().as_secs_f64();
    let mut to = 0u64;
    let mut cost = 0.0;
    for e in events.of_kind(EventKind::ProcessFinished) {
        let completion = e.tokens.unwrap_or(0);
        to += completion;
        if let Some(kind) = e.agent {
            let price = prices.for_kind(kind);
            cost += completion as f64 * price.output + e.prompt_tokens.unwrap_or(0) as f64 * price.input;
        }
    }
    let per = |x: f64| if steps == 0 { 0.0 } else { x / steps as f64 };
    let mc = measured_concurrency(events) as f64;
    let to = to as f64;
    MetricsReport {
        tt,
        min_tt: tt,
        st: per(tt),
        min_st: per(tt),
        to,
        min_to: to,
        so: per(to),
        min_so: per(to),
        mc,
        min_mc: mc,
        cost,
        steps,
    }
}

/// [`measure_metrics`] with the step count taken from the log itself.
pub fn measure_log(events: &EventLog, prices: &PriceTable) -> MetricsReport {
    measure_metrics(events, prices, verified_steps(events))
}

/// Share of target verifications that confirmed the approximation.
pub fn approx_accuracy(events: &EventLog) -> Option<f64> {
    let mut hit = 0usize;
    let mut miss = 0usize;
    for e in events.iter() {
        match (e.kind, e.source) {
            (EventKind::StepVerified, Some(Source::Approximation)) => hit += 1,
            (EventKind::StepRejected, Some(Source::Target)) => miss += 1,
            _ => {}
        }
    }
    (hit + miss > 0).then(|| hit as f64 / (hit + miss) as f64)
}

/// Gap between presenting approximation `i` and presenting the
/// authoritative step `i`, for every index that had both.
pub fn perceived_latency(events: &EventLog) -> Vec<(usize, Micros)> {
    let mut shown: HashMap<usize, Micros> = HashMap::new();
    let mut out = Vec::new();
    for e in events.iter() {
        match e.kind {
            EventKind::PresentApprox => {
                shown.insert(e.index, e.t);
            }
            EventKind::PresentTarget => {
                if let Some(t0) = shown.remove(&e.index) {
                    out.push((e.index, e.t.saturating_sub(t0)));
                }
            }
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub min: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    if values.is_empty() {
        return Summary {
            mean: 0.0,
            std: 0.0,
            min: 0.0,
        };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    Summary { mean, std, min }
}

pub const METRIC_NAMES: [&str; 6] = ["TT", "ST", "TO", "SO", "MC", "cost"];

fn metric_values(r: &MetricsReport) -> [f64; 6] {
    [r.tt, r.st, r.to, r.so, r.mc, r.cost]
}

/// Dataset aggregate: the metric means with `min_*` taken over runs.
pub fn aggregate(reports: &[MetricsReport]) -> (MetricsReport, Vec<(&'static str, Summary)>) {
    let rows: Vec<(&'static str, Summary)> = METRIC_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let v: Vec<f64> = reports.iter().map(|r| metric_values(r)[i]).collect();
            (*name, summarize(&v))
        })
        .collect();
    let s = |i: usize| rows[i].1;
    let report = MetricsReport {
        tt: s(0).mean,
        min_tt: s(0).min,
        st: s(1).mean,
        min_st: s(1).min,
        to: s(2).mean,
        min_to: s(2).min,
        so: s(3).mean,
        min_so: s(3).min,
        mc: s(4).mean,
        min_mc: s(4).min,
        cost: s(5).mean,
        steps: reports.iter().map(|r| r.steps).sum::<usize>() / reports.len().max(1),
    };
    (report, rows)
}

/// CSV with columns `metric,mean,std,min`.
pub fn summary_csv(rows: &[(&str, Summary)]) -> String {
    let mut out = String::from("metric,mean,std,min\n");
    for (name, s) in rows {
        let _ = writeln!(out, "{name},{},{},{}", s.mean, s.std, s.min);
    }
    out
}

/// Groups runs by measured approximation accuracy into `buckets` equal-width
/// bins over [0, 1]; CSV columns `bucket_low,bucket_high,runs,metric,mean,std,min`.
pub fn accuracy_breakdown_csv(runs: &[(Option<f64>, MetricsReport)], buckets: usize) -> String {
    let buckets = buckets.max(1);
    let mut out = String::from("bucket_low,bucket_high,runs,metric,mean,std,min\n");
    for b in 0..buckets {
        let lo = b as f64 / buckets as f64;
        let hi = (b + 1) as f64 / buckets as f64;
        let members: Vec<MetricsReport> = runs
            .iter()
            .filter(|(acc, _)| {
                acc.is_some_and(|a| a >= lo && (a < hi || (b + 1 == buckets && a <= hi)))
            })
            .map(|(_, r)| r.clone())
            .collect();
        if members.is_empty() {
            continue;
        }
        let (_, rows) = aggregate(&members);
        for (name, s) in rows {
            let _ = writeln!(
                out,
                "{lo},{hi},{},{name},{},{},{}",
                members.len(),
                s.mean,
                s.std,
                s.min
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Event;

    #[test]
    fn empty_log_is_all_zero() {
        let r = measure_metrics(&EventLog::new(), &PriceTable::default(), 0);
        assert_eq!((r.tt, r.st, r.to, r.so, r.mc, r.cost), (0.0, 0.0, 0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn cost_uses_both_token_kinds() {
        let log: EventLog = [
            Event::new(Micros::ZERO, EventKind::ProcessStarted, 0).agent(AgentKind::Target),
            Event::new(Micros::from_secs(1), EventKind::ProcessFinished, 0)
                .agent(AgentKind::Target)
                .tokens(20, 100),
        ]
        .into_iter()
        .collect();
        let prices = PriceTable {
            approximation: TokenPrice::default(),
            target: TokenPrice {
                input: 0.001,
                output: 0.01,
            },
        };
        let r = measure_metrics(&log, &prices, 1);
        assert!((r.cost - (100.0 * 0.001 + 20.0 * 0.01)).abs() < 1e-12);
        assert_eq!(r.mc, 1.0);
        assert_eq!(r.to, 20.0);
    }

    #[test]
    fn summary_statistics() {
        let s = summarize(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert_eq!(s.min, 1.0);
        assert_eq!(summarize(&[5.0]).std, 0.0);
    }

    #[test]
    fn perceived_latency_pairs_presentations() {
        let log: EventLog = [
            Event::new(Micros::from_secs(2), EventKind::PresentApprox, 0),
            Event::new(Micros::from_secs(8), EventKind::PresentTarget, 0),
        ]
        .into_iter()
        .collect();
        assert_eq!(perceived_latency(&log), vec![(0, Micros::from_secs(6))]);
    }
}
