//! Closed-form latency, token and concurrency models over per-step profiles.
//!
//! A run splits into segments at *breaking points*: steps where speculation
//! stopped, either because verification rejected the step or because the
//! k-window was exhausted. Within a segment, approximation steps chain back
//! to back and each target step starts together with its approximation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{EventKind, EventLog};
use crate::time::Micros;
use crate::types::AgentKind;

/// Timing and token parameters of one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepProfile {
    pub time_a: Micros,
    pub time_t: Micros,
    pub exec: Micros,
    pub tok_a: u64,
    pub tok_t: u64,
}

impl StepProfile {
    pub fn uniform(n: usize, time_a: Micros, time_t: Micros, exec: Micros, tok_a: u64, tok_t: u64) -> Vec<Self> {
        vec![
            StepProfile {
                time_a,
                time_t,
                exec,
                tok_a,
                tok_t,
            };
            n
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalyticsError {
    #[error("invalid breaking points: {0}")]
    InvalidBreaks(String),
}

/// Strictly increasing breaking steps, starting at -1 and ending at n-1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreakList {
    pub points: Vec<i64>,
}

impl BreakList {
    pub fn new(points: Vec<i64>) -> Self {
        BreakList { points }
    }

    pub fn validate(&self, n: usize, k: usize) -> Result<(), AnalyticsError> {
        let p = &self.points;
        if p.first() != Some(&-1) {
            return Err(AnalyticsError::InvalidBreaks("must start with -1".into()));
        }
        if *p.last().expect("non-empty") != n as i64 - 1 {
            return Err(AnalyticsError::InvalidBreaks(format!("must end with n-1 = {}", n as i64 - 1)));
        }
        for w in p.windows(2) {
            if w[1] <= w[0] {
                return Err(AnalyticsError::InvalidBreaks("must be strictly increasing".into()));
            }
            if (w[1] - w[0]) as usize > k {
                return Err(AnalyticsError::InvalidBreaks(format!(
                    "segment ({}, {}] is longer than k = {k}",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }

    /// Half-open step ranges `(b, e]` as `start..=end` index pairs.
    pub fn segments(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.points
            .windows(2)
            .map(|w| ((w[0] + 1) as usize, w[1] as usize))
    }
}

/// The k-window boundaries alone: steps `j` with `(j + 1) % k == 0`, plus `n - 1`.
pub fn saturation_points(n: usize, k: usize) -> BreakList {
    let mut points = vec![-1i64];
    points.extend((0..n).filter(|j| (j + 1) % k == 0 || j + 1 == n).map(|j| j as i64));
    BreakList::new(points)
}

/// Rejections from the log merged with k-window boundaries.
pub fn breaking_points(events: &EventLog, k: usize, n: usize) -> BreakList {
    let mut set: std::collections::BTreeSet<usize> = events
        .of_kind(EventKind::StepRejected)
        .map(|e| e.index)
        .filter(|&j| j < n)
        .collect();
    set.extend((0..n).filter(|j| (j + 1) % k == 0 || j + 1 == n));
    let mut points = vec![-1i64];
    points.extend(set.into_iter().map(|j| j as i64));
    BreakList::new(points)
}

/// Segment-relative start time of each step in `start..=end`.
fn segment_offsets(profiles: &[StepProfile], start: usize, end: usize) -> Vec<Micros> {
    let mut t = Micros::ZERO;
    (start..=end)
        .map(|j| {
            let at = t;
            t += profiles[j].time_a + profiles[j].exec;
            at
        })
        .collect()
}

pub fn sequential_time(profiles: &[StepProfile]) -> Micros {
    profiles.iter().map(|p| p.time_t + p.exec).sum()
}

/// Time the approximation agent alone would take.
pub fn approx_only_time(profiles: &[StepProfile]) -> Micros {
    profiles.iter().map(|p| p.time_a + p.exec).sum()
}

/// Sum over segments of the latest segment-relative target end time.
pub fn speculative_time(
    breaks: &BreakList,
    profiles: &[StepProfile],
    k: usize,
) -> Result<Micros, AnalyticsError> {
    breaks.validate(profiles.len(), k)?;
    Ok(breaks
        .segments()
        .map(|(s, e)| {
            segment_offsets(profiles, s, e)
                .into_iter()
                .zip(&profiles[s..=e])
                .map(|(off, p)| off + p.time_t)
                .max()
                .unwrap_or_default()
        })
        .sum())
}

/// Latency when every approximation is correct.
pub fn best_case_time(profiles: &[StepProfile], k: usize) -> Micros {
    if profiles.is_empty() {
        return Micros::ZERO;
    }
    speculative_time(&saturation_points(profiles.len(), k), profiles, k)
        .expect("saturation points are valid by construction")
}

/// Per-segment token totals: useful tokens from the profiles plus tokens of
/// finished processes that a later rejection threw away.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenAccounting {
    pub per_segment: Vec<u64>,
    pub useful: Vec<u64>,
    pub wasted: Vec<u64>,
    /// Time of the rejection that closed the segment, if one did.
    pub q: Vec<Option<Micros>>,
    /// Number of wasted processes.
    pub m: Vec<usize>,
    pub total: u64,
}

/// Finished processes invalidated by a rejection, as
/// `(rejected index, rejection time, tokens)` per process.
pub fn wasted_processes(events: &EventLog) -> Vec<(usize, Micros, u64)> {
    // (index, kind) -> (start position, tokens if finished)
    let mut live: std::collections::HashMap<(usize, AgentKind), (usize, Option<u64>)> =
        std::collections::HashMap::new();
    let mut finished: Vec<(usize, usize, u64)> = Vec::new(); // (start pos, index, tokens)
    let mut out = Vec::new();
    for (pos, e) in events.iter().enumerate() {
        match (e.kind, e.agent) {
            (EventKind::ProcessStarted, Some(kind)) => {
                live.insert((e.index, kind), (pos, None));
            }
            (EventKind::ProcessFinished, Some(kind)) => {
                if let Some((start, _)) = live.remove(&(e.index, kind)) {
                    finished.push((start, e.index, e.tokens.unwrap_or(0)));
                }
            }
            (EventKind::ProcessCancelled, Some(kind)) => {
                live.remove(&(e.index, kind));
            }
            (EventKind::StepRejected, _) => {
                let j = e.index;
                finished.retain(|&(_, index, tokens)| {
                    if index > j {
                        out.push((j, e.t, tokens));
                        false
                    } else {
                        true
                    }
                });
            }
            _ => {}
        }
    }
    out
}

pub fn total_tokens(
    breaks: &BreakList,
    profiles: &[StepProfile],
    k: usize,
    events: &EventLog,
) -> Result<TokenAccounting, AnalyticsError> {
    breaks.validate(profiles.len(), k)?;
    let wasted = wasted_processes(events);
    let mut acc = TokenAccounting::default();
    for (s, e) in breaks.segments() {
        let useful: u64 = profiles[s..=e].iter().map(|p| p.tok_a + p.tok_t).sum();
        let hits: Vec<_> = wasted.iter().filter(|w| w.0 == e).collect();
        let w: u64 = hits.iter().map(|w| w.2).sum();
        acc.useful.push(useful);
        acc.wasted.push(w);
        acc.q.push(hits.first().map(|w| w.1));
        acc.m.push(hits.len());
        acc.per_segment.push(useful + w);
    }
    acc.total = acc.per_segment.iter().sum();
    Ok(acc)
}

/// Tokens when every step is rejected and every speculative process
/// finishes before its rejection.
pub fn worst_case_tokens(profiles: &[StepProfile], k: usize) -> u64 {
    profiles
        .iter()
        .enumerate()
        .map(|(i, p)| ((i % k) as u64 + 1) * (p.tok_a + p.tok_t))
        .sum()
}

/// Largest number of overlapping target intervals `[start, end)` within a
/// segment, plus one for the approximation agent.
pub fn max_concurrency(breaks: &BreakList, profiles: &[StepProfile]) -> usize {
    breaks
        .segments()
        .filter(|(s, e)| s <= e && *e < profiles.len())
        .map(|(s, e)| {
            let mut edges: Vec<(Micros, i32)> = Vec::new();
            for (off, p) in segment_offsets(profiles, s, e).into_iter().zip(&profiles[s..=e]) {
                if p.time_t > Micros::ZERO {
                    edges.push((off, 1));
                    edges.push((off + p.time_t, -1));
                }
            }
            // ends sort before starts at equal times
            edges.sort();
            let mut cur = 0i32;
            let mut best = 0i32;
            for (_, d) in edges {
                cur += d;
                best = best.max(cur);
            }
            best as usize + 1
        })
        .max()
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constants(n: usize) -> Vec<StepProfile> {
        StepProfile::uniform(n, Micros::from_secs(2), Micros::from_secs(8), Micros::ZERO, 10, 20)
    }

    /// Direct enumeration: targets of segment (b, e] end at 2*(j-b-1)+8.
    fn enumerate_segments(points: &[i64]) -> u64 {
        points
            .windows(2)
            .map(|w| (w[0] + 1..=w[1]).map(|j| 2 * (j - w[0] - 1) as u64 + 8).max().unwrap())
            .sum()
    }

    #[test]
    fn corner_latencies() {
        let p = constants(10);
        assert_eq!(best_case_time(&p, 10), Micros::from_secs(26));
        assert_eq!(best_case_time(&p, 5), Micros::from_secs(32));
        assert_eq!(best_case_time(&p, 1), Micros::from_secs(80));
        assert_eq!(sequential_time(&p), Micros::from_secs(80));
        assert_eq!(best_case_time(&p, 20), Micros::from_secs(26));
        assert_eq!(sequential_time(&[]), Micros::ZERO);
        for k in 1..=10 {
            let b = saturation_points(10, k);
            assert_eq!(
                speculative_time(&b, &p, k).unwrap(),
                Micros::from_secs(enumerate_segments(&b.points))
            );
        }
    }

    #[test]
    fn saturation_points_examples() {
        assert_eq!(saturation_points(10, 10).points, vec![-1, 9]);
        assert_eq!(saturation_points(10, 5).points, vec![-1, 4, 9]);
        assert_eq!(saturation_points(10, 1).points, (-1..10).collect::<Vec<_>>());
    }

    #[test]
    fn all_breaks_equal_sequential() {
        let p = constants(10);
        let b = BreakList::new((-1..10).collect());
        assert_eq!(speculative_time(&b, &p, 10).unwrap(), sequential_time(&p));
    }

    #[test]
    fn malformed_breaks_rejected() {
        let p = constants(3);
        for bad in [vec![0, 2], vec![-1, 1], vec![-1, 1, 1, 2], vec![-1, 2]] {
            assert!(speculative_time(&BreakList::new(bad), &p, 2).is_err());
        }
    }

    #[test]
    fn worst_case_token_enumeration() {
        let p = constants(10);
        // hand enumeration of the multipliers
        assert_eq!(worst_case_tokens(&p, 10), (1..=10).sum::<u64>() * 30);
        assert_eq!(worst_case_tokens(&p, 10), 1650);
        assert_eq!(worst_case_tokens(&p, 4), (1 + 2 + 3 + 4 + 1 + 2 + 3 + 4 + 1 + 2) * 30);
        assert_eq!(worst_case_tokens(&p, 4), 690);
        assert_eq!(worst_case_tokens(&constants(1), 3), 30);
    }

    #[test]
    fn concurrency_examples() {
        let p = constants(10);
        for k in 4..=10 {
            assert_eq!(max_concurrency(&saturation_points(10, k), &p), 5, "k={k}");
        }
        assert_eq!(max_concurrency(&saturation_points(10, 3), &p), 4);
        assert_eq!(max_concurrency(&saturation_points(10, 1), &p), 2);
        let fast_target = StepProfile::uniform(10, Micros::from_secs(2), Micros::from_secs(2), Micros::ZERO, 1, 1);
        assert_eq!(max_concurrency(&saturation_points(10, 10), &fast_target), 2);
    }

    #[test]
    fn no_waste_without_rejections() {
        let p = constants(10);
        let acc = total_tokens(&saturation_points(10, 10), &p, 10, &EventLog::new()).unwrap();
        assert_eq!(acc.total, 300);
        assert_eq!(acc.wasted, vec![0]);
    }
}
