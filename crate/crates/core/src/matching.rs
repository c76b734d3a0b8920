//! Step verification: exact and soft (function-name + edit-distance) matching.

use serde::{Deserialize, Serialize};

use crate::types::Step;

/// Character-level Levenshtein distance divided by the longer length.
///
/// Unit costs for insert, delete and substitute. Two empty strings are at
/// distance 0.
pub fn normalized_edit_distance(s1: &str, s2: &str) -> f64 {
    let a: Vec<char> = s1.chars().collect();
    let b: Vec<char> = s2.chars().collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 0.0;
    }
    levenshtein(&a, &b) as f64 / longest as f64
}

fn levenshtein(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Exact,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPolicy {
    pub kind: MatchKind,
    /// Soft only: parameters match when their normalized distance is below this.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Soft only: require byte-equal function names.
    #[serde(default = "default_true")]
    pub function_name_exact: bool,
}

fn default_threshold() -> f64 {
    0.3
}

fn default_true() -> bool {
    true
}

impl Default for MatchPolicy {
    fn default() -> Self {
        MatchPolicy::exact()
    }
}

impl MatchPolicy {
    pub fn exact() -> Self {
        MatchPolicy {
            kind: MatchKind::Exact,
            threshold: default_threshold(),
            function_name_exact: true,
        }
    }

    pub fn soft(threshold: f64) -> Self {
        MatchPolicy {
            kind: MatchKind::Soft,
            threshold,
            function_name_exact: true,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(format!(
                "match threshold must lie strictly between 0 and 1, got {}",
                self.threshold
            ));
        }
        Ok(())
    }

    /// Compares two action texts under this policy.
    pub fn matches(&self, a: &str, t: &str) -> bool {
        let (a, t) = (a.trim(), t.trim());
        match self.kind {
            MatchKind::Exact => a == t,
            MatchKind::Soft => {
                let (Some((name_a, params_a)), Some((name_t, params_t))) =
                    (split_action(a), split_action(t))
                else {
                    // Plain actions degrade to exact comparison.
                    return a == t;
                };
                let names_ok = if self.function_name_exact {
                    name_a == name_t
                } else {
                    normalized_edit_distance(name_a, name_t) < self.threshold
                };
                names_ok && normalized_edit_distance(params_a, params_t) < self.threshold
            }
        }
    }
}

/// Splits `Name[params]` at the first `[`; a single trailing `]` is dropped.
fn split_action(s: &str) -> Option<(&str, &str)> {
    let open = s.find('[')?;
    let name = s[..open].trim();
    let rest = &s[open + 1..];
    let params = rest.strip_suffix(']').unwrap_or(rest);
    Some((name, params))
}

/// Whether an approximation step is confirmed by the target step at the same index.
pub fn verify_step(a: &Step, t: &Step, policy: &MatchPolicy) -> bool {
    a.index == t.index && policy.matches(&a.content, &t.content)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Source;
    use proptest::prelude::*;

    /// Exponential recursive definition, independent of the DP.
    fn brute_force(a: &[char], b: &[char]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((ca, ra)), Some((cb, rb))) => {
                let sub = brute_force(ra, rb) + usize::from(ca != cb);
                let del = brute_force(ra, b) + 1;
                let ins = brute_force(a, rb) + 1;
                sub.min(del).min(ins)
            }
        }
    }

    fn step(i: usize, s: &str) -> Step {
        Step::new(i, s, Source::Approximation)
    }

    #[test]
    fn distance_examples() {
        assert_eq!(normalized_edit_distance("abc", "abc"), 0.0);
        assert_eq!(normalized_edit_distance("", "abcd"), 1.0);
        assert_eq!(normalized_edit_distance("", ""), 0.0);
        // oracle: brute_force("abc","abd") = 1, max len 3
        assert_eq!(brute_force(&['a', 'b', 'c'], &['a', 'b', 'd']), 1);
        assert!((normalized_edit_distance("abc", "abd") - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn counts_characters_not_bytes() {
        assert_eq!(normalized_edit_distance("→", "a"), 1.0);
        assert_eq!(normalized_edit_distance("héllo", "hello"), 0.2);
    }

    #[test]
    fn exact_policy() {
        let p = MatchPolicy::exact();
        assert!(verify_step(&step(0, "split money"), &step(0, "split money"), &p));
        assert!(verify_step(&step(0, " split money\n"), &step(0, "split money"), &p));
        assert!(!verify_step(
            &step(1, "request money from A"),
            &step(1, "verify A's Venmo"),
            &p
        ));
    }

    #[test]
    fn soft_policy_tolerates_small_parameter_noise() {
        let p = MatchPolicy::soft(0.3);
        let a = step(0, "FlightSearch[Cincinnati, Norfolk, 2023-03-12]");
        let t = step(0, "FlightSearch[Cincinnati,  Norfolk, 2023-03-12]");
        // hand count: one inserted space; the longer parameter string has 32 chars
        let d = normalized_edit_distance(
            "Cincinnati, Norfolk, 2023-03-12",
            "Cincinnati,  Norfolk, 2023-03-12",
        );
        assert!((d - 1.0 / 32.0).abs() < 1e-12);
        assert!(verify_step(&a, &t, &p));
    }

    #[test]
    fn soft_policy_requires_function_name() {
        let p = MatchPolicy::soft(0.3);
        let a = step(0, "FlightSearch[Cincinnati, Norfolk, 2023-03-12]");
        let t = step(0, "HotelSearch[Cincinnati, Norfolk, 2023-03-12]");
        assert!(!verify_step(&a, &t, &p));
    }

    #[test]
    fn soft_policy_plain_actions_compare_exactly() {
        let p = MatchPolicy::soft(0.3);
        assert!(!verify_step(&step(0, "split money"), &step(0, "split monay"), &p));
        assert!(verify_step(&step(0, "split money"), &step(0, "split money"), &p));
        assert!(!verify_step(&step(0, "Search[x]"), &step(0, "Search x"), &p));
    }

    #[test]
    fn soft_policy_threshold_is_strict() {
        let p = MatchPolicy::soft(0.3);
        // 3 substitutions over 10 chars = 0.3, not < 0.3
        assert!(!p.matches("F[aaaaaaaaaa]", "F[bbbaaaaaaa]"));
        assert!(p.matches("F[aaaaaaaaaa]", "F[bbaaaaaaaa]"));
    }

    #[test]
    fn index_mismatch_never_verifies() {
        let p = MatchPolicy::exact();
        assert!(!verify_step(&step(0, "x"), &step(1, "x"), &p));
    }

    #[test]
    fn threshold_validation() {
        assert!(MatchPolicy::soft(0.3).validate().is_ok());
        assert!(MatchPolicy::soft(0.0).validate().is_err());
        assert!(MatchPolicy::soft(1.0).validate().is_err());
    }

    proptest! {
        #[test]
        fn dp_agrees_with_brute_force(a in "[abc]{0,6}", b in "[abc]{0,6}") {
            let ca: Vec<char> = a.chars().collect();
            let cb: Vec<char> = b.chars().collect();
            let expected = brute_force(&ca, &cb);
            prop_assert_eq!(levenshtein(&ca, &cb), expected);
            let longest = ca.len().max(cb.len());
            let ratio = if longest == 0 { 0.0 } else { expected as f64 / longest as f64 };
            prop_assert!((normalized_edit_distance(&a, &b) - ratio).abs() < 1e-12);
        }

        #[test]
        fn distance_is_symmetric_and_bounded(a in ".{0,12}", b in ".{0,12}") {
            let d = normalized_edit_distance(&a, &b);
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(d, normalized_edit_distance(&b, &a));
        }
    }
}
