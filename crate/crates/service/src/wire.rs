//! Websocket frame format.
//!
//! Each event frame is the stored log line with `seq` and `session` spliced
//! in front of its fields:
//!
//! ```text
//! log:   {"t":2.0,"type":"present_approx","index":0,...}
//! frame: {"seq":3,"session":"ab12","t":2.0,"type":"present_approx","index":0,...}
//! ```
//!
//! so stripping the prefix gives back the log bytes exactly. `seq` starts at
//! 1 and has no gaps. After the last event of a finished session the server
//! sends one `end_of_stream` frame (which has no `seq`) and closes.

use serde::{Deserialize, Serialize};

use crate::api::SessionStatus;

pub fn frame(seq: u64, session: &str, line: &str) -> String {
    debug_assert!(line.starts_with('{'));
    let rest = &line[1..];
    if rest.trim_start().starts_with('}') {
        format!("{{\"seq\":{seq},\"session\":\"{session}\"{rest}")
    } else {
        format!("{{\"seq\":{seq},\"session\":\"{session}\",{rest}")
    }
}

/// Inverse of [`frame`]: the sequence number and the original log line.
pub fn unframe(frame: &str) -> Option<(u64, String)> {
    let rest = frame.strip_prefix("{\"seq\":")?;
    let digits = rest.find(|c: char| !c.is_ascii_digit())?;
    let seq = rest[..digits].parse().ok()?;
    let rest = rest[digits..].strip_prefix(",\"session\":\"")?;
    let close = rest.find('"')?;
    let rest = &rest[close + 1..];
    let line = match rest.strip_prefix(',') {
        Some(fields) => format!("{{{fields}"),
        None => format!("{{{rest}"),
    };
    Some((seq, line))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndOfStream {
    #[serde(rename = "type")]
    pub kind: String,
    pub session: String,
    /// Highest sequence number of the session.
    pub last_seq: u64,
    pub status: SessionStatus,
}

pub fn end_of_stream(session: &str, last_seq: u64, status: SessionStatus) -> String {
    serde_json::to_string(&EndOfStream {
        kind: "end_of_stream".into(),
        session: session.into(),
        last_seq,
        status,
    })
    .expect("end marker serializes")
}

pub fn parse_end_of_stream(frame: &str) -> Option<EndOfStream> {
    if frame.starts_with("{\"seq\":") {
        return None;
    }
    serde_json::from_str::<EndOfStream>(frame)
        .ok()
        .filter(|e| e.kind == "end_of_stream")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let line = r#"{"t":2.0,"type":"present_approx","index":0,"content":"a, \"b\""}"#;
        let f = frame(3, "ab12", line);
        assert_eq!(f, r#"{"seq":3,"session":"ab12","t":2.0,"type":"present_approx","index":0,"content":"a, \"b\""}"#);
        let v: serde_json::Value = serde_json::from_str(&f).unwrap();
        assert_eq!(v["seq"], 3);
        assert_eq!(unframe(&f), Some((3, line.to_string())));
        assert_eq!(unframe(&frame(9, "x", "{}")), Some((9, "{}".to_string())));
    }

    #[test]
    fn end_marker_is_not_an_event() {
        let e = end_of_stream("ab12", 40, SessionStatus::Completed);
        assert_eq!(unframe(&e), None);
        assert_eq!(parse_end_of_stream(&e).unwrap().last_seq, 40);
        assert!(parse_end_of_stream(&frame(1, "s", "{\"type\":\"end_of_stream\"}")).is_none());
    }
}
