use thiserror::Error;

/// Model output without a usable `Action:` line.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no `Action:` line in model output")]
pub struct ParseError {
    pub raw_text: String,
}

/// Extracts the action from model output: the last line of the form
/// `Action: <text>` wins. Reasoning before it is ignored.
pub fn parse_action(raw: &str) -> Result<String, ParseError> {
    raw.lines()
        .rev()
        .find_map(|line| {
            let rest = line.trim().strip_prefix("Action:")?;
            let action = rest.trim();
            (!action.is_empty()).then(|| action.to_string())
        })
        .ok_or_else(|| ParseError {
            raw_text: raw.to_string(),
        })
}
