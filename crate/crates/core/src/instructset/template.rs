//! The Alpaca-style prompt skeleton.

use super::InstructError;

pub const PREAMBLE: &str =
    "Below is an instruction that describes a task. Write a response that appropriately completes the request.";
pub const INSTRUCTION_KEY: &str = "### Instruction: ";
pub const INPUT_KEY: &str = "Input: ";
pub const RESPONSE_KEY: &str = "### Response:";
pub const END_KEY: &str = "### End";

/// Text up to and including the response key.
pub fn render_prompt(instruction: &str, input: &str) -> String {
    format!("{PREAMBLE}\n\n{INSTRUCTION_KEY}\n{instruction}\n{INPUT_KEY}\n{input}\n\n{RESPONSE_KEY}")
}

/// Full training text.
pub fn render(instruction: &str, input: &str, response: &str) -> String {
    format!("{}\n{response}\n\n{END_KEY}", render_prompt(instruction, input))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Parsed {
    pub instruction: String,
    pub input: String,
    /// `None` for an inference rendering that stops at the response key.
    pub response: Option<String>,
}

/// Inverse of [`render`] and [`render_prompt`].
pub fn parse(text: &str) -> Result<Parsed, InstructError> {
    let bad = |m: &str| InstructError::Template(m.to_string());
    let rest = text
        .strip_prefix(PREAMBLE)
        .and_then(|r| r.strip_prefix("\n\n"))
        .and_then(|r| r.strip_prefix(INSTRUCTION_KEY))
        .and_then(|r| r.strip_prefix('\n'))
        .ok_or_else(|| bad("missing preamble or instruction key"))?;
    let sep = format!("\n{INPUT_KEY}\n");
    let (instruction, rest) = rest.split_once(&sep).ok_or_else(|| bad("missing input key"))?;
    let sep = format!("\n\n{RESPONSE_KEY}");
    let cut = rest.rfind(&sep).ok_or_else(|| bad("missing response key"))?;
    let (input, tail) = (&rest[..cut], &rest[cut + sep.len()..]);
    let response = if tail.is_empty() {
        None
    } else {
        let body = tail
            .strip_prefix('\n')
            .and_then(|t| t.strip_suffix(&format!("\n\n{END_KEY}")))
            .ok_or_else(|| bad("malformed response block"))?;
        Some(body.to_string())
    };
    Ok(Parsed { instruction: instruction.to_string(), input: input.to_string(), response })
}
