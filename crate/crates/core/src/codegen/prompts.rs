//! Prompt construction for program synthesis and validation, and parsing of
//! what the models send back.

use serde::Deserialize;
use serde_json::Value;

use super::{backend::ChatMessage, CodegenConfig, CodegenError, CodegenMode};
use crate::program::{PatternRule, ProgramSource};
use crate::prompt::Exemplar;

const DECLARATIVE_TEMPLATE: &str = include_str!("../../assets/codegen_declarative.txt");
const SCRIPT_TEMPLATE: &str = include_str!("../../assets/codegen_script.txt");
const VALIDATOR_TEMPLATE: &str = include_str!("../../assets/validator.txt");

const OPEN: &str = "<<<";
const CLOSE: &str = ">>>";
const EXAMPLE_PROMPT: &str = "Input prompt:";
const EXAMPLE_RESPONSE: &str = "Response:";
const PROGRAM_OUTPUT: &str = "Program output:";
const GROUND_TRUTH: &str = "Ground truth:";
const STRUCTURAL_MARKER: &str = "# STRUCTURAL:";

fn block(label: &str, body: &str) -> String {
    format!("{label}\n{OPEN}\n{body}\n{CLOSE}\n")
}

pub fn build_codegen_prompt(
    exemplars: &[Exemplar],
    config: &CodegenConfig,
    prior_feedback: Option<&str>,
) -> Result<Vec<ChatMessage>, CodegenError> {
    if exemplars.len() < config.nu {
        return Err(CodegenError::TooFewExemplars {
            have: exemplars.len(),
            need: config.nu,
        });
    }
    let mut examples = String::new();
    for (i, ex) in exemplars.iter().enumerate() {
        examples.push_str(&format!("\nExample {}\n", i + 1));
        examples.push_str(&block(EXAMPLE_PROMPT, &ex.prompt.full_text));
        examples.push_str(&block(EXAMPLE_RESPONSE, &ex.response.to_wire()));
    }
    let reflection = match prior_feedback {
        Some(reason) => format!(
            "\nA previous program for these examples was rejected. Feedback from validation:\n{reason}\nCorrect these problems in the new program.\n"
        ),
        None => String::new(),
    };
    let system = match &config.mode {
        CodegenMode::Declarative => DECLARATIVE_TEMPLATE.to_string(),
        CodegenMode::ExternalScript { runtime_command } => {
            let shown = runtime_command.replace(crate::program::SCRIPT_PLACEHOLDER, "program_file");
            SCRIPT_TEMPLATE.replace("{{RUNTIME_COMMAND}}", &shown)
        }
    }
    .replace("{{EXEMPLARS}}", &examples)
    .replace("{{REFLECTION}}", &reflection);
    Ok(vec![ChatMessage::system(system), ChatMessage::user("Now begin.")])
}

/// One comparison shown to the validator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Comparison {
    pub program_output: String,
    pub ground_truth: String,
}

pub fn build_validator_prompt(comparisons: &[Comparison]) -> Vec<ChatMessage> {
    let mut body = String::new();
    for (i, c) in comparisons.iter().enumerate() {
        body.push_str(&format!("\nComparison {}\n", i + 1));
        body.push_str(&block(PROGRAM_OUTPUT, &c.program_output));
        body.push_str(&block(GROUND_TRUTH, &c.ground_truth));
    }
    vec![
        ChatMessage::system(VALIDATOR_TEMPLATE.replace("{{COMPARISONS}}", &body)),
        ChatMessage::user("Validate the comparisons above."),
    ]
}

fn labelled_blocks<'a>(text: &'a str, label: &str) -> Vec<&'a str> {
    let marker = format!("{label}\n{OPEN}\n");
    let end = format!("\n{CLOSE}\n");
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find(&marker) {
        let body_start = start + marker.len();
        let Some(len) = rest[body_start..].find(&end) else {
            break;
        };
        out.push(&rest[body_start..body_start + len]);
        rest = &rest[body_start + len + end.len()..];
    }
    out
}

/// Recovers the (prompt, response) pairs embedded in a codegen prompt.
pub fn parse_exemplar_blocks(text: &str) -> Vec<(String, String)> {
    let prompts = labelled_blocks(text, EXAMPLE_PROMPT);
    let responses = labelled_blocks(text, EXAMPLE_RESPONSE);
    prompts
        .into_iter()
        .zip(responses)
        .map(|(p, r)| (p.to_string(), r.to_string()))
        .collect()
}

/// Recovers the comparisons embedded in a validator prompt.
pub fn parse_comparison_blocks(text: &str) -> Vec<Comparison> {
    let outputs = labelled_blocks(text, PROGRAM_OUTPUT);
    let truths = labelled_blocks(text, GROUND_TRUTH);
    outputs
        .into_iter()
        .zip(truths)
        .map(|(o, t)| Comparison {
            program_output: o.to_string(),
            ground_truth: t.to_string(),
        })
        .collect()
}

/// Contents of the first fenced code block, if any.
fn fenced(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    let body_start = after.find('\n')? + 1;
    let body = &after[body_start..];
    let end = body.find("```")?;
    Some(&body[..end])
}

/// First JSON object in `text`, preferring a fenced block.
pub fn extract_json_object(text: &str) -> Option<Value> {
    let candidates = fenced(text).into_iter().chain(std::iter::once(text));
    for candidate in candidates {
        for (i, _) in candidate.match_indices('{') {
            let mut stream = serde_json::Deserializer::from_str(&candidate[i..]).into_iter::<Value>();
            if let Some(Ok(v @ Value::Object(_))) = stream.next() {
                return Some(v);
            }
        }
    }
    None
}

#[derive(Deserialize)]
struct DslDocument {
    structural_regex: String,
    rules: Vec<PatternRule>,
}

pub fn parse_program_source(llm_text: &str, mode: &CodegenMode) -> Result<ProgramSource, CodegenError> {
    match mode {
        CodegenMode::Declarative => {
            let value = extract_json_object(llm_text)
                .ok_or_else(|| CodegenError::Parse("no JSON program document found".into()))?;
            let doc: DslDocument = serde_json::from_value(value)
                .map_err(|e| CodegenError::Parse(format!("program document: {e}")))?;
            Ok(ProgramSource::declarative(doc.structural_regex, doc.rules))
        }
        CodegenMode::ExternalScript { runtime_command } => {
            let script = fenced(llm_text).unwrap_or(llm_text).trim();
            if script.is_empty() {
                return Err(CodegenError::Parse("empty program".into()));
            }
            let structural = script
                .lines()
                .find_map(|l| l.trim().strip_prefix(STRUCTURAL_MARKER))
                .map(str::trim)
                .filter(|r| !r.is_empty())
                .ok_or_else(|| {
                    CodegenError::Parse(format!("missing '{STRUCTURAL_MARKER} <regex>' line"))
                })?;
            Ok(ProgramSource::external_script(
                structural,
                format!("{script}\n"),
                runtime_command.clone(),
            ))
        }
    }
}

#[derive(Deserialize)]
struct ValidatorReply {
    valid: Vec<Value>,
    #[serde(default)]
    reason: String,
}

/// Parses the validator's `{"valid": [...], "reason": "..."}` reply.
pub fn parse_validator_reply(text: &str, expected: usize) -> Result<(Vec<bool>, String), CodegenError> {
    let value = extract_json_object(text)
        .ok_or_else(|| CodegenError::Parse("validator reply has no JSON document".into()))?;
    let reply: ValidatorReply = serde_json::from_value(value)
        .map_err(|e| CodegenError::Parse(format!("validator reply: {e}")))?;
    if reply.valid.len() != expected {
        return Err(CodegenError::Parse(format!(
            "validator returned {} verdicts for {expected} comparisons",
            reply.valid.len()
        )));
    }
    let bits = reply
        .valid
        .iter()
        .map(|v| match v {
            Value::Number(n) if n.as_u64() == Some(1) => Ok(true),
            Value::Number(n) if n.as_u64() == Some(0) => Ok(false),
            Value::Bool(b) => Ok(*b),
            other => Err(CodegenError::Parse(format!("bad verdict {other}"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((bits, reply.reason))
}
