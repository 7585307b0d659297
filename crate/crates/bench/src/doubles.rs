//! Scripted stand-ins for the three models a gencache deployment talks to.
//!
//! [`AgentDouble`] answers instructions correctly (it is the model being
//! cached). [`CodegenDouble`] writes declarative programs from the exemplars
//! in its prompt and nothing else. [`ValidatorDouble`] compares program
//! outputs with ground truth after normalization.

use std::collections::HashMap;

use gencache_core::codegen::prompts::{parse_comparison_blocks, parse_exemplar_blocks};
use gencache_core::codegen::{ChatMessage, Completion, LlmBackend, LlmError};
use gencache_core::prompt::ResponseDoc;
use regex::Regex;
use serde_json::json;

use crate::generate::{expected_response, Family, GroundTruth, SyntheticInstruction, VERBS};
use crate::oracle::normalize;

pub const AGENT_FALLBACK: &str = "Sorry, I can only help with product searches.";

/// The miss-path model: knows the correct answer for every generated prompt.
#[derive(Debug, Default)]
pub struct AgentDouble {
    answers: HashMap<String, GroundTruth>,
}

impl AgentDouble {
    pub fn new<'a>(instructions: impl IntoIterator<Item = &'a SyntheticInstruction>) -> Self {
        Self {
            answers: instructions
                .into_iter()
                .map(|i| (i.full_text(), i.ground_truth.clone()))
                .collect(),
        }
    }
}

impl LlmBackend for AgentDouble {
    fn complete(&self, messages: &[ChatMessage]) -> Result<Completion, LlmError> {
        let prompt = messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let text = match self.answers.get(&prompt) {
            Some(truth) => expected_response(truth),
            None => AGENT_FALLBACK.to_string(),
        };
        Ok(Completion::estimated(messages, text))
    }
}

fn verb_alternation() -> String {
    VERBS.join("|")
}

const PRICE_TAIL: &str = r", under the price range of (?<price>\d+) dollars";

/// Writes a program for one dataset family.
///
/// For param-only it mirrors the canonical template. For param-w-synonym it
/// uses the verb alternation, and adds a rule for the two-sentence form only
/// when an exemplar shows that form. For structural it deliberately emits the
/// param-only rule.
#[derive(Debug, Clone, Copy)]
pub struct CodegenDouble {
    pub family: Family,
}

struct RuleShape {
    regex: String,
    /// Template for the "item" slot.
    item: &'static str,
}

impl CodegenDouble {
    pub fn new(family: Family) -> Self {
        Self { family }
    }

    fn main_rule(&self) -> RuleShape {
        let regex = match self.family {
            Family::ParamOnly | Family::Structural => {
                format!(r"i want to buy (?<item>[^\n]+?){PRICE_TAIL}")
            }
            Family::ParamWithSynonym => format!(
                r"\b(?:{}) (?:(?:a|an|some) )?(?<item>[^\n]+?){PRICE_TAIL}",
                verb_alternation()
            ),
        };
        RuleShape { regex, item: "{item}" }
    }

    fn split_rule(&self) -> RuleShape {
        RuleShape {
            regex: format!(
                r"\b(?:{}) (?:(?:a|an|some) )?(?<name>[^\n.]+?)\. need it to be (?<attr>[^\n,]+?){PRICE_TAIL}",
                verb_alternation()
            ),
            item: "{attr} {name}",
        }
    }

    fn structural_regex(&self) -> String {
        match self.family {
            Family::ParamOnly | Family::Structural => {
                r"i want to buy [^\n]+, under the price range of \d+ dollars".to_string()
            }
            Family::ParamWithSynonym => format!(
                r"\b(?:{}) [^\n]+, under the price range of \d+ dollars",
                verb_alternation()
            ),
        }
    }

    /// Builds the program document for a set of (prompt, response) exemplars.
    pub fn write_program(&self, exemplars: &[(String, String)]) -> String {
        let mut rules = vec![];
        if self.family == Family::ParamWithSynonym {
            let split = self.split_rule();
            let re = Regex::new(&format!("(?is){}", split.regex)).expect("split rule compiles");
            if exemplars.iter().any(|(p, _)| re.is_match(p)) {
                rules.push(split);
            }
        }
        rules.push(self.main_rule());

        let responses: Vec<ResponseDoc> = exemplars.iter().map(|(_, r)| ResponseDoc::parse(r)).collect();
        let keys: Vec<String> = match responses.first() {
            Some(ResponseDoc::Structured(entries)) => entries.iter().map(|(k, _)| k.clone()).collect(),
            _ => Vec::new(),
        };
        let main = self.main_rule();
        let main_re = Regex::new(&format!("(?is){}", main.regex)).expect("main rule compiles");

        // per key: a literal when every exemplar agrees, otherwise the capture
        // group that reproduces the value in every exemplar the main rule matches
        let mut slot_template: Vec<(String, Option<&'static str>, String)> = Vec::new();
        for key in &keys {
            let values: Vec<&str> = responses.iter().filter_map(|r| r.get(key)).collect();
            if values.windows(2).all(|w| w[0] == w[1]) {
                let literal = values.first().copied().unwrap_or_default();
                slot_template.push((key.clone(), None, literal.replace('{', "{{").replace('}', "}}")));
                continue;
            }
            let group = ["item", "price"].into_iter().find(|g| {
                exemplars.iter().zip(&responses).all(|((prompt, _), resp)| {
                    match main_re.captures(prompt) {
                        Some(c) => c.name(g).map(|m| m.as_str()) == resp.get(key),
                        None => true,
                    }
                })
            });
            let group = group.unwrap_or(if key.contains("price") { "price" } else { "item" });
            slot_template.push((key.clone(), Some(group), String::new()));
        }

        let rules_json: Vec<_> = rules
            .iter()
            .map(|rule| {
                let entries: Vec<_> = slot_template
                    .iter()
                    .map(|(key, group, literal)| {
                        let value = match *group {
                            Some("item") => rule.item.to_string(),
                            Some(g) => format!("{{{g}}}"),
                            None => literal.clone(),
                        };
                        json!({"key": key, "value": value})
                    })
                    .collect();
                json!({"match_regex": rule.regex, "response": {"structured": entries}})
            })
            .collect();
        json!({"structural_regex": self.structural_regex(), "rules": rules_json}).to_string()
    }
}

impl LlmBackend for CodegenDouble {
    fn complete(&self, messages: &[ChatMessage]) -> Result<Completion, LlmError> {
        let prompt = messages.first().map(|m| m.content.as_str()).unwrap_or_default();
        let exemplars = parse_exemplar_blocks(prompt);
        if exemplars.is_empty() {
            return Err(LlmError::Protocol("codegen prompt carried no examples".into()));
        }
        let program = format!("```json\n{}\n```", self.write_program(&exemplars));
        Ok(Completion::estimated(messages, program))
    }
}

/// Judges each comparison by normalized equality of the two documents.
#[derive(Debug, Clone, Copy, Default)]
pub struct ValidatorDouble;

pub fn equivalent(output: &str, truth: &str) -> bool {
    match (ResponseDoc::parse(output), ResponseDoc::parse(truth)) {
        (ResponseDoc::Structured(a), ResponseDoc::Structured(b)) => {
            a.len() == b.len()
                && a.iter()
                    .zip(&b)
                    .all(|((ka, va), (kb, vb))| ka == kb && normalize(va) == normalize(vb))
        }
        (ResponseDoc::Plain(a), ResponseDoc::Plain(b)) => normalize(&a) == normalize(&b),
        _ => false,
    }
}

impl LlmBackend for ValidatorDouble {
    fn complete(&self, messages: &[ChatMessage]) -> Result<Completion, LlmError> {
        let prompt = messages.first().map(|m| m.content.as_str()).unwrap_or_default();
        let verdicts: Vec<u8> = parse_comparison_blocks(prompt)
            .iter()
            .map(|c| u8::from(equivalent(&c.program_output, &c.ground_truth)))
            .collect();
        let wrong: Vec<String> = verdicts
            .iter()
            .enumerate()
            .filter(|(_, v)| **v == 0)
            .map(|(i, _)| (i + 1).to_string())
            .collect();
        let reason = if wrong.is_empty() {
            String::new()
        } else {
            format!("comparison {} does not match the ground truth", wrong.join(", "))
        };
        let text = json!({"valid": verdicts, "reason": reason}).to_string();
        Ok(Completion::estimated(messages, text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalog;
    use crate::generate::{gen_param_only, gen_param_w_synonym, gen_structural};
    use crate::oracle::{classify, HitClass};
    use gencache_core::codegen::prompts::parse_program_source;
    use gencache_core::codegen::CodegenMode;
    use gencache_core::program::{compile, execute, CompileOptions, ExecLimits, ExecResult};

    fn pairs(v: &[SyntheticInstruction]) -> Vec<(String, String)> {
        v.iter()
            .map(|i| (i.full_text(), expected_response(&i.ground_truth)))
            .collect()
    }

    fn run(program: &str, prompt: &str) -> ExecResult {
        let src = parse_program_source(program, &CodegenMode::Declarative).unwrap();
        let compiled = compile(src, &CompileOptions::default()).unwrap();
        execute(&compiled, prompt, &ExecLimits::default())
    }

    #[test]
    fn param_only_program_reproduces_unseen_prompts() {
        let v = gen_param_only(&Catalog::builtin(), 60, 4).unwrap();
        let program = CodegenDouble::new(Family::ParamOnly).write_program(&pairs(&v[..4]));
        for i in &v[4..] {
            let out = run(&program, &i.full_text());
            let text = out.response().expect("program answers").to_wire();
            assert_eq!(text, expected_response(&i.ground_truth));
        }
    }

    #[test]
    fn synonym_program_adds_split_rule_only_when_shown_one() {
        let v = gen_param_w_synonym(&Catalog::builtin(), 400, 8).unwrap();
        let plain: Vec<_> = v.iter().filter(|i| !i.split).take(4).cloned().collect();
        let split = v.iter().find(|i| i.split).unwrap().clone();
        let double = CodegenDouble::new(Family::ParamWithSynonym);

        let without = double.write_program(&pairs(&plain));
        let out = run(&without, &split.full_text());
        assert_eq!(classify(&out.response().unwrap().to_wire(), &split.ground_truth), HitClass::Negative);

        let mut shown = plain.clone();
        shown[3] = split.clone();
        let with = double.write_program(&pairs(&shown));
        for i in v.iter().take(100) {
            let out = run(&with, &i.full_text());
            assert_eq!(classify(&out.response().unwrap().to_wire(), &i.ground_truth), HitClass::Positive, "{}", i.text);
        }
    }

    #[test]
    fn structural_double_only_covers_the_canonical_phrasing() {
        let v = gen_structural(&Catalog::builtin(), 200, 2).unwrap();
        let canon: Vec<_> = v.iter().filter(|i| i.template == 0).take(4).cloned().collect();
        let program = CodegenDouble::new(Family::Structural).write_program(&pairs(&canon));
        for i in &v {
            let answered = run(&program, &i.full_text()).response().is_some();
            assert_eq!(answered, i.template == 0, "{}", i.text);
        }
    }

    #[test]
    fn validator_uses_normalized_comparison() {
        let truth = r#"{"item":"Mug","price":"12"}"#;
        assert!(equivalent(r#"{"item":" mug ","price":"12.00"}"#, truth));
        assert!(!equivalent(r#"{"price":"12","item":"mug"}"#, truth));
        assert!(!equivalent("plain", truth));
    }

    #[test]
    fn agent_answers_known_prompts() {
        let v = gen_param_only(&Catalog::builtin(), 3, 1).unwrap();
        let agent = AgentDouble::new(&v);
        let c = agent.complete(&[ChatMessage::user(v[1].full_text())]).unwrap();
        assert_eq!(c.text, expected_response(&v[1].ground_truth));
        let c = agent.complete(&[ChatMessage::user("hello")]).unwrap();
        assert_eq!(c.text, AGENT_FALLBACK);
    }
}
