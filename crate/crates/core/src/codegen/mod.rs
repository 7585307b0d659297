//! Program synthesis for a cluster: prompt the codegen model with the
//! cluster's exemplars, compile what it returns, run it on those exemplars,
//! have the validator judge the outputs, and retry with the validator's
//! feedback until the program reproduces at least `gamma_percent` of the
//! exemplars or the cluster's lifetime attempt budget `rho` is spent.

pub mod backend;
pub mod prompts;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{ChatMessage, Completion, FnBackend, LlmBackend, LlmError, RemoteLlm, Role, ScriptedBackend};
pub use prompts::{build_codegen_prompt, parse_program_source, Comparison};

use crate::clustering::Cluster;
use crate::program::{compile, CompileOptions, CompiledProgram, ExecResult, Executor};
use crate::prompt::{Exemplar, ResponseDoc};

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error("need at least {need} exemplars, have {have}")]
    TooFewExemplars { have: usize, need: usize },
    #[error("could not parse model output: {0}")]
    Parse(String),
    #[error("invalid codegen config: {0}")]
    Config(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CodegenMode {
    Declarative,
    ExternalScript { runtime_command: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodegenConfig {
    /// Minimum exemplars before synthesis; clusters hold at most `3 * nu`.
    pub nu: usize,
    /// Minimum percentage of exemplars a program must reproduce (inclusive).
    pub gamma_percent: f64,
    /// Lifetime cap on synthesis attempts per cluster.
    pub rho: u32,
    pub mode: CodegenMode,
    /// Accept byte-identical outputs without asking the validator.
    pub exact_match_shortcut: bool,
}

impl Default for CodegenConfig {
    fn default() -> Self {
        Self {
            nu: 4,
            gamma_percent: 50.0,
            rho: 30,
            mode: CodegenMode::Declarative,
            exact_match_shortcut: true,
        }
    }
}

impl CodegenConfig {
    pub fn validate(&self) -> Result<(), CodegenError> {
        if self.nu < 2 {
            return Err(CodegenError::Config(format!("nu must be at least 2, got {}", self.nu)));
        }
        if !(self.gamma_percent > 0.0 && self.gamma_percent <= 100.0) {
            return Err(CodegenError::Config(format!(
                "gamma must be in (0, 100], got {}",
                self.gamma_percent
            )));
        }
        if self.rho < 1 {
            return Err(CodegenError::Config("rho must be at least 1".into()));
        }
        Ok(())
    }

    pub fn cluster_capacity(&self) -> usize {
        3 * self.nu
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// One verdict per exemplar, in exemplar order.
    pub valid: Vec<bool>,
    pub reason: String,
}

impl ValidationReport {
    pub fn matches(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn match_percent(&self) -> f64 {
        if self.valid.is_empty() {
            0.0
        } else {
            self.matches() as f64 * 100.0 / self.valid.len() as f64
        }
    }
}

/// The acceptance gate: at least `gamma_percent` of verdicts are matches.
pub fn passes_gate(report: &ValidationReport, gamma_percent: f64) -> bool {
    !report.valid.is_empty()
        && report.matches() as f64 * 100.0 >= gamma_percent * report.valid.len() as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub codegen_calls: u64,
    pub validator_calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl Usage {
    pub fn llm_calls(&self) -> u64 {
        self.codegen_calls + self.validator_calls
    }

    fn add(&mut self, c: &Completion) {
        self.input_tokens += c.input_tokens;
        self.output_tokens += c.output_tokens;
    }

    pub fn merge(&mut self, other: &Usage) {
        self.codegen_calls += other.codegen_calls;
        self.validator_calls += other.validator_calls;
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
    }
}

/// Runs `program` on every exemplar and asks the validator to judge the outputs.
///
/// Declined or failed executions are recorded as mismatches without being
/// shown to the validator. With `exact_match_shortcut`, a program whose
/// outputs are all byte-identical to the exemplar responses is accepted
/// without a validator call.
pub fn validate_program(
    program: &CompiledProgram,
    exemplars: &[Exemplar],
    validator: &dyn LlmBackend,
    executor: &Executor,
    exact_match_shortcut: bool,
    usage: &mut Usage,
) -> Result<ValidationReport, CodegenError> {
    let results: Vec<ExecResult> = exemplars
        .iter()
        .map(|ex| executor.execute(program, &ex.prompt.full_text))
        .collect();

    let mut valid = vec![false; exemplars.len()];
    let mut local_reasons = Vec::new();
    let mut pending = Vec::new();
    for (i, (result, ex)) in results.iter().zip(exemplars).enumerate() {
        match result {
            ExecResult::Response(doc) => pending.push((i, doc, &ex.response)),
            declined => local_reasons.push(format!("example {}: {declined}", i + 1)),
        }
    }

    let all_exact = local_reasons.is_empty()
        && pending.iter().all(|(_, out, truth)| out.to_wire() == truth.to_wire());
    if exact_match_shortcut && all_exact {
        return Ok(ValidationReport {
            valid: vec![true; exemplars.len()],
            reason: String::new(),
        });
    }

    let mut reason = String::new();
    if !pending.is_empty() {
        let comparisons: Vec<Comparison> = pending
            .iter()
            .map(|(_, out, truth)| Comparison {
                program_output: ResponseDoc::to_wire(out),
                ground_truth: truth.to_wire(),
            })
            .collect();
        let completion = validator.complete(&prompts::build_validator_prompt(&comparisons))?;
        usage.validator_calls += 1;
        usage.add(&completion);
        let (bits, validator_reason) =
            prompts::parse_validator_reply(&completion.text, comparisons.len())?;
        for ((i, _, _), bit) in pending.iter().zip(bits) {
            valid[*i] = bit;
        }
        reason = validator_reason;
    }
    if !local_reasons.is_empty() {
        if !reason.is_empty() {
            reason.push_str("; ");
        }
        reason.push_str(&local_reasons.join("; "));
    }
    Ok(ValidationReport { valid, reason })
}

/// Everything synthesis needs besides the exemplars.
#[derive(Clone)]
pub struct CodegenContext {
    pub codegen: Arc<dyn LlmBackend>,
    pub validator: Arc<dyn LlmBackend>,
    pub config: CodegenConfig,
    pub executor: Executor,
    pub compile: CompileOptions,
}

#[derive(Debug, Clone)]
pub struct CodegenOutcome {
    pub program: Option<CompiledProgram>,
    pub attempts: u32,
    pub usage: Usage,
    pub last_report: Option<ValidationReport>,
    /// Feedback from the final attempt, when it failed.
    pub last_failure: Option<String>,
}

impl CodegenOutcome {
    fn empty() -> Self {
        Self {
            program: None,
            attempts: 0,
            usage: Usage::default(),
            last_report: None,
            last_failure: None,
        }
    }
}

enum Attempt {
    Accepted(CompiledProgram, ValidationReport),
    Rejected { feedback: String, report: Option<ValidationReport> },
}

fn attempt(
    ctx: &CodegenContext,
    exemplars: &[Exemplar],
    feedback: Option<&str>,
    usage: &mut Usage,
) -> Result<Attempt, CodegenError> {
    let messages = build_codegen_prompt(exemplars, &ctx.config, feedback)?;
    usage.codegen_calls += 1;
    let completion = ctx.codegen.complete(&messages)?;
    usage.add(&completion);
    let source = parse_program_source(&completion.text, &ctx.config.mode)?;
    let program = match compile(source, &ctx.compile) {
        Ok(p) => p,
        Err(e) => {
            return Ok(Attempt::Rejected {
                feedback: format!("the program did not compile: {e}"),
                report: None,
            })
        }
    };
    let report = validate_program(
        &program,
        exemplars,
        ctx.validator.as_ref(),
        &ctx.executor,
        ctx.config.exact_match_shortcut,
        usage,
    )?;
    if passes_gate(&report, ctx.config.gamma_percent) {
        Ok(Attempt::Accepted(program, report))
    } else {
        let feedback = if report.reason.is_empty() {
            format!(
                "only {} of {} examples were reproduced correctly",
                report.matches(),
                report.valid.len()
            )
        } else {
            report.reason.clone()
        };
        Ok(Attempt::Rejected {
            feedback,
            report: Some(report),
        })
    }
}

/// The generate-validate-reflect loop.
///
/// `take_attempt` is called before every attempt and must atomically consume
/// one unit of the cluster's attempt budget, returning false once it is spent.
/// Transport, parse and compile failures count as failed attempts and feed
/// the next prompt's reflection paragraph.
pub fn synthesize(
    ctx: &CodegenContext,
    exemplars: &[Exemplar],
    mut take_attempt: impl FnMut() -> bool,
) -> Result<CodegenOutcome, CodegenError> {
    if exemplars.len() < ctx.config.nu {
        return Err(CodegenError::TooFewExemplars {
            have: exemplars.len(),
            need: ctx.config.nu,
        });
    }
    let mut outcome = CodegenOutcome::empty();
    let mut feedback: Option<String> = None;
    while take_attempt() {
        outcome.attempts += 1;
        match attempt(ctx, exemplars, feedback.as_deref(), &mut outcome.usage) {
            Ok(Attempt::Accepted(program, report)) => {
                outcome.program = Some(program);
                outcome.last_report = Some(report);
                outcome.last_failure = None;
                return Ok(outcome);
            }
            Ok(Attempt::Rejected { feedback: f, report }) => {
                outcome.last_report = report;
                feedback = Some(f);
            }
            Err(e @ CodegenError::TooFewExemplars { .. }) | Err(e @ CodegenError::Config(_)) => {
                return Err(e);
            }
            Err(e) => feedback = Some(e.to_string()),
        }
        outcome.last_failure = feedback.clone();
        tracing::debug!(attempt = outcome.attempts, feedback = ?feedback, "codegen attempt rejected");
    }
    Ok(outcome)
}

/// Synthesizes a program for a standalone cluster, charging its attempt budget.
///
/// A no-op once the cluster has a program or has used all `rho` attempts.
pub fn generate_cache(cluster: &mut Cluster, ctx: &CodegenContext) -> Result<CodegenOutcome, CodegenError> {
    if cluster.has_cache || cluster.retries_used >= ctx.config.rho {
        return Ok(CodegenOutcome::empty());
    }
    let exemplars = cluster.exemplars().to_vec();
    let rho = ctx.config.rho;
    let retries = &mut cluster.retries_used;
    let outcome = synthesize(ctx, &exemplars, || {
        if *retries < rho {
            *retries += 1;
            true
        } else {
            false
        }
    })?;
    if outcome.program.is_some() {
        cluster.has_cache = true;
    }
    Ok(outcome)
}
