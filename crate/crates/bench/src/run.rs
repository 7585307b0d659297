//! The evaluation loop.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use gencache_core::codegen::LlmBackend;
use gencache_core::embeddings::{HashedEmbedder, DEFAULT_DIMS};
use gencache_core::prompt::PromptRecord;
use gencache_core::runtime::{estimate_tokens, Runtime, RuntimeConfig, RuntimeError, ServedFrom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{ExactCache, SemanticCache};
use crate::catalog::Catalog;
use crate::doubles::{AgentDouble, CodegenDouble, ValidatorDouble};
use crate::generate::{generate_family, Family, GenerateError, SyntheticInstruction};
use crate::oracle::{classify, HitClass};

/// Stated in every report.
pub const DESK_SCALE_NOTE: &str = "desk-scale run: instructions come from seeded templates over the \
built-in catalog, hits are judged by a ground-truth extractor, and all models are scripted doubles";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Exact,
    Semantic,
    Gencache,
    GencacheFeedback,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Exact,
        Strategy::Semantic,
        Strategy::Gencache,
        Strategy::GencacheFeedback,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Exact => "exact",
            Strategy::Semantic => "semantic",
            Strategy::Gencache => "gencache",
            Strategy::GencacheFeedback => "gencache-feedback",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| BenchError::UnknownStrategy(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown strategy {0:?}; expected exact, semantic, gencache or gencache-feedback")]
    UnknownStrategy(String),
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub embed_dims: usize,
    pub semantic_threshold: f64,
    /// Requests per cost-ratio sample.
    pub window: u64,
    pub runtime: RuntimeConfig,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            embed_dims: DEFAULT_DIMS,
            semantic_threshold: 0.95,
            window: 100,
            runtime: RuntimeConfig {
                codegen_workers: 1,
                ..RuntimeConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    /// Requests processed when the sample was taken.
    pub request: u64,
    /// Cumulative codegen calls over cumulative hits; null while there are no hits.
    pub ratio: Option<f64>,
}

/// Samples the cumulative cost/savings ratio at every `window`-th request and
/// at every request during which codegen calls were made.
///
/// `cumulative[i]` holds (codegen calls, hits) after request `i + 1`.
pub fn cost_ratio_series(cumulative: &[(u64, u64)], window: u64) -> Vec<RatioPoint> {
    let window = window.max(1);
    let mut prev_calls = 0;
    let mut out = Vec::new();
    for (i, &(calls, hits)) in cumulative.iter().enumerate() {
        let request = i as u64 + 1;
        if request.is_multiple_of(window) || calls != prev_calls {
            out.push(RatioPoint {
                request,
                ratio: (hits > 0).then(|| calls as f64 / hits as f64),
            });
        }
        prev_calls = calls;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub note: String,
    pub dataset: Family,
    pub strategy: Strategy,
    pub n: usize,
    pub seed: u64,
    pub hits: u64,
    pub misses: u64,
    pub positive_hits: u64,
    pub negative_hits: u64,
    /// Percent of requests.
    pub hit_rate: f64,
    /// Percent of hits.
    pub positive_hit_rate: f64,
    /// Percent of hits.
    pub negative_hit_rate: f64,
    pub codegen_calls: u64,
    pub programs_accepted: u64,
    pub feedback_deletions: u64,
    /// Requests re-sent after a negative hit was reported (not counted in n).
    pub reissued_requests: u64,
    pub tokens_spent_input: u64,
    pub tokens_spent_output: u64,
    pub tokens_saved_input: u64,
    pub tokens_saved_output: u64,
    pub ratio_window: u64,
    pub ratio_series: Vec<RatioPoint>,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Default)]
struct Tally {
    hits: u64,
    positive: u64,
    negative: u64,
    spent_in: u64,
    spent_out: u64,
    saved_in: u64,
    saved_out: u64,
    cumulative: Vec<(u64, u64)>,
}

impl Tally {
    fn hit(&mut self, class: HitClass) {
        self.hits += 1;
        match class {
            HitClass::Positive => self.positive += 1,
            HitClass::Negative => self.negative += 1,
        }
    }
}

fn percent(part: u64, whole: u64) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 * 100.0 / whole as f64
    }
}

/// Generates a stream and runs one strategy over it.
pub fn run_bench(
    dataset: Family,
    n: usize,
    strategy: Strategy,
    seed: u64,
    options: &BenchOptions,
) -> Result<BenchReport, BenchError> {
    let instructions = generate_family(&Catalog::builtin(), dataset, n, seed)?;
    run_strategy(strategy, dataset, &instructions, seed, options)
}

pub fn run_strategy(
    strategy: Strategy,
    dataset: Family,
    instructions: &[SyntheticInstruction],
    seed: u64,
    options: &BenchOptions,
) -> Result<BenchReport, BenchError> {
    let agent = AgentDouble::new(instructions);
    let mut tally = Tally::default();
    let mut extra = Extra::default();
    match strategy {
        Strategy::Exact => run_exact(instructions, &agent, &mut tally),
        Strategy::Semantic => run_semantic(instructions, &agent, options, &mut tally),
        Strategy::Gencache | Strategy::GencacheFeedback => run_gencache(
            instructions,
            &agent,
            dataset,
            strategy == Strategy::GencacheFeedback,
            options,
            &mut tally,
            &mut extra,
        )?,
    }
    let n = instructions.len();
    Ok(BenchReport {
        note: DESK_SCALE_NOTE.to_string(),
        dataset,
        strategy,
        n,
        seed,
        hits: tally.hits,
        misses: n as u64 - tally.hits,
        positive_hits: tally.positive,
        negative_hits: tally.negative,
        hit_rate: percent(tally.hits, n as u64),
        positive_hit_rate: percent(tally.positive, tally.hits),
        negative_hit_rate: percent(tally.negative, tally.hits),
        codegen_calls: extra.codegen_calls,
        programs_accepted: extra.accepted,
        feedback_deletions: extra.deletions,
        reissued_requests: extra.reissued,
        tokens_spent_input: tally.spent_in,
        tokens_spent_output: tally.spent_out,
        tokens_saved_input: tally.saved_in,
        tokens_saved_output: tally.saved_out,
        ratio_window: options.window,
        ratio_series: cost_ratio_series(&tally.cumulative, options.window),
    })
}

#[derive(Default)]
struct Extra {
    codegen_calls: u64,
    accepted: u64,
    deletions: u64,
    reissued: u64,
}

fn ask_agent(agent: &AgentDouble, full: &str, tally: &mut Tally) -> String {
    let c = agent
        .complete(&[gencache_core::codegen::ChatMessage::user(full)])
        .expect("agent double never fails");
    tally.spent_in += c.input_tokens;
    tally.spent_out += c.output_tokens;
    c.text
}

fn run_exact(instructions: &[SyntheticInstruction], agent: &AgentDouble, tally: &mut Tally) {
    let mut cache = ExactCache::default();
    for i in instructions {
        let full = i.full_text();
        match cache.lookup(&full) {
            Some(response) => {
                tally.saved_in += estimate_tokens(&full);
                tally.saved_out += estimate_tokens(response);
                let class = classify(response, &i.ground_truth);
                tally.hit(class);
            }
            None => {
                let response = ask_agent(agent, &full, tally);
                cache.insert(&full, response);
            }
        }
        tally.cumulative.push((0, tally.hits));
    }
}

fn run_semantic(
    instructions: &[SyntheticInstruction],
    agent: &AgentDouble,
    options: &BenchOptions,
    tally: &mut Tally,
) {
    let embedder = HashedEmbedder::new(options.embed_dims);
    let mut cache = SemanticCache::new(options.semantic_threshold);
    for i in instructions {
        let full = i.full_text();
        let e = embedder.embed_text(&full);
        match cache.lookup(&e) {
            Some(response) => {
                tally.saved_in += estimate_tokens(&full);
                tally.saved_out += estimate_tokens(response);
                let class = classify(response, &i.ground_truth);
                tally.hit(class);
            }
            None => {
                let response = ask_agent(agent, &full, tally);
                cache.insert(e, response);
            }
        }
        tally.cumulative.push((0, tally.hits));
    }
}

fn run_gencache(
    instructions: &[SyntheticInstruction],
    agent: &AgentDouble,
    dataset: Family,
    feedback: bool,
    options: &BenchOptions,
    tally: &mut Tally,
    extra: &mut Extra,
) -> Result<(), BenchError> {
    let rt = Runtime::new(
        options.runtime.clone(),
        Arc::new(HashedEmbedder::new(options.embed_dims)),
        Arc::new(CodegenDouble::new(dataset)),
        Arc::new(ValidatorDouble),
    );
    for (idx, i) in instructions.iter().enumerate() {
        let id = format!("req-{idx}");
        let prompt = PromptRecord::with_parts(id.clone(), i.full_text(), i.text.clone());
        let outcome = rt.handle_request(prompt, agent)?;
        // one request at a time, with synthesis finished before the next
        rt.wait_idle();
        if outcome.served_from == ServedFrom::Cache {
            let class = classify(&outcome.response_text, &i.ground_truth);
            tally.hit(class);
            if feedback && class == HitClass::Negative {
                rt.record_feedback(&id, false)?;
                // the client still needs an answer, so it asks again
                let retry = PromptRecord::with_parts(format!("{id}-retry"), i.full_text(), i.text.clone());
                rt.handle_request(retry, agent)?;
                rt.wait_idle();
                extra.reissued += 1;
            }
        }
        tally.cumulative.push((rt.metrics().codegen_llm_calls, tally.hits));
    }
    rt.shutdown();
    let m = rt.metrics();
    tally.spent_in = m.tokens_spent_input;
    tally.spent_out = m.tokens_spent_output;
    tally.saved_in = m.tokens_saved_input;
    tally.saved_out = m.tokens_saved_output;
    extra.codegen_calls = m.codegen_llm_calls;
    extra.accepted = m.codegen_accepted;
    extra.deletions = m.feedback_deletions;
    Ok(())
}
