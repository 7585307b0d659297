//! The request pipeline.
//!
//! Serve path: embed the prompt, find the nearest cluster by prompt
//! similarity, and if that cluster has a cached program whose structural
//! regex matches, run it and return its output when it passes the sanity
//! check. Anything else falls through to the LLM.
//!
//! Miss path: call the backend, store the (prompt, response) pair in the
//! cluster database, and once the receiving cluster holds enough exemplars
//! hand it to a background worker that synthesizes a program for it.
//! Exemplars are never stored for cache hits.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Instant;

use crossbeam_channel::{Receiver, Sender};
use parking_lot::{Condvar, Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{ClusterError, ClusterId, ClusterRecord, ClusterStore, ClusterThresholds};
use crate::codegen::{synthesize, ChatMessage, CodegenConfig, CodegenContext, LlmBackend, LlmError};
use crate::embeddings::{Embedder, Embedding};
use crate::program::{sanity_check, CompileOptions, ExecLimits, ExecResult, Executor};
use crate::prompt::{Exemplar, PromptRecord, ResponseDoc};
use crate::store::{CacheStore, CacheStoreConfig, StoreError};

/// Heuristic token count: one token per four bytes, rounded up.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("backend failed on the miss path: {0}")]
    Backend(#[from] LlmError),
    #[error("unknown request id {0}")]
    UnknownRequest(String),
    #[error("snapshot io: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeConfig {
    pub thresholds: ClusterThresholds,
    pub codegen: CodegenConfig,
    pub cache: CacheStoreConfig,
    pub exec_limits: ExecLimits,
    pub max_script_processes: usize,
    pub max_program_bytes: usize,
    pub codegen_workers: usize,
    /// Requests per sample of the cost/savings ratio series.
    pub metrics_window: u64,
    /// How many recent request ids are remembered for feedback.
    pub request_log_capacity: usize,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            thresholds: ClusterThresholds::default(),
            codegen: CodegenConfig::default(),
            cache: CacheStoreConfig::default(),
            exec_limits: ExecLimits::default(),
            max_script_processes: 4,
            max_program_bytes: crate::program::DEFAULT_MAX_PROGRAM_BYTES,
            codegen_workers: 2,
            metrics_window: 100,
            request_log_capacity: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServedFrom {
    Cache,
    Llm,
}

/// Milliseconds spent in each pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub embed_ms: f64,
    pub cluster_search_ms: f64,
    pub regex_validate_ms: f64,
    pub program_exec_ms: f64,
    pub llm_ms: f64,
    pub db_insert_ms: f64,
}

impl Timings {
    pub fn total_ms(&self) -> f64 {
        self.embed_ms
            + self.cluster_search_ms
            + self.regex_validate_ms
            + self.program_exec_ms
            + self.llm_ms
            + self.db_insert_ms
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenAccount {
    pub spent_input: u64,
    pub spent_output: u64,
    pub saved_estimate: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestOutcome {
    pub request_id: String,
    pub response_text: String,
    pub served_from: ServedFrom,
    pub cluster_id: Option<ClusterId>,
    pub timings: Timings,
    pub tokens: TokenAccount,
    /// Whether this request queued a synthesis job.
    pub codegen_enqueued: bool,
}

fn ms_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1000.0
}

#[derive(Debug, Default)]
struct Metrics {
    requests: AtomicU64,
    hits: AtomicU64,
    misses: AtomicU64,
    codegen_llm_calls: AtomicU64,
    codegen_jobs: AtomicU64,
    codegen_accepted: AtomicU64,
    codegen_input_tokens: AtomicU64,
    codegen_output_tokens: AtomicU64,
    tokens_spent_input: AtomicU64,
    tokens_spent_output: AtomicU64,
    tokens_saved_input: AtomicU64,
    tokens_saved_output: AtomicU64,
    feedback_deletions: AtomicU64,
    evictions: AtomicU64,
    ratio_series: Mutex<Vec<Option<f64>>>,
}

/// Point-in-time copy of the runtime counters.
///
/// `tokens_spent_*` covers both miss-path calls and program synthesis;
/// `codegen_*_tokens` is the synthesis share. `ratio_series` holds the
/// cumulative synthesis-calls / hits ratio every `metrics_window` requests,
/// `None` while there are no hits yet.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub requests: u64,
    pub hits: u64,
    pub misses: u64,
    pub codegen_llm_calls: u64,
    pub codegen_jobs: u64,
    pub codegen_accepted: u64,
    pub codegen_input_tokens: u64,
    pub codegen_output_tokens: u64,
    pub tokens_spent_input: u64,
    pub tokens_spent_output: u64,
    pub tokens_saved_input: u64,
    pub tokens_saved_output: u64,
    pub feedback_deletions: u64,
    pub evictions: u64,
    pub ratio_series: Vec<Option<f64>>,
}

impl Metrics {
    fn snapshot(&self) -> MetricsSnapshot {
        let get = |a: &AtomicU64| a.load(Ordering::SeqCst);
        MetricsSnapshot {
            requests: get(&self.requests),
            hits: get(&self.hits),
            misses: get(&self.misses),
            codegen_llm_calls: get(&self.codegen_llm_calls),
            codegen_jobs: get(&self.codegen_jobs),
            codegen_accepted: get(&self.codegen_accepted),
            codegen_input_tokens: get(&self.codegen_input_tokens),
            codegen_output_tokens: get(&self.codegen_output_tokens),
            tokens_spent_input: get(&self.tokens_spent_input),
            tokens_spent_output: get(&self.tokens_spent_output),
            tokens_saved_input: get(&self.tokens_saved_input),
            tokens_saved_output: get(&self.tokens_saved_output),
            feedback_deletions: get(&self.feedback_deletions),
            evictions: get(&self.evictions),
            ratio_series: self.ratio_series.lock().clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub id: ClusterId,
    pub size: usize,
    pub sealed: bool,
    pub has_cache: bool,
    pub retries_used: u32,
    pub response_arity: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheIndexEntry {
    pub cluster_id: ClusterId,
    pub size_bytes: usize,
    pub hits: u64,
    pub created_at_ms: u64,
}

#[derive(Debug, Clone, Copy)]
struct LoggedRequest {
    served_from: ServedFrom,
    cluster_id: Option<ClusterId>,
}

#[derive(Debug, Default)]
struct RequestLog {
    entries: HashMap<String, LoggedRequest>,
    order: VecDeque<String>,
}

impl RequestLog {
    fn insert(&mut self, id: String, entry: LoggedRequest, capacity: usize) {
        if self.entries.insert(id.clone(), entry).is_none() {
            self.order.push_back(id);
        }
        while self.order.len() > capacity.max(1) {
            if let Some(old) = self.order.pop_front() {
                self.entries.remove(&old);
            }
        }
    }
}

struct Shared {
    config: RuntimeConfig,
    embedder: Arc<dyn Embedder>,
    clusters: RwLock<ClusterStore>,
    cache: RwLock<CacheStore>,
    codegen: CodegenContext,
    metrics: Metrics,
    requests: Mutex<RequestLog>,
    inflight: Mutex<HashSet<ClusterId>>,
    pending: Mutex<usize>,
    idle: Condvar,
}

/// The cache runtime. Cheap to share behind an `Arc`; all methods take `&self`.
pub struct Runtime {
    shared: Arc<Shared>,
    jobs: Mutex<Option<Sender<ClusterId>>>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

impl Runtime {
    /// Builds a runtime. `codegen` and `validator` are the synthesis and
    /// validation models; the miss-path backend is passed per request.
    pub fn new(
        config: RuntimeConfig,
        embedder: Arc<dyn Embedder>,
        codegen: Arc<dyn LlmBackend>,
        validator: Arc<dyn LlmBackend>,
    ) -> Self {
        let ctx = CodegenContext {
            codegen,
            validator,
            config: config.codegen.clone(),
            executor: Executor::new(config.exec_limits, config.max_script_processes),
            compile: CompileOptions {
                max_program_bytes: config.max_program_bytes,
            },
        };
        let shared = Arc::new(Shared {
            clusters: RwLock::new(ClusterStore::new(config.codegen.cluster_capacity())),
            cache: RwLock::new(CacheStore::new(config.cache)),
            embedder,
            codegen: ctx,
            metrics: Metrics::default(),
            requests: Mutex::new(RequestLog::default()),
            inflight: Mutex::new(HashSet::new()),
            pending: Mutex::new(0),
            idle: Condvar::new(),
            config,
        });
        let (tx, rx) = crossbeam_channel::unbounded();
        let workers = (0..shared.config.codegen_workers.max(1))
            .map(|i| {
                let shared = Arc::clone(&shared);
                let rx: Receiver<ClusterId> = rx.clone();
                thread::Builder::new()
                    .name(format!("gencache-codegen-{i}"))
                    .spawn(move || {
                        for id in rx {
                            shared.run_codegen(id);
                        }
                    })
                    .expect("spawn codegen worker")
            })
            .collect();
        Self {
            shared,
            jobs: Mutex::new(Some(tx)),
            workers: Mutex::new(workers),
        }
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.shared.config
    }

    pub fn handle_request(
        &self,
        prompt: PromptRecord,
        backend: &dyn LlmBackend,
    ) -> Result<RequestOutcome, RuntimeError> {
        self.handle_chat(prompt, None, backend)
    }

    /// Like [`Runtime::handle_request`], forwarding `messages` to the backend
    /// on a miss instead of a single user message holding the full prompt.
    pub fn handle_chat(
        &self,
        prompt: PromptRecord,
        messages: Option<&[ChatMessage]>,
        backend: &dyn LlmBackend,
    ) -> Result<RequestOutcome, RuntimeError> {
        let shared = &self.shared;
        let mut timings = Timings::default();

        let t = Instant::now();
        let embedding = shared.embedder.embed(&prompt.full_text);
        timings.embed_ms = ms_since(t);
        let embedding = match embedding {
            Ok(e) => Some(e),
            Err(e) => {
                tracing::warn!(error = %e, "embedding failed, bypassing cache");
                None
            }
        };

        if let Some(e_p) = &embedding {
            if let Some(outcome) = self.try_cache(&prompt, e_p, &mut timings) {
                return Ok(outcome);
            }
        }

        let fallback;
        let messages = match messages {
            Some(m) => m,
            None => {
                fallback = [ChatMessage::user(prompt.full_text.clone())];
                &fallback[..]
            }
        };
        let t = Instant::now();
        let completion = backend.complete(messages);
        timings.llm_ms = ms_since(t);
        let completion = completion?;

        let m = &shared.metrics;
        m.requests.fetch_add(1, Ordering::SeqCst);
        m.misses.fetch_add(1, Ordering::SeqCst);
        m.tokens_spent_input.fetch_add(completion.input_tokens, Ordering::SeqCst);
        m.tokens_spent_output.fetch_add(completion.output_tokens, Ordering::SeqCst);

        let t = Instant::now();
        let (cluster_id, codegen_enqueued) = match embedding {
            Some(e_p) => self.store_exemplar(&prompt, e_p, &completion.text),
            None => (None, false),
        };
        timings.db_insert_ms = ms_since(t);

        let outcome = RequestOutcome {
            request_id: prompt.id.clone(),
            response_text: completion.text,
            served_from: ServedFrom::Llm,
            cluster_id,
            timings,
            tokens: TokenAccount {
                spent_input: completion.input_tokens,
                spent_output: completion.output_tokens,
                saved_estimate: 0,
            },
            codegen_enqueued,
        };
        self.finish(prompt.id, &outcome);
        Ok(outcome)
    }

    fn try_cache(
        &self,
        prompt: &PromptRecord,
        e_p: &Embedding,
        timings: &mut Timings,
    ) -> Option<RequestOutcome> {
        let shared = &self.shared;
        let t = Instant::now();
        let found = {
            let clusters = shared.clusters.read();
            clusters
                .nearest_cluster_by_prompt(e_p, shared.config.thresholds.t_prompt)
                .and_then(|(id, _)| clusters.get(id))
                .filter(|c| c.has_cache)
                .map(|c| (c.id(), c.response_shape()))
        };
        let entry = found.and_then(|(id, shape)| {
            shared.cache.read().get(id).map(|entry| (entry, shape))
        });
        timings.cluster_search_ms = ms_since(t);
        let (entry, shape) = entry?;

        let t = Instant::now();
        let conforms = entry.program.structural_match(&prompt.full_text);
        timings.regex_validate_ms = ms_since(t);
        if !conforms {
            return None;
        }

        let t = Instant::now();
        let result = shared.codegen.executor.execute(&entry.program, &prompt.full_text);
        timings.program_exec_ms = ms_since(t);
        if !sanity_check(&result, shape) {
            return None;
        }
        let ExecResult::Response(doc) = result else {
            return None;
        };

        let response_text = doc.to_wire();
        let saved_input = estimate_tokens(&prompt.full_text);
        let saved_output = estimate_tokens(&response_text);
        let m = &shared.metrics;
        m.requests.fetch_add(1, Ordering::SeqCst);
        m.hits.fetch_add(1, Ordering::SeqCst);
        m.tokens_saved_input.fetch_add(saved_input, Ordering::SeqCst);
        m.tokens_saved_output.fetch_add(saved_output, Ordering::SeqCst);
        let outcome = RequestOutcome {
            request_id: prompt.id.clone(),
            response_text,
            served_from: ServedFrom::Cache,
            cluster_id: Some(entry.cluster_id),
            timings: *timings,
            tokens: TokenAccount {
                spent_input: 0,
                spent_output: 0,
                saved_estimate: saved_input + saved_output,
            },
            codegen_enqueued: false,
        };
        self.finish(prompt.id.clone(), &outcome);
        Some(outcome)
    }

    fn store_exemplar(
        &self,
        prompt: &PromptRecord,
        e_p: Embedding,
        response_text: &str,
    ) -> (Option<ClusterId>, bool) {
        let shared = &self.shared;
        let response = ResponseDoc::parse(response_text);
        let exemplar = match Exemplar::with_prompt_embedding(
            shared.embedder.as_ref(),
            prompt.clone(),
            response,
            e_p,
        ) {
            Ok(ex) => ex,
            Err(e) => {
                tracing::warn!(error = %e, "could not embed response, exemplar dropped");
                return (None, false);
            }
        };
        let nu = shared.config.codegen.nu;
        let rho = shared.config.codegen.rho;
        let mut clusters = shared.clusters.write();
        let assignment = clusters.assign(exemplar, &shared.config.thresholds);
        let id = assignment.cluster_id;
        let eligible = clusters
            .get(id)
            .is_some_and(|c| c.len() >= nu && !c.has_cache && c.retries_used < rho);
        let enqueued = eligible && self.enqueue(id);
        (Some(id), enqueued)
    }

    fn enqueue(&self, id: ClusterId) -> bool {
        let shared = &self.shared;
        if !shared.inflight.lock().insert(id) {
            return false;
        }
        let jobs = self.jobs.lock();
        let Some(tx) = jobs.as_ref() else {
            shared.inflight.lock().remove(&id);
            return false;
        };
        *shared.pending.lock() += 1;
        shared.metrics.codegen_jobs.fetch_add(1, Ordering::SeqCst);
        if tx.send(id).is_err() {
            shared.inflight.lock().remove(&id);
            shared.finish_job();
            return false;
        }
        true
    }

    fn finish(&self, id: String, outcome: &RequestOutcome) {
        let shared = &self.shared;
        shared.requests.lock().insert(
            id,
            LoggedRequest {
                served_from: outcome.served_from,
                cluster_id: outcome.cluster_id,
            },
            shared.config.request_log_capacity,
        );
        let m = &shared.metrics;
        let window = shared.config.metrics_window.max(1);
        let requests = m.requests.load(Ordering::SeqCst);
        if requests.is_multiple_of(window) {
            let hits = m.hits.load(Ordering::SeqCst);
            let calls = m.codegen_llm_calls.load(Ordering::SeqCst);
            let ratio = (hits > 0).then(|| calls as f64 / hits as f64);
            m.ratio_series.lock().push(ratio);
        }
    }

    /// Applies client feedback for a served request. Negative feedback on a
    /// cache hit deletes the cluster's program and keeps the cluster; later
    /// misses in that cluster may regenerate it while attempts remain.
    pub fn record_feedback(&self, request_id: &str, valid: bool) -> Result<bool, RuntimeError> {
        let shared = &self.shared;
        let logged = shared
            .requests
            .lock()
            .entries
            .get(request_id)
            .copied()
            .ok_or_else(|| RuntimeError::UnknownRequest(request_id.to_string()))?;
        if valid || logged.served_from != ServedFrom::Cache {
            return Ok(false);
        }
        let Some(cluster_id) = logged.cluster_id else {
            return Ok(false);
        };
        let mut clusters = shared.clusters.write();
        let deleted = shared.cache.read().delete_for_feedback(cluster_id);
        if deleted {
            if let Some(c) = clusters.get_mut(cluster_id) {
                c.has_cache = false;
            }
            shared.metrics.feedback_deletions.fetch_add(1, Ordering::SeqCst);
        }
        Ok(deleted)
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        self.shared.metrics.snapshot()
    }

    pub fn clusters(&self) -> Vec<ClusterSummary> {
        self.shared
            .clusters
            .read()
            .iter()
            .map(|c| ClusterSummary {
                id: c.id(),
                size: c.len(),
                sealed: c.sealed(),
                has_cache: c.has_cache,
                retries_used: c.retries_used,
                response_arity: c.response_arity(),
            })
            .collect()
    }

    /// Cached programs from least to most recently used.
    pub fn cache_index(&self) -> Vec<CacheIndexEntry> {
        let cache = self.shared.cache.read();
        cache
            .lru_order()
            .into_iter()
            .filter_map(|id| cache.peek(id))
            .map(|e| CacheIndexEntry {
                cluster_id: e.cluster_id,
                size_bytes: e.size_bytes,
                hits: e.hits,
                created_at_ms: e.created_at_ms,
            })
            .collect()
    }

    pub fn cluster_count(&self) -> usize {
        self.shared.clusters.read().len()
    }

    pub fn cache_len(&self) -> usize {
        self.shared.cache.read().len()
    }

    /// Blocks until no synthesis job is queued or running.
    pub fn wait_idle(&self) {
        let mut pending = self.shared.pending.lock();
        while *pending > 0 {
            self.shared.idle.wait(&mut pending);
        }
    }

    /// Stops accepting synthesis jobs and waits for queued ones to finish.
    pub fn shutdown(&self) {
        self.jobs.lock().take();
        for handle in self.workers.lock().drain(..) {
            let _ = handle.join();
        }
    }

    /// Writes `clusters.jsonl` and the program cache under `dir`.
    pub fn snapshot(&self, dir: &Path) -> Result<(), RuntimeError> {
        self.wait_idle();
        fs::create_dir_all(dir)?;
        let clusters = self.shared.clusters.read();
        let tmp = dir.join("clusters.jsonl.tmp");
        let mut file = fs::File::create(&tmp)?;
        for record in clusters.to_records() {
            writeln!(file, "{}", serde_json::to_string(&record).expect("cluster record serializes"))?;
        }
        file.sync_all()?;
        fs::rename(&tmp, dir.join("clusters.jsonl"))?;
        self.shared.cache.read().save(&dir.join("cache"))?;
        Ok(())
    }

    /// Replaces the cluster database and cache with a snapshot from `dir`.
    /// Nothing changes if any part of the snapshot is unreadable.
    pub fn restore(&self, dir: &Path) -> Result<(), RuntimeError> {
        self.wait_idle();
        let shared = &self.shared;
        let path = dir.join("clusters.jsonl");
        let mut records = Vec::new();
        if path.exists() {
            let reader = BufReader::new(fs::File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: ClusterRecord = serde_json::from_str(&line)
                    .map_err(|e| RuntimeError::Snapshot(format!("clusters.jsonl line {}: {e}", i + 1)))?;
                records.push(record);
            }
        }
        let mut store = ClusterStore::from_records(
            records,
            shared.embedder.as_ref(),
            shared.config.codegen.cluster_capacity(),
        )?;
        let cache = CacheStore::load(&dir.join("cache"), shared.config.cache, &shared.codegen.compile)?;
        for id in cache.lru_order() {
            let cluster = store.get_mut(id).ok_or_else(|| {
                RuntimeError::Snapshot(format!("cached program for unknown cluster {id}"))
            })?;
            cluster.has_cache = true;
        }
        let mut clusters = shared.clusters.write();
        let mut current_cache = shared.cache.write();
        *clusters = store;
        *current_cache = cache;
        shared.inflight.lock().clear();
        Ok(())
    }
}

impl Shared {
    fn run_codegen(&self, id: ClusterId) {
        let exemplars = self.clusters.read().get(id).and_then(|c| {
            (!c.has_cache && c.retries_used < self.config.codegen.rho).then(|| c.exemplars().to_vec())
        });
        if let Some(exemplars) = exemplars {
            let rho = self.config.codegen.rho;
            let outcome = synthesize(&self.codegen, &exemplars, || {
                let mut clusters = self.clusters.write();
                match clusters.get_mut(id) {
                    Some(c) if c.retries_used < rho && !c.has_cache => {
                        c.retries_used += 1;
                        true
                    }
                    _ => false,
                }
            });
            match outcome {
                Ok(outcome) => {
                    let m = &self.metrics;
                    m.codegen_llm_calls.fetch_add(outcome.usage.llm_calls(), Ordering::SeqCst);
                    m.codegen_input_tokens.fetch_add(outcome.usage.input_tokens, Ordering::SeqCst);
                    m.codegen_output_tokens.fetch_add(outcome.usage.output_tokens, Ordering::SeqCst);
                    m.tokens_spent_input.fetch_add(outcome.usage.input_tokens, Ordering::SeqCst);
                    m.tokens_spent_output.fetch_add(outcome.usage.output_tokens, Ordering::SeqCst);
                    if let Some(program) = outcome.program {
                        m.codegen_accepted.fetch_add(1, Ordering::SeqCst);
                        let mut clusters = self.clusters.write();
                        let evicted = self.cache.read().put(id, program);
                        if let Some(c) = clusters.get_mut(id) {
                            c.has_cache = true;
                        }
                        for gone in &evicted {
                            if let Some(c) = clusters.get_mut(*gone) {
                                c.has_cache = false;
                            }
                        }
                        m.evictions.fetch_add(evicted.len() as u64, Ordering::SeqCst);
                    } else {
                        tracing::info!(cluster = id, attempts = outcome.attempts, "no program accepted");
                    }
                }
                Err(e) => tracing::warn!(cluster = id, error = %e, "codegen failed"),
            }
        }
        self.inflight.lock().remove(&id);
        self.finish_job();
    }

    fn finish_job(&self) {
        let mut pending = self.pending.lock();
        *pending = pending.saturating_sub(1);
        if *pending == 0 {
            self.idle.notify_all();
        }
    }
}

impl Drop for Runtime {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_estimate_rounds_up() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("12345678"), 2);
        assert_eq!(estimate_tokens("123456789"), 3);
        assert_eq!(estimate_tokens("é"), 1);
    }

    #[test]
    fn request_log_is_bounded() {
        let mut log = RequestLog::default();
        let e = LoggedRequest {
            served_from: ServedFrom::Llm,
            cluster_id: None,
        };
        for i in 0..5 {
            log.insert(i.to_string(), e, 3);
        }
        assert_eq!(log.entries.len(), 3);
        assert!(!log.entries.contains_key("0"));
        assert!(log.entries.contains_key("4"));
    }
}
