//! Cached extraction programs.
//!
//! A program maps a prompt to a response. Declarative programs are an
//! ordered list of regex rules with response templates; the first rule whose
//! regex matches fills its template with the captured groups. External
//! scripts are run as `<runtime_command> <prompt>` and their stdout is the
//! response, with output starting with `None` meaning "declined".
//!
//! Every program carries a structural regex that a prompt must match before
//! the program is used for it. All regexes are compiled case-insensitive with
//! `.` matching newlines; use inline flags such as `(?-i)` to opt out.

use std::fmt;
use std::io::{Read, Write as _};
use std::process::{Command, Stdio};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{ResponseDoc, ResponseShape};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_MAX_PROGRAM_BYTES: usize = 16 * 1024;
pub const SCRIPT_PLACEHOLDER: &str = "{script}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramSource {
    pub version: u32,
    pub structural_regex: String,
    #[serde(flatten)]
    pub body: ProgramBody,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProgramBody {
    Declarative {
        rules: Vec<PatternRule>,
    },
    ExternalScript {
        script: String,
        /// Command template containing `{script}`; the prompt is appended as
        /// the final argument.
        runtime_command: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternRule {
    pub match_regex: String,
    pub response: ResponseTemplate,
}

/// Value templates are literal text with `{group}` placeholders; `{{` and
/// `}}` are literal braces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseTemplate {
    Structured(Vec<TemplateEntry>),
    Plain(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateEntry {
    pub key: String,
    pub value: String,
}

impl ProgramSource {
    pub fn declarative(structural_regex: impl Into<String>, rules: Vec<PatternRule>) -> Self {
        Self {
            version: FORMAT_VERSION,
            structural_regex: structural_regex.into(),
            body: ProgramBody::Declarative { rules },
        }
    }

    pub fn external_script(
        structural_regex: impl Into<String>,
        script: impl Into<String>,
        runtime_command: impl Into<String>,
    ) -> Self {
        Self {
            version: FORMAT_VERSION,
            structural_regex: structural_regex.into(),
            body: ProgramBody::ExternalScript {
                script: script.into(),
                runtime_command: runtime_command.into(),
            },
        }
    }

    /// Canonical serialization, also used for size accounting.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("program source serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CompileError> {
        let source: ProgramSource =
            serde_json::from_str(text).map_err(|e| CompileError::Format(e.to_string()))?;
        if source.version != FORMAT_VERSION {
            return Err(CompileError::Format(format!(
                "unsupported program format version {}",
                source.version
            )));
        }
        Ok(source)
    }
}

impl PatternRule {
    pub fn plain(match_regex: impl Into<String>, template: impl Into<String>) -> Self {
        Self {
            match_regex: match_regex.into(),
            response: ResponseTemplate::Plain(template.into()),
        }
    }

    pub fn structured<K: Into<String>, V: Into<String>>(
        match_regex: impl Into<String>,
        entries: impl IntoIterator<Item = (K, V)>,
    ) -> Self {
        Self {
            match_regex: match_regex.into(),
            response: ResponseTemplate::Structured(
                entries
                    .into_iter()
                    .map(|(k, v)| TemplateEntry {
                        key: k.into(),
                        value: v.into(),
                    })
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompileError {
    #[error("{location}: invalid regex: {message}")]
    InvalidRegex { location: String, message: String },
    #[error("{location}: placeholder {{{name}}} names no capture group")]
    UnknownPlaceholder { location: String, name: String },
    #[error("{location}: malformed template: {message}")]
    Template { location: String, message: String },
    #[error("declarative program has no rules")]
    NoRules,
    #[error("runtime command must contain {SCRIPT_PLACEHOLDER} and a program name")]
    RuntimeCommand,
    #[error("program is {size} bytes, limit is {limit}")]
    Oversize { size: usize, limit: usize },
    #[error("could not stage script: {0}")]
    Stage(String),
    #[error("malformed program document: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompileOptions {
    pub max_program_bytes: usize,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            max_program_bytes: DEFAULT_MAX_PROGRAM_BYTES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Group(String),
}

#[derive(Debug, Clone)]
enum CompiledTemplate {
    Structured(Vec<(String, Vec<Segment>)>),
    Plain(Vec<Segment>),
}

#[derive(Debug, Clone)]
struct CompiledRule {
    regex: Regex,
    template: CompiledTemplate,
}

#[derive(Debug, Clone)]
enum Compiled {
    Declarative(Vec<CompiledRule>),
    Script {
        // keeps the staged file alive for the program's lifetime
        _file: Arc<tempfile::TempPath>,
        argv: Vec<String>,
    },
}

/// A validated, ready-to-run program. Immutable and cheap to clone.
#[derive(Debug, Clone)]
pub struct CompiledProgram {
    source: Arc<ProgramSource>,
    structural: Regex,
    compiled: Compiled,
    size_bytes: usize,
}

impl CompiledProgram {
    pub fn source(&self) -> &ProgramSource {
        &self.source
    }

    pub fn size_bytes(&self) -> usize {
        self.size_bytes
    }

    pub fn is_external(&self) -> bool {
        matches!(self.compiled, Compiled::Script { .. })
    }

    /// Whether the structural regex finds a match anywhere in the prompt.
    pub fn structural_match(&self, prompt: &str) -> bool {
        self.structural.is_match(prompt)
    }
}

fn build_regex(pattern: &str, location: &str) -> Result<Regex, CompileError> {
    RegexBuilder::new(pattern)
        .case_insensitive(true)
        .dot_matches_new_line(true)
        .build()
        .map_err(|e| CompileError::InvalidRegex {
            location: location.to_string(),
            message: e.to_string(),
        })
}

fn parse_template(
    template: &str,
    groups: &[&str],
    location: &str,
) -> Result<Vec<Segment>, CompileError> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut chars = template.chars().peekable();
    let malformed = |message: &str| CompileError::Template {
        location: location.to_string(),
        message: message.to_string(),
    };
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                literal.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                literal.push('}');
            }
            '{' => {
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some(c) => name.push(c),
                        None => return Err(malformed("unterminated placeholder")),
                    }
                }
                if !groups.contains(&name.as_str()) {
                    return Err(CompileError::UnknownPlaceholder {
                        location: location.to_string(),
                        name,
                    });
                }
                if !literal.is_empty() {
                    segments.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                segments.push(Segment::Group(name));
            }
            '}' => return Err(malformed("unmatched '}'")),
            c => literal.push(c),
        }
    }
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    Ok(segments)
}

pub fn compile(
    source: ProgramSource,
    options: &CompileOptions,
) -> Result<CompiledProgram, CompileError> {
    let size_bytes = source.to_json().len();
    if size_bytes > options.max_program_bytes {
        return Err(CompileError::Oversize {
            size: size_bytes,
            limit: options.max_program_bytes,
        });
    }
    let structural = build_regex(&source.structural_regex, "structural_regex")?;
    let compiled = match &source.body {
        ProgramBody::Declarative { rules } => {
            if rules.is_empty() {
                return Err(CompileError::NoRules);
            }
            let mut out = Vec::with_capacity(rules.len());
            for (i, rule) in rules.iter().enumerate() {
                let location = format!("rule {i}");
                let regex = build_regex(&rule.match_regex, &format!("{location} match_regex"))?;
                let groups: Vec<&str> = regex.capture_names().flatten().collect();
                let template = match &rule.response {
                    ResponseTemplate::Plain(t) => CompiledTemplate::Plain(parse_template(
                        t,
                        &groups,
                        &format!("{location} response"),
                    )?),
                    ResponseTemplate::Structured(entries) => {
                        let mut compiled_entries = Vec::with_capacity(entries.len());
                        for entry in entries {
                            let loc = format!("{location} response.{}", entry.key);
                            if compiled_entries.iter().any(|(k, _)| k == &entry.key) {
                                return Err(CompileError::Template {
                                    location: loc,
                                    message: "duplicate key".into(),
                                });
                            }
                            compiled_entries.push((
                                entry.key.clone(),
                                parse_template(&entry.value, &groups, &loc)?,
                            ));
                        }
                        CompiledTemplate::Structured(compiled_entries)
                    }
                };
                out.push(CompiledRule { regex, template });
            }
            Compiled::Declarative(out)
        }
        ProgramBody::ExternalScript {
            script,
            runtime_command,
        } => {
            let parts: Vec<&str> = runtime_command.split_whitespace().collect();
            if parts.len() < 2 || !parts.contains(&SCRIPT_PLACEHOLDER) || parts[0] == SCRIPT_PLACEHOLDER {
                return Err(CompileError::RuntimeCommand);
            }
            let mut file = tempfile::Builder::new()
                .prefix("gencache-program-")
                .tempfile()
                .map_err(|e| CompileError::Stage(e.to_string()))?;
            file.write_all(script.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| CompileError::Stage(e.to_string()))?;
            let path = file.into_temp_path();
            let path_str = path.to_string_lossy().into_owned();
            let argv = parts
                .iter()
                .map(|p| {
                    if *p == SCRIPT_PLACEHOLDER {
                        path_str.clone()
                    } else {
                        p.to_string()
                    }
                })
                .collect();
            Compiled::Script {
                _file: Arc::new(path),
                argv,
            }
        }
    };
    Ok(CompiledProgram {
        source: Arc::new(source),
        structural,
        compiled,
        size_bytes,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecResult {
    Response(ResponseDoc),
    /// The program declined the prompt.
    Null(String),
    Error(String),
}

impl ExecResult {
    pub fn response(&self) -> Option<&ResponseDoc> {
        match self {
            ExecResult::Response(doc) => Some(doc),
            _ => None,
        }
    }
}

impl fmt::Display for ExecResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExecResult::Response(doc) => f.write_str(&doc.to_wire()),
            ExecResult::Null(reason) => write!(f, "None: {reason}"),
            ExecResult::Error(reason) => write!(f, "None: error: {reason}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecLimits {
    pub timeout: Duration,
    pub max_output_bytes: usize,
}

impl Default for ExecLimits {
    fn default() -> Self {
        Self {
            timeout: Duration::from_millis(2000),
            max_output_bytes: 64 * 1024,
        }
    }
}

pub const NO_RULE_MATCHED: &str = "no rule matched";

/// Runs a program on one prompt. Never panics; every failure is a result value.
pub fn execute(program: &CompiledProgram, prompt: &str, limits: &ExecLimits) -> ExecResult {
    match &program.compiled {
        Compiled::Declarative(rules) => run_rules(rules, prompt),
        Compiled::Script { argv, .. } => run_script(argv, prompt, limits),
    }
}

fn render(segments: &[Segment], caps: &regex::Captures<'_>) -> String {
    let mut out = String::new();
    for seg in segments {
        match seg {
            Segment::Literal(s) => out.push_str(s),
            Segment::Group(name) => {
                if let Some(m) = caps.name(name) {
                    out.push_str(m.as_str());
                }
            }
        }
    }
    out
}

fn run_rules(rules: &[CompiledRule], prompt: &str) -> ExecResult {
    for rule in rules {
        let Some(caps) = rule.regex.captures(prompt) else {
            continue;
        };
        let doc = match &rule.template {
            CompiledTemplate::Plain(segments) => ResponseDoc::Plain(render(segments, &caps)),
            CompiledTemplate::Structured(entries) => ResponseDoc::Structured(
                entries
                    .iter()
                    .map(|(k, segs)| (k.clone(), render(segs, &caps)))
                    .collect(),
            ),
        };
        return ExecResult::Response(doc);
    }
    ExecResult::Null(NO_RULE_MATCHED.into())
}

fn run_script(argv: &[String], prompt: &str, limits: &ExecLimits) -> ExecResult {
    let mut cmd = Command::new(&argv[0]);
    cmd.args(&argv[1..])
        .arg(prompt)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::null());
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        cmd.process_group(0);
    }
    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) => return ExecResult::Error(format!("spawn failed: {e}")),
    };
    let start = Instant::now();
    let mut stdout = child.stdout.take().expect("stdout is piped");
    let cap = limits.max_output_bytes as u64 + 1;
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = (&mut stdout).take(cap).read_to_end(&mut buf);
        let _ = tx.send(buf);
    });

    let kill = |child: &mut std::process::Child| {
        #[cfg(unix)]
        unsafe {
            libc::killpg(child.id() as libc::pid_t, libc::SIGKILL);
        }
        let _ = child.kill();
        let _ = child.wait();
    };

    let deadline = start + limits.timeout;
    let mut output = None;
    let status = loop {
        if output.is_none() {
            if let Ok(buf) = rx.try_recv() {
                if buf.len() > limits.max_output_bytes {
                    kill(&mut child);
                    return ExecResult::Error("output too large".into());
                }
                output = Some(buf);
            }
        }
        match child.try_wait() {
            Ok(Some(status)) => break Some(status),
            Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(1)),
            Ok(None) => {
                kill(&mut child);
                return ExecResult::Error("timeout".into());
            }
            Err(_) => {
                kill(&mut child);
                break None;
            }
        }
    };
    // Stray grandchildren in the group must not outlive the program. They may
    // also hold the output pipe open, so the read only finishes after this.
    #[cfg(unix)]
    unsafe {
        libc::killpg(child.id() as libc::pid_t, libc::SIGKILL);
    }
    let output = match output {
        Some(buf) => buf,
        None => {
            let wait = deadline
                .saturating_duration_since(Instant::now())
                .max(Duration::from_millis(50));
            match rx.recv_timeout(wait) {
                Ok(buf) => buf,
                Err(_) => return ExecResult::Error("timeout".into()),
            }
        }
    };
    if output.len() > limits.max_output_bytes {
        return ExecResult::Error("output too large".into());
    }

    let text = String::from_utf8_lossy(&output);
    let text = text.trim();
    if let Some(reason) = declined(text) {
        return ExecResult::Null(reason);
    }
    if text.is_empty() {
        return match status {
            Some(s) if !s.success() => ExecResult::Error(format!("program exited with {s}")),
            _ => ExecResult::Null("empty output".into()),
        };
    }
    ExecResult::Response(ResponseDoc::parse(text))
}

fn declined(output: &str) -> Option<String> {
    let rest = output.strip_prefix("None")?;
    if rest.is_empty() {
        return Some("program returned None".into());
    }
    if rest.starts_with([':', ' ', '\n', '\t', ',']) {
        let reason = rest.trim_start_matches([':', ',']).trim();
        return Some(if reason.is_empty() {
            "program returned None".into()
        } else {
            reason.to_string()
        });
    }
    None
}

/// True iff the result is a response of the expected shape with no blank values.
pub fn sanity_check(result: &ExecResult, expected: ResponseShape) -> bool {
    match (result, expected) {
        (ExecResult::Response(ResponseDoc::Plain(text)), ResponseShape::Plain) => {
            !text.trim().is_empty()
        }
        (ExecResult::Response(ResponseDoc::Structured(entries)), ResponseShape::Structured { arity }) => {
            entries.len() == arity && entries.iter().all(|(_, v)| !v.trim().is_empty())
        }
        _ => false,
    }
}

/// Counting semaphore bounding concurrent script processes.
#[derive(Debug)]
pub struct ProcessSlots {
    free: Mutex<usize>,
    cond: Condvar,
}

impl ProcessSlots {
    pub fn new(slots: usize) -> Self {
        Self {
            free: Mutex::new(slots.max(1)),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock();
        while *free == 0 {
            self.cond.wait(&mut free);
        }
        *free -= 1;
        SlotGuard { slots: self }
    }
}

struct SlotGuard<'a> {
    slots: &'a ProcessSlots,
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.slots.free.lock() += 1;
        self.slots.cond.notify_one();
    }
}

/// Executes programs under fixed limits and a cap on concurrent processes.
#[derive(Debug, Clone)]
pub struct Executor {
    pub limits: ExecLimits,
    slots: Arc<ProcessSlots>,
}

impl Executor {
    pub fn new(limits: ExecLimits, max_processes: usize) -> Self {
        Self {
            limits,
            slots: Arc::new(ProcessSlots::new(max_processes)),
        }
    }

    pub fn execute(&self, program: &CompiledProgram, prompt: &str) -> ExecResult {
        if program.is_external() {
            let _slot = self.slots.acquire();
            execute(program, prompt, &self.limits)
        } else {
            execute(program, prompt, &self.limits)
        }
    }
}

impl Default for Executor {
    fn default() -> Self {
        Self::new(ExecLimits::default(), 4)
    }
}
