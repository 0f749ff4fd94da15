#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::sync::Mutex;

use convrepair_core::failure::{describe_failure, parse_failures, primary_failure, DirLookup};
use convrepair_core::prompt::extract_patch_text;
use convrepair_core::{
    compute_cost, load_corpus, normalize_patch, BugInstance, ChatBackend, ChatMessage,
    EngineConfig, EventVerdict, LlmError, Phase, RepairOutcome, RepairTask, Session,
    TableValidator, TestFailureInfo, ValidationResult, Validator,
};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn toy_manifest() -> PathBuf {
    fixtures().join("toy/toy.json")
}

pub fn toy_corpus() -> Vec<BugInstance> {
    load_corpus(&toy_manifest()).expect("toy corpus loads")
}

pub fn toy_bug(id: &str) -> BugInstance {
    toy_corpus()
        .into_iter()
        .find(|b| b.id == id)
        .unwrap_or_else(|| panic!("no toy bug {id}"))
}

/// Primary failure of the recorded original run, resolved against the toy sources.
pub fn toy_original(bug: &BugInstance) -> TestFailureInfo {
    toy_original_with(bug, false)
}

pub fn toy_original_with(bug: &BugInstance, include_body: bool) -> TestFailureInfo {
    let name = bug.id.replace('-', "");
    let raw = std::fs::read_to_string(fixtures().join(format!("transcripts/{name}.txt"))).unwrap();
    let failures = parse_failures(&raw);
    let (primary, _) = primary_failure(&failures).expect("recorded run fails");
    describe_failure(
        primary,
        &DirLookup::new(fixtures().join("toy")),
        include_body,
    )
}

pub fn toy_task(id: &str) -> RepairTask {
    let bug = toy_bug(id);
    let original = toy_original(&bug);
    RepairTask::load(bug, original).unwrap()
}

pub fn toy_tasks() -> Vec<RepairTask> {
    toy_corpus()
        .into_iter()
        .map(|bug| {
            let original = toy_original(&bug);
            RepairTask::load(bug, original).unwrap()
        })
        .collect()
}

/// Wraps a backend and records every query it receives.
pub struct Recording<B> {
    pub inner: B,
    pub queries: Mutex<Vec<Vec<ChatMessage>>>,
}

impl<B> Recording<B> {
    pub fn new(inner: B) -> Self {
        Recording {
            inner,
            queries: Mutex::new(Vec::new()),
        }
    }

    pub fn queries(&self) -> Vec<Vec<ChatMessage>> {
        self.queries.lock().unwrap().clone()
    }
}

impl<B: ChatBackend> ChatBackend for Recording<B> {
    fn complete(
        &self,
        session: &Session,
        messages: &[ChatMessage],
    ) -> Result<convrepair_core::llm::Completion, LlmError> {
        self.queries.lock().unwrap().push(messages.to_vec());
        self.inner.complete(session, messages)
    }

    fn max_context_tokens(&self) -> usize {
        self.inner.max_context_tokens()
    }
}

pub fn fenced(code: &str) -> String {
    format!("Here is the fix:\n```c\n{code}\n```")
}

/// One-shot HTTP server answering queued `(status, body)` responses in order and
/// recording each request's raw head and body.
pub struct StubServer {
    pub url: String,
    pub requests: std::sync::Arc<Mutex<Vec<(String, String)>>>,
}

impl StubServer {
    pub fn start(responses: Vec<(u16, String)>) -> Self {
        use std::io::{BufRead, BufReader, Read, Write};
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!(
            "http://{}/v1/chat/completions",
            listener.local_addr().unwrap()
        );
        let requests = std::sync::Arc::new(Mutex::new(Vec::new()));
        let log = requests.clone();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let Ok((stream, _)) = listener.accept() else {
                    return;
                };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                let mut length = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap_or(0);
                    }
                    head.push_str(&line);
                }
                let mut buf = vec![0; length];
                reader.read_exact(&mut buf).unwrap();
                log.lock()
                    .unwrap()
                    .push((head, String::from_utf8(buf).unwrap()));
                let mut stream = stream;
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.flush();
            }
        });
        StubServer { url, requests }
    }

    pub fn requests(&self) -> Vec<(String, String)> {
        self.requests.lock().unwrap().clone()
    }
}

pub fn chat_body(content: &str, prompt_tokens: u64, completion_tokens: u64) -> String {
    serde_json::json!({
        "id": "chatcmpl-stub",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens,
                  "total_tokens": prompt_tokens + completion_tokens}
    })
    .to_string()
}

/// A validator over a fresh temp copy of the bug's project.
#[cfg(feature = "process")]
pub fn real_validator(
    bug: &BugInstance,
) -> (
    tempfile::TempDir,
    convrepair_core::MemoValidator<convrepair_core::exec::WorkspaceValidator>,
) {
    let dir = tempfile::tempdir().unwrap();
    convrepair_core::exec::copy_tree(&bug.project_root, dir.path()).unwrap();
    let v = convrepair_core::exec::WorkspaceValidator::new(bug, dir.path()).unwrap();
    (dir, convrepair_core::MemoValidator::new(v))
}

/// Candidate replies for toy-1 and the verdict each one earns (`None`: unparseable).
pub fn toy1_pool(task: &RepairTask) -> Vec<(String, Option<ValidationResult>)> {
    let same = ValidationResult::TestFailure {
        info: task.original.clone(),
        all_failing: vec![task.original.test_name.clone()],
    };
    let new = ValidationResult::TestFailure {
        info: TestFailureInfo::new("test_clamp_below", "AssertionError: expected 0 but was -6")
            .with_failing_line("CHECK_EQ_INT(0, clamp(-5, 0, 10));"),
        all_failing: vec!["test_clamp_below".into()],
    };
    vec![
        (fenced("        return high;"), Some(ValidationResult::Pass)),
        (
            fenced("        return (high);"),
            Some(ValidationResult::Pass),
        ),
        (fenced("  return   high;"), Some(ValidationResult::Pass)),
        (
            fenced("        return hihg;"),
            Some(ValidationResult::CompileError {
                message: "clamp.c:6:16: error: 'hihg' undeclared".into(),
            }),
        ),
        (fenced("        return value;"), Some(same)),
        (fenced("        return low - 1;"), Some(new)),
        (
            fenced("        for (;;) {}"),
            Some(ValidationResult::Timeout),
        ),
        ("I do not know how to fix this.".into(), None),
    ]
}

pub fn toy1_validator(task: &RepairTask) -> TableValidator {
    let mut v = TableValidator::new(ValidationResult::Timeout);
    for (reply, verdict) in toy1_pool(task) {
        if let (Some(verdict), Ok(text)) = (verdict, extract_patch_text(&reply)) {
            v.insert(&text, verdict);
        }
    }
    v
}

/// Checks an outcome against the engine's invariants; `queries` are the backend inputs
/// in order and `fresh` re-validates the plausible list.
pub fn invariant_violations(
    out: &RepairOutcome,
    queries: &[Vec<ChatMessage>],
    config: &EngineConfig,
    fresh: &mut dyn Validator,
) -> Vec<String> {
    let mut bad = Vec::new();
    let mut check = |ok: bool, what: String| {
        if !ok {
            bad.push(what);
        }
    };
    let tries = out.ledger.tries_used;
    check(
        tries <= config.max_tries,
        format!("tries {tries} > {}", config.max_tries),
    );
    check(
        tries == queries.len(),
        format!("tries {tries} != queries {}", queries.len()),
    );
    check(
        out.events.len() == queries.len(),
        "one event per query".into(),
    );

    let mut per_conv: BTreeMap<usize, usize> = BTreeMap::new();
    for e in out.events.iter().filter(|e| e.phase == Phase::Conversation) {
        *per_conv.entry(e.conversation_id).or_default() += 1;
    }
    for (conv, n) in &per_conv {
        check(
            n <= &config.max_conv_length,
            format!("conversation {conv} has {n} exchanges"),
        );
    }
    for (i, q) in queries.iter().enumerate() {
        check(
            q.len() <= 2 + 2 * (config.max_conv_length - 1),
            format!("query {} carries {} messages", i + 1, q.len()),
        );
    }

    let mut current = None;
    for (i, (event, query)) in out.events.iter().zip(queries).enumerate() {
        if event.phase == Phase::Conversation && current != Some(event.conversation_id) {
            check(
                query == &queries[0] && query.len() == 2,
                format!(
                    "query {} opens a conversation but differs from the first",
                    i + 1
                ),
            );
            current = Some(event.conversation_id);
        }
    }

    for p in &out.plausible {
        let ok = fresh.validate(p).map(|r| r.is_pass()).unwrap_or(false);
        check(
            ok,
            format!("plausible patch {:?} does not re-validate", p.text),
        );
    }
    let normal: HashSet<String> = out
        .plausible
        .iter()
        .map(|p| normalize_patch(&p.text))
        .collect();
    check(
        normal.len() == out.plausible.len(),
        "duplicate plausible patches".into(),
    );

    let recomputed = compute_cost(&out.ledger, config.cost_rate_per_1k);
    check(
        (out.ledger.dollars - recomputed).abs() < 1e-12,
        format!("dollars {} != {recomputed}", out.ledger.dollars),
    );
    let prompt: u64 = out.events.iter().map(|e| e.prompt_tokens).sum();
    let completion: u64 = out.events.iter().map(|e| e.completion_tokens).sum();
    check(
        prompt == out.ledger.total_prompt_tokens
            && completion == out.ledger.total_completion_tokens,
        "event tokens do not sum to the ledger".into(),
    );

    let first_pass = out
        .events
        .iter()
        .position(|e| e.verdict == EventVerdict::Pass);
    if let Some(alt) = out
        .events
        .iter()
        .position(|e| e.phase == Phase::Alternative)
    {
        check(
            first_pass.is_some_and(|p| p < alt),
            "alternative query before first pass".into(),
        );
    }
    bad
}
