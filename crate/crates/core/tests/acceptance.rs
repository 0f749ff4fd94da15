//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each, and exits
//! nonzero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{
    chat_body, fenced, fixtures, invariant_violations, real_validator, toy1_pool, toy1_validator,
    toy_corpus, toy_task, toy_tasks, Recording, StubServer,
};
use convrepair_core::llm::{scripted_oracle, HttpBackend, RuleMatch, ScriptRule};
use convrepair_core::prompt::STILL_FAILS;
use convrepair_core::{
    compute_cost, conversational_repair, normalize_patch, run_ablation, BackendConfig, BackendKind,
    CostLedger, EngineConfig, EventVerdict, FeedbackLevel, FeedbackVariant, InfraError,
    RepairOutcome, RepairTask, ScriptedBackend, Validator,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn script(name: &str) -> ScriptedBackend {
    scripted_oracle(&fixtures().join("scripts").join(name)).unwrap()
}

fn fresh_real(task: &RepairTask) -> Result<Box<dyn Validator>, InfraError> {
    let (dir, v) = real_validator(&task.bug);
    Ok(Box::new(Owned {
        _dir: dir,
        inner: v,
    }))
}

/// Keeps the temp workspace alive as long as its validator.
struct Owned<V> {
    _dir: tempfile::TempDir,
    inner: V,
}

impl<V: Validator> Validator for Owned<V> {
    fn validate(
        &mut self,
        p: &convrepair_core::Patch,
    ) -> Result<convrepair_core::ValidationResult, InfraError> {
        self.inner.validate(p)
    }
}

fn c1_algorithm_trace() -> Verdict {
    let start = Instant::now();
    let task = toy_task("toy-1");
    let backend = Recording::new(script("three-step.json"));
    let (_dir, mut validator) = real_validator(&task.bug);
    let config = EngineConfig {
        max_tries: 3,
        ..EngineConfig::default()
    };
    let out = conversational_repair(&task, &backend, &mut validator, &config).unwrap();
    let elapsed = start.elapsed();

    // hand trace: compile error -> diagnostics, original failure -> short sentence, pass
    ensure!(
        out.ledger.tries_used == 3,
        "tries_used = {}",
        out.ledger.tries_used
    );
    let got: Vec<_> = out
        .events
        .iter()
        .map(|e| (e.try_index, e.conversation_id, e.verdict))
        .collect();
    let want = [
        (1, 1, EventVerdict::CompileError),
        (2, 1, EventVerdict::TestFailure),
        (3, 1, EventVerdict::Pass),
    ];
    ensure!(got == want, "events {got:?}");
    let fb1 = out.events[0].feedback.clone().unwrap_or_default();
    ensure!(
        fb1.starts_with("The fixed version does not compile.") && fb1.contains("hihg"),
        "feedback 1: {fb1}"
    );
    ensure!(
        out.events[1].feedback.as_deref() == Some(STILL_FAILS),
        "feedback 2: {:?}",
        out.events[1].feedback
    );
    ensure!(out.events[2].feedback.is_none(), "feedback after pass");
    ensure!(
        out.plausible.len() == 1 && out.plausible[0].text == "        return high;",
        "plausible {:?}",
        out.plausible
    );
    let shapes: Vec<usize> = backend.queries().iter().map(Vec::len).collect();
    ensure!(shapes == [2, 4, 6], "query sizes {shapes:?}");
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!(
        "tries_used=3, feedback exact, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn c2_invariant_suite() -> Verdict {
    let start = Instant::now();
    let task = toy_task("toy-1");
    let replies = toy1_pool(&task);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let trials = 150;
    let mut plausible_runs = 0;
    for trial in 0..trials {
        let mut rules = Vec::new();
        for _ in 0..rng.random_range(0..4) {
            let matcher = match rng.random_range(0..3) {
                0 => RuleMatch {
                    turn: Some(rng.random_range(1..15)),
                    ..RuleMatch::default()
                },
                1 => RuleMatch {
                    contains: Some("does not compile".into()),
                    ..RuleMatch::default()
                },
                _ => RuleMatch {
                    contains: Some(STILL_FAILS.into()),
                    ..RuleMatch::default()
                },
            };
            let idx = rng.random_range(0..replies.len());
            rules.push(ScriptRule::reply(matcher, replies[idx].0.clone()));
        }
        let picks: Vec<String> = (0..rng.random_range(1..6))
            .map(|_| replies[rng.random_range(0..replies.len())].0.clone())
            .collect();
        rules.push(ScriptRule {
            matcher: RuleMatch::default(),
            reply: None,
            choices: Some(picks),
        });
        let backend = Recording::new(ScriptedBackend::new(rules).unwrap().with_seed(rng.random()));
        let config = EngineConfig {
            max_tries: rng.random_range(1..80),
            max_conv_length: rng.random_range(1..7),
            feedback_variant: FeedbackVariant {
                level: FeedbackLevel::ALL[rng.random_range(0..FeedbackLevel::ALL.len())],
            },
            ..EngineConfig::default()
        };
        let mut validator = toy1_validator(&task);
        let out = conversational_repair(&task, &backend, &mut validator, &config).unwrap();
        if !out.plausible.is_empty() {
            plausible_runs += 1;
        }
        let bad = invariant_violations(
            &out,
            &backend.queries(),
            &config,
            &mut toy1_validator(&task),
        );
        ensure!(bad.is_empty(), "trial {trial}: {bad:?}");
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "{trials} randomized scripts, {plausible_runs} with plausible patches, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn c3_degenerate_length() -> Verdict {
    let backend = Recording::new(script("never-fix.json"));
    let config = EngineConfig {
        max_tries: 8,
        max_conv_length: 1,
        ..EngineConfig::default()
    };
    let mut total = 0;
    for task in toy_tasks() {
        let before = backend.queries().len();
        let mut validator = fresh_real(&task).unwrap();
        let out = conversational_repair(&task, &backend, validator.as_mut(), &config).unwrap();
        let (system, initial) = task.render(&config.prompt_variant).unwrap();
        let queries = backend.queries();
        let mine = &queries[before..];
        ensure!(
            mine.len() == 8 && out.ledger.tries_used == 8,
            "{}: {} queries",
            task.bug.id,
            mine.len()
        );
        for q in mine {
            ensure!(
                q.len() == 2 && q[0].content == system.text && q[1].content == initial.text,
                "{}: a query differs from the initial prompt",
                task.bug.id
            );
        }
        let convs: Vec<_> = out.events.iter().map(|e| e.conversation_id).collect();
        ensure!(
            convs == (1..=8).collect::<Vec<_>>(),
            "{}: conversations {convs:?}",
            task.bug.id
        );
        total += mine.len();
    }
    Ok(format!(
        "{total} queries over 5 bugs, all byte-identical to the initial prompt"
    ))
}

fn length_grid(lengths: &[usize]) -> Vec<EngineConfig> {
    lengths
        .iter()
        .map(|&l| EngineConfig {
            label: format!("len{l}"),
            max_conv_length: l,
            ..EngineConfig::default()
        })
        .collect()
}

fn c4_length_trend() -> Verdict {
    let tasks = toy_tasks();
    let grid = length_grid(&[1, 2, 3]);
    let runs = run_ablation(&tasks, &script("feedback-aware.json"), &grid, fresh_real).unwrap();
    let counts: Vec<usize> = runs.iter().map(|r| r.row.bugs_plausible).collect();
    ensure!(
        runs.iter().all(|r| r.row.annotations.is_empty()),
        "annotations: {:?}",
        runs[0].row.annotations
    );
    ensure!(
        counts[0] == 0 && counts[1] >= 1 && counts[2] >= 1,
        "plausible by length {counts:?}"
    );

    let never = run_ablation(&tasks, &script("never-fix.json"), &grid, fresh_real).unwrap();
    for (i, task) in tasks.iter().enumerate() {
        let dollars: Vec<f64> = never.iter().map(|r| r.outcomes[i].ledger.dollars).collect();
        ensure!(
            dollars.windows(2).all(|w| w[0] <= w[1]),
            "{}: cost by length {dollars:?}",
            task.bug.id
        );
    }
    // the byte estimator is deterministic: a rerun bills the same tokens
    let again = run_ablation(&tasks, &script("never-fix.json"), &grid, fresh_real).unwrap();
    let same = never.iter().zip(&again).all(|(a, b)| {
        a.outcomes
            .iter()
            .zip(&b.outcomes)
            .all(|(x, y)| x.ledger == y.ledger)
    });
    ensure!(same, "never-fix ledgers differ across reruns");
    let means: Vec<String> = never
        .iter()
        .map(|r| format!("{:.4}", r.row.mean_dollars))
        .collect();
    Ok(format!(
        "plausible by length 1/2/3 = {counts:?}; never-fix mean $ = [{}]",
        means.join(", ")
    ))
}

fn c5_feedback_ordering() -> Verdict {
    let tasks = toy_tasks();
    let grid: Vec<EngineConfig> = [FeedbackLevel::BaseFeedback, FeedbackLevel::Dynamic]
        .into_iter()
        .map(|level| EngineConfig {
            label: level.to_string(),
            feedback_variant: FeedbackVariant { level },
            ..EngineConfig::default()
        })
        .collect();
    let runs = run_ablation(&tasks, &script("dynamic-keyed.json"), &grid, fresh_real).unwrap();
    let base = runs[0].row.bugs_plausible;
    let dynamic = runs[1].row.bugs_plausible;
    ensure!(dynamic >= base, "dynamic {dynamic} < base {base}");
    Ok(format!("BaseFeedback={base}, Dynamic={dynamic}"))
}

fn c6_cost_exactness() -> Verdict {
    let synthetic = CostLedger {
        total_prompt_tokens: 150_000,
        total_completion_tokens: 60_000,
        tries_used: 0,
        dollars: 0.0,
    };
    let d = compute_cost(&synthetic, 0.002);
    ensure!((d - 0.42).abs() < 1e-12, "210k tokens priced at {d}");
    ensure!(format!("{d:.2}") == "0.42", "210k tokens printed as {d:.2}");

    let mut checked = 0;
    let backend = script("pool-search.json");
    for task in toy_tasks() {
        let mut validator = toy1_validator(&task);
        let config = EngineConfig::for_scenario(task.bug.scenario);
        let out = conversational_repair(&task, &backend, &mut validator, &config).unwrap();
        let tokens = out.ledger.total_prompt_tokens + out.ledger.total_completion_tokens;
        let expected = tokens as f64 / 1000.0 * 0.002;
        ensure!(
            (out.ledger.dollars - expected).abs() < 1e-12,
            "{}: {} vs {expected}",
            task.bug.id,
            out.ledger.dollars
        );
        checked += 1;
    }
    Ok(format!(
        "210000 tokens -> ${d:.2}; {checked} runs exact to 1e-12"
    ))
}

fn c7_end_to_end() -> Verdict {
    let start = Instant::now();
    let backend = script("pool-search.json");
    let mut outcomes: Vec<RepairOutcome> = Vec::new();
    for task in toy_tasks() {
        let (_dir, mut validator) = real_validator(&task.bug);
        let config = EngineConfig::for_scenario(task.bug.scenario);
        let out = conversational_repair(&task, &backend, &mut validator, &config).unwrap();
        ensure!(
            out.abort.is_none(),
            "{}: aborted {:?}",
            task.bug.id,
            out.abort
        );
        ensure!(
            out.ledger.tries_used <= config.max_tries,
            "{}: over budget",
            task.bug.id
        );
        // re-validate in a separate workspace
        let (_check_dir, mut check) = real_validator(&task.bug);
        for p in &out.plausible {
            ensure!(
                check.validate(p).unwrap().is_pass(),
                "{}: {:?} does not re-validate",
                task.bug.id,
                p.text
            );
        }
        outcomes.push(out);
    }
    let elapsed = start.elapsed();
    let counts: Vec<usize> = outcomes.iter().map(|o| o.plausible.len()).collect();
    ensure!(
        counts.iter().all(|&c| c >= 1),
        "plausible per bug {counts:?}"
    );
    ensure!(
        counts.iter().any(|&c| c >= 2),
        "no bug with 2+ plausible patches: {counts:?}"
    );
    for o in &outcomes {
        let mut seen = std::collections::HashSet::new();
        ensure!(
            o.plausible
                .iter()
                .all(|p| seen.insert(normalize_patch(&p.text))),
            "{}: duplicate plausible patches",
            o.bug_id
        );
    }
    let rejected: usize = outcomes
        .iter()
        .map(|o| {
            o.events
                .iter()
                .filter(|e| e.verdict == EventVerdict::Duplicate)
                .count()
        })
        .sum();
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!(
        "plausible per bug {counts:?}, {rejected} duplicates rejected, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn c8_http_conformance() -> Verdict {
    let declared = [(311u64, 17u64), (402, 23), (515, 9)];
    let replies = [
        fenced("        return hihg;"),
        fenced("        return value;"),
        fenced("        return high;"),
    ];
    let stub = StubServer::start(
        declared
            .iter()
            .zip(&replies)
            .map(|(&(p, c), r)| (200, chat_body(r, p, c)))
            .collect(),
    );
    std::env::set_var("CONVREPAIR_ACCEPTANCE_KEY", "sk-acceptance");
    let backend = HttpBackend::new(BackendConfig {
        kind: BackendKind::Http,
        endpoint: stub.url.clone(),
        api_key_env: "CONVREPAIR_ACCEPTANCE_KEY".into(),
        backoff_ms: 1,
        ..BackendConfig::default()
    })
    .unwrap();
    let recording = Recording::new(backend);
    let task = toy_task("toy-1");
    let mut validator = toy1_validator(&task);
    let config = EngineConfig {
        max_tries: 3,
        ..EngineConfig::default()
    };
    let out = conversational_repair(&task, &recording, &mut validator, &config).unwrap();

    let want_prompt: u64 = declared.iter().map(|d| d.0).sum();
    let want_completion: u64 = declared.iter().map(|d| d.1).sum();
    ensure!(
        out.ledger.total_prompt_tokens == want_prompt
            && out.ledger.total_completion_tokens == want_completion,
        "ledger {:?} vs declared ({want_prompt}, {want_completion})",
        out.ledger
    );
    for (e, d) in out.events.iter().zip(&declared) {
        ensure!(
            (e.prompt_tokens, e.completion_tokens) == *d,
            "event tokens {:?}",
            e
        );
    }
    let expected_dollars = (want_prompt + want_completion) as f64 / 1000.0 * 0.002;
    ensure!(
        (out.ledger.dollars - expected_dollars).abs() < 1e-12,
        "dollars {}",
        out.ledger.dollars
    );

    let requests = stub.requests();
    ensure!(requests.len() == 3, "{} requests", requests.len());
    for (i, ((_, body), sent)) in requests.iter().zip(recording.queries()).enumerate() {
        let json: serde_json::Value = serde_json::from_str(body).map_err(|e| e.to_string())?;
        let msgs: Vec<convrepair_core::ChatMessage> =
            serde_json::from_value(json["messages"].clone()).map_err(|e| e.to_string())?;
        ensure!(
            msgs == sent,
            "request {} messages differ from what the engine sent",
            i + 1
        );
        ensure!(
            json["model"] == "gpt-3.5-turbo-0301",
            "model {}",
            json["model"]
        );
    }
    let patches: Vec<_> = out.events.iter().filter_map(|e| e.patch.clone()).collect();
    ensure!(
        patches
            == [
                "        return hihg;",
                "        return value;",
                "        return high;"
            ],
        "patches {patches:?}"
    );
    ensure!(out.plausible.len() == 1, "plausible {:?}", out.plausible);
    Ok(format!(
        "3 round trips, tokens {want_prompt}+{want_completion} match the stub exactly"
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("algorithm-trace equivalence", c1_algorithm_trace),
        ("budget/length invariant suite", c2_invariant_suite),
        ("degenerate-length equivalence", c3_degenerate_length),
        ("conversation-length trend", c4_length_trend),
        ("feedback-variant ordering", c5_feedback_ordering),
        ("cost exactness", c6_cost_exactness),
        ("end-to-end toy corpus", c7_end_to_end),
        ("HTTP backend conformance", c8_http_conformance),
    ];
    assert_eq!(toy_corpus().len(), 5);
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
