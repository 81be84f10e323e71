//! Acceptance run. One PASS/FAIL line per criterion; exits nonzero if any fails.

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use drp_core::config::PipelineConfig;
use drp_core::mock::{
    CheckerRule, MockCheckerTable, MockFixtures, MockProblem, MockScript, ScriptedCheck,
    ScriptedFailure, ScriptedReply,
};
use drp_core::pipeline::{Pipeline, PipelineStatus, Problem, RunReport, Soundness};
use drp_core::prover::{
    verify_batch, verify_task, AttemptBudget, CheckRequest, CheckResponse, CheckerWorker,
    Diagnostic, LemmaContext, MockWorker, ProofTask, ProverBackend, WorkerReply,
};
use drp_core::reasoner::{
    CandidateLemma, ClientError, Completion, CompletionRequest, MockModel, ModelClient,
    ModelHandle, Provenance, ReasonerConfig,
};
use drp_core::statement::{
    extract_declarations, extract_lemma_statements, mentions_sorry, parse_theorem_declaration,
    regex_matches, rename_theorem, ExtractionMode, Span,
};
use drp_core::store::{
    LemmaRecord, LemmaStatus, LemmaStore, PutOutcome, StoreError, Verification, ORACLE_STUB,
};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};

// Pinned limits.
const REGEX_CORPUS_SIZE: usize = 50;
const REGEX_TIME_LIMIT: Duration = Duration::from_secs(5);
const MIN_APPENDIX_DECLS: usize = 25;
const BUDGET_SCRIPTS: u32 = 1_000;
const SCHEDULING_TRIALS: usize = 200;
const PARALLELISM_LEVELS: [usize; 3] = [1, 4, 16];
const SORRY_FUZZ_CASES: usize = 10_000;
const E2E_TIME_LIMIT: Duration = Duration::from_secs(10);
const DATASET_RECORDS: usize = 1_000;
const PUT_OPERATIONS: usize = 10_000;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn appendix() -> Vec<(String, String)> {
    let mut files: Vec<_> = std::fs::read_dir(root().join("fixtures/appendix"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            (
                p.file_stem().unwrap().to_string_lossy().into_owned(),
                std::fs::read_to_string(&p).unwrap(),
            )
        })
        .collect()
}

// ---------------------------------------------------------------- 1

/// Leftmost, shortest, non-overlapping occurrences of
/// `theorem ` .. `:= by sorry`, written without the regex engine.
fn reference_matches(s: &str) -> Vec<(Span, Span)> {
    const OPEN: &str = "theorem ";
    const CLOSE: &str = ":= by sorry";
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(i) = s[pos..].find(OPEN) {
        let start = pos + i;
        let cap = start + OPEN.len();
        let Some(j) = s[cap..].find(CLOSE) else { break };
        let end = cap + j + CLOSE.len();
        out.push((Span::new(start, end), Span::new(cap, cap + j)));
        pos = end;
    }
    out
}

fn stubbed(source: &str) -> String {
    extract_declarations(source)
        .iter()
        .map(|d| format!("{} := by sorry\n\n", d.statement.raw().trim_end()))
        .collect()
}

/// (text, well formed)
fn regex_corpus() -> Vec<(String, bool)> {
    let mut corpus = Vec::new();
    for (_, text) in appendix() {
        corpus.push((stubbed(&text), true));
        corpus.push((text, false));
    }
    for id in ["imo_2019_p1", "adversarial_nested"] {
        let p = root().join(format!("fixtures/mock/{id}/response_0.md"));
        corpus.push((std::fs::read_to_string(p).unwrap(), id == "imo_2019_p1"));
    }
    let hand: &[(&str, bool)] = &[
        ("", true),
        ("No lemmas today.", true),
        ("theorem t : 1 = 1 := by sorry", true),
        ("theorem t (x : ℕ) :\n  x = x := by sorry\n", true),
        ("theorem a : P := by sorry\ntheorem b : Q := by sorry\n", true),
        ("theorem a : P := by sorry theorem b : Q := by sorry", true),
        ("theorem nested (n : ℕ) (h : n = n := by sorry) : n + 0 = n := by sorry", false),
        ("theorem nested (n : ℕ) (h : n = n := by sorry) : n = n := by sorry\ntheorem b (m : ℕ) : m = m := by sorry\n", false),
        ("theorem a : 1 = 1 := by norm_num\ntheorem b : 2 = 2 := by sorry\n", false),
        ("theorem a : 1 = 1 := by\n  sorry\n", false),
        ("theorem a : 1 = 1 :=  by sorry", false),
        ("theorem a : 1 = 1 := by sorry -- later\n", true),
        ("-- theorem ghost : False := by sorry\ntheorem real : True := by sorry\n", false),
        ("/- theorem ghost : False := by sorry -/\ntheorem real : True := by sorry\n", false),
        ("theorem s (str : String := \":= by sorry\") : str = str := by sorry", false),
        ("The theorems below are useful.\ntheorem u : True := by sorry\n", true),
        ("lemma l : True := by sorry\ntheorem t : True := by sorry\n", true),
        ("theorem\tt : True := by sorry\ntheorem v : True := by sorry\n", true),
        ("theorem t : True := by sorry\r\ntheorem v : True := by sorry\r\n", true),
        ("theorem sq (x : ℝ) (hx : 0 < x) : 0 < x ^ 2 := by sorry", true),
        ("theorem fa (f : ℕ → ℕ) (h : ∀ n, f n = n) : f 3 = 3 := by sorry", true),
        ("theorem ex (h : ∃ p : ℕ × ℕ, p = ⟨1, 2⟩) : True := by sorry", true),
        ("theorem a : True := by sorryAx _\ntheorem b : True := by sorry\n", false),
        ("theorem a : True := by sorry_helper\n", false),
        ("```lean\ntheorem a : True := by sorry\n```\nand\n```lean\ntheorem b : True := by sorry\n```", true),
        ("theorem a.b.c : True := by sorry", true),
        ("theorem a' (x₀ : ℤ) : x₀ = x₀ := by sorry", true),
        ("theorem bad : := by sorry\ntheorem ok : True := by sorry\n", false),
        ("theorem : True := by sorry", false),
        ("theorem a (x : ℕ) : x = x\n-- no body\ntheorem b : True := by sorry\n", false),
        ("theorem t {α : Type*} [Group α] (g : α) : g * 1 = g := by sorry", true),
        ("theorem t (s : Finset ℕ) : ∑ i ∈ s, 0 = 0 := by sorry", true),
        ("theorem t (x : ℝ) (h : x ∈ Set.Icc (0:ℝ) 1) : x ≤ 1 := by sorry", true),
        ("theorem t : (fun x : ℕ => x) = id := by sorry\n\ntheorem u : (2 : ℕ) ≠ 3 := by sorry", true),
    ];
    corpus.extend(hand.iter().map(|(s, w)| (s.to_string(), *w)));
    corpus
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let corpus = regex_corpus();
    ensure(corpus.len() == REGEX_CORPUS_SIZE, || {
        format!(
            "corpus has {} cases, expected {REGEX_CORPUS_SIZE}",
            corpus.len()
        )
    })?;
    let mut agree = 0;
    let mut well_formed = 0;
    for (i, (text, wf)) in corpus.iter().enumerate() {
        let ours: Vec<(Span, Span)> = regex_matches(text)
            .into_iter()
            .map(|m| (m.span, m.capture))
            .collect();
        if ours == reference_matches(text) {
            agree += 1;
        } else {
            return Err(format!(
                "case {i}: published-pattern matches differ from the reference"
            ));
        }
        if *wf {
            well_formed += 1;
            let regex = extract_lemma_statements(text, ExtractionMode::Regex).len();
            let balanced = extract_lemma_statements(text, ExtractionMode::Balanced).len();
            ensure(balanced >= regex, || {
                format!("case {i}: balanced {balanced} < regex {regex}")
            })?;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < REGEX_TIME_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{agree}/{} cases agree with the reference matcher; balanced >= regex on {well_formed} well-formed cases; {:.2}s",
        corpus.len(),
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let mut count = 0;
    let mut header_text = String::new();
    let mut decl_text = String::new();
    for (file, text) in appendix() {
        let keyword_lines = text.lines().filter(|l| l.starts_with("theorem ")).count();
        let decls = extract_declarations(&text);
        ensure(decls.len() == keyword_lines, || {
            format!(
                "{file}: {} declarations parsed, {keyword_lines} in file",
                decls.len()
            )
        })?;
        for d in decls {
            let raw = d.statement.raw();
            let s = d.statement.span();
            ensure(&text[s.start..s.start + raw.len()] == raw, || {
                format!(
                    "{file}: {} raw is not a slice of the source",
                    d.statement.name()
                )
            })?;
            let again = parse_theorem_declaration(raw).map_err(|e| format!("{file}: {e}"))?;
            ensure(again.raw() == raw, || {
                format!("{file}: reparse changed {}", again.name())
            })?;
            let gap = &raw["theorem".len()
                ..raw.len() - again.name().len() - again.binders().len() - again.goal().len() - 1];
            let rebuilt = format!(
                "theorem{gap}{}{}:{}",
                again.name(),
                again.binders(),
                again.goal()
            );
            ensure(rebuilt == raw && gap.trim().is_empty(), || {
                format!("{file}: {} does not round-trip", again.name())
            })?;
            header_text.push_str(raw);
            decl_text.push_str(&text[s.start..s.end]);
            count += 1;
        }
    }
    ensure(count >= MIN_APPENDIX_DECLS, || {
        format!("only {count} declarations")
    })?;
    for c in ['ℝ', 'ℕ', '∀'] {
        ensure(header_text.contains(c), || format!("no header uses {c}"))?;
    }
    ensure(
        decl_text.contains('⟨') && decl_text.contains('⟩'),
        || "no declaration uses ⟨⟩".into(),
    )?;
    let anon = "theorem anon (h : ∃ p : ℕ × ℕ, p = ⟨1, 2⟩) (f : ℝ → ℝ) : ∀ x, f x = f x";
    let s = parse_theorem_declaration(anon).map_err(|e| e.to_string())?;
    ensure(s.raw() == anon && s.goal() == " ∀ x, f x = f x", || {
        "⟨⟩ binder mis-split".into()
    })?;
    Ok(format!(
        "{count} appendix declarations parsed, 100% raw round-trip; ⟨⟩ handled in bodies and binders"
    ))
}

// ---------------------------------------------------------------- 3

fn lemma_two() -> drp_core::statement::TheoremStatement {
    parse_theorem_declaration("theorem two (x : ℕ) : x + x = 2 * x").unwrap()
}

fn counted_model(fixtures: &Arc<MockFixtures>) -> (ModelHandle, Arc<MockModel>) {
    let mock = Arc::new(MockModel::new("mock-prover", fixtures.clone()));
    (
        ModelHandle {
            config: ReasonerConfig::default(),
            client: mock.clone(),
        },
        mock,
    )
}

#[derive(Debug, Clone)]
struct BudgetScript {
    k: u32,
    success: Option<u32>,
    /// Per attempt before the success: 0 plain wrong, 1 transport failure,
    /// 2 `by sorry` that the checker accepts.
    noise: Vec<u8>,
    latency_ms: u64,
}

fn budget_script() -> impl Strategy<Value = BudgetScript> {
    (
        1u32..=24,
        proptest::option::of(1u32..=30),
        proptest::collection::vec(0u8..3, 30),
        0u64..50,
    )
        .prop_map(|(k, success, noise, latency_ms)| BudgetScript {
            k,
            success,
            noise,
            latency_ms,
        })
}

fn run_budget_script(s: &BudgetScript) -> Result<(), TestCaseError> {
    let mut replies = Vec::new();
    let last = s.success.unwrap_or(30);
    for i in 1..=last {
        replies.push(if Some(i) == s.success {
            ScriptedReply::Text("by win".into())
        } else {
            match s.noise[(i - 1) as usize] {
                0 => ScriptedReply::Text(format!("by wrong_{i}")),
                1 => ScriptedReply::Failure {
                    fail: ScriptedFailure::Transport,
                },
                _ => ScriptedReply::Text("by sorry".into()),
            }
        });
    }
    let table = MockCheckerTable::default().rule(
        "two",
        CheckerRule {
            bodies: BTreeMap::from([
                (
                    "by win".to_string(),
                    ScriptedCheck::ok().after_ms(s.latency_ms),
                ),
                ("by sorry".to_string(), ScriptedCheck::ok()),
            ]),
            default: ScriptedCheck::error().after_ms(s.latency_ms),
            ..Default::default()
        },
    );
    let fixtures = Arc::new(MockFixtures::in_memory());
    let mut script = MockScript::default();
    script.proofs.insert("two".into(), replies);
    fixtures.insert(
        "p",
        MockProblem {
            responses: vec![],
            script,
        },
    );
    let (model, mock) = counted_model(&fixtures);
    let task = ProofTask::for_lemma("p", "import Mathlib", &lemma_two());
    let mut worker = MockWorker::new(Arc::new(table));
    let out = verify_task(&task, &AttemptBudget::with_k(s.k), &mut worker, &model);

    prop_assert!(out.attempts_used <= s.k);
    match s.success {
        Some(i) if i <= s.k => {
            prop_assert_eq!(out.attempts_used, i);
            prop_assert_eq!(out.status, LemmaStatus::Proved);
            prop_assert_eq!(out.winning_body.as_deref(), Some("by win"));
        }
        _ => {
            prop_assert_eq!(out.attempts_used, s.k);
            prop_assert_eq!(out.status, LemmaStatus::Unproved);
        }
    }
    prop_assert_eq!(mock.total_calls(), out.attempts_used);
    Ok(())
}

fn criterion_3() -> Outcome {
    let mut runner = TestRunner::new(PropConfig {
        cases: BUDGET_SCRIPTS,
        failure_persistence: None,
        ..PropConfig::default()
    });
    runner
        .run(&budget_script(), |s| run_budget_script(&s))
        .map_err(|e| e.to_string())?;

    ensure(AttemptBudget::default().k == 128, || {
        "AttemptBudget default k".into()
    })?;
    let config =
        PipelineConfig::load(None, Vec::<(String, String)>::new()).map_err(|e| e.to_string())?;
    ensure(config.stage2.k == 128, || {
        format!("config default k {}", config.stage2.k)
    })?;
    let fixtures = Arc::new(MockFixtures::in_memory());
    let (model, mock) = counted_model(&fixtures);
    let task = ProofTask::for_lemma("p", "import Mathlib", &lemma_two());
    let mut worker = MockWorker::new(Arc::new(MockCheckerTable::default()));
    let out = verify_task(&task, &config.stage2, &mut worker, &model);
    ensure(
        out.attempts_used == 128 && out.k == 128 && mock.total_calls() == 128,
        || format!("unset k ran {} attempts", out.attempts_used),
    )?;
    Ok(format!(
        "{BUDGET_SCRIPTS} randomized scripts: attempts <= k, first success index respected, calls == attempts; default k observed 128"
    ))
}

// ---------------------------------------------------------------- 4

fn candidate(src: &str, index: usize) -> CandidateLemma {
    let statement = parse_theorem_declaration(src).unwrap();
    CandidateLemma {
        canonical: statement.canonical(),
        provenance: Provenance {
            reasoner_model: "mock".into(),
            response_index: 0,
            round: 1,
            extraction_mode: ExtractionMode::Balanced,
            span: Span::new(index, index + 1),
        },
        statement,
    }
}

fn criterion_4() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed_0004);
    let mut proved_total = 0;
    for trial in 0..SCHEDULING_TRIALS {
        let n = rng.random_range(1..=12);
        let mut table = MockCheckerTable::default();
        let mut script = MockScript::default();
        let mut lemmas = Vec::new();
        for j in 0..n {
            let name = format!("l{j}");
            lemmas.push(candidate(
                &format!("theorem {name} (x : ℕ) : x + {j} = {j} + x"),
                j,
            ));
            let win = rng.random_range(1..=10u32);
            let mut replies: Vec<ScriptedReply> = (1..win)
                .map(|i| ScriptedReply::Text(format!("by try_{i}")))
                .collect();
            replies.push(ScriptedReply::Text("by ok".into()));
            script.proofs.insert(name.clone(), replies);
            table = table.rule(
                name,
                CheckerRule {
                    bodies: BTreeMap::from([(
                        "by ok".to_string(),
                        ScriptedCheck::ok().after_ms(rng.random_range(0..500)),
                    )]),
                    default: ScriptedCheck::error().after_ms(rng.random_range(0..500)),
                    ..Default::default()
                },
            );
        }
        let fixtures = Arc::new(MockFixtures::in_memory());
        fixtures.insert(
            "p",
            MockProblem {
                responses: vec![],
                script,
            },
        );
        let model = ModelHandle::from_config(ReasonerConfig::default(), &fixtures);
        let backend = ProverBackend::Mock(Arc::new(table));
        let ctx = LemmaContext {
            problem_id: "p".into(),
            preamble: "import Mathlib".into(),
        };
        let budget = AttemptBudget::with_k(rng.random_range(1..=8));
        let runs: Vec<_> = PARALLELISM_LEVELS
            .iter()
            .map(|&p| verify_batch(&lemmas, &ctx, &budget, &backend, &model, p))
            .collect();
        ensure(runs.windows(2).all(|w| w[0] == w[1]), || {
            format!("trial {trial}: outcomes depend on parallelism")
        })?;
        ensure(runs[0].len() == n, || {
            format!("trial {trial}: missing outcomes")
        })?;
        proved_total += runs[0]
            .values()
            .filter(|o| o.status == LemmaStatus::Proved)
            .count();
    }
    Ok(format!(
        "{SCHEDULING_TRIALS} trials identical across parallelism {PARALLELISM_LEVELS:?} ({proved_total} lemmas proved in total)"
    ))
}

// ---------------------------------------------------------------- 5

struct Echo(String);

impl ModelClient for Echo {
    fn model_id(&self) -> &str {
        "echo"
    }

    fn complete(&self, _: &CompletionRequest) -> Result<Completion, ClientError> {
        Ok(Completion {
            text: self.0.clone(),
            usage: None,
            latency: Duration::ZERO,
        })
    }
}

/// Says OK to everything. Reports the `sorry` warning a real checker prints
/// when a macro in the preamble expands to `sorry`.
struct Credulous;

impl CheckerWorker for Credulous {
    fn check(&mut self, request: &CheckRequest, _: Duration) -> WorkerReply {
        // the preamble defines the macro; only a use after it counts
        let decl = request.source.split_once("theorem").map_or("", |(_, d)| d);
        let messages = if decl.contains("cheat") {
            vec![Diagnostic::warning("declaration 'two' uses 'sorry'")]
        } else {
            vec![]
        };
        WorkerReply::Response {
            response: CheckResponse {
                id: request.id.clone(),
                ok: true,
                messages,
                elapsed_ms: 1,
            },
            elapsed: Duration::from_millis(1),
        }
    }

    fn restarts(&self) -> u32 {
        0
    }
}

const HIDDEN: &[&str] = &[
    "sorry",
    "admit",
    "exact sorry",
    "exact (sorry)",
    "exact sorryAx _ false",
    "exact (sorryAx (x + x = 2 * x) true)",
    "all_goals sorry",
    "first | sorry | rfl",
    "simp <;> sorry",
    "refine ⟨sorry, ?_⟩",
    "exact (by sorry : x + x = 2 * x)",
    "show x + x = 2 * x from sorry",
    "· sorry",
    "exact «sorry»",
    "exact _root_.sorryAx _",
    "(admit)",
    "try admit",
    "repeat sorry",
    "sorry/- done -/",
    "sorry--",
    "cheat",
    "exact cheat_lemma x",
];

const TACTICS: &[&str] = &[
    "intro h",
    "simp",
    "ring",
    "omega",
    "norm_num",
    "linarith",
    "nlinarith [sq_nonneg x]",
    "rfl",
    "constructor",
    "exact rfl",
    "rw [two_mul]",
    "have h₁ : x = x := rfl",
    "field_simp",
    "positivity",
];

const SEPARATORS: &[&str] = &[
    "\n  ",
    "; ",
    " <;> ",
    "\n\t",
    "\r\n  ",
    "\u{a0}",
    "\n  -- note\n  ",
    " /- c -/ ",
];

fn fuzz_body(rng: &mut StdRng, hidden: bool) -> String {
    let n = rng.random_range(0..6);
    let mut parts: Vec<String> = (0..n)
        .map(|_| TACTICS.choose(rng).unwrap().to_string())
        .collect();
    if hidden {
        let at = rng.random_range(0..=parts.len());
        parts.insert(at, HIDDEN.choose(rng).unwrap().to_string());
    }
    let mut body = String::from("by");
    for p in parts {
        body.push_str(SEPARATORS.choose(rng).unwrap());
        body.push_str(&p);
    }
    if body == "by" {
        body.push_str(" rfl");
    }
    body
}

fn criterion_5() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed_0005);
    let task = ProofTask::for_lemma(
        "p",
        "import Mathlib\nmacro \"cheat\" : tactic => `(tactic| sorry)",
        &lemma_two(),
    );
    let budget = AttemptBudget::with_k(1);
    let permissive = Arc::new(MockCheckerTable {
        default: ScriptedCheck::ok(),
        emit_sorry_warnings: false,
        ..Default::default()
    });
    let mut proved = 0;
    for i in 0..SORRY_FUZZ_CASES {
        let body = fuzz_body(&mut rng, true);
        let model = ModelHandle {
            config: ReasonerConfig::default(),
            client: Arc::new(Echo(body.clone())),
        };
        let out = if body.contains("cheat") || i % 2 == 0 {
            verify_task(&task, &budget, &mut Credulous, &model)
        } else {
            verify_task(
                &task,
                &budget,
                &mut MockWorker::new(permissive.clone()),
                &model,
            )
        };
        if out.status == LemmaStatus::Proved {
            proved += 1;
            eprintln!("  leaked: {body:?}");
        }
    }
    ensure(proved == 0, || {
        format!("{proved} of {SORRY_FUZZ_CASES} sorry bodies were PROVED")
    })?;

    // the gate is not rejecting everything
    let mut clean_proved = 0;
    for _ in 0..1_000 {
        let body = fuzz_body(&mut rng, false);
        assert!(!mentions_sorry(&body));
        let model = ModelHandle {
            config: ReasonerConfig::default(),
            client: Arc::new(Echo(body)),
        };
        if verify_task(&task, &budget, &mut Credulous, &model).status == LemmaStatus::Proved {
            clean_proved += 1;
        }
    }
    ensure(clean_proved == 1_000, || {
        format!("only {clean_proved}/1000 clean controls proved")
    })?;
    Ok(format!(
        "0 of {SORRY_FUZZ_CASES} hidden sorry/admit bodies PROVED; 1000/1000 clean controls PROVED"
    ))
}

// ---------------------------------------------------------------- 6

fn fixture_pipeline(config: PipelineConfig) -> Pipeline {
    let fixtures = Arc::new(MockFixtures::from_dir(root().join("fixtures/mock")));
    Pipeline::new(config, fixtures, Arc::new(LemmaStore::in_memory())).unwrap()
}

fn fixture_problem() -> Problem {
    Problem::load(&root().join("fixtures/problems/imo_2019_p1.lean"), None).unwrap()
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let problem = fixture_problem();
    let first = fixture_pipeline(PipelineConfig::default()).solve(&problem);
    let second = fixture_pipeline(PipelineConfig::default()).solve(&problem);
    let elapsed = start.elapsed();

    ensure(first.status == PipelineStatus::Solved, || {
        format!("status {}", first.status)
    })?;
    first.check_consistency()?;
    ensure(
        first.candidate_count == 6 && first.proved_count() == 4,
        || first.summary_line(),
    )?;
    let stage1: Vec<&str> = first.rounds[0]
        .candidates
        .iter()
        .filter(|c| c.status == Some(LemmaStatus::Proved))
        .map(|c| c.name.as_str())
        .collect();
    let s3 = first.stage3.as_ref().unwrap();
    ensure(
        s3.lemma_names
            .iter()
            .map(String::as_str)
            .eq(stage1.iter().copied()),
        || {
            format!(
                "final context order {:?} vs stage-1 order {stage1:?}",
                s3.lemma_names
            )
        },
    )?;
    let decls = extract_declarations(&s3.final_source);
    ensure(
        decls.len() == 5 && decls[4].statement.name() == "imo_2019_p1",
        || "final source does not hold exactly 4 lemmas plus the main theorem".into(),
    )?;
    let s3b = second.stage3.as_ref().unwrap();
    ensure(
        s3.final_source.as_bytes() == s3b.final_source.as_bytes(),
        || "re-run changed the final source".into(),
    )?;
    ensure(elapsed < E2E_TIME_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{}; lemmas {:?} in stage-1 order; re-run byte-identical; {:.2}s for two runs",
        first.summary_line(),
        s3.lemma_names,
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- 7

fn appendix_statements() -> Vec<drp_core::statement::TheoremStatement> {
    appendix()
        .iter()
        .flat_map(|(_, t)| extract_declarations(t))
        .map(|d| d.statement)
        .collect()
}

const UNICODE_NOISE: &[&str] = &[
    "α", "β₁", "ℝ", "ℤ", "ℚ", "√", "∑", "π", "ζ", "ℵ", "日本", "😀", "ﬁ", "Ω", "x̂",
];
// letters only: names must stay identifiers
const NAME_NOISE: &[&str] = &["α", "β₁", "π", "ζ", "Ω", "日本", "x'"];

fn random_record(
    rng: &mut StdRng,
    pool: &[drp_core::statement::TheoremStatement],
    i: usize,
) -> LemmaRecord {
    let base = pool.choose(rng).unwrap();
    let name = format!("lem_{i}_{}", NAME_NOISE.choose(rng).unwrap());
    let renamed = rename_theorem(base, &name).unwrap();
    let suffix: String = (0..rng.random_range(0..3))
        .map(|_| {
            format!(
                " ∧ {} = {}",
                UNICODE_NOISE.choose(rng).unwrap(),
                UNICODE_NOISE.choose(rng).unwrap()
            )
        })
        .collect();
    let stmt = parse_theorem_declaration(&format!("{}{suffix}", renamed.raw())).unwrap();
    let canonical = stmt.canonical();
    let status = *LemmaStatus::ALL.choose(rng).unwrap();
    let proof = match status {
        LemmaStatus::Proved => Some(format!(
            "by\n  simp [{}]\n  ring_nf -- «{}»",
            name,
            UNICODE_NOISE.choose(rng).unwrap()
        )),
        LemmaStatus::OracleSorry => Some(ORACLE_STUB.to_string()),
        _ => None,
    };
    LemmaRecord {
        problem_id: format!("imo_{}", rng.random_range(0..7)),
        name: canonical_name(&canonical.text),
        statement: canonical.text.clone(),
        digest: canonical.digest,
        status,
        proof,
        provenance: Provenance {
            reasoner_model: "mock-reasoner".into(),
            response_index: rng.random_range(0..4),
            round: rng.random_range(1..3),
            extraction_mode: ExtractionMode::Balanced,
            span: Span::new(0, stmt.raw().len()),
        },
        verification: Verification {
            prover_model: "mock-prover".into(),
            attempts_used: rng.random_range(1..=128),
            k: 128,
            per_attempt_timeout: 300.0,
            history: vec![],
            notes: rng
                .random_bool(0.2)
                .then(|| format!("note «{}»", UNICODE_NOISE.choose(rng).unwrap())),
        },
        created_at: Utc
            .timestamp_micros(1_760_000_000_000_000 + rng.random_range(0..5) * 1_000_000)
            .unwrap(),
    }
}

fn canonical_name(text: &str) -> String {
    parse_theorem_declaration(text).unwrap().name().to_string()
}

/// Sequential reference for the status lattice.
fn reference_put(
    model: &mut HashMap<(String, String), LemmaRecord>,
    r: &LemmaRecord,
) -> Result<PutOutcome, ()> {
    let key = (r.problem_id.clone(), r.digest.to_hex());
    let Some(old) = model.get(&key) else {
        model.insert(key, r.clone());
        return Ok(PutOutcome::Inserted);
    };
    let rank = |s: LemmaStatus| match s {
        LemmaStatus::Unproved => 0,
        LemmaStatus::ExhaustedDeadline => 1,
        LemmaStatus::Proved => 2,
        LemmaStatus::OracleSorry => -1,
    };
    if old == r {
        return Ok(PutOutcome::Unchanged);
    }
    let outcome = if r.status == LemmaStatus::OracleSorry {
        if old.status == LemmaStatus::Proved {
            return Err(());
        }
        PutOutcome::Replaced
    } else if old.status == LemmaStatus::OracleSorry || rank(r.status) > rank(old.status) {
        PutOutcome::Replaced
    } else if rank(r.status) == rank(old.status) {
        let mut kept = old.clone();
        kept.verification.history.push(r.event());
        model.insert(key, kept);
        return Ok(PutOutcome::Merged);
    } else {
        return Err(());
    };
    // the replaced record's history survives, followed by its own verdict
    let mut next = r.clone();
    next.verification.history = old.verification.history.clone();
    next.verification.history.push(old.event());
    next.verification
        .history
        .extend(r.verification.history.iter().cloned());
    model.insert(key, next);
    Ok(outcome)
}

fn criterion_7() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed_0007);
    let pool = appendix_statements();
    let store = LemmaStore::in_memory();
    let mut made = 0;
    while store.len() < DATASET_RECORDS {
        match store.put_record(random_record(&mut rng, &pool, made)) {
            Ok(_) | Err(StoreError::StatusDowngrade { .. }) => {}
            Err(e) => return Err(e.to_string()),
        }
        made += 1;
    }
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.jsonl");
    let second = dir.path().join("second.jsonl");
    let manifest = store.export_dataset(&first).map_err(|e| e.to_string())?;
    let again = LemmaStore::in_memory();
    let imported = again.import_dataset(&first).map_err(|e| e.to_string())?;
    again.export_dataset(&second).map_err(|e| e.to_string())?;
    let (a, b) = (
        std::fs::read(&first).unwrap(),
        std::fs::read(&second).unwrap(),
    );
    ensure(a == b, || "re-export differs".into())?;
    ensure(
        imported == DATASET_RECORDS && manifest.record_count == DATASET_RECORDS,
        || format!("imported {imported}"),
    )?;
    let text = String::from_utf8(a).unwrap();
    ensure(text.chars().any(|c| c as u32 > 0xFFFF), || {
        "no astral-plane characters exercised".into()
    })?;

    // monotone status under random interleavings
    let pool_records: Vec<LemmaRecord> =
        (0..40).map(|i| random_record(&mut rng, &pool, i)).collect();
    let store = LemmaStore::in_memory();
    let mut model = HashMap::new();
    let mut counts = BTreeMap::new();
    for op in 0..PUT_OPERATIONS {
        let mut r = pool_records.choose(&mut rng).unwrap().clone();
        r.problem_id = "p".into();
        r.status = *LemmaStatus::ALL.choose(&mut rng).unwrap();
        r.proof = match r.status {
            LemmaStatus::Proved => Some(format!("by simp -- {}", rng.random_range(0..3))),
            LemmaStatus::OracleSorry => Some(ORACLE_STUB.into()),
            _ => None,
        };
        r.verification.attempts_used = rng.random_range(1..=3);
        let before = store.get("p", &r.digest).map(|x| x.status);
        let expected = reference_put(&mut model, &r);
        let got = store.put(r.clone());
        match (&expected, &got) {
            (Ok(e), Ok((_, g))) if e == g => {}
            (Err(()), Err(StoreError::StatusDowngrade { .. })) => {}
            _ => {
                return Err(format!(
                    "op {op}: reference {expected:?} vs store {:?}",
                    got.map(|x| x.1)
                ))
            }
        }
        *counts
            .entry(format!("{:?}", got.map(|x| x.1).ok()))
            .or_insert(0) += 1;
        let stored = store.get("p", &r.digest);
        ensure(
            stored.as_ref() == model.get(&("p".to_string(), r.digest.to_hex())),
            || format!("op {op}: stored record diverged from the reference"),
        )?;
        let after = stored.map(|x| x.status);
        if before == Some(LemmaStatus::Proved) {
            ensure(after == Some(LemmaStatus::Proved), || {
                format!("op {op}: PROVED downgraded")
            })?;
        }
    }
    Ok(format!(
        "{DATASET_RECORDS} records byte-identical after export/import/export; {PUT_OPERATIONS} puts agree with the reference ({counts:?})"
    ))
}

// ---------------------------------------------------------------- 8

fn oracle_pair(
    config: &PipelineConfig,
    problem: &Problem,
    fixtures: MockFixtures,
) -> (RunReport, RunReport) {
    let fixtures = Arc::new(fixtures);
    let run = |oracle: bool| {
        let mut c = config.clone();
        c.run.oracle_sorry = oracle;
        Pipeline::new(c, fixtures.clone(), Arc::new(LemmaStore::in_memory()))
            .unwrap()
            .solve(problem)
    };
    (run(true), run(false))
}

fn criterion_8() -> Outcome {
    let problem = fixture_problem();
    let (with, without) = oracle_pair(
        &PipelineConfig::default(),
        &problem,
        MockFixtures::from_dir(root().join("fixtures/mock")),
    );
    let stubs = ["prop_cauchy_like", "cauchy_implies_linear_form"];
    let s3 = with
        .stage3
        .as_ref()
        .ok_or("oracle run has no final stage")?;
    ensure(
        s3.oracle_stubs == stubs && with.soundness == Soundness::NonSound,
        || {
            format!(
                "oracle run stubs {:?}, {:?}",
                s3.oracle_stubs, with.soundness
            )
        },
    )?;
    for name in stubs {
        let decl = extract_declarations(&s3.final_source)
            .into_iter()
            .find(|d| d.statement.name() == name)
            .ok_or_else(|| format!("{name} missing from oracle context"))?;
        ensure(decl.body.trim() == ORACLE_STUB, || {
            format!("{name} is not a stub")
        })?;
    }
    with.check_consistency()?;
    let plain = without
        .stage3
        .as_ref()
        .ok_or("plain run has no final stage")?;
    let decls = extract_declarations(&plain.final_source);
    ensure(
        plain.oracle_stubs.is_empty()
            && without.soundness == Soundness::Sound
            && decls[..decls.len() - 1]
                .iter()
                .all(|d| !mentions_sorry(&d.body)),
        || "plain run carries stubs".into(),
    )?;

    // a final proof that needs an unproved lemma: only the oracle run closes it
    let fixtures = MockFixtures::from_dir(root().join("fixtures/mock"));
    let mut needy = (*fixtures.problem("imo_2019_p1").unwrap()).clone();
    needy.script.proofs.insert(
        "imo_2019_p1".into(),
        vec![ScriptedReply::Text(
            "by\n  constructor\n  · intro h\n    exact cauchy_implies_linear_form f (prop_cauchy_like f h (prop_f_f_x f h) (prop_f_2x f h (prop_f_f_x f h)))\n  · rintro (h | ⟨c, h⟩)\n    exact step6_zero_function_is_solution f h\n    exact step7_linear_function_is_solution f c h".into(),
        )],
    );
    needy
        .script
        .checker
        .rules
        .get_mut("imo_2019_p1")
        .unwrap()
        .ok_if_uses
        .push("cauchy_implies_linear_form".into());
    let fx = MockFixtures::in_memory();
    fx.insert("imo_2019_p1", needy);
    let (with, without) = oracle_pair(&PipelineConfig::default(), &problem, fx);
    ensure(
        with.status == PipelineStatus::Solved && with.soundness == Soundness::NonSound,
        || format!("needy oracle run: {} {:?}", with.status, with.soundness),
    )?;
    ensure(
        without.status == PipelineStatus::Partial && without.soundness == Soundness::Sound,
        || {
            format!(
                "needy plain run: {} {:?}",
                without.status, without.soundness
            )
        },
    )?;
    Ok(format!(
        "oracle run stubs {stubs:?} and is NON-SOUND; plain run is stub-free and SOUND; needy final: {} vs {}",
        with.status, without.status
    ))
}

// ----------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 8] = [
        ("regex fidelity", criterion_1),
        ("appendix parse", criterion_2),
        ("budget semantics", criterion_3),
        ("scheduling determinism", criterion_4),
        ("soundness gate", criterion_5),
        ("end-to-end mock pipeline", criterion_6),
        ("dataset round-trip", criterion_7),
        ("oracle-sorry mode", criterion_8),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let label = format!("criterion {} ({name})", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS {label}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {label}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
