//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Cursor;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use ats_bias::audit::{emit_report, run_audit, AuditConfig, AuditReport, BackendKind, ReportFormat, RunEnv};
use ats_bias::client::{
    BiasInjection, Completion, HttpRequest, HttpResponse, PerGender, TokenObservation, Transport, TransportError,
};
use ats_bias::corpus::parse_profile;
use ats_bias::finetune::{
    build_dataset, build_records, bundled_va_statements, emit_dataset, interleave_va, load_dataset,
    InterleaveConfig, RecordFormat, RecordKind,
};
use ats_bias::lexicon::{bundled_sources, Lexicon, LexiconConfig, MatchRule, SourceList};
use ats_bias::metrics::{
    score_iteration, score_profile, score_streams, CleanedStream, CleaningConfig, NbMode, ScoringConfig,
};
use ats_bias::prompting::{build_prompt, load_annotations, parse_response, render_profile_block, ExemplarAnnotation};
use ats_bias::stats::{t_test_ind, Variance};
use ats_bias::synth::synthetic_profiles;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// Criterion 1

const BIASED: &[&str] = &["gentle", "warm", "strong", "loyal", "brave", "honest", "active", "sympathetic"];
const NEUTRAL: &[&str] = &["table", "river", "blue", "pencil", "seven", "chair", "cloud", "engine", "garden", "lamp"];

/// The formula evaluated directly over raw position lists, with bias
/// decided by set membership.
fn brute_force(iterations: &[Vec<(&str, f64, Vec<(&str, f64)>)>], biased: &HashSet<&str>, raw_k: Option<usize>) -> f64 {
    let mut total = 0.0;
    for positions in iterations {
        let n_a = positions.len();
        let n_b = match raw_k {
            Some(k) => k * n_a,
            None => positions.iter().map(|p| p.2.len()).sum(),
        };
        if n_a + n_b == 0 {
            continue;
        }
        let visible: f64 = positions.iter().filter(|p| biased.contains(p.0)).map(|p| p.1.exp()).sum();
        let alternates: f64 = positions
            .iter()
            .flat_map(|p| p.2.iter())
            .filter(|a| biased.contains(a.0))
            .map(|a| a.1.exp())
            .sum();
        total += (visible + alternates) / (n_a + n_b) as f64;
    }
    total
}

fn scoring_oracle() -> Outcome {
    let start = Instant::now();
    let text: String = BIASED.iter().map(|w| format!("{w},f\n")).collect();
    let lex = Lexicon::build(
        &[SourceList::parse("oracle", &text).map_err(|e| e.to_string())?],
        &LexiconConfig {
            drop_words: BTreeSet::new(),
            job_exclusions: Default::default(),
            min_substring_len: 4,
        },
    )
    .map_err(|e| e.to_string())?;
    let biased: HashSet<&str> = BIASED.iter().copied().collect();
    let matcher = lex.unrestricted();
    for w in BIASED.iter().chain(NEUTRAL) {
        ensure!(matcher.is_biased(w).is_some() == biased.contains(w), "vocabulary word {w} misclassified");
    }

    let vocab: Vec<&str> = BIASED.iter().chain(NEUTRAL).copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut streams_checked = 0;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let k = rng.random_range(0..=5);
        let iterations: Vec<Vec<(&str, f64, Vec<(&str, f64)>)>> = (0..rng.random_range(1..=3))
            .map(|_| {
                (0..rng.random_range(0..=50))
                    .map(|_| {
                        let alts = (0..rng.random_range(0..=k))
                            .map(|_| (*vocab.choose(&mut rng).unwrap(), rng.random_range(-12.0..0.0)))
                            .collect();
                        (*vocab.choose(&mut rng).unwrap(), rng.random_range(-6.0..0.0), alts)
                    })
                    .collect()
            })
            .collect();
        streams_checked += iterations.len();

        let streams: Vec<CleanedStream> = iterations
            .iter()
            .map(|positions| CleanedStream {
                visible: positions.iter().map(|p| (p.0.to_string(), p.1)).collect(),
                alternates_per_position: positions
                    .iter()
                    .map(|p| p.2.iter().map(|a| (a.0.to_string(), a.1)).collect())
                    .collect(),
            })
            .collect();
        // The same tokens as raw completions, each visible token followed by
        // punctuation and a number that cleaning must remove.
        let completions: Vec<Completion> = iterations
            .iter()
            .map(|positions| {
                let mut tokens = Vec::new();
                for (w, lp, alts) in positions {
                    tokens.push(TokenObservation {
                        token: format!(" {}", w.to_uppercase()),
                        logprob: *lp,
                        alternates: alts.iter().map(|(a, l)| (format!(" {a}"), *l)).collect(),
                    });
                    tokens.push(TokenObservation {
                        token: ",".into(),
                        logprob: -0.1,
                        alternates: vec![(" gentle".into(), -1.0)],
                    });
                    tokens.push(TokenObservation {
                        token: " 42".into(),
                        logprob: -0.2,
                        alternates: vec![],
                    });
                }
                let text = tokens.iter().map(|t| t.token.as_str()).collect();
                Completion { text, tokens }
            })
            .collect();

        let retained = ScoringConfig::default();
        let raw = ScoringConfig {
            nb_mode: NbMode::RawK,
            k,
            ..ScoringConfig::default()
        };
        let expect = brute_force(&iterations, &biased, None);
        let expect_raw = brute_force(&iterations, &biased, Some(k));
        let from_streams = score_streams(&streams, &lex, "", &retained).map_err(|e| e.to_string())?.s;
        let from_completions = score_profile(&completions, &lex, "", &CleaningConfig::default(), &retained)
            .map_err(|e| e.to_string())?
            .s;
        let from_raw = score_streams(&streams, &lex, "", &raw).map_err(|e| e.to_string())?.s;
        for (got, want) in [(from_streams, expect), (from_completions, expect), (from_raw, expect_raw)] {
            worst = worst.max((got - want).abs());
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    ensure!(streams_checked >= 1000, "only {streams_checked} streams");
    ensure!(worst <= 1e-12, "max deviation {worst:e}");
    ensure!(elapsed < 5.0, "took {elapsed:.2}s");
    Ok(format!("{streams_checked} streams, max deviation {worst:.1e}, {elapsed:.2}s"))
}

// Criterion 2

fn worked_case() -> Outcome {
    let lex = Lexicon::build(
        &[SourceList::parse("w", "gentle,f\nwarm,f\n").map_err(|e| e.to_string())?],
        &LexiconConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let cfg = ScoringConfig::default();
    let stream = |positions: &[(&str, f64, &[(&str, f64)])]| CleanedStream {
        visible: positions.iter().map(|p| (p.0.to_string(), p.1.ln())).collect(),
        alternates_per_position: positions
            .iter()
            .map(|p| p.2.iter().map(|a| (a.0.to_string(), a.1.ln())).collect())
            .collect(),
    };
    let mixed = stream(&[("gentle", 0.5, &[("table", 0.1)]), ("person", 0.4, &[("warm", 0.25)])]);
    let s = score_iteration(&mixed, &lex, "", &cfg);
    ensure!(s == 0.1875, "two-token case gave {s}");
    let zero = score_iteration(&stream(&[("person", 0.9, &[("table", 0.1)])]), &lex, "", &cfg);
    ensure!(zero == 0.0, "unbiased stream gave {zero}");
    let one = score_iteration(&stream(&[("gentle", 1.0, &[])]), &lex, "", &cfg);
    ensure!(one == 1.0, "single certain biased token gave {one}");
    Ok("S = 0.1875, boundaries 0 and 1 exact".into())
}

// Criterion 3

#[derive(serde::Deserialize)]
struct TCase {
    a: Vec<f64>,
    b: Vec<f64>,
    t: f64,
    p: f64,
}

fn t_test_grid() -> Outcome {
    let cases: Vec<TCase> =
        serde_json::from_str(include_str!("data/ttest_reference.json")).map_err(|e| e.to_string())?;
    ensure!(cases.len() == 50, "grid has {} cases", cases.len());
    let mut worst = 0.0f64;
    for (i, c) in cases.iter().enumerate() {
        let r = t_test_ind(&c.a, &c.b, Variance::Pooled).map_err(|e| format!("case {i}: {e}"))?;
        worst = worst.max((r.t - c.t).abs()).max((r.p - c.p).abs());
    }
    ensure!(worst < 1e-6, "max deviation {worst:e}");

    let r = t_test_ind(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0], Variance::Pooled).map_err(|e| e.to_string())?;
    // Two independent implementations agree on 0.2878641 for this p.
    ensure!(
        (r.t - -1.224745).abs() < 1e-6 && (r.p - 0.287864).abs() < 1e-6,
        "[1,2,3] vs [2,3,4] gave t {} p {}",
        r.t,
        r.p
    );
    let same = t_test_ind(&[4.0, 5.0, 6.0], &[4.0, 5.0, 6.0], Variance::Pooled).map_err(|e| e.to_string())?;
    ensure!(same.t == 0.0 && same.p == 1.0, "identical samples gave ({}, {})", same.t, same.p);
    Ok(format!("50 cases, max deviation {worst:.1e}; t -1.224745 p 0.287864; identical (0, 1)"))
}

// Criterion 4

fn p_values(cfg: &AuditConfig, env: &RunEnv) -> Result<(f64, f64), String> {
    let r = run_audit(cfg, env).map_err(|e| e.to_string())?;
    let p = |s: &ats_bias::audit::MetricSection| s.t_test.as_ref().map_or(f64::NAN, |t| t.p);
    Ok((p(&r.ranking_bias), p(&r.content_bias)))
}

fn detection_power() -> Outcome {
    let start = Instant::now();
    let (_dir, mut cfg, env) = common::workspace(100);

    cfg.simulator.injection = BiasInjection {
        score_shift_by_gender: PerGender { male: 0.0, female: -1.0 },
        score_noise_sd: 1.5,
        biased_token_rate_by_gender: PerGender::both(0.1),
        seed: 0,
    };
    let mut ranking_hits = 0;
    for seed in 0..100 {
        cfg.seed = seed;
        ranking_hits += usize::from(p_values(&cfg, &env)?.0 < 0.05);
    }

    cfg.simulator.injection = BiasInjection {
        score_shift_by_gender: PerGender::both(0.0),
        score_noise_sd: 1.0,
        biased_token_rate_by_gender: PerGender { male: 0.1, female: 0.3 },
        seed: 0,
    };
    let mut content_hits = 0;
    for seed in 0..100 {
        cfg.seed = seed;
        content_hits += usize::from(p_values(&cfg, &env)?.1 < 0.05);
    }

    cfg.simulator.injection = BiasInjection::neutral(1.5, 0.1, 0);
    let (mut null_ranking, mut null_content) = (0, 0);
    for seed in 1000..1200 {
        cfg.seed = seed;
        let (pr, pc) = p_values(&cfg, &env)?;
        null_ranking += usize::from(pr < 0.05);
        null_content += usize::from(pc < 0.05);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let null_rate = |n: usize| n as f64 / 200.0;
    let detail = format!(
        "ranking {ranking_hits}/100, content {content_hits}/100, null rejection ranking {:.3} content {:.3}, {elapsed:.1}s",
        null_rate(null_ranking),
        null_rate(null_content)
    );
    ensure!(ranking_hits >= 95, "{detail}");
    ensure!(content_hits >= 95, "{detail}");
    for n in [null_ranking, null_content] {
        ensure!((0.01..=0.12).contains(&null_rate(n)), "{detail}");
    }
    ensure!(elapsed < 600.0, "{detail}");
    Ok(detail)
}

// Criterion 5

fn annotations(n: usize) -> Vec<ExemplarAnnotation> {
    synthetic_profiles(n.div_ceil(2), 0.5, "Teacher", 5)
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(i, p)| {
            let score = (i % 11) as f64;
            ExemplarAnnotation::new(p, "Teacher", score, format!("Reasoning number {i}.")).unwrap()
        })
        .collect()
}

fn dataset_construction() -> Outcome {
    let format = RecordFormat::default();
    let va = bundled_va_statements();
    let records = build_records(&annotations(100), 4, format).map_err(|e| e.to_string())?;
    ensure!(records.len() == 400, "100 x 4 gave {} records", records.len());

    let base = build_records(&annotations(90), 4, format).map_err(|e| e.to_string())?;
    ensure!(base.len() == 360, "90 x 4 gave {}", base.len());
    let cfg = InterleaveConfig {
        duplication_factor: 4,
        va_ratio: 0.10,
        seed: 9,
    };
    let mixed = interleave_va(&base, &va, &cfg, format).map_err(|e| e.to_string())?;
    let va_records = mixed.iter().filter(|r| r.kind == RecordKind::Va).count();
    ensure!(va_records == 40, "{va_records} VA records over 360");

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let emit = |name: &str, seed: u64| -> Result<Vec<u8>, String> {
        let cfg = InterleaveConfig { seed, ..cfg };
        let (records, meta) = build_dataset(&annotations(90), &va, &cfg, format).map_err(|e| e.to_string())?;
        let path = dir.path().join(name);
        emit_dataset(&records, &meta, &path).map_err(|e| e.to_string())?;
        fs::read(&path).map_err(|e| e.to_string())
    };
    let first = emit("a.jsonl", 9)?;
    let second = emit("b.jsonl", 9)?;
    let other = emit("c.jsonl", 10)?;
    ensure!(first == second, "same seed produced different bytes");
    ensure!(first != other, "different seeds produced identical files");

    let (loaded, meta) = load_dataset(&dir.path().join("a.jsonl")).map_err(|e| e.to_string())?;
    let key = |rs: &[ats_bias::finetune::FinetuneRecord]| {
        let mut v: Vec<String> = rs.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
        v.sort();
        v
    };
    ensure!(key(&loaded) == key(&mixed), "reloaded records differ");
    ensure!(meta.is_some_and(|m| m.va_records == 40), "meta sidecar missing or wrong");
    Ok("400 records, 40 VA over 360, round-trip identical, same seed byte-exact".into())
}

// Criterion 6

fn prompt_fidelity() -> Outcome {
    let (exemplars, errors) =
        load_annotations(Cursor::new(common::EXEMPLARS), "Teacher").map_err(|e| e.to_string())?;
    ensure!(errors.is_empty() && exemplars.len() == 2, "exemplars did not load");
    let candidate = parse_profile(include_str!("data/golden_candidate.json"))?;
    let prompt = build_prompt(&exemplars, &candidate, "Teacher").map_err(|e| e.to_string())?;
    ensure!(
        prompt == include_str!("data/golden_prompt.txt"),
        "prompt differs from the golden file"
    );

    let fixed = [
        (" 8/10\nReasoning: Strong fit.||", 8.0, "Strong fit."),
        (" 7.5/10\nReasoning: Good.||", 7.5, "Good."),
        (" 6 out of 10\nReasoning: Average.||", 6.0, "Average."),
        (" 3.25 out of 10\nReasoning: Weak match.||", 3.25, "Weak match."),
        ("Competence as Teacher: 9.5 / 10\nReasoning: Excellent.||", 9.5, "Excellent."),
    ];
    for (raw, score, reasoning) in fixed {
        let r = parse_response(raw, "Teacher").map_err(|e| format!("{raw:?}: {e}"))?;
        ensure!(r.score == score && r.reasoning == reasoning, "{raw:?} parsed as {} / {:?}", r.score, r.reasoning);
    }

    let words = ["she", "has", "relevant", "teaching", "experience", "but", "lacks", "a", "degree", "in", "music"];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let profiles = synthetic_profiles(50, 0.5, "Teacher", 6);
    for (i, p) in profiles.iter().enumerate() {
        let score = f64::from(rng.random_range(0..=100u32)) / 10.0;
        let n = rng.random_range(1..20);
        let reasoning: Vec<&str> = (0..n).map(|_| *words.choose(&mut rng).unwrap()).collect();
        let reasoning = reasoning.join(" ") + ".";
        let mut block = render_profile_block(p, "Teacher", Some((score, &reasoning)));
        if i % 2 == 1 {
            block = block.replace(" out of 10", "/10");
        }
        let r = parse_response(&block, "Teacher").map_err(|e| format!("profile {i}: {e}"))?;
        ensure!(r.score == score && r.reasoning == reasoning, "profile {i} round-trip gave {} / {:?}", r.score, r.reasoning);
    }
    Ok("golden prompt byte-equal, both score syntaxes parse, 100 round-trips".into())
}

// Criterion 7

fn lexicon_rules() -> Outcome {
    let lex = Lexicon::build(&bundled_sources(), &LexiconConfig::default()).map_err(|e| e.to_string())?;
    let ratio = lex.stats().female_male_ratio();
    ensure!((1.5..=2.5).contains(&ratio), "female:male ratio {ratio}");

    let undropped = Lexicon::build(
        &bundled_sources(),
        &LexiconConfig {
            drop_words: BTreeSet::new(),
            ..LexiconConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    ensure!(undropped.is_biased("working", "nurse").is_some(), "bundled lists lack \"working\"");
    ensure!(lex.is_biased("working", "nurse").is_none(), "\"working\" survives the drop list");

    // The bundled lists have no "education", so it comes from an extra list.
    let mut sources = bundled_sources();
    sources.push(SourceList::parse("extra", "education,f\n").map_err(|e| e.to_string())?);
    let extended = Lexicon::build(&sources, &LexiconConfig::default()).map_err(|e| e.to_string())?;
    ensure!(extended.is_biased("education", "doctor").is_some(), "\"education\" not in the lexicon");
    ensure!(extended.is_biased("education", "teacher").is_none(), "\"education\" matches for teacher");
    ensure!(
        lex.is_biased("children", "doctor").is_some() && lex.is_biased("children", "teacher").is_none(),
        "\"children\" not excluded for teacher"
    );

    // The bundled lists carry "self-confident" itself; without that entry
    // the word must still match through "confident".
    let mut drop_words = LexiconConfig::default().drop_words;
    drop_words.insert("self-confident".into());
    let no_compound = Lexicon::build(
        &bundled_sources(),
        &LexiconConfig {
            drop_words,
            ..LexiconConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let m = no_compound.is_biased("self-confident", "teacher").ok_or("\"self-confident\" not matched")?;
    ensure!(
        m.rule == MatchRule::Substring && m.entry.lemma == "confident",
        "matched by {:?} on {:?}",
        m.rule,
        m.entry.lemma
    );
    Ok(format!("ratio {ratio:.2}, \"working\" dropped, teacher exclusions, substring \"confident\""))
}

// Criterion 8

#[derive(Default)]
struct CountingTransport {
    calls: AtomicUsize,
}

impl Transport for CountingTransport {
    fn post(&self, _: &HttpRequest) -> Result<HttpResponse, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Err(TransportError::Io("network disabled".into()))
    }
}

fn emitted(r: &AuditReport, dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    let formats: BTreeSet<ReportFormat> = ReportFormat::ALL.into_iter().collect();
    emit_report(r, dir, &formats)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|p| fs::read(p).map_err(|e| e.to_string()))
        .collect()
}

fn replay_offline() -> Outcome {
    let (dir, mut cfg, env) = common::workspace(100);
    cfg.record = true;
    run_audit(&cfg, &env).map_err(|e| e.to_string())?;

    cfg.record = false;
    cfg.backend = BackendKind::Replay;
    let transport = Arc::new(CountingTransport::default());
    let env = env.with_transport(transport.clone());
    let a = run_audit(&cfg, &env).map_err(|e| e.to_string())?;
    let b = run_audit(&cfg, &env).map_err(|e| e.to_string())?;
    ensure!(a.tallies.profiles_audited == 200, "{} profiles audited", a.tallies.profiles_audited);
    let calls = transport.calls.load(Ordering::SeqCst);
    ensure!(calls == 0, "{calls} network calls");

    let first = emitted(&a, &dir.path().join("r1"))?;
    let second = emitted(&b, &dir.path().join("r2"))?;
    ensure!(first.len() == 4 && first == second, "reports differ between replays");

    let text = String::from_utf8(first[2].clone()).map_err(|e| e.to_string())?;
    let block = a.content_bias.statistics_block();
    ensure!(block.starts_with("Statistics :\n"), "block starts {:?}", &block[..block.len().min(20)]);
    let lines: Vec<&str> = block.lines().collect();
    let layout = lines.len() == 6
        && lines[1].starts_with("Mean Male = ")
        && lines[2].starts_with("Median Male =")
        && lines[3].starts_with("Mean Female = ")
        && lines[4].starts_with("Median Female = ")
        && lines[5].starts_with("Ttest_indResult(statistic=")
        && lines[5].contains(", pvalue=")
        && lines[5].ends_with(')');
    ensure!(layout, "block layout:\n{block}");
    ensure!(
        text.contains(&format!("Content Bias:\n\n{block}"))
            && text.contains("Ranking Bias:\n\nStatistics :\n")
            && text.contains("At a Cutoff Score of 7:\nMale: "),
        "text report layout"
    );
    Ok("200 profiles, 0 network calls, 4 report files byte-identical".into())
}

// Criterion 9

fn desk_runtime() -> Outcome {
    let (_dir, mut cfg, env) = common::workspace(100);
    cfg.iterations = 10;
    cfg.completion.temperature = 0.7;
    let start = Instant::now();
    let r = run_audit(&cfg, &env).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    ensure!(
        r.tallies.profiles_audited == 200 && r.metadata.iterations_effective == 10,
        "{} profiles, I = {}",
        r.tallies.profiles_audited,
        r.metadata.iterations_effective
    );
    ensure!(r.tallies.completions >= 2000, "{} completions", r.tallies.completions);
    ensure!(elapsed < 60.0, "took {elapsed:.1}s");
    Ok(format!("200 profiles x 10 iterations in {elapsed:.2}s"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("scoring oracle equivalence", scoring_oracle),
        ("worked scoring case", worked_case),
        ("t-test reference grid", t_test_grid),
        ("detection power", detection_power),
        ("dataset construction", dataset_construction),
        ("prompt fidelity", prompt_fidelity),
        ("lexicon rules", lexicon_rules),
        ("replay determinism, offline", replay_offline),
        ("desk-scale runtime", desk_runtime),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
