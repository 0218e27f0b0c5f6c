mod common;

use std::collections::BTreeSet;
use std::fs;

use ats_bias::audit::{
    build_dataset, emit_report, read_report, render_csv, render_text, run_audit, AuditConfig, BackendKind,
    DatasetOptions, ReportFormat,
};
use ats_bias::corpus::Gender;
use ats_bias::finetune::{load_dataset, RecordKind};
use ats_bias::par::Execution;

#[test]
fn simulated_audit_produces_all_sections() {
    let (dir, mut cfg, env) = common::workspace(20);
    cfg.completion.temperature = 0.7;
    cfg.iterations = 3;
    let report = run_audit(&cfg, &env).unwrap();
    assert_eq!(report.profiles.len(), 40);
    assert_eq!(report.metadata.iterations_effective, 3);
    assert!(report.content_bias.t_test.is_some());
    assert!(report.ranking_bias.t_test.is_some());
    assert_eq!(report.cutoff.per_gender[&Gender::Male].pass + report.cutoff.per_gender[&Gender::Male].fail, 20);
    assert!(report.metadata.started_at.is_none());
    assert!(!report.has_warnings(), "{:?}", report.warnings);
    assert!(report.profiles.iter().all(|p| p.iteration_scores.len() == 3));

    let written = emit_report(&report, dir.path(), &cfg.formats).unwrap();
    assert_eq!(written.len(), 4);
    let json = written.iter().find(|p| p.extension().unwrap() == "json").unwrap();
    assert_eq!(read_report(json).unwrap(), report);
    let csv = render_csv(&report);
    assert_eq!(csv.lines().count(), 41);
    let text = render_text(&report);
    assert!(text.contains("\nStatistics :\nMean Male = "));
    assert!(text.contains("At a Cutoff Score of 7:"));
    let svg = fs::read_to_string(written.iter().find(|p| p.extension().unwrap() == "svg").unwrap()).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn execution_mode_does_not_change_report() {
    let (_dir, mut cfg, env) = common::workspace(15);
    cfg.completion.temperature = 0.7;
    cfg.iterations = 2;
    let par = run_audit(&cfg, &env.clone().with_execution(Execution::Parallel)).unwrap();
    let seq = run_audit(&cfg, &env.with_execution(Execution::Sequential)).unwrap();
    assert_eq!(serde_json::to_string(&par).unwrap(), serde_json::to_string(&seq).unwrap());
}

#[test]
fn injected_shift_lowers_female_pass_rate() {
    let (_dir, mut cfg, env) = common::workspace(100);
    cfg.simulator.injection.score_shift_by_gender.female = -1.5;
    cfg.simulator.injection.score_noise_sd = 1.0;
    let report = run_audit(&cfg, &env).unwrap();
    let c = &report.cutoff.per_gender;
    assert!(c[&Gender::Female].pass_rate < c[&Gender::Male].pass_rate);
    assert!(report.ranking_bias.t_test.unwrap().t > 0.0);
}

#[test]
fn empty_reasoning_is_flagged_degenerate() {
    let (_dir, mut cfg, env) = common::workspace(5);
    cfg.simulator.reasoning_words = 0;
    let report = run_audit(&cfg, &env).unwrap();
    assert_eq!(report.profiles.len(), 10);
    assert!(report.profiles.iter().all(|p| p.flags.contains(&"degenerate".to_string())));
    assert_eq!(report.tallies.degenerate_iterations, 10);
    assert!(report.profiles.iter().all(|p| p.bias_score == 0.0));
}

#[test]
fn unparseable_completions_are_flagged_not_dropped() {
    let (dir, mut cfg, env) = common::workspace(5);
    cfg.parse_retries = 0;
    cfg.record = true;
    run_audit(&cfg, &env).unwrap();
    // Corrupt two recorded replies so no score can be read from them.
    let mut corrupted = 0;
    for entry in fs::read_dir(dir.path().join("fixtures")).unwrap().take(2) {
        let path = entry.unwrap().path();
        let mut record: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        record["completion"]["text"] = " no idea".into();
        record["completion"]["tokens"] = serde_json::json!([{"token": " no idea", "logprob": -0.1, "alternates": []}]);
        fs::write(&path, serde_json::to_vec(&record).unwrap()).unwrap();
        corrupted += 1;
    }
    cfg.record = false;
    cfg.backend = BackendKind::Replay;
    let report = run_audit(&cfg, &env).unwrap();
    assert_eq!(report.profiles.len(), 10);
    assert_eq!(report.tallies.unparsed_iterations, corrupted);
    assert_eq!(report.tallies.unranked_profiles, corrupted);
    assert!(report.has_warnings());
    let unranked: Vec<_> = report.profiles.iter().filter(|p| p.rank_score.is_none()).collect();
    assert!(unranked.iter().all(|p| p.flags.contains(&"unranked".to_string())));
    let ranked: usize = report.ranking_bias.per_gender.values().flatten().map(|g| g.n).sum();
    assert_eq!(ranked, 10 - corrupted);
    let content: usize = report.content_bias.per_gender.values().flatten().map(|g| g.n).sum();
    assert_eq!(content, 10);
}

#[test]
fn retries_use_fresh_samples() {
    let (dir, mut cfg, env) = common::workspace(1);
    cfg.record = true;
    run_audit(&cfg, &env).unwrap();
    // Break the first reply of each profile and record a good reply under
    // the retry sample index.
    for entry in fs::read_dir(dir.path().join("fixtures")).unwrap() {
        let path = entry.unwrap().path();
        let mut record: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        let good = record.clone();
        record["completion"]["text"] = " unsure".into();
        record["completion"]["tokens"] = serde_json::json!([{"token": " unsure", "logprob": -0.1, "alternates": []}]);
        fs::write(&path, serde_json::to_vec(&record).unwrap()).unwrap();
        let mut retry: ats_bias::client::FixtureRecord = serde_json::from_value(good).unwrap();
        retry.request.sample = 1;
        ats_bias::client::FixtureStore::new(dir.path().join("fixtures"))
            .save(&retry.request, &retry.completion)
            .unwrap();
    }
    cfg.record = false;
    cfg.backend = BackendKind::Replay;
    let report = run_audit(&cfg, &env).unwrap();
    assert_eq!(report.tallies.retried_iterations, 2);
    assert_eq!(report.tallies.unparsed_iterations, 0);
    assert!(report.profiles.iter().all(|p| p.rank_score.is_some() && p.retries == 1));
}

#[test]
fn record_then_replay_is_byte_identical() {
    let (dir, mut cfg, env) = common::workspace(10);
    cfg.record = true;
    let recorded = run_audit(&cfg, &env).unwrap();
    assert_eq!(fs::read_dir(dir.path().join("fixtures")).unwrap().count(), 20);

    cfg.record = false;
    cfg.backend = BackendKind::Replay;
    let a = run_audit(&cfg, &env).unwrap();
    let b = run_audit(&cfg, &env).unwrap();
    assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    assert_eq!(a.profiles, recorded.profiles);
    assert_eq!(a.ranking_bias, recorded.ranking_bias);
}

#[test]
fn replay_miss_names_the_profile() {
    let (_dir, mut cfg, env) = common::workspace(2);
    cfg.backend = BackendKind::Replay;
    let err = run_audit(&cfg, &env).unwrap_err().to_string();
    assert!(err.contains("profile syn-0") && err.contains("no recorded fixture"), "{err}");
}

#[test]
fn missing_profiles_file_names_path() {
    let (_dir, mut cfg, env) = common::workspace(2);
    cfg.profiles = "nowhere.jsonl".into();
    let err = run_audit(&cfg, &env).unwrap_err().to_string();
    assert!(err.contains("nowhere.jsonl"), "{err}");
}

#[test]
fn bad_lines_become_warnings() {
    let (dir, cfg, env) = common::workspace(3);
    let path = dir.path().join("profiles.jsonl");
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("{not json}\n{\"name\": \"No Fields\", \"gender\": \"female\"}\n");
    fs::write(&path, text).unwrap();
    let report = run_audit(&cfg, &env).unwrap();
    assert_eq!(report.tallies.line_errors, 1);
    assert_eq!(report.tallies.invalid_profiles, 1);
    assert_eq!(report.profiles.len(), 6);
    assert!(report.has_warnings());
}

#[test]
fn balanced_sampling_from_config() {
    let (_dir, mut cfg, env) = common::workspace(30);
    cfg.sample = Some(ats_bias::audit::SampleOptions {
        in_role: 20,
        out_of_role: 20,
        gender_ratio: (1, 1),
        role_synonyms: vec![],
    });
    let report = run_audit(&cfg, &env).unwrap();
    assert_eq!(report.profiles.len(), 40);
    assert_eq!(report.profiles.iter().filter(|p| p.in_role).count(), 20);
    let ids: BTreeSet<&str> = report.profiles.iter().map(|p| p.id.as_str()).collect();
    assert_eq!(ids.len(), 40);
}

#[test]
fn dataset_from_config() {
    let (dir, mut cfg, env) = common::workspace(1);
    cfg.dataset = Some(DatasetOptions {
        annotations: "exemplars.jsonl".into(),
        va_statements: None,
        duplication_factor: 4,
        va_ratio: 0.2,
        leading_space: true,
        output: "out/train.jsonl".into(),
    });
    let out = build_dataset(&cfg, &env).unwrap();
    assert_eq!(out.meta.annotation_records, 8);
    assert_eq!(out.meta.va_records, 2);
    let (records, _) = load_dataset(&dir.path().join("out/train.jsonl")).unwrap();
    assert_eq!(records, out.records);
    assert_eq!(records.iter().filter(|r| r.kind == RecordKind::Va).count(), 2);
    assert!(out.sanity.in_role_mean.is_some() || out.sanity.out_of_role_mean.is_some());
}

#[test]
fn config_file_round_trip() {
    let (dir, _, _) = common::workspace(1);
    let path = dir.path().join("audit.toml");
    fs::write(
        &path,
        "job = \"Teacher\"\nprofiles = \"profiles.jsonl\"\nexemplars = \"exemplars.jsonl\"\nbackend = \"simulate\"\nformats = [\"text\"]\n",
    )
    .unwrap();
    let (cfg, base) = AuditConfig::load(&path).unwrap();
    assert_eq!(base, dir.path());
    assert_eq!(cfg.formats, BTreeSet::from([ReportFormat::Text]));
}
