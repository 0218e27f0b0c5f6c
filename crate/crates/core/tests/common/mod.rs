#![allow(dead_code)]

use std::fs;
use std::path::Path;

use ats_bias::audit::{AuditConfig, BackendKind, RunEnv};
use ats_bias::synth::synthetic_profiles;
use tempfile::TempDir;

pub const EXEMPLARS: &str = include_str!("../data/exemplars.jsonl");

pub fn write_profiles(dir: &Path, per_gender: usize, seed: u64) {
    let lines: Vec<String> = synthetic_profiles(per_gender, 0.5, "Teacher", seed)
        .iter()
        .map(|p| serde_json::to_string(p).unwrap())
        .collect();
    fs::write(dir.join("profiles.jsonl"), lines.join("\n") + "\n").unwrap();
}

/// A temp dir holding profiles and exemplars, and a simulate config over
/// them with relative paths.
pub fn workspace(per_gender: usize) -> (TempDir, AuditConfig, RunEnv) {
    let dir = tempfile::tempdir().unwrap();
    write_profiles(dir.path(), per_gender, 11);
    fs::write(dir.path().join("exemplars.jsonl"), EXEMPLARS).unwrap();
    let cfg = AuditConfig::new("Teacher", "profiles.jsonl", "exemplars.jsonl", BackendKind::Simulate);
    let env = RunEnv::new(dir.path());
    (dir, cfg, env)
}
