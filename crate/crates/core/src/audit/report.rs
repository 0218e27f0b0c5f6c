use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{io_err, AuditError, AuditReport, MetricSection, ReportFormat};
use crate::corpus::Gender;

/// `report-<first 12 hex digits of the config hash>.<ext>`.
pub fn report_file_name(config_hash: &str, format: ReportFormat) -> String {
    let short = &config_hash[..config_hash.len().min(12)];
    format!("report-{short}.{}", format.extension())
}

pub fn render_json(r: &AuditReport) -> String {
    serde_json::to_string_pretty(r).expect("report serializes") + "\n"
}

pub fn render_text(r: &AuditReport) -> String {
    let mut s = String::new();
    let m = &r.metadata;
    let _ = writeln!(s, "Job: {}", m.job);
    let _ = writeln!(s, "Backend: {} ({})", m.backend, m.model);
    let _ = writeln!(
        s,
        "Profiles: {} audited, {} iterations each",
        r.tallies.profiles_audited, m.iterations_effective
    );
    let _ = writeln!(s, "Config: {}", m.config_hash);
    let _ = writeln!(s, "\nContent Bias:\n\n{}", r.content_bias.statistics_block());
    let _ = writeln!(s, "Ranking Bias:\n\n{}", r.ranking_bias.statistics_block());
    let _ = writeln!(s, "Cutoff Analysis:\n\nAt a Cutoff Score of {}:", r.cutoff.cutoff);
    for (g, c) in &r.cutoff.per_gender {
        let _ = writeln!(
            s,
            "{}: {} pass, {} fail, pass rate {:.2}",
            g.title(),
            c.pass,
            c.fail,
            c.pass_rate
        );
    }
    if !r.warnings.is_empty() {
        let _ = writeln!(s, "\nWarnings:");
        for w in &r.warnings {
            let _ = writeln!(s, "- {w}");
        }
    }
    s
}

pub fn render_csv(r: &AuditReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "id",
        "gender",
        "in_role",
        "rank_score",
        "bias_score",
        "iterations",
        "parsed_iterations",
        "n_a_total",
        "n_b_total",
        "match_count",
        "flags",
    ])
    .expect("in-memory write");
    for p in &r.profiles {
        w.write_record([
            p.id.clone(),
            p.gender.to_string(),
            p.in_role.to_string(),
            p.rank_score.map(|s| s.to_string()).unwrap_or_default(),
            p.bias_score.to_string(),
            p.iteration_scores.len().to_string(),
            p.iteration_scores.iter().flatten().count().to_string(),
            p.n_a_total.to_string(),
            p.n_b_total.to_string(),
            p.match_count.to_string(),
            p.flags.join(";"),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

const MALE_COLOR: &str = "#1f77b4";
const FEMALE_COLOR: &str = "#ff7f0e";
const PANEL_W: f64 = 300.0;
const PANEL_H: f64 = 200.0;
const MARGIN: f64 = 40.0;

fn color(g: Gender) -> &'static str {
    match g {
        Gender::Male => MALE_COLOR,
        Gender::Female => FEMALE_COLOR,
    }
}

fn histogram_panel(s: &mut String, x0: f64, title: &str, section: &MetricSection) {
    let _ = writeln!(s, r#"<g transform="translate({x0:.1},{MARGIN:.1})">"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="-12" text-anchor="middle">{title}</text>"#, PANEL_W / 2.0);
    let _ = writeln!(
        s,
        r##"<rect x="0" y="0" width="{PANEL_W:.1}" height="{PANEL_H:.1}" fill="none" stroke="#444"/>"##
    );
    let max = section
        .histograms
        .values()
        .flat_map(|h| h.densities.iter().copied())
        .fold(0.0f64, f64::max);
    for (gi, (g, h)) in section.histograms.iter().enumerate() {
        let bins = h.densities.len().max(1) as f64;
        let slot = PANEL_W / bins;
        let bar = slot / 2.0;
        for (i, d) in h.densities.iter().enumerate() {
            if *d <= 0.0 || max <= 0.0 {
                continue;
            }
            let height = d / max * PANEL_H;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{bar:.2}" height="{height:.2}" fill="{}" fill-opacity="0.8"/>"#,
                i as f64 * slot + gi as f64 * bar,
                PANEL_H - height,
                color(*g)
            );
        }
        if let (Some(lo), Some(hi)) = (h.edges.first(), h.edges.last()) {
            if gi == 0 {
                let _ = writeln!(s, r#"<text x="0" y="{:.1}" font-size="10">{lo}</text>"#, PANEL_H + 14.0);
                let _ = writeln!(
                    s,
                    r#"<text x="{PANEL_W:.1}" y="{:.1}" font-size="10" text-anchor="end">{hi}</text>"#,
                    PANEL_H + 14.0
                );
            }
        }
    }
    let _ = writeln!(s, "</g>");
}

fn cutoff_panel(s: &mut String, x0: f64, r: &AuditReport) {
    let _ = writeln!(s, r#"<g transform="translate({x0:.1},{MARGIN:.1})">"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="-12" text-anchor="middle">Pass rate at cutoff {}</text>"#,
        PANEL_W / 2.0,
        r.cutoff.cutoff
    );
    let _ = writeln!(
        s,
        r##"<rect x="0" y="0" width="{PANEL_W:.1}" height="{PANEL_H:.1}" fill="none" stroke="#444"/>"##
    );
    let n = r.cutoff.per_gender.len().max(1) as f64;
    let slot = PANEL_W / n;
    for (i, (g, c)) in r.cutoff.per_gender.iter().enumerate() {
        let height = c.pass_rate * PANEL_H;
        let x = i as f64 * slot + slot * 0.25;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{height:.2}" fill="{}"/>"#,
            PANEL_H - height,
            slot * 0.5,
            color(*g)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.1}" font-size="11" text-anchor="middle">{} {:.2}</text>"#,
            x + slot * 0.25,
            PANEL_H + 14.0,
            g.title(),
            c.pass_rate
        );
    }
    let _ = writeln!(s, "</g>");
}

/// Content and ranking histograms side by side, then the cutoff pass rates.
pub fn render_svg(r: &AuditReport) -> String {
    let width = 3.0 * PANEL_W + 4.0 * MARGIN;
    let height = PANEL_H + 2.0 * MARGIN + 20.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    histogram_panel(&mut s, MARGIN, "Bias score distribution", &r.content_bias);
    histogram_panel(&mut s, 2.0 * MARGIN + PANEL_W, "Rank score distribution", &r.ranking_bias);
    cutoff_panel(&mut s, 3.0 * MARGIN + 2.0 * PANEL_W, r);
    let legend_y = height - 8.0;
    for (i, g) in Gender::ALL.iter().enumerate() {
        let x = MARGIN + i as f64 * 90.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{legend_y:.1}">{}</text>"#,
            legend_y - 9.0,
            color(*g),
            x + 14.0,
            g.title()
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Write the requested formats into `dir`; returns the written paths in
/// format order.
pub fn emit_report(r: &AuditReport, dir: &Path, formats: &BTreeSet<ReportFormat>) -> Result<Vec<PathBuf>, AuditError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    for f in formats {
        let body = match f {
            ReportFormat::Json => render_json(r),
            ReportFormat::Csv => render_csv(r),
            ReportFormat::Text => render_text(r),
            ReportFormat::Svg => render_svg(r),
        };
        let path = dir.join(report_file_name(&r.metadata.config_hash, *f));
        fs::write(&path, body).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

pub fn read_report(path: &Path) -> Result<AuditReport, AuditError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| AuditError::Report {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
