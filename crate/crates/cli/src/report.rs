//! `report <dirs...>`: merge verdicts from run directories without
//! recomputing anything.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nlwlab_core::harness::Verdict;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub dir: PathBuf,
    pub experiment: String,
    /// Canonical JSON of the parameters.
    pub parameters: String,
    pub pass: bool,
    /// First directory with the same experiment, parameters and statistics.
    pub duplicate_of: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    /// Directories whose verdict is missing or unreadable, with the reason.
    pub malformed: Vec<(PathBuf, String)>,
}

impl Report {
    /// True unless some verdict failed.
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

fn read_verdict(dir: &Path) -> Result<Verdict> {
    let path = dir.join("verdict.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn build_report(dirs: &[PathBuf]) -> Report {
    let mut report = Report::default();
    let mut seen: Vec<(String, PathBuf)> = Vec::new();
    for dir in dirs {
        match read_verdict(dir) {
            Ok(v) => {
                let parameters = v.parameters.to_string();
                let key = format!("{}\u{0}{}\u{0}{}", v.experiment, parameters, v.statistics);
                let duplicate_of = seen.iter().find(|(k, _)| *k == key).map(|(_, d)| d.clone());
                if duplicate_of.is_none() {
                    seen.push((key, dir.clone()));
                }
                report.rows.push(ReportRow {
                    dir: dir.clone(),
                    experiment: v.experiment,
                    parameters,
                    pass: v.pass,
                    duplicate_of,
                });
            }
            Err(e) => report.malformed.push((dir.clone(), format!("{e:#}"))),
        }
    }
    report
}

fn cell(text: &str) -> String {
    text.replace('|', "\\|")
}

pub fn render_markdown(report: &Report) -> String {
    let mut out = String::from("# Experiment summary\n\n");
    out.push_str(&format!(
        "Overall: {}\n\n",
        if report.pass() { "pass" } else { "FAIL" }
    ));
    out.push_str("| directory | experiment | pass | duplicate of | parameters |\n");
    out.push_str("|---|---|---|---|---|\n");
    for r in &report.rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} | `{}` |\n",
            cell(&r.dir.display().to_string()),
            r.experiment,
            if r.pass { "pass" } else { "FAIL" },
            r.duplicate_of
                .as_ref()
                .map(|d| cell(&d.display().to_string()))
                .unwrap_or_default(),
            cell(&r.parameters)
        ));
    }
    if !report.malformed.is_empty() {
        out.push_str("\n## Malformed\n\n");
        for (dir, why) in &report.malformed {
            out.push_str(&format!("- {}: {}\n", dir.display(), why));
        }
    }
    out
}

pub fn write_csv<W: std::io::Write>(report: &Report, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["directory", "experiment", "pass", "duplicate_of", "parameters"])?;
    for r in &report.rows {
        out.write_record([
            r.dir.display().to_string(),
            r.experiment.clone(),
            r.pass.to_string(),
            r.duplicate_of.as_ref().map(|d| d.display().to_string()).unwrap_or_default(),
            r.parameters.clone(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn write(dir: &Path, v: &Verdict) {
        fs::create_dir_all(dir).unwrap();
        fs::write(dir.join("verdict.json"), serde_json::to_string(v).unwrap()).unwrap();
    }

    fn verdict(pass: bool) -> Verdict {
        Verdict {
            experiment: "khintchine".into(),
            parameters: json!({"p_list": [2, 4], "n": 10}),
            statistics: json!({"slope": 0.4}),
            pass,
        }
    }

    #[test]
    fn empty_list_passes() {
        let r = build_report(&[]);
        assert!(r.rows.is_empty() && r.malformed.is_empty() && r.pass());
        assert!(render_markdown(&r).contains("Overall: pass"));
    }

    #[test]
    fn duplicates_malformed_and_failures() {
        let tmp = tempfile::tempdir().unwrap();
        let (a, b, c, d) = (
            tmp.path().join("a"),
            tmp.path().join("b"),
            tmp.path().join("c"),
            tmp.path().join("d"),
        );
        write(&a, &verdict(true));
        write(&b, &verdict(true));
        fs::create_dir_all(&c).unwrap();
        fs::write(c.join("verdict.json"), "{not json").unwrap();
        let mut failing = verdict(false);
        failing.statistics = json!({"slope": 0.9});
        write(&d, &failing);

        let r = build_report(&[a.clone(), b.clone()]);
        assert_eq!(r.rows[1].duplicate_of.as_ref(), Some(&a));
        assert!(r.rows[0].duplicate_of.is_none());
        assert!(r.pass());

        let r = build_report(&[a, b, c.clone(), d]);
        assert_eq!(r.malformed.len(), 1);
        assert_eq!(r.malformed[0].0, c);
        assert!(!r.pass());
        let md = render_markdown(&r);
        assert!(md.contains("Overall: FAIL") && md.contains("Malformed"));
        let mut buf = Vec::new();
        write_csv(&r, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }
}
