use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{AttributionTrial, CategoryAccuracy, MetricsReport};

pub const COMPARE_METRICS: [&str; 4] =
    ["accuracy", "macro_f1", "same_topic_miss_ratio", "mean_category_accuracy"];

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Validation(format!("serialize {}: {e}", path.display())))?;
    std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn csv_row(w: &mut csv::Writer<std::fs::File>, path: &Path, row: &[String]) -> Result<()> {
    w.write_record(row).map_err(|e| Error::Validation(format!("csv {}: {e}", path.display())))
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Model × metric table, one row per labeled report.
pub fn write_metrics_csv(path: &Path, rows: &[(String, &MetricsReport)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["model".to_string(), "rule".into(), "n_trials".into(), "n_authors".into()];
    header.extend(COMPARE_METRICS.iter().map(|m| m.to_string()));
    csv_row(&mut w, path, &header)?;
    for (label, r) in rows {
        csv_row(
            &mut w,
            path,
            &[
                label.clone(),
                r.rule.name().to_string(),
                r.n_trials.to_string(),
                r.n_authors.to_string(),
                fmt(r.accuracy),
                fmt(r.macro_f1),
                fmt(r.same_topic_miss_ratio),
                fmt(r.mean_category_accuracy),
            ],
        )?;
    }
    finish(w, path)
}

/// One row per topic group from the restricted per-category protocol.
pub fn write_per_category_csv(
    path: &Path,
    rows: &BTreeMap<String, CategoryAccuracy>,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    csv_row(
        &mut w,
        path,
        &["topic".into(), "accuracy".into(), "n_authors".into(), "flagged".into()],
    )?;
    for (topic, c) in rows {
        csv_row(
            &mut w,
            path,
            &[topic.clone(), fmt(c.accuracy), c.n_authors.to_string(), c.flagged.to_string()],
        )?;
    }
    finish(w, path)
}

#[derive(Clone, Debug, Serialize)]
pub struct TopkRow {
    pub k: usize,
    /// Authors actually evaluated (k clamped to the corpus size).
    pub n_authors: usize,
    pub clamped: bool,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub same_topic_miss_ratio: f64,
}

/// Grid over k for the diverse-author subsets.
pub fn write_topk_csv(path: &Path, rows: &[TopkRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    csv_row(
        &mut w,
        path,
        &[
            "k".into(),
            "n_authors".into(),
            "clamped".into(),
            "accuracy".into(),
            "macro_f1".into(),
            "same_topic_miss_ratio".into(),
        ],
    )?;
    for r in rows {
        csv_row(
            &mut w,
            path,
            &[
                r.k.to_string(),
                r.n_authors.to_string(),
                r.clamped.to_string(),
                fmt(r.accuracy),
                fmt(r.macro_f1),
                fmt(r.same_topic_miss_ratio),
            ],
        )?;
    }
    finish(w, path)
}

/// Per-query prediction dump for error analysis.
pub fn write_predictions_csv(path: &Path, trials: &[AttributionTrial]) -> Result<()> {
    let mut w = csv_writer(path)?;
    csv_row(
        &mut w,
        path,
        &[
            "trial".into(),
            "query_doc".into(),
            "true_author".into(),
            "predicted_author".into(),
            "nearest_doc".into(),
            "similarity".into(),
            "correct".into(),
        ],
    )?;
    for t in trials {
        for ((doc, truth), p) in t.query_doc_ids.iter().zip(&t.truths).zip(&t.predictions) {
            csv_row(
                &mut w,
                path,
                &[
                    t.trial_index.to_string(),
                    doc.clone(),
                    truth.clone(),
                    p.author.clone(),
                    p.nearest_doc.clone().unwrap_or_default(),
                    fmt(p.similarity),
                    (&p.author == truth).to_string(),
                ],
            )?;
        }
    }
    finish(w, path)
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareRow {
    pub model: String,
    pub values: Vec<f64>,
    /// Marks the per-metric maximum (ties all marked), the bold cell of the
    /// printed table.
    pub best: Vec<bool>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareTable {
    pub metrics: Vec<String>,
    pub rows: Vec<CompareRow>,
}

/// Side-by-side model × metric table. All reports must share the protocol
/// (rule and trial count).
pub fn compare_table(reports: &[(String, MetricsReport)]) -> Result<CompareTable> {
    if reports.is_empty() {
        return Err(Error::Validation("compare needs at least one report".into()));
    }
    let (rule, n_trials) = (reports[0].1.rule, reports[0].1.n_trials);
    for (label, r) in reports {
        if r.rule != rule || r.n_trials != n_trials {
            return Err(Error::Validation(format!(
                "report '{label}' protocol ({}, {} trials) differs from ({}, {} trials)",
                r.rule.name(),
                r.n_trials,
                rule.name(),
                n_trials
            )));
        }
    }
    let extract = |r: &MetricsReport| {
        vec![r.accuracy, r.macro_f1, r.same_topic_miss_ratio, r.mean_category_accuracy]
    };
    let all: Vec<Vec<f64>> = reports.iter().map(|(_, r)| extract(r)).collect();
    let maxima: Vec<f64> = (0..COMPARE_METRICS.len())
        .map(|m| all.iter().map(|v| v[m]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let rows = reports
        .iter()
        .zip(&all)
        .map(|((label, _), values)| CompareRow {
            model: label.clone(),
            best: values.iter().zip(&maxima).map(|(v, m)| v == m).collect(),
            values: values.clone(),
        })
        .collect();
    Ok(CompareTable { metrics: COMPARE_METRICS.iter().map(|s| s.to_string()).collect(), rows })
}

pub fn write_compare_csv(path: &Path, table: &CompareTable) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["model".to_string()];
    header.extend(table.metrics.iter().cloned());
    header.push("best_metrics".into());
    csv_row(&mut w, path, &header)?;
    for row in &table.rows {
        let mut rec = vec![row.model.clone()];
        rec.extend(row.values.iter().map(|v| fmt(*v)));
        let best: Vec<&str> = table
            .metrics
            .iter()
            .zip(&row.best)
            .filter(|(_, b)| **b)
            .map(|(m, _)| m.as_str())
            .collect();
        rec.push(best.join(";"));
        csv_row(&mut w, path, &rec)?;
    }
    finish(w, path)
}

pub fn render_compare(table: &CompareTable) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<24}", "model"));
    for m in &table.metrics {
        out.push_str(&format!(" {m:>24}"));
    }
    out.push('\n');
    for row in &table.rows {
        out.push_str(&format!("{:<24}", row.model));
        for (v, best) in row.values.iter().zip(&row.best) {
            let cell = if *best { format!("*{:.4}", v) } else { format!("{:.4}", v) };
            out.push_str(&format!(" {cell:>24}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, CorpusRecord};
    use crate::encoders::StyleEncoder;
    use crate::eval::{run_trials, AttributionRule};
    use crate::features::FeatureConfig;
    use std::collections::BTreeSet;

    fn small_run() -> crate::eval::EvalRun {
        let mut records = Vec::new();
        for a in 0..5 {
            for d in 0..3 {
                records.push(CorpusRecord {
                    doc_id: format!("a{a}d{d}"),
                    author: format!("auth{a}"),
                    topic: format!("t{}", a % 2),
                    text: format!("sample text number {d} flavored by writer {a} again {a}"),
                });
            }
        }
        let corpus = Corpus::from_records(records).unwrap();
        let feat = FeatureConfig { hash_dim: 256, ..FeatureConfig::default() };
        let enc = StyleEncoder::new(feat, 8, 4, 0.0, 3).unwrap();
        let authors: BTreeSet<String> = corpus.author_ids().cloned().collect();
        run_trials(&corpus, &authors, &enc, 4, 11, AttributionRule::NearestDoc).unwrap()
    }

    #[test]
    fn compare_marks_maxima_and_rejects_mixed_protocols() {
        let run = small_run();
        let mut better = run.report.clone();
        better.accuracy += 0.1;
        better.same_topic_miss_ratio += 0.2;
        let table = compare_table(&[
            ("base".to_string(), run.report.clone()),
            ("tuned".to_string(), better.clone()),
        ])
        .unwrap();
        assert_eq!(table.rows.len(), 2);
        // tuned wins accuracy and (numerically) miss ratio; ties elsewhere marked for both
        assert!(!table.rows[0].best[0] && table.rows[1].best[0]);
        assert!(!table.rows[0].best[2] && table.rows[1].best[2]);
        assert!(table.rows[0].best[1] && table.rows[1].best[1]);

        // single report → passthrough, best everywhere
        let single = compare_table(&[("only".to_string(), run.report.clone())]).unwrap();
        assert!(single.rows[0].best.iter().all(|b| *b));

        let mut other = run.report.clone();
        other.n_trials += 1;
        assert!(compare_table(&[
            ("a".to_string(), run.report.clone()),
            ("b".to_string(), other)
        ])
        .is_err());
    }

    #[test]
    fn prediction_dump_recomputes_report_accuracy() {
        let run = small_run();
        let dir = tempdir();
        let path = dir.join("preds.csv");
        write_predictions_csv(&path, &run.trials).unwrap();

        let mut rdr = csv::Reader::from_path(&path).unwrap();
        let mut per_trial: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec.unwrap();
            let t: u64 = rec[0].parse().unwrap();
            let correct = &rec[6] == "true";
            let e = per_trial.entry(t).or_default();
            e.0 += f64::from(correct);
            e.1 += 1.0;
        }
        assert_eq!(per_trial.len(), run.report.n_trials);
        let mean: f64 =
            per_trial.values().map(|(c, n)| c / n).sum::<f64>() / per_trial.len() as f64;
        assert!((mean - run.report.accuracy).abs() < 1e-12);
    }

    #[test]
    fn csv_files_round_trip_shapes() {
        let run = small_run();
        let dir = tempdir();
        let m = dir.join("metrics.csv");
        write_metrics_csv(&m, &[("x".to_string(), &run.report)]).unwrap();
        let lines = std::fs::read_to_string(&m).unwrap();
        assert_eq!(lines.lines().count(), 2);
        assert!(lines.starts_with("model,rule,n_trials,n_authors,accuracy"));

        let t = dir.join("topk.csv");
        write_topk_csv(
            &t,
            &[TopkRow {
                k: 5,
                n_authors: 5,
                clamped: false,
                accuracy: 0.5,
                macro_f1: 0.4,
                same_topic_miss_ratio: 0.25,
            }],
        )
        .unwrap();
        assert_eq!(std::fs::read_to_string(&t).unwrap().lines().count(), 2);
    }

    fn tempdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("detangle-report-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }
}
