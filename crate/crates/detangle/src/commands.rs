use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::config::EngineConfig;
use crate::corpus::{load_corpus, split_by_authors, Corpus};
use crate::encoders::{load_checkpoint, save_checkpoint, ContentEncoder, ContentSource, StyleEncoder};
use crate::error::{Error, Result};
use crate::eval::{per_category_accuracy, run_trials, topk_diverse_subset, AttributionRule};
use crate::gradcheck::run_gradcheck;
use crate::manifest::RunManifest;
use crate::report;
use crate::seeds;
use crate::synth::{entanglement_sweep, gen_corpus};
use crate::train::{fit_from, FitResult, TrainMode, WarmStart};

/// Resolved invocation context shared by every command.
pub struct Ctx {
    pub cfg: EngineConfig,
    pub config_path: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Ctx {
    fn manifest(&self, command: &str) -> Result<RunManifest> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        RunManifest::new(command, self.config_path.as_deref(), &self.cfg, self.cfg.seed)
    }
}

pub fn cmd_gen(ctx: &Ctx) -> Result<()> {
    let corpus_path = ctx.out_dir.join("corpus.jsonl");
    let truth_path = ctx.out_dir.join("ground_truth.json");
    let mut manifest = ctx.manifest("gen")?.output(&corpus_path).output(&truth_path);
    manifest.start(&ctx.out_dir)?;

    let (corpus, truth) = gen_corpus(&ctx.cfg.generator)?;
    corpus.save_jsonl(&corpus_path)?;
    report::write_json(&truth_path, &truth)?;
    manifest.finalize(&ctx.out_dir)?;

    println!(
        "gen: {} documents, {} authors, {} topics -> {}",
        corpus.n_docs(),
        corpus.n_authors(),
        ctx.cfg.generator.n_topics,
        corpus_path.display()
    );
    Ok(())
}

fn default_split(ctx: &Ctx, corpus: &Corpus) -> Result<crate::corpus::Split> {
    split_by_authors(corpus, (0.8, 0.1, 0.1), seeds::derive(ctx.cfg.train.seed, "split", &[]))
}

fn content_for(ctx: &Ctx, corpus: &Corpus, split: &crate::corpus::Split) -> Result<ContentEncoder> {
    let t = &ctx.cfg.train;
    match t.content {
        ContentSource::Fitted | ContentSource::Snapshot => {
            // must match fit's own initialization so that the frozen
            // reference and the trainable encoder coincide at step 0
            let init = StyleEncoder::new(
                ctx.cfg.features.clone(),
                t.hidden_dim,
                t.embed_dim,
                t.dropout_p,
                seeds::derive(t.seed, "init", &[]),
            )?;
            if t.content == ContentSource::Fitted {
                ContentEncoder::fit_to_style(&init, corpus, &ctx.cfg.features, t.content_ridge)
            } else {
                ContentEncoder::from_style_snapshot(&init, corpus)
            }
        }
        ContentSource::Tfidf => {
            let texts = corpus.texts_of(&split.train);
            ContentEncoder::new_tfidf(
                texts.iter().copied(),
                &ctx.cfg.features,
                t.embed_dim,
                seeds::derive(t.seed, "content", &[]),
            )
        }
    }
}

pub fn cmd_train(
    ctx: &Ctx,
    corpus_path: &Path,
    mode: TrainMode,
    resume: Option<&Path>,
    lr_grid: Option<&[f64]>,
) -> Result<()> {
    if mode == TrainMode::Frozen {
        return Err(Error::Config("frozen mode has nothing to train".into()));
    }
    let mut cfg = ctx.cfg.clone();
    cfg.train.mode = mode;
    let ckpt_path = ctx.out_dir.join("checkpoint.bin");
    let record_path = ctx.out_dir.join("run_record.json");
    let grid_path = ctx.out_dir.join("lr_grid.json");

    std::fs::create_dir_all(&ctx.out_dir).map_err(|e| Error::io(&ctx.out_dir, e))?;
    let mut manifest =
        RunManifest::new("train", ctx.config_path.as_deref(), &cfg, cfg.seed)?
            .input(corpus_path)
            .output(&ckpt_path)
            .output(&record_path);
    if let Some(r) = resume {
        manifest = manifest.input(r);
    }
    if lr_grid.is_some() {
        manifest = manifest.output(&grid_path);
    }
    manifest.start(&ctx.out_dir)?;

    let corpus = load_corpus(corpus_path)?;
    let split = default_split(ctx, &corpus)?;
    let content = if mode == TrainMode::Detangle {
        Some(content_for(ctx, &corpus, &split)?)
    } else {
        None
    };
    let warm = |()| -> Result<Option<WarmStart>> {
        Ok(match resume {
            None => None,
            Some(p) => {
                let c = load_checkpoint(p)?;
                Some(WarmStart { encoder: c.encoder, log_tau: c.log_tau, step: c.step })
            }
        })
    };

    let result: FitResult = match lr_grid {
        None => fit_from(&corpus, &split, &cfg.train, &cfg.features, content.as_ref(), warm(())?)?,
        Some(grid) => {
            if grid.is_empty() {
                return Err(Error::Config("empty learning-rate grid".into()));
            }
            let mut best: Option<FitResult> = None;
            let mut table = Vec::with_capacity(grid.len());
            for &lr in grid {
                let mut tc = cfg.train.clone();
                tc.lr = lr;
                let r = fit_from(&corpus, &split, &tc, &cfg.features, content.as_ref(), warm(())?)?;
                println!(
                    "train: lr {lr} -> best val accuracy {:.4} (epoch {})",
                    r.record.best_val_accuracy, r.record.best_epoch
                );
                table.push(serde_json::json!({
                    "lr": lr,
                    "best_val_accuracy": r.record.best_val_accuracy,
                    "best_epoch": r.record.best_epoch,
                }));
                // strict > keeps the first (smallest-lr) winner on ties
                if best.as_ref().is_none_or(|b| {
                    r.record.best_val_accuracy > b.record.best_val_accuracy
                }) {
                    best = Some(r);
                }
            }
            report::write_json(&grid_path, &table)?;
            best.unwrap()
        }
    };

    save_checkpoint(
        &ckpt_path,
        &result.encoder,
        result.tau.log_tau(),
        result.record.total_steps,
    )?;
    report::write_json(&record_path, &result.record)?;
    manifest.finalize(&ctx.out_dir)?;

    println!(
        "train: mode {} best val accuracy {:.4} at epoch {} ({} steps) -> {}",
        mode.name(),
        result.record.best_val_accuracy,
        result.record.best_epoch,
        result.record.total_steps,
        ckpt_path.display()
    );
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    Global,
    PerCategory,
    Topk,
}

impl FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Protocol> {
        match s {
            "global" => Ok(Protocol::Global),
            "per-category" => Ok(Protocol::PerCategory),
            "topk" => Ok(Protocol::Topk),
            other => Err(Error::Config(format!(
                "unknown protocol '{other}' (expected global, per-category, or topk)"
            ))),
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    ctx: &Ctx,
    corpus_path: &Path,
    checkpoint: Option<&Path>,
    frozen: bool,
    protocol: Protocol,
    k_override: Option<&[usize]>,
    rule_override: Option<AttributionRule>,
    dump_predictions: bool,
) -> Result<()> {
    let (encoder, label) = match (checkpoint, frozen) {
        (Some(p), false) => {
            let c = load_checkpoint(p)?;
            if c.encoder.feature_cfg != ctx.cfg.features {
                return Err(Error::Shape(
                    "checkpoint feature configuration differs from the engine config".into(),
                ));
            }
            let label = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "checkpoint".into());
            (c.encoder, label)
        }
        (None, true) => (
            StyleEncoder::new(
                ctx.cfg.features.clone(),
                ctx.cfg.train.hidden_dim,
                ctx.cfg.train.embed_dim,
                ctx.cfg.train.dropout_p,
                seeds::derive(ctx.cfg.train.seed, "init", &[]),
            )?,
            "frozen".to_string(),
        ),
        _ => {
            return Err(Error::Config(
                "eval needs exactly one of --checkpoint <path> or --frozen".into(),
            ))
        }
    };
    let rule = rule_override.unwrap_or(ctx.cfg.eval.rule);
    let eval_seed = seeds::derive(ctx.cfg.seed, "eval", &[]);

    let mut manifest = ctx.manifest("eval")?.input(corpus_path);
    if let Some(p) = checkpoint {
        manifest = manifest.input(p);
    }
    let corpus = load_corpus(corpus_path)?;
    let authors: BTreeSet<String> = corpus.author_ids().cloned().collect();

    match protocol {
        Protocol::Global => {
            let json_path = ctx.out_dir.join("metrics.json");
            let csv_path = ctx.out_dir.join("metrics.csv");
            let preds_path = ctx.out_dir.join("predictions.csv");
            manifest = manifest.output(&json_path).output(&csv_path);
            if dump_predictions {
                manifest = manifest.output(&preds_path);
            }
            manifest.start(&ctx.out_dir)?;

            let run = run_trials(&corpus, &authors, &encoder, ctx.cfg.eval.n_trials, eval_seed, rule)?;
            report::write_json(&json_path, &run.report)?;
            report::write_metrics_csv(&csv_path, &[(label.clone(), &run.report)])?;
            if dump_predictions {
                report::write_predictions_csv(&preds_path, &run.trials)?;
            }
            println!(
                "eval[{label}] global: accuracy {:.4} macro_f1 {:.4} same_topic_miss {:.4} ({} trials, rule {})",
                run.report.accuracy,
                run.report.macro_f1,
                run.report.same_topic_miss_ratio,
                run.report.n_trials,
                rule.name()
            );
        }
        Protocol::PerCategory => {
            let json_path = ctx.out_dir.join("per_category.json");
            let csv_path = ctx.out_dir.join("per_category.csv");
            manifest = manifest.output(&json_path).output(&csv_path);
            manifest.start(&ctx.out_dir)?;

            let map =
                per_category_accuracy(&corpus, &authors, &encoder, ctx.cfg.eval.n_trials, eval_seed, rule)?;
            report::write_json(&json_path, &map)?;
            report::write_per_category_csv(&csv_path, &map)?;
            for (topic, c) in &map {
                println!(
                    "eval[{label}] {topic}: accuracy {:.4} over {} authors{}",
                    c.accuracy,
                    c.n_authors,
                    if c.flagged { " (flagged: <2 authors)" } else { "" }
                );
            }
        }
        Protocol::Topk => {
            let json_path = ctx.out_dir.join("topk.json");
            let csv_path = ctx.out_dir.join("topk.csv");
            manifest = manifest.output(&json_path).output(&csv_path);
            manifest.start(&ctx.out_dir)?;

            let ks = k_override.unwrap_or(&ctx.cfg.eval.topk);
            let mut rows = Vec::with_capacity(ks.len());
            for &k in ks {
                let (subset, clamped) = topk_diverse_subset(&corpus, k)?;
                let subset: BTreeSet<String> = subset.into_iter().collect();
                let run = run_trials(
                    &corpus,
                    &subset,
                    &encoder,
                    ctx.cfg.eval.n_trials,
                    seeds::derive(eval_seed, "topk", &[k as u64]),
                    rule,
                )?;
                println!(
                    "eval[{label}] top-{k}{}: accuracy {:.4} macro_f1 {:.4}",
                    if clamped { " (clamped)" } else { "" },
                    run.report.accuracy,
                    run.report.macro_f1
                );
                rows.push(report::TopkRow {
                    k,
                    n_authors: subset.len(),
                    clamped,
                    accuracy: run.report.accuracy,
                    macro_f1: run.report.macro_f1,
                    same_topic_miss_ratio: run.report.same_topic_miss_ratio,
                });
            }
            report::write_json(&json_path, &rows)?;
            report::write_topk_csv(&csv_path, &rows)?;
        }
    }
    manifest.finalize(&ctx.out_dir)?;
    Ok(())
}

pub fn cmd_compare(ctx: &Ctx, report_paths: &[PathBuf]) -> Result<()> {
    if report_paths.is_empty() {
        return Err(Error::Config("compare needs at least one metrics JSON".into()));
    }
    let csv_path = ctx.out_dir.join("compare.csv");
    let mut manifest = ctx.manifest("compare")?.output(&csv_path);
    for p in report_paths {
        manifest = manifest.input(p);
    }
    manifest.start(&ctx.out_dir)?;

    let mut labeled = Vec::with_capacity(report_paths.len());
    for p in report_paths {
        let s = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let rep: crate::eval::MetricsReport = serde_json::from_str(&s)
            .map_err(|e| Error::Parse { path: p.clone(), line: 0, msg: e.to_string() })?;
        let label = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string());
        labeled.push((label, rep));
    }
    let table = report::compare_table(&labeled)?;
    report::write_compare_csv(&csv_path, &table)?;
    print!("{}", report::render_compare(&table));
    manifest.finalize(&ctx.out_dir)?;
    Ok(())
}

pub fn cmd_gradcheck(ctx: &Ctx) -> Result<()> {
    let json_path = ctx.out_dir.join("gradcheck.json");
    let mut manifest = ctx.manifest("gradcheck")?.output(&json_path);
    manifest.start(&ctx.out_dir)?;

    let rep = run_gradcheck(ctx.cfg.seed)?;
    for op in &rep.ops {
        println!(
            "gradcheck {:<24} max rel err {:>12.3e}  {}",
            op.op,
            op.max_rel_err,
            if op.passed { "pass" } else { "FAIL" }
        );
    }
    report::write_json(&json_path, &rep)?;
    manifest.finalize(&ctx.out_dir)?;
    if !rep.passed {
        let bad: Vec<&str> =
            rep.ops.iter().filter(|o| !o.passed).map(|o| o.op.as_str()).collect();
        return Err(Error::Numeric(format!("gradient check failed: {}", bad.join(", "))));
    }
    println!("gradcheck: all {} ops within {:.0e}", rep.ops.len(), rep.tolerance);
    Ok(())
}

pub fn cmd_sweep(ctx: &Ctx) -> Result<()> {
    let json_path = ctx.out_dir.join("sweep.json");
    let csv_path = ctx.out_dir.join("sweep.csv");
    let mut manifest = ctx.manifest("sweep")?.output(&json_path).output(&csv_path);
    manifest.start(&ctx.out_dir)?;

    let s = &ctx.cfg.sweep;
    let rep = entanglement_sweep(
        &ctx.cfg.generator,
        &ctx.cfg.train,
        &ctx.cfg.features,
        &s.levels,
        &s.modes,
        &s.seeds,
        s.eval_trials,
        s.rule,
    )?;
    report::write_json(&json_path, &rep)?;
    {
        let f = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        let mut w = csv::Writer::from_writer(f);
        w.write_record([
            "entanglement",
            "mode",
            "seed",
            "accuracy",
            "macro_f1",
            "same_topic_miss_ratio",
            "mean_category_accuracy",
            "oracle_accuracy",
            "best_epoch",
        ])
        .map_err(|e| Error::Validation(format!("csv {}: {e}", csv_path.display())))?;
        for r in &rep.rows {
            w.write_record([
                format!("{}", r.entanglement),
                r.mode.name().to_string(),
                r.seed.to_string(),
                format!("{:.6}", r.accuracy),
                format!("{:.6}", r.macro_f1),
                format!("{:.6}", r.same_topic_miss_ratio),
                format!("{:.6}", r.mean_category_accuracy),
                format!("{:.6}", r.oracle_accuracy),
                r.best_epoch.to_string(),
            ])
            .map_err(|e| Error::Validation(format!("csv {}: {e}", csv_path.display())))?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
    }

    // level × mode means across seeds
    for &level in &s.levels {
        for &mode in &s.modes {
            let vals: Vec<&crate::synth::SweepRow> = rep
                .rows
                .iter()
                .filter(|r| r.entanglement == level && r.mode == mode)
                .collect();
            let n = vals.len() as f64;
            let acc = vals.iter().map(|r| r.accuracy).sum::<f64>() / n;
            let miss = vals.iter().map(|r| r.same_topic_miss_ratio).sum::<f64>() / n;
            println!(
                "sweep entanglement {level:.2} mode {:<8} mean accuracy {acc:.4} mean same_topic_miss {miss:.4}",
                mode.name()
            );
        }
    }
    manifest.finalize(&ctx.out_dir)?;
    println!("sweep: {} rows -> {}", rep.rows.len(), csv_path.display());
    Ok(())
}
