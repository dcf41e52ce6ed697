use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{sample_batch_with, Corpus, Split};
use crate::diffgraph::Graph;
use crate::encoders::{ContentEncoder, ContentSource, StyleEncoder};
use crate::error::{Error, Result};
use crate::eval::{run_trials, AttributionRule};
use crate::features::FeatureConfig;
use crate::loss::{detangle_infonce, plain_infonce, LossOptions, Temperature};
use crate::mat::Mat;
use crate::seeds;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Detangle,
    Simple,
    Frozen,
}

impl TrainMode {
    pub fn name(&self) -> &'static str {
        match self {
            TrainMode::Detangle => "detangle",
            TrainMode::Simple => "simple",
            TrainMode::Frozen => "frozen",
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<TrainMode> {
        match s {
            "detangle" => Ok(TrainMode::Detangle),
            "simple" => Ok(TrainMode::Simple),
            "frozen" => Ok(TrainMode::Frozen),
            other => Err(Error::Config(format!(
                "unknown train mode '{other}' (expected detangle, simple, or frozen)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub batch_authors: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub dropout_p: f64,
    pub lr: f64,
    pub warmup_frac: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    pub max_tokens: usize,
    pub tau_init: f64,
    /// Where detangle runs get their frozen content encoder.
    pub content: ContentSource,
    /// Ridge strength for the fitted content source.
    pub content_ridge: f64,
    /// Resample document windows every epoch (off freezes one window per doc).
    pub rechunk_each_epoch: bool,
    /// Trials for the per-epoch validation accuracy estimate.
    pub val_trials: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Detangle,
            batch_authors: 256,
            hidden_dim: 256,
            embed_dim: 64,
            dropout_p: 0.1,
            lr: 0.005,
            warmup_frac: 0.06,
            epochs: 25,
            weight_decay: 0.01,
            max_tokens: 512,
            tau_init: 0.07,
            content: ContentSource::Fitted,
            content_ridge: 0.1,
            rechunk_each_epoch: true,
            val_trials: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::Config(format!("warmup_frac {} outside [0,1)", self.warmup_frac)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.mode != TrainMode::Frozen && self.batch_authors < 2 {
            return Err(Error::Config("batch_authors must be >= 2 for training".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} outside [0,1)", self.dropout_p)));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::Config(format!("weight_decay {} invalid", self.weight_decay)));
        }
        if !(self.tau_init.is_finite() && self.tau_init > 0.0) {
            return Err(Error::Config(format!("tau_init {} invalid", self.tau_init)));
        }
        if !(self.content_ridge.is_finite() && self.content_ridge > 0.0) {
            return Err(Error::Config(format!("content_ridge {} invalid", self.content_ridge)));
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 || self.max_tokens == 0 {
            return Err(Error::Config("hidden_dim, embed_dim, max_tokens must be >= 1".into()));
        }
        if self.val_trials == 0 {
            return Err(Error::Config("val_trials must be >= 1".into()));
        }
        Ok(())
    }
}

/// Linear warmup to `lr` over ⌈warmup_frac·total⌉ steps, then linear decay to
/// zero at `total_steps`.
pub fn lr_at_step(step: u64, total_steps: u64, cfg: &TrainConfig) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config("schedule with zero total steps".into()));
    }
    if step > total_steps {
        return Err(Error::Validation(format!("step {step} beyond total {total_steps}")));
    }
    let warmup =
        ((self::warmup_steps(total_steps, cfg.warmup_frac)).min(total_steps - 1)) as f64;
    let s = step as f64;
    if s < warmup {
        Ok(cfg.lr * s / warmup)
    } else {
        Ok(cfg.lr * (total_steps as f64 - s) / (total_steps as f64 - warmup))
    }
}

fn warmup_steps(total_steps: u64, frac: f64) -> u64 {
    (frac * total_steps as f64).ceil() as u64
}

#[derive(Clone, Debug, Default)]
pub struct OptimizerState {
    m: BTreeMap<String, Mat>,
    v: BTreeMap<String, Mat>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new() -> OptimizerState {
        OptimizerState::default()
    }
}

/// One decoupled-weight-decay Adam update. Parameters without a gradient
/// entry are treated as zero-gradient (decay still applies).
pub fn adamw_step(
    params: &mut [(&str, &mut Mat)],
    grads: &BTreeMap<String, Mat>,
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if lr < 0.0 || !lr.is_finite() {
        return Err(Error::Config(format!("adamw lr {lr} invalid")));
    }
    let known: BTreeSet<&str> = params.iter().map(|(n, _)| *n).collect();
    for g in grads.keys() {
        if !known.contains(g.as_str()) {
            return Err(Error::State(format!("gradient for unknown parameter '{g}'")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    for (name, w) in params.iter_mut() {
        let zero;
        let g = match grads.get(*name) {
            Some(g) => {
                if g.rows() != w.rows() || g.cols() != w.cols() {
                    return Err(Error::Shape(format!(
                        "gradient for '{name}' is {}x{}, parameter is {}x{}",
                        g.rows(),
                        g.cols(),
                        w.rows(),
                        w.cols()
                    )));
                }
                if !g.all_finite() {
                    return Err(Error::Numeric(format!("non-finite gradient for '{name}'")));
                }
                g
            }
            None => {
                zero = Mat::zeros(w.rows(), w.cols());
                &zero
            }
        };
        let m = state
            .m
            .entry(name.to_string())
            .or_insert_with(|| Mat::zeros(w.rows(), w.cols()));
        let v = state
            .v
            .entry(name.to_string())
            .or_insert_with(|| Mat::zeros(w.rows(), w.cols()));
        let decay = 1.0 - lr * weight_decay;
        for i in 0..w.data().len() {
            let gi = g.data()[i];
            let mi = BETA1 * m.data()[i] + (1.0 - BETA1) * gi;
            let vi = BETA2 * v.data()[i] + (1.0 - BETA2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            let wi = w.data()[i] * decay;
            w.data_mut()[i] = wi - lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss; absent on the epoch-0 baseline row.
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
    pub tau: f64,
    pub steps_completed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub mode: TrainMode,
    pub seed: u64,
    pub total_steps: u64,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub epochs: Vec<EpochRecord>,
    pub wall_ms: u128,
    pub config: TrainConfig,
}

pub struct FitResult {
    pub encoder: StyleEncoder,
    pub tau: Temperature,
    pub record: RunRecord,
}

fn partition_count(n_authors: usize, batch: usize) -> u64 {
    let b = batch.min(n_authors);
    let full = n_authors / b;
    let rem = n_authors % b;
    (full + usize::from(rem >= 2)) as u64
}

struct LossEval {
    total: f64,
    grads: Option<BTreeMap<String, Mat>>,
}

#[allow(clippy::too_many_arguments)]
fn eval_mode_loss(
    corpus: &Corpus,
    authors: &BTreeSet<String>,
    n: usize,
    cfg: &TrainConfig,
    encoder: &StyleEncoder,
    tau: &Temperature,
    content: Option<&ContentEncoder>,
    pair_seed: u64,
    window_root: u64,
    dropout_seed: u64,
    training: bool,
) -> Result<LossEval> {
    let batch = sample_batch_with(corpus, authors, n, cfg.max_tokens, pair_seed, window_root)?;
    let mut g = Graph::new();
    let (node, bd) = match cfg.mode {
        TrainMode::Detangle => {
            let content = content.ok_or_else(|| {
                Error::Config("detangle mode requires a content encoder".into())
            })?;
            detangle_infonce(
                &mut g,
                &batch,
                encoder,
                content,
                tau,
                training,
                dropout_seed,
                &LossOptions::default(),
            )?
        }
        TrainMode::Simple => {
            plain_infonce(&mut g, &batch, encoder, tau, training, dropout_seed)?
        }
        TrainMode::Frozen => return Err(Error::Config("frozen mode has no loss".into())),
    };
    let grads = if training { Some(g.backward(node)?) } else { None };
    Ok(LossEval { total: bd.total, grads })
}

/// Train the style encoder. Each epoch partitions the train authors into
/// author batches, steps AdamW under the warmup/decay schedule, then scores
/// validation attribution accuracy; the returned encoder is the best
/// validation snapshot (including the untrained epoch-0 baseline).
/// Continuation state for `fit_from`: picks up the optimizer step counter
/// where a previous run left off.
pub struct WarmStart {
    pub encoder: StyleEncoder,
    pub log_tau: f64,
    pub step: u64,
}

pub fn fit(
    corpus: &Corpus,
    split: &Split,
    cfg: &TrainConfig,
    feat: &FeatureConfig,
    content: Option<&ContentEncoder>,
) -> Result<FitResult> {
    fit_from(corpus, split, cfg, feat, content, None)
}

pub fn fit_from(
    corpus: &Corpus,
    split: &Split,
    cfg: &TrainConfig,
    feat: &FeatureConfig,
    content: Option<&ContentEncoder>,
    warm: Option<WarmStart>,
) -> Result<FitResult> {
    cfg.validate()?;
    feat.validate()?;
    if cfg.mode == TrainMode::Frozen {
        return Err(Error::Config("fit does not run in frozen mode".into()));
    }
    if cfg.mode == TrainMode::Detangle {
        match content {
            None => return Err(Error::Config("detangle mode requires a content encoder".into())),
            Some(c) if c.embed_dim() != cfg.embed_dim => {
                return Err(Error::Shape(format!(
                    "content embed_dim {} != configured embed_dim {}",
                    c.embed_dim(),
                    cfg.embed_dim
                )))
            }
            _ => {}
        }
    }
    let train_authors: Vec<String> = split.train.iter().cloned().collect();
    if train_authors.len() < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 train authors, have {}",
            train_authors.len()
        )));
    }
    for a in &train_authors {
        if corpus.docs_of(a).len() < 2 {
            return Err(Error::Validation(format!("train author '{a}' lacks 2 documents")));
        }
    }
    if split.validation.is_empty() {
        return Err(Error::Validation("validation split is empty".into()));
    }

    let started = Instant::now();
    let (mut encoder, mut tau, step0) = match warm {
        Some(w) => {
            if w.encoder.hidden_dim != cfg.hidden_dim
                || w.encoder.embed_dim != cfg.embed_dim
                || &w.encoder.feature_cfg != feat
            {
                return Err(Error::Config(
                    "resume checkpoint dims/features do not match the configuration".into(),
                ));
            }
            let mut t = Temperature::from_log(w.log_tau);
            t.clamp();
            (w.encoder, t, w.step)
        }
        None => {
            let enc = StyleEncoder::new(
                feat.clone(),
                cfg.hidden_dim,
                cfg.embed_dim,
                cfg.dropout_p,
                seeds::derive(cfg.seed, "init", &[]),
            )?;
            let mut t = Temperature::new(cfg.tau_init)?;
            t.clamp();
            (enc, t, 0)
        }
    };
    let mut state = OptimizerState::new();
    state.step = step0;

    let batches_per_epoch = partition_count(train_authors.len(), cfg.batch_authors);
    // resumed runs extend the schedule past the inherited counter
    let total_steps = step0 + batches_per_epoch * cfg.epochs as u64;

    let mut record = RunRecord {
        mode: cfg.mode,
        seed: cfg.seed,
        total_steps,
        best_epoch: 0,
        best_val_accuracy: 0.0,
        epochs: Vec::new(),
        wall_ms: 0,
        config: cfg.clone(),
    };

    if cfg.epochs == 0 {
        record.wall_ms = started.elapsed().as_millis();
        return Ok(FitResult { encoder, tau, record });
    }

    let validate_now = |enc: &StyleEncoder, tau: &Temperature, epoch: usize| -> Result<(f64, f64, Option<f64>)> {
        let run = run_trials(
            corpus,
            &split.validation,
            enc,
            cfg.val_trials,
            seeds::derive(cfg.seed, "val", &[epoch as u64]),
            AttributionRule::NearestDoc,
        )?;
        let val_loss = if split.validation.len() >= 2 && cfg.mode != TrainMode::Frozen {
            let n = split.validation.len().min(cfg.batch_authors);
            Some(
                eval_mode_loss(
                    corpus,
                    &split.validation,
                    n,
                    cfg,
                    enc,
                    tau,
                    content,
                    seeds::derive(cfg.seed, "val_batch", &[epoch as u64]),
                    seeds::derive(cfg.seed, "val_windows", &[]),
                    0,
                    false,
                )?
                .total,
            )
        } else {
            None
        };
        Ok((run.report.accuracy, run.report.macro_f1, val_loss))
    };

    let (acc0, f10, vl0) = validate_now(&encoder, &tau, 0)?;
    record.epochs.push(EpochRecord {
        epoch: 0,
        train_loss: None,
        val_loss: vl0,
        val_accuracy: acc0,
        val_macro_f1: f10,
        tau: tau.tau(),
        steps_completed: 0,
    });
    record.best_epoch = 0;
    record.best_val_accuracy = acc0;
    let mut best_snapshot = (encoder.clone(), tau, 0u64);

    for epoch in 1..=cfg.epochs {
        let mut order = train_authors.clone();
        order.shuffle(&mut seeds::rng(cfg.seed, "partition", &[epoch as u64]));
        let window_root = if cfg.rechunk_each_epoch {
            seeds::derive(cfg.seed, "windows", &[epoch as u64])
        } else {
            seeds::derive(cfg.seed, "windows", &[0])
        };

        let mut epoch_losses = Vec::new();
        let bsize = cfg.batch_authors.min(order.len());
        for (b, chunk) in order.chunks(bsize).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let chunk_set: BTreeSet<String> = chunk.iter().cloned().collect();
            let ev = eval_mode_loss(
                corpus,
                &chunk_set,
                chunk.len(),
                cfg,
                &encoder,
                &tau,
                content,
                seeds::derive(cfg.seed, "pairs", &[epoch as u64, b as u64]),
                window_root,
                seeds::derive(cfg.seed, "dropout", &[epoch as u64, b as u64]),
                true,
            )?;
            let grads = ev.grads.expect("training pass returns gradients");
            let lr = lr_at_step(state.step, total_steps, cfg)?;
            let mut tau_mat = Mat::from_vec(1, 1, vec![tau.log_tau()])?;
            {
                let mut params = encoder.params_mut();
                let mut all: Vec<(&str, &mut Mat)> =
                    params.iter_mut().map(|(n, m)| (*n, &mut **m)).collect();
                all.push(("tau.log", &mut tau_mat));
                adamw_step(&mut all, &grads, &mut state, lr, cfg.weight_decay)?;
            }
            tau = Temperature::from_log(tau_mat.at(0, 0));
            tau.clamp();
            epoch_losses.push(ev.total);
        }

        let train_loss = if epoch_losses.is_empty() {
            None
        } else {
            Some(epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64)
        };
        let (acc, f1, vl) = validate_now(&encoder, &tau, epoch)?;
        record.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss: vl,
            val_accuracy: acc,
            val_macro_f1: f1,
            tau: tau.tau(),
            steps_completed: state.step,
        });
        // ties go to the later epoch: with tiny validation splits accuracy
        // saturates early, and the most-trained of equals is the useful one
        if acc >= record.best_val_accuracy {
            record.best_val_accuracy = acc;
            record.best_epoch = epoch;
            best_snapshot = (encoder.clone(), tau, state.step);
        }
    }

    record.wall_ms = started.elapsed().as_millis();
    let (encoder, tau, _) = best_snapshot;
    Ok(FitResult { encoder, tau, record })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{split_by_authors, Corpus, CorpusRecord};

    #[test]
    fn lr_schedule_examples() {
        let cfg = TrainConfig { lr: 0.01, warmup_frac: 0.06, ..TrainConfig::default() };
        // total 100 → warmup = ceil(6) = 6
        assert_eq!(lr_at_step(0, 100, &cfg).unwrap(), 0.0);
        assert!((lr_at_step(6, 100, &cfg).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(lr_at_step(100, 100, &cfg).unwrap(), 0.0);
        // decay midpoint (6+100)/2 = 53 → lr/2
        assert!((lr_at_step(53, 100, &cfg).unwrap() - 0.005).abs() < 1e-15);
        // ramp midpoint
        assert!((lr_at_step(3, 100, &cfg).unwrap() - 0.005).abs() < 1e-15);

        assert!(lr_at_step(0, 0, &cfg).is_err());
        assert!(lr_at_step(101, 100, &cfg).is_err());

        // no warmup → immediately at peak
        let flat = TrainConfig { lr: 0.01, warmup_frac: 0.0, ..TrainConfig::default() };
        assert!((lr_at_step(0, 10, &flat).unwrap() - 0.01).abs() < 1e-15);

        // warmup would swallow the whole run → clamped to total−1
        let heavy = TrainConfig { lr: 1.0, warmup_frac: 0.999, ..TrainConfig::default() };
        assert!((lr_at_step(9, 10, &heavy).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(lr_at_step(10, 10, &heavy).unwrap(), 0.0);
    }

    #[test]
    fn adamw_scalar_oracle() {
        // independent reference implementation of three steps
        let grads_seq = [0.3, -0.2, 0.1];
        let (lr, wd) = (0.01, 0.1);
        let mut w_ref = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for (t, g) in grads_seq.iter().enumerate() {
            let t = (t + 1) as i32;
            w_ref *= 1.0 - lr * wd;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mhat = m / (1.0 - 0.9f64.powi(t));
            let vhat = v / (1.0 - 0.999f64.powi(t));
            w_ref -= lr * mhat / (vhat.sqrt() + 1e-8);
        }

        let mut w = Mat::from_vec(1, 1, vec![1.0]).unwrap();
        let mut state = OptimizerState::new();
        for g in grads_seq {
            let grads: BTreeMap<String, Mat> =
                [("w".to_string(), Mat::from_vec(1, 1, vec![g]).unwrap())].into();
            adamw_step(&mut [("w", &mut w)], &grads, &mut state, lr, wd).unwrap();
        }
        assert!((w.at(0, 0) - w_ref).abs() < 1e-12);
        assert_eq!(state.step, 3);
    }

    #[test]
    fn adamw_zero_grad_cases() {
        let mut w = Mat::from_vec(1, 2, vec![2.0, -3.0]).unwrap();
        let mut state = OptimizerState::new();
        let grads: BTreeMap<String, Mat> =
            [("w".to_string(), Mat::zeros(1, 2))].into();
        adamw_step(&mut [("w", &mut w)], &grads, &mut state, 0.5, 0.0).unwrap();
        assert_eq!(w.data(), &[2.0, -3.0]);

        // zero grad with decay: w ← w(1−ηλ)
        adamw_step(&mut [("w", &mut w)], &grads, &mut state, 0.5, 0.1).unwrap();
        assert!((w.at(0, 0) - 2.0 * 0.95).abs() < 1e-15);
        assert!((w.at(0, 1) + 3.0 * 0.95).abs() < 1e-15);

        // missing grad entry behaves like zero grad (decay still applies)
        let empty = BTreeMap::new();
        adamw_step(&mut [("w", &mut w)], &empty, &mut state, 0.5, 0.1).unwrap();
        assert!((w.at(0, 0) - 2.0 * 0.95 * 0.95).abs() < 1e-15);
    }

    #[test]
    fn adamw_rejects_bad_gradients() {
        let mut w = Mat::zeros(1, 1);
        let mut state = OptimizerState::new();
        let nan: BTreeMap<String, Mat> =
            [("w".to_string(), Mat::from_vec(1, 1, vec![f64::NAN]).unwrap())].into();
        match adamw_step(&mut [("w", &mut w)], &nan, &mut state, 0.1, 0.0) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("'w'")),
            other => panic!("expected numeric error, got {other:?}"),
        }
        let unknown: BTreeMap<String, Mat> =
            [("ghost".to_string(), Mat::zeros(1, 1))].into();
        assert!(adamw_step(&mut [("w", &mut w)], &unknown, &mut state, 0.1, 0.0).is_err());
    }

    fn tiny_corpus() -> Corpus {
        let mut recs = Vec::new();
        for a in 0..6 {
            for d in 0..3 {
                recs.push(CorpusRecord {
                    doc_id: format!("a{a}d{d}"),
                    author: format!("auth{a}"),
                    topic: format!("t{}", a % 2),
                    text: format!(
                        "Author {a} writes piece {d}. Some filler words go here, along with more \
                         prose to chunk; sentence two follows! And a third one, for length."
                    ),
                });
            }
        }
        Corpus::from_records(recs).unwrap()
    }

    fn tiny_cfg(mode: TrainMode) -> (TrainConfig, FeatureConfig) {
        (
            TrainConfig {
                mode,
                batch_authors: 4,
                hidden_dim: 8,
                embed_dim: 4,
                epochs: 2,
                max_tokens: 32,
                val_trials: 2,
                seed: 11,
                ..TrainConfig::default()
            },
            FeatureConfig { hash_dim: 128, ..FeatureConfig::default() },
        )
    }

    fn content_for(corpus: &Corpus, feat: &FeatureConfig, dim: usize) -> ContentEncoder {
        let texts: Vec<&str> = corpus.documents().iter().map(|d| d.raw_text.as_str()).collect();
        ContentEncoder::new_tfidf(texts.iter().copied(), feat, dim, 3).unwrap()
    }

    #[test]
    fn fit_epochs_zero_returns_init() {
        let corpus = tiny_corpus();
        let split = split_by_authors(&corpus, (0.67, 0.17, 0.16), 1).unwrap();
        let (mut cfg, feat) = tiny_cfg(TrainMode::Simple);
        cfg.epochs = 0;
        let fitres = fit(&corpus, &split, &cfg, &feat, None).unwrap();
        assert!(fitres.record.epochs.is_empty());
        assert_eq!(fitres.record.total_steps, 0);
        let fresh = StyleEncoder::new(
            feat.clone(),
            cfg.hidden_dim,
            cfg.embed_dim,
            cfg.dropout_p,
            seeds::derive(cfg.seed, "init", &[]),
        )
        .unwrap();
        assert_eq!(fitres.encoder, fresh);
    }

    #[test]
    fn fit_is_deterministic_and_tracks_best() {
        let corpus = tiny_corpus();
        let split = split_by_authors(&corpus, (0.67, 0.17, 0.16), 1).unwrap();
        let (cfg, feat) = tiny_cfg(TrainMode::Detangle);
        let content = content_for(&corpus, &feat, cfg.embed_dim);
        let r1 = fit(&corpus, &split, &cfg, &feat, Some(&content)).unwrap();
        let r2 = fit(&corpus, &split, &cfg, &feat, Some(&content)).unwrap();
        assert_eq!(r1.encoder, r2.encoder);
        assert_eq!(r1.tau, r2.tau);
        assert_eq!(
            serde_json::to_string(&r1.record.epochs).unwrap(),
            serde_json::to_string(&r2.record.epochs).unwrap()
        );
        // best-checkpoint bookkeeping
        let best = r1
            .record
            .epochs
            .iter()
            .map(|e| e.val_accuracy)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r1.record.best_val_accuracy, best);
        assert!(r1.record.best_val_accuracy >= r1.record.epochs[0].val_accuracy);
        // ties resolve to the latest epoch at the best accuracy
        let last_best = r1
            .record
            .epochs
            .iter()
            .filter(|e| e.val_accuracy == best)
            .map(|e| e.epoch)
            .max()
            .unwrap();
        assert_eq!(r1.record.best_epoch, last_best);
        // epoch indices are monotone; steps completed are monotone
        for w in r1.record.epochs.windows(2) {
            assert!(w[1].epoch == w[0].epoch + 1);
            assert!(w[1].steps_completed >= w[0].steps_completed);
        }
        // temperature stayed in bounds
        assert!(r1.tau.in_bounds());
        assert!(r1.encoder.all_finite());
    }

    #[test]
    fn simple_mode_never_touches_content() {
        let corpus = tiny_corpus();
        let split = split_by_authors(&corpus, (0.67, 0.17, 0.16), 1).unwrap();
        let (cfg, feat) = tiny_cfg(TrainMode::Simple);
        let content = content_for(&corpus, &feat, cfg.embed_dim);
        assert_eq!(content.invocations(), 0);
        fit(&corpus, &split, &cfg, &feat, Some(&content)).unwrap();
        assert_eq!(content.invocations(), 0);
    }

    #[test]
    fn detangle_content_frozen_through_fit() {
        let corpus = tiny_corpus();
        let split = split_by_authors(&corpus, (0.67, 0.17, 0.16), 1).unwrap();
        let (cfg, feat) = tiny_cfg(TrainMode::Detangle);
        let content = content_for(&corpus, &feat, cfg.embed_dim);
        let docs: Vec<&crate::corpus::Document> = corpus.documents().iter().collect();
        let before = content.embed(&docs).unwrap();
        let calls_before = content.invocations();
        fit(&corpus, &split, &cfg, &feat, Some(&content)).unwrap();
        assert!(content.invocations() > calls_before);
        let after = content.embed(&docs).unwrap();
        assert_eq!(before.data, after.data);
    }

    #[test]
    fn fit_guards() {
        let corpus = tiny_corpus();
        let split = split_by_authors(&corpus, (0.67, 0.17, 0.16), 1).unwrap();
        let (cfg, feat) = tiny_cfg(TrainMode::Frozen);
        assert!(fit(&corpus, &split, &cfg, &feat, None).is_err());

        let (cfg, feat) = tiny_cfg(TrainMode::Detangle);
        assert!(fit(&corpus, &split, &cfg, &feat, None).is_err());

        let mut starved = split.clone();
        starved.train = ["auth0".to_string()].into_iter().collect();
        let content = content_for(&corpus, &feat, cfg.embed_dim);
        assert!(fit(&corpus, &starved, &cfg, &feat, Some(&content)).is_err());

        let mut no_val = split.clone();
        no_val.validation.clear();
        assert!(fit(&corpus, &no_val, &cfg, &feat, Some(&content)).is_err());
    }

    #[test]
    fn partition_counts() {
        assert_eq!(partition_count(10, 4), 3); // 4+4+2
        assert_eq!(partition_count(9, 4), 2); // 4+4, trailing 1 dropped
        assert_eq!(partition_count(4, 256), 1);
        assert_eq!(partition_count(2, 2), 1);
    }
}
