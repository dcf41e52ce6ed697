use crate::corpus::{Document, DocumentBatch};
use crate::diffgraph::{Graph, NodeId};
use crate::encoders::{ContentEncoder, EmbeddingMatrix, StyleEncoder};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::seeds;

pub const TAU_MIN: f64 = 1e-3;
pub const TAU_MAX: f64 = 10.0;

/// Mask value standing in for −∞ similarity: exp(MASK/τ − rowmax) underflows
/// to exactly 0 for any in-bounds τ, so masked candidates contribute nothing
/// to the softmax or its gradient.
const MASK_SIM: f64 = -1e30;

/// Trainable softmax temperature stored as log τ (positive by construction).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Temperature {
    log_tau: f64,
}

impl Temperature {
    pub fn new(tau: f64) -> Result<Temperature> {
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::Config(format!("temperature must be finite and positive, got {tau}")));
        }
        Ok(Temperature { log_tau: tau.ln() })
    }

    pub fn from_log(log_tau: f64) -> Temperature {
        Temperature { log_tau }
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    pub fn log_tau(&self) -> f64 {
        self.log_tau
    }

    pub fn in_bounds(&self) -> bool {
        self.log_tau >= TAU_MIN.ln() && self.log_tau <= TAU_MAX.ln()
    }

    /// Apply the [τ_min, τ_max] bounds (called after each optimizer step).
    pub fn clamp(&mut self) {
        self.log_tau = self.log_tau.clamp(TAU_MIN.ln(), TAU_MAX.ln());
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature::new(0.07).unwrap()
    }
}

/// R(D_A, D_B): the 3N reference rows s(D_B) ‖ c(D_A) ‖ c(D_B). Row k of the
/// first block is the positive for query row k; everything else is a negative.
pub struct ReferenceSet {
    pub style_b: EmbeddingMatrix,
    pub content_a: EmbeddingMatrix,
    pub content_b: EmbeddingMatrix,
}

impl ReferenceSet {
    pub fn n(&self) -> usize {
        self.style_b.n()
    }

    pub fn total_rows(&self) -> usize {
        3 * self.n()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let n = self.n();
        match k / n {
            0 => self.style_b.row(k),
            1 => self.content_a.row(k - n),
            _ => self.content_b.row(k - 2 * n),
        }
    }
}

pub fn build_reference_set(
    style_b: EmbeddingMatrix,
    content_a: EmbeddingMatrix,
    content_b: EmbeddingMatrix,
) -> Result<ReferenceSet> {
    let (n, d) = (style_b.n(), style_b.dim());
    for (name, m) in [("content_a", &content_a), ("content_b", &content_b)] {
        if m.n() != n || m.dim() != d {
            return Err(Error::Shape(format!(
                "reference block {name} is {}x{}, expected {n}x{d}",
                m.n(),
                m.dim()
            )));
        }
    }
    Ok(ReferenceSet { style_b, content_a, content_b })
}

/// P(positive = R_j | query) under the temperature-scaled softmax over all
/// 3N reference rows.
pub fn positive_likelihood(
    query: &[f64],
    rset: &ReferenceSet,
    j: usize,
    tau: &Temperature,
) -> Result<f64> {
    if !tau.in_bounds() {
        return Err(Error::State(format!(
            "temperature {} outside [{TAU_MIN}, {TAU_MAX}]",
            tau.tau()
        )));
    }
    let total = rset.total_rows();
    if j >= total {
        return Err(Error::Validation(format!("reference index {j} out of range (3N = {total})")));
    }
    let t = tau.tau();
    let logits: Vec<f64> = (0..total)
        .map(|k| query.iter().zip(rset.row(k)).map(|(a, b)| a * b).sum::<f64>() / t)
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = logits.iter().map(|z| (z - m).exp()).sum();
    Ok((logits[j] - m).exp() / denom)
}

#[derive(Clone, Debug)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_row: Vec<f64>,
    pub mean_pos_sim: f64,
    pub mean_style_neg_sim: f64,
    pub mean_content_sim: f64,
    /// Largest |logit| after τ scaling but before the stability step;
    /// evidence of would-be overflow when it exceeds ~709.
    pub max_abs_raw_logit: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct LossOptions {
    /// Replace both content blocks with −∞ similarities (ablation oracle).
    pub mask_content: bool,
    /// Subtract the detached row max before the softmax (on in production).
    pub stability_step: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions { mask_content: false, stability_step: true }
    }
}

fn register_tau(g: &mut Graph, tau: &Temperature) -> Result<NodeId> {
    match g.get_param("tau.log") {
        Some(id) => Ok(id),
        None => g.param("tau.log", Mat::from_vec(1, 1, vec![tau.log_tau()])?),
    }
}

fn block_stats(m: &Mat) -> (f64, f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for &v in m.data() {
        lo = lo.min(v);
        hi = hi.max(v);
        sum += v;
    }
    (lo, hi, sum / m.data().len() as f64)
}

/// Shared graph assembly: queries vs references with optional content blocks.
/// `content = None` is the plain objective (sim1 only).
fn infonce_on(
    g: &mut Graph,
    style_a: NodeId,
    style_b: NodeId,
    content: Option<(Mat, Mat)>,
    tau: &Temperature,
    opts: &LossOptions,
) -> Result<(NodeId, LossBreakdown)> {
    if !tau.in_bounds() {
        return Err(Error::State(format!(
            "temperature {} outside [{TAU_MIN}, {TAU_MAX}]",
            tau.tau()
        )));
    }
    let n = g.value(style_a).rows();
    let sim1 = g.cosine_sim(style_a, style_b)?;
    let mut content_blocks = Vec::new();
    let sim_f = match content {
        Some((ca, cb)) => {
            let (s2, s3) = if opts.mask_content {
                let mask = Mat::from_fn(n, n, |_, _| MASK_SIM);
                (g.input(mask.clone()), g.input(mask))
            } else {
                let ca = g.input(ca);
                let cb = g.input(cb);
                let s2 = g.cosine_sim(style_a, ca)?;
                let s3 = g.cosine_sim(style_a, cb)?;
                content_blocks.push(s2);
                content_blocks.push(s3);
                (s2, s3)
            };
            g.concat_cols(&[sim1, s2, s3])?
        }
        None => sim1,
    };
    let tau_node = register_tau(g, tau)?;
    let scaled = g.scale_by_temp(sim_f, tau_node)?;
    let max_abs_raw_logit = g.value(scaled).max_abs();
    let stable = if opts.stability_step { g.row_max_sub_detached(scaled) } else { scaled };
    let labels: Vec<usize> = (0..n).collect();
    let loss = g.cross_entropy_rows(stable, &labels)?;

    let s1 = g.value(sim1);
    let mut pos = 0.0;
    let mut neg = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                pos += s1.at(i, j);
            } else {
                neg += s1.at(i, j);
            }
        }
    }
    let mean_pos_sim = pos / n as f64;
    let mean_style_neg_sim = if n > 1 { neg / (n * (n - 1)) as f64 } else { 0.0 };
    let mean_content_sim = if content_blocks.is_empty() {
        0.0
    } else {
        let mut sum = 0.0;
        for &b in &content_blocks {
            sum += g.value(b).data().iter().sum::<f64>();
        }
        sum / (2 * n * n) as f64
    };

    let total = g.value(loss).at(0, 0);
    if !total.is_finite() {
        let mut dump = format!("non-finite loss {total}; tau={}", tau.tau());
        for (name, id) in [("sim1", Some(sim1)), ("sim2", content_blocks.first().copied()), ("sim3", content_blocks.get(1).copied())] {
            if let Some(id) = id {
                let (lo, hi, mean) = block_stats(g.value(id));
                dump.push_str(&format!("; {name} min={lo} max={hi} mean={mean}"));
            }
        }
        return Err(Error::Numeric(dump));
    }
    let per_row = g.per_row_losses(loss).expect("cross entropy node").to_vec();
    Ok((
        loss,
        LossBreakdown {
            total,
            per_row,
            mean_pos_sim,
            mean_style_neg_sim,
            mean_content_sim,
            max_abs_raw_logit,
        },
    ))
}

/// Oracle entry point: the same objective evaluated on fixed embedding
/// matrices instead of documents (no gradient path into the inputs).
pub fn infonce_from_embeddings(
    g: &mut Graph,
    style_a: Mat,
    style_b: Mat,
    content: Option<(Mat, Mat)>,
    tau: &Temperature,
    opts: &LossOptions,
) -> Result<(NodeId, LossBreakdown)> {
    let sa = g.input(style_a);
    let sb = g.input(style_b);
    infonce_on(g, sa, sb, content, tau, opts)
}

fn batch_forward(
    g: &mut Graph,
    batch: &DocumentBatch,
    style: &StyleEncoder,
    training: bool,
    seed: u64,
) -> Result<(NodeId, NodeId)> {
    if batch.n_authors() == 0 {
        return Err(Error::Validation("empty batch".into()));
    }
    batch.validate()?;
    let a_refs: Vec<&Document> = batch.set_a.iter().collect();
    let b_refs: Vec<&Document> = batch.set_b.iter().collect();
    let sa = style.forward_on(g, &a_refs, training, seeds::derive(seed, "dropout_a", &[]))?;
    let sb = style.forward_on(g, &b_refs, training, seeds::derive(seed, "dropout_b", &[]))?;
    Ok((sa, sb))
}

/// The disentangling objective: each style query is softmaxed against
/// s(D_B) ‖ c(D_A) ‖ c(D_B), so a document's own content embedding is a hard
/// negative. Gradients reach only style parameters and log τ.
pub fn detangle_infonce(
    g: &mut Graph,
    batch: &DocumentBatch,
    style: &StyleEncoder,
    content: &ContentEncoder,
    tau: &Temperature,
    training: bool,
    seed: u64,
    opts: &LossOptions,
) -> Result<(NodeId, LossBreakdown)> {
    if style.embed_dim != content.embed_dim() {
        return Err(Error::Shape(format!(
            "style embed_dim {} != content embed_dim {}",
            style.embed_dim,
            content.embed_dim()
        )));
    }
    let (sa, sb) = batch_forward(g, batch, style, training, seed)?;
    let a_refs: Vec<&Document> = batch.set_a.iter().collect();
    let b_refs: Vec<&Document> = batch.set_b.iter().collect();
    let ca = content.embed(&a_refs)?;
    let cb = content.embed(&b_refs)?;
    infonce_on(g, sa, sb, Some((ca.data, cb.data)), tau, opts)
}

/// Plain InfoNCE ablation: softmax over s(D_B) only.
pub fn plain_infonce(
    g: &mut Graph,
    batch: &DocumentBatch,
    style: &StyleEncoder,
    tau: &Temperature,
    training: bool,
    seed: u64,
) -> Result<(NodeId, LossBreakdown)> {
    let (sa, sb) = batch_forward(g, batch, style, training, seed)?;
    infonce_on(g, sa, sb, None, tau, &LossOptions::default())
}
