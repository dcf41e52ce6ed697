use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::diffgraph::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::features::{content_features, style_features, FeatureConfig, IdfTable};
use crate::mat::{Mat, SparseMat};
use crate::seeds;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    Style,
    Content,
}

/// N×d embeddings with unit-norm rows, one per document.
#[derive(Clone, Debug)]
pub struct EmbeddingMatrix {
    pub data: Mat,
    pub doc_ids: Vec<String>,
    pub source: EmbeddingSource,
}

impl EmbeddingMatrix {
    pub fn n(&self) -> usize {
        self.data.rows()
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.data.row(i)
    }

    pub fn validate_unit_rows(&self) -> Result<()> {
        for i in 0..self.n() {
            let n: f64 = self.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::Numeric(format!(
                    "embedding row {i} ('{}') has norm {n}",
                    self.doc_ids.get(i).map(String::as_str).unwrap_or("?")
                )));
            }
        }
        Ok(())
    }
}

/// Divide by the L2 norm unless the vector is already unit within 1e-12
/// (keeps save→load→renormalize cycles bit-stable).
fn renormalize(v: &mut [f64]) -> Result<()> {
    let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Numeric(format!("cannot normalize vector with norm {n}")));
    }
    if (n - 1.0).abs() > 1e-12 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    Ok(())
}

/// Solve A·X = B for symmetric positive-definite A via in-place Cholesky.
fn cholesky_solve(mut a: Mat, b: &Mat) -> Result<Mat> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return Err(Error::Validation(format!(
            "cholesky_solve shape mismatch: {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    for j in 0..n {
        let mut d = a.at(j, j);
        for k in 0..j {
            d -= a.at(j, k) * a.at(j, k);
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Numeric(format!("matrix not positive definite at pivot {j}")));
        }
        let d = d.sqrt();
        *a.at_mut(j, j) = d;
        for i in (j + 1)..n {
            let mut v = a.at(i, j);
            for k in 0..j {
                v -= a.at(i, k) * a.at(j, k);
            }
            *a.at_mut(i, j) = v / d;
        }
    }
    let mut x = b.clone();
    for c in 0..x.cols() {
        // L z = b, then L' x = z, reusing the column in place
        for i in 0..n {
            let mut v = x.at(i, c);
            for k in 0..i {
                v -= a.at(i, k) * x.at(k, c);
            }
            *x.at_mut(i, c) = v / a.at(i, i);
        }
        for i in (0..n).rev() {
            let mut v = x.at(i, c);
            for k in (i + 1)..n {
                v -= a.at(k, i) * x.at(k, c);
            }
            *x.at_mut(i, c) = v / a.at(i, i);
        }
    }
    Ok(x)
}

pub const STYLE_PARAMS: [&str; 4] = ["style.w1", "style.b1", "style.w2", "style.b2"];

/// The trainable style encoder s(·): hashed style features → linear → tanh
/// → dropout → linear → row L2 normalize.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleEncoder {
    pub feature_cfg: FeatureConfig,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub dropout_p: f64,
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
}

impl StyleEncoder {
    pub fn new(
        feature_cfg: FeatureConfig,
        hidden_dim: usize,
        embed_dim: usize,
        dropout_p: f64,
        seed: u64,
    ) -> Result<StyleEncoder> {
        feature_cfg.validate()?;
        if hidden_dim == 0 || embed_dim == 0 {
            return Err(Error::Config("encoder dims must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(Error::Config(format!("dropout_p {dropout_p} outside [0,1)")));
        }
        let d_in = feature_cfg.style_dim();
        let xavier = |rows: usize, cols: usize, tag: &str| {
            let mut rng = seeds::rng(seed, tag, &[]);
            let a = (6.0 / (rows + cols) as f64).sqrt();
            Mat::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 * a - a)
        };
        Ok(StyleEncoder {
            feature_cfg,
            hidden_dim,
            embed_dim,
            dropout_p,
            w1: xavier(d_in, hidden_dim, "init_w1"),
            b1: Mat::zeros(1, hidden_dim),
            w2: xavier(hidden_dim, embed_dim, "init_w2"),
            b2: Mat::zeros(1, embed_dim),
        })
    }

    pub fn params(&self) -> [(&'static str, &Mat); 4] {
        [
            ("style.w1", &self.w1),
            ("style.b1", &self.b1),
            ("style.w2", &self.w2),
            ("style.b2", &self.b2),
        ]
    }

    pub fn params_mut(&mut self) -> [(&'static str, &mut Mat); 4] {
        [
            ("style.w1", &mut self.w1),
            ("style.b1", &mut self.b1),
            ("style.w2", &mut self.w2),
            ("style.b2", &mut self.b2),
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|(_, m)| m.all_finite())
    }

    fn features_of<'a>(&self, docs: impl Iterator<Item = &'a Document>) -> Result<SparseMat> {
        let mut rows = Vec::new();
        for d in docs {
            let v = style_features(&d.raw_text, &self.feature_cfg);
            if v.is_empty() {
                return Err(Error::Validation(format!(
                    "document '{}' has empty text, cannot embed",
                    d.doc_id
                )));
            }
            rows.push(v.to_sparse_row());
        }
        Ok(SparseMat { dim: self.feature_cfg.style_dim(), rows })
    }

    /// Build the differentiable forward pass on an existing graph. Parameters
    /// are registered on first use and shared by later calls on the same
    /// graph (so set A and set B share weights).
    pub fn forward_on(
        &self,
        g: &mut Graph,
        docs: &[&Document],
        training: bool,
        seed: u64,
    ) -> Result<NodeId> {
        if docs.is_empty() {
            return Err(Error::Validation("style_forward on empty document list".into()));
        }
        let feats = self.features_of(docs.iter().copied())?;
        let param = |g: &mut Graph, name: &str, m: &Mat| -> Result<NodeId> {
            match g.get_param(name) {
                Some(id) => Ok(id),
                None => g.param(name, m.clone()),
            }
        };
        let w1 = param(g, "style.w1", &self.w1)?;
        let b1 = param(g, "style.b1", &self.b1)?;
        let w2 = param(g, "style.w2", &self.w2)?;
        let b2 = param(g, "style.b2", &self.b2)?;
        let h = g.sparse_linear(feats, w1, b1)?;
        let t = g.tanh(h);
        let d = g.dropout(t, self.dropout_p, training, seed)?;
        let o = g.linear(d, w2, b2)?;
        Ok(g.row_l2_normalize(o))
    }

    /// Eval-mode embeddings (no dropout, deterministic).
    pub fn embed(&self, docs: &[&Document]) -> Result<EmbeddingMatrix> {
        let mut g = Graph::new();
        let out = self.forward_on(&mut g, docs, false, 0)?;
        Ok(EmbeddingMatrix {
            data: g.value(out).clone(),
            doc_ids: docs.iter().map(|d| d.doc_id.clone()).collect(),
            source: EmbeddingSource::Style,
        })
    }
}

#[derive(Debug)]
enum ContentImpl {
    Tfidf { cfg: FeatureConfig, idf: IdfTable, projection: Mat },
    Precomputed { table: BTreeMap<String, Vec<f64>> },
}

/// How a training run obtains its frozen content encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentSource {
    /// Ridge fit of TF-IDF features onto the initial style embeddings.
    Fitted,
    /// Initial style encoder weights frozen as the reference table.
    Snapshot,
    /// TF-IDF features under a fixed random projection.
    Tfidf,
}

impl std::str::FromStr for ContentSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<ContentSource> {
        match s {
            "fitted" => Ok(ContentSource::Fitted),
            "snapshot" => Ok(ContentSource::Snapshot),
            "tfidf" => Ok(ContentSource::Tfidf),
            other => Err(Error::Config(format!(
                "unknown content source '{other}' (expected fitted, snapshot, or tfidf)"
            ))),
        }
    }
}

/// The frozen content encoder c(·). Never updated by training; an invocation
/// counter makes frozenness and mode behavior observable in tests.
#[derive(Debug)]
pub struct ContentEncoder {
    embed_dim: usize,
    imp: ContentImpl,
    calls: AtomicU64,
}

impl Clone for ContentEncoder {
    fn clone(&self) -> Self {
        ContentEncoder {
            embed_dim: self.embed_dim,
            imp: match &self.imp {
                ContentImpl::Tfidf { cfg, idf, projection } => ContentImpl::Tfidf {
                    cfg: cfg.clone(),
                    idf: idf.clone(),
                    projection: projection.clone(),
                },
                ContentImpl::Precomputed { table } => {
                    ContentImpl::Precomputed { table: table.clone() }
                }
            },
            calls: AtomicU64::new(self.calls.load(Ordering::Relaxed)),
        }
    }
}

impl ContentEncoder {
    /// TF-IDF content features composed with a fixed seeded random
    /// projection into the embedding space. `texts` must come from the
    /// training split only.
    pub fn new_tfidf<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        cfg: &FeatureConfig,
        embed_dim: usize,
        seed: u64,
    ) -> Result<ContentEncoder> {
        cfg.validate()?;
        if embed_dim == 0 {
            return Err(Error::Config("content embed_dim must be >= 1".into()));
        }
        let idf = IdfTable::fit(texts, cfg);
        if !idf.is_fitted() {
            return Err(Error::State("content encoder fitted on zero documents".into()));
        }
        let mut rng = seeds::rng(seed, "content_projection", &[]);
        let projection =
            Mat::from_fn(cfg.content_dim(), embed_dim, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        Ok(ContentEncoder {
            embed_dim,
            imp: ContentImpl::Tfidf { cfg: cfg.clone(), idf, projection },
            calls: AtomicU64::new(0),
        })
    }

    /// Freeze a style encoder's current embeddings of the whole corpus as
    /// the content table. Pairing this with a trainable copy of the same
    /// encoder reproduces the warm-start setup: at step 0 the style model
    /// coincides with the frozen reference, so every content negative
    /// starts maximally hard and the repulsion acts on directions the
    /// encoder actually uses, instead of on an unrelated coordinate system.
    pub fn from_style_snapshot(style: &StyleEncoder, corpus: &Corpus) -> Result<ContentEncoder> {
        let docs: Vec<&Document> = corpus.documents().iter().collect();
        if docs.is_empty() {
            return Err(Error::Validation("empty corpus for content snapshot".into()));
        }
        let emb = style.embed(&docs)?;
        let table = docs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.doc_id.clone(), emb.row(i).to_vec()))
            .collect();
        ContentEncoder::from_table(table)
    }

    /// Content table fitted by ridge regression from TF-IDF content
    /// features onto the style encoder's initial embeddings. Each entry is
    /// the content-predictable part of that document's own snapshot
    /// embedding: the negatives sit inside the style space (hard from step
    /// one) yet span only directions that word usage explains, so the
    /// repulsion strips topic structure while leaving the style residue
    /// alone.
    pub fn fit_to_style(
        style: &StyleEncoder,
        corpus: &Corpus,
        feat: &FeatureConfig,
        ridge: f64,
    ) -> Result<ContentEncoder> {
        if !(ridge > 0.0) {
            return Err(Error::Config(format!("ridge must be positive, got {ridge}")));
        }
        let docs: Vec<&Document> = corpus.documents().iter().collect();
        if docs.is_empty() {
            return Err(Error::Validation("empty corpus for content fit".into()));
        }
        let idf = IdfTable::fit(docs.iter().map(|d| d.raw_text.as_str()), feat);
        let feats = docs
            .iter()
            .map(|d| content_features(&d.raw_text, feat, &idf))
            .collect::<Result<Vec<_>>>()?;
        let n = docs.len();
        // Gram matrix over unit TF-IDF vectors; ridge shifts the unit
        // diagonal, keeping the solve well-posed at any corpus size.
        let mut k = Mat::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = feats[i].dot(&feats[j]);
                *k.at_mut(i, j) = v;
                *k.at_mut(j, i) = v;
            }
        }
        let y = style.embed(&docs)?;
        let mut reg = k.clone();
        for i in 0..n {
            *reg.at_mut(i, i) += ridge;
        }
        let alpha = cholesky_solve(reg, &y.data)?;
        let fitted = k.matmul(&alpha)?;
        let table = docs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.doc_id.clone(), fitted.row(i).to_vec()))
            .collect();
        ContentEncoder::from_table(table)
    }

    /// Precomputed embeddings keyed by doc_id (vectors renormalized).
    pub fn from_table(table: BTreeMap<String, Vec<f64>>) -> Result<ContentEncoder> {
        let mut dims = table.values().map(|v| v.len());
        let embed_dim = dims.next().ok_or_else(|| Error::Validation("empty embedding table".into()))?;
        let mut norm_table = BTreeMap::new();
        for (id, mut v) in table {
            if v.len() != embed_dim {
                return Err(Error::Validation(format!(
                    "embedding for '{id}' has dim {}, expected {embed_dim}",
                    v.len()
                )));
            }
            renormalize(&mut v)
                .map_err(|_| Error::Validation(format!("zero/invalid embedding for '{id}'")))?;
            norm_table.insert(id, v);
        }
        Ok(ContentEncoder {
            embed_dim,
            imp: ContentImpl::Precomputed { table: norm_table },
            calls: AtomicU64::new(0),
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    /// How many times `embed` has run (frozenness/mode checks).
    pub fn invocations(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn kind(&self) -> &'static str {
        match self.imp {
            ContentImpl::Tfidf { .. } => "tfidf_projection",
            ContentImpl::Precomputed { .. } => "precomputed",
        }
    }

    pub fn embed(&self, docs: &[&Document]) -> Result<EmbeddingMatrix> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let mut data = Mat::zeros(docs.len(), self.embed_dim);
        match &self.imp {
            ContentImpl::Tfidf { cfg, idf, projection } => {
                for (i, d) in docs.iter().enumerate() {
                    let f = content_features(&d.raw_text, cfg, idf)?;
                    if f.is_empty() {
                        return Err(Error::Validation(format!(
                            "document '{}' has no content features",
                            d.doc_id
                        )));
                    }
                    let row = data.row_mut(i);
                    for (k, v) in f.indices.iter().zip(&f.values) {
                        let prow = projection.row(*k as usize);
                        for j in 0..row.len() {
                            row[j] += v * prow[j];
                        }
                    }
                    renormalize(row).map_err(|_| {
                        Error::Numeric(format!("degenerate content projection for '{}'", d.doc_id))
                    })?;
                }
            }
            ContentImpl::Precomputed { table } => {
                let missing: Vec<&str> = docs
                    .iter()
                    .filter(|d| !table.contains_key(&d.doc_id))
                    .map(|d| d.doc_id.as_str())
                    .collect();
                if !missing.is_empty() {
                    return Err(Error::Validation(format!(
                        "doc_ids missing from embedding table: {}",
                        missing.join(", ")
                    )));
                }
                for (i, d) in docs.iter().enumerate() {
                    data.row_mut(i).copy_from_slice(&table[&d.doc_id]);
                }
            }
        }
        Ok(EmbeddingMatrix {
            data,
            doc_ids: docs.iter().map(|d| d.doc_id.clone()).collect(),
            source: EmbeddingSource::Content,
        })
    }
}

/// Parse an embedding table file: header `dim=<d>`, then lines
/// `doc_id<TAB>v1,v2,...,vd`.
fn read_embedding_table(path: &Path) -> Result<(usize, BTreeMap<String, Vec<f64>>)> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(f).lines().enumerate();
    let header = match lines.next() {
        Some((_, Ok(l))) => l,
        Some((_, Err(e))) => return Err(Error::io(path, e)),
        None => {
            return Err(Error::Parse { path: path.into(), line: 1, msg: "empty file".into() })
        }
    };
    let dim: usize = header
        .strip_prefix("dim=")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Parse {
            path: path.into(),
            line: 1,
            msg: format!("expected 'dim=<d>' header, got '{header}'"),
        })?;
    let mut table = BTreeMap::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, rest) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.into(),
            line: i + 1,
            msg: "expected 'doc_id<TAB>v1,v2,...'".into(),
        })?;
        let mut v = Vec::with_capacity(dim);
        for part in rest.split(',') {
            let x: f64 = part.trim().parse().map_err(|_| Error::Parse {
                path: path.into(),
                line: i + 1,
                msg: format!("bad float '{part}'"),
            })?;
            v.push(x);
        }
        if v.len() != dim {
            return Err(Error::Parse {
                path: path.into(),
                line: i + 1,
                msg: format!("vector for '{id}' has {} dims, header says {dim}", v.len()),
            });
        }
        if table.insert(id.to_string(), v).is_some() {
            return Err(Error::Parse {
                path: path.into(),
                line: i + 1,
                msg: format!("duplicate doc_id '{id}'"),
            });
        }
    }
    Ok((dim, table))
}

/// Import precomputed content embeddings; vectors are renormalized.
pub fn import_embeddings(path: &Path) -> Result<ContentEncoder> {
    let (dim, table) = read_embedding_table(path)?;
    if table.is_empty() {
        return Err(Error::Parse { path: path.into(), line: 1, msg: "no records".into() });
    }
    let enc = ContentEncoder::from_table(table)?;
    debug_assert_eq!(enc.embed_dim(), dim);
    Ok(enc)
}

/// Import with an optional fixed random projection to `target_dim` when the
/// file's dimension differs (seeded, deterministic).
pub fn import_embeddings_projected(
    path: &Path,
    target_dim: usize,
    seed: u64,
) -> Result<ContentEncoder> {
    let (dim, table) = read_embedding_table(path)?;
    if dim == target_dim {
        return ContentEncoder::from_table(table);
    }
    let mut rng = seeds::rng(seed, "import_projection", &[]);
    let proj = Mat::from_fn(dim, target_dim, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let mut projected = BTreeMap::new();
    for (id, v) in table {
        let mut out = vec![0.0; target_dim];
        for (k, x) in v.iter().enumerate() {
            let prow = proj.row(k);
            for j in 0..target_dim {
                out[j] += x * prow[j];
            }
        }
        projected.insert(id, out);
    }
    ContentEncoder::from_table(projected)
}

/// Write an embedding table in the import format.
pub fn export_embeddings(path: &Path, emb: &EmbeddingMatrix) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    writeln!(w, "dim={}", emb.dim()).map_err(|e| Error::io(path, e))?;
    for i in 0..emb.n() {
        let vals: Vec<String> = emb.row(i).iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}\t{}", emb.doc_ids[i], vals.join(",")).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

const CKPT_MAGIC: &[u8; 8] = b"DTGLCKP1";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    feature_cfg: FeatureConfig,
    hidden_dim: usize,
    embed_dim: usize,
    dropout_p: f64,
    log_tau: f64,
    step: u64,
}

pub struct Checkpoint {
    pub encoder: StyleEncoder,
    pub log_tau: f64,
    pub step: u64,
}

/// Versioned binary checkpoint: magic, JSON header, then the four named
/// parameter tensors.
pub fn save_checkpoint(path: &Path, enc: &StyleEncoder, log_tau: f64, step: u64) -> Result<()> {
    let header = CheckpointHeader {
        feature_cfg: enc.feature_cfg.clone(),
        hidden_dim: enc.hidden_dim,
        embed_dim: enc.embed_dim,
        dropout_p: enc.dropout_p,
        log_tau,
        step,
    };
    let hjson = serde_json::to_vec(&header)
        .map_err(|e| Error::Validation(format!("serialize checkpoint header: {e}")))?;
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    let werr = |e| Error::io(path, e);
    w.write_all(CKPT_MAGIC).map_err(werr)?;
    w.write_all(&(hjson.len() as u32).to_le_bytes()).map_err(werr)?;
    w.write_all(&hjson).map_err(werr)?;
    for (_, m) in enc.params() {
        m.write_to(&mut w).map_err(werr)?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = std::io::BufReader::new(f);
    let rerr = |e| Error::io(path, e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(rerr)?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Parse {
            path: path.into(),
            line: 0,
            msg: "not a style encoder checkpoint (bad magic)".into(),
        });
    }
    let mut len4 = [0u8; 4];
    r.read_exact(&mut len4).map_err(rerr)?;
    let mut hjson = vec![0u8; u32::from_le_bytes(len4) as usize];
    r.read_exact(&mut hjson).map_err(rerr)?;
    let header: CheckpointHeader = serde_json::from_slice(&hjson).map_err(|e| Error::Parse {
        path: path.into(),
        line: 0,
        msg: format!("checkpoint header: {e}"),
    })?;
    let w1 = Mat::read_from(&mut r).map_err(rerr)?;
    let b1 = Mat::read_from(&mut r).map_err(rerr)?;
    let w2 = Mat::read_from(&mut r).map_err(rerr)?;
    let b2 = Mat::read_from(&mut r).map_err(rerr)?;
    let enc = StyleEncoder {
        feature_cfg: header.feature_cfg,
        hidden_dim: header.hidden_dim,
        embed_dim: header.embed_dim,
        dropout_p: header.dropout_p,
        w1,
        b1,
        w2,
        b2,
    };
    if enc.w1.rows() != enc.feature_cfg.style_dim()
        || enc.w1.cols() != enc.hidden_dim
        || enc.w2.rows() != enc.hidden_dim
        || enc.w2.cols() != enc.embed_dim
    {
        return Err(Error::Parse {
            path: path.into(),
            line: 0,
            msg: "checkpoint tensor shapes disagree with header".into(),
        });
    }
    Ok(Checkpoint { encoder: enc, log_tau: header.log_tau, step: header.step })
}
