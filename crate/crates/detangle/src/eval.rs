use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::encoders::{ContentEncoder, EmbeddingMatrix, StyleEncoder};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::seeds;

/// Anything that can map documents to unit-norm embeddings.
pub trait DocEmbedder: Sync {
    fn embed_docs(&self, docs: &[&Document]) -> Result<EmbeddingMatrix>;
}

impl DocEmbedder for StyleEncoder {
    fn embed_docs(&self, docs: &[&Document]) -> Result<EmbeddingMatrix> {
        self.embed(docs)
    }
}

impl DocEmbedder for ContentEncoder {
    fn embed_docs(&self, docs: &[&Document]) -> Result<EmbeddingMatrix> {
        self.embed(docs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionRule {
    NearestDoc,
    Centroid,
}

impl AttributionRule {
    pub fn name(&self) -> &'static str {
        match self {
            AttributionRule::NearestDoc => "nearest_doc",
            AttributionRule::Centroid => "centroid",
        }
    }
}

impl std::str::FromStr for AttributionRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<AttributionRule> {
        match s {
            "nearest_doc" => Ok(AttributionRule::NearestDoc),
            "centroid" => Ok(AttributionRule::Centroid),
            other => Err(Error::Config(format!(
                "unknown attribution rule '{other}' (expected nearest_doc or centroid)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Prediction {
    pub author: String,
    /// Winning reference document under nearest_doc; absent for centroid.
    pub nearest_doc: Option<String>,
    pub similarity: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Core decision over cached embeddings: `ref_rows` indexes the usable
/// reference rows. Exact similarity ties break to the smallest author id
/// (then doc id under nearest_doc).
fn attribute_rows(
    query: &[f64],
    emb: &Mat,
    ref_rows: &[usize],
    row_authors: &[String],
    row_doc_ids: &[String],
    rule: AttributionRule,
) -> Result<Prediction> {
    if ref_rows.is_empty() {
        return Err(Error::Validation("attribution with empty reference set".into()));
    }
    match rule {
        AttributionRule::NearestDoc => {
            let mut best: Option<(f64, &str, &str)> = None;
            for &r in ref_rows {
                let s = dot(query, emb.row(r));
                let cand = (s, row_authors[r].as_str(), row_doc_ids[r].as_str());
                best = Some(match best {
                    None => cand,
                    Some(b) => {
                        if cand.0 > b.0 || (cand.0 == b.0 && (cand.1, cand.2) < (b.1, b.2)) {
                            cand
                        } else {
                            b
                        }
                    }
                });
            }
            let (similarity, author, doc) = best.unwrap();
            Ok(Prediction {
                author: author.to_string(),
                nearest_doc: Some(doc.to_string()),
                similarity,
            })
        }
        AttributionRule::Centroid => {
            let d = emb.cols();
            let mut sums: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
            for &r in ref_rows {
                let e = sums.entry(row_authors[r].as_str()).or_insert_with(|| (vec![0.0; d], 0));
                for (acc, v) in e.0.iter_mut().zip(emb.row(r)) {
                    *acc += v;
                }
                e.1 += 1;
            }
            let mut best: Option<(f64, &str)> = None;
            for (author, (sum, count)) in &sums {
                let mut c: Vec<f64> = sum.iter().map(|v| v / *count as f64).collect();
                let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(Error::Numeric(format!(
                        "centroid for author '{author}' collapsed to zero"
                    )));
                }
                for v in &mut c {
                    *v /= norm;
                }
                let s = dot(query, &c);
                best = Some(match best {
                    None => (s, author),
                    Some(b) => {
                        if s > b.0 || (s == b.0 && *author < b.1) {
                            (s, author)
                        } else {
                            b
                        }
                    }
                });
            }
            let (similarity, author) = best.unwrap();
            Ok(Prediction { author: author.to_string(), nearest_doc: None, similarity })
        }
    }
}

/// Attribute each query document to an author using the reference documents.
pub fn attribute(
    queries: &[&Document],
    references: &[&Document],
    encoder: &dyn DocEmbedder,
    rule: AttributionRule,
) -> Result<Vec<Prediction>> {
    if references.is_empty() {
        return Err(Error::Validation("attribution with empty reference set".into()));
    }
    let q = encoder.embed_docs(queries)?;
    let r = encoder.embed_docs(references)?;
    q.validate_unit_rows()?;
    r.validate_unit_rows()?;
    let ref_authors: Vec<String> = references.iter().map(|d| d.author_id.clone()).collect();
    let ref_ids: Vec<String> = references.iter().map(|d| d.doc_id.clone()).collect();
    let all_rows: Vec<usize> = (0..references.len()).collect();
    (0..queries.len())
        .map(|i| attribute_rows(q.row(i), &r.data, &all_rows, &ref_authors, &ref_ids, rule))
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttributionTrial {
    pub trial_index: u64,
    pub query_doc_ids: Vec<String>,
    pub truths: Vec<String>,
    pub predictions: Vec<Prediction>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub same_topic_miss_ratio: f64,
    pub no_misses: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rule: AttributionRule,
    pub n_trials: usize,
    pub n_authors: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub same_topic_miss_ratio: f64,
    /// Trials where every query was attributed correctly (ratio reported 0).
    pub no_miss_trials: usize,
    /// Query accuracy grouped by the true author's modal topic.
    pub per_category: BTreeMap<String, f64>,
    pub mean_category_accuracy: f64,
    pub trials: Vec<TrialMetrics>,
}

pub struct EvalRun {
    pub report: MetricsReport,
    pub trials: Vec<AttributionTrial>,
}

/// Unweighted mean of per-class F1 over the true-label classes.
pub fn macro_f1(predictions: &[String], truths: &[String]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::Shape(format!(
            "macro_f1: {} predictions vs {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::Validation("macro_f1 on empty label set".into()));
    }
    let classes: BTreeSet<&String> = truths.iter().collect();
    let mut total = 0.0;
    for c in &classes {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (p, t) in predictions.iter().zip(truths) {
            let pc = p == *c;
            let tc = t == *c;
            match (pc, tc) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        if tp > 0 {
            let p = tp as f64 / (tp + fp) as f64;
            let r = tp as f64 / (tp + fn_) as f64;
            total += 2.0 * p * r / (p + r);
        }
    }
    Ok(total / classes.len() as f64)
}

/// Among misattributed queries, the fraction whose predicted author shares
/// the true author's (modal) topic. No misses → (0, flagged).
pub fn same_topic_miss_ratio(
    trial: &AttributionTrial,
    modal_topic: &BTreeMap<String, String>,
) -> (f64, bool) {
    let mut misses = 0usize;
    let mut same = 0usize;
    for (pred, truth) in trial.predictions.iter().zip(&trial.truths) {
        if &pred.author != truth {
            misses += 1;
            if modal_topic.get(&pred.author) == modal_topic.get(truth) {
                same += 1;
            }
        }
    }
    if misses == 0 {
        (0.0, true)
    } else {
        (same as f64 / misses as f64, false)
    }
}

struct SubsetEmbeddings {
    emb: Mat,
    row_authors: Vec<String>,
    row_doc_ids: Vec<String>,
    /// author → embedding-row indexes of that author's documents
    author_rows: BTreeMap<String, Vec<usize>>,
}

fn embed_subset(
    corpus: &Corpus,
    authors: &BTreeSet<String>,
    encoder: &dyn DocEmbedder,
) -> Result<SubsetEmbeddings> {
    if authors.is_empty() {
        return Err(Error::Validation("evaluation on empty author subset".into()));
    }
    let mut docs: Vec<&Document> = Vec::new();
    let mut author_rows = BTreeMap::new();
    for a in authors {
        let idxs = corpus.docs_of(a);
        if idxs.is_empty() {
            return Err(Error::Validation(format!("author '{a}' not present in corpus")));
        }
        if idxs.len() < 2 {
            return Err(Error::Validation(format!(
                "author '{a}' has {} document(s); need >= 2 to hold one out",
                idxs.len()
            )));
        }
        let rows: Vec<usize> = idxs
            .iter()
            .map(|&i| {
                docs.push(corpus.doc(i));
                docs.len() - 1
            })
            .collect();
        author_rows.insert(a.clone(), rows);
    }
    let emb = encoder.embed_docs(&docs)?;
    emb.validate_unit_rows()?;
    Ok(SubsetEmbeddings {
        emb: emb.data,
        row_authors: docs.iter().map(|d| d.author_id.clone()).collect(),
        row_doc_ids: docs.iter().map(|d| d.doc_id.clone()).collect(),
        author_rows,
    })
}

/// The repeated held-one-out protocol: per trial, pick one query document per
/// author; attribute it against all remaining documents (no query of any
/// author stays in the reference pool). Embeddings are computed once and
/// shared across trials; only the query choice is resampled.
pub fn run_trials(
    corpus: &Corpus,
    authors: &BTreeSet<String>,
    encoder: &dyn DocEmbedder,
    n_trials: usize,
    seed: u64,
    rule: AttributionRule,
) -> Result<EvalRun> {
    if n_trials == 0 {
        return Err(Error::Config("n_trials must be >= 1".into()));
    }
    let sub = embed_subset(corpus, authors, encoder)?;
    let modal: BTreeMap<String, String> = authors
        .iter()
        .map(|a| (a.clone(), corpus.modal_topic(a).unwrap_or("unknown").to_string()))
        .collect();

    let trials: Vec<(TrialMetrics, AttributionTrial, BTreeMap<String, (usize, usize)>)> = (0
        ..n_trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeds::rng(seed, "trial", &[t]);
            let mut query_rows = Vec::with_capacity(sub.author_rows.len());
            for rows in sub.author_rows.values() {
                query_rows.push(rows[rng.random_range(0..rows.len())]);
            }
            let in_query: BTreeSet<usize> = query_rows.iter().copied().collect();
            let ref_rows: Vec<usize> =
                (0..sub.emb.rows()).filter(|r| !in_query.contains(r)).collect();

            let mut predictions = Vec::with_capacity(query_rows.len());
            let mut truths = Vec::with_capacity(query_rows.len());
            let mut query_doc_ids = Vec::with_capacity(query_rows.len());
            for &q in &query_rows {
                predictions.push(attribute_rows(
                    sub.emb.row(q),
                    &sub.emb,
                    &ref_rows,
                    &sub.row_authors,
                    &sub.row_doc_ids,
                    rule,
                )?);
                truths.push(sub.row_authors[q].clone());
                query_doc_ids.push(sub.row_doc_ids[q].clone());
            }
            let trial = AttributionTrial { trial_index: t, query_doc_ids, truths, predictions };

            let correct = trial
                .predictions
                .iter()
                .zip(&trial.truths)
                .filter(|(p, t)| &p.author == *t)
                .count();
            let accuracy = correct as f64 / trial.truths.len() as f64;
            let preds: Vec<String> =
                trial.predictions.iter().map(|p| p.author.clone()).collect();
            let f1 = macro_f1(&preds, &trial.truths)?;
            let (stm, no_misses) = same_topic_miss_ratio(&trial, &modal);

            // per modal-topic (correct, total) for this trial
            let mut cat: BTreeMap<String, (usize, usize)> = BTreeMap::new();
            for (p, t) in trial.predictions.iter().zip(&trial.truths) {
                let topic = modal.get(t).cloned().unwrap_or_else(|| "unknown".into());
                let e = cat.entry(topic).or_insert((0, 0));
                e.1 += 1;
                if &p.author == t {
                    e.0 += 1;
                }
            }
            Ok((
                TrialMetrics { accuracy, macro_f1: f1, same_topic_miss_ratio: stm, no_misses },
                trial,
                cat,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = trials.len() as f64;
    let mean = |f: &dyn Fn(&TrialMetrics) -> f64| trials.iter().map(|(m, _, _)| f(m)).sum::<f64>() / n;
    let mut per_category: BTreeMap<String, f64> = BTreeMap::new();
    {
        let mut acc: BTreeMap<&String, (f64, usize)> = BTreeMap::new();
        for (_, _, cat) in &trials {
            for (topic, (c, tot)) in cat {
                let e = acc.entry(topic).or_insert((0.0, 0));
                e.0 += *c as f64 / *tot as f64;
                e.1 += 1;
            }
        }
        for (topic, (sum, count)) in acc {
            per_category.insert(topic.clone(), sum / count as f64);
        }
    }
    let mean_category_accuracy = if per_category.is_empty() {
        0.0
    } else {
        per_category.values().sum::<f64>() / per_category.len() as f64
    };
    let report = MetricsReport {
        rule,
        n_trials,
        n_authors: authors.len(),
        accuracy: mean(&|m| m.accuracy),
        macro_f1: mean(&|m| m.macro_f1),
        same_topic_miss_ratio: mean(&|m| m.same_topic_miss_ratio),
        no_miss_trials: trials.iter().filter(|(m, _, _)| m.no_misses).count(),
        per_category,
        mean_category_accuracy,
        trials: trials.iter().map(|(m, _, _)| m.clone()).collect(),
    };
    Ok(EvalRun { report, trials: trials.into_iter().map(|(_, t, _)| t).collect() })
}

#[derive(Clone, Debug, Serialize)]
pub struct CategoryAccuracy {
    pub accuracy: f64,
    pub n_authors: usize,
    /// Set when the topic has < 2 authors: the restricted protocol is
    /// trivially perfect there.
    pub flagged: bool,
}

/// Restricted per-topic protocol: authors are grouped by modal topic and each
/// group is evaluated in isolation (both queries and references drawn only
/// from that group).
pub fn per_category_accuracy(
    corpus: &Corpus,
    authors: &BTreeSet<String>,
    encoder: &dyn DocEmbedder,
    n_trials: usize,
    seed: u64,
    rule: AttributionRule,
) -> Result<BTreeMap<String, CategoryAccuracy>> {
    let mut groups: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for a in authors {
        let topic = corpus.modal_topic(a).unwrap_or("unknown").to_string();
        groups.entry(topic).or_default().insert(a.clone());
    }
    let mut out = BTreeMap::new();
    for (topic, group) in groups {
        let n_authors = group.len();
        if n_authors < 2 {
            out.insert(topic, CategoryAccuracy { accuracy: 1.0, n_authors, flagged: true });
            continue;
        }
        let run = run_trials(corpus, &group, encoder, n_trials, seeds::derive(seed, "category", &[seeds::hash_str(&topic)]), rule)?;
        out.insert(
            topic,
            CategoryAccuracy { accuracy: run.report.accuracy, n_authors, flagged: false },
        );
    }
    Ok(out)
}

/// Authors ranked by how many distinct topics they publish in (descending),
/// ties by author id ascending; first k. Returns the subset and whether k was
/// clamped to the author count.
pub fn topk_diverse_subset(corpus: &Corpus, k: usize) -> Result<(Vec<String>, bool)> {
    if k == 0 {
        return Err(Error::Config("top-k subset needs k >= 1".into()));
    }
    let mut ranked: Vec<(usize, &String)> = corpus
        .authors()
        .iter()
        .map(|(a, idxs)| {
            let topics: BTreeSet<&str> =
                idxs.iter().map(|&i| corpus.doc(i).topic_id.as_str()).collect();
            (topics.len(), a)
        })
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(b.1)));
    let clamped = k > ranked.len();
    let take = k.min(ranked.len());
    Ok((ranked.into_iter().take(take).map(|(_, a)| a.clone()).collect(), clamped))
}
