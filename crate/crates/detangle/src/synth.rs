use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{split_by_authors, Corpus, CorpusRecord};
use crate::encoders::{ContentEncoder, ContentSource, StyleEncoder};
use crate::error::{Error, Result};
use crate::eval::{run_trials, AttributionRule};
use crate::features::tokenize;
use crate::seeds;
use crate::train::{fit, TrainConfig, TrainMode};

pub const FUNCTION_WORDS: [&str; 40] = [
    "the", "and", "of", "to", "a", "in", "that", "it", "is", "was", "he", "for", "on", "are",
    "as", "with", "his", "they", "at", "be", "this", "have", "from", "or", "one", "had", "by",
    "but", "not", "what", "all", "were", "when", "we", "there", "can", "an", "which", "their",
    "said",
];

pub const BACKGROUND_WORDS: [&str; 40] = [
    "time", "people", "way", "day", "man", "thing", "woman", "life", "child", "world", "school",
    "state", "family", "student", "group", "country", "problem", "hand", "part", "place", "case",
    "week", "company", "system", "program", "question", "work", "government", "number", "night",
    "point", "home", "water", "room", "mother", "area", "money", "story", "fact", "month",
];

const TOPIC_VOCAB: usize = 30;

const SYLLABLES: [&str; 20] = [
    "ba", "ce", "di", "fo", "gu", "ka", "le", "mi", "no", "pu", "ra", "se", "ti", "vo", "wa",
    "ze", "bri", "clo", "dra", "fle",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_authors: usize,
    pub n_topics: usize,
    pub docs_per_author: usize,
    /// Target word tokens per document (punctuation comes on top).
    pub doc_len: usize,
    /// Weight of the author-specific function-word distribution; also scales
    /// how far punctuation/sentence habits deviate from the shared default.
    pub style_strength: f64,
    /// Weight of the topic-specific content-word distribution.
    pub topic_strength: f64,
    /// Probability a document draws its author's preferred topic instead of
    /// a uniform one.
    pub entanglement: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_authors: 40,
            n_topics: 8,
            docs_per_author: 6,
            doc_len: 120,
            style_strength: 0.6,
            topic_strength: 0.35,
            entanglement: 0.9,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("style_strength", self.style_strength),
            ("topic_strength", self.topic_strength),
            ("entanglement", self.entanglement),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0,1]")));
            }
        }
        if self.style_strength + self.topic_strength > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "style_strength + topic_strength = {} exceeds 1",
                self.style_strength + self.topic_strength
            )));
        }
        if self.docs_per_author < 2 {
            return Err(Error::Config("docs_per_author must be >= 2".into()));
        }
        if self.n_authors == 0 || self.n_topics == 0 || self.doc_len == 0 {
            return Err(Error::Config("n_authors, n_topics, doc_len must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AuthorStyle {
    /// Normalized weights over FUNCTION_WORDS.
    pub function_word_weights: Vec<f64>,
    pub comma_rate: f64,
    pub exclaim_prob: f64,
    pub capitalize_prob: f64,
    pub mean_sentence_len: f64,
    pub preferred_topic: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: GeneratorConfig,
    pub authors: BTreeMap<String, AuthorStyle>,
    /// Per-topic content vocabulary (uniform within a topic).
    pub topic_words: Vec<Vec<String>>,
    pub doc_topics: BTreeMap<String, usize>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Unique letters-only pseudo-words: the i-th word overall is a 3-syllable
/// (or 4 for huge vocabularies) base-20 spelling of i.
fn topic_vocabulary(n_topics: usize) -> Vec<Vec<String>> {
    let n = SYLLABLES.len();
    let total = n_topics * TOPIC_VOCAB;
    let syl_count = if total > n * n * n { 4 } else { 3 };
    let mut out = Vec::with_capacity(n_topics);
    let mut i = 0usize;
    for _ in 0..n_topics {
        let mut words = Vec::with_capacity(TOPIC_VOCAB);
        for _ in 0..TOPIC_VOCAB {
            let mut w = String::new();
            let mut x = i;
            for _ in 0..syl_count {
                w.push_str(SYLLABLES[x % n]);
                x /= n;
            }
            words.push(w);
            i += 1;
        }
        out.push(words);
    }
    out
}

fn author_name(a: usize) -> String {
    format!("author{a:03}")
}

struct HabitRange {
    lo: f64,
    hi: f64,
    default: f64,
}

/// Habit = shared default + style_strength × (author draw − default), so
/// style_strength 0 erases all author identity.
fn draw_habit(rng: &mut ChaCha8Rng, r: &HabitRange, strength: f64) -> f64 {
    let drawn = r.lo + rng.random::<f64>() * (r.hi - r.lo);
    r.default + strength * (drawn - r.default)
}

fn draw_author_style(
    rng: &mut ChaCha8Rng,
    cfg: &GeneratorConfig,
    preferred_topic: usize,
) -> AuthorStyle {
    let s = cfg.style_strength;
    // sharpness 4 gives clearly separated profiles at s near 1, uniform at 0
    let mut weights: Vec<f64> =
        (0..FUNCTION_WORDS.len()).map(|_| (4.0 * s * normal(rng)).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    AuthorStyle {
        function_word_weights: weights,
        comma_rate: draw_habit(rng, &HabitRange { lo: 0.02, hi: 0.25, default: 0.1 }, s),
        exclaim_prob: draw_habit(rng, &HabitRange { lo: 0.0, hi: 0.5, default: 0.1 }, s),
        capitalize_prob: draw_habit(rng, &HabitRange { lo: 0.3, hi: 1.0, default: 0.9 }, s),
        mean_sentence_len: draw_habit(rng, &HabitRange { lo: 6.0, hi: 18.0, default: 11.0 }, s),
        preferred_topic,
    }
}

fn sample_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let mut u = rng.random::<f64>();
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn gen_document(
    rng: &mut ChaCha8Rng,
    cfg: &GeneratorConfig,
    style: &AuthorStyle,
    topic_words: &[String],
) -> String {
    let mut words_left = cfg.doc_len;
    let mut sentences = Vec::new();
    while words_left > 0 {
        let len = (style.mean_sentence_len + 2.0 * normal(rng)).round().max(3.0) as usize;
        let len = len.min(words_left.max(3));
        let mut sentence = String::new();
        for i in 0..len {
            let u = rng.random::<f64>();
            let mut word = if u < cfg.style_strength {
                FUNCTION_WORDS[sample_weighted(rng, &style.function_word_weights)].to_string()
            } else if u < cfg.style_strength + cfg.topic_strength {
                topic_words[rng.random_range(0..topic_words.len())].clone()
            } else {
                BACKGROUND_WORDS[rng.random_range(0..BACKGROUND_WORDS.len())].to_string()
            };
            if i == 0 && rng.random::<f64>() < style.capitalize_prob {
                let mut c = word.chars();
                word = c.next().unwrap().to_uppercase().collect::<String>() + c.as_str();
            }
            if i > 0 {
                sentence.push(' ');
            }
            sentence.push_str(&word);
            // punctuation rides on the word so token counts stay word-driven
            if i + 1 < len && rng.random::<f64>() < style.comma_rate {
                sentence.push(',');
            }
        }
        sentence.push(if rng.random::<f64>() < style.exclaim_prob { '!' } else { '.' });
        sentences.push(sentence);
        words_left = words_left.saturating_sub(len);
    }
    sentences.join(" ")
}

/// Generate a corpus whose style and topic factors are independently
/// controllable, plus the ground truth needed for oracle attribution.
pub fn gen_corpus(cfg: &GeneratorConfig) -> Result<(Corpus, GroundTruth)> {
    cfg.validate()?;
    let topic_words = topic_vocabulary(cfg.n_topics);
    let mut authors = BTreeMap::new();
    let mut doc_topics = BTreeMap::new();
    let mut records = Vec::with_capacity(cfg.n_authors * cfg.docs_per_author);
    for a in 0..cfg.n_authors {
        let mut arng = seeds::rng(cfg.seed, "author", &[a as u64]);
        let preferred = arng.random_range(0..cfg.n_topics);
        let style = draw_author_style(&mut arng, cfg, preferred);
        let name = author_name(a);
        for d in 0..cfg.docs_per_author {
            let mut drng = seeds::rng(cfg.seed, "doc", &[a as u64, d as u64]);
            let topic = if drng.random::<f64>() < cfg.entanglement {
                style.preferred_topic
            } else {
                drng.random_range(0..cfg.n_topics)
            };
            let doc_id = format!("a{a:03}_d{d:02}");
            let text = gen_document(&mut drng, cfg, &style, &topic_words[topic]);
            doc_topics.insert(doc_id.clone(), topic);
            records.push(CorpusRecord {
                doc_id,
                author: name.clone(),
                topic: format!("topic{topic:02}"),
                text,
            });
        }
        authors.insert(name, style);
    }
    let corpus = Corpus::from_records(records)?;
    Ok((corpus, GroundTruth { config: cfg.clone(), authors, topic_words, doc_topics }))
}

/// Max-likelihood attribution under the true generative distributions: an
/// empirical ceiling for any learned encoder. Only word tokens participate
/// (lowercased); ties go to the smallest author id.
pub fn oracle_attribution(corpus: &Corpus, truth: &GroundTruth) -> Result<f64> {
    let cfg = &truth.config;
    let fw_index: BTreeMap<&str, usize> =
        FUNCTION_WORDS.iter().enumerate().map(|(i, w)| (*w, i)).collect();
    let mut topic_index: BTreeMap<&str, usize> = BTreeMap::new();
    for (t, words) in truth.topic_words.iter().enumerate() {
        for w in words {
            topic_index.insert(w.as_str(), t);
        }
    }
    let bg_index: BTreeMap<&str, ()> = BACKGROUND_WORDS.iter().map(|w| (*w, ())).collect();
    let residual = 1.0 - cfg.style_strength - cfg.topic_strength;
    let bg_p = residual / BACKGROUND_WORDS.len() as f64;
    let topic_p = cfg.topic_strength / TOPIC_VOCAB as f64;

    let names: Vec<&String> = truth.authors.keys().collect();
    let mut correct = 0usize;
    for doc in corpus.documents() {
        let topic = *truth.doc_topics.get(&doc.doc_id).ok_or_else(|| {
            Error::Validation(format!("doc '{}' missing from ground truth", doc.doc_id))
        })?;
        let mut best: Option<(f64, &str)> = None;
        for name in &names {
            let style = &truth.authors[*name];
            let mut ll = 0.0;
            for tok in tokenize(&doc.raw_text) {
                if !tok.chars().all(|c| c.is_alphabetic()) {
                    continue;
                }
                let w = tok.to_lowercase();
                let mut p = 0.0;
                if let Some(&i) = fw_index.get(w.as_str()) {
                    p += cfg.style_strength * style.function_word_weights[i];
                }
                if topic_index.get(w.as_str()) == Some(&topic) {
                    p += topic_p;
                }
                if bg_index.contains_key(w.as_str()) {
                    p += bg_p;
                }
                ll += p.ln();
            }
            best = Some(match best {
                None => (ll, name.as_str()),
                Some(b) if ll > b.0 => (ll, name.as_str()),
                Some(b) => b,
            });
        }
        if best.unwrap().1 == doc.author_id {
            correct += 1;
        }
    }
    Ok(correct as f64 / corpus.n_docs() as f64)
}

/// Empirical author↔topic mutual information (nats) from document labels.
pub fn author_topic_mi(corpus: &Corpus) -> f64 {
    let n = corpus.n_docs() as f64;
    let mut joint: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    let mut pa: BTreeMap<&str, f64> = BTreeMap::new();
    let mut pt: BTreeMap<&str, f64> = BTreeMap::new();
    for d in corpus.documents() {
        *joint.entry((d.author_id.as_str(), d.topic_id.as_str())).or_default() += 1.0 / n;
        *pa.entry(d.author_id.as_str()).or_default() += 1.0 / n;
        *pt.entry(d.topic_id.as_str()).or_default() += 1.0 / n;
    }
    joint
        .iter()
        .map(|((a, t), p)| p * (p / (pa[a] * pt[t])).ln())
        .sum()
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub entanglement: f64,
    pub mode: TrainMode,
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub same_topic_miss_ratio: f64,
    pub mean_category_accuracy: f64,
    pub oracle_accuracy: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

/// gen → train → eval over levels × seeds × modes. Within one (level, seed)
/// cell every mode shares the corpus, split, content encoder, initial
/// weights, and evaluation seed, so mode differences are paired. Cells run
/// in parallel.
pub fn entanglement_sweep(
    base: &GeneratorConfig,
    train_cfg: &TrainConfig,
    feat: &crate::features::FeatureConfig,
    levels: &[f64],
    modes: &[TrainMode],
    sweep_seeds: &[u64],
    eval_trials: usize,
    rule: AttributionRule,
) -> Result<SweepReport> {
    if levels.is_empty() || modes.is_empty() || sweep_seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one level, mode, and seed".into()));
    }
    for l in levels {
        if !(0.0..=1.0).contains(l) {
            return Err(Error::Config(format!("entanglement level {l} outside [0,1]")));
        }
    }
    let cells: Vec<(usize, u64)> = levels
        .iter()
        .enumerate()
        .flat_map(|(li, _)| sweep_seeds.iter().map(move |&s| (li, s)))
        .collect();

    let cell_rows: Vec<Vec<SweepRow>> = cells
        .par_iter()
        .map(|&(li, sweep_seed)| -> Result<Vec<SweepRow>> {
            let cell = seeds::derive(base.seed, "cell", &[li as u64, sweep_seed]);
            // one corpus per level: seeds replicate training and evaluation,
            // so mode gaps pair within a fixed attribution problem
            let mut gen_cfg = base.clone();
            gen_cfg.entanglement = levels[li];
            gen_cfg.seed = seeds::derive(base.seed, "gen", &[li as u64]);
            let (corpus, truth) = gen_corpus(&gen_cfg)?;
            // wide validation split: snapshot selection runs on enough
            // held-out authors to pick comparable checkpoints across modes
            let split = split_by_authors(
                &corpus,
                (0.6, 0.2, 0.2),
                seeds::derive(base.seed, "split", &[li as u64]),
            )?;
            let oracle_accuracy = oracle_attribution(&corpus, &truth)?;
            // attribution over test authors the encoder never trained or
            // selected on, so a topic shortcut cannot hide behind author
            // memorization
            let eval_authors: BTreeSet<String> = split.test.clone();
            let eval_seed = seeds::derive(cell, "eval", &[]);
            let mut cfg = train_cfg.clone();
            cfg.seed = seeds::derive(cell, "train", &[]);
            // same derivation as fit, so the frozen baseline, the snapshot
            // content table, and every trained mode share one starting point
            let init = StyleEncoder::new(
                feat.clone(),
                cfg.hidden_dim,
                cfg.embed_dim,
                cfg.dropout_p,
                seeds::derive(cfg.seed, "init", &[]),
            )?;
            let content = match cfg.content {
                ContentSource::Fitted => {
                    ContentEncoder::fit_to_style(&init, &corpus, feat, cfg.content_ridge)?
                }
                ContentSource::Snapshot => ContentEncoder::from_style_snapshot(&init, &corpus)?,
                ContentSource::Tfidf => {
                    let train_texts = corpus.texts_of(&split.train);
                    ContentEncoder::new_tfidf(
                        train_texts.iter().copied(),
                        feat,
                        cfg.embed_dim,
                        seeds::derive(cell, "content", &[]),
                    )?
                }
            };

            let mut rows = Vec::with_capacity(modes.len());
            for &mode in modes {
                let (encoder, best_epoch) = match mode {
                    TrainMode::Frozen => (init.clone(), 0),
                    _ => {
                        let mut mc = cfg.clone();
                        mc.mode = mode;
                        let fitted = fit(
                            &corpus,
                            &split,
                            &mc,
                            feat,
                            (mode == TrainMode::Detangle).then_some(&content),
                        )?;
                        (fitted.encoder, fitted.record.best_epoch)
                    }
                };
                let run = run_trials(&corpus, &eval_authors, &encoder, eval_trials, eval_seed, rule)?;
                rows.push(SweepRow {
                    entanglement: levels[li],
                    mode,
                    seed: sweep_seed,
                    accuracy: run.report.accuracy,
                    macro_f1: run.report.macro_f1,
                    same_topic_miss_ratio: run.report.same_topic_miss_ratio,
                    mean_category_accuracy: run.report.mean_category_accuracy,
                    oracle_accuracy,
                    best_epoch,
                });
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SweepReport { rows: cell_rows.into_iter().flatten().collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureConfig;

    #[test]
    fn generation_is_deterministic_and_clean() {
        let cfg = GeneratorConfig {
            n_authors: 6,
            n_topics: 3,
            docs_per_author: 3,
            doc_len: 40,
            seed: 5,
            ..GeneratorConfig::default()
        };
        let (c1, t1) = gen_corpus(&cfg).unwrap();
        let (c2, _) = gen_corpus(&cfg).unwrap();
        assert_eq!(c1.n_docs(), 18);
        for (d1, d2) in c1.documents().iter().zip(c2.documents()) {
            assert_eq!(d1.doc_id, d2.doc_id);
            assert_eq!(d1.raw_text, d2.raw_text);
        }
        // corpus invariants survived cleaning
        for (a, docs) in c1.authors() {
            assert!(docs.len() >= 2, "author {a}");
        }
        assert_eq!(t1.doc_topics.len(), 18);
        // topic words are letters-only and globally unique
        let mut seen = BTreeSet::new();
        for words in &t1.topic_words {
            for w in words {
                assert!(w.chars().all(|c| c.is_ascii_lowercase()));
                assert!(seen.insert(w.clone()), "duplicate topic word {w}");
            }
        }
    }

    #[test]
    fn entanglement_one_pins_each_author_to_a_topic() {
        let cfg = GeneratorConfig {
            n_authors: 10,
            n_topics: 5,
            docs_per_author: 4,
            doc_len: 30,
            entanglement: 1.0,
            seed: 2,
            ..GeneratorConfig::default()
        };
        let (corpus, _) = gen_corpus(&cfg).unwrap();
        for (author, docs) in corpus.authors() {
            let topics: BTreeSet<&str> =
                docs.iter().map(|&i| corpus.doc(i).topic_id.as_str()).collect();
            assert_eq!(topics.len(), 1, "author {author} spans {topics:?}");
        }
    }

    #[test]
    fn entanglement_zero_topics_near_uniform() {
        let cfg = GeneratorConfig {
            n_authors: 50,
            n_topics: 10,
            docs_per_author: 20,
            doc_len: 10,
            entanglement: 0.0,
            seed: 3,
            ..GeneratorConfig::default()
        };
        let (corpus, _) = gen_corpus(&cfg).unwrap();
        let n = corpus.n_docs() as f64; // 1000
        let mut counts: BTreeMap<&str, f64> = BTreeMap::new();
        for d in corpus.documents() {
            *counts.entry(d.topic_id.as_str()).or_default() += 1.0;
        }
        let expected = n / 10.0;
        let chi2: f64 = counts.values().map(|c| (c - expected).powi(2) / expected).sum();
        // χ²(9df) critical value at 0.01
        assert!(chi2 < 21.67, "chi2 {chi2} with counts {counts:?}");
    }

    #[test]
    fn style_strength_zero_gives_chance_attribution() {
        let cfg = GeneratorConfig {
            n_authors: 20,
            n_topics: 5,
            docs_per_author: 6,
            doc_len: 60,
            style_strength: 0.0,
            topic_strength: 0.35,
            entanglement: 0.0,
            seed: 8,
        };
        let (corpus, _) = gen_corpus(&cfg).unwrap();
        let feat = FeatureConfig { hash_dim: 512, ..FeatureConfig::default() };
        let enc = StyleEncoder::new(feat, 16, 8, 0.0, 5).unwrap();
        let authors: BTreeSet<String> = corpus.author_ids().cloned().collect();
        let run =
            run_trials(&corpus, &authors, &enc, 5, 6, AttributionRule::NearestDoc).unwrap();
        // chance is 1/20 = 0.05; allow generous Monte Carlo slack
        assert!(run.report.accuracy < 0.2, "accuracy {}", run.report.accuracy);
    }

    #[test]
    fn oracle_handles_trivial_cases() {
        // single author
        let cfg = GeneratorConfig {
            n_authors: 1,
            n_topics: 2,
            docs_per_author: 3,
            doc_len: 30,
            seed: 1,
            ..GeneratorConfig::default()
        };
        let (corpus, truth) = gen_corpus(&cfg).unwrap();
        assert_eq!(oracle_attribution(&corpus, &truth).unwrap(), 1.0);

        // disjoint per-author vocabularies: one-hot function-word styles
        let cfg2 = GeneratorConfig {
            n_authors: 2,
            n_topics: 1,
            docs_per_author: 2,
            doc_len: 5,
            style_strength: 1.0,
            topic_strength: 0.0,
            entanglement: 1.0,
            seed: 0,
        };
        let mk = |word: usize, topic: usize| AuthorStyle {
            function_word_weights: (0..FUNCTION_WORDS.len())
                .map(|i| if i == word { 1.0 } else { 0.0 })
                .collect(),
            comma_rate: 0.0,
            exclaim_prob: 0.0,
            capitalize_prob: 0.0,
            mean_sentence_len: 5.0,
            preferred_topic: topic,
        };
        let recs = vec![
            ("x0", "alice", "the the the"),
            ("x1", "alice", "the the"),
            ("y0", "bob", "and and and"),
            ("y1", "bob", "and and"),
        ];
        let corpus2 = Corpus::from_records(
            recs.iter()
                .map(|(id, a, text)| CorpusRecord {
                    doc_id: id.to_string(),
                    author: a.to_string(),
                    topic: "t".into(),
                    text: text.to_string(),
                })
                .collect(),
        )
        .unwrap();
        let truth2 = GroundTruth {
            config: cfg2,
            authors: [("alice".to_string(), mk(0, 0)), ("bob".to_string(), mk(1, 0))].into(),
            topic_words: vec![vec![]],
            doc_topics: ["x0", "x1", "y0", "y1"]
                .iter()
                .map(|id| (id.to_string(), 0))
                .collect(),
        };
        assert_eq!(oracle_attribution(&corpus2, &truth2).unwrap(), 1.0);

        // id mismatch
        let mut broken = truth2.clone();
        broken.doc_topics.remove("x0");
        assert!(oracle_attribution(&corpus2, &broken).is_err());
    }

    #[test]
    fn mutual_information_monotone_in_entanglement() {
        let mut mis = Vec::new();
        for (i, level) in [0.0, 0.5, 1.0].iter().enumerate() {
            let cfg = GeneratorConfig {
                n_authors: 50,
                n_topics: 8,
                docs_per_author: 20,
                doc_len: 8,
                entanglement: *level,
                seed: 21 + i as u64, // independent draws per level
                ..GeneratorConfig::default()
            };
            let (corpus, _) = gen_corpus(&cfg).unwrap();
            mis.push(author_topic_mi(&corpus));
        }
        assert!(mis[0] < mis[1] && mis[1] < mis[2], "MI not monotone: {mis:?}");
    }

    #[test]
    fn config_guards() {
        let bad = GeneratorConfig { style_strength: 0.8, topic_strength: 0.4, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = GeneratorConfig { docs_per_author: 1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = GeneratorConfig { entanglement: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sweep_bookkeeping_and_pairing() {
        let base = GeneratorConfig {
            n_authors: 8,
            n_topics: 3,
            docs_per_author: 3,
            doc_len: 30,
            seed: 17,
            ..GeneratorConfig::default()
        };
        let train_cfg = TrainConfig {
            batch_authors: 4,
            hidden_dim: 8,
            embed_dim: 4,
            epochs: 1,
            max_tokens: 32,
            val_trials: 1,
            ..TrainConfig::default()
        };
        let feat = FeatureConfig { hash_dim: 128, ..FeatureConfig::default() };
        let modes = [TrainMode::Frozen, TrainMode::Simple];
        let report =
            entanglement_sweep(&base, &train_cfg, &feat, &[0.5], &modes, &[0, 1], 2, AttributionRule::NearestDoc).unwrap();
        assert_eq!(report.rows.len(), 4); // 1 level × 2 modes × 2 seeds
        // same cell shares the oracle ceiling across modes
        for s in [0u64, 1] {
            let cell: Vec<&SweepRow> = report.rows.iter().filter(|r| r.seed == s).collect();
            assert_eq!(cell.len(), 2);
            assert_eq!(cell[0].oracle_accuracy, cell[1].oracle_accuracy);
        }
        // deterministic
        let again =
            entanglement_sweep(&base, &train_cfg, &feat, &[0.5], &modes, &[0, 1], 2, AttributionRule::NearestDoc).unwrap();
        assert_eq!(
            serde_json::to_string(&report).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }
}
