use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of stylometric scalar slots appended after the hashed n-gram block:
/// punctuation frequency, mean/std sentence length, type-token ratio,
/// uppercase ratio, digit ratio.
pub const STYLE_SCALARS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Smallest character n-gram order for style features.
    pub ngram_min: usize,
    /// Largest character n-gram order (inclusive).
    pub ngram_max: usize,
    /// Hash space size; must be a power of two.
    pub hash_dim: usize,
    /// Append the stylometric scalar block to style features.
    pub use_stylometrics: bool,
    /// Lowercase tokens before hashing content features.
    pub lowercase_content: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            ngram_min: 2,
            ngram_max: 4,
            hash_dim: 1 << 16,
            use_stylometrics: true,
            lowercase_content: true,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ngram_min < 1 || self.ngram_max < self.ngram_min {
            return Err(Error::Config(format!(
                "ngram range {}..{} invalid (orders must be >= 1, min <= max)",
                self.ngram_min, self.ngram_max
            )));
        }
        if self.hash_dim == 0 || !self.hash_dim.is_power_of_two() {
            return Err(Error::Config(format!(
                "hash_dim {} must be a power of two",
                self.hash_dim
            )));
        }
        Ok(())
    }

    /// Dimension of style feature vectors: hashed n-grams plus scalar block.
    pub fn style_dim(&self) -> usize {
        self.hash_dim + if self.use_stylometrics { STYLE_SCALARS } else { 0 }
    }

    /// Dimension of content feature vectors (hash space only).
    pub fn content_dim(&self) -> usize {
        self.hash_dim
    }
}

/// Sparse feature vector: parallel (indices, values) with indices strictly
/// increasing, all below `dim`. Empty text yields an empty vector.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
    pub dim: usize,
}

impl FeatureVector {
    pub fn empty(dim: usize) -> Self {
        FeatureVector { indices: Vec::new(), values: Vec::new(), dim }
    }

    fn from_map(map: BTreeMap<u32, f64>, dim: usize) -> Self {
        let mut indices = Vec::with_capacity(map.len());
        let mut values = Vec::with_capacity(map.len());
        for (k, v) in map {
            if v != 0.0 {
                indices.push(k);
                values.push(v);
            }
        }
        FeatureVector { indices, values, dim }
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scale to unit L2 norm; empty vectors pass through unchanged.
    pub fn l2_normalized(mut self) -> Self {
        let n = self.l2_norm();
        if n > 0.0 {
            for v in &mut self.values {
                *v /= n;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.indices.len() != self.values.len() {
            return Err(Error::Shape("indices/values length mismatch".into()));
        }
        for w in self.indices.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Validation("indices not strictly increasing".into()));
            }
        }
        if let Some(&last) = self.indices.last() {
            if (last as usize) >= self.dim {
                return Err(Error::Validation(format!("index {} >= dim {}", last, self.dim)));
            }
        }
        if !self.values.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        Ok(())
    }

    pub fn to_sparse_row(&self) -> Vec<(u32, f64)> {
        self.indices.iter().copied().zip(self.values.iter().copied()).collect()
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        let (mut i, mut j, mut s) = (0, 0, 0.0);
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    s += self.values[i] * other.values[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        s
    }
}

fn is_punct_char(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Byte spans of tokens: whitespace-separated runs, with every punctuation
/// character split out as its own token.
pub fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                spans.push((s, i));
            }
        } else if is_punct_char(c) {
            if let Some(s) = start.take() {
                spans.push((s, i));
            }
            spans.push((i, i + c.len_utf8()));
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// Whitespace tokenization with punctuation marks kept as standalone tokens;
/// nothing is dropped, so punctuation presence survives intact.
pub fn tokenize(text: &str) -> Vec<String> {
    token_spans(text).into_iter().map(|(a, b)| text[a..b].to_string()).collect()
}

/// FNV-1a over the concatenated byte parts.
pub(crate) fn hash_parts(parts: &[&[u8]]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x100_0000_01b3;
    let mut h = OFFSET;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    }
    h
}

fn slot(h: u64, dim: usize) -> u32 {
    (h & (dim as u64 - 1)) as u32
}

/// The six stylometric scalars in slot order, computed before normalization:
/// punctuation per token, mean/std sentence length in tokens, type-token
/// ratio, uppercase ratio over letters, digit ratio over non-whitespace.
pub fn stylometric_scalars(text: &str) -> [f64; STYLE_SCALARS] {
    let tokens = tokenize(text);
    let n_tok = tokens.len();

    let n_punct = tokens
        .iter()
        .filter(|t| t.chars().all(is_punct_char) && !t.is_empty())
        .count();
    let punct_freq = if n_tok > 0 { n_punct as f64 / n_tok as f64 } else { 0.0 };

    // sentence = tokens up to and including a terminator mark
    let mut lens = Vec::new();
    let mut cur = 0usize;
    for t in &tokens {
        cur += 1;
        if t == "." || t == "!" || t == "?" {
            lens.push(cur as f64);
            cur = 0;
        }
    }
    if cur > 0 {
        lens.push(cur as f64);
    }
    let (mean_len, std_len) = if lens.is_empty() {
        (0.0, 0.0)
    } else {
        let m = lens.iter().sum::<f64>() / lens.len() as f64;
        let var = lens.iter().map(|l| (l - m) * (l - m)).sum::<f64>() / lens.len() as f64;
        (m, var.sqrt())
    };

    let distinct: BTreeSet<&str> = tokens.iter().map(|s| s.as_str()).collect();
    let ttr = if n_tok > 0 { distinct.len() as f64 / n_tok as f64 } else { 0.0 };

    let mut upper = 0usize;
    let mut alpha = 0usize;
    let mut digits = 0usize;
    let mut non_ws = 0usize;
    for c in text.chars() {
        if c.is_alphabetic() {
            alpha += 1;
            if c.is_uppercase() {
                upper += 1;
            }
        }
        if c.is_ascii_digit() {
            digits += 1;
        }
        if !c.is_whitespace() {
            non_ws += 1;
        }
    }
    let upper_ratio = if alpha > 0 { upper as f64 / alpha as f64 } else { 0.0 };
    let digit_ratio = if non_ws > 0 { digits as f64 / non_ws as f64 } else { 0.0 };

    [punct_freq, mean_len, std_len, ttr, upper_ratio, digit_ratio]
}

/// Style features: hashed case-preserving character n-gram counts over the
/// raw text, plus the stylometric scalar block; L2-normalized.
pub fn style_features(text: &str, cfg: &FeatureConfig) -> FeatureVector {
    let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
    let chars: Vec<char> = text.chars().collect();
    let mut buf = String::new();
    for n in cfg.ngram_min..=cfg.ngram_max {
        if chars.len() < n {
            break;
        }
        for w in chars.windows(n) {
            buf.clear();
            buf.extend(w.iter());
            let h = hash_parts(&[&[n as u8], buf.as_bytes()]);
            *acc.entry(slot(h, cfg.hash_dim)).or_insert(0.0) += 1.0;
        }
    }
    if cfg.use_stylometrics {
        let scalars = stylometric_scalars(text);
        for (i, &v) in scalars.iter().enumerate() {
            if v != 0.0 {
                acc.insert((cfg.hash_dim + i) as u32, v);
            }
        }
    }
    FeatureVector::from_map(acc, cfg.style_dim()).l2_normalized()
}

/// Inverse document frequencies over the hashed content feature space,
/// fitted on training texts only. Unseen features fall back to the
/// df = 0 weight ln(1 + n_docs).
#[derive(Clone, Debug, PartialEq)]
pub struct IdfTable {
    dim: usize,
    n_docs: usize,
    weights: BTreeMap<u32, f64>,
}

impl IdfTable {
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>, cfg: &FeatureConfig) -> IdfTable {
        let mut df: BTreeMap<u32, usize> = BTreeMap::new();
        let mut n_docs = 0usize;
        for text in texts {
            n_docs += 1;
            let mut seen = BTreeSet::new();
            for id in content_feature_ids(text, cfg) {
                seen.insert(id);
            }
            for id in seen {
                *df.entry(id).or_insert(0) += 1;
            }
        }
        let weights = df
            .into_iter()
            .map(|(id, d)| (id, ((1 + n_docs) as f64 / (1 + d) as f64).ln()))
            .collect();
        IdfTable { dim: cfg.content_dim(), n_docs, weights }
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn is_fitted(&self) -> bool {
        self.n_docs > 0
    }

    fn default_weight(&self) -> f64 {
        ((1 + self.n_docs) as f64).ln()
    }

    pub fn weight(&self, id: u32) -> f64 {
        self.weights.get(&id).copied().unwrap_or_else(|| self.default_weight())
    }

    /// CSV rows `feature_id,idf` for every fitted slot; a final sentinel row
    /// with feature_id == dim carries the unseen-feature default weight.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        writeln!(w, "feature_id,idf").map_err(|e| Error::io(path, e))?;
        for (id, v) in &self.weights {
            writeln!(w, "{},{}", id, v).map_err(|e| Error::io(path, e))?;
        }
        writeln!(w, "{},{}", self.dim, self.default_weight()).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load_csv(path: &Path, cfg: &FeatureConfig) -> Result<IdfTable> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let r = BufReader::new(f);
        let dim = cfg.content_dim();
        let mut weights = BTreeMap::new();
        let mut n_docs = None;
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if lineno == 0 {
                if line.trim() != "feature_id,idf" {
                    return Err(Error::Parse {
                        path: path.into(),
                        line: 1,
                        msg: format!("expected header 'feature_id,idf', got '{line}'"),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let parse = |s: &str, what: &str| -> Result<f64> {
                s.trim().parse::<f64>().map_err(|_| Error::Parse {
                    path: path.into(),
                    line: lineno + 1,
                    msg: format!("bad {what}: '{s}'"),
                })
            };
            let (id_s, v_s) = line.split_once(',').ok_or_else(|| Error::Parse {
                path: path.into(),
                line: lineno + 1,
                msg: "expected 'feature_id,idf'".into(),
            })?;
            let id = parse(id_s, "feature_id")? as u64;
            let v = parse(v_s, "idf")?;
            if id as usize == dim {
                // sentinel: default weight ln(1 + n_docs)
                n_docs = Some((v.exp() - 1.0).round().max(0.0) as usize);
            } else if (id as usize) < dim {
                weights.insert(id as u32, v);
            } else {
                return Err(Error::Parse {
                    path: path.into(),
                    line: lineno + 1,
                    msg: format!("feature_id {} out of range for dim {}", id, dim),
                });
            }
        }
        let n_docs = n_docs.ok_or_else(|| Error::Parse {
            path: path.into(),
            line: 0,
            msg: "missing sentinel default-idf row".into(),
        })?;
        Ok(IdfTable { dim, n_docs, weights })
    }
}

/// Hashed ids of lowercased word unigrams and bigrams, punctuation tokens
/// dropped. Shared by idf fitting and content_features.
fn content_feature_ids(text: &str, cfg: &FeatureConfig) -> Vec<u32> {
    let words: Vec<String> = tokenize(text)
        .into_iter()
        .filter(|t| !t.chars().all(is_punct_char))
        .map(|t| if cfg.lowercase_content { t.to_lowercase() } else { t })
        .collect();
    let mut ids = Vec::with_capacity(words.len() * 2);
    for w in &words {
        ids.push(slot(hash_parts(&[&[1u8], w.as_bytes()]), cfg.hash_dim));
    }
    for pair in words.windows(2) {
        let h = hash_parts(&[&[2u8], pair[0].as_bytes(), &[0x1f], pair[1].as_bytes()]);
        ids.push(slot(h, cfg.hash_dim));
    }
    ids
}

/// Content features: TF-IDF over hashed lowercased word uni+bigrams,
/// L2-normalized. Empty text yields the empty vector.
pub fn content_features(text: &str, cfg: &FeatureConfig, idf: &IdfTable) -> Result<FeatureVector> {
    if !idf.is_fitted() {
        return Err(Error::State("idf table not fitted (fit on the training split first)".into()));
    }
    let mut tf: BTreeMap<u32, f64> = BTreeMap::new();
    for id in content_feature_ids(text, cfg) {
        *tf.entry(id).or_insert(0.0) += 1.0;
    }
    let weighted = tf.into_iter().map(|(id, c)| (id, c * idf.weight(id))).collect();
    Ok(FeatureVector::from_map(weighted, cfg.content_dim()).l2_normalized())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn tokenize_empty_and_basic() {
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("Hi, there!"), vec!["Hi", ",", "there", "!"]);
        assert_eq!(tokenize("It's 3:30pm."), vec!["It", "'", "s", "3", ":", "30pm", "."]);
    }

    #[test]
    fn token_spans_slice_back_to_tokens() {
        let text = "Ok—fine, really?  Done.";
        let toks = tokenize(text);
        let spans = token_spans(text);
        assert_eq!(toks.len(), spans.len());
        for (t, (a, b)) in toks.iter().zip(spans) {
            assert_eq!(t, &text[a..b]);
        }
    }

    #[test]
    fn token_count_equals_whitespace_plus_punct_on_sample() {
        // counting oracle over 1000 generated docs where punctuation is
        // attached to word ends (the shape synthetic corpora use)
        let words = ["alpha", "beta", "gamma", "delta", "unit", "Case"];
        let mut rng = crate::seeds::rng(11, "tokcount", &[]);
        for _ in 0..1000 {
            let mut text = String::new();
            let n = rng.random_range(1..40);
            for i in 0..n {
                if i > 0 {
                    text.push(' ');
                }
                text.push_str(words[rng.random_range(0..words.len())]);
                if rng.random_range(0..4) == 0 {
                    text.push(',');
                }
                if rng.random_range(0..5) == 0 {
                    text.push('.');
                }
            }
            let ws = text.split_whitespace().count();
            let punct = text.chars().filter(|c| is_punct_char(*c)).count();
            assert_eq!(tokenize(&text).len(), ws + punct, "text: {text}");
        }
    }

    #[test]
    fn style_features_deterministic_and_case_sensitive() {
        let cfg = FeatureConfig::default();
        let a1 = style_features("The quick brown fox.", &cfg);
        let a2 = style_features("The quick brown fox.", &cfg);
        assert_eq!(a1, a2);
        let lo = style_features("aaaa", &cfg);
        let hi = style_features("AAAA", &cfg);
        assert_ne!(lo, hi);
        a1.validate().unwrap();
    }

    #[test]
    fn punct_slot_hand_count() {
        let s = stylometric_scalars("a. b. c.");
        assert_eq!(s[0], 3.0 / 6.0);
        assert_eq!(s[1], 2.0); // three sentences of two tokens each
        assert_eq!(s[2], 0.0);
    }

    #[test]
    fn style_norm_positive_for_nonblank_text() {
        let cfg = FeatureConfig::default();
        for text in ["x", "?!", "a b", "Word."] {
            let v = style_features(text, &cfg);
            assert!(v.l2_norm() > 0.0, "text: {text}");
            assert!((v.l2_norm() - 1.0).abs() < 1e-12);
        }
        assert!(style_features("", &cfg).is_empty());
    }

    #[test]
    fn content_unseen_word_gets_default_idf() {
        let cfg = FeatureConfig::default();
        let idf = IdfTable::fit(["one two", "two three", "three four"], &cfg);
        assert_eq!(idf.n_docs(), 3);
        let unseen = slot(hash_parts(&[&[1u8], b"zzz"]), cfg.hash_dim);
        assert_eq!(idf.weight(unseen), (4.0f64).ln());
        let v = content_features("zzz", &cfg, &idf).unwrap();
        assert_eq!(v.indices.len(), 1);
        assert!((v.values[0] - 1.0).abs() < 1e-12); // single slot, normalized
        assert!(content_features("", &cfg, &idf).unwrap().is_empty());
    }

    #[test]
    fn content_requires_fitted_idf() {
        let cfg = FeatureConfig::default();
        let empty = IdfTable::fit(std::iter::empty::<&str>(), &cfg);
        assert!(content_features("hi", &cfg, &empty).is_err());
    }

    #[test]
    fn idf_csv_round_trip_exact() {
        let cfg = FeatureConfig::default();
        let idf = IdfTable::fit(["alpha beta gamma", "beta gamma", "gamma delta epsilon"], &cfg);
        let dir = std::env::temp_dir().join(format!("detangle-idf-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("idf.csv");
        idf.save_csv(&path).unwrap();
        let back = IdfTable::load_csv(&path, &cfg).unwrap();
        assert_eq!(idf, back);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn config_validation() {
        let mut cfg = FeatureConfig::default();
        cfg.validate().unwrap();
        cfg.hash_dim = 1000;
        assert!(cfg.validate().is_err());
        cfg.hash_dim = 64;
        cfg.ngram_min = 0;
        assert!(cfg.validate().is_err());
        cfg.ngram_min = 3;
        cfg.ngram_max = 2;
        assert!(cfg.validate().is_err());
    }

    proptest! {
        #[test]
        fn feature_vectors_are_well_formed(text in "[ -~]{0,200}") {
            let cfg = FeatureConfig::default();
            let v = style_features(&text, &cfg);
            v.validate().unwrap();
            let idf = IdfTable::fit(["seed text for idf", "another doc"], &cfg);
            let c = content_features(&text, &cfg, &idf).unwrap();
            c.validate().unwrap();
            // weights are non-negative before normalization, so also after
            prop_assert!(v.values.iter().all(|x| *x >= 0.0));
            prop_assert!(c.values.iter().all(|x| *x >= 0.0));
        }

        #[test]
        fn scalar_block_ignores_word_identity(
            lens in proptest::collection::vec(1usize..8, 1..12),
            puncts in proptest::collection::vec(proptest::bool::ANY, 1..12),
        ) {
            // same word lengths, same case, same punctuation → identical scalars
            let render = |base: u8| -> String {
                let mut s = String::new();
                for (i, (&l, &p)) in lens.iter().zip(&puncts).enumerate() {
                    if i > 0 { s.push(' '); }
                    let ch = (b'a' + ((base + i as u8) % 26)) as char;
                    for _ in 0..l { s.push(ch); }
                    if p { s.push('.'); }
                }
                s
            };
            let a = stylometric_scalars(&render(0));
            let b = stylometric_scalars(&render(7));
            prop_assert_eq!(a, b);
        }
    }
}
