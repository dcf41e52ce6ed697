use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::sample_batch;
use crate::diffgraph::Graph;
use crate::encoders::{ContentEncoder, StyleEncoder};
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::loss::{detangle_infonce, LossOptions, Temperature};
use crate::mat::{Mat, SparseMat};
use crate::seeds;
use crate::synth::{gen_corpus, GeneratorConfig};

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;
/// Relative-error denominator floor: below this gradient magnitude the check
/// degrades to an absolute tolerance of TOLERANCE × REL_FLOOR, which keeps
/// central-difference roundoff on near-zero gradients from raising alarms.
const REL_FLOOR: f64 = 1e-3;

/// Every differentiable op, each the subject of exactly one scenario, plus
/// the composed production loss.
pub const OP_NAMES: [&str; 13] = [
    "linear",
    "sparse_linear",
    "tanh",
    "dropout",
    "row_l2_normalize",
    "cosine_sim",
    "concat_cols",
    "scale_by_temp",
    "row_max_sub_detached",
    "cross_entropy_rows",
    "elem_mul",
    "sum_all",
    "detangle_end_to_end",
];

type Params = BTreeMap<String, Mat>;
type Runner = Box<dyn Fn(&Params) -> Result<(f64, Params)> + Send + Sync>;

#[derive(Clone, Debug, Serialize)]
pub struct OpCheck {
    pub op: String,
    pub max_rel_err: f64,
    pub n_entries: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    pub ops: Vec<OpCheck>,
    pub passed: bool,
}

fn rand_mat(rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-0.9..0.9))
}

/// Entries with magnitude in [0.3, 0.9]: keeps row norms well away from the
/// normalization floor.
fn rand_mat_offzero(rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| {
        let sign = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
        sign * rng.random_range(0.3..0.9)
    })
}

/// Fixed weighting that turns a matrix output into a generic scalar so no
/// gradient direction cancels structurally.
fn probe(rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |i, j| ((i * 7 + j * 3) % 11) as f64 * 0.1 - 0.4)
}

fn probe_sum(g: &mut Graph, y: crate::diffgraph::NodeId) -> Result<crate::diffgraph::NodeId> {
    let (r, c) = (g.value(y).rows(), g.value(y).cols());
    let w = g.input(probe(r, c));
    let m = g.elem_mul(y, w)?;
    Ok(g.sum_all(m))
}

fn finish(g: &mut Graph, loss: crate::diffgraph::NodeId) -> Result<(f64, Params)> {
    let grads = g.backward(loss)?;
    Ok((g.value(loss).at(0, 0), grads))
}

fn scenarios(seed: u64) -> Result<Vec<(&'static str, Params, Runner)>> {
    let mut out: Vec<(&'static str, Params, Runner)> = Vec::new();
    let mut add = |name: &'static str, params: Params, run: Runner| {
        out.push((name, params, run));
    };

    let mut rng = seeds::rng(seed, "gradcheck", &[]);

    let params: Params = [
        ("x".to_string(), rand_mat(&mut rng, 3, 4)),
        ("w".to_string(), rand_mat(&mut rng, 4, 5)),
        ("b".to_string(), rand_mat(&mut rng, 1, 5)),
    ]
    .into();
    add(
        "linear",
        params,
        Box::new(|p| {
            let mut g = Graph::new();
            let x = g.param("x", p["x"].clone())?;
            let w = g.param("w", p["w"].clone())?;
            let b = g.param("b", p["b"].clone())?;
            let y = g.linear(x, w, b)?;
            let loss = probe_sum(&mut g, y)?;
            finish(&mut g, loss)
        }),
    );

    let feats = SparseMat {
        dim: 6,
        rows: vec![
            vec![(0, 0.5), (2, -0.3), (5, 1.1)],
            vec![(1, 0.9), (3, 0.4)],
            vec![(0, -0.2), (4, 0.8), (5, -0.6)],
        ],
    };
    let params: Params = [
        ("w".to_string(), rand_mat(&mut rng, 6, 4)),
        ("b".to_string(), rand_mat(&mut rng, 1, 4)),
    ]
    .into();
    add(
        "sparse_linear",
        params,
        Box::new(move |p| {
            let mut g = Graph::new();
            let w = g.param("w", p["w"].clone())?;
            let b = g.param("b", p["b"].clone())?;
            let y = g.sparse_linear(feats.clone(), w, b)?;
            let loss = probe_sum(&mut g, y)?;
            finish(&mut g, loss)
        }),
    );

    let params: Params = [("x".to_string(), rand_mat(&mut rng, 3, 4))].into();
    add(
        "tanh",
        params,
        Box::new(|p| {
            let mut g = Graph::new();
            let x = g.param("x", p["x"].clone())?;
            let y = g.tanh(x);
            let loss = probe_sum(&mut g, y)?;
            finish(&mut g, loss)
        }),
    );

    let params: Params = [("x".to_string(), rand_mat(&mut rng, 3, 4))].into();
    let drop_seed = seeds::derive(seed, "drop_mask", &[]);
    add(
        "dropout",
        params,
        Box::new(move |p| {
            let mut g = Graph::new();
            let x = g.param("x", p["x"].clone())?;
            let y = g.dropout(x, 0.4, true, drop_seed)?;
            let loss = probe_sum(&mut g, y)?;
            finish(&mut g, loss)
        }),
    );

    let params: Params = [("x".to_string(), rand_mat_offzero(&mut rng, 3, 4))].into();
    add(
        "row_l2_normalize",
        params,
        Box::new(|p| {
            let mut g = Graph::new();
            let x = g.param("x", p["x"].clone())?;
            let y = g.row_l2_normalize(x);
            let loss = probe_sum(&mut g, y)?;
            finish(&mut g, loss)
        }),
    );

    let params: Params = [
        ("a".to_string(), rand_mat(&mut rng, 3, 4)),
        ("b".to_string(), rand_mat(&mut rng, 2, 4)),
    ]
    .into();
    add(
        "cosine_sim",
        params,
        Box::new(|p| {
            let mut g = Graph::new();
            let a = g.param("a", p["a"].clone())?;
            let b = g.param("b", p["b"].clone())?;
            let y = g.cosine_sim(a, b)?;
            let loss = probe_sum(&mut g, y)?;
            finish(&mut g, loss)
        }),
    );

    let params: Params = [
        ("a".to_string(), rand_mat(&mut rng, 2, 3)),
        ("b".to_string(), rand_mat(&mut rng, 2, 2)),
    ]
    .into();
    add(
        "concat_cols",
        params,
        Box::new(|p| {
            let mut g = Graph::new();
            let a = g.param("a", p["a"].clone())?;
            let b = g.param("b", p["b"].clone())?;
            let y = g.concat_cols(&[a, b])?;
            let loss = probe_sum(&mut g, y)?;
            finish(&mut g, loss)
        }),
    );

    let params: Params = [
        ("x".to_string(), rand_mat(&mut rng, 3, 3)),
        ("tau.log".to_string(), Mat::from_vec(1, 1, vec![-0.5])?),
    ]
    .into();
    add(
        "scale_by_temp",
        params,
        Box::new(|p| {
            let mut g = Graph::new();
            let x = g.param("x", p["x"].clone())?;
            let lt = g.param("tau.log", p["tau.log"].clone())?;
            let y = g.scale_by_temp(x, lt)?;
            let loss = probe_sum(&mut g, y)?;
            finish(&mut g, loss)
        }),
    );

    // the detached max is exact only under a shift-invariant consumer, so the
    // check composes it with cross-entropy just like the production loss
    let params: Params = [("x".to_string(), rand_mat(&mut rng, 3, 4))].into();
    add(
        "row_max_sub_detached",
        params,
        Box::new(|p| {
            let mut g = Graph::new();
            let x = g.param("x", p["x"].clone())?;
            let y = g.row_max_sub_detached(x);
            let loss = g.cross_entropy_rows(y, &[1, 3, 0])?;
            finish(&mut g, loss)
        }),
    );

    let params: Params = [("x".to_string(), rand_mat(&mut rng, 3, 5))].into();
    add(
        "cross_entropy_rows",
        params,
        Box::new(|p| {
            let mut g = Graph::new();
            let x = g.param("x", p["x"].clone())?;
            let loss = g.cross_entropy_rows(x, &[2, 0, 4])?;
            finish(&mut g, loss)
        }),
    );

    let params: Params = [
        ("a".to_string(), rand_mat(&mut rng, 3, 4)),
        ("b".to_string(), rand_mat(&mut rng, 3, 4)),
    ]
    .into();
    add(
        "elem_mul",
        params,
        Box::new(|p| {
            let mut g = Graph::new();
            let a = g.param("a", p["a"].clone())?;
            let b = g.param("b", p["b"].clone())?;
            let y = g.elem_mul(a, b)?;
            let loss = g.sum_all(y);
            finish(&mut g, loss)
        }),
    );

    let params: Params = [("x".to_string(), rand_mat(&mut rng, 3, 4))].into();
    add(
        "sum_all",
        params,
        Box::new(|p| {
            let mut g = Graph::new();
            let x = g.param("x", p["x"].clone())?;
            let loss = g.sum_all(x);
            finish(&mut g, loss)
        }),
    );

    // full production path: hashing → encoder with dropout → loss with
    // content negatives and trainable temperature
    let gen = GeneratorConfig {
        n_authors: 4,
        n_topics: 2,
        docs_per_author: 2,
        doc_len: 30,
        seed: seeds::derive(seed, "corpus", &[]),
        ..GeneratorConfig::default()
    };
    let (corpus, _) = gen_corpus(&gen)?;
    let authors: BTreeSet<String> = corpus.author_ids().cloned().collect();
    let batch = sample_batch(&corpus, &authors, 4, 24, seeds::derive(seed, "batch", &[]))?;
    let feat = FeatureConfig { hash_dim: 32, ..FeatureConfig::default() };
    let enc = StyleEncoder::new(feat.clone(), 4, 3, 0.3, seeds::derive(seed, "enc", &[]))?;
    let content = {
        let texts = corpus.texts_of(&authors);
        ContentEncoder::new_tfidf(texts.iter().copied(), &feat, 3, seeds::derive(seed, "content", &[]))?
    };
    let drop_seed = seeds::derive(seed, "dropout", &[]);
    let mut params: Params =
        enc.params().iter().map(|(n, m)| (n.to_string(), (*m).clone())).collect();
    params.insert("tau.log".to_string(), Mat::from_vec(1, 1, vec![(0.07f64).ln()])?);
    add(
        "detangle_end_to_end",
        params,
        Box::new(move |p| {
            let mut e = enc.clone();
            for (name, m) in e.params_mut() {
                *m = p[name].clone();
            }
            let tau = Temperature::from_log(p["tau.log"].at(0, 0));
            let mut g = Graph::new();
            let (loss, bd) = detangle_infonce(
                &mut g,
                &batch,
                &e,
                &content,
                &tau,
                true,
                drop_seed,
                &LossOptions::default(),
            )?;
            let grads = g.backward(loss)?;
            Ok((bd.total, grads))
        }),
    );

    Ok(out)
}

fn check_one(name: &str, params: &Params, run: &Runner, sabotage: bool) -> Result<OpCheck> {
    let (_, mut analytic) = run(params)?;
    if sabotage {
        for m in analytic.values_mut() {
            for v in m.data_mut() {
                *v = -*v;
            }
        }
    }
    let mut max_rel: f64 = 0.0;
    let mut n_entries = 0usize;
    for (pname, base) in params {
        let a = analytic.get(pname).ok_or_else(|| {
            Error::State(format!("{name}: backward produced no gradient for '{pname}'"))
        })?;
        if a.rows() != base.rows() || a.cols() != base.cols() {
            return Err(Error::Shape(format!(
                "{name}: gradient for '{pname}' is {}x{}, parameter is {}x{}",
                a.rows(),
                a.cols(),
                base.rows(),
                base.cols()
            )));
        }
        for idx in 0..base.data().len() {
            let mut p = params.clone();
            p.get_mut(pname).unwrap().data_mut()[idx] += FD_STEP;
            let (lp, _) = run(&p)?;
            p.get_mut(pname).unwrap().data_mut()[idx] -= 2.0 * FD_STEP;
            let (lm, _) = run(&p)?;
            let fd = (lp - lm) / (2.0 * FD_STEP);
            let an = a.data()[idx];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(REL_FLOOR);
            max_rel = max_rel.max(rel);
            n_entries += 1;
        }
    }
    Ok(OpCheck { op: name.to_string(), max_rel_err: max_rel, n_entries, passed: max_rel < TOLERANCE })
}

fn run_suite(seed: u64, sabotage: Option<&str>) -> Result<GradcheckReport> {
    let scen = scenarios(seed)?;
    let ops: Vec<OpCheck> = scen
        .par_iter()
        .map(|(name, params, run)| check_one(name, params, run, sabotage == Some(*name)))
        .collect::<Result<Vec<_>>>()?;
    let passed = ops.iter().all(|o| o.passed);
    Ok(GradcheckReport { seed, step: FD_STEP, tolerance: TOLERANCE, ops, passed })
}

/// Central finite differences against `backward` for every op.
pub fn run_gradcheck(seed: u64) -> Result<GradcheckReport> {
    run_suite(seed, None)
}

/// Test fixture: flip the analytic gradients of one scenario and make sure
/// the suite notices and names it.
pub fn run_gradcheck_sabotaged(seed: u64, op: &str) -> Result<GradcheckReport> {
    if !OP_NAMES.contains(&op) {
        return Err(Error::Config(format!("unknown gradcheck op '{op}'")));
    }
    run_suite(seed, Some(op))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_passes_and_covers_every_op_once() {
        let report = run_gradcheck(3).unwrap();
        let names: Vec<&str> = report.ops.iter().map(|o| o.op.as_str()).collect();
        assert_eq!(names, OP_NAMES.to_vec());
        for op in &report.ops {
            assert!(op.passed, "{} rel err {}", op.op, op.max_rel_err);
            assert!(op.n_entries > 0);
        }
        assert!(report.passed);
    }

    #[test]
    fn sabotage_is_caught_and_named() {
        let report = run_gradcheck_sabotaged(3, "tanh").unwrap();
        assert!(!report.passed);
        for op in &report.ops {
            assert_eq!(op.passed, op.op != "tanh", "{}", op.op);
        }
        assert!(run_gradcheck_sabotaged(3, "transmogrify").is_err());
    }
}
