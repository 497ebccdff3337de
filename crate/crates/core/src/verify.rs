//! Self-check suite: tape gradients against central differences for every
//! layer and both composed models, and fast metrics against brute force.

use rand::seq::SliceRandom;
use rand::Rng;
use sa_numerics::layers::{multi_head_self_attention, AttentionVars};
use sa_numerics::{gradient_check, Activation, GradCheckReport, RngSeed, Tape, Tensor, Var};
use serde::Serialize;

use crate::evaluation::metrics::binary_auc;
use crate::evaluation::{classification_metrics, iou, mof};
use crate::graph::{fully_connected, gcn_layer, GcnAutoencoder, GcnConfig, NODE_DIM, NUM_NODES};
use crate::labels::{accumulate_ternary, binarize, build_curve, Anchor};
use crate::model::{HeadKind, SaModel, SaModelConfig};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst gradient relative error (gradient checks) or absolute deviation (oracles).
    pub max_error: f64,
    pub instances: usize,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn render(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{:<5} {:<width$}  max error {:.3e} over {} instances{}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.max_error,
                c.instances,
                if c.detail.is_empty() { String::new() } else { format!("  ({})", c.detail) },
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub seeds: u64,
    /// Seeds for the full-size composed models (the costliest checks).
    pub full_model_seeds: u64,
    pub metric_instances: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seeds: 10,
            full_model_seeds: 10,
            metric_instances: 1000,
            step: 1e-5,
            tolerance: 1e-4,
        }
    }
}

fn uniform(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut rng = RngSeed(seed).rng();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

fn one_hot(seed: u64, rows: usize, classes: usize) -> Tensor {
    let mut rng = RngSeed(seed).rng();
    let mut t = Tensor::zeros(vec![rows, classes]);
    for r in 0..rows {
        t.set(&[r, rng.gen_range(0..classes)], 1.0);
    }
    t
}

fn to_numerics(e: crate::CoreError) -> sa_numerics::NumericsError {
    match e {
        crate::CoreError::Numerics(inner) => inner,
        other => sa_numerics::NumericsError::Config(other.to_string()),
    }
}

type GradFn<'a> = Box<dyn Fn(&mut Tape, &[Var]) -> sa_numerics::Result<Var> + 'a>;

/// Runs one gradient check per seed and folds the reports into one result.
fn grad_check(
    name: &str,
    opts: &VerifyOptions,
    seeds: u64,
    mut case: impl FnMut(u64) -> (Vec<(String, Tensor)>, GradFn<'static>),
) -> CheckResult {
    let mut worst = 0.0f64;
    let mut failing = Vec::new();
    let mut errors = Vec::new();
    for seed in 0..seeds {
        let (params, f) = case(seed);
        match gradient_check(f, &params, opts.step, opts.tolerance) {
            Ok(r) => {
                worst = worst.max(r.max_rel_error());
                collect_failures(&r, seed, &mut failing);
            }
            Err(e) => errors.push(format!("seed {seed}: {e}")),
        }
    }
    let passed = failing.is_empty() && errors.is_empty();
    failing.extend(errors);
    if failing.len() > 3 {
        let more = failing.len() - 3;
        failing.truncate(3);
        failing.push(format!("{more} more"));
    }
    CheckResult {
        name: name.to_string(),
        passed,
        max_error: worst,
        instances: seeds as usize,
        detail: failing.join("; "),
    }
}

fn collect_failures(r: &GradCheckReport, seed: u64, out: &mut Vec<String>) {
    for p in r.failures() {
        out.push(format!("seed {seed} `{}` rel error {:.2e}", p.name, p.max_rel_error));
    }
}

pub fn gradient_suite(opts: &VerifyOptions) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let n = opts.seeds;

    out.push(grad_check("linear", opts, n, |s| {
        let target = uniform(s + 300, &[3, 4, 3], -1.0, 1.0);
        (
            vec![
                ("x".into(), uniform(s, &[3, 4, 5], -1.0, 1.0)),
                ("weight".into(), uniform(s + 100, &[5, 3], -1.0, 1.0)),
                ("bias".into(), uniform(s + 200, &[3], -1.0, 1.0)),
            ],
            Box::new(move |t, v| {
                let y = t.linear(v[0], v[1], Some(v[2]))?;
                t.mse(y, &target)
            }),
        )
    }));

    out.push(grad_check("sigmoid", opts, n, |s| {
        let target = uniform(s + 50, &[4, 3], 0.0, 1.0).map(|v| f64::from(u8::from(v > 0.5)));
        (
            vec![("logits".into(), uniform(s, &[4, 3], -3.0, 3.0))],
            Box::new(move |t, v| {
                let p = t.sigmoid(v[0])?;
                t.bce(p, &target)
            }),
        )
    }));

    out.push(grad_check("bce", opts, n, |s| {
        let target = uniform(s + 50, &[5, 3], 0.0, 1.0).map(|v| f64::from(u8::from(v > 0.5)));
        (
            vec![("probs".into(), uniform(s, &[5, 3], 0.05, 0.95))],
            Box::new(move |t, v| t.bce(v[0], &target)),
        )
    }));

    out.push(grad_check("softmax+cce", opts, n, |s| {
        let target = one_hot(s + 50, 6, 3);
        (
            vec![("logits".into(), uniform(s, &[6, 3], -3.0, 3.0))],
            Box::new(move |t, v| {
                let p = t.softmax(v[0], 1)?;
                t.cce(p, &target)
            }),
        )
    }));

    out.push(grad_check("attention", opts, n, |s| {
        let (b, l, d) = (2, 5, 4);
        let mut params = vec![("x".to_string(), uniform(s, &[b, l, d], -1.0, 1.0))];
        for (i, name) in AttentionVars::NAMES.iter().enumerate() {
            let shape: &[usize] = if name.starts_with('w') { &[d, d] } else { &[d] };
            params.push((name.to_string(), uniform(s * 31 + i as u64, shape, -0.8, 0.8)));
        }
        let target = uniform(s + 999, &[b, l, d], -1.0, 1.0);
        (
            params,
            Box::new(move |t, v| {
                let p = AttentionVars::from_slice(v, 1);
                // same mask on every evaluation
                let mut rng = RngSeed(s + 7).rng();
                let a = multi_head_self_attention(t, v[0], &p, 2, 0.1, true, &mut rng)?;
                t.mse(a.output, &target)
            }),
        )
    }));

    out.push(grad_check("gcn_layer", opts, n, |s| {
        let target = uniform(s + 77, &[NUM_NODES, 16], 0.0, 1.0);
        (
            vec![
                ("phi".into(), uniform(s, &[NUM_NODES, NODE_DIM], 0.0, 1.0)),
                ("weight".into(), uniform(s + 1, &[NODE_DIM, 16], -0.3, 0.3)),
            ],
            Box::new(move |t, v| {
                let a = t.constant(fully_connected(NUM_NODES));
                let h = gcn_layer(t, v[0], a, v[1], Activation::Relu).map_err(to_numerics)?;
                t.mse(h, &target)
            }),
        )
    }));

    out.push(grad_check("gcn_autoencoder", opts, n, |s| {
        let model = GcnAutoencoder::new(GcnConfig {
            seed: RngSeed(s),
            ..GcnConfig::default()
        })
        .expect("default autoencoder config");
        let batch = uniform(s + 5, &[3, NUM_NODES, NODE_DIM], 0.0, 1.0);
        let params = model.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        (
            params,
            Box::new(move |t, v| {
                model
                    .reconstruction_loss(t, v, &batch)
                    .map_err(to_numerics)
            }),
        )
    }));

    for head in [HeadKind::Binary, HeadKind::Ternary] {
        out.push(grad_check(&format!("transformer_{head}"), opts, opts.full_model_seeds, |s| {
            model_case(head, SaModelConfig::default(), s)
        }));
    }
    out
}

/// Whole-model loss with dropout active under a fixed mask.
fn model_case(head: HeadKind, base: SaModelConfig, seed: u64) -> (Vec<(String, Tensor)>, GradFn<'static>) {
    let cfg = SaModelConfig {
        head,
        seed: RngSeed(seed),
        ..base
    };
    let model = SaModel::new(cfg.clone()).expect("valid model config");
    // non-zero biases so every parameter carries gradient signal
    let params: Vec<(String, Tensor)> = model
        .params
        .iter()
        .enumerate()
        .map(|(i, (n, t))| {
            let t = if n.ends_with("bias") || n.contains(".b") {
                uniform(seed * 1000 + i as u64, t.shape(), -0.1, 0.1)
            } else {
                t.clone()
            };
            (n.to_string(), t)
        })
        .collect();
    // a single sequence keeps the full-size check inside the time budget
    let b = 1;
    let x = uniform(seed + 11, &[b, cfg.seq_len, cfg.input_dim], 0.0, 1.0);
    let y = match head {
        HeadKind::Binary => uniform(seed + 12, &[b, 3], 0.0, 1.0).map(|v| f64::from(u8::from(v > 0.5))),
        HeadKind::Ternary => one_hot(seed + 12, b, 3),
    };
    (
        params,
        Box::new(move |t, v| {
            let mut rng = RngSeed(seed + 13).rng();
            model
                .loss_on(t, v, &x, &y, true, &mut rng)
                .map_err(|e| sa_numerics::NumericsError::Config(e.to_string()))
        }),
    )
}

fn oracle(name: &str, instances: usize, max_error: f64, tol: f64, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed: max_error <= tol && detail.is_empty(),
        max_error,
        instances,
        detail,
    }
}

fn random_labels(rng: &mut impl Rng, len: usize, classes: usize) -> Vec<usize> {
    (0..len).map(|_| rng.gen_range(0..classes)).collect()
}

pub fn metric_suite(opts: &VerifyOptions) -> Vec<CheckResult> {
    let mut rng = RngSeed(2024).rng();
    let mut out = Vec::new();

    let (mut mof_err, mut iou_err, mut cls_err, mut auc_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..opts.metric_instances {
        let len = rng.gen_range(1..=200);
        let k = rng.gen_range(1..=5usize).min(len);
        // every class occurs in the truth so macro averages span all k
        let mut truth = random_labels(&mut rng, len, k);
        truth[..k].iter_mut().enumerate().for_each(|(c, t)| *t = c);
        truth.shuffle(&mut rng);
        let pred = random_labels(&mut rng, len, k);

        let mut hits = 0;
        for i in 0..len {
            if truth[i] == pred[i] {
                hits += 1;
            }
        }
        mof_err = mof_err.max((mof(&truth, &pred).unwrap() - hits as f64 / len as f64).abs());

        let mut sum = 0.0;
        let mut classes = 0;
        for c in 0..k {
            if !truth.contains(&c) {
                continue;
            }
            classes += 1;
            let t: Vec<usize> = (0..len).filter(|&i| truth[i] == c).collect();
            let p: Vec<usize> = (0..len).filter(|&i| pred[i] == c).collect();
            let inter = t.iter().filter(|i| p.contains(i)).count();
            let union = t.len() + p.len() - inter;
            sum += inter as f64 / union as f64;
        }
        iou_err = iou_err.max((iou(&truth, &pred).unwrap() - sum / classes as f64).abs());

        let r = classification_metrics(&truth, &pred, None, k).unwrap();
        let mut recall_sum = 0.0;
        for c in 0..k {
            let support = truth.iter().filter(|&&t| t == c).count();
            if support > 0 {
                let tp = (0..len).filter(|&i| truth[i] == c && pred[i] == c).count();
                recall_sum += tp as f64 / support as f64;
            }
        }
        cls_err = cls_err.max((r.bacc - recall_sum / classes as f64).abs());

        let pos: Vec<bool> = truth.iter().map(|&t| t == 0).collect();
        let score: Vec<f64> = (0..len).map(|_| f64::from(rng.gen_range(0..10u8))).collect();
        let (mut wins, mut pairs) = (0.0, 0usize);
        for i in 0..len {
            for j in 0..len {
                if pos[i] && !pos[j] {
                    pairs += 1;
                    wins += if score[i] > score[j] {
                        1.0
                    } else if score[i] == score[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        if let Some(a) = binary_auc(&pos, &score) {
            auc_err = auc_err.max((a - wins / pairs as f64).abs());
        }
    }
    let n = opts.metric_instances;
    let mut hand = String::new();
    if mof(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap() != 0.75 {
        hand.push_str("mof hand case != 0.75");
    }
    out.push(oracle("mof_oracle", n, mof_err, 0.0, hand));
    let bg = 9;
    let truth: Vec<usize> = (0..15).map(|f| if f < 10 { 0 } else { bg }).collect();
    let pred: Vec<usize> = (0..15).map(|f| if f >= 5 { 0 } else { bg }).collect();
    let interval = crate::evaluation::iou_ignoring(&truth, &pred, Some(bg)).unwrap();
    let hand = if (interval - 1.0 / 3.0).abs() > 1e-15 {
        format!("interval case gave {interval}")
    } else {
        String::new()
    };
    out.push(oracle("iou_oracle", n, iou_err, 0.0, hand));
    out.push(oracle("bacc_oracle", n, cls_err, 1e-12, String::new()));
    out.push(oracle("auc_oracle", n, auc_err, 1e-12, String::new()));

    let mut gcn_err = 0.0f64;
    for s in 0..100u64 {
        let (n_nodes, din, dout) = if s < 50 {
            (NUM_NODES, NODE_DIM, 16)
        } else {
            (NUM_NODES, 16, 8)
        };
        let phi = uniform(s, &[n_nodes, din], -1.0, 1.0);
        let adj = uniform(s + 500, &[n_nodes, n_nodes], 0.0, 1.0);
        let w = uniform(s + 1000, &[din, dout], -1.0, 1.0);
        let mut tape = Tape::new();
        let (p, a, wv) = (tape.constant(phi.clone()), tape.constant(adj.clone()), tape.constant(w.clone()));
        let got = gcn_layer(&mut tape, p, a, wv, Activation::Relu).unwrap();
        let got = tape.value(got);
        for i in 0..n_nodes {
            for j in 0..dout {
                let mut acc = 0.0;
                for k in 0..n_nodes {
                    for m in 0..din {
                        acc += adj.at(&[i, k]) * phi.at(&[k, m]) * w.at(&[m, j]);
                    }
                }
                gcn_err = gcn_err.max((got.at(&[i, j]) - acc.max(0.0)).abs());
            }
        }
    }
    out.push(oracle("gcn_dense_oracle", 100, gcn_err, 1e-10, String::new()));

    let mut problems = Vec::new();
    if accumulate_ternary([0, 1, 1]) != (0, 0) {
        problems.push("[0,1,1] must give class 0");
    }
    if accumulate_ternary([1, 1, 1]).1 != 2 {
        problems.push("[1,1,1] must give the top class");
    }
    if binarize(3.0) != 1 || binarize(2.999) != 0 {
        problems.push("threshold 3 must be inclusive");
    }
    let anchors = [
        Anchor { frame: 1500, value: [1.0; 3] },
        Anchor { frame: 3000, value: [5.0; 3] },
    ];
    match build_curve(&anchors, &[0, 3001], 3100) {
        Ok(c) => {
            if c.values[2250] != [3.0; 3] {
                problems.push("interpolation midpoint must be exact");
            }
            if c.values[3001] != [0.0; 3] {
                problems.push("boundary frame must reset to 0");
            }
        }
        Err(_) => problems.push("curve construction failed"),
    }
    out.push(oracle("label_examples", 5, 0.0, 0.0, problems.join("; ")));
    out
}

pub fn run_verify(opts: &VerifyOptions) -> VerifyReport {
    let mut checks = gradient_suite(opts);
    checks.extend(metric_suite(opts));
    VerifyReport { checks }
}
