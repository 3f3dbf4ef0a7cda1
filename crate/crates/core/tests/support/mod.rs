//! Independent oracles and the property checks built on them. Shared by the
//! core integration tests and the acceptance suite, so every check returns a
//! short summary on success and a diagnostic on failure instead of panicking.
#![allow(dead_code)]

use std::collections::HashMap;

use g2l_core::data::FrameSequence;
use g2l_core::global_search::{GlobalSearchOutcome, HistoryRow};
use g2l_core::landscape::HammingLandscape;
use g2l_core::local_search::MultiDilatedLayer;
use g2l_core::metrics::{edit_score, f1_at_iou, to_segments, Segment};
use g2l_core::tcn::conv::FeatureMap;
use g2l_core::tcn::{LossConfig, TcnConfig, TcnModel};
use g2l_core::{
    build_global_space, build_local_window, expected_dilation, pmf_from_weights, random_search_baseline,
    run_global_search, DilationStructure, GlobalSearchConfig, LocalWindow, PmfKind,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

pub const STEP: f64 = 1e-4;
pub const TOL: f64 = 1e-4;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

pub fn random_map(rng: &mut ChaCha8Rng, c: usize, t: usize) -> FeatureMap {
    let data = (0..c * t).map(|_| rng.random_range(-1.0..1.0)).collect();
    FeatureMap::from_vec(c, t, data).unwrap()
}

/// Textbook dilated convolution with zero padding, one output at a time.
pub fn naive_conv(x: &FeatureMap, kernel: &[f64], bias: &[f64], out: usize, width: usize, d: u64) -> FeatureMap {
    let (inp, t) = (x.channels(), x.len());
    let half = (width / 2) as i64;
    let mut y = FeatureMap::zeros(out, t);
    for o in 0..out {
        for tt in 0..t {
            let mut acc = bias[o];
            for i in 0..inp {
                for k in 0..width {
                    let src = tt as i64 + (k as i64 - half) * d as i64;
                    if (0..t as i64).contains(&src) {
                        acc += kernel[(o * inp + i) * width + k] * x.get(i, src as usize);
                    }
                }
            }
            y.set(o, tt, acc);
        }
    }
    y
}

/// Norm-wise relative error between analytic and numeric gradients.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
    // floor keeps round-off on vanishing gradients from counting as error
    diff / scale.max(1e-7)
}

/// Central differences of `f` at every coordinate of `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut v = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = v[i];
            v[i] = orig + STEP;
            let up = f(&v);
            v[i] = orig - STEP;
            let down = f(&v);
            v[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

pub fn random_layer(rng: &mut ChaCha8Rng, inp: usize, out: usize, window: LocalWindow) -> MultiDilatedLayer {
    let width = 3;
    let kernel = (0..out * inp * width).map(|_| rng.random_range(-1.0..1.0)).collect();
    let bias = (0..out).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut layer = MultiDilatedLayer::new(kernel, bias, out, inp, width, window).unwrap();
    // Keep weights away from the kink of |w| at zero.
    layer.weights = (0..layer.weights.len())
        .map(|_| {
            let m = rng.random_range(0.2..2.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    layer
}

fn weighted_sum(y: &FeatureMap, r: &FeatureMap) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

pub fn check_pmf(count: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst = 0.0f64;
    for case in 0..count {
        let n = rng.random_range(1..=8);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..=10.0)).collect();
        if w.iter().all(|&v| v == 0.0) {
            continue;
        }
        let a = pmf_from_weights(&w).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(a.iter().all(|&v| v >= 0.0), "case {case}: negative mass in {a:?}");
        let sum_err = (a.iter().sum::<f64>() - 1.0).abs();
        ensure!(sum_err <= 1e-12, "case {case}: sums to 1 + {sum_err:e}");
        let c = rng.random_range(1e-3..1e3);
        let scaled: Vec<f64> = w.iter().map(|v| v * c).collect();
        let b = pmf_from_weights(&scaled).map_err(|e| format!("case {case}: {e}"))?;
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs());
        }
        ensure!(worst <= 1e-12, "case {case}: scaling by {c} moved the pmf by {worst:e}");
    }
    Ok(format!("{count} vectors, worst scale drift {worst:.1e}"))
}

pub fn check_one_hot_collapse(count: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for case in 0..count {
        let (inp, out) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let t = rng.random_range(1..=24);
        let samples = rng.random_range(1..=4);
        let center = rng.random_range(1..=20);
        let window = if samples == 1 {
            LocalWindow::new(center, 0.1, 2).unwrap()
        } else {
            build_local_window(center, 0.3, samples).unwrap()
        };
        let mut layer = random_layer(&mut rng, inp, out, window);
        let j = rng.random_range(0..layer.weights.len());
        layer.weights = vec![1.0; layer.weights.len()];
        layer.weights[j] = 1e9;
        let x = random_map(&mut rng, inp, t);
        let got = layer.forward(&x).unwrap();
        let d = layer.window.dilations()[j];
        let want = naive_conv(&x, &layer.kernel, &layer.bias, out, 3, d);
        let err = rel_err(got.data(), want.data());
        worst = worst.max(err);
        ensure!(err < 1e-5, "case {case}: relative error {err:e}");
    }
    Ok(format!("{count} layers, worst relative error {worst:.1e}"))
}

pub fn check_layer_gradients(count: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for case in 0..count {
        let (inp, out) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let t = rng.random_range(4..=16);
        let samples = rng.random_range(2..=4);
        let center = rng.random_range(1..=12);
        let window = build_local_window(center, rng.random_range(0.1..0.6), samples).unwrap();
        let mut layer = random_layer(&mut rng, inp, out, window);
        layer.pmf = [PmfKind::AbsNormalize, PmfKind::SigmoidNormalize, PmfKind::Softmax][case % 3];
        let x = random_map(&mut rng, inp, t);
        let r = random_map(&mut rng, out, t);

        let g = layer.backward(&r, &x).unwrap();
        let loss = |l: &MultiDilatedLayer, x: &FeatureMap| weighted_sum(&l.forward(x).unwrap(), &r);

        let mut errs = Vec::new();
        let num = numeric_grad(x.data(), |v| loss(&layer, &FeatureMap::from_vec(inp, t, v.to_vec()).unwrap()));
        errs.push(("input", rel_err(g.input.data(), &num)));
        let num = numeric_grad(&layer.kernel, |v| {
            let mut l = layer.clone();
            l.kernel = v.to_vec();
            loss(&l, &x)
        });
        errs.push(("kernel", rel_err(&g.kernel, &num)));
        let num = numeric_grad(&layer.bias, |v| {
            let mut l = layer.clone();
            l.bias = v.to_vec();
            loss(&l, &x)
        });
        errs.push(("bias", rel_err(&g.bias, &num)));
        let num = numeric_grad(&layer.weights, |v| {
            let mut l = layer.clone();
            l.weights = v.to_vec();
            loss(&l, &x)
        });
        errs.push(("branch weights", rel_err(&g.weights, &num)));
        for (what, err) in errs {
            worst = worst.max(err);
            ensure!(err < TOL, "layer case {case}: {what} relative error {err:e}");
        }

        if layer.pmf == PmfKind::AbsNormalize {
            // The PMF ignores the scale of W, so the gradient is orthogonal to W.
            let radial: f64 = g.weights.iter().zip(&layer.weights).map(|(a, b)| a * b).sum();
            ensure!(radial.abs() < 1e-8, "layer case {case}: radial derivative {radial:e}");
        }
    }
    Ok(format!("{count} layers, worst relative error {worst:.1e}"))
}

fn micro_sequence(rng: &mut ChaCha8Rng, f: usize, k: usize, t: usize) -> FrameSequence {
    let x = random_map(rng, f, t);
    let labels = (0..t).map(|_| rng.random_range(0..k)).collect();
    FrameSequence::new("micro", x, labels).unwrap()
}

pub fn check_network_gradients(count: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    // The smoothing term stops the gradient through the previous frame, so
    // only plain cross-entropy is a true derivative of loss(). The smoothing
    // half is checked against its own frozen-frame oracle in the unit tests.
    let loss_cfg = LossConfig {
        smoothing_weight: 0.0,
        ..LossConfig::default()
    };
    let mut worst = 0.0f64;
    for case in 0..count {
        let (f, h, k, t) = (3, 2, 2, 8);
        let stages = if case < count * 2 / 3 { 1 } else { 2 };
        let structure = DilationStructure::new(
            (0..stages)
                .map(|_| (0..2).map(|_| rng.random_range(1..=9)).collect())
                .collect(),
        )
        .unwrap();
        let mut model = TcnModel::new(TcnConfig::new(f, h, k, structure.clone()), case).unwrap();
        if case % 4 == 3 {
            let windows: Vec<LocalWindow> = structure
                .flat()
                .iter()
                .map(|&d| build_local_window(d, 0.4, 3).unwrap())
                .collect();
            model.enter_search(&windows, PmfKind::AbsNormalize).unwrap();
            for w in model.branch_weights_mut().unwrap() {
                for v in w.iter_mut() {
                    *v = rng.random_range(0.2..2.0);
                }
            }
        }
        let seq = micro_sequence(&mut rng, f, k, t);
        let (_, g) = model.loss_and_grad(&seq, &loss_cfg).unwrap();

        let mut errs = Vec::new();
        let num = numeric_grad(model.params(), |v| {
            let mut m = model.clone();
            m.params_mut().copy_from_slice(v);
            m.loss(&seq, &loss_cfg).unwrap()
        });
        errs.push(("params", rel_err(&g.params, &num)));

        let gx = model.input_gradient(&seq, &loss_cfg).unwrap();
        let num = numeric_grad(seq.features.data(), |v| {
            let mut s = seq.clone();
            s.features = FeatureMap::from_vec(f, t, v.to_vec()).unwrap();
            model.loss(&s, &loss_cfg).unwrap()
        });
        errs.push(("input", rel_err(gx.data(), &num)));

        if model.in_search() {
            let flat: Vec<f64> = model.branch_weights().unwrap().concat();
            let num = numeric_grad(&flat, |v| {
                let mut m = model.clone();
                for (dst, src) in m.branch_weights_mut().unwrap().iter_mut().zip(v.chunks(3)) {
                    dst.copy_from_slice(src);
                }
                m.loss(&seq, &loss_cfg).unwrap()
            });
            errs.push(("branch weights", rel_err(&g.branch_weights.concat(), &num)));
        }
        for (what, err) in errs {
            worst = worst.max(err);
            ensure!(err < TOL, "network case {case} ({structure}): {what} relative error {err:e}");
        }
    }
    Ok(format!("{count} networks, worst relative error {worst:.1e}"))
}

/// Expectation recomputed from the window formula, independent of the
/// window type: raw rates, weighted sum, floor (with the documented 1e-9
/// relative slack against round-off), clamp to 1.
pub fn expectation_oracle(center: u64, fraction: f64, alpha: &[f64]) -> u64 {
    let s = alpha.len();
    let dd = fraction * center as f64;
    let mut e = 0.0;
    for (i, a) in alpha.iter().enumerate() {
        let d = center as f64 - dd + i as f64 * 2.0 * dd / (s - 1) as f64;
        e += a * d;
    }
    let floored = (e + 1e-9 * e.abs().max(1.0)).floor();
    if floored < 1.0 {
        1
    } else {
        floored as u64
    }
}

pub fn check_expectation(count: usize) -> Check {
    let w = build_local_window(100, 0.1, 3).unwrap();
    let examples: [(&[f64], u64); 3] = [(&[0.0, 1.0, 0.0], 100), (&[1.0 / 3.0; 3], 100), (&[0.6, 0.3, 0.1], 95)];
    for (alpha, want) in examples {
        let got = expected_dilation(&w, alpha).map_err(|e| e.to_string())?;
        ensure!(got == want, "alpha {alpha:?}: got {got}, want {want}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..count {
        let center = rng.random_range(1..=2000);
        let fraction = rng.random_range(0.01..0.99);
        let s = rng.random_range(2..=8);
        let w = build_local_window(center, fraction, s).unwrap();
        let raw: Vec<f64> = (0..s).map(|_| rng.random_range(0.0..1.0)).collect();
        let z: f64 = raw.iter().sum();
        let alpha: Vec<f64> = raw.iter().map(|v| v / z).collect();
        let got = expected_dilation(&w, &alpha).map_err(|e| e.to_string())?;
        let want = expectation_oracle(center, fraction, &alpha);
        ensure!(got == want, "case {case} (D={center}, f={fraction}, {alpha:?}): got {got}, want {want}");
        let lo = (center as f64 * (1.0 - fraction)).floor() - 1.0;
        ensure!(
            got as f64 >= lo.max(1.0) && got as f64 <= center as f64 * (1.0 + fraction),
            "case {case}: {got} outside the window around {center}"
        );
    }
    Ok(format!("3 examples + {count} random pairs"))
}

/// Memoized recursive Levenshtein over the full (i, j) grid.
pub fn edit_reference(a: &[usize], b: &[usize]) -> usize {
    fn go(a: &[usize], b: &[usize], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo)
        } else {
            1 + go(a, b, i + 1, j, memo)
                .min(go(a, b, i, j + 1, memo))
                .min(go(a, b, i + 1, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

fn iou(a: &Segment, b: &Segment) -> f64 {
    let inter = a.end.min(b.end) as f64 - a.start.max(b.start) as f64;
    let union = a.end.max(b.end) as f64 - a.start.min(b.start) as f64;
    inter.max(0.0) / union
}

/// Maximum number of true positives over every one-to-one assignment of
/// predicted to ground-truth segments (same class, IoU >= tau).
fn max_true_positives(pred: &[Segment], gt: &[Segment], tau: f64) -> usize {
    fn go(
        i: usize,
        used: u64,
        pred: &[Segment],
        gt: &[Segment],
        tau: f64,
        memo: &mut HashMap<(usize, u64), usize>,
    ) -> usize {
        if i == pred.len() {
            return 0;
        }
        // Ground-truth segments ending before this prediction starts can never
        // be matched again; dropping them from the key keeps the memo small.
        let used = gt
            .iter()
            .enumerate()
            .filter(|(j, g)| used & (1 << j) != 0 && g.end > pred[i].start)
            .fold(0u64, |m, (j, _)| m | (1 << j));
        if let Some(&v) = memo.get(&(i, used)) {
            return v;
        }
        let mut best = go(i + 1, used, pred, gt, tau, memo);
        for (j, g) in gt.iter().enumerate() {
            if used & (1 << j) == 0 && g.label == pred[i].label && iou(&pred[i], g) >= tau {
                best = best.max(1 + go(i + 1, used | (1 << j), pred, gt, tau, memo));
            }
        }
        memo.insert((i, used), best);
        best
    }
    go(0, 0, pred, gt, tau, &mut HashMap::new())
}

pub fn f1_reference(pred: &[usize], gt: &[usize], tau: f64) -> f64 {
    let (p, g) = (to_segments(pred), to_segments(gt));
    let tp = max_true_positives(&p, &g, tau);
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / p.len() as f64;
    let recall = tp as f64 / g.len() as f64;
    100.0 * 2.0 * precision * recall / (precision + recall)
}

pub fn random_labels(rng: &mut ChaCha8Rng, t: usize, k: usize) -> Vec<usize> {
    if rng.random_bool(0.5) {
        return (0..t).map(|_| rng.random_range(0..k)).collect();
    }
    let mut out = Vec::with_capacity(t);
    while out.len() < t {
        let label = rng.random_range(0..k);
        let run = rng.random_range(1..=8);
        out.extend(std::iter::repeat_n(label, run));
    }
    out.truncate(t);
    out
}

pub fn check_metrics(count: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..count {
        let t = rng.random_range(1..=30);
        let k = rng.random_range(1..=4);
        let gt = random_labels(&mut rng, t, k);
        let pred = if rng.random_bool(0.3) {
            // perturb the ground truth to get realistic near-matches
            let mut p = gt.clone();
            for _ in 0..rng.random_range(0..4) {
                let i = rng.random_range(0..t);
                p[i] = rng.random_range(0..k);
            }
            p
        } else {
            random_labels(&mut rng, t, k)
        };

        let ps: Vec<usize> = to_segments(&pred).iter().map(|s| s.label).collect();
        let gs: Vec<usize> = to_segments(&gt).iter().map(|s| s.label).collect();
        let d = edit_reference(&ps, &gs);
        let expected = 100.0 * (1.0 - d as f64 / ps.len().max(gs.len()) as f64);
        let got = edit_score(&pred, &gt).map_err(|e| e.to_string())?;
        ensure!(got == expected, "edit case {case}: {got} vs {expected} (pred {pred:?} gt {gt:?})");

        for tau in [0.1, 0.25, 0.5] {
            let got = f1_at_iou(&pred, &gt, tau).map_err(|e| e.to_string())?;
            let want = f1_reference(&pred, &gt, tau);
            ensure!(got == want, "f1 case {case} tau {tau}: {got} vs {want} (pred {pred:?} gt {gt:?})");
        }
    }
    Ok(format!("{count} pairs, exact"))
}

pub fn check_receptive_field(count: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut reached_edge = 0;
    for case in 0..count {
        let layers = rng.random_range(1..=6);
        let dilations: Vec<u64> = (0..layers).map(|_| rng.random_range(1..=16)).collect();
        // Kernel width 3: each layer widens the field by d on either side, so
        // the full field spans 1 + 2 * sum(d) frames.
        let radius: u64 = dilations.iter().sum();
        let structure = DilationStructure::new(vec![dilations]).unwrap();
        let model = TcnModel::new(TcnConfig::new(2, 4, 3, structure.clone()), case).unwrap();
        let t = 2 * radius as usize + 41;
        let center = t / 2;
        let x = random_map(&mut rng, 2, t);
        let mut bumped = x.clone();
        for c in 0..2 {
            bumped.set(c, center, x.get(c, center) + 1.0);
        }
        let y0 = model.forward(&x).unwrap().pop().unwrap();
        let y1 = model.forward(&bumped).unwrap().pop().unwrap();
        let mut farthest = 0;
        for tt in 0..t {
            let dist = tt.abs_diff(center) as u64;
            let moved = (0..3).any(|c| y0.get(c, tt) != y1.get(c, tt));
            ensure!(
                dist <= radius || !moved,
                "case {case} ({structure}): frame at distance {dist} > {radius} moved"
            );
            if moved {
                farthest = farthest.max(dist);
            }
        }
        if farthest == radius {
            reached_edge += 1;
        }
    }
    // ReLUs can silence the outermost taps, but usually the field is used fully.
    ensure!(
        reached_edge * 2 >= count,
        "only {reached_edge}/{count} reached the analytic edge"
    );
    Ok(format!("{count} structures, zero influence outside, {reached_edge} reach the edge"))
}

pub fn toy_config(seed: u64, iterations: usize) -> GlobalSearchConfig {
    GlobalSearchConfig {
        iterations,
        population_size: 50,
        mutation_prob: 0.2,
        epochs: 1,
        seed,
        space: build_global_space(2, 10).unwrap(),
        shape: vec![40],
    }
}

/// Genetic and random search on the same hidden-target landscape.
pub fn toy_runs(seed: u64, iterations: usize) -> (GlobalSearchOutcome, GlobalSearchOutcome) {
    let cfg = toy_config(seed, iterations);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let land = HammingLandscape::random(&cfg.space, &cfg.shape, &mut rng).unwrap();
    let genetic = run_global_search(cfg.clone(), &land, 1).unwrap();
    let random = random_search_baseline(cfg, &land, 1).unwrap();
    (genetic, random)
}

pub fn final_best(h: &[HistoryRow]) -> f64 {
    h.last().unwrap().best_fitness
}

pub fn sample_sd(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn check_genetic_vs_random(seeds: u64) -> Check {
    let runs: Vec<_> = (0..seeds).map(|s| toy_runs(s, 100)).collect();
    for (s, (g, r)) in runs.iter().enumerate() {
        let (ge, re) = (g.history.last().unwrap().evaluations, r.history.last().unwrap().evaluations);
        ensure!(ge == re, "seed {s}: budgets differ ({ge} vs {re})");
    }
    let higher = runs
        .iter()
        .filter(|(g, r)| final_best(&g.history) > final_best(&r.history))
        .count();
    let g_sd = sample_sd(&runs.iter().map(|(g, _)| final_best(&g.history)).collect::<Vec<_>>());
    let r_sd = sample_sd(&runs.iter().map(|(_, r)| final_best(&r.history)).collect::<Vec<_>>());
    let summary = format!("genetic higher in {higher}/{seeds}, sd {g_sd:.2} vs random {r_sd:.2}");
    ensure!(higher * 10 >= 9 * seeds as usize, "{summary}");
    ensure!(g_sd < r_sd, "{summary}");
    Ok(summary)
}
