//! Acceptance gate: eleven end-to-end checks, one test per criterion.
//!
//! Every tolerance and protocol constant is pinned here, and every check
//! that needs a reference value computes it with an oracle implemented in
//! this file (central finite differences, full-sort top-k, 1-D expectile
//! search, Monte-Carlo rollouts) rather than with the code under test.

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use sparsereg::algo::train::{train, Agent, TrainSetup};
use sparsereg::data::io as data_io;
use sparsereg::rng;
use sparsereg::sparse::{top_k_keep, SparseMode, SparsityConfig};
use sparsereg::{
    baselines_for, evaluate_policy, normalized_score, run_train, AlgoHyper, AlgoKind, Activation,
    DataQuality, EnvKind, Graph, Hooks, KeyValues, Mlp, OfflineDataset, OptimKind, Optimizer,
    OutputTransform, Policy, PolicyQuality, Regularizer, RunConfig, ScriptedPolicy, TrainOutcome,
};

// ── oracles ─────────────────────────────────────────────────────────────

/// Central finite difference of `eval` w.r.t. every parameter of every
/// network, h pinned by the caller.
fn fd_grads(nets: &mut Vec<Mlp>, h: f64, eval: impl Fn(&[Mlp]) -> f64) -> Vec<Vec<f64>> {
    let mut all = Vec::with_capacity(nets.len());
    for ni in 0..nets.len() {
        let mut grads = Vec::with_capacity(nets[ni].num_params());
        for ti in 0..nets[ni].parameters().len() {
            for j in 0..nets[ni].parameters()[ti].data.len() {
                let orig = nets[ni].parameters()[ti].data[j];
                nets[ni].parameters_mut()[ti].data[j] = orig + h;
                let up = eval(nets);
                nets[ni].parameters_mut()[ti].data[j] = orig - h;
                let down = eval(nets);
                nets[ni].parameters_mut()[ti].data[j] = orig;
                grads.push((up - down) / (2.0 * h));
            }
        }
        all.push(grads);
    }
    all
}

/// Reference top-k by full sort: score descending, ties to the lower index.
fn brute_force_top_k(scores: &[f64], k: usize) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut keep = vec![false; scores.len()];
    for &i in &idx[..k] {
        keep[i] = true;
    }
    keep
}

/// Expectile of `sample` by bisection on the derivative of the (convex)
/// asymmetric least-squares objective, which is strictly increasing in v.
fn expectile_by_search(sample: &[f64], tau: f64) -> f64 {
    let slope = |v: f64| -> f64 {
        sample
            .iter()
            .map(|&y| {
                let u = y - v;
                let w = (tau - if u < 0.0 { 1.0 } else { 0.0 }).abs();
                -2.0 * w * u
            })
            .sum::<f64>()
    };
    let mut lo = sample.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = sample.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn uniform(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Random architecture with tanh hidden layers: the difference quotient
/// only converges at 1e-4 relative tolerance on a smooth loss, and relu
/// pre-activations can sit arbitrarily close to the kink.
fn random_net(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize, out: OutputTransform) -> Mlp {
    let mut dims = vec![in_dim];
    for _ in 0..rng.gen_range(1..=2usize) {
        dims.push(rng.gen_range(3..=8));
    }
    dims.push(out_dim);
    let mut init = rng::stream(rng.gen(), "acceptance-net-init");
    Mlp::new(&dims, Activation::Tanh, out, Hooks::default(), &mut init).unwrap()
}

fn flat_autodiff_grads(net: &Mlp) -> Vec<f64> {
    net.parameters().iter().flat_map(|t| t.grad.iter().copied()).collect()
}

/// |autodiff - fd| <= atol + rtol * |fd| elementwise; returns the largest
/// relative error seen and the number of parameters checked.
fn compare_grads(auto: &[Vec<f64>], fd: &[Vec<f64>], rtol: f64, atol: f64) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut count = 0;
    for (a_net, f_net) in auto.iter().zip(fd) {
        assert_eq!(a_net.len(), f_net.len());
        for (&a, &f) in a_net.iter().zip(f_net) {
            let err = (a - f).abs();
            assert!(
                err <= atol + rtol * f.abs(),
                "gradient mismatch: autodiff {a}, finite difference {f}"
            );
            if f.abs() > atol {
                worst = worst.max(err / f.abs());
            }
            count += 1;
        }
    }
    (worst, count)
}

// ── criterion 1: gradients match central finite differences ────────────

const FD_H: f64 = 1e-5;
const GRAD_RTOL: f64 = 1e-4;
const GRAD_ATOL: f64 = 1e-8;

#[test]
fn criterion_01_gradient_oracle() {
    let t0 = Instant::now();
    let mut rng = rng::stream(41, "acceptance-grad-oracle");
    let mut networks_checked = 0;
    let mut params_checked = 0;
    let mut worst = 0.0f64;

    // Behavioral cloning: mean squared action error on a bounded actor.
    for _ in 0..8 {
        let od = rng.gen_range(2..=4);
        let ad = rng.gen_range(1..=2);
        let n = rng.gen_range(3..=6);
        let obs = uniform(&mut rng, n * od, -1.0, 1.0);
        let act = uniform(&mut rng, n * ad, -0.9, 0.9);
        let mut nets =
            vec![random_net(&mut rng, od, ad, OutputTransform::TanhBounded(1.0))];

        let loss = |nets: &[Mlp]| -> f64 {
            let mut g = Graph::new();
            let x = g.constant(n, od, &obs).unwrap();
            let pass = nets[0].forward_eval(&mut g, x).unwrap();
            let t = g.constant(n, ad, &act).unwrap();
            let d = g.sub(pass.output, t).unwrap();
            let sq = g.square(d);
            let m = g.mean(sq);
            g.scalar(m).unwrap()
        };
        let fd = fd_grads(&mut nets, FD_H, loss);

        let mut g = Graph::new();
        let x = g.constant(n, od, &obs).unwrap();
        let pass = nets[0].forward_eval(&mut g, x).unwrap();
        let t = g.constant(n, ad, &act).unwrap();
        let d = g.sub(pass.output, t).unwrap();
        let sq = g.square(d);
        let m = g.mean(sq);
        g.backward(m).unwrap();
        nets[0].zero_grad();
        nets[0].accumulate_grads(&g, &pass).unwrap();
        let auto = vec![flat_autodiff_grads(&nets[0])];

        let (w, c) = compare_grads(&auto, &fd, GRAD_RTOL, GRAD_ATOL);
        worst = worst.max(w);
        params_checked += c;
        networks_checked += 1;
    }

    // Twin-critic temporal difference loss: mse(Q1, y) + mse(Q2, y)
    // against fixed bootstrap targets.
    for _ in 0..6 {
        let od = rng.gen_range(2..=4);
        let ad = rng.gen_range(1..=2);
        let n = rng.gen_range(3..=6);
        let sa = uniform(&mut rng, n * (od + ad), -1.0, 1.0);
        let y = uniform(&mut rng, n, -2.0, 2.0);
        let mut nets = vec![
            random_net(&mut rng, od + ad, 1, OutputTransform::Identity),
            random_net(&mut rng, od + ad, 1, OutputTransform::Identity),
        ];

        let build = |g: &mut Graph, nets: &[Mlp]| {
            let x = g.constant(n, od + ad, &sa).unwrap();
            let p1 = nets[0].forward_eval(g, x).unwrap();
            let p2 = nets[1].forward_eval(g, x).unwrap();
            let t = g.constant(n, 1, &y).unwrap();
            let d1 = g.sub(p1.output, t).unwrap();
            let d2 = g.sub(p2.output, t).unwrap();
            let s1 = g.square(d1);
            let s2 = g.square(d2);
            let m1 = g.mean(s1);
            let m2 = g.mean(s2);
            let loss = g.add(m1, m2).unwrap();
            (loss, p1, p2)
        };
        let fd = fd_grads(&mut nets, FD_H, |nets| {
            let mut g = Graph::new();
            let (loss, _, _) = build(&mut g, nets);
            g.scalar(loss).unwrap()
        });

        let mut g = Graph::new();
        let (loss, p1, p2) = build(&mut g, &nets);
        g.backward(loss).unwrap();
        nets[0].zero_grad();
        nets[1].zero_grad();
        nets[0].accumulate_grads(&g, &p1).unwrap();
        nets[1].accumulate_grads(&g, &p2).unwrap();
        let auto = vec![flat_autodiff_grads(&nets[0]), flat_autodiff_grads(&nets[1])];

        let (w, c) = compare_grads(&auto, &fd, GRAD_RTOL, GRAD_ATOL);
        worst = worst.max(w);
        params_checked += c;
        networks_checked += 2;
    }

    // Expectile value regression: mean(|tau - 1{u<0}| u^2), u = q - V(s),
    // with the asymmetric weight recomputed from the current residuals
    // exactly as the training step does.
    for i in 0..6 {
        let od = rng.gen_range(2..=4);
        let n = rng.gen_range(3..=6);
        let tau: f64 = if i % 2 == 0 { 0.7 } else { 0.9 };
        let obs = uniform(&mut rng, n * od, -1.0, 1.0);
        let q = uniform(&mut rng, n, -2.0, 2.0);
        let mut nets = vec![random_net(&mut rng, od, 1, OutputTransform::Identity)];

        let build = |g: &mut Graph, nets: &[Mlp]| {
            let x = g.constant(n, od, &obs).unwrap();
            let pass = nets[0].forward_eval(g, x).unwrap();
            let t = g.constant(n, 1, &q).unwrap();
            let u = g.sub(t, pass.output).unwrap();
            let w: Vec<f64> = g
                .value(u)
                .iter()
                .map(|&ui| (tau - if ui < 0.0 { 1.0 } else { 0.0 }).abs())
                .collect();
            let sq = g.square(u);
            let weighted = g.mul_const(sq, &w).unwrap();
            let loss = g.mean(weighted);
            (loss, pass)
        };

        // The weight is piecewise constant in the residual sign, so the
        // difference quotient only matches away from sign flips; keep the
        // test point clear of them.
        {
            let mut g = Graph::new();
            let (_, pass) = build(&mut g, &nets);
            let v = g.value(pass.output);
            assert!(
                q.iter().zip(v).all(|(&qi, &vi)| (qi - vi).abs() > 1e3 * FD_H),
                "residual too close to a sign flip for finite differences"
            );
        }

        let fd = fd_grads(&mut nets, FD_H, |nets| {
            let mut g = Graph::new();
            let (loss, _) = build(&mut g, nets);
            g.scalar(loss).unwrap()
        });

        let mut g = Graph::new();
        let (loss, pass) = build(&mut g, &nets);
        g.backward(loss).unwrap();
        nets[0].zero_grad();
        nets[0].accumulate_grads(&g, &pass).unwrap();
        let auto = vec![flat_autodiff_grads(&nets[0])];

        let (w, c) = compare_grads(&auto, &fd, GRAD_RTOL, GRAD_ATOL);
        worst = worst.max(w);
        params_checked += c;
        networks_checked += 1;
    }

    let elapsed = t0.elapsed();
    assert!(networks_checked >= 20, "only {networks_checked} networks checked");
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:.2?}");
    println!(
        "criterion 01 ok: {networks_checked} networks, {params_checked} parameters, \
         max relative error {worst:.3e}, {elapsed:.2?}"
    );
}

// ── criterion 2: exact mask popcounts and bitwise zeros, every step ─────

#[test]
fn criterion_02_mask_exactness_over_spu_run() {
    let t0 = Instant::now();
    const SPARSITY: f64 = 0.95;
    const STEPS: usize = 2000;
    let cfg = SparsityConfig {
        sparsity: SPARSITY,
        mode: SparseMode::PeriodicUpdates,
        refresh_interval: 20,
        refresh_cutoff: 400,
        score_batch: 64,
        mask_biases: true,
        fixed_score_batch: false,
    };
    let setup = TrainSetup {
        env: EnvKind::Pendulum,
        algo: AlgoKind::Iql,
        hidden: vec![16, 16],
        hyper: AlgoHyper { batch: 64, ..AlgoHyper::default() },
        regularizer: Regularizer::Sparse(cfg),
        total_steps: STEPS,
        eval_interval: STEPS,
        eval_episodes: 1,
        seed: 0,
    };
    let ds = OfflineDataset::generate(EnvKind::Pendulum, DataQuality::Medium, 1000, 7).unwrap();
    let mut agent = Agent::new(&setup).unwrap();
    let mut batch_rng = rng::stream(0, "acceptance-mask-batch");
    let mut score_rng = rng::stream(0, "acceptance-mask-score");

    let mut refreshes = 0;
    for step in 0..=STEPS {
        if cfg.should_refresh(step) {
            let score = ds.sample_batch(cfg.score_batch, &mut score_rng).unwrap();
            agent.refresh_masks(&score).unwrap();
            refreshes += 1;
        }
        if step > 0 {
            let batch = ds.sample_batch(setup.hyper.batch, &mut batch_rng).unwrap();
            agent.update(&batch).unwrap();
        }
        for view in agent.networks() {
            let masks = view.masks.expect("sparse run exposes masks");
            let p = view.net.num_params();
            let kept: usize = masks.iter().map(|m| m.count_kept()).sum();
            let expected = ((1.0 - SPARSITY) * p as f64).round() as usize;
            assert_eq!(kept, expected, "step {step}, {}: popcount drifted", view.name);
            for (t, m) in view.net.parameters().iter().zip(masks) {
                for (i, &v) in t.data.iter().enumerate() {
                    if !m.keep(i) {
                        assert_eq!(
                            v.to_bits(),
                            0.0f64.to_bits(),
                            "step {step}, {}: masked entry not bitwise zero",
                            view.name
                        );
                    }
                }
            }
        }
    }

    let elapsed = t0.elapsed();
    assert_eq!(refreshes, 21, "step 0 plus 20 periodic refreshes");
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:.2?}");
    println!(
        "criterion 02 ok: {STEPS} steps, {refreshes} refreshes, six networks exact, {elapsed:.2?}"
    );
}

// ── criterion 3: top-k equals full-sort brute force ─────────────────────

#[test]
fn criterion_03_top_k_matches_brute_force() {
    let t0 = Instant::now();
    let mut rng = rng::stream(43, "acceptance-topk");
    let mut cases = 0;
    for i in 0..200 {
        let len = rng.gen_range(1..=10_000);
        let k = rng.gen_range(0..=len);
        let scores: Vec<f64> = match i % 4 {
            // Continuous scores, ties practically impossible.
            0 | 1 => uniform(&mut rng, len, -1.0, 1.0),
            // Heavily quantized scores: long tie runs.
            2 => (0..len).map(|_| f64::from(rng.gen_range(0..4u8))).collect(),
            // All ties.
            _ => vec![0.25; len],
        };
        let got = top_k_keep(&scores, k).unwrap();
        let want = brute_force_top_k(&scores, k);
        assert_eq!(got, want, "case {i}: len {len}, k {k}");
        assert_eq!(got.iter().filter(|&&b| b).count(), k);
        cases += 1;
    }
    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:.2?}");
    println!("criterion 03 ok: {cases} vectors including all-ties, {elapsed:.2?}");
}

// ── criterion 4: refresh schedule ───────────────────────────────────────

#[test]
fn criterion_04_refresh_schedule() {
    let spu = SparsityConfig {
        sparsity: 0.5,
        mode: SparseMode::PeriodicUpdates,
        refresh_interval: 5,
        refresh_cutoff: 20,
        score_batch: 8,
        mask_biases: true,
        fixed_score_batch: false,
    };
    assert!(spu.should_refresh(0), "step 0 always computes the initial mask");
    let fired: Vec<usize> = (1..=100).filter(|&s| spu.should_refresh(s)).collect();
    assert_eq!(fired, vec![5, 10, 15, 20]);

    let sfi = SparsityConfig {
        mode: SparseMode::FixedAtInit,
        refresh_cutoff: 0,
        ..spu
    };
    assert!(sfi.should_refresh(0));
    assert!(
        (1..=10_000).all(|s| !sfi.should_refresh(s)),
        "fixed-at-init refreshed after step 0"
    );
    println!("criterion 04 ok: fired set {{5, 10, 15, 20}}, fixed mode silent after step 0");
}

// ── criterion 5: BC overfits small data; sparse training resists ────────

const C5_SEEDS: [u64; 3] = [0, 1, 2];
const C5_STEPS: usize = 20_000;
const C5_HIDDEN: [usize; 2] = [64, 64];

#[test]
fn criterion_05_overfitting_reproduction() {
    let t0 = Instant::now();
    let full =
        OfflineDataset::generate(EnvKind::PointMass, DataQuality::Expert, 2500, 2025).unwrap();
    let (train_ds, val_ds) = full.split(0.8).unwrap();
    assert_eq!(train_ds.len(), 500);
    assert_eq!(val_ds.len(), 2000);

    let setup = |reg: Regularizer, seed: u64| TrainSetup {
        env: EnvKind::PointMass,
        algo: AlgoKind::Bc,
        hidden: C5_HIDDEN.to_vec(),
        hyper: AlgoHyper::default(),
        regularizer: reg,
        total_steps: C5_STEPS,
        eval_interval: 100,
        eval_episodes: 1,
        seed,
    };
    let sparse_reg = Regularizer::Sparse(SparsityConfig {
        sparsity: 0.95,
        mode: SparseMode::PeriodicUpdates,
        refresh_interval: 100,
        refresh_cutoff: C5_STEPS / 5,
        score_batch: 256,
        mask_biases: true,
        fixed_score_batch: false,
    });

    let finals = |outcome: &TrainOutcome| {
        let rows = &outcome.curve().rows;
        let last = rows.last().unwrap();
        let min_val = rows.iter().map(|r| r.val_mse).fold(f64::INFINITY, f64::min);
        (last.train_mse, last.val_mse, min_val)
    };

    let mut sparse_wins = 0;
    let mut base_train_sum = 0.0;
    let mut sparse_train_sum = 0.0;
    for seed in C5_SEEDS {
        let base = train(&setup(Regularizer::None, seed), &train_ds, &val_ds).unwrap();
        let sparse = train(&setup(sparse_reg, seed), &train_ds, &val_ds).unwrap();
        let (base_train, base_val, base_min_val) = finals(&base);
        let (sparse_train, sparse_val, _) = finals(&sparse);

        // (a) the baseline's validation error has rebounded from its best.
        assert!(
            base_val >= 1.2 * base_min_val,
            "seed {seed}: final val mse {base_val:.6} vs run minimum {base_min_val:.6}"
        );
        // (b) tallied below.
        if sparse_val < base_val {
            sparse_wins += 1;
        }
        base_train_sum += base_train;
        sparse_train_sum += sparse_train;
    }
    // (b) sparse ends with lower validation error in most seeds.
    assert!(sparse_wins >= 2, "sparse beat baseline in only {sparse_wins}/3 seeds");
    // (c) the baseline fits the training set harder than sparse does.
    assert!(
        base_train_sum < sparse_train_sum,
        "baseline train mse {:.6} not below sparse {:.6}",
        base_train_sum / 3.0,
        sparse_train_sum / 3.0
    );

    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs_f64() < 300.0, "took {elapsed:.2?}");
    println!(
        "criterion 05 ok: rebound on 3/3 seeds, sparse wins {sparse_wins}/3, \
         train mse ordering holds, {elapsed:.2?}"
    );
}

// ── criterion 6: sparsity helps small data, not large ───────────────────

const C6_SPARSITIES: [f64; 3] = [0.5, 0.75, 0.95];
const C6_SEEDS: [u64; 3] = [0, 1, 2];
const C6_STEPS: usize = 20_000;
const C6_HIDDEN: [usize; 2] = [96, 96];

fn c6_datasets(train_size: usize) -> (OfflineDataset, OfflineDataset) {
    // Validation splits on whole-trajectory boundaries, so total size and
    // fraction are chosen to land the train split exactly.
    let (total, frac) = match train_size {
        500 => (700, 0.25),
        10_000 => (12_000, 0.16),
        other => panic!("unexpected train size {other}"),
    };
    let full =
        OfflineDataset::generate(EnvKind::Pendulum, DataQuality::Medium, total, 2025).unwrap();
    let (train_ds, val_ds) = full.split(frac).unwrap();
    assert_eq!(train_ds.len(), train_size);
    (train_ds, val_ds)
}

fn c6_cell_stats(
    train_ds: &OfflineDataset,
    val_ds: &OfflineDataset,
    sparsity: f64,
) -> (f64, f64) {
    let reg = Regularizer::Sparse(SparsityConfig {
        sparsity,
        mode: SparseMode::PeriodicUpdates,
        refresh_interval: C6_STEPS / 200,
        refresh_cutoff: C6_STEPS / 5,
        score_batch: 256,
        mask_biases: true,
        fixed_score_batch: false,
    });
    let baselines = baselines_for(EnvKind::Pendulum);
    let mut finals = Vec::new();
    for seed in C6_SEEDS {
        let setup = TrainSetup {
            env: EnvKind::Pendulum,
            algo: AlgoKind::Iql,
            hidden: C6_HIDDEN.to_vec(),
            hyper: AlgoHyper::default(),
            regularizer: reg,
            total_steps: C6_STEPS,
            eval_interval: C6_STEPS / 10,
            eval_episodes: 10,
            seed,
        };
        let out = train(&setup, train_ds, val_ds).unwrap();
        let last = out.curve().rows.last().unwrap();
        finals.push(normalized_score(last.return_mean, baselines));
    }
    let n = finals.len() as f64;
    let mean = finals.iter().sum::<f64>() / n;
    let var = finals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[test]
fn criterion_06_sparsity_by_size_trend() {
    let t0 = Instant::now();

    let (small_train, small_val) = c6_datasets(500);
    let small: Vec<(f64, f64)> = C6_SPARSITIES
        .iter()
        .map(|&sp| c6_cell_stats(&small_train, &small_val, sp))
        .collect();
    // At 500 transitions the highest sparsity wins outright.
    assert!(
        small[2].0 > small[0].0 && small[2].0 > small[1].0,
        "size 500 means: 0.5 -> {:.4}, 0.75 -> {:.4}, 0.95 -> {:.4}",
        small[0].0,
        small[1].0,
        small[2].0
    );

    let (big_train, big_val) = c6_datasets(10_000);
    let big: Vec<(f64, f64)> = C6_SPARSITIES
        .iter()
        .map(|&sp| c6_cell_stats(&big_train, &big_val, sp))
        .collect();
    // At 10k transitions 0.95 no longer dominates: 0.75 sits within one
    // pooled standard deviation of the best cell.
    let best = big
        .iter()
        .cloned()
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap();
    let mid = big[1];
    let pooled = ((best.1 * best.1 + mid.1 * mid.1) / 2.0).sqrt();
    assert!(
        best.0 - mid.0 <= pooled,
        "size 10k means: 0.5 -> {:.4}, 0.75 -> {:.4}, 0.95 -> {:.4}; \
         best {:.4} exceeds 0.75 by more than pooled std {:.4}",
        big[0].0,
        big[1].0,
        big[2].0,
        best.0,
        pooled
    );

    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs_f64() < 1800.0, "took {elapsed:.2?}");
    println!(
        "criterion 06 ok: size 500 favors 0.95 ({:.3} vs {:.3}/{:.3}); \
         size 10k within pooled std ({:.3} vs best {:.3}); {elapsed:.1?}",
        small[2].0, small[0].0, small[1].0, mid.0, best.0
    );
}

// ── criterion 7: sparsity 0 is the identity ─────────────────────────────

#[test]
fn criterion_07_sparse_zero_identity() {
    let ds = OfflineDataset::generate(EnvKind::PointMass, DataQuality::Expert, 600, 3).unwrap();
    let (train_ds, val_ds) = ds.split(0.2).unwrap();
    let setup = |reg: Regularizer| TrainSetup {
        env: EnvKind::PointMass,
        algo: AlgoKind::Bc,
        hidden: vec![16],
        hyper: AlgoHyper::default(),
        regularizer: reg,
        total_steps: 400,
        eval_interval: 100,
        eval_episodes: 2,
        seed: 9,
    };
    let dense = train(&setup(Regularizer::None), &train_ds, &val_ds).unwrap();
    let sparse_zero = Regularizer::Sparse(SparsityConfig {
        sparsity: 0.0,
        mode: SparseMode::PeriodicUpdates,
        refresh_interval: 50,
        refresh_cutoff: 200,
        score_batch: 64,
        mask_biases: true,
        fixed_score_batch: false,
    });
    let sparse = train(&setup(sparse_zero), &train_ds, &val_ds).unwrap();
    assert_eq!(
        dense.curve().to_csv(),
        sparse.curve().to_csv(),
        "sparsity 0.0 diverged from the dense run"
    );
    println!("criterion 07 ok: dense and sparsity-0 curves byte-identical");
}

// ── criterion 8: normalized score anchors ───────────────────────────────

const SCORE_TOL: f64 = 0.05;
// Enough rollouts that Monte-Carlo error is well inside the tolerance
// even for the heavy-tailed random-policy returns. The anchors were
// pinned at a different seed, so this is a genuine out-of-sample check.
const SCORE_EPISODES: usize = 5000;
const SCORE_SEED: u64 = 31;

#[test]
fn criterion_08_normalized_score_anchors() {
    for env in [EnvKind::PointMass, EnvKind::Pendulum] {
        let baselines = baselines_for(env);
        let score_of = |quality: PolicyQuality| {
            let policy = ScriptedPolicy { env, quality };
            let (mean, _) =
                evaluate_policy(&policy as &dyn Policy, env, SCORE_EPISODES, SCORE_SEED).unwrap();
            normalized_score(mean, baselines)
        };
        let expert = score_of(PolicyQuality::Expert);
        let random = score_of(PolicyQuality::Random);
        assert!(
            (expert - 1.0).abs() <= SCORE_TOL,
            "{}: expert scored {expert:.4}",
            env.name()
        );
        assert!(random.abs() <= SCORE_TOL, "{}: random scored {random:.4}", env.name());
        println!(
            "criterion 08 ok: {} expert {expert:.4}, random {random:.4}",
            env.name()
        );
    }
}

// ── criterion 9: expectile regression recovers the right statistic ──────

const EXPECTILE_TOL: f64 = 1e-3;

/// Fit a single free value with the same asymmetric-least-squares recipe
/// the value network trains with: constant input, Adam, recomputed weights.
fn fit_expectile_value(sample: &[f64], tau: f64) -> f64 {
    let n = sample.len();
    let mut init = rng::stream(47, "acceptance-expectile-init");
    let mut net =
        Mlp::new(&[1, 1], Activation::Relu, OutputTransform::Identity, Hooks::default(), &mut init)
            .unwrap();
    let sizes: Vec<usize> = net.parameters().iter().map(|t| t.numel()).collect();
    let mut opt = Optimizer::new(OptimKind::Adam, 5e-2, &sizes).unwrap();
    let zeros = vec![0.0; n];
    for _ in 0..4000 {
        let mut g = Graph::new();
        let x = g.constant(n, 1, &zeros).unwrap();
        let pass = net.forward_eval(&mut g, x).unwrap();
        let t = g.constant(n, 1, sample).unwrap();
        let u = g.sub(t, pass.output).unwrap();
        let w: Vec<f64> = g
            .value(u)
            .iter()
            .map(|&ui| (tau - if ui < 0.0 { 1.0 } else { 0.0 }).abs())
            .collect();
        let sq = g.square(u);
        let weighted = g.mul_const(sq, &w).unwrap();
        let loss = g.mean(weighted);
        g.backward(loss).unwrap();
        net.zero_grad();
        net.accumulate_grads(&g, &pass).unwrap();
        let mut params = net.parameters_mut();
        opt.step(&mut params, None).unwrap();
    }
    net.predict(&[0.0], 1).unwrap()[0]
}

#[test]
fn criterion_09_expectile_oracle() {
    let mut rng = rng::stream(45, "acceptance-expectile-sample");
    // Right-skewed sample: exponentiated gaussians.
    let sample: Vec<f64> = (0..200)
        .map(|_| {
            let u1: f64 = 1.0 - rng.gen::<f64>();
            let u2: f64 = rng.gen();
            let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            (1.2 * z).exp()
        })
        .collect();
    let mean = sample.iter().sum::<f64>() / sample.len() as f64;

    // tau = 0.5 is the mean, both for the search oracle and the fitted net.
    let oracle_mid = expectile_by_search(&sample, 0.5);
    assert!((oracle_mid - mean).abs() < 1e-9, "search oracle is off the mean");
    let fit_mid = fit_expectile_value(&sample, 0.5);
    assert!(
        (fit_mid - mean).abs() <= EXPECTILE_TOL,
        "tau 0.5 fit {fit_mid:.6} vs mean {mean:.6}"
    );

    // tau = 0.9 sits strictly above the mean on a right-skewed sample.
    let oracle_high = expectile_by_search(&sample, 0.9);
    let fit_high = fit_expectile_value(&sample, 0.9);
    assert!(oracle_high > mean);
    assert!(fit_high > mean, "tau 0.9 fit {fit_high:.6} not above mean {mean:.6}");
    assert!(
        (fit_high - oracle_high).abs() <= EXPECTILE_TOL,
        "tau 0.9 fit {fit_high:.6} vs oracle {oracle_high:.6}"
    );
    println!(
        "criterion 09 ok: tau 0.5 fit {fit_mid:.6} = mean {mean:.6}; \
         tau 0.9 fit {fit_high:.6} > mean (oracle {oracle_high:.6})"
    );
}

// ── criterion 10: end-to-end determinism through the runner ─────────────

#[test]
fn criterion_10_end_to_end_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let kv = KeyValues::from_pairs([
        ("env", "pointmass"),
        ("algorithm", "td3bc"),
        ("output_dir", dir.path().join("run").to_str().unwrap()),
        ("dataset.quality", "expert"),
        ("dataset.size", "600"),
        ("dataset.gen_seed", "3"),
        ("hidden_dims", "8"),
        ("total_steps", "60"),
        ("eval_interval", "20"),
        ("eval_episodes", "2"),
        ("seeds", "0,1"),
        ("regularizer.kind", "sparse"),
        ("regularizer.sparsity", "0.5"),
        ("regularizer.refresh_interval", "10"),
        ("regularizer.refresh_cutoff", "20"),
    ]);
    let cfg = RunConfig::resolve(&kv).unwrap();

    let first = run_train(&cfg).unwrap();
    let first_bytes: Vec<Vec<u8>> =
        first.curve_paths.iter().map(|p| std::fs::read(p).unwrap()).collect();
    // Same config, same directory, run again.
    let second = run_train(&cfg).unwrap();
    for (path, bytes) in second.curve_paths.iter().zip(&first_bytes) {
        assert_eq!(
            &std::fs::read(path).unwrap(),
            bytes,
            "{} changed between identical runs",
            path.display()
        );
    }
    println!("criterion 10 ok: repeated runs write byte-identical curve files");
}

// ── criterion 11: dataset serialization round trip ──────────────────────

#[test]
fn criterion_11_serialization_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = OfflineDataset::generate(EnvKind::Pendulum, DataQuality::Medium, 600, 11).unwrap();
    let base = dir.path().join("ds");
    data_io::save(&ds, &base).unwrap();
    let loaded = data_io::load(&base).unwrap();

    assert_eq!(loaded.env, ds.env);
    assert_eq!(loaded.quality, ds.quality);
    assert_eq!(loaded.len(), ds.len());
    for (a, b) in ds.transitions().iter().zip(loaded.transitions()) {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.s), bits(&b.s));
        assert_eq!(bits(&a.a), bits(&b.a));
        assert_eq!(a.r.to_bits(), b.r.to_bits());
        assert_eq!(bits(&a.s_next), bits(&b.s_next));
        assert_eq!(a.done, b.done);
    }
    // Saving the loaded copy reproduces the files byte for byte.
    let base2 = dir.path().join("ds2");
    data_io::save(&loaded, &base2).unwrap();
    assert_eq!(
        std::fs::read(data_io::bin_path(&base)).unwrap(),
        std::fs::read(data_io::bin_path(&base2)).unwrap()
    );
    assert_eq!(
        std::fs::read(data_io::manifest_path(&base)).unwrap(),
        std::fs::read(data_io::manifest_path(&base2)).unwrap()
    );

    // Truncations are rejected outright, never partially loaded.
    let bin = std::fs::read(data_io::bin_path(&base)).unwrap();
    let cut = dir.path().join("cut");
    std::fs::copy(data_io::manifest_path(&base), data_io::manifest_path(&cut)).unwrap();
    std::fs::write(data_io::bin_path(&cut), &bin[..bin.len() - 8]).unwrap();
    assert!(data_io::load(&cut).is_err(), "truncated binary accepted");

    let padded = dir.path().join("padded");
    std::fs::copy(data_io::manifest_path(&base), data_io::manifest_path(&padded)).unwrap();
    let mut grown = bin.clone();
    grown.extend_from_slice(&[0u8; 8]);
    std::fs::write(data_io::bin_path(&padded), &grown).unwrap();
    assert!(data_io::load(&padded).is_err(), "padded binary accepted");

    let torn = dir.path().join("torn");
    let manifest = std::fs::read(data_io::manifest_path(&base)).unwrap();
    std::fs::write(data_io::manifest_path(&torn), &manifest[..manifest.len() / 2]).unwrap();
    std::fs::write(data_io::bin_path(&torn), &bin).unwrap();
    assert!(data_io::load(&torn).is_err(), "truncated manifest accepted");

    println!("criterion 11 ok: bitwise round trip; truncated and padded files rejected");
}
