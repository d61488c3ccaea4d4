// Temporary calibration probe, not committed.
use sparsereg::sparse::{SparseMode, SparsityConfig};
use sparsereg::*;
use std::time::Instant;

fn datasets(train_size: usize) -> (OfflineDataset, OfflineDataset) {
    let (total, frac) = match train_size {
        500 => (700, 0.25),
        10_000 => (12_000, 0.16),
        _ => panic!(),
    };
    let ds = OfflineDataset::generate(EnvKind::Pendulum, DataQuality::Medium, total, 2025).unwrap();
    let (train_ds, val_ds) = ds.split(frac).unwrap();
    assert_eq!(train_ds.len(), train_size, "train split size");
    (train_ds, val_ds)
}

fn cell(train_ds: &OfflineDataset, val_ds: &OfflineDataset, sparsity: f64, total_steps: usize, seeds: &[u64]) -> (f64, f64, Vec<f64>) {
    let reg = Regularizer::Sparse(SparsityConfig {
        sparsity,
        mode: SparseMode::PeriodicUpdates,
        refresh_interval: (total_steps / 200).max(1),
        refresh_cutoff: total_steps / 5,
        score_batch: 256,
        mask_biases: true,
        fixed_score_batch: false,
    });
    let mut finals = Vec::new();
    for &seed in seeds {
        let setup = TrainSetup {
            env: EnvKind::Pendulum,
            algo: AlgoKind::Iql,
            hidden: vec![128, 128],
            hyper: AlgoHyper { batch: 128, iql_expectile: 0.9, ..AlgoHyper::default() },
            regularizer: reg,
            total_steps,
            eval_interval: total_steps / 10,
            eval_episodes: 10,
            seed,
        };
        let out = train(&setup, train_ds, val_ds).unwrap();
        let last = out.curve().rows.last().unwrap();
        finals.push(normalized_score(last.return_mean, baselines_for(EnvKind::Pendulum)));
    }
    let n = finals.len() as f64;
    let mean = finals.iter().sum::<f64>() / n;
    let var = finals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt(), finals)
}

#[test]
fn probe() {
    let seeds = [0u64, 1, 2];
    for total_steps in [20_000usize] {
        for size in [500usize] {
            let (train_ds, val_ds) = datasets(size);
            let t0 = Instant::now();
            for sp in [0.5, 0.75, 0.95] {
                let (m, s, f) = cell(&train_ds, &val_ds, sp, total_steps, &seeds);
                println!("steps={total_steps} size={size} sparsity={sp}: mean={m:.4} std={s:.4} finals={f:?}");
            }
            println!("size={size} elapsed {:.1?}", t0.elapsed());
        }
    }
}
