use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::fit::{train, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{InitScheme, ModelConfig, Transformer};
use crate::templates::{Splits, TemplateTask};
use crate::tensor::Rng;

/// A named model configuration. `k` and `vocab` are overwritten per task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    pub model: ModelConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub n_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Each cell trains once per rate and keeps the run with the lowest
    /// best-epoch validation loss.
    pub lrs: Vec<f64>,
    #[serde(default = "hundred")]
    pub n_eval: usize,
    #[serde(default = "hundred")]
    pub eval_alphabet: usize,
    pub train: TrainConfig,
    #[serde(default = "one")]
    pub jobs: usize,
}

fn hundred() -> usize {
    100
}
fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: String,
    pub n: usize,
    pub seed: u64,
    pub lr: f64,
    pub epoch_best: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub test_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellFailure {
    pub variant: String,
    pub n: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<CellFailure>,
}

/// Vocabulary size that fits the regular tokens, the largest training
/// alphabet and two evaluation alphabets.
pub fn sweep_vocab(task: &TemplateTask, n_max: usize, eval_alphabet: usize) -> usize {
    let reg_top = task.regulars().iter().max().map_or(0, |&r| r + 1);
    reg_top + n_max + 2 * eval_alphabet
}

/// Runs every (variant, n, seed) cell. All variants of a cell see the same
/// data and the same initialization seed. Cells run on `jobs` threads;
/// results come back in grid order regardless of scheduling.
pub fn data_efficiency_sweep(task: &TemplateTask, variants: &[Variant], cfg: &SweepConfig) -> Result<SweepOutcome> {
    if cfg.n_grid.is_empty() || cfg.n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("n grid must be nonempty and strictly ascending".into()));
    }
    if cfg.lrs.is_empty() || cfg.seeds.is_empty() || variants.is_empty() {
        return Err(Error::Config("sweep needs at least one rate, seed and variant".into()));
    }
    cfg.train.validate()?;
    let n_max = *cfg.n_grid.last().expect("nonempty");
    let vocab = sweep_vocab(task, n_max, cfg.eval_alphabet);
    let task = task.clone().with_vocab_size(vocab)?;

    let mut cells = Vec::new();
    for v in variants {
        for &n in &cfg.n_grid {
            for &seed in &cfg.seeds {
                cells.push((v, n, seed));
            }
        }
    }
    let results: Mutex<Vec<Option<std::result::Result<SweepRow, String>>>> = Mutex::new(vec![None; cells.len()]);
    let next = AtomicUsize::new(0);
    let jobs = cfg.jobs.clamp(1, cells.len());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let (v, n, seed) = cells[i];
                let r = run_cell(&task, v, n, seed, cfg).map_err(|e| e.to_string());
                results.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    let mut out = SweepOutcome::default();
    for ((v, n, seed), r) in cells.iter().zip(results.into_inner().expect("workers joined")) {
        match r.expect("every cell ran") {
            Ok(row) => out.rows.push(row),
            Err(error) => out.failures.push(CellFailure {
                variant: v.name.clone(),
                n: *n,
                seed: *seed,
                error,
            }),
        }
    }
    Ok(out)
}

fn run_cell(task: &TemplateTask, v: &Variant, n: usize, seed: u64, cfg: &SweepConfig) -> Result<SweepRow> {
    let root = Rng::new(seed).child_indexed("cell", n as u64);
    let splits = Splits::generate(task, n, cfg.n_eval, cfg.eval_alphabet, root.child("data").seed())?;
    let mut mc = v.model.clone();
    mc.k = task.k();
    mc.vocab = task.vocab_size;
    let mut best: Option<SweepRow> = None;
    for &lr in &cfg.lrs {
        let mut model = Transformer::init(mc.clone(), root.child("init").seed(), InitScheme::Standard)?;
        let tc = TrainConfig {
            lr,
            seed: root.child("order").seed(),
            ..cfg.train.clone()
        };
        let log = train(&mut model, &splits, &tc)?;
        let b = log.best();
        let row = SweepRow {
            variant: v.name.clone(),
            n,
            seed,
            lr,
            epoch_best: b.epoch,
            train_loss: b.train_loss,
            val_loss: b.val_loss,
            test_loss: b.test_loss,
        };
        if best.as_ref().is_none_or(|r| row.val_loss < r.val_loss) {
            best = Some(row);
        }
    }
    Ok(best.expect("at least one rate"))
}

pub fn sweep_csv(rows: &[SweepRow], comment: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(c) = comment {
        for line in c.lines() {
            let _ = writeln!(out, "# {line}");
        }
    }
    out.push_str("variant,n,seed,lr,epoch_best,train_loss,val_loss,test_loss\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.variant, r.n, r.seed, r.lr, r.epoch_best, r.train_loss, r.val_loss, r.test_loss
        );
    }
    out
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median best-epoch test loss for every (variant, n) present in `rows`,
/// in first-appearance order.
pub fn median_test_loss(rows: &[SweepRow]) -> Vec<(String, usize, f64)> {
    let mut keys: Vec<(String, usize)> = Vec::new();
    for r in rows {
        let k = (r.variant.clone(), r.n);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(v, n)| {
            let xs: Vec<f64> = rows.iter().filter(|r| r.variant == v && r.n == n).map(|r| r.test_loss).collect();
            let m = median(&xs);
            (v, n, m)
        })
        .collect()
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx * vy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::templates::{builtin, Builtin};

    fn tiny() -> (TemplateTask, Vec<Variant>, SweepConfig) {
        let task = builtin(&Builtin::AbaVsAbb).unwrap();
        let base = ModelConfig::regression(3, 1, 8, 4, 2, 8);
        let variants = vec![
            Variant { name: "vanilla".into(), model: base.clone() },
            Variant { name: "attn_identity".into(), model: ModelConfig { attn_identity: true, ..base } },
        ];
        let cfg = SweepConfig {
            n_grid: vec![16, 32],
            seeds: vec![0, 1],
            lrs: vec![1e-3],
            n_eval: 10,
            eval_alphabet: 10,
            train: TrainConfig { epochs: 2, batch_size: 8, ..TrainConfig::default() },
            jobs: 3,
        };
        (task, variants, cfg)
    }

    #[test]
    fn grid_order_independent_of_jobs() {
        let (task, variants, cfg) = tiny();
        let a = data_efficiency_sweep(&task, &variants, &cfg).unwrap();
        let b = data_efficiency_sweep(&task, &variants, &SweepConfig { jobs: 1, ..cfg }).unwrap();
        assert_eq!(a.rows.len(), 8);
        assert_eq!(a, b);
        let csv = sweep_csv(&a.rows, Some("hash"));
        assert!(csv.lines().nth(1).unwrap().starts_with("variant,n,seed,lr"));
    }

    #[test]
    fn small_n_is_a_cell_failure() {
        let (task, variants, mut cfg) = tiny();
        cfg.n_grid = vec![1, 16];
        let out = data_efficiency_sweep(&task, &variants, &cfg).unwrap();
        assert_eq!(out.failures.len(), 4);
        assert!(out.failures.iter().all(|f| f.n == 1 && f.error.contains("alphabet")));
    }

    #[test]
    fn descending_grid_rejected() {
        let (task, variants, mut cfg) = tiny();
        cfg.n_grid = vec![32, 16];
        assert!(data_efficiency_sweep(&task, &variants, &cfg).is_err());
    }

    #[test]
    fn rank_statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[9.0, 7.0, 3.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 1.0, 2.0]) - 0.8660254037844387).abs() < 1e-12);
    }
}
