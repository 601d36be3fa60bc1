use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter};

use serde::Serialize;

use super::config::*;
use super::manifest::Outputs;
use super::Status;
use crate::error::{Error, Result};
use crate::kernel::{
    block_structure_stats, build_n_matrix, gram, matrix_csv, median_error, unseen_symbol_eval, Kernel, MatrixReport,
    NMatrix, UnseenConfig,
};
use crate::model::{read_checkpoint, write_checkpoint, InitScheme, Mlp, ModelConfig, Output, ParamGroup, Transformer};
use crate::templates::{dataset_to_csv, sample_dataset, Alphabet, Splits, TaskDoc, TemplateTask};
use crate::tensor::Rng;
use crate::train::{
    data_efficiency_sweep, loss_for, mean_se, median_test_loss, sweep_csv, sweep_vocab, train, CopyProbe, Loss,
    ProbeReport, SweepConfig, TrainConfig, TrainingLog, Variant,
};

pub fn cmd_gen(cfg: &GenConfig, out: &mut Outputs) -> Result<Status> {
    let task = cfg.task.resolve()?;
    let size = cfg.alphabet.unwrap_or(cfg.n);
    let free = task.free_tokens();
    require(size <= free.len(), "alphabet larger than the free vocabulary")?;
    let ds = sample_dataset(&task, cfg.n, &Alphabet::new(free[..size].to_vec()), cfg.seed)?;
    out.write("dataset.csv", &dataset_to_csv(&ds, Some(&out.comment())))?;
    out.write("task.json", &(TaskDoc::from(&task).to_json()? + "\n"))?;
    eprintln!("gen: {} samples of {} written to {}", ds.len(), task.name, out.dir().display());
    Ok(Status::Ok)
}

fn log_csv(log: &TrainingLog, comment: &str) -> String {
    let mut s = format!("# {comment}\nepoch,train_loss,val_loss,test_loss\n");
    for r in &log.records {
        let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.test_loss);
    }
    s
}

#[derive(Serialize)]
struct TrainSummary {
    task: String,
    n: usize,
    best_epoch: usize,
    train_loss: f64,
    val_loss: f64,
    test_loss: f64,
    final_train_loss: f64,
    wall_clock_secs: f64,
}

pub fn cmd_train(cfg: &TrainCmdConfig, out: &mut Outputs) -> Result<Status> {
    let base = cfg.task.resolve()?;
    let task = base.clone().with_vocab_size(sweep_vocab(&base, cfg.n, cfg.eval_alphabet))?;
    let root = Rng::new(cfg.seed);
    let splits = Splits::generate(&task, cfg.n, cfg.n_eval, cfg.eval_alphabet, root.child("data").seed())?;
    let mut tc = TrainConfig {
        seed: root.child("order").seed(),
        ..cfg.train.clone()
    };
    let log = match &cfg.arch {
        Arch::Transformer { model } => {
            let mut mc: ModelConfig = model.clone();
            mc.k = task.k();
            mc.vocab = task.vocab_size;
            let mut m = match &cfg.resume {
                Some(p) => {
                    let m = read_checkpoint(BufReader::new(File::open(p)?))?;
                    if m.config.k != mc.k || m.config.vocab != mc.vocab {
                        return Err(Error::Config("checkpoint does not fit the task's k and vocabulary".into()));
                    }
                    m
                }
                None => Transformer::init(mc, root.child("init").seed(), InitScheme::Standard)?,
            };
            tc.loss = loss_for(&m);
            if task.is_symbolic() != (m.config.output == Output::VocabLogits) {
                return Err(Error::Config("symbolic tasks need vocabulary logits, real labels a scalar output".into()));
            }
            let log = train(&mut m, &splits, &tc)?;
            if cfg.save_checkpoint {
                write_checkpoint(&m, BufWriter::new(File::create(out.path("model.ckpt"))?))?;
            }
            log
        }
        Arch::Mlp { .. } => {
            require(!task.is_symbolic(), "the MLP baseline needs real labels")?;
            let mlp_cfg = cfg.arch.mlp_config(task.k(), task.vocab_size).expect("mlp arch");
            let mut m = Mlp::init(mlp_cfg, root.child("init").seed())?;
            tc.loss = Loss::Mse;
            train(&mut m, &splits, &tc)?
        }
    };
    out.write("log.csv", &log_csv(&log, &out.comment()))?;
    let b = log.best();
    out.write_json(
        "summary.json",
        &TrainSummary {
            task: task.name.clone(),
            n: cfg.n,
            best_epoch: b.epoch,
            train_loss: b.train_loss,
            val_loss: b.val_loss,
            test_loss: b.test_loss,
            final_train_loss: log.last().train_loss,
            wall_clock_secs: log.wall_clock_secs,
        },
    )?;
    eprintln!("train: best epoch {} test loss {:.4}", b.epoch, b.test_loss);
    Ok(Status::Ok)
}

/// Task for kernel studies: vocabulary large enough for the largest grid
/// point, then the classification token if requested.
fn kernel_task(src: &TaskSource, cls: bool, n_max: usize, n_test: usize) -> Result<TemplateTask> {
    let base = src.resolve()?;
    let reg_top = base.regulars().iter().max().map_or(0, |&r| r + 1);
    let need = reg_top + 4 * n_max + 2 * n_test + 16 * base.max_wildcards().max(1);
    let task = if base.vocab_size < need { base.with_vocab_size(need)? } else { base };
    Ok(if cls { task.with_cls() } else { task })
}

pub fn cmd_kernel(cfg: &KernelCmdConfig, out: &mut Outputs) -> Result<Status> {
    require(!cfg.n_grid.is_empty() && cfg.n_seeds > 0, "kernel needs a nonempty n grid and seeds")?;
    let n_max = *cfg.n_grid.iter().max().expect("nonempty");
    let task = kernel_task(&cfg.task, cfg.cls, n_max, cfg.n_test)?;
    let kernel = Kernel::new(cfg.kernel.clone())?;
    let nm = build_n_matrix(&task, &kernel, Rng::new(cfg.seed).child("witness").seed())?;
    out.write_json("n_matrix.json", &n_report(&nm))?;

    let seeds = seed_range(cfg.seed, cfg.n_seeds);
    let mut rows = format!("# {}\nn,seed,lambda,mean_abs_error,max_abs_error\n", out.comment());
    let mut summary = format!("# {}\nn,median_abs_error\n", out.comment());
    for &n in &cfg.n_grid {
        let uc = UnseenConfig {
            lambda: cfg.lambda,
            n_test: cfg.n_test,
            ..UnseenConfig::new(n, seeds.clone())
        };
        let res = unseen_symbol_eval(&task, &kernel, &uc)?;
        for r in &res {
            let _ = writeln!(rows, "{},{},{},{},{}", r.n, r.seed, r.lambda, r.mean_abs_error, r.max_abs_error);
        }
        let med = median_error(&res);
        let _ = writeln!(summary, "{n},{med}");
        eprintln!("kernel: n = {n} median |f̂ − f*| = {med:.4}");

        let ds = sample_dataset(&task, n, &Alphabet::new(task.free_tokens()[..4 * n].to_vec()), cfg.seed)?;
        let g = gram(&kernel, &ds.inputs(), Some(ds.partition(task.len())))?;
        out.write(&format!("gram_n{n}.csv"), &g.to_csv(Some(&out.comment())))?;
        out.write_json(&format!("gram_n{n}.json"), &MatrixReport::from_gram(&g, Some(&nm))?)?;
    }
    out.write("unseen.csv", &rows)?;
    out.write("unseen_summary.csv", &summary)?;
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct NReport<'a> {
    #[serde(flatten)]
    matrix: MatrixReport,
    determinant: f64,
    singular: bool,
    std_errors: Vec<Vec<f64>>,
    row_witnesses: &'a [crate::templates::Substitution],
    col_witnesses: &'a [crate::templates::Substitution],
}

fn n_report(nm: &NMatrix) -> NReport<'_> {
    let r = nm.r();
    NReport {
        matrix: MatrixReport::from_n(nm),
        determinant: nm.determinant,
        singular: is_singular(nm),
        std_errors: (0..r).map(|i| nm.std_errors.row(i).to_vec()).collect(),
        row_witnesses: &nm.row_witnesses,
        col_witnesses: &nm.col_witnesses,
    }
}

/// `|det N| < 1e-10` or numerically rank deficient.
pub fn is_singular(nm: &NMatrix) -> bool {
    nm.determinant.abs() < 1e-10 || nm.condition_number.is_infinite()
}

pub fn cmd_nmatrix(cfg: &NMatrixCmdConfig, out: &mut Outputs) -> Result<Status> {
    let task = kernel_task(&cfg.task, cfg.cls, 0, 0)?;
    let kernel = Kernel::new(cfg.kernel.clone())?;
    let nm = build_n_matrix(&task, &kernel, cfg.seed)?;
    out.write("n_matrix.csv", &matrix_csv(&nm.values, Some(&out.comment())))?;
    out.write_json("n_matrix.json", &n_report(&nm))?;
    eprintln!(
        "nmatrix: {} (det {:.3e}, condition number {:.3e})",
        if is_singular(&nm) { "singular" } else { "nonsingular" },
        nm.determinant,
        nm.condition_number
    );
    Ok(Status::Ok)
}

pub fn probe_table(cfg: &ProbeCmdConfig) -> Result<(Vec<(usize, u64, ProbeReport)>, String)> {
    require(!cfg.d_emb.is_empty() && cfg.n_seeds > 0, "probe needs widths and seeds")?;
    let mut reports = Vec::new();
    let groups: Vec<ParamGroup> = ParamGroup::ALL.to_vec();
    let mut csv = String::from("d_emb,seed,dl_train_dt,dl_test_dt");
    for g in &groups {
        let _ = write!(csv, ",test_{}", g.code());
    }
    csv.push('\n');
    for &d in &cfg.d_emb {
        let p = CopyProbe {
            heads: cfg.heads,
            vocab: cfg.vocab,
            n_train: cfg.n_train,
            ..CopyProbe::new(d, cfg.value_identity)
        };
        for seed in seed_range(cfg.seed, cfg.n_seeds) {
            let r = p.run(seed)?;
            let _ = write!(csv, "{d},{seed},{},{}", r.dl_train_dt, r.dl_test_dt);
            for g in &groups {
                let _ = write!(csv, ",{}", r.test_contributions.get(g).copied().unwrap_or(0.0));
            }
            csv.push('\n');
            reports.push((d, seed, r));
        }
    }
    Ok((reports, csv))
}

pub fn probe_summary(cfg: &ProbeCmdConfig, reports: &[(usize, u64, ProbeReport)]) -> String {
    let mut s = String::from("d_emb,mean_dl_train_dt,se_train,mean_dl_test_dt,se_test,b_only_limit\n");
    for &d in &cfg.d_emb {
        let tr: Vec<f64> = reports.iter().filter(|r| r.0 == d).map(|r| r.2.dl_train_dt).collect();
        let te: Vec<f64> = reports.iter().filter(|r| r.0 == d).map(|r| r.2.dl_test_dt).collect();
        let (mtr, str_) = mean_se(&tr);
        let (mte, ste) = mean_se(&te);
        let limit = CopyProbe {
            heads: cfg.heads,
            vocab: cfg.vocab,
            ..CopyProbe::new(d, true)
        }
        .b_only_limit();
        let _ = writeln!(s, "{d},{mtr},{str_},{mte},{ste},{limit}");
    }
    s
}

pub fn cmd_probe(cfg: &ProbeCmdConfig, out: &mut Outputs) -> Result<Status> {
    let (reports, csv) = probe_table(cfg)?;
    out.write("probe.csv", &format!("# {}\n{csv}", out.comment()))?;
    let summary = probe_summary(cfg, &reports);
    eprint!("{summary}");
    out.write("probe_summary.csv", &format!("# {}\n{summary}", out.comment()))?;
    Ok(Status::Ok)
}

fn summary_csv(rows: &[crate::train::SweepRow], comment: &str) -> String {
    let mut s = format!("# {comment}\nvariant,n,median_test_loss\n");
    for (v, n, m) in median_test_loss(rows) {
        let _ = writeln!(s, "{v},{n},{m}");
    }
    s
}

pub fn run_sweep(
    task: &TemplateTask,
    variants: &[Variant],
    sweep: &SweepConfig,
    name: &str,
    out: &mut Outputs,
) -> Result<Status> {
    let res = data_efficiency_sweep(task, variants, sweep)?;
    out.write(&format!("{name}.csv"), &sweep_csv(&res.rows, Some(&out.comment())))?;
    out.write(&format!("{name}_summary.csv"), &summary_csv(&res.rows, &out.comment()))?;
    if !res.failures.is_empty() {
        out.write_json(&format!("{name}_failures.json"), &res.failures)?;
        for f in &res.failures {
            eprintln!("{name}: cell {} n={} seed={} failed: {}", f.variant, f.n, f.seed, f.error);
        }
    }
    Ok(match (res.rows.is_empty(), res.failures.is_empty()) {
        (true, _) => return Err(Error::Validation(format!("{name}: every cell failed"))),
        (false, true) => Status::Ok,
        (false, false) => Status::Partial,
    })
}

pub fn cmd_sweep(cfg: &SweepCmdConfig, jobs: usize, out: &mut Outputs) -> Result<Status> {
    let task = cfg.task.resolve()?;
    let sweep = SweepConfig {
        n_grid: cfg.n_grid.clone(),
        seeds: seed_range(cfg.seed, cfg.n_seeds),
        lrs: cfg.lrs.clone(),
        n_eval: cfg.n_eval,
        eval_alphabet: cfg.eval_alphabet,
        train: cfg.train.clone(),
        jobs,
    };
    run_sweep(&task, &cfg.variants, &sweep, "sweep", out)
}

/// Scaled-down pipelines behind the data-efficiency, symbolic-label,
/// block-structure and copy-task figures.
pub fn cmd_figures(cfg: &FiguresConfig, jobs: usize, out: &mut Outputs) -> Result<Status> {
    let q = cfg.quick;
    let mut status = Status::Ok;
    let worst = |a: Status, b: Status| if a == Status::Ok { b } else { a };

    // data efficiency on a real-label task
    let reg = ModelConfig::regression(0, 0, if q { 16 } else { 64 }, if q { 8 } else { 32 }, 4, if q { 32 } else { 128 });
    let variants = vec![
        Variant { name: "vanilla".into(), model: reg.clone() },
        Variant { name: "attn_identity".into(), model: ModelConfig { attn_identity: true, ..reg } },
    ];
    let train_cfg = TrainConfig { lr: 1e-3, batch_size: 16, epochs: if q { 10 } else { 100 }, ..TrainConfig::default() };
    let sweep = SweepConfig {
        n_grid: if q { vec![64, 128] } else { vec![128, 256, 512, 1024] },
        seeds: seed_range(cfg.seed, if q { 1 } else { 3 }),
        lrs: vec![1e-3],
        n_eval: 100,
        eval_alphabet: 100,
        train: train_cfg.clone(),
        jobs,
    };
    let aba = crate::templates::builtin(&crate::templates::Builtin::AbaVsAbb)?;
    status = worst(status, run_sweep(&aba, &variants, &sweep, "fig1c", out)?);

    // symbolic labels: copy a variable's value
    let prog = crate::templates::builtin(&crate::templates::Builtin::StringAssignProgram)?;
    let sym = ModelConfig::symbolic(0, 0, if q { 16 } else { 64 }, if q { 8 } else { 32 }, 4);
    let variants = vec![
        Variant { name: "vanilla".into(), model: sym.clone() },
        Variant { name: "value_identity".into(), model: ModelConfig { value_identity: true, ..sym } },
    ];
    let sweep = SweepConfig {
        train: TrainConfig { loss: Loss::CrossEntropy, ..train_cfg },
        ..sweep
    };
    status = worst(status, run_sweep(&prog, &variants, &sweep, "fig2c", out)?);

    // block structure of the empirical Gram matrix
    let sd = TaskSource::Builtin("same_different".into());
    let grid: Vec<usize> = if q { vec![32, 64, 128] } else { vec![64, 128, 256] };
    let task = kernel_task(&sd, true, *grid.last().expect("grid"), 0)?;
    let kernel = Kernel::new(crate::kernel::KernelSpec::trans(0.5, 0.5, 1.0, 0.3, cfg.seed))?;
    let nm = build_n_matrix(&task, &kernel, cfg.seed)?;
    let mut csv = format!("# {}\nn,seed,alignment,within_3se\n", out.comment());
    for &n in &grid {
        for seed in seed_range(cfg.seed, if q { 2 } else { 5 }) {
            let ds = sample_dataset(&task, n, &Alphabet::new(task.free_tokens()[..n].to_vec()), seed)?;
            let g = gram(&kernel, &ds.inputs(), Some(ds.partition(task.len())))?;
            let b = block_structure_stats(&g, Some(&nm))?;
            let _ = writeln!(csv, "{n},{seed},{},{}", b.alignment, b.within_3se.unwrap_or(f64::NAN));
        }
    }
    out.write("fig4.csv", &csv)?;

    // copy task probes
    let widths = if q { vec![16, 32, 64, 128] } else { vec![64, 128, 256, 512, 1024] };
    for (name, vid) in [("fig5a", false), ("fig5b", true)] {
        let pc = ProbeCmdConfig {
            d_emb: widths.clone(),
            value_identity: vid,
            heads: 4,
            vocab: 64,
            n_train: 32,
            n_seeds: if q { 3 } else { 10 },
            seed: cfg.seed,
            out_dir: cfg.out_dir.clone(),
        };
        let (reports, _) = probe_table(&pc)?;
        out.write(&format!("{name}.csv"), &format!("# {}\n{}", out.comment(), probe_summary(&pc, &reports)))?;
    }
    eprintln!("figures: tables written to {}", out.dir().display());
    Ok(status)
}
