//! Experiment command line: synthetic data, toy training, evaluation,
//! gradient checks, attention benchmarks, spectral sweeps, and the MSCE
//! ablation. Option precedence is CLI flags, then --config JSON, then
//! built-in defaults; the effective configuration is echoed into the output
//! directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use fetseg::analysis::{battery, fet_wins_at_depth, spectral_sweep, standard_monotone, sweep_csv, SpectrumReport, SweepConfig};
use fetseg::attention::{complexity_probe, fit_loglog_slope, probe_csv, ProbeImpl, ProbeRow};
use fetseg::ckpt::{load_checkpoint, save_checkpoint, TrainerState};
use fetseg::error::{Error, Result};
use fetseg::model::{AttentionKind, Model, ModelConfig};
use fetseg::optim::Sgd;
use fetseg::params::ParamStore;
use fetseg::real::{Precision, Real};
use fetseg::rng::Prng;
use fetseg::synth::{generate, read_dataset, write_dataset, Dataset, SynthConfig};
use fetseg::train::{evaluate, train_loop, EpochRecord, TrainConfig};

#[derive(Parser)]
#[command(name = "fetseg", version, about = "Frequency-enhancement transformer experiments")]
struct Cli {
    /// Master seed for anything random.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// JSON config file; explicit flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic segmentation dataset.
    GenSynth {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Train a model on a generated dataset.
    Train {
        /// Dataset directory (from gen-synth).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        momentum: Option<f64>,
        #[arg(long)]
        weight_decay: Option<f64>,
        #[arg(long)]
        precision: Option<Precision>,
        #[arg(long, value_parser = parse_attention)]
        attention: Option<AttentionKind>,
        #[arg(long)]
        no_msce: bool,
        #[arg(long)]
        checkpoint_every: Option<usize>,
        /// Resume from a checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        precision: Option<Precision>,
    },
    /// Finite-difference verification of every operation and block.
    Gradcheck {
        #[arg(long)]
        instances: Option<usize>,
    },
    /// Wall-time scaling of standard vs efficient attention.
    BenchAttn {
        #[arg(long, value_delimiter = ',')]
        n_list: Option<Vec<usize>>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// High-frequency energy ratios of stacked layers over the battery.
    Spectral {
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        battery_id: Option<u64>,
    },
    /// Train matched models with and without the MSCE bridge.
    AblateMsce {
        /// Dataset directory; generated on the fly when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
}

fn parse_attention(s: &str) -> std::result::Result<AttentionKind, String> {
    match s {
        "fet" => Ok(AttentionKind::Fet),
        "standard" => Ok(AttentionKind::Standard),
        other => Err(format!("unknown attention kind {other:?} (fet|standard)")),
    }
}

/// Optional values a --config file may carry; flags win over these.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    seed: Option<u64>,
    // gen-synth
    n: Option<usize>,
    size: Option<usize>,
    classes: Option<usize>,
    // model
    stage_depths: Option<[usize; 4]>,
    stage_dims: Option<[usize; 4]>,
    pyramid_levels: Option<usize>,
    gauss_sigma: Option<f64>,
    se_ratio: Option<usize>,
    mhsa_heads: Option<usize>,
    attention: Option<AttentionKind>,
    use_msce: Option<bool>,
    // training
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    momentum: Option<f64>,
    weight_decay: Option<f64>,
    precision: Option<Precision>,
    checkpoint_every: Option<usize>,
    // probes
    n_list: Option<Vec<usize>>,
    dim: Option<usize>,
    trials: Option<usize>,
    depth: Option<usize>,
    seeds: Option<usize>,
    battery_id: Option<u64>,
}

fn load_file_config(path: &Option<PathBuf>) -> Result<FileConfig> {
    match path {
        Some(p) => Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        None => Ok(FileConfig::default()),
    }
}

fn echo_config<T: Serialize>(out: &Path, value: &T) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(
        out.join("effective_config.json"),
        serde_json::to_string_pretty(value)?,
    )?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = load_file_config(&cli.config)?;
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let out = cli.out.clone();
    std::fs::create_dir_all(&out)?;
    match cli.cmd {
        Cmd::GenSynth { n, size, classes } => {
            let cfg = SynthConfig {
                n: n.or(file.n).unwrap_or(200),
                size: size.or(file.size).unwrap_or(64),
                classes: classes.or(file.classes).unwrap_or(4),
                seed,
            };
            echo_config(&out, &cfg)?;
            let ds = generate(&cfg)?;
            write_dataset(&ds, &out)?;
            println!(
                "wrote {} samples of {}x{} with {} classes to {}",
                cfg.n,
                cfg.size,
                cfg.size,
                cfg.classes,
                out.display()
            );
            Ok(())
        }
        Cmd::Train {
            data,
            epochs,
            batch_size,
            lr,
            momentum,
            weight_decay,
            precision,
            attention,
            no_msce,
            checkpoint_every,
            resume,
        } => {
            let ds = read_dataset(&data)?;
            let defaults = TrainConfig::default();
            let tc = TrainConfig {
                epochs: epochs.or(file.epochs).unwrap_or(defaults.epochs),
                batch_size: batch_size.or(file.batch_size).unwrap_or(defaults.batch_size),
                lr: lr.or(file.lr).unwrap_or(defaults.lr),
                momentum: momentum.or(file.momentum).unwrap_or(defaults.momentum),
                weight_decay: weight_decay
                    .or(file.weight_decay)
                    .unwrap_or(defaults.weight_decay),
                seed,
                val_fraction: defaults.val_fraction,
                checkpoint_every: checkpoint_every
                    .or(file.checkpoint_every)
                    .unwrap_or(defaults.checkpoint_every),
            };
            let precision = precision.or(file.precision).unwrap_or(Precision::F32);
            let mcfg = model_config_from(&file, &ds, attention, no_msce)?;
            match precision {
                Precision::F32 => train_cmd::<f32>(&out, mcfg, &ds, &tc, precision, resume),
                Precision::F64 => train_cmd::<f64>(&out, mcfg, &ds, &tc, precision, resume),
            }
        }
        Cmd::Eval {
            checkpoint,
            data,
            precision,
        } => {
            let precision = precision.or(file.precision).unwrap_or(Precision::F32);
            match precision {
                Precision::F32 => eval_cmd::<f32>(&out, &checkpoint, &data),
                Precision::F64 => eval_cmd::<f64>(&out, &checkpoint, &data),
            }
        }
        Cmd::Gradcheck { instances } => {
            let instances = instances.or(file.trials).unwrap_or(3);
            gradcheck_cmd(&out, seed, instances)
        }
        Cmd::BenchAttn { n_list, dim, trials } => {
            let n_list = n_list
                .or(file.n_list)
                .unwrap_or_else(|| vec![64, 256, 1024, 4096]);
            let dim = dim.or(file.dim).unwrap_or(64);
            let trials = trials.or(file.trials).unwrap_or(5);
            bench_cmd(&out, &n_list, dim, trials, seed)
        }
        Cmd::Spectral {
            depth,
            seeds,
            battery_id,
        } => {
            let depth = depth.or(file.depth).unwrap_or(4);
            let seeds = seeds.or(file.seeds).unwrap_or(20);
            let battery_id = battery_id.or(file.battery_id).unwrap_or(0);
            spectral_cmd(&out, depth, seeds, battery_id)
        }
        Cmd::AblateMsce { data, seeds, epochs } => {
            let seeds = seeds.or(file.seeds).unwrap_or(5);
            let epochs = epochs.or(file.epochs).unwrap_or(30);
            ablate_cmd(&out, data, seeds, epochs, seed, &file)
        }
    }
}

fn model_config_from(
    file: &FileConfig,
    ds: &Dataset,
    attention: Option<AttentionKind>,
    no_msce: bool,
) -> Result<ModelConfig> {
    let toy = ModelConfig::toy();
    let mut cfg = ModelConfig {
        input_h: ds.size,
        input_w: ds.size,
        input_channels: 1,
        num_classes: ds.classes,
        stage_depths: file.stage_depths.unwrap_or(toy.stage_depths),
        stage_dims: file.stage_dims.unwrap_or(toy.stage_dims),
        pyramid_levels: file.pyramid_levels.unwrap_or(toy.pyramid_levels),
        gauss_sigma: file.gauss_sigma.unwrap_or(toy.gauss_sigma),
        se_ratio: file.se_ratio.unwrap_or(toy.se_ratio),
        mhsa_heads: file.mhsa_heads.unwrap_or(toy.mhsa_heads),
        attention: attention.or(file.attention).unwrap_or(AttentionKind::Fet),
        use_msce: if no_msce { false } else { file.use_msce.unwrap_or(true) },
        w_dice: toy.w_dice,
        w_ce: toy.w_ce,
    };
    // Standard-attention models do not carry a wavelet bridge.
    if cfg.attention == AttentionKind::Standard {
        cfg.use_msce = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct TrainEcho<'a> {
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    precision: Precision,
}

fn train_cmd<T: Real>(
    out: &Path,
    mcfg: ModelConfig,
    ds: &Dataset,
    tc: &TrainConfig,
    precision: Precision,
    resume: Option<PathBuf>,
) -> Result<()> {
    let (model, mut store, mut opt, start_epoch) = match &resume {
        Some(dir) => {
            let loaded = load_checkpoint::<T>(dir)?;
            if loaded.state.completed_epochs >= tc.epochs {
                return Err(Error::config(format!(
                    "checkpoint already has {} epochs, target is {}",
                    loaded.state.completed_epochs, tc.epochs
                )));
            }
            println!(
                "resuming from {} at epoch {}",
                dir.display(),
                loaded.state.completed_epochs
            );
            (
                loaded.model,
                loaded.store,
                loaded.opt,
                loaded.state.completed_epochs,
            )
        }
        None => {
            let (model, store) = Model::build::<T>(mcfg.clone(), tc.seed)?;
            let opt = Sgd::new(&store, tc.lr, tc.momentum, tc.weight_decay);
            (model, store, opt, 0)
        }
    };
    echo_config(
        out,
        &TrainEcho {
            model: &model.cfg,
            train: tc,
            precision,
        },
    )?;
    let metrics_path = out.join("metrics.jsonl");
    if resume.is_none() {
        // Fresh run, fresh log.
        let _ = std::fs::remove_file(&metrics_path);
    }
    let cfg_for_ckpt = model.cfg.clone();
    let tc_cloned = tc.clone();
    let out_dir = out.to_path_buf();
    let result = train_loop(
        &model,
        &mut store,
        &mut opt,
        ds,
        tc,
        start_epoch,
        |rec: &EpochRecord, store, opt| {
            append_jsonl(&metrics_path, rec)?;
            println!(
                "epoch {:3}  loss {:.4}  dice {:.4}  ce {:.4}  val_dsc {:.4}",
                rec.epoch, rec.loss, rec.dice, rec.ce, rec.val_dsc
            );
            let cadence = tc_cloned.checkpoint_every;
            if cadence > 0 && (rec.epoch + 1) % cadence == 0 && rec.epoch + 1 < tc_cloned.epochs {
                let dir = out_dir.join(format!("ckpt_{:04}", rec.epoch + 1));
                save_checkpoint(
                    &dir,
                    &cfg_for_ckpt,
                    store,
                    opt,
                    &trainer_state(rec.epoch + 1, &tc_cloned, precision),
                )?;
            }
            Ok(())
        },
    )?;
    let final_dir = out.join("checkpoint");
    save_checkpoint(
        &final_dir,
        &model.cfg,
        &store,
        &opt,
        &trainer_state(tc.epochs, tc, precision),
    )?;
    println!(
        "done: best val_dsc {:.4}; final per-class {:?}; checkpoint at {}",
        result.best_val_dsc,
        result
            .final_per_class_dsc
            .iter()
            .map(|v| (v * 1e4).round() / 1e4)
            .collect::<Vec<_>>(),
        final_dir.display()
    );
    Ok(())
}

fn trainer_state(completed: usize, tc: &TrainConfig, precision: Precision) -> TrainerState {
    TrainerState {
        completed_epochs: completed,
        seed: tc.seed,
        precision,
        lr: tc.lr,
        momentum: tc.momentum,
        weight_decay: tc.weight_decay,
        batch_size: tc.batch_size,
    }
}

fn append_jsonl<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(value)?)?;
    Ok(())
}

fn eval_cmd<T: Real>(out: &Path, checkpoint: &Path, data: &Path) -> Result<()> {
    let ds = read_dataset(data)?;
    let loaded = load_checkpoint::<T>(checkpoint)?;
    if loaded.cfg.input_h != ds.size || loaded.cfg.num_classes != ds.classes {
        return Err(Error::config(format!(
            "checkpoint geometry {}x{} / {} classes does not match dataset {}x{} / {}",
            loaded.cfg.input_h,
            loaded.cfg.input_w,
            loaded.cfg.num_classes,
            ds.size,
            ds.size,
            ds.classes
        )));
    }
    let report = evaluate(&loaded.model, &loaded.store, &ds, None)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("eval.json"), serde_json::to_string_pretty(&report)?)?;
    println!(
        "eval over {} images: mean DSC {:.4}, mean HD {:.3}, per-class {:?}",
        report.n_images,
        report.mean_dsc,
        report.mean_hd,
        report
            .per_class_dsc
            .iter()
            .map(|v| (v * 1e4).round() / 1e4)
            .collect::<Vec<_>>()
    );
    Ok(())
}

#[derive(Serialize)]
struct GradcheckReportFile {
    ops: Vec<GradcheckRow>,
    fet_block_rel_err: f64,
    msce_bridge_rel_err: f64,
    passed: bool,
}

#[derive(Serialize)]
struct GradcheckRow {
    name: String,
    max_rel_err: f64,
    kinks_skipped: usize,
}

fn gradcheck_cmd(out: &Path, seed: u64, instances: usize) -> Result<()> {
    use fetseg::fet::{fet_block, FetBlockParams, InitScheme};
    use fetseg::gradcheck::{grad_check, op_battery};
    use fetseg::msce::{msce_bridge, MsceParams, StagePyramid};
    use fetseg::tensor::Tensor;

    let checks = op_battery(seed, instances)?;
    let mut passed = true;
    let mut rows = Vec::new();
    for c in &checks {
        let ok = c.max_rel_err <= 1e-5;
        passed &= ok;
        println!(
            "{:26} rel err {:9.3e}  kinks {}  {}",
            c.name,
            c.max_rel_err,
            c.kinks_skipped,
            if ok { "ok" } else { "FAIL" }
        );
        rows.push(GradcheckRow {
            name: c.name.to_string(),
            max_rel_err: c.max_rel_err,
            kinks_skipped: c.kinks_skipped,
        });
    }

    // Full FET block on an 8x8x8 input.
    let mut rng = Prng::derive(seed, &[0xfe7b10c]);
    let mut store: ParamStore<f64> = ParamStore::new();
    let p = FetBlockParams::register(&mut store, "blk", 8, 2, 1.0, InitScheme::Spectral, &mut rng)?;
    let x = Tensor::<f64>::from_fn(&[8, 8, 8], |_| rng.normal());
    let ids = p.param_ids();
    let rep = grad_check(
        &|tape, store| {
            let xv = tape.input(&x);
            let out = fet_block(tape, store, xv, &p)?;
            let sq = tape.mul(out, out)?;
            Ok(tape.sum_all(sq))
        },
        &mut store,
        &ids,
        1e-5,
        None,
    )?;
    let fet_ok = rep.max_rel_err <= 1e-4;
    passed &= fet_ok;
    println!(
        "fet_block(8x8x8)           rel err {:9.3e}  kinks {}  {}",
        rep.max_rel_err,
        rep.kinks_skipped,
        if fet_ok { "ok" } else { "FAIL" }
    );
    let fet_err = rep.max_rel_err;

    // MSCE bridge on the tiny 8/4/2/1 pyramid.
    let mut rng = Prng::derive(seed, &[0x9ace]);
    let mut store: ParamStore<f64> = ParamStore::new();
    let mp = MsceParams::register(
        &mut store,
        "msce",
        &[4, 8, 12, 16],
        1,
        1.0,
        4,
        InitScheme::Spectral,
        &mut rng,
    )?;
    let spatial = [8usize, 4, 2, 1];
    let dims = [4usize, 8, 12, 16];
    let stages: Vec<Tensor<f64>> = (0..4)
        .map(|i| Tensor::from_fn(&[spatial[i], spatial[i], dims[i]], |_| 0.5 * rng.normal()))
        .collect();
    let ids: Vec<_> = store.ids().collect();
    let rep = grad_check(
        &|tape, store| {
            let vars = stages.iter().map(|t| tape.input(t)).collect();
            let pyr = StagePyramid::new(tape, vars)?;
            let outp = msce_bridge(tape, store, &pyr, &mp)?;
            let mut total = None;
            for &s in &outp.stages {
                let sq = tape.mul(s, s)?;
                let sm = tape.sum_all(sq);
                total = Some(match total {
                    Some(t) => tape.add(t, sm)?,
                    None => sm,
                });
            }
            Ok(total.unwrap())
        },
        &mut store,
        &ids,
        1e-5,
        Some(4),
    )?;
    let msce_ok = rep.max_rel_err <= 1e-4;
    passed &= msce_ok;
    println!(
        "msce_bridge(8/4/2/1)       rel err {:9.3e}  kinks {}  {}",
        rep.max_rel_err,
        rep.kinks_skipped,
        if msce_ok { "ok" } else { "FAIL" }
    );

    std::fs::create_dir_all(out)?;
    std::fs::write(
        out.join("gradcheck.json"),
        serde_json::to_string_pretty(&GradcheckReportFile {
            ops: rows,
            fet_block_rel_err: fet_err,
            msce_bridge_rel_err: rep.max_rel_err,
            passed,
        })?,
    )?;
    if !passed {
        return Err(Error::contract("gradient check failed".to_string()));
    }
    Ok(())
}

fn bench_cmd(out: &Path, n_list: &[usize], dim: usize, trials: usize, seed: u64) -> Result<()> {
    let mut all: Vec<ProbeRow> = Vec::new();
    let mut slopes = Vec::new();
    for which in [ProbeImpl::Standard, ProbeImpl::Efficient] {
        let rows = complexity_probe(which, n_list, dim, trials, seed)?;
        let slope = fit_loglog_slope(&rows);
        println!("{:9} fitted log-log slope {:.3}", which.name(), slope);
        for r in &rows {
            println!("  n {:5}  median {:.6}s", r.n, r.median_seconds);
        }
        slopes.push((which.name(), slope));
        all.extend(rows);
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("bench_attn.csv"), probe_csv(&all))?;
    let slopes_json: Vec<_> = slopes
        .iter()
        .map(|(name, s)| serde_json::json!({"impl": name, "slope": s}))
        .collect();
    std::fs::write(
        out.join("bench_attn_slopes.json"),
        serde_json::to_string_pretty(&slopes_json)?,
    )?;
    Ok(())
}

fn spectral_cmd(out: &Path, depth: usize, seeds: usize, battery_id: u64) -> Result<()> {
    let bat = battery(battery_id);
    let cfg = SweepConfig::default();
    let mut reports: Vec<SpectrumReport> = Vec::new();
    for seed in 0..seeds as u64 {
        for kind in [AttentionKind::Standard, AttentionKind::Fet] {
            reports.push(spectral_sweep(kind, depth, &bat, battery_id, seed, &cfg)?);
        }
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("spectral.csv"), sweep_csv(&reports))?;

    // Representative spectra (first seed) as FTEN planes for plotting.
    let spectra_dir = out.join("spectra");
    std::fs::create_dir_all(&spectra_dir)?;
    for rep in reports.iter().take(2) {
        let kind = match rep.kind {
            AttentionKind::Standard => "standard",
            AttentionKind::Fet => "fet",
        };
        for row in &rep.rows {
            if row.depth == depth {
                let profile = fetseg::tensor::Tensor::<f64>::new(
                    vec![row.profile.len()],
                    row.profile.clone(),
                )?;
                profile.write_ften(
                    &spectra_dir.join(format!("{kind}_d{depth}_i{:02}.ften", row.input_id)),
                )?;
            }
        }
    }

    // Headline numbers.
    let (wins, total) = fet_wins_at_depth(&reports, depth);
    let (mono, mono_total) = standard_monotone(&reports);
    println!(
        "fet hf_ratio >= standard at depth {depth}: {wins}/{total} pairs ({:.1}%)",
        100.0 * wins as f64 / total.max(1) as f64
    );
    println!(
        "standard stack non-increasing over depths 1..{depth}: {mono}/{mono_total} pairs ({:.1}%)",
        100.0 * mono as f64 / mono_total.max(1) as f64
    );
    Ok(())
}

#[derive(Serialize)]
struct AblationRow {
    variant: String,
    seed: u64,
    best_val_dsc: f64,
    final_val_dsc: f64,
}

fn ablate_cmd(
    out: &Path,
    data: Option<PathBuf>,
    seeds: usize,
    epochs: usize,
    seed: u64,
    file: &FileConfig,
) -> Result<()> {
    let ds = match data {
        Some(dir) => read_dataset(&dir)?,
        None => generate(&SynthConfig {
            n: file.n.unwrap_or(200),
            size: file.size.unwrap_or(64),
            classes: file.classes.unwrap_or(4),
            seed,
        })?,
    };
    let mut rows = Vec::new();
    for variant_msce in [true, false] {
        for run_seed in 0..seeds as u64 {
            let mcfg = ModelConfig {
                input_h: ds.size,
                input_w: ds.size,
                num_classes: ds.classes,
                use_msce: variant_msce,
                stage_dims: file.stage_dims.unwrap_or(ModelConfig::toy().stage_dims),
                stage_depths: file.stage_depths.unwrap_or(ModelConfig::toy().stage_depths),
                ..ModelConfig::toy()
            };
            let tc = TrainConfig {
                epochs,
                seed: run_seed,
                ..TrainConfig::default()
            };
            let (model, mut store) = Model::build::<f32>(mcfg, run_seed)?;
            let mut opt = Sgd::new(&store, tc.lr, tc.momentum, tc.weight_decay);
            let res = train_loop(&model, &mut store, &mut opt, &ds, &tc, 0, |_, _, _| Ok(()))?;
            let variant = if variant_msce { "with-msce" } else { "without-msce" };
            let last = res.records.last().expect("at least one epoch");
            println!(
                "{variant} seed {run_seed}: best val_dsc {:.4}, final {:.4}",
                res.best_val_dsc, last.val_dsc
            );
            rows.push(AblationRow {
                variant: variant.to_string(),
                seed: run_seed,
                best_val_dsc: res.best_val_dsc,
                final_val_dsc: last.val_dsc,
            });
        }
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("ablation.json"), serde_json::to_string_pretty(&rows)?)?;
    let mut csv = String::from("variant,seed,best_val_dsc,final_val_dsc\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            r.variant, r.seed, r.best_val_dsc, r.final_val_dsc
        ));
    }
    std::fs::write(out.join("ablation.csv"), csv)?;
    let median = |variant: &str| {
        let mut v: Vec<f64> = rows
            .iter()
            .filter(|r| r.variant == variant)
            .map(|r| r.best_val_dsc)
            .collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    println!(
        "median best val_dsc: with-msce {:.4}, without-msce {:.4}",
        median("with-msce"),
        median("without-msce")
    );
    Ok(())
}
