use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use polyp_core::gradcheck::{run_gradcheck, GradCheckConfig, GradTarget};
use polyp_core::AblationVariant;
use polyp_data::{synth_dataset, SynthConfig};
use polyp_harness::{
    ablate, format_ablation, load_checkpoint, plot_froc, plot_loss_curves, train, write_report, EvalOptions, ExperimentConfig,
    RunRecord,
};
use polyp_metrics::{read_froc_csv, write_json};

#[derive(Parser)]
#[command(name = "polyp", version, about = "Polyp segmentation: train, evaluate, ablate, check gradients, plot")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on one or more datasets.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Root directory holding `<dataset>/{images,masks}`.
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated dataset names; defaults to the checkpoint config's test sets.
        #[arg(long, value_delimiter = ',')]
        datasets: Vec<String>,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
        /// Score each ground truth against itself (pipeline sanity check).
        #[arg(long)]
        gt_bypass: bool,
    },
    /// Score with every test image rotated, next to the unrotated baseline.
    RotateEval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 15.0)]
        degrees: f64,
        #[arg(long, value_delimiter = ',')]
        datasets: Vec<String>,
        #[arg(long, default_value = "rotate-eval")]
        out: PathBuf,
    },
    /// Train and evaluate decoder variants with a shared seed.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated variants (full, no_cfm, no_cim, no_sam, sam_nogcn, sam_conv).
        #[arg(long, value_delimiter = ',', default_values_t = AblationVariant::ALL.map(|v| v.tag().to_string()))]
        variants: Vec<String>,
    },
    /// Finite-difference gradient checks in double precision.
    Gradcheck {
        /// backbone, cfm, cim, sam, loss or all.
        #[arg(long, value_parser = parse_modules)]
        module: GradModules,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        samples: usize,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
    /// Loss curves from run records and FROC curves from CSVs.
    Plot {
        /// `run.json` files or run directories.
        #[arg(long, num_args = 1..)]
        runs: Vec<PathBuf>,
        /// `froc_<dataset>.csv` files.
        #[arg(long, num_args = 1..)]
        froc: Vec<PathBuf>,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
    /// Write a synthetic dataset.
    Synth {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value = "synthetic")]
        name: String,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Print a preset config (`desk` or `paper`) as TOML.
    Config {
        #[arg(default_value = "desk")]
        preset: String,
        /// Data root written into the config.
        #[arg(long, default_value = "data")]
        data: PathBuf,
    },
}

#[derive(Clone)]
struct GradModules(Vec<GradTarget>);

fn parse_modules(s: &str) -> Result<GradModules, String> {
    if s == "all" {
        return Ok(GradModules(GradTarget::ALL.to_vec()));
    }
    s.parse::<GradTarget>().map(|t| GradModules(vec![t])).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

fn datasets_or_default(given: Vec<String>, cfg: &ExperimentConfig) -> Vec<String> {
    if given.is_empty() {
        cfg.data.test.clone()
    } else {
        given
    }
}

fn run(cmd: Command) -> AnyResult<ExitCode> {
    match cmd {
        Command::Train { config, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let record = train(&cfg)?;
            println!(
                "{}: {} iterations, final loss {:.4}, best val mDic {}, {:.1}s -> {}",
                cfg.name,
                record.iterations.len(),
                record.final_loss().unwrap_or(f64::NAN),
                record.best_val_mdic.map_or("-".into(), |v| format!("{v:.4}")),
                record.wall_clock_secs,
                cfg.output_dir.join("run.json").display()
            );
        }
        Command::Eval { ckpt, data, datasets, out, gt_bypass } => {
            let (model, cfg) = load_checkpoint(&ckpt)?;
            let names = datasets_or_default(datasets, &cfg);
            let opts = EvalOptions { gt_bypass, ..EvalOptions::default() };
            let scores = polyp_harness::evaluate_datasets(&model, &data, &names, &cfg.sample_config(), &opts)?;
            print!("{}", write_report(&out, &scores)?);
        }
        Command::RotateEval { ckpt, data, degrees, datasets, out } => {
            let (model, cfg) = load_checkpoint(&ckpt)?;
            let names = datasets_or_default(datasets, &cfg);
            let sc = cfg.sample_config();
            let base = polyp_harness::evaluate_datasets(&model, &data, &names, &sc, &EvalOptions::default())?;
            let rotated = polyp_harness::evaluate_datasets(
                &model,
                &data,
                &names,
                &sc,
                &EvalOptions { rotate_degrees: degrees, ..EvalOptions::default() },
            )?;
            println!("unrotated:");
            print!("{}", write_report(&out.join("0deg"), &base)?);
            println!("rotated {degrees} deg:");
            print!("{}", write_report(&out.join(format!("{degrees}deg")), &rotated)?);
            for (b, r) in base.iter().zip(&rotated) {
                println!("{:<16} delta mDic {:+.4}", b.dataset, r.mean.mDic - b.mean.mDic);
            }
        }
        Command::Ablate { config, variants } => {
            let cfg = ExperimentConfig::load(&config)?;
            let variants = variants.iter().map(|v| v.parse::<AblationVariant>()).collect::<Result<Vec<_>, _>>()?;
            let report = ablate(&cfg, &variants)?;
            let table = format_ablation(&report);
            std::fs::create_dir_all(&cfg.output_dir)?;
            write_json(&cfg.output_dir.join("ablation.json"), &report)?;
            std::fs::write(cfg.output_dir.join("ablation.txt"), &table)?;
            print!("{table}");
        }
        Command::Gradcheck { module, seed, samples, tolerance } => {
            let cfg = GradCheckConfig { samples, tolerance, seed, ..GradCheckConfig::default() };
            let mut ok = true;
            for target in module.0 {
                let report = run_gradcheck(target, &cfg)?;
                print!("{report}");
                ok &= report.passed;
            }
            return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
        Command::Plot { runs, froc, out } => {
            if runs.is_empty() && froc.is_empty() {
                return Err("nothing to plot: pass --runs and/or --froc".into());
            }
            if !runs.is_empty() {
                let records = runs
                    .iter()
                    .map(|p| RunRecord::load(&if p.is_dir() { p.join("run.json") } else { p.clone() }))
                    .collect::<Result<Vec<_>, _>>()?;
                for f in plot_loss_curves(&records, &out)? {
                    println!("{}", f.display());
                }
            }
            if !froc.is_empty() {
                let curves = froc
                    .iter()
                    .map(|p| Ok((froc_label(p), read_froc_csv(p)?)))
                    .collect::<AnyResult<Vec<_>>>()?;
                std::fs::create_dir_all(&out)?;
                println!("{}", plot_froc(&curves, &out.join("froc.svg"))?.display());
            }
        }
        Command::Synth { root, name, n, seed, size } => {
            let m = synth_dataset(&root, &name, n, seed, &SynthConfig { size, ..SynthConfig::default() })?;
            println!("wrote {} pairs to {}", m.len(), root.join(&name).display());
        }
        Command::Config { preset, data } => {
            let cfg = match preset.as_str() {
                "desk" => ExperimentConfig::desk(data),
                "paper" => ExperimentConfig { data: polyp_harness::DataConfig { root: data, ..Default::default() }, ..Default::default() },
                other => return Err(format!("unknown preset '{other}' (desk or paper)").into()),
            };
            print!("{}", cfg.to_toml_string()?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn froc_label(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("froc");
    stem.strip_prefix("froc_").unwrap_or(stem).to_string()
}
