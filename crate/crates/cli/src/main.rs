use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand};

use gasleak::pipeline::{
    ablation_presets, evaluate_mask_dirs, report_csv, run_dataset_with, videos_csv, write_video_masks, Backends, DatasetRun,
};
use gasleak::sweep::{run_sweep, sweep_csv, SweepSpec};
use gasleak::synth::{standard_suite, write_suite};
use gasleak::dataset::{Manifest, DEFAULT_GT_THRESHOLD};
use gasleak::PipelineConfig;

/// Any config key may also be given as `--<key>=<value>` or `--<key> <value>`,
/// e.g. `--detect.tau_vlm 0.19`.
#[derive(Parser, Debug)]
#[command(name = "gasleak", version, about = "Zero-shot gas leak segmentation and benchmarking for infrared video")]
struct Cli {
    /// More log output (-v info, -vv debug)
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Key-value config file
    #[arg(short, long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct Outputs {
    /// Category report CSV (default: stdout)
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    /// Per-video CSV
    #[arg(long, value_name = "FILE")]
    videos: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one configuration over a dataset
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset manifest (overrides dataset.manifest)
        #[arg(short, long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        out: Outputs,
        /// Also write every evaluated frame's mask under DIR/<video>/
        #[arg(long, value_name = "DIR")]
        masks: Option<PathBuf>,
        /// Value of the config column in the CSVs
        #[arg(long, default_value = "run")]
        name: String,
    },
    /// Run a parameter sweep; one CSV row per point
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Sweep file with `axis.<key> = a | b | c` lines
        #[arg(short, long)]
        spec: PathBuf,
        #[arg(short, long)]
        manifest: Option<PathBuf>,
        /// Output CSV (default: stdout)
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Write the synthetic fixture suite and its manifest
    Synth {
        /// Output directory
        #[arg(short, long)]
        out: PathBuf,
    },
    /// List or run the ablation presets
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
    /// Score mask directories (<pred>/<video>/<frame>.png) against ground truth
    Eval {
        #[arg(short, long)]
        manifest: PathBuf,
        /// Root of the predicted mask directories
        #[arg(short, long)]
        pred: PathBuf,
        /// Ground-truth masks are foreground above this value
        #[arg(long, default_value_t = DEFAULT_GT_THRESHOLD)]
        gt_threshold: u8,
        #[command(flatten)]
        out: Outputs,
        #[arg(long, default_value = "eval")]
        name: String,
    },
    /// Print the effective configuration
    Config {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Subcommand, Debug)]
enum PresetAction {
    List,
    /// Run presets over a dataset; overrides apply on top of every preset
    Run {
        #[arg(short, long)]
        manifest: Option<PathBuf>,
        /// Run only these presets
        #[arg(long)]
        only: Vec<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[command(flatten)]
        out: Outputs,
    },
}

/// `(key, value)` config overrides in command-line order.
type Overrides = Vec<(String, String)>;

/// Pulls `--<dotted.key>[=value]` arguments out of argv before clap sees them.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Overrides)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        if arg == "--" {
            rest.push(arg);
            rest.extend(it.by_ref());
            break;
        }
        let Some(body) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match body.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (body, None),
        };
        if !name.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().with_context(|| format!("--{name} needs a value"))?,
        };
        overrides.push((name.to_string(), value));
    }
    Ok((rest, overrides))
}

fn parse_set(items: &[String]) -> Result<Overrides> {
    items
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .with_context(|| format!("--set expects KEY=VALUE, got {s:?}"))
        })
        .collect()
}

fn apply(cfg: &mut PipelineConfig, overrides: &[(String, String)]) -> Result<()> {
    for (k, v) in overrides {
        cfg.set(k, v).with_context(|| format!("override {k}={v}"))?;
    }
    Ok(())
}

fn build_config(args: &ConfigArgs, extra: &[(String, String)]) -> Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    apply(&mut cfg, &parse_set(&args.set)?)?;
    apply(&mut cfg, extra)?;
    cfg.validate()?;
    Ok(cfg)
}

fn manifest_for(flag: Option<&Path>, cfg: &PipelineConfig) -> Result<Manifest> {
    let path = flag
        .or(cfg.manifest.as_deref())
        .context("no dataset manifest: pass --manifest or set dataset.manifest")?;
    Manifest::load(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_runs(out: &Outputs, runs: &[(String, DatasetRun)]) -> Result<()> {
    let reports: Vec<_> = runs.iter().map(|(n, r)| (n.clone(), r.report.clone())).collect();
    emit(out.report.as_deref(), &report_csv(&reports))?;
    if let Some(p) = &out.videos {
        let videos: Vec<_> = runs.iter().map(|(n, r)| (n.clone(), r.videos.clone())).collect();
        emit(Some(p), &videos_csv(&videos))?;
    }
    Ok(())
}

fn run_one(cfg: &PipelineConfig, manifest: &Manifest, masks: Option<&Path>) -> Result<DatasetRun> {
    let backends = Backends::from_config(cfg)?;
    let run = run_dataset_with(manifest, cfg, &backends, |video| match masks {
        Some(dir) => write_video_masks(video, dir),
        None => Ok(()),
    })?;
    Ok(run)
}

fn main_with(args: Vec<String>) -> Result<()> {
    let (args, overrides) = split_overrides(args)?;
    let cli = Cli::parse_from(args);
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let takes_overrides = matches!(
        cli.command,
        Command::Run { .. } | Command::Sweep { .. } | Command::Config { .. } | Command::Presets { action: PresetAction::Run { .. } }
    );
    if !overrides.is_empty() && !takes_overrides {
        bail!("config overrides are not accepted by this subcommand");
    }

    match cli.command {
        Command::Run {
            cfg,
            manifest,
            out,
            masks,
            name,
        } => {
            let cfg = build_config(&cfg, &overrides)?;
            let manifest = manifest_for(manifest.as_deref(), &cfg)?;
            let run = run_one(&cfg, &manifest, masks.as_deref())?;
            emit_runs(&out, &[(name, run)])
        }
        Command::Sweep {
            cfg,
            spec,
            manifest,
            out,
        } => {
            let base = build_config(&cfg, &overrides)?;
            let manifest = manifest_for(manifest.as_deref(), &base)?;
            let spec = SweepSpec::load(&spec, base).with_context(|| format!("loading sweep {}", spec.display()))?;
            let rows = run_sweep(&spec, |cfg| {
                let backends = Backends::from_config(cfg)?;
                gasleak::run_dataset(&manifest, cfg, &backends)
            })?;
            emit(out.as_deref(), &sweep_csv(&spec, &rows))
        }
        Command::Synth { out } => {
            let manifest = write_suite(&standard_suite(), &out)?;
            eprintln!("wrote {} videos to {}", manifest.entries.len(), out.display());
            Ok(())
        }
        Command::Presets { action } => match action {
            PresetAction::List => {
                for (name, cfg) in ablation_presets() {
                    let differs: Vec<String> = cfg
                        .entries()
                        .into_iter()
                        .zip(PipelineConfig::default().entries())
                        .filter(|(a, b)| a != b)
                        .map(|((k, v), _)| format!("{k}={v}"))
                        .collect();
                    println!("{name}\t{}", if differs.is_empty() { "(defaults)".into() } else { differs.join(" ") });
                }
                Ok(())
            }
            PresetAction::Run {
                manifest,
                only,
                set,
                out,
            } => {
                let mut all = parse_set(&set)?;
                all.extend(overrides);
                let presets = ablation_presets();
                for name in &only {
                    if !presets.iter().any(|(n, _)| n == name) {
                        bail!("unknown preset {name:?}");
                    }
                }
                let mut runs = Vec::new();
                for (name, mut cfg) in presets {
                    if !only.is_empty() && !only.contains(&name) {
                        continue;
                    }
                    apply(&mut cfg, &all)?;
                    cfg.validate().with_context(|| format!("preset {name}"))?;
                    let manifest = manifest_for(manifest.as_deref(), &cfg)?;
                    log::info!("running preset {name}");
                    let run = run_one(&cfg, &manifest, None).with_context(|| format!("preset {name}"))?;
                    runs.push((name, run));
                }
                emit_runs(&out, &runs)
            }
        },
        Command::Eval {
            manifest,
            pred,
            gt_threshold,
            out,
            name,
        } => {
            let manifest = Manifest::load(&manifest).with_context(|| format!("loading manifest {}", manifest.display()))?;
            let run = evaluate_mask_dirs(&manifest, &pred, gt_threshold)?;
            emit_runs(&out, &[(name, run)])
        }
        Command::Config { cfg } => {
            print!("{}", build_config(&cfg, &overrides)?.to_text());
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    main_with(std::env::args().collect())
}
