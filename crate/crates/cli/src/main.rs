use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use realonly::ocsvm::OcSvmModel;
use realonly::perturb::{default_grid, PerturbSpec};
use realonly::pipeline::{
    cmd_bench, cmd_detect, cmd_eval, cmd_perturb, cmd_robustness, cmd_simulate, cmd_spectrum, cmd_train,
    export_features, resolve_threads, with_pool, EntryLabel, Manifest, PipelineConfig, SpectrumOptions,
};
use realonly::simgen::{Activation, SimSpec};

#[derive(Parser)]
#[command(name = "realonly", version, about = "Detect generated images with a one-class SVM trained on real photos only")]
struct Cli {
    /// Flat `key = value` config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: REALONLY_THREADS, then config, then CPU count).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Settings {
    /// Residual extractor, e.g. gaussian:1, median:3, wavelet:2:0.02, external:<dir>.
    #[arg(long)]
    extractor: Option<String>,
    /// Spectrum sampling interval.
    #[arg(long)]
    k: Option<String>,
    /// center_crop_256, resize_256 or native.
    #[arg(long)]
    input_policy: Option<String>,
    /// Upper bound on the training-outlier fraction, in (0, 1].
    #[arg(long)]
    nu: Option<String>,
    /// `auto` or a positive number.
    #[arg(long)]
    gamma: Option<String>,
    /// Solver stopping tolerance on the KKT gap.
    #[arg(long)]
    tol: Option<String>,
    /// Solver update limit (default 10 l^2).
    #[arg(long)]
    max_iter: Option<String>,
    /// Base seed for simulation and perturbations.
    #[arg(long)]
    seed: Option<String>,
}

impl Settings {
    fn pairs(&self) -> [(&'static str, &Option<String>); 8] {
        [
            ("extractor", &self.extractor),
            ("k", &self.k),
            ("input_policy", &self.input_policy),
            ("nu", &self.nu),
            ("gamma", &self.gamma),
            ("tol", &self.tol),
            ("max_iter", &self.max_iter),
            ("seed", &self.seed),
        ]
    }
}

#[derive(Args)]
struct Inputs {
    /// Manifest JSON `{seed, entries:[{path,label}]}`.
    #[arg(long, conflicts_with = "dir")]
    manifest: Option<PathBuf>,
    /// Directory of images (png, jpg, ppm).
    #[arg(long)]
    dir: Option<PathBuf>,
}

impl Inputs {
    /// Loads the manifest, or lists the directory with `dir_label`.
    fn load(&self, dir_label: EntryLabel) -> Result<Manifest> {
        match (&self.manifest, &self.dir) {
            (Some(m), _) => Manifest::load(m).with_context(|| format!("reading manifest {}", m.display())),
            (None, Some(d)) => Manifest::from_dir(d, dir_label).with_context(|| format!("listing {}", d.display())),
            (None, None) => bail!("pass --manifest or --dir"),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on real images only.
    Train {
        #[command(flatten)]
        inputs: Inputs,
        /// Where to write the model JSON.
        #[arg(long)]
        model: PathBuf,
        /// Also write the training features as CSV.
        #[arg(long)]
        features_out: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Per-image decision values and verdicts (CSV, or JSON for a .json report).
    Detect {
        /// Trained model JSON.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        inputs: Inputs,
        /// Detections CSV, or JSON when the path ends in .json.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// ACC, AP and F1 on a labeled manifest.
    Eval {
        /// Trained model JSON.
        #[arg(long)]
        model: PathBuf,
        /// Labeled manifest JSON.
        #[arg(long)]
        manifest: PathBuf,
        /// Eval report JSON.
        #[arg(long)]
        out: PathBuf,
        /// Also write the evaluation features as CSV.
        #[arg(long)]
        features_out: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Metrics with each perturbation applied to the generated images.
    Robustness {
        /// Trained model JSON.
        #[arg(long)]
        model: PathBuf,
        /// Labeled manifest JSON.
        #[arg(long)]
        manifest: PathBuf,
        /// Perturbation spec such as jpeg:85 or gauss:5@seed=7 (repeatable).
        #[arg(long = "perturb")]
        perturb: Vec<String>,
        /// Add the default 10-point sweep of a noise kind: gauss, saltpepper, speckle or poisson.
        #[arg(long)]
        grid: Vec<String>,
        /// Seed for grid points without an explicit one.
        #[arg(long, default_value_t = 0)]
        perturb_seed: u64,
        /// Robustness CSV, one row per perturbation.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// Render raw and enhanced amplitude spectra.
    Spectrum {
        #[command(flatten)]
        inputs: Inputs,
        /// Directory for the spectrum images and profile.csv.
        #[arg(long)]
        out_dir: PathBuf,
        /// Write profile.csv with the mean row profile.
        #[arg(long)]
        mean_profile: bool,
        /// Check the mean spectrum for lattice peaks with this period.
        #[arg(long)]
        peak_period: Option<usize>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Produce upsampling-artifact images from real ones.
    Simulate {
        #[command(flatten)]
        inputs: Inputs,
        /// `method:factor`, e.g. nearest:4, bilinear:8, transposed_conv:4 (repeatable, cycled).
        #[arg(long = "method", required = true)]
        methods: Vec<String>,
        /// Output stage nonlinearity: off or power:<p>.
        #[arg(long)]
        activation: Option<String>,
        /// Output directory; receives real/, gen/ and manifest.json.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// Apply one perturbation to one image.
    Perturb {
        /// Image to perturb.
        #[arg(long)]
        input: PathBuf,
        /// Where to write the result; the extension picks the format.
        #[arg(long)]
        output: PathBuf,
        /// Perturbation spec such as jpeg:85 or gamma:2.
        #[arg(long = "perturb")]
        spec: String,
        /// Quality when the output is written as JPEG.
        #[arg(long, default_value_t = 95)]
        quality: u8,
    },
    /// End-to-end throughput with a per-stage breakdown.
    Bench {
        /// Trained model JSON.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        inputs: Inputs,
        /// Also write the bench report JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
}

fn config(file: Option<&Path>, settings: &Settings) -> Result<PipelineConfig> {
    let mut cfg = match file {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    for (key, value) in settings.pairs() {
        if let Some(v) = value {
            cfg.set(key, v).with_context(|| format!("--{}", key.replace('_', "-")))?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(path: &Path) -> Result<OcSvmModel> {
    OcSvmModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let empty = Settings::default();
    let settings = match &cli.command {
        Command::Train { settings, .. }
        | Command::Detect { settings, .. }
        | Command::Eval { settings, .. }
        | Command::Robustness { settings, .. }
        | Command::Spectrum { settings, .. }
        | Command::Simulate { settings, .. }
        | Command::Bench { settings, .. } => settings,
        Command::Perturb { .. } => &empty,
    };
    let cfg = config(cli.config.as_deref(), settings)?;
    let threads = resolve_threads(cli.threads, cfg.threads)?;
    log::debug!("using {threads} worker threads");
    with_pool(threads, || execute(cli.command, &cfg))?
}

fn execute(command: Command, cfg: &PipelineConfig) -> Result<()> {
    match command {
        Command::Train {
            inputs,
            model,
            features_out,
            ..
        } => {
            let manifest = inputs.load(EntryLabel::Real)?;
            let out = cmd_train(&manifest, cfg, Some(&model))?;
            for path in &out.audit {
                log::debug!("read {}", path.display());
            }
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(f) = features_out {
                export_features(&manifest, cfg, &f)?;
            }
            println!("sum_alpha {:.12}", out.report.alpha_sum);
            println!("support_vectors {}", out.report.n_support);
            println!("training_outlier_fraction {:.6}", out.report.outlier_fraction);
            println!("rho {}", out.report.rho);
            println!("model {}", model.display());
        }
        Command::Detect { model, inputs, out, .. } => {
            let model = load_model(&model)?;
            let manifest = inputs.load(EntryLabel::Unknown)?;
            let (_, summary) = cmd_detect(&model, &manifest, cfg, Some(&out))?;
            println!(
                "images {} real {} generated {} failed {}",
                summary.n_images, summary.n_real, summary.n_generated, summary.n_failed
            );
            for f in &summary.failures {
                eprintln!("failed: {}: {}", f.path, f.error);
            }
        }
        Command::Eval {
            model,
            manifest,
            out,
            features_out,
            ..
        } => {
            let model = load_model(&model)?;
            let manifest = Manifest::load(&manifest)?;
            let report = cmd_eval(&model, &manifest, cfg, Some(&out))?;
            if let Some(f) = features_out {
                export_features(&manifest, cfg, &f)?;
            }
            print_json(&report)?;
        }
        Command::Robustness {
            model,
            manifest,
            perturb,
            grid,
            perturb_seed,
            out,
            ..
        } => {
            let model = load_model(&model)?;
            let manifest = Manifest::load(&manifest)?;
            let mut specs = vec![PerturbSpec::identity()];
            for s in &perturb {
                specs.push(PerturbSpec::parse(s)?);
            }
            for kind in &grid {
                let Some(points) = default_grid(kind) else {
                    bail!("no default grid for `{kind}`");
                };
                for p in points {
                    specs.push(PerturbSpec::parse(&format!("{kind}:{p}"))?.with_seed(perturb_seed));
                }
            }
            for row in cmd_robustness(&model, &manifest, &specs, cfg, Some(&out))? {
                println!("{} acc {:.4} ap {:.4} f1 {:.4}", row.spec, row.metrics.acc, row.metrics.ap, row.metrics.f1);
            }
        }
        Command::Spectrum {
            inputs,
            out_dir,
            mean_profile,
            peak_period,
            ..
        } => {
            let paths = inputs.load(EntryLabel::Unknown)?.resolved_paths();
            let opts = SpectrumOptions {
                mean_profile,
                peak_period,
            };
            let summary = cmd_spectrum(&paths, cfg, &out_dir, opts)?;
            println!("rendered {} images into {}", summary.n_images, out_dir.display());
            for f in &summary.failures {
                eprintln!("failed: {}: {}", f.path, f.error);
            }
            if let Some(peak) = &summary.peak {
                print_json(peak)?;
            }
        }
        Command::Simulate {
            inputs,
            methods,
            activation,
            out,
            ..
        } => {
            let activation = match activation {
                Some(a) => Activation::parse(&a)?,
                None => Activation::default(),
            };
            let specs = methods
                .iter()
                .map(|m| Ok(SimSpec::parse(m, cfg.seed)?.with_activation(activation)))
                .collect::<Result<Vec<_>>>()?;
            let paths = inputs.load(EntryLabel::Real)?.resolved_paths();
            let manifest = cmd_simulate(&paths, &specs, cfg, &out)?;
            println!(
                "wrote {} real and {} generated images, manifest {}",
                manifest.count(EntryLabel::Real),
                manifest.count(EntryLabel::Generated),
                out.join("manifest.json").display()
            );
        }
        Command::Perturb {
            input,
            output,
            spec,
            quality,
        } => {
            let spec = PerturbSpec::parse(&spec)?;
            cmd_perturb(&input, &output, &spec, quality)?;
            println!("{} -> {} ({spec})", input.display(), output.display());
        }
        Command::Bench {
            model, inputs, out, ..
        } => {
            let model = load_model(&model)?;
            let paths = inputs.load(EntryLabel::Unknown)?.resolved_paths();
            let report = cmd_bench(&model, &paths, cfg, out.as_deref())?;
            print_json(&report)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
