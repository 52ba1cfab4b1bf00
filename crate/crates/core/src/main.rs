use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sigverify::datasets::{self, Layout, Manifest};
use sigverify::evalcli::{self, run_experiment, RunConfig};
use sigverify::featnet::{self, Objective};
use sigverify::preprocess::{self, FloatImage};
use sigverify::stacker;
use sigverify::synth::{generate_corpus, SynthConfig};
use sigverify::Error;

#[derive(Parser)]
#[command(name = "sigverify", version, about = "Writer-independent offline signature verification")]
struct Cli {
    /// Seed for the split and both networks (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the signatures of a dataset into `manifest.csv`.
    Scan {
        root: PathBuf,
        #[arg(long, default_value = "cedar")]
        layout: Layout,
    },
    /// Preprocess every image of a manifest into a PGM cache.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train one feature extractor.
    TrainExtractor {
        #[arg(long)]
        objective: Objective,
        #[arg(long)]
        manifest: PathBuf,
        /// Manifest images are already preprocessed (output of `preprocess`).
        #[arg(long)]
        preprocessed: bool,
    },
    /// Extract a feature file with a trained extractor.
    Extract {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        preprocessed: bool,
        /// Output file name inside the output directory.
        #[arg(long, default_value = "features.sftv")]
        name: String,
    },
    /// Fit the two boosted branches and the combiner.
    Train {
        #[arg(long)]
        signet: PathBuf,
        #[arg(long)]
        signetf: PathBuf,
    },
    /// Score an ensemble on test feature files.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        signet: PathBuf,
        #[arg(long)]
        signetf: PathBuf,
    },
    /// Full experiment from a run configuration.
    Run,
    /// Generate the synthetic corpus (CEDAR layout).
    Synth {
        #[arg(long, default_value_t = 40)]
        writers: usize,
        #[arg(long, default_value_t = 6)]
        genuine: usize,
        #[arg(long, default_value_t = 6)]
        forged: usize,
    },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
}

impl Ctx {
    fn new(cli: &Cli) -> Result<Ctx, Error> {
        let mut cfg = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = cli.seed {
            cfg.set_seed(seed);
        }
        if let Some(out) = &cli.out {
            cfg.out_dir = out.clone();
        } else if cli.config.is_none() {
            cfg.out_dir = PathBuf::from(".");
        }
        let out = cfg.out_dir.clone();
        Ok(Ctx { cfg, out })
    }

    fn out_file(&self, name: &str) -> Result<PathBuf, Error> {
        std::fs::create_dir_all(&self.out).map_err(io(&self.out))?;
        Ok(self.out.join(name))
    }
}

fn load_images(m: &Manifest, ctx: &Ctx, preprocessed: bool) -> Result<Vec<FloatImage>, Error> {
    if !preprocessed {
        return evalcli::preprocess_manifest(m, &ctx.cfg.preprocess);
    }
    m.samples()
        .iter()
        .map(|s| {
            preprocess::load_preprocessed(&s.path).map_err(|source| Error::Image {
                path: PathBuf::from(&s.path),
                source,
            })
        })
        .collect()
}

fn execute(cli: &Cli) -> Result<(), Error> {
    let ctx = Ctx::new(cli)?;
    match &cli.command {
        Command::Scan { root, layout } => {
            let m = datasets::scan_dataset(root, *layout)?;
            let path = ctx.out_file("manifest.csv")?;
            datasets::write_manifest(&m, &path)?;
            println!(
                "{} samples ({} genuine, {} forged) -> {}",
                m.len(),
                m.count(datasets::Label::Genuine),
                m.count(datasets::Label::Forged),
                path.display()
            );
        }
        Command::Preprocess { manifest } => {
            let m = datasets::read_manifest(manifest)?;
            let images = evalcli::preprocess_manifest(&m, &ctx.cfg.preprocess)?;
            let dir = ctx.out_file("images")?;
            std::fs::create_dir_all(&dir).map_err(io(&dir))?;
            let mut cached = Vec::with_capacity(m.len());
            for (i, (s, img)) in m.samples().iter().zip(&images).enumerate() {
                let path = dir.join(format!("{i:06}.pgm"));
                preprocess::write_pgm(img, &path)?;
                let mut c = s.clone();
                c.path = path.to_string_lossy().into_owned();
                cached.push(c);
            }
            let path = ctx.out_file("manifest.csv")?;
            datasets::write_manifest(&Manifest::new(cached)?, &path)?;
            println!("{} images -> {}", images.len(), dir.display());
        }
        Command::TrainExtractor {
            objective,
            manifest,
            preprocessed,
        } => {
            let m = datasets::read_manifest(manifest)?;
            let images = load_images(&m, &ctx, *preprocessed)?;
            let (base, name) = match objective {
                Objective::Signet => (&ctx.cfg.signet, "signet.sfnt"),
                Objective::SignetF => (&ctx.cfg.signetf, "signetf.sfnt"),
            };
            let (net, history) =
                evalcli::train_extractor(base, &m, &images, &ctx.cfg.train, *objective)?;
            let path = ctx.out_file(name)?;
            featnet::save_model(&net, &path)?;
            for (epoch, loss) in history.iter().enumerate() {
                println!("epoch {:>3}  loss {loss:.5}", epoch + 1);
            }
            println!("{objective} extractor -> {}", path.display());
        }
        Command::Extract {
            model,
            manifest,
            preprocessed,
            name,
        } => {
            let net = featnet::load_model(model)?;
            let m = datasets::read_manifest(manifest)?;
            let images = load_images(&m, &ctx, *preprocessed)?;
            let x = featnet::extract_batch(&net, &images)?;
            let path = ctx.out_file(name)?;
            datasets::write_features(&x, &m.labels(), &path)?;
            println!("{}x{} features -> {}", x.nrows(), x.ncols(), path.display());
        }
        Command::Train { signet, signetf } => {
            let (xa, ya) = datasets::read_features(signet)?;
            let (xb, yb) = datasets::read_features(signetf)?;
            if ya != yb {
                return Err(Error::Config("feature files carry different labels".into()));
            }
            let fit = stacker::train_ensemble(&xa, &xb, &ya, &ctx.cfg.ensemble)?;
            let path = ctx.out_file("ensemble.sens")?;
            stacker::save_ensemble(&fit.model, &path)?;
            let c = fit.model.combiner;
            println!(
                "combiner: w = [{:.4}, {:.4}], b = {:.4}, converged = {}",
                c.weights[0], c.weights[1], c.bias, fit.combiner_fit.converged
            );
            println!("ensemble -> {}", path.display());
        }
        Command::Evaluate {
            model,
            signet,
            signetf,
        } => {
            let m = stacker::load_ensemble(model)?;
            let (xa, ya) = datasets::read_features(signet)?;
            let (xb, yb) = datasets::read_features(signetf)?;
            if ya != yb {
                return Err(Error::Config("feature files carry different labels".into()));
            }
            let report = evalcli::evaluate_ensemble(&m, &xa, &xb, &ya)?;
            let path = ctx.out_file("report.json")?;
            std::fs::write(&path, report.to_json()).map_err(io(&path))?;
            print!("{}", report.table());
        }
        Command::Run => {
            if cli.config.is_none() {
                return Err(Error::Config("`run` needs --config <file>".into()));
            }
            let run = run_experiment(&ctx.cfg).map_err(|e| {
                eprintln!("failed at stage {}", e.stage);
                e.source
            })?;
            print!("{}", run.report.table());
            println!("report -> {}", run.report_path.display());
        }
        Command::Synth {
            writers,
            genuine,
            forged,
        } => {
            let cfg = SynthConfig {
                writers: *writers,
                genuine_per_writer: *genuine,
                forged_per_writer: *forged,
                seed: cli.seed.unwrap_or(0),
                ..SynthConfig::default()
            };
            let n = generate_corpus(&cfg, &ctx.out).map_err(io(&ctx.out))?;
            println!("{n} images -> {}", ctx.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
