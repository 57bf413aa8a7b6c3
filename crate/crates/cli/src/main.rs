use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use momentum_rom::cases::{Case, CaseConfig, CaseKind};
use momentum_rom::pipeline::{
    self, check_dataset, diagnose, evaluate_models, generate, model_path, read_dataset, read_model, time_fom, write_dataset,
    write_model, write_reports,
};
use momentum_rom::pod::PodInner;
use momentum_rom::rom::{evaluate, train_strategy, FomOracle, Strategy};

#[derive(Parser)]
#[command(name = "mrom", version, about = "Momentum-conserving reduced-order models for 2D mixed elasticity")]
struct Cli {
    /// Root directory for datasets, models and reports.
    #[arg(long, global = true, env = "EROM_OUTPUT_ROOT", default_value = "runs")]
    output_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print mesh, space and forest sizes for a configuration.
    MeshInfo {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Also write the mesh as plain text.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Solve the full-order model on the training and test parameter draws.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train surrogates on a generated dataset.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        strategies: StrategyArgs,
    },
    /// Evaluate trained surrogates on the test split and write CSV reports.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        strategies: StrategyArgs,
        /// Add a row for the full-order solver itself.
        #[arg(long)]
        fom_oracle: bool,
        /// Number of test samples used to time the full-order solver.
        #[arg(long, default_value_t = 5)]
        fom_timing: usize,
    },
    /// Run the structural checks and print a pass/fail table.
    Diagnose {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        check_seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CaseArg {
    Footing,
    Hencky,
}

#[derive(Clone, Copy, ValueEnum)]
enum InnerArg {
    Euclidean,
    Gramian,
}

/// Every flag mirrors a key of the TOML configuration and wins over it.
#[derive(Args, Clone)]
#[command(after_help = "Footing parameters are [g_y, f_y, mu, lambda]; the default mu range is [0.1, 2] \
because mu = 0 makes the compliance singular. Hencky parameters are [alpha, beta, gamma, delta].")]
struct ConfigArgs {
    /// TOML configuration file (key = value, with [train] and [hencky] sections).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    case: Option<CaseArg>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    /// POD / latent dimension.
    #[arg(long)]
    latent: Option<usize>,
    #[arg(long)]
    kernel_latent: Option<usize>,
    #[arg(long)]
    fourier_k: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    root_count: Option<usize>,
    /// Parameter sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    pod_inner: Option<InnerArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// 0 selects full-batch training.
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    train_seed: Option<u64>,
    #[arg(long)]
    hencky_tolerance: Option<f64>,
    #[arg(long)]
    hencky_max_iterations: Option<usize>,
}

#[derive(Args, Clone)]
struct StrategyArgs {
    /// Strategies to process (blackbox, podnn, split, corrected); all by default.
    #[arg(long = "strategy", value_delimiter = ',')]
    strategies: Vec<String>,
}

impl StrategyArgs {
    fn resolve(&self) -> Result<Vec<Strategy>> {
        if self.strategies.is_empty() {
            return Ok(Strategy::ALL.to_vec());
        }
        Ok(self.strategies.iter().map(|s| s.parse()).collect::<Result<_, _>>()?)
    }
}

impl ConfigArgs {
    fn kind(&self) -> Option<CaseKind> {
        self.case.map(|c| match c {
            CaseArg::Footing => CaseKind::Footing,
            CaseArg::Hencky => CaseKind::Hencky,
        })
    }

    /// File (or `fallback`, or the case defaults) with flags applied on top.
    fn resolve(&self, fallback: Option<&CaseConfig>) -> Result<CaseConfig> {
        let mut cfg = match (&self.config, fallback) {
            (Some(path), _) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                CaseConfig::from_toml_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            (None, Some(cfg)) => cfg.clone(),
            (None, None) => CaseConfig::default_for(self.kind().unwrap_or(CaseKind::Footing)),
        };
        if let Some(kind) = self.kind() {
            if kind != cfg.case {
                bail!("--case {kind} conflicts with the configured case {}", cfg.case);
            }
        }
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { cfg.$($field).+ = v; })*
            };
        }
        set!(
            nx => nx, ny => ny, n_train => n_train, n_test => n_test, latent => latent,
            kernel_latent => kernel_latent, fourier_k => fourier_k, hidden => hidden,
            root_count => root_count, seed => seed, epochs => train.epochs,
            learning_rate => train.learning_rate, batch_size => train.batch_size,
            train_seed => train.seed, hencky_tolerance => hencky.tolerance,
            hencky_max_iterations => hencky.max_iterations,
        );
        if let Some(inner) = self.pod_inner {
            cfg.pod_inner = match inner {
                InnerArg::Euclidean => PodInner::Euclidean,
                InnerArg::Gramian => PodInner::Gramian,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Case directory `<root>/<case>` for the configuration named by the flags.
    fn case_dir(&self, root: &Path) -> Result<PathBuf> {
        let kind = match &self.config {
            Some(_) => self.resolve(None)?.case,
            None => self.kind().unwrap_or(CaseKind::Footing),
        };
        Ok(root.join(kind.to_string()))
    }
}

fn build_case(cfg: CaseConfig) -> Result<(Case, f64)> {
    let t0 = Instant::now();
    let case = Case::new(cfg)?;
    Ok((case, t0.elapsed().as_secs_f64()))
}

fn mesh_info(cfg: &ConfigArgs, export: Option<&Path>) -> Result<()> {
    let (case, setup) = build_case(cfg.resolve(None)?)?;
    let disc = &case.disc;
    let mesh = &disc.mesh;
    println!("case              {}", case.kind());
    println!("mesh              {}x{} (h = {})", mesh.nx, mesh.ny, mesh.h);
    println!("vertices          {}", mesh.num_vertices());
    println!("cells             {}", mesh.num_cells());
    println!("facets            {} ({} on the boundary)", mesh.num_facets(), mesh.num_boundary_facets());
    println!("stress dofs       {} ({} eliminated on traction sides)", disc.num_stress(), disc.dofs.num_constrained());
    println!("displacement dofs {}", disc.dofs.num_displacement());
    println!("rotation dofs     {}", disc.dofs.num_rotation());
    println!("forest            {} trees, {} tree edges", case.forest.num_trees(), case.forest.num_tree_edges());
    println!("min |det| block   {:.3e}", case.tree.min_abs_det());
    println!("setup             {setup:.3} s");
    if let Some(path) = export {
        let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        mesh.write_plain_text(std::io::BufWriter::new(file))?;
        println!("mesh written to   {}", path.display());
    }
    Ok(())
}

fn cmd_generate(cfg: &ConfigArgs, root: &Path) -> Result<()> {
    let (case, _) = build_case(cfg.resolve(None)?)?;
    let dir = cfg.case_dir(root)?.join("dataset");
    let t0 = Instant::now();
    let data = generate(&case)?;
    write_dataset(&dir, &data, &case)?;
    println!(
        "{} train + {} test samples in {:.1} s ({} redraws) -> {}",
        data.train.len(),
        data.test.len(),
        t0.elapsed().as_secs_f64(),
        data.metadata.retries.len(),
        dir.display()
    );
    Ok(())
}

fn load(cfg: &ConfigArgs, root: &Path) -> Result<(Case, f64, pipeline::Dataset, PathBuf)> {
    let dir = cfg.case_dir(root)?;
    let data_dir = dir.join("dataset");
    let data = read_dataset(&data_dir).with_context(|| format!("no dataset in {} (run generate first)", data_dir.display()))?;
    let (case, setup) = build_case(cfg.resolve(Some(data.config()))?)?;
    check_dataset(&case, &data)?;
    Ok((case, setup, data, dir))
}

fn cmd_train(cfg: &ConfigArgs, strategies: &StrategyArgs, root: &Path) -> Result<()> {
    let (case, _, data, dir) = load(cfg, root)?;
    for strategy in strategies.resolve()? {
        let t0 = Instant::now();
        let model = train_strategy(strategy, &case, &data.train)?;
        let path = model_path(&dir.join("models"), strategy);
        write_model(&path, &model)?;
        println!(
            "{strategy:<10} final loss {:.4e} in {:.1} s -> {}",
            model.training.final_loss,
            t0.elapsed().as_secs_f64(),
            path.display()
        );
    }
    Ok(())
}

fn cmd_evaluate(cfg: &ConfigArgs, strategies: &StrategyArgs, fom_oracle: bool, fom_timing: usize, root: &Path) -> Result<()> {
    let (case, setup, data, dir) = load(cfg, root)?;
    let models = strategies
        .resolve()?
        .into_iter()
        .map(|s| {
            let path = model_path(&dir.join("models"), s);
            read_model(&path).with_context(|| format!("no {s} model at {} (run train first)", path.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let out = dir.join("results");
    let mut reports = evaluate_models(&case, &data.test, &models, setup, Some(&out))?;
    if fom_oracle {
        reports.push(evaluate(&FomOracle, &case, &data.test)?);
    }
    let fom_s = (fom_timing > 0).then(|| time_fom(&case, &data.test, fom_timing)).transpose()?;
    write_reports(&out, &case, &data.test, &reports, fom_s)?;
    println!("{:<10} {:>11} {:>11} {:>11} {:>11} {:>11}", "strategy", "sigma_mre", "u_mre", "r_mre", "acv", "stress_s");
    for r in &reports {
        println!(
            "{:<10} {:>11.3e} {:>11.3e} {:>11.3e} {:>11.3e} {:>11.3e}",
            r.name, r.sigma_mre, r.u_mre, r.r_mre, r.acv, r.timings.stress_s
        );
    }
    if let Some(s) = fom_s {
        println!("fom solve {s:.3e} s per sample");
    }
    println!("reports -> {}", out.display());
    Ok(())
}

fn cmd_diagnose(cfg: &ConfigArgs, trials: usize, seed: u64) -> Result<bool> {
    let (case, _) = build_case(cfg.resolve(None)?)?;
    let rows = diagnose(&case, trials, seed)?;
    println!("{:<40} {:>6} {:>12} {:>12}", "check", "result", "value", "threshold");
    let mut ok = true;
    for r in &rows {
        let tag = match r.passed {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "INFO",
        };
        ok &= r.passed != Some(false);
        println!("{:<40} {:>6} {:>12.3e} {:>12.3e}", r.name, tag, r.value, r.threshold);
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    let root = cli.output_root.as_path();
    match &cli.command {
        Command::MeshInfo { cfg, export } => mesh_info(cfg, export.as_deref())?,
        Command::Generate { cfg } => cmd_generate(cfg, root)?,
        Command::Train { cfg, strategies } => cmd_train(cfg, strategies, root)?,
        Command::Evaluate {
            cfg,
            strategies,
            fom_oracle,
            fom_timing,
        } => cmd_evaluate(cfg, strategies, *fom_oracle, *fom_timing, root)?,
        Command::Diagnose { cfg, trials, check_seed } => return cmd_diagnose(cfg, *trials, *check_seed),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
