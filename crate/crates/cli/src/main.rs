use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use lurk::evaluation::{monte_carlo_curve, MonteCarloConfig};
use lurk::monitors::GroupKey;
use lurk::pipeline::{
    compare_models, derive_seed, generate_synthetic, load_dataset, run_until, PipelineConfig, RunReport, Stage,
    SyntheticScenario,
};

#[derive(Parser)]
#[command(name = "lurk", version, about = "Land-use regression and universal kriging pipeline")]
struct Cli {
    /// Pipeline config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Annual means from daily data.
    Annualize,
    /// Covariate matrix at the monitors.
    Covariates,
    /// Fit the configured model.
    Fit,
    /// Cross-validate the configured model.
    Cv,
    /// Monte Carlo training-size curve for the configured model.
    Montecarlo {
        /// Training sizes, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [20, 40, 80, 160, 320])]
        n_grid: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        iterations: usize,
        /// Also run k-fold CV inside each sample.
        #[arg(long)]
        kfold: Option<usize>,
        /// Also run leave-one-group-out CV inside each sample.
        #[arg(long)]
        logo: Option<Group>,
    },
    /// Predict the configured surface.
    Predict,
    /// Population exposure statistics.
    Exposure,
    /// Generate a synthetic region with its pipeline config.
    Synth {
        #[arg(long, value_enum, default_value_t = Preset::Default)]
        preset: Preset,
        /// Scenario JSON; overrides the preset.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Compare run reports built from the same dataset.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run every configured stage.
    Run,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Small,
    Default,
    National,
}

#[derive(Clone, Copy, ValueEnum)]
enum Group {
    Province,
    City,
}

impl From<Group> for GroupKey {
    fn from(g: Group) -> Self {
        match g {
            Group::Province => GroupKey::Province,
            Group::City => GroupKey::City,
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli.config.as_ref().context("this command needs --config")?;
    let mut cfg = PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn stages(cli: &Cli, last: Stage) -> Result<RunReport> {
    let cfg = load_config(cli)?;
    let report = run_until(&cfg, last)?;
    print_report(&report);
    if !report.is_completed() {
        bail!(
            "stage `{}` failed: {}",
            report.failed_stage.map(|s| s.to_string()).unwrap_or_default(),
            report.error.clone().unwrap_or_default()
        );
    }
    Ok(report)
}

fn print_report(r: &RunReport) {
    println!("family: {}", r.recipe.family);
    if let Some(n) = r.n_sites {
        println!("sites: {n} ({} excluded)", r.n_excluded.unwrap_or(0));
    }
    if let Some(n) = r.n_covariates {
        println!("covariates: {n}");
    }
    if let Some(f) = &r.fit {
        println!("selected: {}", f.selected.join(", "));
        if let Some(v) = f.variogram {
            println!(
                "variogram: nugget {:.4} partial sill {:.4} range {:.1} m",
                v.nugget, v.partial_sill, v.range
            );
        }
    }
    for c in &r.cv {
        println!("{}: R2 {:.4} RMSE {:.4}", c.scheme, c.r2_mse, c.rmse);
    }
    if let Some(e) = &r.exposure {
        println!("population-weighted mean: {:.4}", e.pop_weighted_mean);
    }
}

fn montecarlo(cli: &Cli, n_grid: &[usize], iterations: usize, kfold: Option<usize>, logo: Option<Group>) -> Result<()> {
    let cfg = load_config(cli)?;
    let report = run_until(&cfg, Stage::Covariates)?;
    if !report.is_completed() {
        bail!("preparing the dataset failed: {}", report.error.unwrap_or_default());
    }
    let data = load_dataset(&cfg.output_dir)?;
    let recipe = cfg.recipe(derive_seed(cfg.seed, "fit:pls"));
    let mc = MonteCarloConfig {
        n_grid: n_grid.to_vec(),
        iterations,
        seed: derive_seed(cfg.seed, "montecarlo"),
        kfold,
        logo: logo.map(GroupKey::from),
    };
    let res = monte_carlo_curve(&recipe, &data, &mc)?;
    res.write_csv(cfg.output_dir.join("montecarlo.csv"))?;
    fs::write(
        cfg.output_dir.join("montecarlo.json"),
        serde_json::to_string_pretty(&res.summary)?,
    )?;
    for s in &res.summary {
        println!(
            "n={:<5} {:<17} median {:.4} (q1 {:.4}, q3 {:.4})",
            s.n, s.metric, s.median, s.q1, s.q3
        );
    }
    Ok(())
}

fn synth(cli: &Cli, preset: Preset, scenario: Option<&Path>) -> Result<()> {
    let out = cli.out.as_ref().context("synth needs --out")?;
    let seed = cli.seed.unwrap_or(0);
    let sc = match scenario {
        Some(p) => {
            let mut sc: SyntheticScenario = serde_json::from_str(&fs::read_to_string(p)?)?;
            if let Some(s) = cli.seed {
                sc.seed = s;
            }
            sc
        }
        None => match preset {
            Preset::Small => SyntheticScenario::small(seed),
            Preset::Default => SyntheticScenario {
                seed,
                ..SyntheticScenario::default()
            },
            Preset::National => SyntheticScenario::national(seed),
        },
    };
    let data = generate_synthetic(&sc)?;
    fs::create_dir_all(out)?;
    data.write_inputs(out)?;
    fs::write(out.join("scenario.json"), serde_json::to_string_pretty(&sc)?)?;
    println!(
        "wrote {} sites ({} annualized) to {}",
        data.sites.len(),
        data.table.len(),
        out.join("config.json").display()
    );
    Ok(())
}

fn compare(reports: &[PathBuf], csv: Option<&Path>) -> Result<()> {
    let reports = reports
        .iter()
        .map(|p| RunReport::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let table = compare_models(&reports)?;
    let mut buf = Vec::new();
    table.write_csv_to(&mut buf)?;
    print!("{}", String::from_utf8(buf)?);
    if let Some(p) = csv {
        table.write_csv(p)?;
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Annualize => stages(cli, Stage::Annualize).map(drop),
        Command::Covariates => stages(cli, Stage::Covariates).map(drop),
        Command::Fit => stages(cli, Stage::Fit).map(drop),
        Command::Cv => stages(cli, Stage::Cv).map(drop),
        Command::Predict => stages(cli, Stage::Predict).map(drop),
        Command::Exposure | Command::Run => stages(cli, Stage::Exposure).map(drop),
        Command::Montecarlo {
            n_grid,
            iterations,
            kfold,
            logo,
        } => montecarlo(cli, n_grid, *iterations, *kfold, *logo),
        Command::Synth { preset, scenario } => synth(cli, *preset, scenario.as_deref()),
        Command::Compare { reports, csv } => compare(reports, csv.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
        info!("using {n} worker threads");
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
