//! The `cura` command-line front end. Each subcommand reads an optional JSON
//! config and applies flag overrides on top; flags win.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::baselines::MethodKind;
use crate::dataset::{self, SynthConfig};
use crate::error::Result;
use crate::io::read_json;
use crate::metrics;
use crate::pipeline::{self, DataSource, ExperimentGrid, RunConfig};

/// Exit code for a failed verification (gradient or identity check).
pub const EXIT_CHECK_FAILED: i32 = 1;
/// Exit code for configuration, data, I/O or training errors.
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cura", version, about = "Uncertainty-calibrated risk prediction over frozen embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic embedding dataset as CSV.
    Synth(SynthArgs),
    /// Train a method on every cross-validation fold.
    Train(RunArgs),
    /// Evaluate trained runs: per-fold reports and a mean (sd) summary.
    Eval(RunDirs),
    /// Pool test folds and write the triage curves.
    Triage(RunDirs),
    /// Run an ablation or sensitivity grid.
    Grid(GridArgs),
    /// Check analytic gradients and the soft-label identity.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON file with generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path.
    #[arg(long, default_value = "synthetic.csv")]
    pub out: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub ambiguity: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Global seed for splits and initialization.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// internal_baseline, cura, mc_dropout or deep_ensemble.
    #[arg(long)]
    pub method: Option<MethodKind>,
    #[arg(long)]
    pub lambda_ind: Option<f64>,
    #[arg(long)]
    pub lambda_coh: Option<f64>,
    /// Neighbors per cohort (default depends on n).
    #[arg(long)]
    pub k: Option<usize>,
    /// Number of classifier heads.
    #[arg(long)]
    pub heads: Option<usize>,
    /// Cross-validation folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Embedding CSV to use instead of synthetic data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Synthetic sample count.
    #[arg(long)]
    pub n: Option<usize>,
    /// Synthetic positive rate.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Synthetic ambiguous share.
    #[arg(long)]
    pub ambiguity: Option<f64>,
    /// Seed of the synthetic generator.
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Maximum training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epochs over which the calibration terms ramp in.
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunDirs {
    /// Run directories written by `train` (repeatable).
    #[arg(long = "run", required = true)]
    pub runs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// JSON grid file; its `base` is the run configuration.
    #[arg(long = "grid")]
    pub grid: Option<PathBuf>,
    /// Comma-separated λ_ind values to sweep.
    #[arg(long, value_delimiter = ',')]
    pub lambda_ind_values: Option<Vec<f64>>,
    /// Comma-separated λ_coh values to sweep.
    #[arg(long, value_delimiter = ',')]
    pub lambda_coh_values: Option<Vec<f64>>,
    /// Comma-separated extra methods.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<MethodKind>>,
    /// Skip the four ablation rows.
    #[arg(long)]
    pub no_ablation: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Samples in the finite-difference batch.
    #[arg(long, default_value_t = 5)]
    pub batch: usize,
    /// Random tuples for the identity check.
    #[arg(long, default_value_t = 10_000)]
    pub tuples: usize,
}

impl RunArgs {
    /// The config file (or defaults) with every given flag applied.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut run = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        self.apply(&mut run);
        run.validate()?;
        Ok(run)
    }

    pub fn apply(&self, run: &mut RunConfig) {
        if let Some(v) = self.seed {
            run.seed = v;
        }
        if let Some(v) = &self.out {
            run.out = v.clone();
        }
        if let Some(v) = self.method {
            run.method.kind = v;
        }
        if let Some(v) = self.lambda_ind {
            run.objective.lambda_ind = v;
        }
        if let Some(v) = self.lambda_coh {
            run.objective.lambda_coh = v;
        }
        if let Some(v) = self.k {
            run.neighbors.k = Some(v);
        }
        if let Some(v) = self.heads {
            run.n_heads = v;
        }
        if let Some(v) = self.folds {
            run.folds.n_folds = v;
        }
        if let Some(v) = self.epochs {
            run.train.max_epochs = v;
        }
        if let Some(v) = self.warmup {
            run.train.warmup_epochs = v;
        }
        if let Some(v) = self.lr {
            run.train.learning_rate = v;
        }
        if let Some(p) = &self.data {
            run.data = DataSource::Csv(p.clone());
        }
        if let DataSource::Synthetic(cfg) = &mut run.data {
            if let Some(v) = self.n {
                cfg.n_samples = v;
            }
            if let Some(v) = self.rate {
                cfg.target_positive_rate = v;
            }
            if let Some(v) = self.ambiguity {
                cfg.ambiguity = v;
            }
            if let Some(v) = self.data_seed {
                cfg.seed = v;
            }
        }
    }
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.n {
        cfg.n_samples = v;
    }
    if let Some(v) = a.dim {
        cfg.dim = v;
    }
    if let Some(v) = a.clusters {
        cfg.n_clusters = v;
    }
    if let Some(v) = a.rate {
        cfg.target_positive_rate = v;
    }
    if let Some(v) = a.ambiguity {
        cfg.ambiguity = v;
    }
    let ds = dataset::generate_synthetic(&cfg)?;
    dataset::write_csv(&ds, &a.out)?;
    println!(
        "wrote {}: n={} dim={} positive_rate={:.4}",
        a.out.display(),
        ds.len(),
        ds.dim(),
        ds.positive_rate()
    );
    Ok(())
}

fn cmd_train(a: &RunArgs) -> Result<()> {
    let run = a.resolve()?;
    let outcomes = pipeline::train_run(&run)?;
    for o in &outcomes {
        let best: Vec<String> = o.fit.logs.iter().map(|l| l.best_epoch.to_string()).collect();
        println!("fold {}: {} best epoch {}", o.fold, run.method.kind, best.join("/"));
    }
    println!("wrote {}", run.out.display());
    Ok(())
}

fn cmd_eval(a: &RunDirs) -> Result<()> {
    let mut rows = Vec::new();
    for dir in &a.runs {
        rows.push(pipeline::eval_run(dir)?.aggregate);
    }
    print!("{}", metrics::format_table(&rows));
    Ok(())
}

fn cmd_triage(a: &RunDirs) -> Result<()> {
    for dir in &a.runs {
        let r = pipeline::triage_run(dir)?;
        let frr: Vec<String> = r.frr_rows().iter().map(|(t, v)| format!("tau={t}: {v:.4}")).collect();
        println!("{} (n={}): FRR {}", r.method, r.n, frr.join(", "));
    }
    Ok(())
}

fn load_grid(a: &GridArgs) -> Result<ExperimentGrid> {
    let mut grid: ExperimentGrid = match &a.grid {
        Some(p) => read_json(p)?,
        None => ExperimentGrid {
            base: match &a.run.config {
                Some(p) => RunConfig::from_file(p)?,
                None => RunConfig::default(),
            },
            ..ExperimentGrid::default()
        },
    };
    a.run.apply(&mut grid.base);
    if let Some(v) = &a.lambda_ind_values {
        grid.lambda_ind = v.clone();
    }
    if let Some(v) = &a.lambda_coh_values {
        grid.lambda_coh = v.clone();
    }
    if let Some(v) = &a.methods {
        grid.methods = v.clone();
    }
    if a.no_ablation {
        grid.ablation.clear();
    }
    grid.validate()?;
    Ok(grid)
}

fn cmd_grid(a: &GridArgs) -> Result<()> {
    let grid = load_grid(a)?;
    let rows = pipeline::run_grid(&grid)?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    println!(
        "wrote {} ({} rows, {} failed)",
        grid.base.out.join("results.csv").display(),
        rows.len(),
        failed
    );
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<bool> {
    let run = a.run.resolve()?;
    let r = pipeline::run_gradcheck(&run, a.batch, a.tuples)?;
    println!(
        "gradient: {} parameters, max relative error {:.3e} (tolerance {:.0e})",
        r.n_params,
        r.max_grad_rel_error,
        pipeline::GRADCHECK_TOLERANCE
    );
    println!(
        "soft-label identity: {} tuples, max residual {:.3e} (tolerance {:.0e})",
        r.identity_tuples,
        r.max_identity_residual,
        pipeline::IDENTITY_TOLERANCE
    );
    println!("{}", if r.passed { "PASS" } else { "FAIL" });
    Ok(r.passed)
}

/// Runs one command; `Ok(false)` means a verification failed.
pub fn execute(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a).map(|_| true),
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
        Command::Triage(a) => cmd_triage(a).map(|_| true),
        Command::Grid(a) => cmd_grid(a).map(|_| true),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(true) => 0,
        Ok(false) => EXIT_CHECK_FAILED,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from([
            "cura", "train", "--method", "internal_baseline", "--lambda-ind", "0", "--k", "7", "--heads", "4",
            "--folds", "3", "--rate", "0.1",
        ])
        .unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        let run = a.resolve().unwrap();
        assert_eq!(run.method.kind, MethodKind::InternalBaseline);
        assert_eq!(run.objective.lambda_ind, 0.0);
        assert_eq!(run.neighbors.k, Some(7));
        assert_eq!(run.n_heads, 4);
        assert_eq!(run.folds.n_folds, 3);
        let DataSource::Synthetic(s) = run.data else { panic!() };
        assert_eq!(s.target_positive_rate, 0.1);
    }

    #[test]
    fn unknown_method_is_rejected() {
        assert!(Cli::try_parse_from(["cura", "train", "--method", "svm"]).is_err());
    }

    #[test]
    fn grid_lists_parse() {
        let cli = Cli::try_parse_from([
            "cura", "grid", "--lambda-ind-values", "0.05,0.1,0.2,0.5,1.0", "--no-ablation",
        ])
        .unwrap();
        let Command::Grid(a) = cli.command else { panic!() };
        let grid = load_grid(&a).unwrap();
        assert_eq!(grid.cells().len(), 5);
    }
}
