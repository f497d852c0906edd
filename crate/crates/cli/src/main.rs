mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sparse_barankin::bb_numeric::{bb_upper_numeric, UnbiasednessGrid, DEFAULT_GRID_ID};
use sparse_barankin::bounds_closed::{bb_upper, bb_upper_envelope, crb, hcrb_closed};
use sparse_barankin::bounds_testpoint::{build_extended_testpoints, hcrb_eval, EIG_TOL_REL};
use sparse_barankin::estimators::{counterexample_optimal_a, default_ht_threshold, Estimator, EstimatorKind};
use sparse_barankin::experiments::{
    bounds_sweep, linear_grid, run_fig1, run_fig2, run_fig3, run_fig4, Fig1Params, Fig2Params, Fig3Params,
    Fig4Params, Metadata, OutputFormat, SweepResult, DEFAULT_ALPHA_SIGMAS,
};
use sparse_barankin::risk::{ht_mse_exact, ml_mse_exact, monte_carlo_risk};
use sparse_barankin::selftest::run_selftest;
use sparse_barankin::{Error, ProblemConfig, QuadratureSpec, SparseParam};

use config::{EstimatorConfig, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "ssnm", version, about = "Unbiased-estimation bounds for sparse vectors in Gaussian noise")]
struct Cli {
    /// JSON run configuration (schema_version 1)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file (defaults to standard output)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads (defaults to available parallelism)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Lower and upper bounds
    #[command(subcommand)]
    Bounds(BoundsCmd),
    /// Estimator risk
    #[command(subcommand)]
    Risk(RiskCmd),
    /// Regenerate figure data
    Figure {
        #[arg(value_enum)]
        which: Figure,
        #[command(flatten)]
        problem: ProblemArgs,
        /// Cells per dimension of the numerical upper bound (fig1)
        #[arg(long)]
        q: Option<usize>,
        /// Random parameter vectors per SNR (fig2)
        #[arg(long)]
        n_vectors: Option<usize>,
    },
    /// Run the built-in consistency checks
    Selftest,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Figure {
    Fig1,
    Fig2,
    Fig3,
    Fig4,
}

#[derive(Subcommand, Debug)]
enum BoundsCmd {
    /// All bounds at one parameter vector
    Eval {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Option<Vec<f64>>,
        /// Also solve the numerical upper bound with this many cells per dimension
        #[arg(long)]
        q: Option<usize>,
    },
    /// Closed-form bounds along a direction over an SNR grid
    Sweep {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        direction: Option<Vec<f64>>,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        q: Option<usize>,
    },
}

#[derive(Subcommand, Debug)]
enum RiskCmd {
    /// Monte Carlo risk of an estimator
    Mc {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Option<Vec<f64>>,
        #[arg(long, value_enum)]
        estimator: Option<EstimatorName>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Correction weight (family, counterexample)
        #[arg(long, allow_hyphen_values = true)]
        a: Option<f64>,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        d: Option<f64>,
    },
    /// Exact ML risk
    MlExact {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Option<Vec<f64>>,
    },
    /// Exact hard-thresholding risk
    HtExact {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Option<Vec<f64>>,
        #[arg(long)]
        threshold: Option<f64>,
    },
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum EstimatorName {
    Identity,
    Ml,
    Ht,
    Oracle,
    Family,
    Counterexample,
    #[value(name = "tanh_product")]
    TanhProduct,
}

#[derive(Args, Debug, Default)]
struct ProblemArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    sigma2: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct GridArgs {
    #[arg(long, allow_hyphen_values = true)]
    snr_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    snr_max: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Usage(String),
    Model(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Model(e)
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Usage(msg.into()))
}

struct Ctx {
    file: RunConfig,
    seed: u64,
    threads: usize,
}

impl Ctx {
    fn problem(&self, p: &ProblemArgs, default: Option<ProblemConfig>) -> Result<ProblemConfig, Failure> {
        let n = p.n.or(self.file.n).or(default.map(|d| d.n));
        let s = p.s.or(self.file.s).or(default.map(|d| d.s));
        let sigma2 = p.sigma2.or(self.file.sigma2).or(default.map(|d| d.sigma2)).unwrap_or(1.0);
        match (n, s) {
            (Some(n), Some(s)) => Ok(ProblemConfig::new(n, s, sigma2)?),
            _ => usage("problem dimensions missing: pass --n and --s or set them in --config"),
        }
    }

    fn quad(&self) -> Result<QuadratureSpec, Failure> {
        let q = self.file.quadrature.unwrap_or_default();
        q.validate()?;
        Ok(q)
    }

    fn param(&self, x: &Option<Vec<f64>>, c: &ProblemConfig) -> Result<SparseParam, Failure> {
        match x.as_ref().or(self.file.x.as_ref()) {
            Some(v) => Ok(SparseParam::new(v.clone(), c)?),
            None => usage("parameter vector missing: pass --x or set \"x\" in --config"),
        }
    }

    fn grid(&self, g: &GridArgs, lo: f64, hi: f64, n: usize) -> Vec<f64> {
        if g.snr_min.is_none() && g.snr_max.is_none() && g.points.is_none() {
            if let Some(v) = &self.file.snr_db {
                return v.clone();
            }
        }
        linear_grid(g.snr_min.unwrap_or(lo), g.snr_max.unwrap_or(hi), g.points.unwrap_or(n))
    }

    fn stamp(&self, r: &mut SweepResult) {
        r.metadata.threads = Some(self.threads);
        if r.metadata.seed.is_none() {
            r.metadata.seed = Some(self.seed);
        }
    }
}

fn single_row(name: &str, c: ProblemConfig, x: &SparseParam, quad: QuadratureSpec) -> SweepResult {
    let snr = x.snr_db().unwrap_or(f64::NEG_INFINITY);
    SweepResult::new(c, vec![snr], Metadata::new(name, c, quad))
}

fn bounds_eval(ctx: &Ctx, problem: &ProblemArgs, x: &Option<Vec<f64>>, q: Option<usize>) -> Result<SweepResult, Failure> {
    let c = ctx.problem(problem, None)?;
    let quad = ctx.quad()?;
    let x = ctx.param(x, &c)?;
    let q = q.or(ctx.file.q);
    let mut r = single_row("bounds-eval", c, &x, quad);
    r.push_column("crb", vec![crb(&x, &c)])?;
    r.push_column("hcrb", vec![hcrb_closed(&x, &c)])?;
    if x.has_max_support(&c) {
        let alpha = ctx.file.alpha_sigmas.unwrap_or(DEFAULT_ALPHA_SIGMAS) * c.sigma();
        let tp = build_extended_testpoints(&x, alpha, &c)?;
        r.push_column("hcrb_v", vec![hcrb_eval(&tp, c.sigma2, EIG_TOL_REL)?])?;
        r.push_column("bb_c", vec![bb_upper(&x, &c, &quad)?])?;
        r.push_column("envelope", vec![bb_upper_envelope(&x, &c)?])?;
        if let Some(q) = q {
            let ug = UnbiasednessGrid::default_for(&x, &c);
            r.push_column("bb_c_prime", vec![bb_upper_numeric(&x, q, &ug, &c)?])?;
            r.metadata.q = Some(q);
            r.metadata.constraint_grid = Some(DEFAULT_GRID_ID.into());
        }
    }
    Ok(r)
}

fn estimator_from(ctx: &Ctx, cmd: &RiskCmd, c: &ProblemConfig, x: &SparseParam) -> Result<Estimator, Failure> {
    let RiskCmd::Mc {
        estimator,
        threshold,
        a,
        c: cc,
        d,
        ..
    } = cmd
    else {
        unreachable!()
    };
    let file = ctx.file.estimator.clone();
    let kind = match (estimator, file) {
        (None, None) => return usage("estimator missing: pass --estimator or set \"estimator\" in --config"),
        (Some(name), _) => match name {
            EstimatorName::Identity => EstimatorConfig::Identity {},
            EstimatorName::Ml => EstimatorConfig::Ml {},
            EstimatorName::Ht => EstimatorConfig::Ht { threshold: None },
            EstimatorName::Oracle => EstimatorConfig::Oracle { support: None },
            EstimatorName::Family => match (a, cc, d) {
                (Some(a), Some(cc), Some(d)) => EstimatorConfig::Family { a: *a, c: *cc, d: *d },
                _ => return usage("the family estimator needs --a, --c and --d"),
            },
            EstimatorName::Counterexample => EstimatorConfig::Counterexample { a: None },
            EstimatorName::TanhProduct => EstimatorConfig::TanhProduct {},
        },
        (None, Some(f)) => f,
    };
    let kind = match kind {
        EstimatorConfig::Identity {} => EstimatorKind::Identity,
        EstimatorConfig::Ml {} => EstimatorKind::Ml,
        EstimatorConfig::Ht { threshold: t } => EstimatorKind::HardThreshold {
            threshold: threshold.or(t).or(ctx.file.threshold).unwrap_or_else(|| default_ht_threshold(c)),
        },
        EstimatorConfig::Oracle { support } => EstimatorKind::Oracle {
            support: support.unwrap_or_else(|| x.support().to_vec()),
        },
        EstimatorConfig::Family { a, c, d } => EstimatorKind::Family { a, c, d },
        EstimatorConfig::Counterexample { a: fa } => EstimatorKind::Counterexample {
            a: match a.or(fa) {
                Some(v) => v,
                None => counterexample_optimal_a(c, &ctx.quad()?)?,
            },
        },
        EstimatorConfig::TanhProduct {} => EstimatorKind::TanhProduct { reference: x.clone() },
    };
    Ok(Estimator::new(kind, *c)?)
}

fn risk(ctx: &Ctx, cmd: &RiskCmd) -> Result<SweepResult, Failure> {
    match cmd {
        RiskCmd::Mc { problem, x, trials, .. } => {
            let c = ctx.problem(problem, None)?;
            let x = ctx.param(x, &c)?;
            let est = estimator_from(ctx, cmd, &c, &x)?;
            let trials = trials.or(ctx.file.trials).unwrap_or(100_000);
            let rep = monte_carlo_risk(&est, &x, &c, trials, ctx.seed)?;
            let mut r = single_row("risk-mc", c, &x, ctx.quad()?);
            r.metadata.seed = Some(ctx.seed);
            r.push_column("mse", vec![rep.mse])?;
            r.push_column("variance", vec![rep.variance])?;
            r.push_column("std_error", vec![rep.std_error.unwrap_or(f64::NAN)])?;
            r.push_column("n_trials", vec![trials as f64])?;
            for (k, b) in rep.bias.iter().enumerate() {
                r.push_column(&format!("bias_{k}"), vec![*b])?;
            }
            for (k, m) in rep.per_component_mse.iter().enumerate() {
                r.push_column(&format!("mse_{k}"), vec![*m])?;
            }
            Ok(r)
        }
        RiskCmd::MlExact { problem, x } => {
            let c = ctx.problem(problem, None)?;
            let x = ctx.param(x, &c)?;
            let quad = ctx.quad()?;
            let v = ml_mse_exact(&x, &c, &quad)?;
            let mut r = single_row("risk-ml-exact", c, &x, quad);
            r.push_column("mse_ml", vec![v])?;
            Ok(r)
        }
        RiskCmd::HtExact { problem, x, threshold } => {
            let c = ctx.problem(problem, None)?;
            let x = ctx.param(x, &c)?;
            let t = threshold.or(ctx.file.threshold).unwrap_or_else(|| default_ht_threshold(&c));
            let v = ht_mse_exact(&x, t, &c)?;
            let mut r = single_row("risk-ht-exact", c, &x, ctx.quad()?);
            r.push_column("threshold", vec![t])?;
            r.push_column("mse_ht", vec![v])?;
            Ok(r)
        }
    }
}

fn figure(ctx: &Ctx, which: Figure, problem: &ProblemArgs, q: Option<usize>, nv: Option<usize>) -> Result<SweepResult, Failure> {
    let quad = ctx.quad()?;
    let f = &ctx.file;
    Ok(match which {
        Figure::Fig1 => {
            let d = Fig1Params::default();
            run_fig1(&Fig1Params {
                config: ctx.problem(problem, Some(d.config))?,
                snr_db: f.snr_db.clone().unwrap_or(d.snr_db),
                q: q.or(f.q).unwrap_or(d.q),
                alpha_sigmas: f.alpha_sigmas.unwrap_or(d.alpha_sigmas),
                quad,
            })?
        }
        Figure::Fig2 => {
            let d = Fig2Params::default();
            run_fig2(&Fig2Params {
                config: ctx.problem(problem, Some(d.config))?,
                snr_ratios: f.snr_ratios.clone().unwrap_or(d.snr_ratios),
                n_vectors: nv.or(f.n_vectors).unwrap_or(d.n_vectors),
                seed: ctx.seed,
                quad,
            })?
        }
        Figure::Fig3 => {
            let d = Fig3Params::default();
            run_fig3(&Fig3Params {
                config: ctx.problem(problem, Some(d.config))?,
                snr_db: f.snr_db.clone().unwrap_or(d.snr_db),
                threshold: f.threshold,
                seed: Some(ctx.seed),
                quad,
            })?
        }
        Figure::Fig4 => {
            let d = Fig4Params::default();
            run_fig4(&Fig4Params {
                config: ctx.problem(problem, Some(d.config))?,
                snr_db: f.snr_db.clone().unwrap_or(d.snr_db),
                quad,
            })?
        }
    })
}

fn emit(r: &SweepResult, out: &Option<PathBuf>, format: Format) -> Result<(), Failure> {
    let fmt = match format {
        Format::Csv => OutputFormat::Csv,
        Format::Json => OutputFormat::Json,
    };
    let res = match out {
        Some(p) => File::create(p).and_then(|f| {
            let mut w = BufWriter::new(f);
            r.write(&mut w, fmt)?;
            w.flush()
        }),
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            r.write(&mut lock, fmt).and_then(|_| lock.flush())
        }
    };
    res.map_err(|e| Failure::Usage(format!("cannot write output: {e}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(Failure::Usage)?,
        None => RunConfig {
            schema_version: config::SCHEMA_VERSION,
            ..Default::default()
        },
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            return usage("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot start thread pool: {e}")))?;
    }
    let ctx = Ctx {
        file,
        seed: cli.seed,
        threads: rayon::current_num_threads(),
    };
    let mut result = match &cli.command {
        Command::Selftest => {
            let checks = run_selftest();
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if failed > 0 {
                return Err(Failure::Model(Error::NumericalFailure(format!("{failed} self-checks failed"))));
            }
            return Ok(());
        }
        Command::Bounds(BoundsCmd::Eval { problem, x, q }) => bounds_eval(&ctx, problem, x, *q)?,
        Command::Bounds(BoundsCmd::Sweep {
            problem,
            direction,
            grid,
            q,
        }) => {
            let c = ctx.problem(problem, None)?;
            let dir = match direction.as_ref().or(ctx.file.direction.as_ref()) {
                Some(d) => d.clone(),
                None => return usage("direction missing: pass --direction or set \"direction\" in --config"),
            };
            let snr = ctx.grid(grid, -20.0, 20.0, 41);
            bounds_sweep(&dir, &c, &snr, q.or(ctx.file.q), &ctx.quad()?)?
        }
        Command::Risk(cmd) => risk(&ctx, cmd)?,
        Command::Figure {
            which,
            problem,
            q,
            n_vectors,
        } => figure(&ctx, *which, problem, *q, *n_vectors)?,
    };
    ctx.stamp(&mut result);
    emit(&result, &cli.out, cli.format)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Model(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
