use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use ndarray::Axis;

use tweedie_screen::config::{parse_columns, ScreenConfig};
use tweedie_screen::error::{Error, Result};
use tweedie_screen::io::{load_matrix, save_matrix, ExpressionMatrix};
use tweedie_screen::mlfit::fit_pooled;
use tweedie_screen::pipeline::run_screen;
use tweedie_screen::sim::{generate, SimSpec};
use tweedie_screen::tweedie::{NaturalParams, RegimeShift};

#[derive(Parser)]
#[command(name = "tweedie-screen", version, about = "Empirical Bayes screening of paired nonnegative matrices")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Screen the test columns against the control columns and vice versa.
    Screen(Box<ScreenArgs>),
    /// Write a synthetic matrix with known change labels.
    Simulate(SimulateArgs),
    /// Fit one Tweedie law to all values of the selected columns.
    Fit(FitArgs),
    /// Evaluate the Tweedie density (or zero mass) and cdf at one point.
    Dist(DistArgs),
}

#[derive(Args)]
struct ScreenArgs {
    /// Input matrix: comma or tab separated, header row and row-id column.
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "screen_out")]
    out: PathBuf,
    /// Config file of `key = value` lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// One-based control columns, e.g. `1-44`.
    #[arg(long)]
    control_cols: Option<String>,
    /// One-based test columns, e.g. `45-92`.
    #[arg(long)]
    test_cols: Option<String>,
    /// Fraction of rows to screen [default: 1].
    #[arg(long)]
    row_frac: Option<String>,
    /// Fraction of control columns to use [default: 1].
    #[arg(long)]
    ctrl_frac: Option<String>,
    /// Fraction of test columns to use [default: 1].
    #[arg(long)]
    test_frac: Option<String>,
    /// Seed for the subsample [default: 1].
    #[arg(long)]
    seed: Option<String>,
    /// Starting power and dispersion for the pooled fit [default: 1.5,2].
    #[arg(long)]
    inits: Option<String>,
    /// Power odds ratio, mean shift and dispersion ratio of the alternative [default: 2,2,1].
    #[arg(long)]
    shift: Option<String>,
    /// Survival thresholds [default: 20,40,60,80].
    #[arg(long)]
    targets: Option<String>,
    /// Null-proportion grid as start,stop,step [default: 0.001,0.999,0.001].
    #[arg(long)]
    pi0_grid: Option<String>,
    /// Gauss-Hermite points per dimension [default: 10].
    #[arg(long)]
    ngridpts: Option<String>,
    /// Quantile of weights below which rule points are dropped [default: 0.2].
    #[arg(long)]
    prune: Option<String>,
    /// Shape of the Beta(zeta, 1) prior on the null proportion [default: 5].
    #[arg(long)]
    zeta: Option<String>,
    /// Decimal digits in the output tables [default: 3].
    #[arg(long)]
    digits: Option<String>,
    /// Alternative covariance: empirical or control [default: empirical].
    #[arg(long)]
    alt_cov: Option<String>,
    /// Survival metrics: plugin or predictive [default: plugin].
    #[arg(long)]
    metrics_mode: Option<String>,
    /// Worker threads [default: TWEEDIE_SCREEN_THREADS, else cores - 2].
    #[arg(long)]
    threads: Option<String>,
}

impl ScreenArgs {
    fn config(&self) -> Result<ScreenConfig> {
        let mut cfg = match &self.config {
            Some(p) => ScreenConfig::from_file(p)?,
            None => ScreenConfig::default(),
        };
        let flags = [
            ("control_cols", &self.control_cols),
            ("test_cols", &self.test_cols),
            ("row_fraction", &self.row_frac),
            ("control_fraction", &self.ctrl_frac),
            ("test_fraction", &self.test_frac),
            ("seed", &self.seed),
            ("inits", &self.inits),
            ("shift", &self.shift),
            ("targets", &self.targets),
            ("pi0_grid", &self.pi0_grid),
            ("ngridpts", &self.ngridpts),
            ("prune", &self.prune),
            ("zeta", &self.zeta),
            ("digits", &self.digits),
            ("alt_cov", &self.alt_cov),
            ("metrics_mode", &self.metrics_mode),
            ("threads", &self.threads),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Output directory for `matrix.csv` and `labels.csv`.
    #[arg(long, default_value = "sim_out")]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    rows: usize,
    /// Control columns per row.
    #[arg(long, default_value_t = 10)]
    control: usize,
    /// Test columns per row.
    #[arg(long, default_value_t = 10)]
    test: usize,
    /// Probability a row is unchanged.
    #[arg(long, default_value_t = 0.8)]
    pi0: f64,
    /// Population centre as power,mean,dispersion.
    #[arg(long, default_value = "1.5,5,2")]
    base: String,
    /// Variance of each transformed parameter across rows.
    #[arg(long, default_value_t = 0.05)]
    spread: f64,
    /// Shift applied to changed rows.
    #[arg(long, default_value = "2,20,1")]
    shift: String,
    #[arg(long, default_value_t = 11)]
    seed: u64,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    /// One-based columns to pool [default: all].
    #[arg(long)]
    cols: Option<String>,
    /// Starting power and dispersion.
    #[arg(long, default_value = "1.5,2")]
    inits: String,
}

#[derive(Args)]
struct DistArgs {
    #[arg(long)]
    xi: f64,
    #[arg(long)]
    mu: f64,
    #[arg(long)]
    phi: f64,
    #[arg(long)]
    x: f64,
}

fn numbers<const N: usize>(what: &str, s: &str) -> Result<[f64; N]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("{what}: cannot parse `{s}`")))?;
    v.try_into()
        .map_err(|_| Error::Config(format!("{what}: expected {N} comma-separated numbers")))
}

fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return v.to_string();
    }
    let decimals = (5 - v.abs().log10().floor() as i32).max(0) as usize;
    if decimals > 12 {
        format!("{v:.5e}")
    } else {
        format!("{v:.decimals$}")
    }
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let [xi, mu, phi] = numbers::<3>("base", &args.base)?;
    let [psi, delta, rho] = numbers::<3>("shift", &args.shift)?;
    let spec = SimSpec {
        n_rows: args.rows,
        m_control: args.control,
        m_test: args.test,
        pi0_true: args.pi0,
        base: NaturalParams::new(xi, mu, phi)?,
        eta_spread: DMatrix::identity(3, 3) * args.spread,
        shift: RegimeShift::new(psi, delta, rho)?,
        seed: args.seed,
    };
    let data = generate(&spec)?;
    let row_ids: Vec<String> = (1..=args.rows).map(|i| format!("row{i}")).collect();
    let mut col_ids: Vec<String> = (1..=args.control).map(|j| format!("C{j}")).collect();
    col_ids.extend((1..=args.test).map(|j| format!("T{j}")));
    let values = ndarray::concatenate(Axis(1), &[data.control.view(), data.test.view()])
        .map_err(|e| Error::Domain(e.to_string()))?;
    let matrix = ExpressionMatrix::new(row_ids.clone(), col_ids, values)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    save_matrix(&matrix, &args.out.join("matrix.csv"))?;
    let labels = args.out.join("labels.csv");
    let mut text = String::from("gene,changed\n");
    for (id, l) in row_ids.iter().zip(&data.labels) {
        text.push_str(&format!("{id},{}\n", u8::from(*l)));
    }
    std::fs::write(&labels, text).map_err(|e| Error::Io { path: labels, source: e })?;
    println!(
        "wrote {} rows; screen with --control-cols 1-{} --test-cols {}-{}",
        args.rows,
        args.control,
        args.control + 1,
        args.control + args.test
    );
    Ok(())
}

fn fit(args: &FitArgs) -> Result<()> {
    let m = load_matrix(&args.input)?;
    let cols = match &args.cols {
        Some(c) => parse_columns(c)?,
        None => (0..m.dim().1).collect(),
    };
    if let Some(bad) = cols.iter().find(|&&c| c >= m.dim().1) {
        return Err(Error::Config(format!("column {} is out of range", bad + 1)));
    }
    let data: Vec<f64> = m.values.select(Axis(1), &cols).iter().copied().collect();
    let [xi0, phi0] = numbers::<2>("inits", &args.inits)?;
    let report = fit_pooled(&data, (xi0, phi0))?;
    println!("{}", serde_json::to_string_pretty(&report.summary())?);
    Ok(())
}

fn dist(args: &DistArgs) -> Result<()> {
    let p = NaturalParams::new(args.xi, args.mu, args.phi)?;
    if args.x < 0.0 {
        return Err(Error::Config("x must be nonnegative".into()));
    }
    println!("{}", sig6(p.density(args.x)?));
    println!("cdf {}", sig6(p.cdf(args.x)?));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Screen(args) => {
            let cfg = args.config()?;
            let run = run_screen(&args.input, &cfg, &args.out)?;
            println!(
                "screened {} rows; mean null proportion {:.3} (CT), {:.3} (TC); results in {}",
                run.row_ids.len(),
                run.both.forward.pi0.mean,
                run.both.reverse.pi0.mean,
                args.out.display()
            );
            Ok(())
        }
        Command::Simulate(args) => simulate(&args),
        Command::Fit(args) => fit(&args),
        Command::Dist(args) => dist(&args),
    }
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
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
