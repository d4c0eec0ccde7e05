//! `wctsv` command-line front end.
//!
//! Exit codes: 0 success, 1 domain error (empty set, infeasible budget,
//! singular covariance, failed verification), 2 usage or input error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use wctsv::backtest::{
    run_backtest, solve_model, summarize, write_summary_json, write_wealth_csv, BacktestConfig, BacktestError, Model,
};
use wctsv::frontier::{frontier_params, ModelError};
use wctsv::market_data::{compute_losses, load_price_panel, window_moments, LossPanel, MarketDataError, Ridge};
use wctsv::verify::{run_verify, GridSpec, VerifyConfig, DEFAULT_GRID};
use wctsv::worst_case::{
    wc_expected_regret, wc_target_semivariance_constrained, DistributionFamily, MomentProfile, RegretBudget,
    WorstCaseError,
};

#[derive(Parser)]
#[command(name = "wctsv", version, about = "Worst-case downside risk under moment uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Arbitrary,
    Symmetric,
    Nonnegative,
}

impl From<Family> for DistributionFamily {
    fn from(f: Family) -> Self {
        match f {
            Family::Arbitrary => DistributionFamily::Arbitrary,
            Family::Symmetric => DistributionFamily::Symmetric,
            Family::Nonnegative => DistributionFamily::NonNegative,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Measure {
    /// Expected regret `E[(X - t)_+]`.
    Regret,
    /// Target semi-variance `E[(X - t)_+^2]`.
    Tsv,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a worst-case partial moment.
    Wc {
        #[arg(long, allow_hyphen_values = true)]
        mu: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long, allow_hyphen_values = true)]
        t: f64,
        /// Cap on the expected excess profit `E[(X - t)_-]`.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, value_enum, default_value = "arbitrary")]
        family: Family,
        #[arg(long, value_enum, default_value = "tsv")]
        measure: Measure,
        #[arg(long)]
        json: bool,
    },
    /// Compare closed forms with the brute-force oracle on a grid.
    Verify {
        /// `key=a:b:n` axes for mu, sigma, t (or tz in sigmas) and optionally
        /// lambda (or lz in sigmas). Default: "mu=-2:2:5; sigma=0.2:3:5; tz=-2:2:9".
        #[arg(long)]
        grid_spec: Option<String>,
        #[arg(long, value_enum, default_value = "symmetric")]
        family: Family,
        /// Oracle evaluations per tuple (at least 10000).
        #[arg(long, default_value_t = 100_000)]
        budget: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "report.csv")]
        out: PathBuf,
        #[arg(long, hide = true)]
        corrupt_closed_form: bool,
    },
    /// Frontier parameters and curve for the latest estimation window.
    Frontier {
        #[arg(long)]
        prices: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 21)]
        points: usize,
    },
    /// Optimal weights for one model on the latest estimation window.
    Optimize {
        #[arg(long)]
        prices: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rolling-window backtest; writes wealth.csv and summary.json.
    Backtest {
        #[arg(long)]
        prices: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

enum Failure {
    Domain(String),
    Usage(String),
}

impl From<WorstCaseError> for Failure {
    fn from(e: WorstCaseError) -> Self {
        match e {
            WorstCaseError::EmptyUncertaintySet => Failure::Domain(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<MarketDataError> for Failure {
    fn from(e: MarketDataError) -> Self {
        match e {
            MarketDataError::Model(ModelError::NotPositiveDefinite) => {
                Failure::Domain(format!("{e}; increase 'ridge' in the config or use a longer window"))
            }
            MarketDataError::Model(_) => Failure::Domain(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<BacktestError> for Failure {
    fn from(e: BacktestError) -> Self {
        match e {
            BacktestError::InsufficientHistory { .. } => Failure::Domain(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

fn env_seed(flag: Option<u64>) -> Result<Option<u64>, Failure> {
    match std::env::var("WCTSV_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("WCTSV_SEED='{v}' is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<BacktestConfig, Failure> {
    let mut cfg = match path {
        Some(p) => BacktestConfig::load(p)?,
        None => BacktestConfig::default(),
    };
    if let Some(s) = env_seed(seed)? {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_losses(path: &Path) -> Result<LossPanel, Failure> {
    Ok(compute_losses(&load_price_panel(path)?)?)
}

fn cmd_wc(
    mu: f64,
    sigma: f64,
    t: f64,
    lambda: Option<f64>,
    family: Family,
    measure: Measure,
    as_json: bool,
) -> Result<(), Failure> {
    let p = MomentProfile::new(mu, sigma)?;
    let fam = family.into();
    let budget = match lambda {
        Some(l) => RegretBudget::limit(l)?,
        None => RegretBudget::Unconstrained,
    };
    let v = match (measure, budget) {
        (Measure::Regret, RegretBudget::Limit(_)) => {
            return Err(Failure::Usage("--lambda applies to --measure tsv only".into()))
        }
        (Measure::Regret, _) => wc_expected_regret(&p, t, fam)?,
        (Measure::Tsv, b) => wc_target_semivariance_constrained(&p, t, b, fam)?,
    };
    if as_json {
        let out = json!({
            "value": v.value,
            "regime": v.regime,
            "inputs": {
                "mu": mu,
                "sigma": sigma,
                "t": t,
                "lambda": lambda,
                "family": fam.name(),
                "measure": match measure { Measure::Regret => "regret", Measure::Tsv => "tsv" },
            },
        });
        println!("{out}");
    } else {
        println!("{}", v.value);
        println!("regime: {}", v.regime);
    }
    Ok(())
}

fn cmd_verify(
    grid_spec: Option<String>,
    family: Family,
    budget: u64,
    seed: u64,
    out: &Path,
    corrupt: bool,
) -> Result<(), Failure> {
    if budget < 10_000 {
        return Err(Failure::Usage(format!("--budget must be at least 10000, got {budget}")));
    }
    let spec = grid_spec.unwrap_or_else(|| DEFAULT_GRID.to_string());
    let grid: GridSpec = spec.parse().map_err(|e: wctsv::verify::VerifyError| Failure::Usage(e.to_string()))?;
    let cfg = VerifyConfig {
        family: family.into(),
        budget,
        seed: env_seed(Some(seed))?.unwrap_or(seed),
        k: None,
        closed_form_factor: if corrupt { 0.5 } else { 1.0 },
    };
    let report = run_verify(&grid, &cfg).map_err(|e| Failure::Usage(e.to_string()))?;
    report.write_csv(out).map_err(|e| Failure::Usage(e.to_string()))?;
    let max_rel =
        report.rows.iter().map(|r| (r.oracle_value - r.closed_form) / r.scale()).fold(f64::NEG_INFINITY, f64::max);
    println!(
        "tuples: {} (skipped {} empty), soundness violations: {}, outside slack: {}, max (oracle - closed)/scale: {:e}",
        report.rows.len(),
        report.skipped,
        report.violations(),
        report.loose(),
        max_rel
    );
    println!("report: {}", out.display());
    if report.violations() > 0 {
        return Err(Failure::Domain(format!(
            "{} tuples where the oracle or a witness beats the closed form",
            report.violations()
        )));
    }
    if report.loose() > 0 {
        eprintln!("warning: {} tuples where the oracle stayed outside the slack bound", report.loose());
    }
    Ok(())
}

fn latest_model(l: &LossPanel, cfg: &BacktestConfig) -> Result<wctsv::MarketModel, Failure> {
    if l.len() < cfg.window {
        return Err(Failure::Domain(format!(
            "window {} needs at least {} loss rows, file has {}",
            cfg.window,
            cfg.window,
            l.len()
        )));
    }
    Ok(window_moments(l, cfg.window, l.len() - 1, Ridge::TraceScaled(cfg.ridge))?)
}

fn cmd_frontier(prices: &Path, config: Option<&Path>, points: usize) -> Result<(), Failure> {
    let cfg = load_config(config, None)?;
    let l = load_losses(prices)?;
    let m = latest_model(&l, &cfg)?;
    let fp = frontier_params(&m).map_err(|e| Failure::Domain(e.to_string()))?;
    let lo = m.mu().min().min(fp.vertex());
    let hi = m.mu().max().max(fp.vertex());
    let curve: Vec<_> = (0..points)
        .map(|i| {
            let xi = if points == 1 { fp.vertex() } else { lo + (hi - lo) * i as f64 / (points - 1) as f64 };
            json!({ "xi": xi, "stdev": fp.variance_at(xi).sqrt() })
        })
        .collect();
    let out = json!({
        "date": l.dates.last().map(|d| d.to_string()),
        "assets": m.assets(),
        "u": fp.u,
        "v0": fp.v0,
        "v1": fp.v1,
        "v2": fp.v2,
        "vertex": fp.vertex(),
        "curve": curve,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("json values serialize"));
    Ok(())
}

fn cmd_optimize(prices: &Path, config: Option<&Path>, model: &str, seed: Option<u64>) -> Result<(), Failure> {
    let model: Model = model.parse().map_err(Failure::Usage)?;
    let cfg = load_config(config, seed)?;
    let l = load_losses(prices)?;
    let m = latest_model(&l, &cfg)?;
    let p = solve_model(model, &m, &cfg, l.len()).map_err(Failure::Domain)?;
    let out = json!({
        "model": model.name(),
        "date": l.dates.last().map(|d| d.to_string()),
        "assets": m.assets(),
        "weights": p.weights,
        "expected_loss": p.expected_loss,
        "stdev": p.stdev,
        "objective": p.objective,
        "regime": p.regime,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("json values serialize"));
    Ok(())
}

fn cmd_backtest(prices: &Path, config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let cfg = load_config(config, seed)?;
    let l = load_losses(prices)?;
    let result = run_backtest(&l, &cfg)?;
    std::fs::create_dir_all(out).map_err(|e| Failure::Usage(format!("{}: {e}", out.display())))?;
    let wealth = out.join("wealth.csv");
    let summary = out.join("summary.json");
    write_wealth_csv(&result, &wealth)?;
    let s = summarize(&result);
    write_summary_json(&s, &summary)?;
    for m in &s {
        println!(
            "{:<10} final {:.4}  ann.return {:+.4}  ann.vol {:.4}  max.dd {:.4}",
            m.model.name(),
            m.final_wealth,
            m.ann_return,
            m.ann_vol,
            m.max_drawdown
        );
        if !m.vol_defined {
            eprintln!("note: {} has a single return; ann_vol reported as 0", m.model);
        }
    }
    println!("{} out-of-sample days; wrote {} and {}", result.dates.len(), wealth.display(), summary.display());
    if !result.failures.is_empty() {
        let lines: Vec<String> = result.failures.iter().map(|f| f.to_string()).collect();
        return Err(Failure::Domain(lines.join("\n")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.command {
        Command::Wc { mu, sigma, t, lambda, family, measure, json } => {
            cmd_wc(mu, sigma, t, lambda, family, measure, json)
        }
        Command::Verify { grid_spec, family, budget, seed, out, corrupt_closed_form } => {
            cmd_verify(grid_spec, family, budget, seed, &out, corrupt_closed_form)
        }
        Command::Frontier { prices, config, points } => cmd_frontier(&prices, config.as_deref(), points),
        Command::Optimize { prices, config, model, seed } => cmd_optimize(&prices, config.as_deref(), &model, seed),
        Command::Backtest { prices, config, out, seed } => cmd_backtest(&prices, config.as_deref(), &out, seed),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
