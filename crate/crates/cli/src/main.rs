//! `exchsum`: fit, test, and simulate models for sums of exchangeable
//! binary variables.
//!
//! Exit codes: 0 success, 1 I/O or parse failure, 2 invalid input or
//! infeasible parameters, 3 optimizer did not converge (the result document
//! is still emitted).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use exchsum::estimation::Record;
use exchsum::gof::{expected_counts, observed_counts, pearson_test};
use exchsum::simulation::{gen_sums_with, prepare_generator, replicate_rng, McResultTable};
use exchsum::{
    default_grid, fit_mle, fit_semiparametric, run_mc_study, summarize, BasisKind, DfPolicy,
    Error, Family, FamilySpec, FitOptions, FitResult, Generator, Scenario, SemiFamily, SplineBasis,
    SumDataset,
};

const SCHEMA_VERSION: &str = "1";

#[derive(Parser)]
#[command(name = "exchsum", version, about = "Models for sums of exchangeable binary variables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the pmf of a family as `s,mass` rows.
    Pmf(PmfArgs),
    /// Fit a family by maximum likelihood; prints a JSON result document.
    Fit(FitArgs),
    /// Simulate sums from an exchangeable law; prints a counts CSV.
    Simulate(SimArgs),
    /// Run the Monte Carlo estimator study; writes raw and summary CSVs.
    McStudy(McArgs),
    /// Fit spline-linked parameter curves over cluster size.
    Semiparam(SemiArgs),
}

#[derive(Args)]
struct FamilyParams {
    /// Success probability (binomial, p-power).
    #[arg(long)]
    p: Option<f64>,
    /// Complement probability (q-power).
    #[arg(long)]
    q: Option<f64>,
    /// Power exponent in [0, 1] (p-power, q-power).
    #[arg(long)]
    gamma: Option<f64>,
    /// Shape (lapgam); decay rate (fl: the folded-logistic exponent).
    #[arg(long)]
    alpha: Option<f64>,
    /// Rate (lapgam) or folded-logistic exponent (fl).
    #[arg(long)]
    beta: Option<f64>,
    /// Mean (beta-binomial); pair with --gamma.
    #[arg(long)]
    mu: Option<f64>,
}

#[derive(Args)]
struct PmfArgs {
    /// One of: binomial, fl, ppower, qpower, lapgam, bb.
    #[arg(long)]
    family: String,
    #[command(flatten)]
    params: FamilyParams,
    /// Cluster size.
    #[arg(short)]
    m: usize,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    family: String,
    /// Counts CSV with header `m,s,count` (or `m,s` with --tally).
    #[arg(long)]
    data: PathBuf,
    /// Treat the file as raw per-cluster rows `m,s` and tally them.
    #[arg(long)]
    tally: bool,
    /// Also run the Pearson chi-square test (single cluster size only).
    #[arg(long)]
    gof: bool,
    /// `cells-minus-one` (default) or `adjusted` (subtracts the number of
    /// fitted parameters as well).
    #[arg(long, default_value = "cells-minus-one")]
    df_policy: String,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    p: f64,
    #[arg(long)]
    rho: f64,
    #[arg(short)]
    m: usize,
    /// Number of clusters.
    #[arg(short)]
    n: usize,
    #[arg(long)]
    seed: u64,
    /// `gaussian-threshold` (default) or `beta-mixture`.
    #[arg(long, default_value = "gaussian-threshold")]
    generator: String,
}

#[derive(Args)]
struct McArgs {
    /// `default` (the 20-scenario m=10 grid) or a CSV file with header
    /// `p,rho,m,n`.
    #[arg(long, default_value = "default")]
    grid: String,
    /// Replicates per scenario.
    #[arg(long, default_value_t = 200)]
    b: usize,
    #[arg(long)]
    seed: u64,
    /// Worker threads; 0 uses all cores. Output is identical either way.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Clusters per replicate for the default grid.
    #[arg(short, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value = "gaussian-threshold")]
    generator: String,
    /// Output directory for raw.csv (scenario_id,family,replicate,p_hat,
    /// rho_hat,converged) and summary.csv (scenario_id,family,p_true,
    /// rho_true,n_total,n_converged,p_mean,p_median,p_sd,p_q05,p_q25,
    /// p_q75,p_q95,p_bias and the same eight for rho).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SemiArgs {
    /// `bb` or `lapgam`.
    #[arg(long)]
    family: String,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    tally: bool,
    /// Basis: `intercept`, `quadratic`, or `cubic` (default).
    #[arg(long, default_value = "cubic")]
    basis: String,
    /// Comma-separated interior knots for the cubic basis.
    #[arg(long)]
    knots: Option<String>,
    /// Output directory for result.json and curves.csv
    /// (m,param1,param2,p_hat,rho_hat,se_p,se_rho).
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Pmf(args) => cmd_pmf(&args),
        Command::Fit(args) => cmd_fit(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::McStudy(args) => cmd_mc_study(&args),
        Command::Semiparam(args) => cmd_semiparam(&args),
    };
    match code {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn io(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
    fn invalid(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::invalid(e.to_string())
    }
}

fn parse_family_spec(family: &str, params: &FamilyParams) -> Result<FamilySpec, Failure> {
    let family = Family::parse(family)?;
    let need = |value: Option<f64>, flag: &str| {
        value.ok_or_else(|| {
            Failure::invalid(format!("family '{}' requires --{flag}", family.name()))
        })
    };
    Ok(match family {
        Family::Binomial => FamilySpec::Binomial { p: need(params.p, "p")? },
        Family::FoldedLogistic => FamilySpec::FoldedLogistic { beta: need(params.beta, "beta")? },
        Family::PPower => {
            FamilySpec::PPower { p: need(params.p, "p")?, gamma: need(params.gamma, "gamma")? }
        }
        Family::QPower => {
            FamilySpec::QPower { q: need(params.q, "q")?, gamma: need(params.gamma, "gamma")? }
        }
        Family::LapGam => FamilySpec::LapGam {
            alpha: need(params.alpha, "alpha")?,
            beta: need(params.beta, "beta")?,
        },
        Family::BetaBinomialPrentice => FamilySpec::BetaBinomialPrentice {
            mu: need(params.mu, "mu")?,
            gamma: need(params.gamma, "gamma")?,
        },
    })
}

fn cmd_pmf(args: &PmfArgs) -> Result<u8, Failure> {
    let spec = parse_family_spec(&args.family, &args.params)?;
    let pmf = exchsum::family_pmf(&spec, args.m)?;
    println!("s,mass");
    for (s, mass) in pmf.mass().iter().enumerate() {
        println!("{s},{mass}");
    }
    Ok(0)
}

/// Read a counts file. `m,s,count` rows; with `tally` the file is raw
/// per-cluster `m,s` rows instead. Zero-count rows are skipped.
fn read_dataset(path: &Path, tally: bool) -> Result<(SumDataset, String), Failure> {
    let bytes =
        fs::read(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    let digest = hex_digest(&bytes);
    let text = String::from_utf8(bytes)
        .map_err(|_| Failure::io(format!("{}: not valid UTF-8", path.display())))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Failure::io(format!("{}: empty file", path.display())))?;
    let expected_header = if tally { "m,s" } else { "m,s,count" };
    if header.trim() != expected_header {
        return Err(Failure::io(format!(
            "{}: line 1: expected header '{expected_header}', got '{header}'",
            path.display()
        )));
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let want = if tally { 2 } else { 3 };
        if fields.len() != want {
            return Err(Failure::io(format!(
                "{}: line {line_no}: expected {want} fields, got {}",
                path.display(),
                fields.len()
            )));
        }
        let parse_usize = |field: &str, name: &str| {
            field.trim().parse::<u64>().map_err(|_| {
                Failure::io(format!(
                    "{}: line {line_no}: invalid {name} '{field}'",
                    path.display()
                ))
            })
        };
        let m = parse_usize(fields[0], "m")? as usize;
        let s = parse_usize(fields[1], "s")? as usize;
        let count = if tally { 1 } else { parse_usize(fields[2], "count")? };
        if count == 0 {
            continue;
        }
        records.push(Record { m, s, count });
    }
    let data = SumDataset::new(records).map_err(|e| Failure::invalid(e.to_string()))?;
    Ok((data, digest))
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn opt_num(v: Option<f64>) -> Value {
    match v {
        Some(x) if x.is_finite() => json!(x),
        _ => Value::Null,
    }
}

fn fit_document(
    command: &str,
    digest: &str,
    family: Family,
    fit: &FitResult,
    gof: Value,
) -> Value {
    let params: serde_json::Map<String, Value> =
        fit.spec.params().iter().map(|&(name, value)| (name.to_string(), json!(value))).collect();
    json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "input_digest": digest,
        "family": family.name(),
        "params": params,
        "p_hat": opt_num(Some(fit.p_hat)),
        "rho_hat": opt_num(Some(fit.rho_hat)),
        "se_p": opt_num(fit.se_p),
        "se_rho": opt_num(fit.se_rho),
        "loglik": json!(fit.loglik),
        "gof": gof,
        "convergence": {
            "converged": fit.converged,
            "iterations": fit.iterations,
            "grad_norm": opt_num(Some(fit.grad_norm)),
        },
    })
}

fn cmd_fit(args: &FitArgs) -> Result<u8, Failure> {
    let family = Family::parse(&args.family)?;
    let (data, digest) = read_dataset(&args.data, args.tally)?;
    let fit = fit_mle(family, &data, &FitOptions::default())?;

    let gof = if args.gof {
        let sizes = data.cluster_sizes();
        if sizes.len() != 1 {
            return Err(Failure::invalid(
                "--gof needs a single cluster size; use semiparam for varying m",
            ));
        }
        let m = sizes[0];
        let policy = match args.df_policy.as_str() {
            "cells-minus-one" => DfPolicy::CellsMinusOne,
            "adjusted" => DfPolicy::CellsMinusOneMinusParams(family.dim()),
            other => {
                return Err(Failure::invalid(format!("unknown df policy '{other}'")));
            }
        };
        let expected = expected_counts(&fit.spec, &data, m)?;
        let observed = observed_counts(&data, m);
        let report = pearson_test(&observed, &expected, policy, family.name())?;
        json!({
            "statistic": report.statistic,
            "df": report.df,
            "p_value": report.p_value,
            "expected": report.expected,
        })
    } else {
        Value::Null
    };

    let doc = fit_document("fit", &digest, family, &fit, gof);
    println!("{}", serde_json::to_string_pretty(&doc).expect("document serializes"));
    Ok(if fit.converged { 0 } else { 3 })
}

fn cmd_simulate(args: &SimArgs) -> Result<u8, Failure> {
    let generator = Generator::parse(&args.generator)?;
    let scenario = Scenario::new(args.p, args.rho, args.m, args.n, 1, args.seed, generator);
    let state = prepare_generator(&scenario)?;
    let mut rng = replicate_rng(args.seed, &scenario.id, 0);
    let sums = gen_sums_with(&scenario, &state, &mut rng);
    let mut counts = vec![0u64; args.m + 1];
    for s in sums {
        counts[s] += 1;
    }
    println!("m,s,count");
    for (s, &count) in counts.iter().enumerate() {
        if count > 0 {
            println!("{},{s},{count}", args.m);
        }
    }
    Ok(0)
}

fn parse_grid_file(path: &Path, b: usize, seed: u64, generator: Generator) -> Result<Vec<Scenario>, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "p,rho,m,n" => {}
        _ => {
            return Err(Failure::io(format!(
                "{}: grid file needs header 'p,rho,m,n'",
                path.display()
            )))
        }
    }
    let mut scenarios = Vec::new();
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Failure::io(format!("{}: line {}: expected 4 fields", path.display(), idx + 1)));
        }
        let num = |i: usize| {
            fields[i].trim().parse::<f64>().map_err(|_| {
                Failure::io(format!("{}: line {}: invalid number '{}'", path.display(), idx + 1, fields[i]))
            })
        };
        let p = num(0)?;
        let rho = num(1)?;
        let m = num(2)? as usize;
        let n = num(3)? as usize;
        scenarios.push(Scenario::new(p, rho, m, n, b, seed, generator));
    }
    if scenarios.is_empty() {
        return Err(Failure::invalid(format!("{}: grid file has no scenarios", path.display())));
    }
    Ok(scenarios)
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn raw_csv(table: &McResultTable) -> String {
    let mut out = String::from("scenario_id,family,replicate,p_hat,rho_hat,converged\n");
    for row in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.scenario_id,
            row.family.name(),
            row.replicate,
            row.p_hat,
            row.rho_hat,
            row.converged
        ));
    }
    out
}

fn summary_csv(rows: &[exchsum::SummaryRow], scenarios: &[Scenario]) -> String {
    let mut out = String::from(
        "scenario_id,family,p_true,rho_true,n_total,n_converged,\
         p_mean,p_median,p_sd,p_q05,p_q25,p_q75,p_q95,p_bias,\
         rho_mean,rho_median,rho_sd,rho_q05,rho_q25,rho_q75,rho_q95,rho_bias\n",
    );
    for row in rows {
        let scenario = scenarios
            .iter()
            .find(|s| s.id == row.scenario_id)
            .expect("summary rows come from the scenario list");
        let stat = |s: &exchsum::simulation::StatSummary| {
            format!(
                "{},{},{},{},{},{},{},{}",
                s.mean, s.median, s.sd, s.q05, s.q25, s.q75, s.q95, s.bias
            )
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.scenario_id,
            row.family.name(),
            scenario.p,
            scenario.rho,
            row.n_total,
            row.n_converged,
            stat(&row.p),
            stat(&row.rho)
        ));
    }
    out
}

fn cmd_mc_study(args: &McArgs) -> Result<u8, Failure> {
    let generator = Generator::parse(&args.generator)?;
    let scenarios = if args.grid == "default" {
        default_grid(args.n, args.b, args.seed, generator)
    } else {
        parse_grid_file(Path::new(&args.grid), args.b, args.seed, generator)?
    };
    let table = run_mc_study(&scenarios, &Family::MC_COMPARISON, args.workers)?;
    let summary = summarize(&table, &scenarios);
    fs::create_dir_all(&args.out)
        .map_err(|e| Failure::io(format!("{}: {e}", args.out.display())))?;
    write_file(&args.out.join("raw.csv"), &raw_csv(&table))?;
    write_file(&args.out.join("summary.csv"), &summary_csv(&summary, &scenarios))?;
    Ok(0)
}

fn cmd_semiparam(args: &SemiArgs) -> Result<u8, Failure> {
    let family = SemiFamily::parse(&args.family)?;
    let (data, digest) = read_dataset(&args.data, args.tally)?;
    let kind = match args.basis.as_str() {
        "intercept" => BasisKind::Intercept,
        "quadratic" => BasisKind::Quadratic,
        "cubic" => {
            let interior_knots = match &args.knots {
                None => Vec::new(),
                Some(text) => text
                    .split(',')
                    .map(|t| {
                        t.trim().parse::<f64>().map_err(|_| {
                            Failure::invalid(format!("invalid knot '{t}' in --knots"))
                        })
                    })
                    .collect::<Result<Vec<f64>, Failure>>()?,
            };
            BasisKind::Cubic { interior_knots }
        }
        other => return Err(Failure::invalid(format!("unknown basis '{other}'"))),
    };
    let basis = SplineBasis::new(kind, &data.cluster_sizes())?;
    let fit = fit_semiparametric(family, &data, &basis, &FitOptions::default())?;

    let (name1, name2) = match family {
        SemiFamily::BetaBinomialPrentice => ("mu", "gamma"),
        SemiFamily::LapGam => ("alpha", "beta"),
    };
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "semiparam",
        "input_digest": digest,
        "family": family.name(),
        "params": { "eta1": fit.eta1, "eta2": fit.eta2 },
        "p_hat": Value::Null,
        "rho_hat": Value::Null,
        "se_p": Value::Null,
        "se_rho": Value::Null,
        "loglik": json!(fit.loglik),
        "gof": { "statistic": fit.deviance, "df": Value::Null, "p_value": Value::Null,
                 "expected": Value::Null },
        "convergence": {
            "converged": fit.converged,
            "iterations": fit.iterations,
            "grad_norm": opt_num(Some(fit.grad_norm)),
        },
    });

    let mut curves =
        format!("m,{name1},{name2},p_hat,rho_hat,se_p,se_rho\n");
    for pm in &fit.per_m {
        curves.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            pm.m,
            pm.params.0,
            pm.params.1,
            pm.p_hat,
            pm.rho_hat,
            pm.se_p.map_or("".into(), |v| v.to_string()),
            pm.se_rho.map_or("".into(), |v| v.to_string()),
        ));
    }

    fs::create_dir_all(&args.out)
        .map_err(|e| Failure::io(format!("{}: {e}", args.out.display())))?;
    let pretty = serde_json::to_string_pretty(&doc).expect("document serializes");
    write_file(&args.out.join("result.json"), &pretty)?;
    write_file(&args.out.join("curves.csv"), &curves)?;
    println!("{pretty}");
    Ok(if fit.converged { 0 } else { 3 })
}
