//! Generation of exchangeable correlated binary sums and the Monte Carlo
//! study comparing estimators across a grid of (p, ρ) scenarios.
//!
//! Two mechanisms are shipped: a beta-mixture that is exactly exchangeable
//! with the requested moments, and a one-factor Gaussian threshold whose
//! latent correlation is solved numerically. Every replicate owns a
//! private RNG stream derived from (seed, scenario id, replicate), so
//! results do not depend on the worker count.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Beta, Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimation::{fit_mle, Family, FitOptions, SumDataset};
use crate::numerics::integrate;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    BetaMixture,
    GaussianThreshold,
}

impl Generator {
    pub fn name(&self) -> &'static str {
        match self {
            Generator::BetaMixture => "beta-mixture",
            Generator::GaussianThreshold => "gaussian-threshold",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "beta-mixture" | "beta" => Ok(Generator::BetaMixture),
            "gaussian-threshold" | "gaussian" | "threshold" => Ok(Generator::GaussianThreshold),
            other => Err(Error::InvalidData(format!("unknown generator '{other}'"))),
        }
    }
}

/// One Monte Carlo cell: true parameters, sample sizes, seed, generator.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub p: f64,
    pub rho: f64,
    pub m: usize,
    pub n: usize,
    pub b: usize,
    pub seed: u64,
    pub generator: Generator,
}

impl Scenario {
    pub fn new(p: f64, rho: f64, m: usize, n: usize, b: usize, seed: u64, generator: Generator) -> Self {
        Self { id: format!("p{p}_rho{rho}_m{m}"), p, rho, m, n, b, seed, generator }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.p && self.p < 1.0) {
            return Err(Error::Infeasible(format!("p must be in (0,1), got {}", self.p)));
        }
        match self.generator {
            Generator::BetaMixture => {
                if !(self.rho > 0.0 && self.rho < 1.0) {
                    return Err(Error::Infeasible(format!(
                        "beta-mixture needs rho in (0,1), got {}",
                        self.rho
                    )));
                }
            }
            Generator::GaussianThreshold => {
                if !(0.0..1.0).contains(&self.rho) {
                    return Err(Error::Infeasible(format!(
                        "gaussian-threshold needs rho in [0,1), got {}",
                        self.rho
                    )));
                }
            }
        }
        if self.m == 0 || self.n == 0 {
            return Err(Error::Infeasible("m and n must be positive".into()));
        }
        Ok(())
    }
}

/// Precomputed generator state shared by all replicates of a scenario.
#[derive(Debug, Clone)]
pub enum GenState {
    BetaMixture { a: f64, b: f64 },
    GaussianThreshold { latent_r: f64, z_star: f64 },
}

/// Solve the latent equicorrelation so thresholded binaries have
/// pairwise correlation `rho` at marginal probability `p`.
pub fn solve_latent_correlation(p: f64, rho: f64) -> Result<f64> {
    if rho == 0.0 {
        return Ok(0.0);
    }
    if !(0.0 < rho && rho < 1.0) {
        return Err(Error::Infeasible(format!("binary correlation {rho} outside [0,1)")));
    }
    let implied = |r: f64| -> Result<f64> {
        let p11 = orthant_probability(p, r)?;
        Ok((p11 - p * p) / (p * (1.0 - p)))
    };
    let (mut lo, mut hi) = (0.0f64, 1.0 - 1e-9);
    let mut r = 0.5 * (lo + hi);
    for _ in 0..80 {
        r = 0.5 * (lo + hi);
        let v = implied(r)?;
        if (v - rho).abs() <= 1e-8 {
            return Ok(r);
        }
        if v < rho {
            lo = r;
        } else {
            hi = r;
        }
    }
    let v = implied(r)?;
    if (v - rho).abs() <= 1e-6 {
        Ok(r)
    } else {
        Err(Error::Infeasible(format!(
            "latent correlation solve stalled at r={r} (implied {v}, wanted {rho})"
        )))
    }
}

/// P(Z₁ > z*, Z₂ > z*) for standard bivariate normal with correlation `r`,
/// via the one-factor representation integrated over the shared factor.
fn orthant_probability(p: f64, r: f64) -> Result<f64> {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let z_star = normal.inverse_cdf(1.0 - p);
    if r <= 0.0 {
        return Ok(p * p);
    }
    let sr = r.sqrt();
    let sc = (1.0 - r).sqrt();
    let integrand = move |w: f64| {
        let tail = normal.sf((z_star - sr * w) / sc);
        let phi = (-0.5 * w * w).exp() / (2.0 * std::f64::consts::PI).sqrt();
        phi * tail * tail
    };
    // The normal cdf itself is only accurate to ~1e-15 with small branch
    // discontinuities, so asking for much below 1e-10 stalls the recursion.
    integrate(integrand, -8.5, 8.5, 1e-10)
}

/// Prepare reusable generator state for a scenario.
pub fn prepare_generator(scenario: &Scenario) -> Result<GenState> {
    scenario.validate()?;
    match scenario.generator {
        Generator::BetaMixture => {
            let a = scenario.p * (1.0 - scenario.rho) / scenario.rho;
            let b = (1.0 - scenario.p) * (1.0 - scenario.rho) / scenario.rho;
            Ok(GenState::BetaMixture { a, b })
        }
        Generator::GaussianThreshold => {
            let latent_r = solve_latent_correlation(scenario.p, scenario.rho)?;
            let normal = Normal::new(0.0, 1.0).expect("standard normal");
            Ok(GenState::GaussianThreshold { latent_r, z_star: normal.inverse_cdf(1.0 - scenario.p) })
        }
    }
}

/// Draw the `n` cluster sums of one replicate.
pub fn gen_sums_with<R: Rng>(scenario: &Scenario, state: &GenState, rng: &mut R) -> Vec<usize> {
    let mut sums = Vec::with_capacity(scenario.n);
    match *state {
        GenState::BetaMixture { a, b } => {
            let beta = Beta::new(a, b).expect("valid beta parameters");
            for _ in 0..scenario.n {
                let p: f64 = beta.sample(rng);
                let p = p.clamp(0.0, 1.0);
                let bin = Binomial::new(scenario.m as u64, p).expect("valid binomial");
                sums.push(bin.sample(rng) as usize);
            }
        }
        GenState::GaussianThreshold { latent_r, z_star } => {
            let sr = latent_r.sqrt();
            let sc = (1.0 - latent_r).sqrt();
            for _ in 0..scenario.n {
                let w: f64 = rng.sample(StandardNormal);
                let mut s = 0;
                for _ in 0..scenario.m {
                    let e: f64 = rng.sample(StandardNormal);
                    if sr * w + sc * e > z_star {
                        s += 1;
                    }
                }
                sums.push(s);
            }
        }
    }
    sums
}

/// Draw one replicate's sums, preparing generator state on the fly.
pub fn gen_sums<R: Rng>(scenario: &Scenario, rng: &mut R) -> Result<Vec<usize>> {
    let state = prepare_generator(scenario)?;
    Ok(gen_sums_with(scenario, &state, rng))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// RNG for replicate `r` of a scenario: an independent stream keyed on
/// (seed, scenario id, r).
pub fn replicate_rng(seed: u64, scenario_id: &str, replicate: usize) -> ChaCha12Rng {
    let mixed = splitmix64(
        splitmix64(seed ^ fnv1a(scenario_id.as_bytes())).wrapping_add(replicate as u64),
    );
    ChaCha12Rng::seed_from_u64(mixed)
}

/// One row per (scenario, family, replicate).
#[derive(Debug, Clone, PartialEq)]
pub struct McRow {
    pub scenario_id: String,
    pub family: Family,
    pub replicate: usize,
    pub p_hat: f64,
    pub rho_hat: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct McResultTable {
    pub rows: Vec<McRow>,
}

/// Run the full study: for every scenario and replicate, simulate one
/// sample and fit every family. Replicates are embarrassingly parallel;
/// per-replicate fit failures are recorded, never fatal.
pub fn run_mc_study(
    scenarios: &[Scenario],
    families: &[Family],
    workers: usize,
) -> Result<McResultTable> {
    for s in scenarios {
        s.validate()?;
    }
    let run = || -> Result<Vec<Vec<McRow>>> {
        scenarios
            .iter()
            .map(|scenario| {
                let state = prepare_generator(scenario)?;
                let rows: Vec<Vec<McRow>> = (0..scenario.b)
                    .into_par_iter()
                    .map(|replicate| replicate_rows(scenario, &state, families, replicate))
                    .collect();
                Ok(rows.into_iter().flatten().collect())
            })
            .collect()
    };
    let nested = if workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidData(format!("thread pool: {e}")))?;
        pool.install(run)?
    } else {
        run()?
    };
    Ok(McResultTable { rows: nested.into_iter().flatten().collect() })
}

fn replicate_rows(
    scenario: &Scenario,
    state: &GenState,
    families: &[Family],
    replicate: usize,
) -> Vec<McRow> {
    let mut rng = replicate_rng(scenario.seed, &scenario.id, replicate);
    let sums = gen_sums_with(scenario, state, &mut rng);
    let data = SumDataset::from_sums(scenario.m, &sums).expect("sums are within range");
    families
        .iter()
        .map(|&family| match fit_mle(family, &data, &FitOptions::default()) {
            Ok(fit) => McRow {
                scenario_id: scenario.id.clone(),
                family,
                replicate,
                p_hat: fit.p_hat,
                rho_hat: fit.rho_hat,
                converged: fit.converged && !fit.boundary,
            },
            Err(_) => McRow {
                scenario_id: scenario.id.clone(),
                family,
                replicate,
                p_hat: f64::NAN,
                rho_hat: f64::NAN,
                converged: false,
            },
        })
        .collect()
}

/// Summary statistics for one estimator in one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct StatSummary {
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub q05: f64,
    pub q25: f64,
    pub q75: f64,
    pub q95: f64,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario_id: String,
    pub family: Family,
    pub n_total: usize,
    pub n_converged: usize,
    pub p: StatSummary,
    pub rho: StatSummary,
}

/// Linear-interpolation quantile of a sorted sample (type 7).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() as f64 - 1.0) * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-(scenario, family) summaries over converged replicates.
pub fn summarize(table: &McResultTable, scenarios: &[Scenario]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for scenario in scenarios {
        let mut families: Vec<Family> = Vec::new();
        for row in table.rows.iter().filter(|r| r.scenario_id == scenario.id) {
            if !families.contains(&row.family) {
                families.push(row.family);
            }
        }
        for family in families {
            let rows: Vec<&McRow> = table
                .rows
                .iter()
                .filter(|r| r.scenario_id == scenario.id && r.family == family)
                .collect();
            let converged: Vec<&&McRow> = rows.iter().filter(|r| r.converged).collect();
            let stat = |select: &dyn Fn(&McRow) -> f64, truth: f64| -> StatSummary {
                let mut values: Vec<f64> = converged.iter().map(|r| select(r)).collect();
                values.sort_by(|a, b| a.total_cmp(b));
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n.max(1.0);
                let sd = if values.len() > 1 {
                    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                StatSummary {
                    mean,
                    median: quantile(&values, 0.5),
                    sd,
                    q05: quantile(&values, 0.05),
                    q25: quantile(&values, 0.25),
                    q75: quantile(&values, 0.75),
                    q95: quantile(&values, 0.95),
                    bias: mean - truth,
                }
            };
            out.push(SummaryRow {
                scenario_id: scenario.id.clone(),
                family,
                n_total: rows.len(),
                n_converged: converged.len(),
                p: stat(&|r| r.p_hat, scenario.p),
                rho: stat(&|r| r.rho_hat, scenario.rho),
            });
        }
    }
    out
}

/// The study grid at m = 10: p ∈ {0.1,…,0.5} × ρ ∈ {0.05,…,0.20}.
pub fn default_grid(n: usize, b: usize, seed: u64, generator: Generator) -> Vec<Scenario> {
    let mut grid = Vec::new();
    for &p in &[0.1, 0.2, 0.3, 0.4, 0.5] {
        for &rho in &[0.05, 0.10, 0.15, 0.20] {
            grid.push(Scenario::new(p, rho, 10, n, b, seed, generator));
        }
    }
    grid
}
