//! Maximum-likelihood fitting of the parametric families to clustered
//! count data, the saturated multinomial fit, and delta-method inference
//! for the derived (p, ρ).

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::distributions::{
    exact_pmf, family_moments, family_pmf, invert_pmf, prentice_gamma_lower_bound,
    FamilySpec, Pmf, ProbabilitySequence,
};
use crate::error::{Error, Result};
use crate::numerics::{fd_gradient, fd_hessian};
use crate::optim::{self, maximize};

/// Clustered binary outcomes as grouped counts. Records with equal
/// `(m, s)` are merged at construction, so the likelihood is invariant to
/// how the input was grouped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SumDataset {
    records: Vec<Record>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Record {
    pub m: usize,
    pub s: usize,
    pub count: u64,
}

impl SumDataset {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidData("dataset has no records".into()));
        }
        for r in &records {
            if r.s > r.m {
                return Err(Error::InvalidData(format!("record has s={} > m={}", r.s, r.m)));
            }
            if r.m == 0 {
                return Err(Error::InvalidData("record has m=0".into()));
            }
            if r.count == 0 {
                return Err(Error::InvalidData("record has count=0".into()));
            }
        }
        let mut merged: Vec<Record> = Vec::new();
        let mut sorted = records;
        sorted.sort_by_key(|r| (r.m, r.s));
        for r in sorted {
            match merged.last_mut() {
                Some(last) if last.m == r.m && last.s == r.s => last.count += r.count,
                _ => merged.push(r),
            }
        }
        Ok(Self { records: merged })
    }

    /// Tally a list of raw sums observed at a single cluster size.
    pub fn from_sums(m: usize, sums: &[usize]) -> Result<Self> {
        let mut counts = vec![0u64; m + 1];
        for &s in sums {
            if s > m {
                return Err(Error::InvalidData(format!("sum {s} exceeds m={m}")));
            }
            counts[s] += 1;
        }
        Self::new(
            counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(s, &c)| Record { m, s, count: c })
                .collect(),
        )
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn n_total(&self) -> u64 {
        self.records.iter().map(|r| r.count).sum()
    }

    /// Distinct cluster sizes, ascending.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut ms: Vec<usize> = self.records.iter().map(|r| r.m).collect();
        ms.dedup();
        ms
    }

    pub fn max_m(&self) -> usize {
        self.records.iter().map(|r| r.m).max().unwrap_or(0)
    }

    /// Method-of-moments (p, ρ) from the pooled mean and variance of the
    /// sums, using `Var(S) = m p (1−p) (1 + (m−1)ρ)`.
    pub fn moment_estimates(&self) -> (f64, f64) {
        let n = self.n_total() as f64;
        let total_trials: f64 = self.records.iter().map(|r| (r.count * r.m as u64) as f64).sum();
        let total_s: f64 = self.records.iter().map(|r| (r.count * r.s as u64) as f64).sum();
        let p = (total_s / total_trials).clamp(1e-4, 1.0 - 1e-4);
        // Pooled rho across cluster sizes, weighting each record by count.
        let mut num = 0.0;
        let mut den = 0.0;
        for &m in &self.cluster_sizes() {
            let recs: Vec<&Record> = self.records.iter().filter(|r| r.m == m).collect();
            let nm: f64 = recs.iter().map(|r| r.count as f64).sum();
            if nm < 2.0 || m < 2 {
                continue;
            }
            let mean: f64 = recs.iter().map(|r| r.count as f64 * r.s as f64).sum::<f64>() / nm;
            let var: f64 = recs
                .iter()
                .map(|r| r.count as f64 * (r.s as f64 - mean).powi(2))
                .sum::<f64>()
                / (nm - 1.0);
            let base = m as f64 * p * (1.0 - p);
            if base > 0.0 {
                num += nm * (var / base - 1.0) / (m as f64 - 1.0);
                den += nm;
            }
        }
        let rho = if den > 0.0 { (num / den).clamp(1e-3, 0.95) } else { 0.05 };
        let _ = n;
        (p, rho)
    }

    fn degenerate_boundary(&self) -> Option<f64> {
        if self.records.iter().all(|r| r.s == 0) {
            Some(0.0)
        } else if self.records.iter().all(|r| r.s == r.m) {
            Some(1.0)
        } else {
            None
        }
    }
}

/// Identifier for one of the supported parametric families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Binomial,
    FoldedLogistic,
    PPower,
    QPower,
    LapGam,
    BetaBinomialPrentice,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Binomial,
        Family::FoldedLogistic,
        Family::PPower,
        Family::QPower,
        Family::LapGam,
        Family::BetaBinomialPrentice,
    ];

    /// The four two-parameter-or-less comparison families of the Monte
    /// Carlo study.
    pub const MC_COMPARISON: [Family; 4] =
        [Family::BetaBinomialPrentice, Family::FoldedLogistic, Family::LapGam, Family::QPower];

    pub fn name(&self) -> &'static str {
        match self {
            Family::Binomial => "binomial",
            Family::FoldedLogistic => "fl",
            Family::PPower => "ppower",
            Family::QPower => "qpower",
            Family::LapGam => "lapgam",
            Family::BetaBinomialPrentice => "bb",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "binomial" | "binom" => Ok(Family::Binomial),
            "fl" | "folded-logistic" | "foldedlogistic" => Ok(Family::FoldedLogistic),
            "ppower" | "p-power" => Ok(Family::PPower),
            "qpower" | "q-power" => Ok(Family::QPower),
            "lapgam" => Ok(Family::LapGam),
            "bb" | "beta-binomial" | "betabinomial" => Ok(Family::BetaBinomialPrentice),
            other => Err(Error::InvalidData(format!("unknown family '{other}'"))),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Family::Binomial | Family::FoldedLogistic => 1,
            _ => 2,
        }
    }

    /// Map a point in the unconstrained space to the family's natural
    /// parameters. `m_max` fixes the Prentice gamma bound.
    pub fn to_spec(&self, theta: &[f64], m_max: usize) -> FamilySpec {
        match self {
            Family::Binomial => FamilySpec::Binomial { p: sigmoid(theta[0]) },
            Family::FoldedLogistic => FamilySpec::FoldedLogistic { beta: theta[0].exp() },
            Family::PPower => {
                FamilySpec::PPower { p: sigmoid(theta[0]), gamma: sigmoid(theta[1]) }
            }
            Family::QPower => {
                FamilySpec::QPower { q: sigmoid(theta[0]), gamma: sigmoid(theta[1]) }
            }
            Family::LapGam => {
                FamilySpec::LapGam { alpha: theta[0].exp(), beta: theta[1].exp() }
            }
            Family::BetaBinomialPrentice => {
                let mu = sigmoid(theta[0]);
                let bound = gamma_bound(mu, m_max);
                FamilySpec::BetaBinomialPrentice { mu, gamma: bound + theta[1].exp() }
            }
        }
    }

    /// Inverse of [`Family::to_spec`] for starting values.
    pub fn to_unconstrained(&self, spec: &FamilySpec, m_max: usize) -> Result<Vec<f64>> {
        match (self, spec) {
            (Family::Binomial, FamilySpec::Binomial { p }) => Ok(vec![logit(*p)]),
            (Family::FoldedLogistic, FamilySpec::FoldedLogistic { beta }) => {
                Ok(vec![beta.max(1e-12).ln()])
            }
            (Family::PPower, FamilySpec::PPower { p, gamma }) => {
                Ok(vec![logit(*p), logit(*gamma)])
            }
            (Family::QPower, FamilySpec::QPower { q, gamma }) => {
                Ok(vec![logit(*q), logit(*gamma)])
            }
            (Family::LapGam, FamilySpec::LapGam { alpha, beta }) => {
                Ok(vec![alpha.ln(), beta.max(1e-12).ln()])
            }
            (Family::BetaBinomialPrentice, FamilySpec::BetaBinomialPrentice { mu, gamma }) => {
                let bound = gamma_bound(*mu, m_max);
                Ok(vec![logit(*mu), (gamma - bound).max(1e-12).ln()])
            }
            _ => Err(Error::InvalidData("family/spec mismatch".into())),
        }
    }

    /// A spec matching target moments (p, ρ), used to initialize the
    /// optimizer. One-parameter families match p only.
    pub fn spec_from_moments(&self, p: f64, rho: f64) -> FamilySpec {
        let p = p.clamp(1e-3, 1.0 - 1e-3);
        let rho = rho.clamp(1e-3, 0.95);
        let p2 = (rho * p * (1.0 - p) + p * p).clamp(1e-12, 1.0);
        match self {
            Family::Binomial => FamilySpec::Binomial { p },
            Family::FoldedLogistic => {
                FamilySpec::FoldedLogistic { beta: (2.0 / p - 1.0).log2().max(1e-6) }
            }
            Family::PPower => {
                let gamma = (p2.ln() / p.ln()).log2().clamp(0.01, 0.99);
                FamilySpec::PPower { p, gamma }
            }
            Family::QPower => {
                let q = 1.0 - p;
                let target = (p2 + 1.0 - 2.0 * p).clamp(1e-12, 1.0);
                let gamma = (target.ln() / q.ln()).log2().clamp(0.01, 0.99);
                FamilySpec::QPower { q, gamma }
            }
            Family::LapGam => {
                // ln(1+2β)/ln(1+β) is decreasing from 2 to 1; bisect on the
                // target ratio ln p₂ / ln p₁ ∈ (1, 2).
                let ratio = (p2.ln() / p.ln()).clamp(1.0 + 1e-9, 2.0 - 1e-9);
                let g = |beta: f64| (1.0 + 2.0 * beta).ln() / (1.0 + beta).ln();
                let (mut lo, mut hi) = (1e-9, 1e9);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if g(mid) > ratio {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let beta = 0.5 * (lo + hi);
                let alpha = -p.ln() / (1.0 + beta).ln();
                FamilySpec::LapGam { alpha, beta }
            }
            Family::BetaBinomialPrentice => {
                FamilySpec::BetaBinomialPrentice { mu: p, gamma: rho / (1.0 - rho) }
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

fn gamma_bound(mu: f64, m_max: usize) -> f64 {
    if m_max >= 2 {
        prentice_gamma_lower_bound(mu, m_max).unwrap_or(0.0)
    } else {
        -mu.min(1.0 - mu)
    }
}

/// Log-likelihood of a family spec on a grouped dataset:
/// `Σ count·ln P[S_m = s]`. Returns `-inf` when an observed cell has
/// zero model mass.
pub fn log_likelihood(spec: &FamilySpec, data: &SumDataset) -> Result<f64> {
    let mut total = 0.0;
    for &m in &data.cluster_sizes() {
        let pmf = family_pmf(spec, m)?;
        for r in data.records().iter().filter(|r| r.m == m) {
            let cell = pmf.mass()[r.s];
            if cell <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            total += r.count as f64 * cell.ln();
        }
    }
    Ok(total)
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_iters: usize,
    pub restarts: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iters: 200, restarts: 5 }
    }
}

/// Fitted parameters with uncertainty for the derived (p, ρ).
#[derive(Debug, Clone)]
pub struct FitResult {
    pub spec: FamilySpec,
    pub loglik: f64,
    /// Covariance over the family's natural parameters.
    pub cov: Option<DMatrix<f64>>,
    /// Covariance in the unconstrained optimization space.
    pub cov_unconstrained: Option<DMatrix<f64>>,
    pub p_hat: f64,
    pub rho_hat: f64,
    pub se_p: Option<f64>,
    pub se_rho: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    /// The data were all-zero or all-m; parameters sit on the boundary and
    /// no covariance is reported.
    pub boundary: bool,
}

/// Maximize the log-likelihood of `family` on `data`.
pub fn fit_mle(family: Family, data: &SumDataset, options: &FitOptions) -> Result<FitResult> {
    let m_max = data.max_m();

    if let Some(p_boundary) = data.degenerate_boundary() {
        let eps = 1e-8;
        let p_inner = if p_boundary == 0.0 { eps } else { 1.0 - eps };
        let spec = family.spec_from_moments(p_inner, 1e-3);
        return Ok(FitResult {
            spec,
            loglik: 0.0,
            cov: None,
            cov_unconstrained: None,
            p_hat: p_boundary,
            rho_hat: f64::NAN,
            se_p: None,
            se_rho: None,
            converged: false,
            iterations: 0,
            grad_norm: f64::NAN,
            boundary: true,
        });
    }

    let objective = |theta: &[f64]| -> f64 {
        let spec = family.to_spec(theta, m_max);
        match log_likelihood(&spec, data) {
            Ok(v) => v,
            Err(_) => f64::NEG_INFINITY,
        }
    };

    let (p0, rho0) = data.moment_estimates();
    let start_spec = family.spec_from_moments(p0, rho0);
    let theta0 = family.to_unconstrained(&start_spec, m_max)?;

    let opt_options = optim::Options { max_iters: options.max_iters, ..Default::default() };
    let mut best = maximize(&objective, &theta0, &opt_options);
    if !best.converged {
        // Jittered restarts; deterministic stream so fits are reproducible.
        let mut rng = ChaCha12Rng::seed_from_u64(0xE1);
        for _ in 0..options.restarts {
            let jittered: Vec<f64> =
                theta0.iter().map(|t| t + rng.random_range(-1.0..1.0)).collect();
            let attempt = maximize(&objective, &jittered, &opt_options);
            let better = (attempt.converged && !best.converged)
                || (attempt.converged == best.converged && attempt.value > best.value);
            if better {
                best = attempt;
            }
            if best.converged {
                break;
            }
        }
    }

    let spec = family.to_spec(&best.theta, m_max);
    let (p_hat, rho_hat) = family_moments(&spec).unwrap_or((f64::NAN, f64::NAN));

    let dim = family.dim();
    let cov_unc = fd_hessian(&objective, &best.theta).ok().and_then(|h| {
        let neg_h = DMatrix::from_fn(dim, dim, |i, j| -h[i][j]);
        neg_h.cholesky().map(|c| c.inverse())
    });

    let cov_nat = cov_unc.as_ref().and_then(|cov| {
        let jac = natural_jacobian(family, &best.theta, m_max)?;
        Some(&jac * cov * jac.transpose())
    });

    let (se_p, se_rho) = match cov_unc.as_ref() {
        Some(cov) => {
            let transform = |theta: &[f64]| {
                family_moments(&family.to_spec(theta, m_max)).unwrap_or((f64::NAN, f64::NAN))
            };
            match delta_method(cov, &best.theta, &transform) {
                Ok((sp, sr)) => (Some(sp), Some(sr)),
                Err(_) => (None, None),
            }
        }
        None => (None, None),
    };

    Ok(FitResult {
        spec,
        loglik: best.value,
        cov: cov_nat,
        cov_unconstrained: cov_unc,
        p_hat,
        rho_hat,
        se_p,
        se_rho,
        converged: best.converged,
        iterations: best.iterations,
        grad_norm: best.grad_norm,
        boundary: false,
    })
}

fn natural_jacobian(family: Family, theta: &[f64], m_max: usize) -> Option<DMatrix<f64>> {
    let dim = family.dim();
    let mut jac = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let row = fd_gradient(
            |t: &[f64]| family.to_spec(t, m_max).params()[i].1,
            theta,
        )
        .ok()?;
        for j in 0..dim {
            jac[(i, j)] = row[j];
        }
    }
    Some(jac)
}

/// Delta-method standard errors of a two-output transform of the fitted
/// parameters: `se = sqrt(gᵀ Σ g)` with `g` the finite-difference gradient.
pub fn delta_method(
    cov: &DMatrix<f64>,
    theta: &[f64],
    transform: &dyn Fn(&[f64]) -> (f64, f64),
) -> Result<(f64, f64)> {
    let g_p = fd_gradient(|t: &[f64]| transform(t).0, theta)?;
    let g_r = fd_gradient(|t: &[f64]| transform(t).1, theta)?;
    let quad = |g: &[f64]| -> Result<f64> {
        let v = nalgebra::DVector::from_column_slice(g);
        let q = (v.transpose() * cov * &v)[(0, 0)];
        if q < -1e-12 {
            return Err(Error::ConstraintViolation(format!(
                "covariance not positive semidefinite: quadratic form {q}"
            )));
        }
        Ok(q.max(0.0).sqrt())
    };
    Ok((quad(&g_p)?, quad(&g_r)?))
}

/// Saturated (nonparametric) estimate of the probability sequence for
/// single-cluster-size data, with multinomial covariance propagated
/// through the linear inversion map.
#[derive(Debug, Clone)]
pub struct SaturatedFit {
    pub sequence: ProbabilitySequence,
    /// Covariance of (p̂₁, …, p̂_m).
    pub cov: DMatrix<f64>,
    /// Grouped saturated log-likelihood `Σ O·ln(O/N)`.
    pub loglik: f64,
    /// Whether the inverted sequence is nonincreasing; violations are
    /// reported, not repaired.
    pub monotone: bool,
    pub empirical_pmf: Pmf,
}

pub fn saturated_fit(data: &SumDataset) -> Result<SaturatedFit> {
    let ms = data.cluster_sizes();
    if ms.len() != 1 {
        return Err(Error::InvalidData(format!(
            "saturated fit needs a single cluster size, got {ms:?}"
        )));
    }
    let m = ms[0];
    let n = data.n_total() as f64;
    let mut pi = vec![0.0; m + 1];
    for r in data.records() {
        pi[r.s] = r.count as f64 / n;
    }
    let pmf = Pmf::new(pi.clone())?;
    let sequence = invert_pmf(&pmf);

    // Inversion map as a matrix over the pmf cells: p_j = Σ_k w_jk π_{m−k}.
    let mut a = DMatrix::zeros(m + 1, m + 1);
    for j in 0..=m {
        for k in 0..=(m - j) {
            let w = crate::numerics::binom((m - j) as u64, k as u64)?
                / crate::numerics::binom(m as u64, k as u64)?;
            a[(j, m - k)] = w;
        }
    }
    let mut mult = DMatrix::zeros(m + 1, m + 1);
    for i in 0..=m {
        for j in 0..=m {
            let v = if i == j { pi[i] * (1.0 - pi[i]) } else { -pi[i] * pi[j] };
            mult[(i, j)] = v / n;
        }
    }
    let full = &a * mult * a.transpose();
    let cov = full.view((1, 1), (m, m)).into_owned();

    let loglik = data
        .records()
        .iter()
        .map(|r| r.count as f64 * (r.count as f64 / n).ln())
        .sum();

    let monotone = sequence.is_nonincreasing();
    Ok(SaturatedFit { sequence, cov, loglik, monotone, empirical_pmf: pmf })
}

/// Push a probability sequence back through the exact pmf; used by tests
/// and by deviance computations against the saturated model.
pub fn sequence_pmf(seq: &ProbabilitySequence) -> Result<Pmf> {
    exact_pmf(seq)
}

/// The Brassica secondary-chromosome-association counts (m = 3).
pub fn brassica_dataset() -> SumDataset {
    SumDataset::new(vec![
        Record { m: 3, s: 0, count: 32 },
        Record { m: 3, s: 1, count: 103 },
        Record { m: 3, s: 2, count: 122 },
        Record { m: 3, s: 3, count: 80 },
    ])
    .expect("static dataset is valid")
}

/// Check structural validity used by tests: p-hat for the plain binomial
/// closed form.
pub fn binomial_closed_form(data: &SumDataset) -> f64 {
    let trials: f64 = data.records().iter().map(|r| (r.count * r.m as u64) as f64).sum();
    let successes: f64 = data.records().iter().map(|r| (r.count * r.s as u64) as f64).sum();
    successes / trials
}
