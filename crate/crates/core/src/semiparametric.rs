//! Varying-cluster-size models: family parameters become smooth functions
//! of the cluster size through cubic B-spline bases and link functions
//! (logit for the beta-binomial mean, log elsewhere).

use nalgebra::DMatrix;

use crate::distributions::{family_moments, family_pmf, FamilySpec};
use crate::error::{Error, Result};
use crate::estimation::{delta_method, fit_mle, Family, FitOptions, SumDataset};
use crate::numerics::fd_hessian;
use crate::optim::{self, maximize};

/// Basis choice for the per-cluster-size parameter curves.
#[derive(Debug, Clone, PartialEq)]
pub enum BasisKind {
    /// Constant curve: nests the pooled single-spec fit exactly.
    Intercept,
    /// Parametric quadratic in m: columns 1, m, m².
    Quadratic,
    /// Cubic B-splines with the given interior knots (possibly none, which
    /// leaves a plain cubic polynomial basis of dimension 4).
    Cubic { interior_knots: Vec<f64> },
}

/// A basis bound to the observed range of cluster sizes.
#[derive(Debug, Clone)]
pub struct SplineBasis {
    kind: BasisKind,
    boundary: (f64, f64),
    knots: Vec<f64>,
}

const DEGREE: usize = 3;

impl SplineBasis {
    pub fn new(kind: BasisKind, m_values: &[usize]) -> Result<Self> {
        if m_values.is_empty() {
            return Err(Error::InvalidData("no cluster sizes for the basis".into()));
        }
        let lo = *m_values.iter().min().unwrap() as f64;
        let hi = *m_values.iter().max().unwrap() as f64;
        let mut knots = Vec::new();
        if let BasisKind::Cubic { interior_knots } = &kind {
            if lo == hi {
                return Err(Error::RankDeficient(
                    "cubic basis needs a nondegenerate range of cluster sizes".into(),
                ));
            }
            for &t in interior_knots {
                if !(lo < t && t < hi) {
                    return Err(Error::Domain(format!(
                        "interior knot {t} not strictly inside ({lo}, {hi})"
                    )));
                }
            }
            let mut interior = interior_knots.clone();
            interior.sort_by(f64::total_cmp);
            knots.extend(std::iter::repeat(lo).take(DEGREE + 1));
            knots.extend(interior);
            knots.extend(std::iter::repeat(hi).take(DEGREE + 1));
        }
        Ok(Self { kind, boundary: (lo, hi), knots })
    }

    /// Basis dimension K.
    pub fn k(&self) -> usize {
        match &self.kind {
            BasisKind::Intercept => 1,
            BasisKind::Quadratic => 3,
            BasisKind::Cubic { .. } => self.knots.len() - DEGREE - 1,
        }
    }

    pub fn kind(&self) -> &BasisKind {
        &self.kind
    }

    /// Row s(m)ᵀ of the design matrix.
    pub fn row(&self, m: f64) -> Vec<f64> {
        match &self.kind {
            BasisKind::Intercept => vec![1.0],
            BasisKind::Quadratic => vec![1.0, m, m * m],
            BasisKind::Cubic { .. } => bspline_row(m, &self.knots, DEGREE),
        }
    }

    /// The coefficient vector reproducing a constant curve with value
    /// `link_value` (B-splines sum to one, so it is just a constant fill).
    pub fn constant_coefficients(&self, link_value: f64) -> Vec<f64> {
        match &self.kind {
            BasisKind::Intercept => vec![link_value],
            BasisKind::Quadratic => vec![link_value, 0.0, 0.0],
            BasisKind::Cubic { .. } => vec![link_value; self.k()],
        }
    }

    pub fn boundary(&self) -> (f64, f64) {
        self.boundary
    }
}

/// All cubic B-spline basis values at `x` for a clamped knot vector
/// (Cox–de Boor recursion over the nonzero span).
fn bspline_row(x: f64, knots: &[f64], degree: usize) -> Vec<f64> {
    let n_basis = knots.len() - degree - 1;
    let x = x.clamp(knots[degree], knots[knots.len() - degree - 1]);
    // Knot span: largest i with knots[i] <= x, clamped so span stays valid
    // at the right boundary.
    let mut span = degree;
    while span < n_basis - 1 && x >= knots[span + 1] {
        span += 1;
    }
    let mut values = vec![0.0; degree + 1];
    values[0] = 1.0;
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    for j in 1..=degree {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom != 0.0 { values[r] / denom } else { 0.0 };
            values[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        values[j] = saved;
    }
    let mut row = vec![0.0; n_basis];
    for (j, &v) in values.iter().enumerate() {
        row[span - degree + j] = v;
    }
    row
}

/// Design matrix with one row per requested cluster size. Errors when the
/// distinct sizes cannot identify K coefficients.
pub fn spline_design(m_values: &[usize], basis: &SplineBasis) -> Result<DMatrix<f64>> {
    let mut distinct: Vec<usize> = m_values.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < basis.k() {
        return Err(Error::RankDeficient(format!(
            "{} distinct cluster sizes cannot identify {} basis coefficients",
            distinct.len(),
            basis.k()
        )));
    }
    let rows: Vec<Vec<f64>> = m_values.iter().map(|&m| basis.row(m as f64)).collect();
    let design = DMatrix::from_fn(m_values.len(), basis.k(), |i, j| rows[i][j]);
    let rank = design.clone().svd(false, false).rank(1e-10);
    if rank < basis.k() {
        return Err(Error::RankDeficient(format!(
            "design matrix rank {rank} < K = {}",
            basis.k()
        )));
    }
    Ok(design)
}

/// Families supported by the semiparametric extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemiFamily {
    BetaBinomialPrentice,
    LapGam,
}

impl SemiFamily {
    pub fn name(&self) -> &'static str {
        match self {
            SemiFamily::BetaBinomialPrentice => "bb",
            SemiFamily::LapGam => "lapgam",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "bb" | "beta-binomial" | "betabinomial" => Ok(SemiFamily::BetaBinomialPrentice),
            "lapgam" => Ok(SemiFamily::LapGam),
            other => Err(Error::InvalidData(format!("unsupported semiparametric family '{other}'"))),
        }
    }

    fn pooled_family(&self) -> Family {
        match self {
            SemiFamily::BetaBinomialPrentice => Family::BetaBinomialPrentice,
            SemiFamily::LapGam => Family::LapGam,
        }
    }

    /// Apply the links to the two linear predictors at one cluster size.
    fn spec(&self, lin1: f64, lin2: f64) -> FamilySpec {
        match self {
            // logit[μ(m)] = s(m)'η₁, log[γ(m)] = s(m)'η₂ — the log link
            // keeps γ positive, forgoing the negative-correlation range.
            SemiFamily::BetaBinomialPrentice => FamilySpec::BetaBinomialPrentice {
                mu: 1.0 / (1.0 + (-lin1).exp()),
                gamma: lin2.exp(),
            },
            // log[α(m)] = s(m)'η₃, log[β(m)] = s(m)'η₄.
            SemiFamily::LapGam => FamilySpec::LapGam { alpha: lin1.exp(), beta: lin2.exp() },
        }
    }

    /// Link-scale values of a pooled spec, for starting coefficients.
    fn link_values(&self, spec: &FamilySpec) -> Result<(f64, f64)> {
        match (self, spec) {
            (SemiFamily::BetaBinomialPrentice, FamilySpec::BetaBinomialPrentice { mu, gamma }) => {
                let mu = mu.clamp(1e-9, 1.0 - 1e-9);
                Ok(((mu / (1.0 - mu)).ln(), gamma.max(1e-6).ln()))
            }
            (SemiFamily::LapGam, FamilySpec::LapGam { alpha, beta }) => {
                Ok((alpha.max(1e-9).ln(), beta.max(1e-9).ln()))
            }
            _ => Err(Error::InvalidData("family/spec mismatch".into())),
        }
    }
}

/// Fitted per-cluster-size curve point.
#[derive(Debug, Clone)]
pub struct PerM {
    pub m: usize,
    pub params: (f64, f64),
    pub p_hat: f64,
    pub rho_hat: f64,
    pub se_p: Option<f64>,
    pub se_rho: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SemiparamFit {
    pub family: SemiFamily,
    pub eta1: Vec<f64>,
    pub eta2: Vec<f64>,
    pub loglik: f64,
    pub deviance: f64,
    pub per_m: Vec<PerM>,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
}

fn linear_predictors(theta: &[f64], row: &[f64], k: usize) -> (f64, f64) {
    let lin1: f64 = row.iter().zip(&theta[..k]).map(|(x, e)| x * e).sum();
    let lin2: f64 = row.iter().zip(&theta[k..]).map(|(x, e)| x * e).sum();
    (lin1, lin2)
}

/// Maximize the grouped likelihood with spline-linked parameters.
pub fn fit_semiparametric(
    family: SemiFamily,
    data: &SumDataset,
    basis: &SplineBasis,
    options: &FitOptions,
) -> Result<SemiparamFit> {
    let sizes = data.cluster_sizes();
    spline_design(&sizes, basis)?;
    let k = basis.k();
    let rows: Vec<(usize, Vec<f64>)> =
        sizes.iter().map(|&m| (m, basis.row(m as f64))).collect();

    let objective = |theta: &[f64]| -> f64 {
        let mut total = 0.0;
        for (m, row) in &rows {
            let (lin1, lin2) = linear_predictors(theta, row, k);
            let spec = family.spec(lin1, lin2);
            let pmf = match family_pmf(&spec, *m) {
                Ok(p) => p,
                Err(_) => return f64::NEG_INFINITY,
            };
            for r in data.records().iter().filter(|r| r.m == *m) {
                let cell = pmf.mass()[r.s];
                if cell <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                total += r.count as f64 * cell.ln();
            }
        }
        total
    };

    // Start from the pooled fit's constant curve.
    let pooled = fit_mle(family.pooled_family(), data, options)?;
    let (c1, c2) = family.link_values(&pooled.spec)?;
    let mut theta0 = basis.constant_coefficients(c1);
    theta0.extend(basis.constant_coefficients(c2));

    let opt_options = optim::Options { max_iters: options.max_iters, ..Default::default() };
    let best = maximize(&objective, &theta0, &opt_options);

    let eta1 = best.theta[..k].to_vec();
    let eta2 = best.theta[k..].to_vec();

    // Deviance against the saturated grouped model over (m, s) cells.
    let mut deviance = 0.0;
    for (m, row) in &rows {
        let (lin1, lin2) = linear_predictors(&best.theta, row, k);
        let pmf = family_pmf(&family.spec(lin1, lin2), *m)?;
        let nm: u64 = data.records().iter().filter(|r| r.m == *m).map(|r| r.count).sum();
        for r in data.records().iter().filter(|r| r.m == *m) {
            let o = r.count as f64;
            let e = nm as f64 * pmf.mass()[r.s];
            if e > 0.0 {
                deviance += 2.0 * o * (o / e).ln();
            } else {
                deviance = f64::INFINITY;
            }
        }
    }

    let cov = fd_hessian(&objective, &best.theta).ok().and_then(|h| {
        let dim = 2 * k;
        let neg_h = DMatrix::from_fn(dim, dim, |i, j| -h[i][j]);
        neg_h.cholesky().map(|c| c.inverse())
    });

    let mut per_m = Vec::with_capacity(rows.len());
    for (m, row) in &rows {
        let (lin1, lin2) = linear_predictors(&best.theta, row, k);
        let spec = family.spec(lin1, lin2);
        let (p_hat, rho_hat) = family_moments(&spec)?;
        let (se_p, se_rho) = match cov.as_ref() {
            Some(cov) => {
                let row = row.clone();
                let transform = move |theta: &[f64]| {
                    let (l1, l2) = linear_predictors(theta, &row, k);
                    family_moments(&family.spec(l1, l2)).unwrap_or((f64::NAN, f64::NAN))
                };
                match delta_method(cov, &best.theta, &transform) {
                    Ok((sp, sr)) => (Some(sp), Some(sr)),
                    Err(_) => (None, None),
                }
            }
            None => (None, None),
        };
        let params = match spec {
            FamilySpec::BetaBinomialPrentice { mu, gamma } => (mu, gamma),
            FamilySpec::LapGam { alpha, beta } => (alpha, beta),
            _ => unreachable!(),
        };
        per_m.push(PerM { m: *m, params, p_hat, rho_hat, se_p, se_rho });
    }

    Ok(SemiparamFit {
        family,
        eta1,
        eta2,
        loglik: best.value,
        deviance,
        per_m,
        converged: best.converged,
        iterations: best.iterations,
        grad_norm: best.grad_norm,
    })
}
