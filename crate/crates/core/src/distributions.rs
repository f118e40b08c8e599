//! Probability mass functions for sums of exchangeable binary variables.
//!
//! The exact sum distribution is
//! `P[S_m = s] = C(m,s)·Σ_k (−1)^k C(m−s,k) p_{s+k}` where
//! `1 = p₀ ≥ p₁ ≥ … ≥ p_m` are the joint success probabilities. The
//! parametric families model that sequence with completely monotone
//! functions so the inclusion–exclusion cells stay nonnegative.

use qd::Quad;

use crate::error::{Error, Result};
use crate::numerics::{self, alternating_sum, binom, difference_table, log_binom, sum_products};

/// Cells more negative than this are constraint violations; anything in
/// `[-CLAMP_TOL, 0)` is rounding noise from the alternating sum and is
/// clamped to zero.
pub const CLAMP_TOL: f64 = 1e-9;

/// Sign tolerance for the complete-monotonicity check; difference tables
/// amplify rounding, so exact-zero tests would spuriously fail.
pub const MONOTONE_TOL: f64 = 1e-10;

/// The sequence `1 = p₀ ≥ p₁ ≥ … ≥ p_m` of joint success probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilitySequence {
    m: usize,
    p: Vec<f64>,
}

impl ProbabilitySequence {
    /// Validating constructor: `p[0] = 1`, entries nonincreasing and in [0,1].
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidData("empty probability sequence".into()));
        }
        if (p[0] - 1.0).abs() > 1e-12 {
            return Err(Error::ConstraintViolation(format!("p_0 must be 1, got {}", p[0])));
        }
        for j in 0..p.len() {
            if !((-1e-12..=1.0 + 1e-12).contains(&p[j])) {
                return Err(Error::ConstraintViolation(format!("p_{j} = {} outside [0,1]", p[j])));
            }
            if j > 0 && p[j] > p[j - 1] + 1e-12 {
                return Err(Error::ConstraintViolation(format!(
                    "sequence not nonincreasing at j={j}: {} > {}",
                    p[j],
                    p[j - 1]
                )));
            }
        }
        Ok(Self { m: p.len() - 1, p })
    }

    /// Constructor without the monotonicity check, for estimators whose
    /// output may legitimately violate it (saturated inversion of an
    /// empirical pmf). `p[0]` is still forced to 1.
    pub fn from_unchecked(mut p: Vec<f64>) -> Self {
        assert!(!p.is_empty());
        p[0] = 1.0;
        Self { m: p.len() - 1, p }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn values(&self) -> &[f64] {
        &self.p
    }

    pub fn is_nonincreasing(&self) -> bool {
        self.p.windows(2).all(|w| w[1] <= w[0] + 1e-12)
    }
}

/// One parametric family together with its parameter values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FamilySpec {
    Binomial { p: f64 },
    FoldedLogistic { beta: f64 },
    PPower { p: f64, gamma: f64 },
    QPower { q: f64, gamma: f64 },
    LapGam { alpha: f64, beta: f64 },
    BetaBinomialPrentice { mu: f64, gamma: f64 },
}

impl FamilySpec {
    pub fn family_name(&self) -> &'static str {
        match self {
            FamilySpec::Binomial { .. } => "binomial",
            FamilySpec::FoldedLogistic { .. } => "fl",
            FamilySpec::PPower { .. } => "ppower",
            FamilySpec::QPower { .. } => "qpower",
            FamilySpec::LapGam { .. } => "lapgam",
            FamilySpec::BetaBinomialPrentice { .. } => "bb",
        }
    }

    /// Named parameter values, in a fixed per-family order.
    pub fn params(&self) -> Vec<(&'static str, f64)> {
        match *self {
            FamilySpec::Binomial { p } => vec![("p", p)],
            FamilySpec::FoldedLogistic { beta } => vec![("beta", beta)],
            FamilySpec::PPower { p, gamma } => vec![("p", p), ("gamma", gamma)],
            FamilySpec::QPower { q, gamma } => vec![("q", q), ("gamma", gamma)],
            FamilySpec::LapGam { alpha, beta } => vec![("alpha", alpha), ("beta", beta)],
            FamilySpec::BetaBinomialPrentice { mu, gamma } => vec![("mu", mu), ("gamma", gamma)],
        }
    }

    /// Check parameter ranges, including the cluster-size-dependent
    /// Prentice bound on gamma.
    pub fn validate(&self, m: usize) -> Result<()> {
        let finite = |v: f64, name: &str| -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::Domain(format!("{name} must be finite, got {v}")))
            }
        };
        match *self {
            FamilySpec::Binomial { p } => {
                finite(p, "p")?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Domain(format!("binomial p must be in [0,1], got {p}")));
                }
            }
            FamilySpec::FoldedLogistic { beta } => {
                finite(beta, "beta")?;
                if beta < 0.0 {
                    return Err(Error::Domain(format!("folded-logistic beta must be >= 0, got {beta}")));
                }
            }
            FamilySpec::PPower { p, gamma } => {
                finite(p, "p")?;
                finite(gamma, "gamma")?;
                if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&gamma) {
                    return Err(Error::Domain(format!(
                        "p-power requires p, gamma in [0,1], got ({p}, {gamma})"
                    )));
                }
            }
            FamilySpec::QPower { q, gamma } => {
                finite(q, "q")?;
                finite(gamma, "gamma")?;
                if !(0.0..=1.0).contains(&q) || !(0.0..=1.0).contains(&gamma) {
                    return Err(Error::Domain(format!(
                        "q-power requires q, gamma in [0,1], got ({q}, {gamma})"
                    )));
                }
            }
            FamilySpec::LapGam { alpha, beta } => {
                finite(alpha, "alpha")?;
                finite(beta, "beta")?;
                if alpha <= 0.0 || beta < 0.0 {
                    return Err(Error::Domain(format!(
                        "LapGam requires alpha > 0 and beta >= 0, got ({alpha}, {beta})"
                    )));
                }
            }
            FamilySpec::BetaBinomialPrentice { mu, gamma } => {
                finite(mu, "mu")?;
                finite(gamma, "gamma")?;
                if !(0.0 < mu && mu < 1.0) {
                    return Err(Error::Domain(format!("Prentice mu must be in (0,1), got {mu}")));
                }
                let bound = if m >= 2 {
                    prentice_gamma_lower_bound(mu, m)?
                } else {
                    -mu.min(1.0 - mu)
                };
                if gamma < bound {
                    return Err(Error::Domain(format!(
                        "Prentice gamma {gamma} below its lower bound {bound} at m={m}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A family's probability sequence; `complement == true` means the
/// sequence governs `X' = 1 − X` (used by the q-power family so Eq-level
/// formulas apply to the complements exactly as written).
#[derive(Debug, Clone)]
pub struct FamilySequence {
    pub seq: ProbabilitySequence,
    pub complement: bool,
}

/// Mass function of `S_m` over `{0, …, m}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    m: usize,
    mass: Vec<f64>,
}

impl Pmf {
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        if mass.is_empty() {
            return Err(Error::InvalidData("empty pmf".into()));
        }
        if mass.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::ConstraintViolation("pmf entries must be nonnegative".into()));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::ConstraintViolation(format!("pmf sums to {total}, not 1")));
        }
        Ok(Self { m: mass.len() - 1, mass })
    }

    fn from_raw(mass: Vec<f64>) -> Self {
        Self { m: mass.len() - 1, mass }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// E[S_m].
    pub fn mean(&self) -> f64 {
        self.mass.iter().enumerate().map(|(s, &v)| s as f64 * v).sum()
    }
}

fn binom_u128(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 1..=k as u128 {
        c = c * (n as u128 - k as u128 + i) / i;
    }
    c
}

/// Clamp a pmf cell per the shared rule: slightly negative values from
/// cancellation become 0, anything below `-CLAMP_TOL` is an error.
fn clamp_cell(cell: f64, context: &str) -> Result<f64> {
    if cell < -CLAMP_TOL {
        Err(Error::ConstraintViolation(format!("{context}: cell = {cell} < -{CLAMP_TOL}")))
    } else {
        Ok(cell.max(0.0))
    }
}

/// Exact sum distribution from a probability sequence (inclusion–exclusion).
pub fn exact_pmf(seq: &ProbabilitySequence) -> Result<Pmf> {
    let m = seq.m();
    let p = seq.values();
    let mut mass = Vec::with_capacity(m + 1);
    for s in 0..=m {
        // Fold C(m,s) into the terms so the whole cancellation runs through
        // one compensated sum: C(m,s)·C(m−s,k) is the trinomial coefficient.
        let lead = binom_u128(m as u64, s as u64);
        let cell = sum_products((0..=(m - s)).map(|k| {
            let coef = (lead * binom_u128((m - s) as u64, k as u64)) as f64;
            let signed = if k % 2 == 0 { coef } else { -coef };
            (signed, p[s + k])
        }));
        mass.push(clamp_cell(cell, &format!("exact_pmf at s={s}"))?);
    }
    Ok(Pmf::from_raw(mass))
}

/// Recover the probability sequence from a pmf:
/// `p_j = Σ_k [C(m−j,k)/C(m,k)]·P[S_m = m−k]`.
pub fn invert_pmf(pmf: &Pmf) -> ProbabilitySequence {
    let m = pmf.m();
    let mass = pmf.mass();
    let mut p = Vec::with_capacity(m + 1);
    for j in 0..=m {
        let terms: Vec<f64> = (0..=(m - j))
            .map(|k| {
                let w = binom((m - j) as u64, k as u64).unwrap() / binom(m as u64, k as u64).unwrap();
                w * mass[m - k]
            })
            .collect();
        p.push(alternating_sum(&terms));
    }
    ProbabilitySequence::from_unchecked(p)
}

/// The probability sequence generated by a family at cluster size `m`.
pub fn family_sequence(spec: &FamilySpec, m: usize) -> Result<FamilySequence> {
    spec.validate(m)?;
    let (values, complement): (Vec<f64>, bool) = match *spec {
        // powf, not powi, so the p-power sequence at gamma = 1 is
        // bit-identical and the independence reduction is exact.
        FamilySpec::Binomial { p } => ((0..=m).map(|j| p.powf(j as f64)).collect(), false),
        FamilySpec::FoldedLogistic { beta } => {
            ((0..=m).map(|j| 2.0 / (1.0 + ((j + 1) as f64).powf(beta))).collect(), false)
        }
        FamilySpec::PPower { p, gamma } => (power_sequence(p, gamma, m), false),
        FamilySpec::QPower { q, gamma } => (power_sequence(q, gamma, m), true),
        FamilySpec::LapGam { alpha, beta } => {
            ((0..=m).map(|j| (1.0 + beta * j as f64).powf(-alpha)).collect(), false)
        }
        FamilySpec::BetaBinomialPrentice { mu, gamma } => {
            let mut values = Vec::with_capacity(m + 1);
            let mut prod = 1.0;
            values.push(1.0);
            for j in 0..m {
                let a = j as f64;
                let factor = (mu + gamma * a) / (1.0 + gamma * a);
                if factor <= 0.0 {
                    return Err(Error::ConstraintViolation(format!(
                        "Prentice moment factor nonpositive at a={j} (mu={mu}, gamma={gamma})"
                    )));
                }
                prod *= factor;
                values.push(prod);
            }
            (values, false)
        }
    };
    Ok(FamilySequence { seq: ProbabilitySequence::new(values)?, complement })
}

fn power_sequence(base: f64, gamma: f64, m: usize) -> Vec<f64> {
    (0..=m)
        .map(|j| {
            if j == 0 {
                return 1.0;
            }
            let x = if gamma == 1.0 { j as f64 } else { (j as f64).powf(gamma) };
            base.powf(x)
        })
        .collect()
}

/// The pmf of a family at cluster size `m`.
///
/// The inclusion-exclusion sum amplifies any rounding in the sequence
/// values by the trinomial coefficients (≈1e9 at m = 20), so the family
/// sequences and the alternating sums are evaluated in double-double
/// precision here. Plain f64 sequences through [`exact_pmf`] would leave
/// residuals of order 1e-8 in near-zero cells.
pub fn family_pmf(spec: &FamilySpec, m: usize) -> Result<Pmf> {
    spec.validate(m)?;
    match *spec {
        FamilySpec::QPower { q, gamma } => qpower_pmf(q, gamma, m),
        FamilySpec::BetaBinomialPrentice { mu, gamma } => prentice_pmf(mu, gamma, m),
        _ => quad_exact_pmf(&quad_sequence(spec, m), "family_pmf"),
    }
}

/// `base^exponent` in double-double for `base > 0`.
fn quad_pow(base: Quad, exponent: Quad) -> Quad {
    exponent.mul(base.ln()).exp()
}

/// Family probability sequences evaluated in double-double precision.
/// Only the families routed through the alternating sum appear here.
fn quad_sequence(spec: &FamilySpec, m: usize) -> Vec<Quad> {
    let one = Quad::from_f64(1.0);
    match *spec {
        FamilySpec::Binomial { p } => {
            let pq = Quad::from_f64(p);
            let mut values = vec![one];
            for j in 1..=m {
                values.push(values[j - 1].mul(pq));
            }
            values
        }
        FamilySpec::FoldedLogistic { beta } => {
            let two = Quad::from_f64(2.0);
            let b = Quad::from_f64(beta);
            (0..=m)
                .map(|j| {
                    let grown = quad_pow(Quad::from_f64((j + 1) as f64), b);
                    two.div(one.add_accurate(grown))
                })
                .collect()
        }
        FamilySpec::PPower { p, gamma } => quad_power_sequence(p, gamma, m),
        FamilySpec::QPower { q, gamma } => quad_power_sequence(q, gamma, m),
        FamilySpec::LapGam { alpha, beta } => {
            let neg_alpha = Quad::from_f64(alpha).neg();
            let b = Quad::from_f64(beta);
            (0..=m)
                .map(|j| {
                    let arg = one.add_accurate(b.mul(Quad::from_f64(j as f64)));
                    quad_pow(arg, neg_alpha)
                })
                .collect()
        }
        FamilySpec::BetaBinomialPrentice { .. } => unreachable!("handled by prentice_pmf"),
    }
}

fn quad_power_sequence(base: f64, gamma: f64, m: usize) -> Vec<Quad> {
    let one = Quad::from_f64(1.0);
    if base == 0.0 {
        let mut values = vec![Quad::from_f64(0.0); m + 1];
        values[0] = one;
        return values;
    }
    let ln_base = Quad::from_f64(base).ln();
    let g = Quad::from_f64(gamma);
    (0..=m)
        .map(|j| {
            if j == 0 {
                return one;
            }
            let exponent = quad_pow(Quad::from_f64(j as f64), g);
            exponent.mul(ln_base).exp()
        })
        .collect()
}

/// Inclusion-exclusion pmf over a double-double sequence.
fn quad_exact_pmf(p: &[Quad], context: &str) -> Result<Pmf> {
    let m = p.len() - 1;
    let mut mass = Vec::with_capacity(m + 1);
    for s in 0..=m {
        let lead = binom_u128(m as u64, s as u64);
        let mut acc = Quad::from_f64(0.0);
        for k in 0..=(m - s) {
            let coef = (lead * binom_u128((m - s) as u64, k as u64)) as f64;
            let signed = if k % 2 == 0 { coef } else { -coef };
            acc = acc.add_accurate(Quad::from_f64(signed).mul(p[s + k]));
        }
        mass.push(clamp_cell(acc.0 + acc.1, &format!("{context} at s={s}"))?);
    }
    Ok(Pmf::from_raw(mass))
}

/// q-power pmf evaluated directly on the complement sequence:
/// `P(S_m=s) = C(m,s)·Σ_{k=0}^{s}(−1)^k C(s,k) q^{(m−s+k)^γ}`.
fn qpower_pmf(q: f64, gamma: f64, m: usize) -> Result<Pmf> {
    let lambda = quad_power_sequence(q, gamma, m);
    let mut mass = Vec::with_capacity(m + 1);
    for s in 0..=m {
        let lead = binom_u128(m as u64, s as u64);
        let mut acc = Quad::from_f64(0.0);
        for k in 0..=s {
            let coef = (lead * binom_u128(s as u64, k as u64)) as f64;
            let signed = if k % 2 == 0 { coef } else { -coef };
            acc = acc.add_accurate(Quad::from_f64(signed).mul(lambda[m - s + k]));
        }
        mass.push(clamp_cell(acc.0 + acc.1, &format!("qpower_pmf at s={s}"))?);
    }
    Ok(Pmf::from_raw(mass))
}

/// Prentice beta-binomial pmf. Products underflow for large `m`, so the
/// factors are accumulated in log space whenever all of them are positive;
/// gamma = 0 short-circuits to the binomial pmf.
fn prentice_pmf(mu: f64, gamma: f64, m: usize) -> Result<Pmf> {
    if gamma == 0.0 {
        return family_pmf(&FamilySpec::Binomial { p: mu }, m);
    }
    let mut mass = Vec::with_capacity(m + 1);
    for s in 0..=m {
        let mut ln = log_binom(m as u64, s as u64)?;
        let mut ok = true;
        let push = |factor: f64, sign: f64, ln: &mut f64, ok: &mut bool| {
            if factor <= 0.0 {
                *ok = false;
            } else {
                *ln += sign * factor.ln();
            }
        };
        for a in 0..s {
            push(mu + gamma * a as f64, 1.0, &mut ln, &mut ok);
        }
        for a in 0..(m - s) {
            push(1.0 - mu + gamma * a as f64, 1.0, &mut ln, &mut ok);
        }
        for a in 0..m {
            push(1.0 + gamma * a as f64, -1.0, &mut ln, &mut ok);
        }
        if !ok {
            return Err(Error::ConstraintViolation(format!(
                "Prentice pmf factor nonpositive at s={s} (mu={mu}, gamma={gamma}, m={m})"
            )));
        }
        mass.push(ln.exp());
    }
    Ok(Pmf::from_raw(mass))
}

/// First- and second-order joint probabilities (p₁, p₂) of a family.
pub fn family_joint_probs(spec: &FamilySpec) -> Result<(f64, f64)> {
    spec.validate(2)?;
    Ok(match *spec {
        FamilySpec::Binomial { p } => (p, p * p),
        FamilySpec::FoldedLogistic { beta } => {
            (2.0 / (1.0 + 2f64.powf(beta)), 2.0 / (1.0 + 3f64.powf(beta)))
        }
        FamilySpec::PPower { p, gamma } => (p, p.powf(2f64.powf(gamma))),
        FamilySpec::QPower { q, gamma } => (1.0 - q, 1.0 - 2.0 * q + q.powf(2f64.powf(gamma))),
        FamilySpec::LapGam { alpha, beta } => {
            ((1.0 + beta).powf(-alpha), (1.0 + 2.0 * beta).powf(-alpha))
        }
        FamilySpec::BetaBinomialPrentice { mu, gamma } => {
            (mu, mu * (mu + gamma) / (1.0 + gamma))
        }
    })
}

/// Marginal success probability and intra-cluster correlation
/// `ρ = (p₂ − p₁²)/(p₁(1 − p₁))` implied by a family.
pub fn family_moments(spec: &FamilySpec) -> Result<(f64, f64)> {
    if let FamilySpec::BetaBinomialPrentice { mu, gamma } = *spec {
        spec.validate(2)?;
        return Ok((mu, gamma / (1.0 + gamma)));
    }
    let (p1, p2) = family_joint_probs(spec)?;
    if p1 <= 0.0 || p1 >= 1.0 {
        return Err(Error::Degenerate(format!("p1 = {p1} leaves the correlation undefined")));
    }
    Ok((p1, (p2 - p1 * p1) / (p1 * (1.0 - p1))))
}

/// Check `(−1)ʳ·Δʳp_ν ≥ −MONOTONE_TOL` for all r, ν. Returns the first
/// violating (r, ν) when the sequence is not completely monotone.
pub fn check_complete_monotone(seq: &ProbabilitySequence) -> (bool, Option<(usize, usize)>) {
    let m = seq.m();
    let table = difference_table(seq.values(), m).expect("r_max = m is always valid");
    for (r, row) in table.rows.iter().enumerate() {
        let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
        for (nu, &v) in row.iter().enumerate() {
            if sign * v < -MONOTONE_TOL {
                return (false, Some((r, nu)));
            }
        }
    }
    (true, None)
}

/// Lower bound on the Prentice gamma at cluster size `m`:
/// `γ ≥ −min(μ, 1−μ)/(m−1)`, so small negative correlations stay feasible.
pub fn prentice_gamma_lower_bound(mu: f64, m: usize) -> Result<f64> {
    if !(0.0 < mu && mu < 1.0) {
        return Err(Error::Domain(format!("mu must be in (0,1), got {mu}")));
    }
    if m < 2 {
        return Err(Error::Domain(format!("gamma bound needs m >= 2, got {m}")));
    }
    Ok(-mu.min(1.0 - mu) / (m as f64 - 1.0))
}

/// Numerically integrate the Laplace transform of a gamma(shape `alpha`,
/// scale `beta`) distribution at `x`. The closed form is `(1+βx)^{−α}`;
/// this quadrature route exists so tests can confirm the identity behind
/// the LapGam sequence independently.
pub fn laplace_transform_check(alpha: f64, beta: f64, x: f64) -> Result<f64> {
    if alpha <= 0.0 || beta <= 0.0 || x < 0.0 {
        return Err(Error::Domain(format!(
            "laplace_transform_check requires alpha, beta > 0 and x >= 0, got ({alpha}, {beta}, {x})"
        )));
    }
    // After scaling out β, ∫ e^{−xt} dF(t) = (1/Γ(α)) ∫₀^∞ u^{α−1}
    // e^{−(1+βx)u} du. The substitution u = t^k with k = ⌈5/α⌉ turns the
    // u^{α−1} endpoint factor into t^{kα−1} with exponent at least four,
    // smooth enough for Simpson's order.
    let rate = 1.0 + beta * x;
    let lg = numerics::log_gamma(alpha)?;
    let k = (5.0f64 / alpha).ceil().max(1.0);
    let u_max = (60.0 + 5.0 * alpha) / rate.max(1.0);
    let t_max = u_max.powf(1.0 / k);
    numerics::integrate(
        move |t: f64| {
            if t <= 0.0 {
                return 0.0;
            }
            (k.ln() + (k * alpha - 1.0) * t.ln() - rate * t.powf(k) - lg).exp()
        },
        0.0,
        t_max,
        1e-12,
    )
}
