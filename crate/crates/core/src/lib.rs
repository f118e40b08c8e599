//! Modeling sums of exchangeable binary random variables.
//!
//! The sum of an exchangeable binary vector has an exact distribution driven
//! by the sequence of joint success probabilities `p_j = P[Y_1 = … = Y_j = 1]`.
//! This crate evaluates that distribution exactly, models the probability
//! sequence with several completely monotone parametric families (binomial,
//! folded-logistic, p-power, q-power, LapGam, and the Prentice beta-binomial),
//! fits any of them by maximum likelihood with delta-method standard errors,
//! tests goodness of fit, runs reproducible Monte Carlo studies of the
//! estimators, and extends the two-parameter families to varying cluster
//! sizes through cubic-spline links.

pub mod distributions;
pub mod error;
pub mod estimation;
pub mod gof;
pub mod numerics;
pub mod optim;
pub mod semiparametric;
pub mod simulation;

pub use distributions::{
    exact_pmf, family_moments, family_pmf, invert_pmf, FamilySequence, FamilySpec, Pmf,
    ProbabilitySequence,
};
pub use error::{Error, Result};
pub use estimation::{
    fit_mle, log_likelihood, saturated_fit, Family, FitOptions, FitResult, SaturatedFit,
    SumDataset,
};
pub use gof::{DfPolicy, GofReport};
pub use semiparametric::{fit_semiparametric, BasisKind, SemiFamily, SemiparamFit, SplineBasis};
pub use simulation::{
    default_grid, run_mc_study, summarize, Generator, McResultTable, Scenario, SummaryRow,
};
