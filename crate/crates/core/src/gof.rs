//! Pearson chi-square goodness of fit against expected counts, and
//! deviance relative to the saturated grouped model.

use crate::distributions::{family_pmf, FamilySpec};
use crate::error::{Error, Result};
use crate::estimation::SumDataset;
use crate::numerics::chi_square_sf;

/// Degrees-of-freedom policy for the chi-square test. `CellsMinusOne` is
/// the default; `CellsMinusOneMinusParams` subtracts the number of
/// estimated parameters as well.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfPolicy {
    CellsMinusOne,
    CellsMinusOneMinusParams(usize),
}

impl DfPolicy {
    fn df(&self, cells: usize) -> Result<u32> {
        let df = match *self {
            DfPolicy::CellsMinusOne => cells as i64 - 1,
            DfPolicy::CellsMinusOneMinusParams(k) => cells as i64 - 1 - k as i64,
        };
        if df < 1 {
            return Err(Error::Domain(format!("df policy leaves {df} degrees of freedom")));
        }
        Ok(df as u32)
    }
}

/// Result of a Pearson chi-square test.
#[derive(Debug, Clone)]
pub struct GofReport {
    pub observed: Vec<f64>,
    pub expected: Vec<f64>,
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
    pub family: String,
    /// Indices of cells dropped because their expected count was below
    /// the exclusion threshold.
    pub excluded_cells: Vec<usize>,
}

/// Cells with expected count below this are excluded from the statistic.
pub const EXPECTED_EXCLUSION: f64 = 1e-8;

/// Expected counts `N·P[S_m = s]` for single-cluster-size data.
pub fn expected_counts(spec: &FamilySpec, data: &SumDataset, m: usize) -> Result<Vec<f64>> {
    let ms = data.cluster_sizes();
    if ms != [m] {
        return Err(Error::InvalidData(format!(
            "expected_counts needs all records at m={m}, got {ms:?}"
        )));
    }
    let n = data.n_total() as f64;
    Ok(family_pmf(spec, m)?.mass().iter().map(|&v| n * v).collect())
}

/// Observed counts over `s = 0..=m` for single-cluster-size data.
pub fn observed_counts(data: &SumDataset, m: usize) -> Vec<f64> {
    let mut obs = vec![0.0; m + 1];
    for r in data.records() {
        obs[r.s] = r.count as f64;
    }
    obs
}

/// Pearson chi-square statistic and p-value.
pub fn pearson_test(
    observed: &[f64],
    expected: &[f64],
    df_policy: DfPolicy,
    family: &str,
) -> Result<GofReport> {
    if observed.len() != expected.len() {
        return Err(Error::InvalidData(format!(
            "length mismatch: {} observed vs {} expected",
            observed.len(),
            expected.len()
        )));
    }
    let mut statistic = 0.0;
    let mut excluded = Vec::new();
    let mut cells = 0usize;
    for (i, (&o, &e)) in observed.iter().zip(expected).enumerate() {
        if e < EXPECTED_EXCLUSION {
            excluded.push(i);
            continue;
        }
        statistic += (o - e).powi(2) / e;
        cells += 1;
    }
    let df = df_policy.df(cells)?;
    let p_value = chi_square_sf(statistic, df)?;
    Ok(GofReport {
        observed: observed.to_vec(),
        expected: expected.to_vec(),
        statistic,
        df,
        p_value,
        family: family.to_string(),
        excluded_cells: excluded,
    })
}

/// Grouped deviance `2·Σ O·ln(O/E)` over (m, s) cells with positive
/// observed counts.
pub fn grouped_deviance(spec: &FamilySpec, data: &SumDataset) -> Result<f64> {
    let n_by_m: Vec<(usize, f64)> = data
        .cluster_sizes()
        .into_iter()
        .map(|m| {
            let nm: u64 = data.records().iter().filter(|r| r.m == m).map(|r| r.count).sum();
            (m, nm as f64)
        })
        .collect();
    let mut dev = 0.0;
    for &(m, nm) in &n_by_m {
        let pmf = family_pmf(spec, m)?;
        for r in data.records().iter().filter(|r| r.m == m) {
            let o = r.count as f64;
            let e = nm * pmf.mass()[r.s];
            if e <= 0.0 {
                return Ok(f64::INFINITY);
            }
            dev += 2.0 * o * (o / e).ln();
        }
    }
    Ok(dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::{brassica_dataset, fit_mle, log_likelihood, Family, FitOptions};
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_match_gives_zero_statistic() {
        let o = [10.0, 20.0, 30.0];
        let report = pearson_test(&o, &o, DfPolicy::CellsMinusOne, "test").unwrap();
        assert_eq!(report.statistic, 0.0);
        assert_eq!(report.p_value, 1.0);
        assert_eq!(report.df, 2);
    }

    #[test]
    fn statistic_invariant_to_cell_order() {
        let o = [12.0, 40.0, 25.0];
        let e = [15.0, 35.0, 27.0];
        let a = pearson_test(&o, &e, DfPolicy::CellsMinusOne, "t").unwrap();
        let o2 = [40.0, 25.0, 12.0];
        let e2 = [35.0, 27.0, 15.0];
        let b = pearson_test(&o2, &e2, DfPolicy::CellsMinusOne, "t").unwrap();
        assert_abs_diff_eq!(a.statistic, b.statistic, epsilon = 1e-12);
    }

    #[test]
    fn tiny_expected_cells_are_excluded() {
        let o = [10.0, 0.0, 20.0];
        let e = [10.0, 1e-12, 20.0];
        let report = pearson_test(&o, &e, DfPolicy::CellsMinusOne, "t").unwrap();
        assert_eq!(report.excluded_cells, vec![1]);
        assert_eq!(report.df, 1);
    }

    #[test]
    fn adjusted_df_policy() {
        let o = [10.0, 20.0, 30.0, 40.0];
        let r = pearson_test(&o, &o, DfPolicy::CellsMinusOneMinusParams(2), "t").unwrap();
        assert_eq!(r.df, 1);
        assert!(pearson_test(&o, &o, DfPolicy::CellsMinusOneMinusParams(3), "t").is_err());
    }

    #[test]
    fn brassica_gof_p_values() {
        let data = brassica_dataset();
        let cases = [
            (Family::BetaBinomialPrentice, 0.8594),
            (Family::LapGam, 0.8621),
            (Family::QPower, 0.9993),
            (Family::Binomial, 0.0439),
            (Family::FoldedLogistic, 0.0048),
        ];
        for (family, p_value) in cases {
            let fit = fit_mle(family, &data, &FitOptions::default()).unwrap();
            let expected = expected_counts(&fit.spec, &data, 3).unwrap();
            let observed = observed_counts(&data, 3);
            let report =
                pearson_test(&observed, &expected, DfPolicy::CellsMinusOne, family.name())
                    .unwrap();
            assert_abs_diff_eq!(report.p_value, p_value, epsilon = 2e-3);
        }
    }

    #[test]
    fn deviance_zero_when_expected_equals_observed() {
        let data = brassica_dataset();
        let sat = crate::estimation::saturated_fit(&data).unwrap();
        // A spec whose pmf equals the empirical pmf would give zero; check
        // the identity deviance = 2(ll_sat − ll_model) instead for binomial.
        let fit = fit_mle(Family::Binomial, &data, &FitOptions::default()).unwrap();
        let dev = grouped_deviance(&fit.spec, &data).unwrap();
        assert!(dev > 0.0);
        let ll_model = log_likelihood(&fit.spec, &data).unwrap();
        assert_abs_diff_eq!(dev, 2.0 * (sat.loglik - ll_model), epsilon = 1e-9);
    }

    #[test]
    fn deviance_identity_across_families() {
        let data = brassica_dataset();
        let sat = crate::estimation::saturated_fit(&data).unwrap();
        for family in Family::ALL {
            let fit = fit_mle(family, &data, &FitOptions::default()).unwrap();
            let dev = grouped_deviance(&fit.spec, &data).unwrap();
            let ll = log_likelihood(&fit.spec, &data).unwrap();
            assert_abs_diff_eq!(dev, 2.0 * (sat.loglik - ll), epsilon = 1e-9);
        }
    }

    #[test]
    fn p_value_monotone_in_statistic() {
        let mut prev = 1.0;
        for i in 0..60 {
            let x = i as f64 * 0.5;
            let p = chi_square_sf(x, 3).unwrap();
            assert!(p <= prev + 1e-14);
            prev = p;
        }
    }
}
