//! Shared numerical kernel: gamma-family special functions, compensated
//! alternating sums, forward-difference tables, finite-difference
//! derivatives, and a small adaptive quadrature routine.

use crate::error::{Error, Result};

/// Lanczos coefficients, g = 7, 9 terms.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Natural log of the gamma function for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("log_gamma requires x > 0, got {x}")));
    }
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1-x) = π / sin(πx).
        let s = (std::f64::consts::PI * x).sin();
        return Ok(std::f64::consts::PI.ln() - s.ln() - lanczos_ln_gamma(1.0 - x));
    }
    Ok(lanczos_ln_gamma(x))
}

fn lanczos_ln_gamma(x: f64) -> f64 {
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    LN_SQRT_2PI + (x + 0.5) * t.ln() - t + a.ln()
}

/// Natural log of the binomial coefficient C(m, k).
pub fn log_binom(m: u64, k: u64) -> Result<f64> {
    if k > m {
        return Err(Error::Domain(format!("log_binom requires k <= m, got ({m}, {k})")));
    }
    if k == 0 || k == m {
        return Ok(0.0);
    }
    let m = m as f64;
    let k = k as f64;
    Ok(log_gamma(m + 1.0)? - log_gamma(k + 1.0)? - log_gamma(m - k + 1.0)?)
}

/// Binomial coefficient C(m, k) as an f64, exact for every m that fits the
/// integer path (m <= 100 covers all cluster sizes used here).
pub fn binom(m: u64, k: u64) -> Result<f64> {
    if k > m {
        return Err(Error::Domain(format!("binom requires k <= m, got ({m}, {k})")));
    }
    let k = k.min(m - k);
    if m <= 100 {
        let mut c: u128 = 1;
        for i in 1..=k as u128 {
            c = c * (m as u128 - k as u128 + i) / i;
        }
        Ok(c as f64)
    } else {
        Ok(log_binom(m, k)?.exp())
    }
}

/// Regularized upper incomplete gamma function Q(a, x).
pub fn reg_gamma_q(a: f64, x: f64) -> Result<f64> {
    if !(a > 0.0) || x < 0.0 {
        return Err(Error::Domain(format!("reg_gamma_q requires a > 0, x >= 0, got ({a}, {x})")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x < a + 1.0 {
        Ok(1.0 - gamma_p_series(a, x)?)
    } else {
        gamma_q_contfrac(a, x)
    }
}

fn gamma_p_series(a: f64, x: f64) -> Result<f64> {
    let ln_ga = log_gamma(a)?;
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..500 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-16 {
            return Ok(sum * (-x + a * x.ln() - ln_ga).exp());
        }
    }
    Err(Error::Quadrature(format!("incomplete gamma series stalled at a={a}, x={x}")))
}

fn gamma_q_contfrac(a: f64, x: f64) -> Result<f64> {
    // Modified Lentz continued fraction for Q(a, x).
    let ln_ga = log_gamma(a)?;
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            return Ok((-x + a * x.ln() - ln_ga).exp() * h);
        }
    }
    Err(Error::Quadrature(format!("incomplete gamma fraction stalled at a={a}, x={x}")))
}

/// Upper-tail probability of the chi-square distribution with `df` degrees
/// of freedom: P(X > x) = Q(df/2, x/2).
pub fn chi_square_sf(x: f64, df: u32) -> Result<f64> {
    if x < 0.0 || df == 0 {
        return Err(Error::Domain(format!("chi_square_sf requires x >= 0, df >= 1, got ({x}, {df})")));
    }
    reg_gamma_q(df as f64 / 2.0, x / 2.0)
}

/// Compensated (Neumaier) summation over an ordered slice of terms.
pub fn alternating_sum(terms: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &t in terms {
        let s = sum + t;
        if sum.abs() >= t.abs() {
            comp += (sum - s) + t;
        } else {
            comp += (t - s) + sum;
        }
        sum = s;
    }
    sum + comp
}

/// Compensated sum of products `Σ aᵢ·bᵢ`, with each product split into an
/// fma-exact head and tail so the accumulated result carries the full
/// cancellation of the alternating series.
pub fn sum_products(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    let add = |t: f64, sum: &mut f64, comp: &mut f64| {
        let s = *sum + t;
        if sum.abs() >= t.abs() {
            *comp += (*sum - s) + t;
        } else {
            *comp += (t - s) + *sum;
        }
        *sum = s;
    };
    for (a, b) in pairs {
        let head = a * b;
        let tail = a.mul_add(b, -head);
        add(head, &mut sum, &mut comp);
        add(tail, &mut sum, &mut comp);
    }
    sum + comp
}

/// Triangular table of forward differences. Row `r` holds
/// `Δʳc₀ … Δʳc_{m−r}` where `Δc_j = c_{j+1} − c_j`.
#[derive(Debug, Clone)]
pub struct DifferenceTable {
    pub rows: Vec<Vec<f64>>,
}

impl DifferenceTable {
    /// Entry `ν` of row `r`.
    pub fn entry(&self, r: usize, nu: usize) -> f64 {
        self.rows[r][nu]
    }
}

/// Build rows `0..=r_max` of the forward-difference table of `seq`.
pub fn difference_table(seq: &[f64], r_max: usize) -> Result<DifferenceTable> {
    if seq.is_empty() || r_max > seq.len() - 1 {
        return Err(Error::Domain(format!(
            "difference_table requires r_max <= len-1, got r_max={r_max}, len={}",
            seq.len()
        )));
    }
    let mut rows = Vec::with_capacity(r_max + 1);
    rows.push(seq.to_vec());
    for r in 1..=r_max {
        let prev: &Vec<f64> = &rows[r - 1];
        let row: Vec<f64> = prev.windows(2).map(|w| w[1] - w[0]).collect();
        debug_assert_eq!(row.len(), seq.len() - r);
        rows.push(row);
    }
    Ok(DifferenceTable { rows })
}

/// Central-difference gradient with per-coordinate step
/// `h_i = ε^{1/3}·max(1, |θ_i|)`.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, theta: &[f64]) -> Result<Vec<f64>> {
    let h0 = f64::EPSILON.cbrt();
    let mut grad = Vec::with_capacity(theta.len());
    let mut probe = theta.to_vec();
    for i in 0..theta.len() {
        let h = h0 * theta[i].abs().max(1.0);
        probe[i] = theta[i] + h;
        let fp = f(&probe);
        probe[i] = theta[i] - h;
        let fm = f(&probe);
        probe[i] = theta[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("gradient probe at coordinate {i}")));
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// Central-difference Hessian with `h_i = ε^{1/4}·max(1, |θ_i|)`,
/// symmetrized as (H + Hᵀ)/2.
pub fn fd_hessian<F: Fn(&[f64]) -> f64>(f: F, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = theta.len();
    let h0 = f64::EPSILON.powf(0.25);
    let steps: Vec<f64> = theta.iter().map(|t| h0 * t.abs().max(1.0)).collect();
    let f0 = f(theta);
    if !f0.is_finite() {
        return Err(Error::NonFinite("hessian center point".into()));
    }
    let mut hess = vec![vec![0.0; n]; n];
    let mut probe = theta.to_vec();
    let eval = |p: &[f64]| -> Result<f64> {
        let v = f(p);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("hessian probe".into()))
        }
    };
    for i in 0..n {
        probe[i] = theta[i] + steps[i];
        let fp = eval(&probe)?;
        probe[i] = theta[i] - steps[i];
        let fm = eval(&probe)?;
        probe[i] = theta[i];
        hess[i][i] = (fp - 2.0 * f0 + fm) / (steps[i] * steps[i]);
        for j in (i + 1)..n {
            probe[i] = theta[i] + steps[i];
            probe[j] = theta[j] + steps[j];
            let fpp = eval(&probe)?;
            probe[j] = theta[j] - steps[j];
            let fpm = eval(&probe)?;
            probe[i] = theta[i] - steps[i];
            probe[j] = theta[j] + steps[j];
            let fmp = eval(&probe)?;
            probe[j] = theta[j] - steps[j];
            let fmm = eval(&probe)?;
            probe[i] = theta[i];
            probe[j] = theta[j];
            let v = (fpp - fpm - fmp + fmm) / (4.0 * steps[i] * steps[j]);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    Ok(hess)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> Result<f64> {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol {
            return Ok(left + right + delta / 15.0);
        }
        if depth == 0 {
            return Err(Error::Quadrature("adaptive Simpson hit depth limit".into()));
        }
        // Floor the child tolerance at roundoff level so accumulated
        // floating point noise cannot force the recursion to the depth limit.
        let half = (0.5 * tol).max(f64::EPSILON * (left.abs() + right.abs()));
        Ok(recurse(f, a, fa, m, fm, left, lm, flm, half, depth - 1)?
            + recurse(f, m, fm, b, fb, right, rm, frm, half, depth - 1)?)
    }
    let fa = f(a);
    let fb = f(b);
    if !fa.is_finite() || !fb.is_finite() {
        return Err(Error::NonFinite("integrand endpoint".into()));
    }
    let (m, fm, whole) = simpson(&f, a, fa, b, fb);
    recurse(&f, a, fa, b, fb, whole, m, fm, tol, 48)
}
