//! Descriptive statistics and correlation significance.
//!
//! Skewness is the adjusted Fisher–Pearson coefficient (G1) and kurtosis is
//! the bias-corrected excess estimator (G2). Both use the `n - 1` sample
//! standard deviation. P-values for Pearson's r come from the Student t
//! distribution, evaluated through the regularized incomplete beta function.

use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
    #[error("sample contains a non-finite value")]
    NonFiniteInput,
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("sample variance is zero")]
    ZeroVariance,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("correlation coefficient {0} outside [-1, 1]")]
    InvalidR(f64),
    #[error("argument outside the function domain: {0}")]
    DomainError(String),
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// Mean, G1 skewness and G2 excess kurtosis of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleStats {
    pub n: usize,
    pub mean: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

impl SampleStats {
    pub fn compute(xs: &[f64]) -> Result<Self> {
        Ok(Self {
            n: xs.len(),
            mean: mean(xs)?,
            skewness: sample_skewness(xs)?,
            excess_kurtosis: excess_kurtosis(xs)?,
        })
    }
}

fn check_finite(xs: &[f64]) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFiniteInput)
    }
}

pub fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(StatsError::EmptySample);
    }
    check_finite(xs)?;
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Central moment sums `(Σd², Σd³, Σd⁴)` around the mean.
struct CentralSums {
    mean: f64,
    s2: f64,
    s3: f64,
    s4: f64,
}

fn central_sums(xs: &[f64]) -> Result<CentralSums> {
    let m = mean(xs)?;
    let (mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0);
    for &x in xs {
        let d = x - m;
        let d2 = d * d;
        s2 += d2;
        s3 += d2 * d;
        s4 += d2 * d2;
    }
    // Rounding leaves tiny residuals for constant samples; treat anything at
    // the scale of the data's own precision as zero.
    let scale = xs.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
    let tol = 4.0 * f64::EPSILON * scale;
    if s2 == 0.0 || (s2 / xs.len() as f64).sqrt() <= tol {
        return Err(StatsError::ZeroVariance);
    }
    Ok(CentralSums { mean: m, s2, s3, s4 })
}

fn require(n: usize, needed: usize) -> Result<()> {
    if n < needed {
        Err(StatsError::InsufficientSamples { needed, got: n })
    } else {
        Ok(())
    }
}

/// Sample variance with the `n - 1` denominator.
pub fn sample_variance(xs: &[f64]) -> Result<f64> {
    require(xs.len(), 2)?;
    let sums = central_sums(xs)?;
    Ok(sums.s2 / (xs.len() - 1) as f64)
}

/// Adjusted Fisher–Pearson skewness G1.
pub fn sample_skewness(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(StatsError::EmptySample);
    }
    require(xs.len(), 3)?;
    let sums = central_sums(xs)?;
    let n = xs.len() as f64;
    let m3 = sums.s3 / n;
    let s = (sums.s2 / (n - 1.0)).sqrt();
    Ok(n * n / ((n - 1.0) * (n - 2.0)) * m3 / (s * s * s))
}

/// Bias-corrected excess kurtosis G2.
pub fn excess_kurtosis(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(StatsError::EmptySample);
    }
    require(xs.len(), 4)?;
    let sums = central_sums(xs)?;
    let n = xs.len() as f64;
    let var = sums.s2 / (n - 1.0);
    let lead = n * (n + 1.0) / ((n - 1.0) * (n - 2.0) * (n - 3.0));
    let tail = 3.0 * (n - 1.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0));
    Ok(lead * sums.s4 / (var * var) - tail)
}

/// Pearson product-moment correlation, clamped to `[-1, 1]`.
pub fn pearson_r(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    require(xs.len(), 2)?;
    let sx = central_sums(xs)?;
    let sy = central_sums(ys)?;
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - sx.mean) * (y - sy.mean))
        .sum();
    let r = sxy / (sx.s2.sqrt() * sy.s2.sqrt());
    Ok(r.clamp(-1.0, 1.0))
}

/// Two-sided p-value for the null hypothesis of zero correlation.
///
/// With `t = r·√(df/(1−r²))` and `df = n − 2`, the tail probability
/// `2·P(T ≥ |t|)` equals `I_{df/(df+t²)}(df/2, 1/2)`, and the beta argument
/// simplifies to `1 − r²`.
pub fn pearson_p_two_sided(r: f64, n: usize) -> Result<f64> {
    require(n, 3)?;
    if !r.is_finite() || r.abs() > 1.0 {
        return Err(StatsError::InvalidR(r));
    }
    if r.abs() == 1.0 {
        return Ok(0.0);
    }
    let df = (n - 2) as f64;
    let x = (1.0 - r) * (1.0 + r);
    Ok(reg_incomplete_beta(df / 2.0, 0.5, x)?.clamp(0.0, 1.0))
}

const BETA_CF_MAX_ITER: usize = 10_000;
const BETA_CF_EPS: f64 = 1e-15;
const LENTZ_TINY: f64 = 1e-300;

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn reg_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && a.is_finite()) || !(b > 0.0 && b.is_finite()) {
        return Err(StatsError::DomainError(format!("a={a}, b={b} must be positive")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(StatsError::DomainError(format!("x={x} outside [0, 1]")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    if x > (a + 1.0) / (a + b + 2.0) {
        Ok(1.0 - beta_continued_fraction(b, a, 1.0 - x)?)
    } else {
        beta_continued_fraction(a, b, x)
    }
}

/// `I_x(a, b)` by the modified Lentz evaluation of the standard continued
/// fraction. Converges fast for `x < (a+1)/(a+b+2)`.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> Result<f64> {
    let ln_front =
        a * x.ln() + b * (1.0 - x).ln() - (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)) - a.ln();
    let front = ln_front.exp();

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < LENTZ_TINY {
        d = LENTZ_TINY;
    }
    d = 1.0 / d;
    let mut h = d;

    for m in 1..=BETA_CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;

        // even step
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < LENTZ_TINY {
            d = LENTZ_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < LENTZ_TINY {
            c = LENTZ_TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        // odd step
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < LENTZ_TINY {
            d = LENTZ_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < LENTZ_TINY {
            c = LENTZ_TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;

        if (delta - 1.0).abs() < BETA_CF_EPS {
            return Ok(front * h);
        }
    }
    Err(StatsError::DomainError(format!(
        "continued fraction did not converge for a={a}, b={b}, x={x}"
    )))
}

/// Map a degenerate-sample error to `0.0`, passing other errors through.
///
/// Feature engineering uses this for short or constant windows.
pub fn zero_if_degenerate(result: Result<f64>) -> Result<(f64, bool)> {
    match result {
        Ok(v) => Ok((v, false)),
        Err(StatsError::ZeroVariance) | Err(StatsError::InsufficientSamples { .. }) => {
            Ok((0.0, true))
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn mean_examples() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert_eq!(mean(&[5.0]).unwrap(), 5.0);
        assert_eq!(mean(&[]), Err(StatsError::EmptySample));
        assert_eq!(mean(&[1.0, f64::NAN]), Err(StatsError::NonFiniteInput));
    }

    #[test]
    fn skewness_examples() {
        assert!(close(sample_skewness(&[1.0, 2.0, 3.0]).unwrap(), 0.0, 1e-15));
        // m3 = 2/27, s = 1/√3, n²/((n-1)(n-2)) = 9/2  →  √3
        assert!(close(sample_skewness(&[0.0, 0.0, 1.0]).unwrap(), 3f64.sqrt(), 1e-12));
        assert_eq!(sample_skewness(&[4.0, 4.0, 4.0]), Err(StatsError::ZeroVariance));
        assert_eq!(
            sample_skewness(&[1.0, 2.0]),
            Err(StatsError::InsufficientSamples { needed: 3, got: 2 })
        );
    }

    #[test]
    fn kurtosis_examples() {
        // Σd⁴ = 2, s² = 2/3, lead = 20/6, tail = 27/2  →  15 - 13.5
        assert!(close(excess_kurtosis(&[-1.0, 0.0, 0.0, 1.0]).unwrap(), 1.5, 1e-12));
        assert_eq!(
            excess_kurtosis(&[1.0, 2.0, 3.0]),
            Err(StatsError::InsufficientSamples { needed: 4, got: 3 })
        );
        assert_eq!(excess_kurtosis(&[7.0; 4]), Err(StatsError::ZeroVariance));
    }

    #[test]
    fn near_constant_prices_are_zero_variance() {
        let xs = [0.1 + 0.2, 0.3, 0.30000000000000004, 0.3];
        assert_eq!(sample_skewness(&xs), Err(StatsError::ZeroVariance));
    }

    #[test]
    fn pearson_examples() {
        let xs: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin() + i as f64 * 0.1).collect();
        let affine: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!(close(pearson_r(&xs, &affine).unwrap(), 1.0, 1e-14));
        assert!(close(pearson_r(&xs, &neg).unwrap(), -1.0, 1e-14));
        assert!(matches!(
            pearson_r(&xs, &xs[1..]),
            Err(StatsError::LengthMismatch { .. })
        ));
        assert_eq!(pearson_r(&xs, &[3.0; 20]), Err(StatsError::ZeroVariance));
        assert!(matches!(
            pearson_r(&[1.0], &[2.0]),
            Err(StatsError::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn p_value_limits() {
        assert!(close(pearson_p_two_sided(0.0, 10).unwrap(), 1.0, 1e-15));
        assert_eq!(pearson_p_two_sided(1.0, 10).unwrap(), 0.0);
        assert_eq!(pearson_p_two_sided(-1.0, 10).unwrap(), 0.0);
        assert!(matches!(pearson_p_two_sided(1.2, 10), Err(StatsError::InvalidR(_))));
        assert!(matches!(
            pearson_p_two_sided(0.5, 2),
            Err(StatsError::InsufficientSamples { .. })
        ));
        let p = pearson_p_two_sided(0.6, 10).unwrap();
        assert!(close(p, 0.067, 5e-4), "p = {p}");
    }

    #[test]
    fn incomplete_beta_boundaries() {
        assert_eq!(reg_incomplete_beta(2.0, 3.0, 0.0).unwrap(), 0.0);
        assert_eq!(reg_incomplete_beta(2.0, 3.0, 1.0).unwrap(), 1.0);
        assert!(close(reg_incomplete_beta(1.0, 1.0, 0.3).unwrap(), 0.3, 1e-14));
        assert!(close(reg_incomplete_beta(0.5, 0.5, 0.5).unwrap(), 0.5, 1e-14));
        assert!(reg_incomplete_beta(0.0, 1.0, 0.5).is_err());
        assert!(reg_incomplete_beta(1.0, 1.0, 1.5).is_err());
    }

    /// For integer a, b: I_x(a,b) = Σ_{j=a}^{a+b-1} C(a+b-1, j) x^j (1-x)^{a+b-1-j}.
    #[test]
    fn incomplete_beta_matches_binomial_tail() {
        fn binom(n: u32, k: u32) -> f64 {
            (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
        }
        for a in 1..8u32 {
            for b in 1..8u32 {
                for &x in &[0.05f64, 0.2, 0.5, 0.77, 0.95] {
                    let n = a + b - 1;
                    let expected: f64 = (a..=n)
                        .map(|j| binom(n, j) * x.powi(j as i32) * (1.0 - x).powi((n - j) as i32))
                        .sum();
                    let got = reg_incomplete_beta(a as f64, b as f64, x).unwrap();
                    assert!(close(got, expected, 1e-13), "a={a} b={b} x={x}: {got} vs {expected}");
                }
            }
        }
    }

    #[test]
    fn degenerate_maps_to_zero() {
        assert_eq!(zero_if_degenerate(sample_skewness(&[1.0])).unwrap(), (0.0, true));
        assert_eq!(zero_if_degenerate(sample_skewness(&[2.0; 5])).unwrap(), (0.0, true));
        assert!(zero_if_degenerate(sample_skewness(&[])).is_err());
    }
}
