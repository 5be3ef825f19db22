//! Special functions behind the t, noncentral t and normal distributions.
//!
//! Everything here works in `f64`. The incomplete beta function is evaluated
//! with a modified-Lentz continued fraction; log-beta prefactors for large
//! parameters use Stirling-series differences so that cancellation between
//! large `ln Γ` values does not eat the available precision.

use std::f64::consts::{PI, SQRT_2};

use super::StatError;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;
const CF_MAX_ITER: usize = 20_000;
const TINY: f64 = 1e-300;

/// Lanczos coefficients (g = 671/128, 14 terms).
#[allow(clippy::excessive_precision)]
const LANCZOS: [f64; 14] = [
    57.156_235_665_862_923_5,
    -59.597_960_355_475_491_2,
    14.136_097_974_741_747_1,
    -0.491_913_816_097_620_199,
    0.339_946_499_848_118_887e-4,
    0.465_236_289_270_485_756e-4,
    -0.983_744_753_048_795_646e-4,
    0.158_088_703_224_912_494e-3,
    -0.210_264_441_724_104_883e-3,
    0.217_439_618_115_212_643e-3,
    -0.164_318_106_536_763_890e-3,
    0.844_182_239_838_527_433e-4,
    -0.261_908_384_015_814_087e-4,
    0.368_991_826_595_316_234e-5,
];

/// Remainder of Stirling's series, `ln Γ(x) - [(x - ½) ln x - x + ln √(2π)]`.
/// Accurate to ~1e-14 absolute for `x >= 10`.
fn stirling_remainder(x: f64) -> f64 {
    let r = 1.0 / x;
    let r2 = r * r;
    r * (1.0 / 12.0
        - r2 * (1.0 / 360.0
            - r2 * (1.0 / 1260.0 - r2 * (1.0 / 1680.0 - r2 * (1.0 / 1188.0 - r2 * 691.0 / 360_360.0)))))
}

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x >= 10.0 {
        return (x - 0.5) * x.ln() - x + LN_SQRT_2PI + stirling_remainder(x);
    }
    let mut y = x;
    let tmp = x + 5.242_187_5;
    let tmp = (x + 0.5) * tmp.ln() - tmp;
    let mut ser = 0.999_999_999_999_997_1;
    for c in LANCZOS {
        y += 1.0;
        ser += c / y;
    }
    tmp + (2.506_628_274_631_000_5 * ser / x).ln()
}

/// `ln Γ(a + b) - ln Γ(b)` for `b >= 10`, without forming either large term.
fn ln_gamma_shift(b: f64, a: f64) -> f64 {
    (b - 0.5) * (a / b).ln_1p() + a * ((a + b).ln() - 1.0) + stirling_remainder(a + b)
        - stirling_remainder(b)
}

/// Natural log of the beta function `B(a, b)`.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    let (p, q) = if a <= b { (a, b) } else { (b, a) };
    if p >= 10.0 {
        let s = p + q;
        LN_SQRT_2PI - 0.5 * s.ln()
            + (p - 0.5) * (-q / s).ln_1p()
            + (q - 0.5) * (-p / s).ln_1p()
            + stirling_remainder(p)
            + stirling_remainder(q)
            - stirling_remainder(s)
    } else if q >= 10.0 {
        ln_gamma(p) - ln_gamma_shift(q, p)
    } else {
        ln_gamma(p) + ln_gamma(q) - ln_gamma(p + q)
    }
}

/// `ln[x^a y^b / B(a, b)]` with `y = 1 - x` supplied separately.
fn ln_beta_prefactor(a: f64, b: f64, x: f64, y: f64) -> f64 {
    if a.min(b) >= 10.0 {
        // Expand around the mode of the integrand so the large terms cancel
        // analytically instead of numerically.
        let s = a + b;
        let p = a / s;
        let q = b / s;
        a * ((x - p) / p).ln_1p() + b * ((y - q) / q).ln_1p() + 0.5 * (a * b / s).ln()
            - LN_SQRT_2PI
            - (stirling_remainder(a) + stirling_remainder(b) - stirling_remainder(s))
    } else {
        a * x.ln() + b * y.ln() - ln_beta(a, b)
    }
}

/// Continued fraction for `I_x(a, b)` (modified Lentz). Converges quickly for
/// `x < (a + 1) / (a + b + 2)`.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> Result<f64, StatError> {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() <= f64::EPSILON {
            return Ok(h);
        }
    }
    Err(StatError::NoConvergence(format!(
        "incomplete beta continued fraction did not converge for a={a}, b={b}, x={x}"
    )))
}

/// `I_x(a, b)` where the caller passes both `x` and `y = 1 - x`, so that
/// values of `x` close to 1 keep full precision in `y`.
pub(crate) fn inc_beta_xy(a: f64, b: f64, x: f64, y: f64) -> Result<f64, StatError> {
    if x <= 0.0 {
        return Ok(0.0);
    }
    if y <= 0.0 {
        return Ok(1.0);
    }
    if x < (a + 1.0) / (a + b + 2.0) {
        let front = ln_beta_prefactor(a, b, x, y).exp() / a;
        Ok((front * beta_continued_fraction(a, b, x)?).clamp(0.0, 1.0))
    } else {
        let front = ln_beta_prefactor(b, a, y, x).exp() / b;
        Ok((1.0 - front * beta_continued_fraction(b, a, y)?).clamp(0.0, 1.0))
    }
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64, StatError> {
    if !(a > 0.0 && a.is_finite()) || !(b > 0.0 && b.is_finite()) {
        return Err(StatError::InvalidArgument(format!(
            "incomplete beta needs a > 0 and b > 0, got a={a}, b={b}"
        )));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(StatError::InvalidArgument(format!(
            "incomplete beta needs 0 <= x <= 1, got x={x}"
        )));
    }
    inc_beta_xy(a, b, x, 1.0 - x)
}

/// Complementary error function for `x >= 0`.
fn erfc_nonneg(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x > 27.5 {
        // e^{-x²} underflows.
        return 0.0;
    }
    if x < 2.5 {
        // erf(x) = 2/√π · e^{-x²} · Σ 2ⁿ x^{2n+1} / (2n+1)!!; all terms positive.
        let x2 = x * x;
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term > sum * 1e-17 {
            n += 1.0;
            term *= 2.0 * x2 / (2.0 * n + 1.0);
            sum += term;
        }
        1.0 - FRAC_2_SQRT_PI * (-x2).exp() * sum
    } else {
        // erfc(x) = e^{-x²}/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
        let mut f = x;
        let mut c = x;
        let mut d = 0.0;
        for n in 1..500 {
            let an = n as f64 * 0.5;
            d = x + an * d;
            if d.abs() < TINY {
                d = TINY;
            }
            c = x + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() <= f64::EPSILON {
                break;
            }
        }
        (-x * x).exp() / (f * PI.sqrt())
    }
}

/// Standard normal CDF Φ(z).
pub fn normal_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    let tail = 0.5 * erfc_nonneg(z.abs() / SQRT_2);
    if z < 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Standard normal survival function `1 - Φ(z)`, accurate in the upper tail.
pub fn normal_sf(z: f64) -> f64 {
    normal_cdf(-z)
}

fn check_df(df: f64) -> Result<(), StatError> {
    if df > 0.0 && !df.is_nan() {
        Ok(())
    } else {
        Err(StatError::InvalidArgument(format!(
            "degrees of freedom must be positive, got {df}"
        )))
    }
}

/// `P(T <= -|t|)` for central t with `df` degrees of freedom.
fn student_t_lower_tail(t: f64, df: f64) -> Result<f64, StatError> {
    if t.is_infinite() {
        return Ok(0.0);
    }
    if df.is_infinite() {
        return Ok(normal_cdf(-t.abs()));
    }
    let t2 = t * t;
    let x = df / (df + t2);
    let y = t2 / (df + t2);
    Ok(0.5 * inc_beta_xy(0.5 * df, 0.5, x, y)?)
}

/// CDF of the central Student t distribution.
pub fn student_t_cdf(t: f64, df: f64) -> Result<f64, StatError> {
    check_df(df)?;
    if t.is_nan() {
        return Err(StatError::InvalidArgument("t is NaN".into()));
    }
    let tail = student_t_lower_tail(t, df)?;
    Ok(if t > 0.0 { 1.0 - tail } else { tail })
}

/// Survival function `P(T > t)` of the central Student t distribution.
pub fn student_t_sf(t: f64, df: f64) -> Result<f64, StatError> {
    student_t_cdf(-t, df)
}

/// Density of the central Student t distribution.
pub fn student_t_pdf(t: f64, df: f64) -> Result<f64, StatError> {
    check_df(df)?;
    let ln = -0.5 * (df + 1.0) * (t * t / df).ln_1p() - 0.5 * df.ln() - ln_beta(0.5, 0.5 * df);
    Ok(ln.exp())
}

/// Quantile function of the central Student t distribution.
pub fn student_t_quantile(p: f64, df: f64) -> Result<f64, StatError> {
    check_df(df)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(StatError::InvalidArgument(format!(
            "quantile probability must lie in (0, 1), got {p}"
        )));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    // Solve P(T > t) = tail for t > 0 and mirror.
    let tail = p.min(1.0 - p);
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    while student_t_sf(hi, df)? > tail {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return Err(StatError::NoConvergence(format!(
                "t quantile bracket overflow for p={p}, df={df}"
            )));
        }
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..300 {
        let f = student_t_sf(t, df)? - tail;
        if f == 0.0 {
            break;
        }
        if f > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let pdf = student_t_pdf(t, df)?;
        let newton = t + f / pdf;
        let next = if pdf > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - t).abs() <= 4.0 * f64::EPSILON * t.abs() || hi - lo <= f64::EPSILON * hi {
            t = next;
            break;
        }
        t = next;
    }
    Ok(if p > 0.5 { t } else { -t })
}

/// CDF of the noncentral t distribution with `df` degrees of freedom and
/// noncentrality `nc`.
///
/// For `x >= 0` this sums the Poisson-weighted incomplete beta series
/// `Φ(-nc) + ½ Σ_j [p_j I_y(j + ½, df/2) + q_j I_y(j + 1, df/2)]`,
/// `y = x² / (x² + df)`, starting at the mode of the Poisson weights and
/// walking outwards in both directions. Negative `x` uses
/// `F(x; df, nc) = 1 - F(-x; df, -nc)`.
pub fn noncentral_t_cdf(x: f64, df: f64, nc: f64) -> Result<f64, StatError> {
    check_df(df)?;
    if x.is_nan() || !nc.is_finite() {
        return Err(StatError::InvalidArgument(format!(
            "noncentral t needs finite arguments, got x={x}, nc={nc}"
        )));
    }
    if nc == 0.0 {
        return student_t_cdf(x, df);
    }
    if x < 0.0 {
        return Ok((1.0 - nct_cdf_nonneg(-x, df, -nc)?).clamp(0.0, 1.0));
    }
    Ok(nct_cdf_nonneg(x, df, nc)?.clamp(0.0, 1.0))
}

fn nct_cdf_nonneg(x: f64, df: f64, nc: f64) -> Result<f64, StatError> {
    let base = normal_cdf(-nc);
    if x == 0.0 {
        return Ok(base);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    if df.is_infinite() {
        return Ok(normal_cdf(x - nc));
    }
    let x2 = x * x;
    let y = x2 / (x2 + df);
    let yc = df / (x2 + df);
    let b = 0.5 * df;
    let lambda = 0.5 * nc * nc;
    let ln_lambda = lambda.ln();
    let q_scale = nc / SQRT_2;

    let term = |j: f64| -> Result<(f64, f64), StatError> {
        let base_ln = -lambda + j * ln_lambda;
        let p = (base_ln - ln_gamma(j + 1.0)).exp();
        let q = q_scale * (base_ln - ln_gamma(j + 1.5)).exp();
        let weight = p.abs() + q.abs();
        let value = p * inc_beta_xy(j + 0.5, b, y, yc)? + q * inc_beta_xy(j + 1.0, b, y, yc)?;
        Ok((value, weight))
    };

    let mode = lambda.floor();
    let mut sum = 0.0;
    let max_terms = 200_000.0 + 20.0 * lambda.sqrt();

    // Beyond the mode both the Poisson weights and the incomplete beta values
    // decrease, so the terms themselves bound the remainder.
    let mut j = mode;
    loop {
        let (value, weight) = term(j)?;
        sum += value;
        if j > mode && (value.abs() < 1e-17 || weight < 1e-17) {
            break;
        }
        j += 1.0;
        if j - mode > max_terms {
            return Err(StatError::NoConvergence(format!(
                "noncentral t series did not converge for x={x}, df={df}, nc={nc}"
            )));
        }
    }
    // Below the mode the incomplete beta values grow towards 1, so only the
    // weights bound the remainder.
    let mut j = mode - 1.0;
    while j >= 0.0 {
        let (value, weight) = term(j)?;
        sum += value;
        if weight < 1e-17 {
            break;
        }
        j -= 1.0;
    }
    Ok(base + 0.5 * sum)
}

/// Survival function of the noncentral t distribution.
pub fn noncentral_t_sf(x: f64, df: f64, nc: f64) -> Result<f64, StatError> {
    Ok((1.0 - noncentral_t_cdf(x, df, nc)?).clamp(0.0, 1.0))
}
