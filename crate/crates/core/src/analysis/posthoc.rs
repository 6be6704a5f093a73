use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use super::{AnalysisError, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5, 7).
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for i in 0..7 {
        let x = h * XGK[i];
        let pair = f(c - x) + f(c + x);
        kronrod += WGK[i] * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    (kronrod * h, (kronrod - gauss).abs() * h)
}

fn integrate(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (value, err) = gk15(f, a, b);
    if err <= tol || depth == 0 {
        return value;
    }
    let m = 0.5 * (a + b);
    integrate(f, a, m, tol / 2.0, depth - 1) + integrate(f, m, b, tol / 2.0, depth - 1)
}

fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Φ(z) − Φ(z − w), computed on whichever tail keeps precision.
fn band(z: f64, w: f64) -> f64 {
    if z - w >= 0.0 {
        norm_sf(z - w) - norm_sf(z)
    } else {
        norm_cdf(z) - norm_cdf(z - w)
    }
}

/// Range distribution of k standard normals (infinite degrees of freedom).
fn range_cdf(w: f64, k: u32) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let km1 = (k - 1) as i32;
    let f = |z: f64| norm_pdf(z) * band(z, w).powi(km1);
    (k as f64 * integrate(&f, -9.0, 9.0, 1e-12, 30)).clamp(0.0, 1.0)
}

/// CDF of the studentized range with `k` groups and `df` degrees of freedom.
pub fn ptukey_cdf(q: f64, k: u32, df: f64) -> f64 {
    if q.is_nan() || k < 2 || df.is_nan() || df <= 0.0 {
        return f64::NAN;
    }
    if q <= 0.0 {
        return 0.0;
    }
    if q.is_infinite() {
        return 1.0;
    }
    if df > 50_000.0 {
        return range_cdf(q, k);
    }
    // s = sqrt(chi²_df / df); integrate its density against the range CDF.
    let ln_c = 0.5 * df * df.ln() - ln_gamma(0.5 * df) - (0.5 * df - 1.0) * std::f64::consts::LN_2;
    let ln_density = |s: f64| ln_c + (df - 1.0) * s.ln() - 0.5 * df * s * s;
    let mode = if df > 1.0 { ((df - 1.0) / df).sqrt() } else { 0.0 };
    let peak = if mode > 0.0 { ln_density(mode) } else { ln_density(1e-3) };
    let spread = 1.0 / df.sqrt();
    let mut hi = mode.max(spread);
    while ln_density(hi) > peak - 46.0 {
        hi += spread;
    }
    let mut lo = mode;
    while lo > 0.0 && ln_density(lo) > peak - 46.0 {
        lo = (lo - spread).max(0.0);
    }
    let f = |s: f64| if s <= 0.0 { 0.0 } else { ln_density(s).exp() * range_cdf(q * s, k) };
    let total = if mode > lo {
        integrate(&f, lo, mode, 1e-10, 20) + integrate(&f, mode, hi, 1e-10, 20)
    } else {
        integrate(&f, lo, hi, 1e-10, 20)
    };
    total.clamp(0.0, 1.0)
}

/// Upper tail of the studentized range.
pub fn ptukey_sf(q: f64, k: u32, df: f64) -> f64 {
    (1.0 - ptukey_cdf(q, k, df)).clamp(0.0, 1.0)
}

/// Summary moments of one group; `variance` is the sample (n−1) variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMoments {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
}

impl GroupMoments {
    pub fn of(values: &[f64]) -> Self {
        let d = super::Descriptives::of(values);
        Self { n: d.n, mean: d.mean, variance: d.sd * d.sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub first: usize,
    pub second: usize,
    pub mean_diff: f64,
    pub std_error: f64,
    pub df: f64,
    /// Welch t; the studentized statistic is `q = |t|·√2`.
    pub t: f64,
    pub q: f64,
    pub p_value: f64,
}

/// Games–Howell comparisons for every pair `(i, j)` with `i < j`.
pub fn games_howell(groups: &[GroupMoments]) -> Result<Vec<PairwiseComparison>> {
    if groups.len() < 2 {
        return Err(AnalysisError::InvalidCounts(format!("need at least 2 groups, got {}", groups.len())));
    }
    for (i, g) in groups.iter().enumerate() {
        if g.n < 2 || !g.mean.is_finite() || !g.variance.is_finite() || g.variance < 0.0 {
            return Err(AnalysisError::InvalidCounts(format!(
                "group {} needs n >= 2 and a finite non-negative variance",
                i + 1
            )));
        }
    }
    let k = groups.len() as u32;
    let mut out = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let (a, b) = (groups[i], groups[j]);
            let (va, vb) = (a.variance / a.n as f64, b.variance / b.n as f64);
            let se = (va + vb).sqrt();
            let diff = a.mean - b.mean;
            let df = if se > 0.0 {
                (va + vb).powi(2) / (va * va / (a.n - 1) as f64 + vb * vb / (b.n - 1) as f64)
            } else {
                (a.n + b.n - 2) as f64
            };
            let (t, p) = if se > 0.0 {
                let t = diff / se;
                (t, ptukey_sf(t.abs() * std::f64::consts::SQRT_2, k, df))
            } else if diff == 0.0 {
                (0.0, 1.0)
            } else {
                (diff.signum() * f64::INFINITY, 0.0)
            };
            out.push(PairwiseComparison {
                first: i,
                second: j,
                mean_diff: diff,
                std_error: se,
                df,
                t,
                q: t.abs() * std::f64::consts::SQRT_2,
                p_value: p,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_group_range_has_closed_form() {
        // The range of two standard normals is |Z1 − Z2| ~ √2·|N(0,1)|.
        for w in [0.1, 0.5, 1.0, 2.0, 3.5, 5.0] {
            let want = 2.0 * norm_cdf(w / std::f64::consts::SQRT_2) - 1.0;
            assert!((range_cdf(w, 2) - want).abs() < 1e-9, "w={w}");
        }
    }

    #[test]
    fn two_group_studentized_range_matches_t() {
        // With k = 2, q/√2 is a |t| variable: P(Q > q) = P(|T_df| > q/√2).
        for (q, df) in [(1.0, 5.0), (2.5, 10.0), (4.0, 3.0), (3.0, 40.0)] {
            let t = q / std::f64::consts::SQRT_2;
            let x = df / (df + t * t);
            let two_sided = statrs::function::beta::beta_reg(df / 2.0, 0.5, x);
            assert!((ptukey_sf(q, 2, df) - two_sided).abs() < 1e-7, "q={q} df={df}");
        }
    }

    #[test]
    fn cdf_is_monotone() {
        let mut last = 0.0;
        for i in 1..40 {
            let c = ptukey_cdf(i as f64 * 0.2, 4, 12.0);
            assert!(c >= last - 1e-12);
            last = c;
        }
        assert!(last > 0.99);
    }

    #[test]
    fn identical_groups() {
        let g = GroupMoments { n: 8, mean: 3.0, variance: 1.2 };
        let r = games_howell(&[g, g]).unwrap();
        assert_eq!(r[0].q, 0.0);
        assert!((r[0].p_value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_variance_equal_means() {
        let g = GroupMoments { n: 4, mean: 2.0, variance: 0.0 };
        let r = games_howell(&[g, g, g]).unwrap();
        assert_eq!(r.len(), 3);
        assert!(r.iter().all(|c| c.p_value == 1.0));
    }

    #[test]
    fn invalid_counts() {
        let g = GroupMoments { n: 1, mean: 2.0, variance: 0.0 };
        assert!(games_howell(&[g, g]).is_err());
        let h = GroupMoments { n: 3, mean: 2.0, variance: -1.0 };
        assert!(games_howell(&[h, h]).is_err());
    }
}
