use super::{check_finite, mean, sample_variance, AnalysisError, Result};

/// Sample Pearson correlation.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(AnalysisError::InvalidCounts(format!(
            "pearson r needs two equal-length samples of at least 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    check_finite(x, "x")?;
    check_finite(y, "y")?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::ZeroVariance("pearson r of a constant sample".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman–Brown reliability of a two-item scale from the item correlation.
pub fn two_item_alpha(r: f64) -> f64 {
    2.0 * r / (1.0 + r)
}

/// Cronbach's α. `items` holds one column per item, each with one value per
/// respondent.
pub fn cronbach_alpha<I: AsRef<[f64]>>(items: &[I]) -> Result<f64> {
    let k = items.len();
    if k < 2 {
        return Err(AnalysisError::InvalidCounts(format!("cronbach alpha needs at least 2 items, got {k}")));
    }
    let n = items[0].as_ref().len();
    if n < 2 || items.iter().any(|c| c.as_ref().len() != n) {
        return Err(AnalysisError::InvalidCounts("items must have equal length of at least 2".into()));
    }
    for c in items {
        check_finite(c.as_ref(), "item")?;
    }
    let item_var: f64 = items.iter().map(|c| sample_variance(c.as_ref(), mean(c.as_ref()))).sum();
    let totals: Vec<f64> = (0..n).map(|i| items.iter().map(|c| c.as_ref()[i]).sum()).collect();
    let total_var = sample_variance(&totals, mean(&totals));
    if total_var == 0.0 {
        return Err(AnalysisError::ZeroVariance("total score is constant".into()));
    }
    let k = k as f64;
    Ok(k / (k - 1.0) * (1.0 - item_var / total_var))
}
