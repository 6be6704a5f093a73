use statrs::function::gamma::gamma_ur;

use super::{check_finite, AnalysisError, Descriptives, Result, StatResult};

/// Midranks (1-based, ties share their average rank) in input order.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) hold ranks i+1..=j
        let r = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = r;
        }
        i = j;
    }
    ranks
}

/// Upper tail of the chi-square distribution.
pub fn chi_square_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        gamma_ur(df / 2.0, x / 2.0)
    }
}

/// Kruskal–Wallis H on midranks with the tie-correction divisor. When every
/// observation is tied the divisor vanishes and H is reported as 0 (p = 1).
pub fn kruskal_wallis<G: AsRef<[f64]>>(groups: &[G]) -> Result<StatResult> {
    if groups.len() < 2 {
        return Err(AnalysisError::DegenerateInput(format!("need at least 2 groups, got {}", groups.len())));
    }
    if let Some(i) = groups.iter().position(|g| g.as_ref().is_empty()) {
        return Err(AnalysisError::DegenerateInput(format!("group {} is empty", i + 1)));
    }
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.as_ref().iter().copied()).collect();
    check_finite(&pooled, "sample")?;
    let ranks = midranks(&pooled);
    let n = pooled.len() as f64;

    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let len = g.as_ref().len();
        let r: f64 = ranks[offset..offset + len].iter().sum();
        sum += r * r / len as f64;
        offset += len;
    }
    let h_raw = 12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0);

    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut ties = 0.0;
    for run in sorted.chunk_by(|a, b| a == b) {
        let t = run.len() as f64;
        ties += t * t * t - t;
    }
    let correction = 1.0 - ties / (n * n * n - n);
    let h = if correction <= 0.0 { 0.0 } else { (h_raw / correction).max(0.0) };
    let df = (groups.len() - 1) as f64;
    Ok(StatResult {
        test: "kruskal-wallis".into(),
        statistic: h,
        p_value: Some(chi_square_sf(h, df)),
        effect_size: epsilon_squared(h, pooled.len(), groups.len()).ok(),
        group_descriptives: groups.iter().map(|g| Descriptives::of(g.as_ref())).collect(),
    })
}

/// ε² = (H − k + 1) / (n − k).
pub fn epsilon_squared(h: f64, n_total: usize, k: usize) -> Result<f64> {
    if k < 2 || n_total <= k {
        return Err(AnalysisError::InvalidCounts(format!("need n > k >= 2, got n={n_total}, k={k}")));
    }
    Ok((h - k as f64 + 1.0) / (n_total - k) as f64)
}

/// Cliff's δ of `a` over `b`: share of pairs where `a` wins minus share
/// where it loses.
pub fn cliffs_delta(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(AnalysisError::DegenerateInput("cliff's delta needs two non-empty samples".into()));
    }
    check_finite(a, "first sample")?;
    check_finite(b, "second sample")?;
    let mut sorted = b.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mut greater, mut less) = (0i64, 0i64);
    for &x in a {
        let below = sorted.partition_point(|&y| y < x);
        let not_above = sorted.partition_point(|&y| y <= x);
        greater += below as i64;
        less += (sorted.len() - not_above) as i64;
    }
    Ok((greater - less) as f64 / (a.len() * b.len()) as f64)
}
