use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::survey::by_condition;
use super::{
    build_subscales, cliffs_delta, cronbach_alpha, games_howell, kruskal_wallis, pearson_r, tlx_summary,
    two_item_alpha, AnalysisError, Descriptives, GroupMoments, Result, StatResult, Subscale, SurveyRow, TlxScale,
};
use crate::model::StudyCondition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDelta {
    pub first: StudyCondition,
    pub second: StudyCondition,
    pub cliffs_delta: f64,
    pub games_howell_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubscaleRow {
    pub subscale: Subscale,
    pub groups: Vec<(StudyCondition, Descriptives)>,
    /// H with p and ε².
    pub kruskal_wallis: StatResult,
    pub significance: String,
    pub pairwise: Vec<PairwiseDelta>,
    /// Item correlation, reported for two-item subscales.
    pub reliability_r: Option<f64>,
    /// 2r/(1+r) for two-item subscales, Cronbach's α for the composite.
    pub reliability_alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TlxRow {
    pub scale: TlxScale,
    pub groups: Vec<(StudyCondition, Descriptives)>,
    pub kruskal_wallis: StatResult,
    pub significance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub n_participants: usize,
    pub conditions: Vec<StudyCondition>,
    pub subscales: Vec<SubscaleRow>,
    pub tlx: Vec<TlxRow>,
}

fn stars(p: Option<f64>) -> String {
    match p {
        Some(p) if p < 0.001 => "***",
        Some(p) if p < 0.01 => "**",
        Some(p) if p < 0.05 => "*",
        Some(_) => "n.s.",
        None => "",
    }
    .to_owned()
}

/// Subscale table plus TLX summary. TLX is skipped when no row carries
/// ratings; partial TLX data is an error.
pub fn analyze(rows: &[SurveyRow]) -> Result<AnalysisReport> {
    let scores = build_subscales(rows)?;
    let groups = by_condition(rows);
    if groups.len() < 2 {
        return Err(AnalysisError::DegenerateInput("need responses from at least 2 conditions".into()));
    }
    let conditions: Vec<StudyCondition> = groups.keys().copied().collect();

    let mut subscales = Vec::new();
    for s in Subscale::ALL {
        let samples: Vec<Vec<f64>> = conditions
            .iter()
            .map(|c| {
                scores
                    .iter()
                    .filter(|x| x.name == s && x.condition == *c)
                    .map(|x| x.value)
                    .collect()
            })
            .collect();
        let kw = kruskal_wallis(&samples)?;
        let gh = if samples.iter().all(|g| g.len() >= 2) {
            Some(games_howell(&samples.iter().map(|g| GroupMoments::of(g)).collect::<Vec<_>>())?)
        } else {
            None
        };
        let mut pairwise = Vec::new();
        for i in 0..conditions.len() {
            for j in i + 1..conditions.len() {
                let p = gh
                    .as_ref()
                    .and_then(|v| v.iter().find(|c| c.first == i && c.second == j))
                    .map_or(f64::NAN, |c| c.p_value);
                pairwise.push(PairwiseDelta {
                    first: conditions[i],
                    second: conditions[j],
                    cliffs_delta: cliffs_delta(&samples[i], &samples[j])?,
                    games_howell_p: p,
                });
            }
        }
        let items: Vec<Vec<f64>> = s
            .items()
            .iter()
            .map(|&q| rows.iter().map(|r| r.item(q).expect("validated by build_subscales") as f64).collect())
            .collect();
        let (r, alpha) = if items.len() == 2 {
            let r = pearson_r(&items[0], &items[1]).ok();
            (r, r.map(two_item_alpha))
        } else {
            (None, cronbach_alpha(&items).ok())
        };
        subscales.push(SubscaleRow {
            subscale: s,
            groups: conditions.iter().copied().zip(kw.group_descriptives.iter().copied()).collect(),
            significance: stars(kw.p_value),
            kruskal_wallis: kw,
            pairwise,
            reliability_r: r,
            reliability_alpha: alpha,
        });
    }

    let has_tlx = rows.iter().any(|r| r.tlx.iter().any(Option::is_some));
    let tlx = if has_tlx {
        tlx_summary(rows)?
            .into_iter()
            .map(|t| TlxRow {
                scale: t.scale,
                groups: t.conditions.iter().copied().zip(t.test.group_descriptives.iter().copied()).collect(),
                significance: stars(t.test.p_value),
                kruskal_wallis: t.test,
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(AnalysisReport {
        n_participants: rows.len(),
        conditions,
        subscales,
        tlx,
    })
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.filter(|x| x.is_finite()).map_or_else(|| "-".into(), |x| format!("{x:.digits$}"))
}

fn fmt_p(p: Option<f64>) -> String {
    match p {
        Some(p) if p < 0.001 => "<.001".into(),
        other => fmt_opt(other, 4),
    }
}

impl AnalysisReport {
    /// Plain-text table, one line per subscale and TLX scale.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<14}", "Scale");
        for c in &self.conditions {
            let _ = write!(out, " {:>14}", format!("{c} M (SD)"));
        }
        let _ = writeln!(out, " {:>7} {:>7} {:>7} {:>5}  Reliability", "H", "p", "eps2", "Sig.");
        for row in &self.subscales {
            let _ = write!(out, "{:<14}", row.subscale.label());
            for (_, d) in &row.groups {
                let _ = write!(out, " {:>14}", format!("{:.2} ({:.2})", d.mean, d.sd));
            }
            let kw = &row.kruskal_wallis;
            let rel = match (row.reliability_r, row.reliability_alpha) {
                (Some(r), Some(a)) => format!("r={r:.3}; alpha={a:.3}"),
                (None, Some(a)) => format!("alpha={a:.3}"),
                _ => "-".into(),
            };
            let _ = writeln!(
                out,
                " {:>7.2} {:>7} {:>7} {:>5}  {rel}",
                kw.statistic,
                fmt_p(kw.p_value),
                fmt_opt(kw.effect_size, 3),
                row.significance
            );
        }
        let _ = writeln!(out, "\nPairwise comparisons (Cliff's delta; Games-Howell p)");
        for row in &self.subscales {
            let parts: Vec<String> = row
                .pairwise
                .iter()
                .map(|p| {
                    format!(
                        "{} vs {}: delta={:.2}, p={}",
                        p.first,
                        p.second,
                        p.cliffs_delta,
                        fmt_p(Some(p.games_howell_p).filter(|x| x.is_finite()))
                    )
                })
                .collect();
            let _ = writeln!(out, "{:<14} {}", row.subscale.label(), parts.join("; "));
        }
        if !self.tlx.is_empty() {
            let _ = writeln!(out, "\nNASA-TLX");
            for row in &self.tlx {
                let _ = write!(out, "{:<16}", row.scale.label());
                for (_, d) in &row.groups {
                    let _ = write!(out, " {:>14}", format!("{:.2} ({:.2})", d.mean, d.sd));
                }
                let _ = writeln!(
                    out,
                    " H={:.2} p={} {}",
                    row.kruskal_wallis.statistic,
                    fmt_p(row.kruskal_wallis.p_value),
                    row.significance
                );
            }
        }
        out
    }
}
