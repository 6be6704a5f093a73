use proptest::prelude::*;
use reflect_core::analysis::*;
use reflect_core::model::{ParticipantId, StudyCondition};

/// Kruskal–Wallis straight from the definition: rank every observation by
/// counting how many are smaller and how many are equal, then apply the
/// tie-corrected formula.
fn kw_oracle(groups: &[Vec<f64>]) -> f64 {
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    let n = all.len() as f64;
    let rank = |x: f64| {
        let below = all.iter().filter(|&&y| y < x).count() as f64;
        let equal = all.iter().filter(|&&y| y == x).count() as f64;
        below + (equal + 1.0) / 2.0
    };
    let mut s = 0.0;
    for g in groups {
        let r: f64 = g.iter().map(|&x| rank(x)).sum();
        s += r * r / g.len() as f64;
    }
    let h = 12.0 / (n * (n + 1.0)) * s - 3.0 * (n + 1.0);
    let mut distinct: Vec<f64> = all.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let ties: f64 = distinct
        .iter()
        .map(|&v| {
            let t = all.iter().filter(|&&y| y == v).count() as f64;
            t * t * t - t
        })
        .sum();
    let c = 1.0 - ties / (n * n * n - n);
    if c <= 0.0 {
        0.0
    } else {
        h / c
    }
}

fn delta_oracle(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0i64;
    for x in a {
        for y in b {
            s += (x > y) as i64 - (x < y) as i64;
        }
    }
    s as f64 / (a.len() * b.len()) as f64
}

fn likert_groups(max_len: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec((1u8..=5).prop_map(f64::from), 1..=max_len), 3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn kruskal_wallis_matches_oracle(groups in likert_groups(5)) {
        let h = kruskal_wallis(&groups).unwrap().statistic;
        prop_assert!((h - kw_oracle(&groups).max(0.0)).abs() < 1e-12);
    }

    #[test]
    fn cliffs_delta_matches_pairs_and_is_antisymmetric(groups in likert_groups(8)) {
        let (a, b) = (&groups[0], &groups[1]);
        let d = cliffs_delta(a, b).unwrap();
        prop_assert_eq!(d, delta_oracle(a, b));
        prop_assert_eq!(d, -cliffs_delta(b, a).unwrap());
        prop_assert!((-1.0..=1.0).contains(&d));
    }

    #[test]
    fn shifting_every_value_changes_nothing(groups in likert_groups(6), shift in -20i32..20) {
        let moved: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().map(|x| x + shift as f64).collect()).collect();
        let (a, b) = (kruskal_wallis(&groups).unwrap(), kruskal_wallis(&moved).unwrap());
        prop_assert_eq!(a.statistic, b.statistic);
        prop_assert_eq!(a.p_value, b.p_value);
        prop_assert_eq!(cliffs_delta(&groups[0], &groups[2]).unwrap(), cliffs_delta(&moved[0], &moved[2]).unwrap());
    }

    #[test]
    fn epsilon_squared_increases_with_h(h1 in 0.0f64..40.0, dh in 0.001f64..10.0, n in 4usize..200) {
        prop_assert!(epsilon_squared(h1 + dh, n, 3).unwrap() > epsilon_squared(h1, n, 3).unwrap());
    }

    #[test]
    fn two_item_alpha_is_spearman_brown(r in -0.99f64..0.9999) {
        let a = two_item_alpha(r);
        prop_assert!(a < 1.0);
        // Spearman–Brown prophecy for doubling test length: n r / (1 + (n − 1) r), n = 2.
        prop_assert!((a - 2.0 * r / (1.0 + (2.0 - 1.0) * r)).abs() < 1e-12);
    }
}

#[test]
fn games_howell_matches_reference_fixture() {
    // Raw data, Welch statistics and p-values computed once with numpy and
    // scipy.stats.studentized_range (scipy 1.15.3).
    let a = [4.2, 5.1, 3.9, 4.8, 5.5, 4.4, 4.9, 5.0];
    let b = [5.9, 6.3, 5.1, 6.8, 7.2, 5.5];
    let c = [3.1, 3.8, 2.9, 4.6, 3.3, 2.2, 3.9, 4.1, 3.0, 3.6];
    let groups = [GroupMoments::of(&a), GroupMoments::of(&b), GroupMoments::of(&c)];
    let expected = [
        (0, 1, -3.7823334744080808, 8.183504349669791, 0.012734282318673573),
        (0, 2, 4.451685339095679, 15.972399429701484, 0.0011094158907779539),
        (1, 2, 6.876324455355699, 9.519278453314483, 0.00014694228802536458),
    ];
    let got = games_howell(&groups).unwrap();
    assert_eq!(got.len(), 3);
    for (g, (i, j, t, df, p)) in got.iter().zip(expected) {
        assert_eq!((g.first, g.second), (i, j));
        assert!((g.t - t).abs() < 1e-9);
        assert!((g.df - df).abs() < 1e-9);
        assert!((g.p_value - p).abs() < 1e-6, "pair {i}-{j}: {} vs {p}", g.p_value);
    }
}

#[test]
fn studentized_range_matches_reference_values() {
    // scipy.stats.studentized_range.sf(q, k, df)
    let cases = [
        (3.5, 3, 10.0, 0.07710331083841038),
        (2.0, 4, 5.0, 0.5424837272173337),
        (4.5, 3, 20.0, 0.012446417821735278),
        (1.2, 5, 30.0, 0.9130352556338368),
        (3.0, 3, 2.5, 0.2560600796562189),
        (5.0, 6, 60.0, 0.009820368062452789),
    ];
    for (q, k, df, want) in cases {
        let got = ptukey_sf(q, k, df);
        assert!((got - want).abs() < 1e-6, "q={q} k={k} df={df}: {got} vs {want}");
    }
}

fn survey_row(id: &str, condition: StudyCondition, likert: [u8; 18], tlx: [u8; 6]) -> SurveyRow {
    let mut q: Vec<Option<u8>> = likert.iter().map(|&v| Some(v)).collect();
    q.resize(28, None);
    SurveyRow {
        participant_id: ParticipantId::new(id),
        condition,
        q,
        tlx: tlx.map(Some),
    }
}

const CONDITIONS: [StudyCondition; 3] = [StudyCondition::Regular, StudyCondition::Deeper, StudyCondition::Control];

#[test]
fn identical_groups_report_no_differences() {
    let rows: Vec<SurveyRow> = CONDITIONS
        .iter()
        .flat_map(|&c| {
            (0..10).map(move |i| {
                let v = (i % 5 + 1) as u8;
                survey_row(&format!("{c}-{i}"), c, [v; 18], [v + 2; 6])
            })
        })
        .collect();
    let report = analyze(&rows).unwrap();
    for row in &report.subscales {
        assert!(row.kruskal_wallis.statistic.abs() < 1e-12);
        assert!((row.kruskal_wallis.p_value.unwrap() - 1.0).abs() < 1e-12);
        // n = 30, k = 3: ε² = (H − 2) / 27
        assert!((row.kruskal_wallis.effect_size.unwrap() - (-2.0 / 27.0)).abs() < 1e-12);
    }
    assert_eq!(report.tlx.len(), 6);
}

#[test]
fn shifted_deeper_group_separates_only_ae_d() {
    let mut rows = Vec::new();
    for &c in &CONDITIONS {
        for i in 0..10u8 {
            let base = 2 + i % 2;
            let mut likert = [base; 18];
            if c == StudyCondition::Deeper {
                likert[10] = base + 2;
                likert[11] = base + 2;
            }
            let mut tlx = [3 + i % 3; 6];
            if c == StudyCondition::Control {
                tlx[2] += 3;
            }
            rows.push(survey_row(&format!("{c}-{i}"), c, likert, tlx));
        }
    }
    let report = analyze(&rows).unwrap();
    let get = |s: Subscale| report.subscales.iter().find(|r| r.subscale == s).unwrap();
    let ae_d = get(Subscale::AeDeeper);
    assert!(ae_d.kruskal_wallis.p_value.unwrap() < 0.001);
    let eps = ae_d.kruskal_wallis.effect_size.unwrap();
    assert!((eps - (ae_d.kruskal_wallis.statistic - 2.0) / 27.0).abs() < 1e-12);
    for s in [Subscale::CeRegular, Subscale::CeDeeper] {
        assert!(get(s).kruskal_wallis.p_value.unwrap() > 0.05);
    }
    for t in &report.tlx {
        let p = t.kruskal_wallis.p_value.unwrap();
        if t.scale == TlxScale::TemporalDemand {
            assert!(p < 0.05);
        } else {
            assert!(p > 0.05);
        }
    }
    let table = report.to_table();
    assert!(table.contains("AE-D") && table.contains("NASA-TLX"));
}
