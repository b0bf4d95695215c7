//! Welch test p-values against values computed independently with SciPy's
//! `ttest_ind(equal_var=False)` and frozen in `data/welch_fixtures.json`.

use clinrisk_core::whatif::welch_t_test;
use serde::Deserialize;

#[derive(Deserialize)]
struct Fixture {
    a: Vec<f64>,
    b: Vec<f64>,
    t: f64,
    p_value: f64,
}

#[test]
fn p_values_match_reference() {
    let fixtures: Vec<Fixture> = serde_json::from_str(include_str!("data/welch_fixtures.json")).unwrap();
    assert_eq!(fixtures.len(), 20);
    for (i, f) in fixtures.iter().enumerate() {
        let r = welch_t_test(&f.a, &f.b).unwrap();
        assert!((r.p_value - f.p_value).abs() < 1e-6, "fixture {i}: {} vs {}", r.p_value, f.p_value);
        assert!((r.t - f.t).abs() < 1e-9 * f.t.abs().max(1.0), "fixture {i}: t {} vs {}", r.t, f.t);
    }
}
