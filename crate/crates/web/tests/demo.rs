use radar_web::{compare_spread, lambda_curve, lambda_curve_js, recover_ontology};

#[test]
fn lambda_curve_runs_from_zero_to_near_lambda0() {
    let curve = lambda_curve(5e-4, 20.0, 11).unwrap();
    assert_eq!(curve.len(), 11);
    assert_eq!(curve[0].lambda, 0.0);
    assert_eq!(curve[10].p, 1.0);
    assert!((curve[10].lambda - 5e-4 * (2.0 / (1.0 + (-20.0f64).exp()) - 1.0)).abs() < 1e-15);
    assert!(curve.windows(2).all(|w| w[0].lambda <= w[1].lambda));
    assert_eq!(lambda_curve(1.0, 1.0, 0).unwrap().len(), 2);
}

#[test]
fn lambda_curve_export_is_json() {
    let text = lambda_curve_js(1.0, 5.0, 3).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 3);
    assert_eq!(v[1]["p"], 0.5);
}

#[test]
fn ontology_recovery_finds_planted_structure() {
    let r = recover_ontology(1000, 40, 1).unwrap();
    assert_eq!(r.n_tags, 40);
    assert_eq!(r.found_edges, r.edges.len());
    assert!(r.found_edges >= 39, "every non-top tag gets an edge");
    assert!((0.0..=1.0).contains(&r.precision) && (0.0..=1.0).contains(&r.recall));
    assert!(r.precision > 0.5, "precision {}", r.precision);
    assert!(r.recall > 0.3, "recall {}", r.recall);
}

#[test]
fn spread_comparison_reports_both_variants() {
    let r = compare_spread(0.7, 3, 0).unwrap();
    assert!((0.0..=1.0).contains(&r.full_map));
    assert!((0.0..=1.0).contains(&r.drop_r3_map));
    // Creators without an older followee video fall back to fresh uploads.
    assert!(r.imitated_fraction > 0.5 && r.imitated_fraction <= 0.7 + 0.07, "{}", r.imitated_fraction);
    assert_eq!(compare_spread(0.0, 1, 0).unwrap().imitated_fraction, 0.0);
}
