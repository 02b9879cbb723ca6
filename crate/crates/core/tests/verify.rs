use asmpg::verify::{run_suite, Suite, VerifyOptions, REPORT_VERSION};
use asmpg::Error;

#[test]
fn every_suite_passes() {
    let report = run_suite(Suite::All, &VerifyOptions::default()).unwrap();
    for c in &report.checks {
        println!("{} computed={:.3e} bound={:.3e} pass={}", c.name, c.computed, c.bound_or_reference, c.pass);
    }
    assert!(report.pass);
    assert_eq!(report.version, REPORT_VERSION);
    let names: Vec<&str> = report.checks.iter().map(|c| c.name.as_str()).collect();
    for prefix in ["theorem1.", "theorem2.", "smoothness.", "softmax_bounds.", "ideal_asd."] {
        assert!(names.iter().any(|n| n.starts_with(prefix)), "{prefix}");
    }
}

#[test]
fn report_serializes_with_fixed_keys() {
    let report = run_suite(Suite::SoftmaxBounds, &VerifyOptions::default()).unwrap();
    let json = serde_json::to_value(&report).unwrap();
    assert_eq!(json["suite"], "softmax_bounds");
    assert_eq!(json["checks"][0]["name"], "softmax_bounds.score_norm");
    for key in ["name", "computed", "bound_or_reference", "pass"] {
        assert!(json["checks"][0].get(key).is_some(), "{key}");
    }
}

#[test]
fn tiny_budget_names_the_failing_check() {
    let opts = VerifyOptions {
        budget: 10,
        ..Default::default()
    };
    let err = run_suite(Suite::Theorem1, &opts).unwrap_err();
    assert!(err.check.starts_with("theorem1"));
    assert!(matches!(err.source, Error::Budget { .. }), "{}", err.source);
}

#[test]
fn suite_names_round_trip() {
    for name in Suite::NAMES {
        assert_eq!(name.parse::<Suite>().unwrap().name(), name);
    }
    assert!(matches!("theorem7".parse::<Suite>(), Err(Error::Config(_))));
}
