use gann::model::{write_partial_effects_csv, FittedEstimator};
use gann::{
    fit, generate_binomial_fixture, generate_scenario, parse_formula, Dataset, FamilyKind, FitConfig, FittedModel,
    GannError, PredictType, Prediction, ScenarioSpec,
};

fn quick(seed: u64) -> FitConfig {
    FitConfig {
        num_units: vec![32],
        learning_rate: 0.01,
        batch_size: 32,
        seed: Some(seed),
        ..FitConfig::default()
    }
}

#[test]
fn csv_round_trip_then_fit_matches_in_memory_fit() {
    let sc = generate_scenario(&ScenarioSpec {
        n: 800,
        seed: 21,
        ..ScenarioSpec::default()
    })
    .unwrap();
    let mut buf = Vec::new();
    sc.train.write_csv(&mut buf).unwrap();
    let (reread, dropped) = Dataset::read_csv(buf.as_slice(), None).unwrap();
    assert_eq!(dropped, 0);
    assert_eq!(reread, sc.train);

    let formula = parse_formula("y ~ s(x1) + x2 + s(x3)").unwrap();
    let a = fit(&sc.train, &formula, &quick(3)).unwrap();
    let b = fit(&reread, &formula, &quick(3)).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn different_seeds_give_different_networks() {
    let sc = generate_scenario(&ScenarioSpec {
        n: 500,
        seed: 1,
        ..ScenarioSpec::default()
    })
    .unwrap();
    let formula = parse_formula("y ~ s(x1)").unwrap();
    let a = fit(&sc.train, &formula, &quick(1)).unwrap();
    let b = fit(&sc.train, &formula, &quick(2)).unwrap();
    assert_ne!(a.terms[0].estimator, b.terms[0].estimator);
}

#[test]
fn unset_seed_is_recorded_and_reproduces_the_fit() {
    let sc = generate_scenario(&ScenarioSpec {
        n: 400,
        seed: 5,
        ..ScenarioSpec::default()
    })
    .unwrap();
    let formula = parse_formula("y ~ s(x3)").unwrap();
    let first = fit(&sc.train, &formula, &FitConfig { seed: None, ..quick(0) }).unwrap();
    assert_eq!(first.config.seed, Some(first.seed));
    let again = fit(&sc.train, &formula, &first.config).unwrap();
    assert_eq!(first.terms, again.terms);
}

#[test]
fn binomial_fit_with_sample_weights() {
    let mut data = generate_binomial_fixture(1500, 2).unwrap();
    let w: Vec<f64> = (0..data.n_rows()).map(|i| if i % 3 == 0 { 2.0 } else { 1.0 }).collect();
    data.set_column("w", w).unwrap();
    let config = FitConfig {
        family: FamilyKind::Binomial,
        w_train: Some("w".into()),
        ..quick(8)
    };
    let model = fit(&data, &parse_formula("y ~ s(x)").unwrap(), &config).unwrap();
    let mu = model.predict_response(None).unwrap();
    assert!(mu.iter().all(|m| *m > 0.0 && *m < 1.0));
    let p = data.column("p").unwrap();
    let mae = mu.iter().zip(p).map(|(m, p)| (m - p).abs()).sum::<f64>() / mu.len() as f64;
    assert!(mae < 0.1, "{mae}");

    let link = model.predict_link(Some(&data)).unwrap();
    let Prediction::Values(response) = model.predict(Some(&data), PredictType::Response, None).unwrap() else {
        unreachable!()
    };
    for (eta, m) in link.iter().zip(&response) {
        assert!((m - 1.0 / (1.0 + (-eta).exp())).abs() < 1e-12 || *m == 1e-5 || *m == 1.0 - 1e-5);
    }
}

#[test]
fn mixed_linear_and_smooth_terms_recover_the_line() {
    let sc = generate_scenario(&ScenarioSpec {
        n: 3000,
        seed: 12,
        ..ScenarioSpec::default()
    })
    .unwrap();
    let model = fit(&sc.train, &parse_formula("y ~ s(x1) + x2 + s(x3)").unwrap(), &quick(4)).unwrap();
    let FittedEstimator::Linear { slope, .. } = model.terms[1].estimator else {
        panic!("x2 should be linear")
    };
    assert!((slope - 2.0).abs() < 0.1, "{slope}");
}

#[test]
fn partial_effects_export_is_long_format() {
    let sc = generate_scenario(&ScenarioSpec {
        n: 400,
        seed: 6,
        ..ScenarioSpec::default()
    })
    .unwrap();
    let model = fit(&sc.train, &parse_formula("y ~ s(x1) + x2").unwrap(), &quick(2)).unwrap();
    let effects = model.partial_effects(&["x2", "x1"], 5, None).unwrap();
    let mut buf = Vec::new();
    write_partial_effects_csv(&effects, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "term,x,f_hat");
    assert_eq!(lines.len(), 11);
    assert!(lines[1].starts_with("x2,") && lines[6].starts_with("x1,"));
}

#[test]
fn model_file_on_disk() {
    let sc = generate_scenario(&ScenarioSpec {
        n: 400,
        seed: 7,
        ..ScenarioSpec::default()
    })
    .unwrap();
    let model = fit(&sc.train, &parse_formula("y ~ s(x1) + s(x2)").unwrap(), &quick(5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    model.save(&path).unwrap();
    let loaded = FittedModel::load(&path).unwrap();
    assert_eq!(
        loaded.predict_link(Some(&sc.test)).unwrap(),
        model.predict_link(Some(&sc.test)).unwrap()
    );
    assert_eq!(loaded.summarize().lines().next(), model.summarize().lines().next());

    std::fs::write(&path, "").unwrap();
    assert!(matches!(FittedModel::load(&path), Err(GannError::CorruptModel(_))));
    assert!(matches!(
        FittedModel::load(dir.path().join("missing.json")),
        Err(GannError::Io(_))
    ));
}
