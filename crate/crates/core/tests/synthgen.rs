use countsel::dataset::{read_csv, schema_of, to_csv_bytes};
use countsel::synth::{generate, SynthSpec, TrueEffect};

#[test]
fn response_mean_matches_expected_mean() {
    let spec = SynthSpec {
        n: 20_000,
        ..SynthSpec::demo(5)
    };
    let d = generate(&spec).unwrap();
    let x = |name: &str| d.covariate(name).unwrap().values.clone();
    let num = |name: &str| match x(name) {
        countsel::dataset::CovariateValues::Numeric(v) => v,
        _ => unreachable!(),
    };
    let (x1, x2, x3, x4) = (num("x1"), num("x2"), num("x3"), num("x4"));
    let mu: Vec<f64> = (0..spec.n)
        .map(|i| (0.5 + 0.6 * x1[i] - 0.5 * x2[i] + 0.5 * x3[i] * x4[i]).exp())
        .collect();
    let y = d.response_f64();
    let n = spec.n as f64;
    let mean_y = y.iter().sum::<f64>() / n;
    let mean_mu = mu.iter().sum::<f64>() / n;
    let resid: Vec<f64> = y.iter().zip(&mu).map(|(a, b)| a - b).collect();
    let rm = resid.iter().sum::<f64>() / n;
    let se = (resid.iter().map(|r| (r - rm) * (r - rm)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!((mean_y - mean_mu).abs() <= 3.0 * se, "{mean_y} vs {mean_mu} (se {se})");
}

#[test]
fn unit_rate_moments() {
    let spec = SynthSpec {
        n: 50_000,
        numeric: 1,
        numeric_mean: 0.0,
        numeric_sd: 1.0,
        categorical_levels: vec![],
        effects: vec![],
        intercept: 0.0,
        seed: 17,
        response: "y".into(),
    };
    let y = generate(&spec).unwrap().response_f64();
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    let v = y.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0);
    // Var(mean) = 1/n; Var(sample variance) ~ (mu4 - 1)/n = 3/n for Poisson(1)
    assert!((m - 1.0).abs() <= 3.0 / n.sqrt(), "{m}");
    assert!((v - 1.0).abs() <= 3.0 * (3.0 / n).sqrt(), "{v}");
}

#[test]
fn csv_round_trip() {
    let spec = SynthSpec::demo(8);
    let d = generate(&spec).unwrap();
    let bytes = to_csv_bytes(&d).unwrap();
    let back = read_csv(&bytes[..], &schema_of(&d)).unwrap();
    assert_eq!(back, d);
}

#[test]
fn level_effects_shift_the_mean() {
    let spec = SynthSpec {
        n: 30_000,
        numeric: 1,
        categorical_levels: vec![3],
        effects: vec![TrueEffect {
            term: "c1=c".into(),
            coefficient: 1.0,
        }],
        intercept: 0.0,
        ..SynthSpec::demo(2)
    };
    let d = generate(&spec).unwrap();
    let levels = match &d.covariate("c1").unwrap().values {
        countsel::dataset::CovariateValues::Categorical(v) => v.clone(),
        _ => unreachable!(),
    };
    let mean_of = |l: &str| {
        let ys: Vec<f64> = levels
            .iter()
            .zip(d.response())
            .filter(|(v, _)| *v == l)
            .map(|(_, y)| *y as f64)
            .collect();
        ys.iter().sum::<f64>() / ys.len() as f64
    };
    assert!((mean_of("a") - 1.0).abs() < 0.05);
    assert!((mean_of("c") - 1f64.exp()).abs() < 0.1);
}
