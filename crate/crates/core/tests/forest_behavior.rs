//! Behavioral checks of the honest forest on generated cohorts that go
//! beyond single-module unit tests.

use catelab_core::causal::{center_locally, fit_causal_forest, CausalForestParams};
use catelab_core::sim::{fixtures, generate, Scenario, Setting};
use catelab_core::stream::Stream;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Under a constant treatment effect, honest estimation leaves no overfit
/// signature: predictions on the training rows are distributed like
/// predictions on held-out rows.
#[test]
fn nohte_predictions_match_between_train_and_test() {
    let mut spec = fixtures::load(Scenario::NoHte, Setting::Primary).unwrap();
    spec.n = 8_000;
    let data = generate(&spec, 0).unwrap();

    // Rows are exchangeable, so a deterministic prefix split is a random one.
    let n_train = 6_000;
    let train: Vec<usize> = (0..n_train).collect();
    let test: Vec<usize> = (n_train..data.n()).collect();
    let x = data.covariate_view(true);
    let x_train = x.select_rows(&train);
    let x_test = x.select_rows(&test);
    let y: Vec<f64> = train.iter().map(|&i| data.outcome[i]).collect();
    let a: Vec<f64> = train.iter().map(|&i| data.treatment[i]).collect();

    let stream = Stream::root(41).child("no-overfit");
    let centered = center_locally(&x_train, &y, &a, 200, &stream.child("center")).unwrap();
    let params = CausalForestParams {
        num_trees: 400,
        ..CausalForestParams::default()
    };
    let forest = fit_causal_forest(
        &x_train,
        &a,
        &centered.y_res,
        &centered.a_res,
        &params,
        false,
        &stream.child("forest"),
    )
    .unwrap();

    let on_train = forest.predict_cate(&x_train);
    let on_test = forest.predict_cate(&x_test);

    let (m_tr, m_te) = (mean(&on_train), mean(&on_test));
    let (s_tr, s_te) = (sd(&on_train), sd(&on_test));
    assert!(
        (m_tr - m_te).abs() < 0.01,
        "train mean {m_tr} vs test mean {m_te}"
    );
    let ratio = s_tr / s_te;
    assert!(
        (0.7..1.43).contains(&ratio),
        "train sd {s_tr} vs test sd {s_te}: honest forest should not sharpen on its own rows"
    );
    // No-HTE effects live on a narrow risk-difference band; neither sample
    // should show wide dispersion.
    assert!(s_tr < 0.05 && s_te < 0.05);
}
