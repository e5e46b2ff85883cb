mod common;

use common::random_dataset;
use countsel::dataset::Dataset;
use countsel::design_matrix::DesignMatrix;
use countsel::lasso::{compute_lambda_max, make_grid};
use countsel::metrics::pooled_deviance;
use countsel::nested_cv::{
    evaluate_frequent, inner_select_lambda, make_plan, run_lolo_dcv, CvConfig, FoldContext, GridParams,
    Stratification,
};
use countsel::poisson::{fit_glm, predict};
use rand::seq::SliceRandom;

fn small_config(seed: u64) -> CvConfig {
    CvConfig {
        n_outer: 4,
        k_inner: 4,
        grid: GridParams {
            size: 30,
            ratio: 1e-2,
        },
        strategy: Stratification::Quartile,
        seed,
    }
}

#[test]
fn outer_blocks_partition_the_rows() {
    let d = random_dataset(1, 90, 3, true, &[(0, 0.6)]);
    let res = run_lolo_dcv(&d, &small_config(1)).unwrap();
    let mut seen: Vec<usize> = res
        .folds
        .iter()
        .flat_map(|f| f.predictions.iter().map(|p| p.row))
        .collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..90).collect::<Vec<_>>());
    for f in &res.folds {
        let rows: Vec<usize> = f.predictions.iter().map(|p| p.row).collect();
        assert_eq!(rows, res.plan.rows_in(f.test_block));
        assert_eq!(f.train_size, 90 - rows.len());
        assert!(f.lambda_1se >= f.lambda_min);
        if f.penalized_converged {
            assert!(!f.sparsity_violation);
        }
    }
    assert_eq!(res.pooled_min.rows.len(), 90);
    for c in res.presence.counts.values() {
        assert!(c.lambda_min <= 4 && c.lambda_1se <= 4);
    }
}

#[test]
fn fold_quantities_depend_only_on_training_rows() {
    for seed in 0..3 {
        let d = random_dataset(10 + seed, 80, 3, true, &[(1, 0.5)]);
        let cfg = small_config(seed);
        let res = run_lolo_dcv(&d, &cfg).unwrap();
        for f in &res.folds {
            let train = d.subset(&res.plan.rows_not_in(f.test_block));
            let ctx = FoldContext::from_training(&train, &cfg, f.test_block).unwrap();
            assert_eq!(ctx.design.column_names(), f.columns);
            assert_eq!(ctx.design.scaling(), &f.scaling[..]);
            assert_eq!(ctx.inner_plan.block_of, f.inner_blocks);
            let lm = compute_lambda_max(ctx.design.matrix(), &ctx.response).unwrap();
            assert_eq!(lm.to_bits(), f.lambda_max.to_bits());
        }
    }
}

#[test]
fn runs_are_reproducible() {
    let d = random_dataset(2, 60, 3, false, &[(0, 0.7)]);
    let a = run_lolo_dcv(&d, &small_config(5)).unwrap();
    let b = run_lolo_dcv(&d, &small_config(5)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn leave_one_out_runs() {
    let d = random_dataset(3, 30, 2, false, &[(0, 0.8)]);
    let cfg = CvConfig {
        n_outer: 30,
        ..small_config(3)
    };
    let res = run_lolo_dcv(&d, &cfg).unwrap();
    assert_eq!(res.folds.len(), 30);
    assert!(res.folds.iter().all(|f| f.predictions.len() == 1));
    assert!(pooled_deviance(&res.pooled_min).unwrap().is_finite());
}

fn permuted(d: &Dataset, seed: u64) -> Dataset {
    let mut y = d.response().to_vec();
    y.shuffle(&mut common::rng(seed));
    Dataset::new("count", y, d.covariates().to_vec(), None).unwrap()
}

#[test]
fn pure_noise_selects_little() {
    let grid = GridParams {
        size: 100,
        ratio: 1e-2,
    };
    // near-empty: at most 2 of the 10 design columns
    let mut quiet_min = 0;
    let mut empty_1se = 0;
    for seed in 0..20 {
        let d = permuted(&random_dataset(100 + seed, 200, 4, false, &[(0, 0.5), (1, -0.5)]), seed);
        let sel = inner_select_lambda(&d, &grid, 5, Stratification::Quartile, seed).unwrap();
        let dm = DesignMatrix::build(&d).unwrap();
        let y = d.response_f64();
        let at = |l| countsel::lasso::fit_lambda(dm.matrix(), &y, l).unwrap().model.active().len();
        quiet_min += usize::from(at(sel.lambda_min) <= 2);
        empty_1se += usize::from(at(sel.lambda_1se) == 0);
    }
    assert!(quiet_min >= 16, "lambda.min: {quiet_min}/20");
    assert!(empty_1se >= 16, "lambda.1se: {empty_1se}/20");
}

#[test]
fn planted_signal_is_always_found() {
    let grid = GridParams {
        size: 40,
        ratio: 1e-2,
    };
    for seed in 0..10 {
        let d = random_dataset(200 + seed, 100, 4, false, &[(2, 1.2)]);
        let sel = inner_select_lambda(&d, &grid, 5, Stratification::Quartile, seed).unwrap();
        let dm = DesignMatrix::build(&d).unwrap();
        let fit = countsel::lasso::fit_lambda(dm.matrix(), &d.response_f64(), sel.lambda_min).unwrap();
        let j = dm.column_index("x3").unwrap();
        assert!(fit.model.coefficients[j] != 0.0, "seed {seed}");
    }
}

#[test]
fn empty_subset_predicts_the_training_mean() {
    let d = random_dataset(4, 40, 2, false, &[]);
    let plan = make_plan(&d, 4, Stratification::Quartile, 0).unwrap();
    let eval = evaluate_frequent(&d, &plan, &[]).unwrap();
    for b in 0..4 {
        let train = plan.rows_not_in(b);
        let mean = train.iter().map(|&i| d.response()[i] as f64).sum::<f64>() / train.len() as f64;
        for r in eval.pooled.rows.iter().filter(|r| r.fold == b) {
            assert!((r.predicted - mean).abs() <= 1e-10 * mean);
        }
    }
}

#[test]
fn full_subset_on_two_folds_matches_direct_fits() {
    let d = random_dataset(5, 40, 2, false, &[(0, 0.4)]);
    let plan = make_plan(&d, 2, Stratification::Quartile, 9).unwrap();
    let all = DesignMatrix::build(&d).unwrap().column_names();
    let eval = evaluate_frequent(&d, &plan, &all).unwrap();
    let sorted = eval.pooled.sorted();
    for b in 0..2 {
        let train = d.subset(&plan.rows_not_in(b));
        let test_rows = plan.rows_in(b);
        let test = d.subset(&test_rows);
        let dm = DesignMatrix::build(&train).unwrap();
        let active: Vec<usize> = (0..dm.n_cols()).collect();
        let (m, _) = fit_glm(dm.matrix(), &train.response_f64(), &active).unwrap();
        let mu = predict(&m, &dm.apply_scaling(&test).unwrap()).unwrap();
        for (&row, want) in test_rows.iter().zip(mu) {
            assert_eq!(sorted[row].row, row);
            assert!((sorted[row].predicted - want).abs() <= 1e-12 * want);
        }
    }
}

#[test]
fn group_stratified_run() {
    let mut d = random_dataset(6, 60, 2, false, &[(0, 0.5)]);
    let labels: Vec<String> = (0..60).map(|i| format!("v{}", i % 3)).collect();
    d = Dataset::new(
        "count",
        d.response().to_vec(),
        d.covariates().to_vec(),
        Some(countsel::dataset::GroupLabels {
            name: "village".into(),
            labels,
        }),
    )
    .unwrap();
    let cfg = CvConfig {
        strategy: Stratification::Group,
        ..small_config(2)
    };
    let res = run_lolo_dcv(&d, &cfg).unwrap();
    assert_eq!(res.pooled_1se.rows.len(), 60);
}

#[test]
fn grid_is_shared_by_inner_folds() {
    let d = random_dataset(7, 60, 3, false, &[(0, 0.6)]);
    let grid = GridParams {
        size: 20,
        ratio: 1e-2,
    };
    let sel = inner_select_lambda(&d, &grid, 4, Stratification::Quartile, 1).unwrap();
    let dm = DesignMatrix::build(&d).unwrap();
    let lm = compute_lambda_max(dm.matrix(), &d.response_f64()).unwrap();
    assert_eq!(sel.grid.unwrap(), make_grid(lm, 20, 1e-2).unwrap());
    assert_eq!(sel.scores.len(), 20);
    assert!(sel.index_1se <= sel.index_min);
}
