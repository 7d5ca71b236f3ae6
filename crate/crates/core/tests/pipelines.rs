use nalgebra::DMatrix;
use rand::Rng as _;

use riemann_patterns::dataset::{CovarianceDataset, TargetKind};
use riemann_patterns::evaluation::{cross_validate, make_splits, SplitScheme};
use riemann_patterns::linmodel::{HeadKind, LinearHead, Standardizer};
use riemann_patterns::manifold::{SpdMatrix, SymmetricMatrix};
use riemann_patterns::patterns::{component_patterns, extract_patterns, pattern_distance};
use riemann_patterns::pipelines::{
    fit_csp, fit_diag, fit_pipeline, fit_riemann, fit_spoc, BandModel, FittedPipeline, Method,
    PipelineConfig,
};
use riemann_patterns::{rng, Error};

fn rotation(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Two sources mixed by `a`; the first drives the target.
fn mixed(a: &DMatrix<f64>, n: usize, seed: u64) -> CovarianceDataset {
    let mut r = rng::seeded(seed);
    let p = a.nrows();
    let mut covs = Vec::new();
    let mut y = Vec::new();
    for _ in 0..n {
        let s: Vec<f64> = (0..p).map(|_| r.random_range(-1.0..1.0)).collect();
        let e = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(p, s.iter().map(|v| v.exp())));
        covs.push(SymmetricMatrix::symmetrized(a * e * a.transpose()));
        y.push(s[0] + 0.1 * r.random_range(-1.0..1.0));
    }
    CovarianceDataset::new(p, 1, covs, y, TargetKind::Continuous).unwrap()
}

fn angle_of(v: &[f64]) -> f64 {
    v[1].atan2(v[0]).rem_euclid(std::f64::consts::PI)
}

fn angular_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::PI);
    d.min(std::f64::consts::PI - d)
}

#[test]
fn spoc_filter_maximizes_the_rayleigh_quotient() {
    let ds = mixed(&rotation(0.6), 200, 1);
    let model = fit_spoc(&ds, Some(1), HeadKind::Ridge).unwrap();
    let BandModel::Filters { filters, .. } = &model.bands()[0] else {
        panic!("spoc has filters")
    };

    let y = ds.targets();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
    let mut cz = DMatrix::zeros(2, 2);
    let mut cbar = DMatrix::zeros(2, 2);
    for (i, c) in ds.covariances().iter().enumerate() {
        cz += c.as_matrix() * ((y[i] - mean) / sd);
        cbar += c.as_matrix();
    }
    let quotient = |t: f64| {
        let w = nalgebra::DVector::from_vec(vec![t.cos(), t.sin()]);
        ((w.transpose() * &cz * &w)[0] / (w.transpose() * &cbar * &w)[0]).abs()
    };
    let best = (0..180)
        .map(|d| (d as f64).to_radians())
        .max_by(|a, b| quotient(*a).total_cmp(&quotient(*b)))
        .unwrap();
    let found = angle_of(filters.column(0).as_slice());
    assert!(angular_gap(found, best) <= 1f64.to_radians(), "{found} vs {best}");
}

#[test]
fn csp_label_flip_swaps_the_ends() {
    let mut r = rng::seeded(2);
    let a = rotation(0.3) * DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 1.0]);
    let mut covs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..60 {
        let positive = i % 2 == 0;
        let boost = if positive { 2.0 } else { 0.5 };
        let e = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            boost * r.random_range(0.5..1.5),
            r.random_range(0.5..1.5),
        ]));
        covs.push(SymmetricMatrix::symmetrized(&a * e * a.transpose()));
        labels.push(if positive { 1.0 } else { 0.0 });
    }
    let flipped: Vec<f64> = labels.iter().map(|l| 1.0 - l).collect();
    let ds = CovarianceDataset::new(2, 1, covs.clone(), labels, TargetKind::Binary).unwrap();
    let ds_flip = CovarianceDataset::new(2, 1, covs, flipped, TargetKind::Binary).unwrap();
    let m = fit_csp(&ds, None, HeadKind::Ridge).unwrap();
    let mf = fit_csp(&ds_flip, None, HeadKind::Ridge).unwrap();
    let (BandModel::Filters { filters: f, eigenvalues: l }, BandModel::Filters { filters: ff, eigenvalues: lf }) =
        (&m.bands()[0], &mf.bands()[0])
    else {
        panic!("csp has filters")
    };
    for j in 0..2 {
        assert!((l[j] + lf[1 - j] - 1.0).abs() < 1e-10);
        let gap = angular_gap(angle_of(f.column(j).as_slice()), angle_of(ff.column(1 - j).as_slice()));
        assert!(gap < 1e-8);
    }
}

#[test]
fn identical_covariances_predict_the_mean() {
    let c = SymmetricMatrix::from_diagonal(&[2.0, 1.0, 0.5]);
    let y: Vec<f64> = (0..20).map(|i| i as f64).collect();
    let ds = CovarianceDataset::new(3, 1, vec![c; 20], y, TargetKind::Continuous).unwrap();
    let plan = make_splits(20, SplitScheme::KFold { k: 4 }, None, 0).unwrap();
    for method in [Method::Riemann, Method::Spoc, Method::Diag] {
        let report = cross_validate(&ds, &PipelineConfig::new(method, None, HeadKind::Ridge), &plan).unwrap();
        for fold in &report.folds {
            let nmae = fold.metrics.normalized_mae.unwrap();
            assert!((nmae - 1.0).abs() < 1e-9, "{method}: {nmae}");
        }
    }
}

#[test]
fn band_blocks_are_concatenated_in_order() {
    let mut r = rng::seeded(3);
    let mut covs = Vec::new();
    let mut y = Vec::new();
    for _ in 0..30 {
        for _ in 0..2 {
            covs.push(SymmetricMatrix::from_diagonal(&[
                r.random_range(0.5..2.0),
                r.random_range(0.5..2.0),
                r.random_range(0.5..2.0),
            ]));
        }
        y.push(r.random_range(-1.0..1.0));
    }
    let ds = CovarianceDataset::new(3, 2, covs, y, TargetKind::Continuous).unwrap();
    let riemann = fit_riemann(&ds, None, HeadKind::Ridge).unwrap();
    assert_eq!(riemann.block_offsets(), &[0, 6]);
    assert_eq!(riemann.feature_len(), 12);
    assert_eq!(riemann.block(1), 6..12);
    let reduced = fit_riemann(&ds, Some(2), HeadKind::Ridge).unwrap();
    assert_eq!(reduced.block_offsets(), &[0, 3]);
    let spoc = fit_spoc(&ds, Some(2), HeadKind::Ridge).unwrap();
    assert_eq!(spoc.block_offsets(), &[0, 2]);
    let diag = fit_diag(&ds, HeadKind::Ridge).unwrap();
    assert_eq!(diag.block_offsets(), &[0, 3]);

    // band 1 features of an observation equal the log variances of band 1
    let raw = diag.raw_features(&ds).unwrap();
    for j in 0..3 {
        assert_eq!(raw.values[(4, 3 + j)], ds.covariance(4, 1).as_matrix()[(j, j)].ln());
    }
}

#[test]
fn diag_recovers_log_power_targets_with_identity_mixing() {
    let ds = mixed(&DMatrix::identity(2, 2), 200, 4);
    let model = fit_diag(&ds, HeadKind::Ridge).unwrap();
    let pred = model.predict(&ds).unwrap();
    let mae = pred.iter().zip(ds.targets()).map(|(a, b)| (a - b).abs()).sum::<f64>() / 200.0;
    assert!(mae < 0.06, "{mae}");
}

#[test]
fn zero_weights_have_no_pattern() {
    let ds = mixed(&DMatrix::identity(2, 2), 20, 5);
    let model = FittedPipeline::from_parts(
        PipelineConfig::default(),
        2,
        vec![BandModel::Riemann {
            reducer: None,
            reference: SpdMatrix::identity(2),
        }],
        Standardizer::from_parts(vec![0.0; 3], vec![1.0; 3]).unwrap(),
        LinearHead {
            kind: HeadKind::Ridge,
            weights: vec![0.0; 3],
            bias: 0.0,
            chosen_alpha: 1.0,
        },
        None,
    )
    .unwrap();
    assert!(matches!(extract_patterns(&model, &ds), Err(Error::Degenerate(_))));
}

#[test]
fn identity_mixing_gives_axis_patterns() {
    let ds = mixed(&DMatrix::identity(2, 2), 200, 6);
    for model in [
        fit_spoc(&ds, None, HeadKind::Ridge).unwrap(),
        fit_riemann(&ds, None, HeadKind::Ridge).unwrap(),
    ] {
        let set = match model.method() {
            Method::Riemann => extract_patterns(&model, &ds).unwrap(),
            _ => component_patterns(&model, &ds).unwrap(),
        };
        let top = set.bands[0].top_pattern();
        assert!(pattern_distance(&[1.0, 0.0], &top).unwrap() < 1e-3, "{}: {top:?}", model.method());
    }
}

#[test]
fn rotated_mixing_is_recovered() {
    let a = rotation(0.9);
    let ds = mixed(&a, 300, 7);
    let truth = [a[(0, 0)], a[(1, 0)]];
    let model = fit_pipeline(&ds, &PipelineConfig::default()).unwrap();
    let set = extract_patterns(&model, &ds).unwrap();
    assert!(pattern_distance(&truth, &set.bands[0].top_pattern()).unwrap() < 1e-3);
}

#[test]
fn contracts_are_enforced() {
    let ds = mixed(&DMatrix::identity(2, 2), 10, 8);
    let csp = fit_csp(&ds, None, HeadKind::Ridge);
    assert!(matches!(csp, Err(Error::Contract(_))));
    let logistic = fit_riemann(&ds, None, HeadKind::Logistic);
    assert!(matches!(logistic, Err(Error::Contract(_))));
    let too_many = fit_spoc(&ds, Some(3), HeadKind::Ridge);
    assert!(matches!(too_many, Err(Error::Contract(_))));
    let one = ds.subset(&[0]);
    assert!(matches!(fit_riemann(&one, None, HeadKind::Ridge), Err(Error::InsufficientData(_))));
}
