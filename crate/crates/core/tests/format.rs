use std::fs;

use riemann_patterns::dataset::{CovarianceDataset, TargetKind};
use riemann_patterns::format::{read_dataset, read_model, write_dataset, write_model};
use riemann_patterns::linmodel::HeadKind;
use riemann_patterns::manifold::SymmetricMatrix;
use riemann_patterns::pipelines::{fit_pipeline, Method, PipelineConfig};
use riemann_patterns::simulation::{gen_dataset, SimulationParams};
use riemann_patterns::Error;

fn simulated() -> CovarianceDataset {
    gen_dataset(&SimulationParams { n_obs: 40, n_channels: 3, ..SimulationParams::default() })
        .unwrap()
        .dataset
}

#[test]
fn dataset_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let ds = simulated();
    write_dataset(dir.path(), &ds).unwrap();
    assert_eq!(read_dataset(dir.path()).unwrap(), ds);
}

#[test]
fn grouped_binary_dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let covs = (0..4).map(|i| SymmetricMatrix::from_diagonal(&[1.0 + i as f64, 2.0])).collect();
    let groups = vec!["s,1".to_string(), "s\"2".into(), "s,1".into(), "x".into()];
    let ds = CovarianceDataset::new(2, 1, covs, vec![0.0, 1.0, 1.0, 0.0], TargetKind::Binary)
        .unwrap()
        .with_groups(groups)
        .unwrap();
    write_dataset(dir.path(), &ds).unwrap();
    assert_eq!(read_dataset(dir.path()).unwrap(), ds);
}

#[test]
fn truncated_covariances_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &simulated()).unwrap();
    let bin = dir.path().join("covs.bin");
    let bytes = fs::read(&bin).unwrap();
    fs::write(&bin, &bytes[..bytes.len() - 8]).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::Format(_))));
}

#[test]
fn model_round_trip_for_every_method() {
    let ds = simulated();
    for (method, k) in [(Method::Riemann, None), (Method::Riemann, Some(2)), (Method::Spoc, Some(2)), (Method::Diag, None)] {
        let dir = tempfile::tempdir().unwrap();
        let model = fit_pipeline(&ds, &PipelineConfig::new(method, k, HeadKind::Ridge)).unwrap();
        write_model(dir.path(), &model).unwrap();
        let loaded = read_model(dir.path()).unwrap();
        assert_eq!(loaded, model);
        let a = model.predict(&ds).unwrap();
        let b = loaded.predict(&ds).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn model_version_mismatch_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let model = fit_pipeline(&simulated(), &PipelineConfig::default()).unwrap();
    write_model(dir.path(), &model).unwrap();
    let path = dir.path().join("model.json");
    let json = fs::read_to_string(&path).unwrap();
    fs::write(&path, json.replace("\"format_version\": 1", "\"format_version\": 7")).unwrap();
    assert!(matches!(read_model(dir.path()), Err(Error::Format(_))));
}
