use std::fs;

use linkfact::datagen::{gen_dog, gen_gaussian, load_ppi_edgelist, read_split};
use linkfact::experiment::{DatasetKind, ExperimentConfig};
use linkfact::matrix::{read_csv, read_matrix_market, write_csv, write_matrix_market, CooMatrix};
use linkfact::solvers::{load_model, save_model};
use linkfact::{
    bnmf, predict, rank_scan, run_experiment, select_k, wnmf, EnsembleSpec, MaskMatrix, Method,
    RandomSource, SolverOptions, Thresholder,
};

#[test]
fn gaussian_sweep_writes_a_self_describing_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        dataset: DatasetKind::Gaussian,
        rows: 30,
        cols: 40,
        true_k: 3,
        k_min: 1,
        k_max: 5,
        perturbations: 4,
        folds: 2,
        test_sizes: vec![0.1, 0.3],
        output: Some(dir.path().to_path_buf()),
        ..ExperimentConfig::default()
    };
    let result = run_experiment(&cfg).unwrap();
    assert_eq!(result.runs.len(), 4);
    assert!(result.runs.iter().all(|r| r.error.is_none()));
    assert_eq!(result.k_opt_mode(0.1), Some(3));

    for name in ["config.txt", "aggregate.csv", "summary.csv", "timings.csv", "experiment.json"] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    let snapshot = ExperimentConfig::from_file(dir.path().join("config.txt")).unwrap();
    assert_eq!(snapshot, cfg);

    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("experiment.json")).unwrap()).unwrap();
    assert_eq!(meta["runs"].as_array().unwrap().len(), 4);
    assert!(meta["runs"][0]["split_seed"].is_u64());

    let run_dir = dir.path().join("runs/ts0.3_fold1");
    let (train, test) = read_split(run_dir.join("split.csv")).unwrap();
    assert_eq!(train.len() + test.len(), 30 * 40);
    assert_eq!(test.len(), 360);
    let u = read_csv(run_dir.join("uncertainty.csv")).unwrap();
    assert!(u.iter().all(|&v| v >= 0.0));
}

#[test]
fn rank_scan_recovers_exact_rank_on_clean_data() {
    let (x, _) = gen_gaussian(50, 100, 3, 5, 0.0).unwrap();
    let spec = EnsembleSpec {
        seed: 2,
        ..EnsembleSpec::default()
    };
    let scan = rank_scan(&x, None, &spec, 1, 5).unwrap();
    let selection = select_k(&scan, 0.8).unwrap();
    assert_eq!(selection.k_opt, 3);
    assert!(!selection.low_confidence);
    assert!(scan.record(3).unwrap().min_silhouette >= 0.8);
    assert_eq!(scan.to_csv().lines().count(), 6);
}

#[test]
fn dog_bnmf_reconstructs_exactly_at_rank_four() {
    let (x, truth) = gen_dog();
    assert_eq!(truth.true_k, 4);
    let opts = SolverOptions::default().with_seed(RandomSource::new(1));
    let model = bnmf(&x, None, 4, Thresholder::KMeans, &opts).unwrap();
    let xhat = predict(&model);
    let wrong = x
        .to_dense()
        .iter()
        .zip(xhat.iter())
        .filter(|(a, b)| (**a > 0.5) != (**b > 0.5))
        .count();
    // A handful of pixels may stay wrong from an unlucky start; most must not.
    assert!(wrong < 64, "{wrong} pixels wrong");
}

#[test]
fn models_survive_a_save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (x, _) = gen_gaussian(12, 9, 2, 0, 0.0).unwrap();
    let mask = MaskMatrix::ones(x.dim());
    let model = wnmf(&x, &mask, 2, &SolverOptions::default()).unwrap();
    save_model(dir.path().join("wnmf"), &model).unwrap();
    let back = load_model(dir.path().join("wnmf")).unwrap();
    assert_eq!(back.factors, model.factors);
    assert_eq!(back.kind, model.kind);
    assert_eq!(predict(&back), predict(&model));

    let (b, _) = gen_dog();
    let boolean = bnmf(&b, None, 4, Thresholder::Otsu, &SolverOptions::default()).unwrap();
    save_model(dir.path().join("bnmf"), &boolean).unwrap();
    assert_eq!(load_model(dir.path().join("bnmf")).unwrap().factors, boolean.factors);
}

#[test]
fn matrix_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (x, _) = gen_gaussian(7, 5, 2, 3, 0.1).unwrap();
    write_csv(dir.path().join("x.csv"), &x).unwrap();
    assert_eq!(read_csv(dir.path().join("x.csv")).unwrap(), x);

    let coo = CooMatrix {
        rows: 4,
        cols: 6,
        entries: vec![(0, 1, 1.0), (3, 5, 0.25), (2, 0, -3.5)],
    };
    write_matrix_market(dir.path().join("x.mtx"), &coo).unwrap();
    assert_eq!(read_matrix_market(dir.path().join("x.mtx")).unwrap().to_dense(), coo.to_dense());
}

#[test]
fn ppi_edge_list_feeds_an_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ppi.tsv");
    // Two dense communities of eight proteins; every pair is labelled.
    let mut text = String::from("# id1\tid2\tlabel\n");
    for a in 0..16 {
        for b in (a + 1)..16 {
            let link = (a < 8) == (b < 8);
            text.push_str(&format!("P{a}\tP{b}\t{}\n", link as u8));
        }
    }
    fs::write(&path, text).unwrap();
    let data = load_ppi_edgelist(&path).unwrap();
    assert_eq!(data.proteins.len(), 16);
    assert_eq!(data.stats.positive_pairs, 2 * 28);

    let cfg = ExperimentConfig {
        dataset: DatasetKind::Ppi,
        path: Some(path),
        method: Method::Wnmfk,
        k_min: 1,
        k_max: 3,
        perturbations: 3,
        folds: 1,
        test_sizes: vec![0.2],
        ..ExperimentConfig::default()
    };
    let result = run_experiment(&cfg).unwrap();
    let run = &result.runs[0];
    assert!(run.error.is_none(), "{:?}", run.error);
    let auc = run.selected().unwrap().report.roc_auc.unwrap();
    assert!(auc > 0.9, "AUC {auc}");
}
