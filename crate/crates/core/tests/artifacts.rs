//! Every artifact a run writes can be read back unchanged.

use std::fs;

use skpd::eval::{cross_validate, FitSettings};
use skpd::io::{self, ExperimentConfig};
use skpd::pipeline::{export_coefficient_map, read_coefficient_csv, extract_slice, MapFormat, Plane};
use skpd::sim::{default_template, generate, SimConfig, TemplateName};
use skpd::{fit, PenaltyConfig, ShapeConfig, SolverConfig};

#[test]
fn simulate_save_load_fit_predict() {
    let dir = tempfile::tempdir().unwrap();
    let template = default_template(TemplateName::Rings, &[32, 32]).unwrap();
    let sim = SimConfig::new(template, 120, 0.5, 9);
    let (train, test) = generate(&sim).unwrap();
    io::write_dataset(&dir.path().join("train"), &train).unwrap();
    io::write_dataset(&dir.path().join("test"), &test).unwrap();
    let train_back = io::read_dataset(&dir.path().join("train")).unwrap();
    assert_eq!(train_back, train);

    let cfg = ShapeConfig::new_2d([8, 8], [4, 4]).unwrap();
    let (model, report) = fit(&train_back, &cfg, 1, PenaltyConfig::default(), true, &SolverConfig::default()).unwrap();
    let model_path = dir.path().join("model.skpd");
    io::save_model(&model_path, &model).unwrap();
    let loaded = io::load_model(&model_path).unwrap();
    assert_eq!(loaded, model);

    let report_path = dir.path().join("report.json");
    fs::write(&report_path, io::report_to_json(&report).unwrap()).unwrap();
    assert_eq!(io::report_from_json(&fs::read_to_string(&report_path).unwrap()).unwrap(), report);

    let probs = loaded.predict_proba_batch(&train).unwrap();
    let labels = train.label_bytes();
    let pred_path = dir.path().join("pred.csv");
    fs::write(&pred_path, io::predictions_to_csv(&probs, &labels)).unwrap();
    let (labels_back, probs_back) = io::read_predictions_csv(&pred_path).unwrap();
    assert_eq!(labels_back, labels);
    assert_eq!(probs_back, probs);
    let acc = skpd::eval::accuracy(&probs_back, &labels_back, 0.5).unwrap();
    assert_eq!(acc, report.training_accuracy);

    let test_probs = loaded.predict_proba_batch(&io::read_dataset(&dir.path().join("test")).unwrap()).unwrap();
    assert!(skpd::eval::auc(&test_probs, &test.label_bytes()).unwrap() > 0.8);
}

#[test]
fn manifest_and_coefficient_maps_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.set("sim.template", "two_balls").unwrap();
    cfg.set("sim.alternative", "one_ball").unwrap();
    cfg.set("sim.shape", "16x16x16").unwrap();
    cfg.set("sim.n", "60").unwrap();
    cfg.set("grid", "4x4x4").unwrap();
    let path = dir.path().join("manifest.txt");
    fs::write(&path, cfg.to_manifest()).unwrap();
    let back = ExperimentConfig::load(&path).unwrap();
    assert_eq!(back, cfg);

    let (train, _) = generate(&back.sim_config().unwrap()).unwrap();
    let shape = back.shape_config(train.dims()).unwrap();
    assert_eq!(shape, ShapeConfig::new([4, 4, 4], [4, 4, 4]).unwrap());
    let settings = FitSettings {
        cfg: shape,
        rank: back.rank,
        penalties: back.penalties,
        use_shift: back.shift,
        solver: back.solver,
    };
    let summary = cross_validate(&train, &settings, 2, back.seed).unwrap();
    assert_eq!(summary.folds(), 2);

    let (model, _) = fit(&train, &shape, 1, back.penalties, true, &back.solver).unwrap();
    let c_hat = model.effective_coefficient().unwrap();
    for plane in [Plane::Axial, Plane::Coronal, Plane::Sagittal] {
        let csv = dir.path().join(format!("{plane}.csv"));
        export_coefficient_map(&c_hat, plane, 7, MapFormat::Csv, &csv).unwrap();
        assert_eq!(read_coefficient_csv(&csv).unwrap(), extract_slice(&c_hat, plane, 7).unwrap());
        let pgm = dir.path().join(format!("{plane}.pgm"));
        let written = export_coefficient_map(&c_hat, plane, 7, MapFormat::Pgm, &pgm).unwrap();
        assert_eq!(written.len(), 2);
        assert_eq!(fs::read(&pgm).unwrap().len(), "P5\n16 16\n255\n".len() + 256);
    }
}
