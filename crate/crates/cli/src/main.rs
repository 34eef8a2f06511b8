//! `skpd` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use skpd::eval::{accuracy, auc, cross_validate, run_sweep_with, FitSettings, MetricSummary};
use skpd::io::{self, ExperimentConfig};
use skpd::pipeline::{export_coefficient_map, run_two_stage, MapFormat, TwoStageConfig};
use skpd::sim::{generate, generate_all};
use skpd::{fit, Dataset, Result};

#[derive(Parser)]
#[command(name = "skpd", version, about = "Sparse Kronecker-product logistic classifier for 2-D/3-D images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and write train/test directories.
    Simulate(Common),
    /// Fit a model and write it with its report and objective trace.
    Fit(Common),
    /// Write per-sample probabilities of a saved model.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Model file written by `fit`.
        #[arg(long)]
        model: PathBuf,
    },
    /// Stratified k-fold cross-validation.
    Cv(Common),
    /// Cross-validated sweep over the `sweep.*` settings.
    Sweep(Common),
    /// Two-stage slice selection on 3-D data.
    Slices(Common),
    /// Run the built-in verification suite.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    /// `key = value` experiment file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory; data are simulated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    lambda_a: Option<f64>,
    #[arg(long)]
    lambda_b: Option<f64>,
    #[arg(long)]
    lambda_gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Grid extents such as `32x32`.
    #[arg(long)]
    grid: Option<String>,
    /// Patch extents such as `4x4`; the grid then follows from the data.
    #[arg(long)]
    patch: Option<String>,
    #[arg(long, overrides_with = "no_shift")]
    shift: bool,
    #[arg(long, overrides_with = "shift")]
    no_shift: bool,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any other setting, as `key=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        for item in &self.set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| skpd::Error::InvalidConfig(format!("--set expects key=value, got `{item}`")))?;
            cfg.set(k.trim(), v)?;
        }
        if let Some(g) = &self.grid {
            cfg.set("grid", g)?;
            if self.patch.is_none() {
                cfg.set("patch", "auto")?;
            }
        }
        if let Some(p) = &self.patch {
            cfg.set("patch", p)?;
            if self.grid.is_none() {
                cfg.set("grid", "auto")?;
            }
        }
        if self.shift {
            cfg.shift = true;
        }
        if self.no_shift {
            cfg.shift = false;
        }
        let mut put = |key: &str, value: Option<String>| value.map_or(Ok(()), |v| cfg.set(key, &v));
        put("data", self.data.as_ref().map(|p| p.display().to_string()))?;
        put("rank", self.rank.map(|v| v.to_string()))?;
        put("lambda_a", self.lambda_a.map(|v| v.to_string()))?;
        put("lambda_b", self.lambda_b.map(|v| v.to_string()))?;
        put("lambda_gamma", self.lambda_gamma.map(|v| v.to_string()))?;
        put("alpha", self.alpha.map(|v| v.to_string()))?;
        put("folds", self.folds.map(|v| v.to_string()))?;
        put("seed", self.seed.map(|v| v.to_string()))?;
        put("out", self.out.as_ref().map(|p| p.display().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Creates the output directory and records the resolved configuration.
fn prepare_out(cfg: &ExperimentConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("manifest.txt"), cfg.to_manifest())?;
    Ok(cfg.out.clone())
}

fn load(cfg: &ExperimentConfig, path: &Path) -> Result<Dataset> {
    Ok(io::read_dataset_with(path, &io::ColumnMap::default(), cfg.standardize)?.0)
}

/// The dataset named by `data`, or the training split of the simulation.
fn training_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data {
        Some(path) => load(cfg, path),
        None => Ok(generate(&cfg.sim_config()?)?.0),
    }
}

/// The dataset named by `data`, or every simulated sample.
fn all_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data {
        Some(path) => load(cfg, path),
        None => generate_all(&cfg.sim_config()?),
    }
}

fn settings(cfg: &ExperimentConfig, data: &Dataset) -> Result<FitSettings> {
    Ok(FitSettings {
        cfg: cfg.shape_config(data.dims())?,
        rank: cfg.rank,
        penalties: cfg.penalties,
        use_shift: cfg.shift,
        solver: cfg.solver,
    })
}

fn summary_csv(summary: &MetricSummary) -> String {
    let mut out = String::from("fold,accuracy,auc\n");
    for (i, (a, u)) in summary.accuracy.iter().zip(&summary.auc).enumerate() {
        out.push_str(&format!("{i},{a},{u}\n"));
    }
    out.push_str(&format!("mean,{},{}\n", summary.mean_acc, summary.mean_auc));
    out.push_str(&format!("sd,{},{}\n", summary.sd_acc, summary.sd_auc));
    out
}

fn simulate(cfg: &ExperimentConfig) -> Result<()> {
    let out = prepare_out(cfg)?;
    let (train, test) = generate(&cfg.sim_config()?)?;
    io::write_dataset(&out.join("train"), &train)?;
    io::write_dataset(&out.join("test"), &test)?;
    println!("wrote {} training and {} test samples to {}", train.len(), test.len(), out.display());
    Ok(())
}

fn fit_cmd(cfg: &ExperimentConfig) -> Result<()> {
    let out = prepare_out(cfg)?;
    let data = training_data(cfg)?;
    let s = settings(cfg, &data)?;
    let (model, report) = fit(&data, &s.cfg, s.rank, s.penalties, s.use_shift, &s.solver)?;
    io::save_model(&out.join("model.skpd"), &model)?;
    fs::write(out.join("report.json"), io::report_to_json(&report)?)?;
    fs::write(out.join("trace.csv"), io::trace_to_csv(&report))?;
    println!(
        "{} outer iterations (converged: {}), objective {:.6}, training accuracy {:.4}",
        report.iterations, report.converged, report.final_objective, report.training_accuracy
    );
    Ok(())
}

fn predict_cmd(cfg: &ExperimentConfig, model_path: &Path) -> Result<()> {
    let out = prepare_out(cfg)?;
    let model = io::load_model(model_path)?;
    let data = training_data(cfg)?;
    let probs = model.predict_proba_batch(&data)?;
    let labels = data.label_bytes();
    fs::write(out.join("predictions.csv"), io::predictions_to_csv(&probs, &labels))?;
    let acc = accuracy(&probs, &labels, 0.5)?;
    match auc(&probs, &labels) {
        Ok(u) => println!("accuracy {acc:.4}, AUC {u:.4} on {} samples", labels.len()),
        Err(_) => println!("accuracy {acc:.4} on {} samples", labels.len()),
    }
    Ok(())
}

fn cv_cmd(cfg: &ExperimentConfig) -> Result<()> {
    let out = prepare_out(cfg)?;
    let data = all_data(cfg)?;
    let summary = cross_validate(&data, &settings(cfg, &data)?, cfg.folds, cfg.seed)?;
    fs::write(out.join("cv.csv"), summary_csv(&summary))?;
    println!(
        "accuracy {:.4} ({:.4})  AUC {:.4} ({:.4})  over {} folds",
        summary.mean_acc,
        summary.sd_acc,
        summary.mean_auc,
        summary.sd_auc,
        summary.folds()
    );
    Ok(())
}

fn sweep_cmd(cfg: &ExperimentConfig) -> Result<()> {
    let out = prepare_out(cfg)?;
    let fixed = cfg.data.as_ref().map(|p| load(cfg, p)).transpose()?;
    let spec = cfg.sweep_spec(fixed)?;
    let table = run_sweep_with(&spec, |i, cell| {
        let status = match &cell.result {
            Ok(m) => format!("AUC {:.4}", m.mean_auc),
            Err(e) => format!("failed: {e}"),
        };
        eprintln!("cell {}: grid {:?} sigma {:?} shift {} {status}", i + 1, cell.key.grid, cell.key.sigma, cell.key.shift);
    })?;
    fs::write(out.join("sweep.csv"), table.to_csv())?;
    fs::write(out.join("sweep.txt"), table.to_text())?;
    print!("{}", table.to_text());
    Ok(())
}

fn slices_cmd(cfg: &ExperimentConfig) -> Result<()> {
    let out = prepare_out(cfg)?;
    let data = all_data(cfg)?;
    if data.shape().len() != 3 {
        return Err(skpd::Error::ShapeMismatch("`slices` needs 3-D samples".into()));
    }
    let two = TwoStageConfig {
        cfg3d: cfg.shape_config(data.dims())?,
        grid2d: cfg.grid2d()?,
        rank: cfg.rank,
        penalties: cfg.penalties,
        solver: cfg.solver,
        folds: cfg.folds,
        seed: cfg.seed,
    };
    let result = run_two_stage(&data, &two)?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    io::save_model(&out.join("model_3d.skpd"), &result.model3d)?;
    fs::write(out.join("selection.csv"), result.selection.to_csv())?;
    let mut text = String::from("plane     slice  accuracy        AUC\n");
    let mut cv = String::from("plane,slice,fold,accuracy,auc\n");
    for plane in &result.planes {
        let name = plane.plane.as_str();
        io::save_model(&out.join(format!("model_{name}.skpd")), &plane.model)?;
        let pgm = out.join(format!("map_{name}.pgm"));
        export_coefficient_map(&result.c_hat, plane.plane, plane.slice, MapFormat::Pgm, &pgm)?;
        export_coefficient_map(&result.c_hat, plane.plane, plane.slice, MapFormat::Csv, &pgm.with_extension("csv"))?;
        text.push_str(&format!(
            "{name:<9} {:>5}  {:.4} ({:.4})  {:.4} ({:.4})\n",
            plane.slice, plane.cv.mean_acc, plane.cv.sd_acc, plane.cv.mean_auc, plane.cv.sd_auc
        ));
        for (i, (a, u)) in plane.cv.accuracy.iter().zip(&plane.cv.auc).enumerate() {
            cv.push_str(&format!("{name},{},{i},{a},{u}\n", plane.slice));
        }
    }
    fs::write(out.join("selection.txt"), &text)?;
    fs::write(out.join("cv.csv"), cv)?;
    print!("{text}");
    Ok(())
}

fn verify_cmd(seed: u64) -> Result<bool> {
    let (checks, rows) = skpd::verify::run_all(seed)?;
    println!("best rank-R relative error of a block straddling four cells:");
    for row in &rows {
        println!("  R={}  measured {:.4}  expected {:.4}", row.rank, row.measured, row.expected);
    }
    let mut ok = true;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate(c) => simulate(&c.config()?)?,
        Command::Fit(c) => fit_cmd(&c.config()?)?,
        Command::Predict { common, model } => predict_cmd(&common.config()?, &model)?,
        Command::Cv(c) => cv_cmd(&c.config()?)?,
        Command::Sweep(c) => sweep_cmd(&c.config()?)?,
        Command::Slices(c) => slices_cmd(&c.config()?)?,
        Command::Verify { seed } => return verify_cmd(seed),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
