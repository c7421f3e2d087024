//! Orchestration: train → run file → analysis → tables and figures, over a
//! grid of shapes and learning rates.
//!
//! Output directory layout:
//!
//! ```text
//! <outdir>/index.json
//! <outdir>/runs/<shape>_<lr>_<epochs>.nfl
//! <outdir>/reports/<stem>.report.json | .neurons.csv | .table.md | .table.csv
//! <outdir>/figures/<stem>.recon.svg | <stem>.<channel>.hist.svg
//! <outdir>/figures/<shape>_<epochs>.recon.compare.svg | <shape>_<epochs>.<channel>.compare.svg
//! ```
//!
//! All paths recorded in the index are relative to the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    analyze_snapshots, calibrate_epsilon, AnalysisOptions, FluctuationMode, FluctuationReport,
    DEFAULT_BINS, DEFAULT_EPSILON,
};
use crate::json::to_canonical_pretty;
use crate::netcore::ArchitectureSpec;
use crate::report::{
    fluctuation_table, hist_comparison_svg, hist_svg, reconstruct_from, scatter_comparison_svg,
    scatter_svg, FigureSpec, ReconstructionResult,
};
use crate::runstore::{create_run_file, open_run, Channel, RunManifest};
use crate::shapegen::{self, ShapeKind, DEFAULT_SAMPLES};
use crate::trainer::{train, AdamParams, RunConfig};
use crate::{Error, Result};

pub const INDEX_VERSION: u32 = 1;
pub const DEFAULT_LEARNING_RATES: [f64; 3] = [0.01, 0.001, 0.0001];
/// Search range and target band for a calibrated weights-channel threshold.
pub const CALIBRATION_RANGE: (f64, f64) = (1e-6, 1e-3);
pub const CALIBRATION_TARGET: (usize, usize) = (40, 80);
pub const DEFAULT_DATA_SEED: u64 = 42;
pub const DEFAULT_INIT_SEED: u64 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub shapes: Vec<ShapeKind>,
    pub learning_rates: Vec<f64>,
    pub epochs: u32,
    pub data_seed: u64,
    pub init_seed: u64,
    pub samples: usize,
    pub capture_every: u32,
    pub outdir: PathBuf,
    pub epsilon: f64,
    pub bins: usize,
    pub parallelism: usize,
    /// Recorded in every run manifest; fixed so reruns are byte-identical.
    pub created_utc: u64,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            shapes: vec![ShapeKind::Spiral],
            learning_rates: DEFAULT_LEARNING_RATES.to_vec(),
            epochs: 1000,
            data_seed: DEFAULT_DATA_SEED,
            init_seed: DEFAULT_INIT_SEED,
            samples: DEFAULT_SAMPLES,
            capture_every: 1,
            outdir: PathBuf::from("fluctlab-out"),
            epsilon: DEFAULT_EPSILON,
            bins: DEFAULT_BINS,
            parallelism: 1,
            created_utc: 0,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.shapes.is_empty() || self.learning_rates.is_empty() {
            return Err(Error::invalid(
                "plan needs at least one shape and one learning rate",
            ));
        }
        if self.parallelism == 0 {
            return Err(Error::invalid("parallelism must be at least 1"));
        }
        if !(self.epsilon > 0.0) || self.bins == 0 {
            return Err(Error::invalid("epsilon and bins must be positive"));
        }
        for c in self.run_configs() {
            c.validate()?;
        }
        Ok(())
    }

    pub fn run_configs(&self) -> Vec<RunConfig> {
        self.shapes
            .iter()
            .flat_map(|&shape| {
                self.learning_rates
                    .iter()
                    .map(move |&learning_rate| RunConfig {
                        shape,
                        learning_rate,
                        epochs: self.epochs,
                        data_seed: self.data_seed,
                        init_seed: self.init_seed,
                        samples: self.samples,
                        adam: AdamParams::default(),
                        capture_every: self.capture_every,
                    })
            })
            .collect()
    }

    pub fn analysis_options(&self) -> AnalysisOptions {
        AnalysisOptions {
            epsilon: self.epsilon,
            bins: self.bins,
            mode: FluctuationMode::Delta,
        }
    }
}

/// `<shape>_<lr>_<epochs>`, the stem shared by a run's artifacts.
pub fn run_stem(config: &RunConfig) -> String {
    format!(
        "{}_{}_{}",
        config.shape, config.learning_rate, config.epochs
    )
}

pub fn default_run_path(base: &Path, config: &RunConfig) -> PathBuf {
    base.join("runs").join(format!("{}.nfl", run_stem(config)))
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub path: PathBuf,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub snapshots: u64,
}

/// Trains one configuration straight into a run file. On failure the file is
/// left behind with `complete = false`.
pub fn train_to_file(config: &RunConfig, path: &Path, created_utc: u64) -> Result<TrainSummary> {
    let manifest = RunManifest::new(config.clone(), ArchitectureSpec::default(), created_utc);
    let mut writer = create_run_file(path, &manifest)?;
    match train(config, &mut writer) {
        Ok(out) => {
            writer.finish(true, Some(out.final_loss))?;
            Ok(TrainSummary {
                path: path.to_path_buf(),
                initial_loss: out.initial_loss,
                final_loss: out.final_loss,
                snapshots: out.snapshots,
            })
        }
        Err(e) => {
            let _ = writer.finish(false, None);
            Err(e)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub default_epsilon: f64,
    pub default_inactive: usize,
    pub calibrated_epsilon: Option<f64>,
    pub calibrated_inactive: Option<usize>,
    /// `default`, `calibrated` or `red_flag`.
    pub status: String,
}

/// Checks whether the weights channel shows at least 40 inactive neurons at
/// the default threshold, or else searches for a threshold in `[1e-6, 1e-3]`
/// that yields 40 to 80.
pub fn weights_calibration(report: &FluctuationReport) -> Result<Calibration> {
    let w = report.channel(Channel::Weights)?;
    let default_inactive = w
        .neurons
        .iter()
        .filter(|s| s.spread < DEFAULT_EPSILON)
        .count();
    let calibrated_epsilon = calibrate_epsilon(&w.neurons, CALIBRATION_RANGE, CALIBRATION_TARGET);
    let calibrated_inactive =
        calibrated_epsilon.map(|e| w.neurons.iter().filter(|s| s.spread < e).count());
    let status = if default_inactive >= CALIBRATION_TARGET.0 {
        "default"
    } else if calibrated_epsilon.is_some() {
        "calibrated"
    } else {
        "red_flag"
    };
    Ok(Calibration {
        default_epsilon: DEFAULT_EPSILON,
        default_inactive,
        calibrated_epsilon,
        calibrated_inactive,
        status: status.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportArtifacts {
    pub report_json: String,
    pub neurons_csv: String,
    pub table_md: String,
    pub table_csv: String,
    pub figures: Vec<String>,
}

fn rel(outdir: &Path, p: &Path) -> String {
    p.strip_prefix(outdir)
        .unwrap_or(p)
        .to_string_lossy()
        .replace('\\', "/")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Everything derived from one finished run file.
pub struct RunProducts {
    pub manifest: RunManifest,
    pub report: FluctuationReport,
    pub reconstruction: ReconstructionResult,
}

pub fn load_products(run: &Path, opts: &AnalysisOptions) -> Result<RunProducts> {
    let mut reader = open_run(run)?;
    let manifest = reader.manifest().clone();
    if !manifest.complete {
        return Err(Error::invalid(format!(
            "{} is not a complete run",
            run.display()
        )));
    }
    let snapshots = reader.read_all()?;
    let report = analyze_snapshots(&manifest, &snapshots, opts)?;
    let cfg = &manifest.config;
    let dataset = shapegen::generate(cfg.shape, cfg.samples, cfg.data_seed)?;
    let last = snapshots
        .last()
        .ok_or_else(|| Error::InsufficientData("run holds no snapshots".into()))?;
    let reconstruction = reconstruct_from(&manifest, last, &dataset)?;
    Ok(RunProducts {
        manifest,
        report,
        reconstruction,
    })
}

/// Writes the report JSON/CSV, tables, the reconstruction scatter and one
/// histogram per channel for a run.
pub fn write_report_bundle(products: &RunProducts, outdir: &Path) -> Result<ReportArtifacts> {
    let stem = run_stem(&products.manifest.config);
    let reports = outdir.join("reports");
    let figures = outdir.join("figures");
    let report_json = reports.join(format!("{stem}.report.json"));
    let neurons_csv = reports.join(format!("{stem}.neurons.csv"));
    let table_md = reports.join(format!("{stem}.table.md"));
    let table_csv = reports.join(format!("{stem}.table.csv"));
    write_file(&report_json, products.report.to_json()?.as_bytes())?;
    write_file(&neurons_csv, products.report.neurons_csv().as_bytes())?;
    let table = fluctuation_table(&products.report);
    write_file(&table_md, table.markdown.as_bytes())?;
    write_file(&table_csv, table.csv.as_bytes())?;

    let mut figs = Vec::new();
    let recon = figures.join(format!("{stem}.recon.svg"));
    write_file(
        &recon,
        scatter_svg(&products.reconstruction, &FigureSpec::default()).as_bytes(),
    )?;
    figs.push(rel(outdir, &recon));
    for c in Channel::ALL {
        let p = figures.join(format!("{stem}.{c}.hist.svg"));
        let spec = FigureSpec::titled(format!(
            "Fluctuations in {c} ({}, lr {})",
            products.report.shape, products.report.learning_rate
        ));
        write_file(&p, hist_svg(&products.report, c, &spec)?.as_bytes())?;
        figs.push(rel(outdir, &p));
    }
    Ok(ReportArtifacts {
        report_json: rel(outdir, &report_json),
        neurons_csv: rel(outdir, &neurons_csv),
        table_md: rel(outdir, &table_md),
        table_csv: rel(outdir, &table_csv),
        figures: figs,
    })
}

/// Learning-rate comparison figures for runs of one shape, in the given order.
pub fn write_comparison_figures(products: &[&RunProducts], outdir: &Path) -> Result<Vec<String>> {
    let Some(first) = products.first() else {
        return Ok(Vec::new());
    };
    let shape = first.manifest.config.shape;
    if let Some(p) = products.iter().find(|p| p.manifest.config.shape != shape) {
        return Err(Error::ShapeMismatch(format!(
            "{shape} vs {}",
            p.manifest.config.shape
        )));
    }
    let epochs = first.manifest.config.epochs;
    let figures = outdir.join("figures");
    let mut out = Vec::new();
    let results: Vec<ReconstructionResult> =
        products.iter().map(|p| p.reconstruction.clone()).collect();
    let spec = FigureSpec {
        title: format!("{shape} reconstruction by learning rate"),
        width: 1200,
        height: 520,
        ..FigureSpec::default()
    };
    let p = figures.join(format!("{shape}_{epochs}.recon.compare.svg"));
    write_file(&p, scatter_comparison_svg(&results, &spec)?.as_bytes())?;
    out.push(rel(outdir, &p));
    let reports: Vec<&FluctuationReport> = products.iter().map(|p| &p.report).collect();
    for c in Channel::ALL {
        let spec = FigureSpec {
            title: format!("Fluctuations in {c} ({shape})"),
            width: 1000,
            height: 320,
            ..FigureSpec::default()
        };
        let p = figures.join(format!("{shape}_{epochs}.{c}.compare.svg"));
        write_file(&p, hist_comparison_svg(&reports, c, &spec)?.as_bytes())?;
        out.push(rel(outdir, &p));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub shape: ShapeKind,
    pub learning_rate: f64,
    /// `ok` or `failed`.
    pub status: String,
    pub error: Option<String>,
    pub run_file: String,
    pub artifacts: Option<ReportArtifacts>,
    pub final_mse: Option<f64>,
    pub inactive: Option<std::collections::BTreeMap<Channel, usize>>,
    pub calibration: Option<Calibration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub shapes: Vec<ShapeKind>,
    pub learning_rates: Vec<f64>,
    pub epochs: u32,
    pub data_seed: u64,
    pub init_seed: u64,
    pub samples: usize,
    pub capture_every: u32,
    pub epsilon: f64,
    pub bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunIndex {
    pub index_version: u32,
    pub plan: PlanSummary,
    pub entries: Vec<IndexEntry>,
    pub comparison_figures: Vec<String>,
}

impl RunIndex {
    pub fn failed(&self) -> usize {
        self.entries.iter().filter(|e| e.status != "ok").count()
    }
}

fn run_one(config: &RunConfig, plan: &ExperimentPlan) -> (IndexEntry, Option<RunProducts>) {
    let path = default_run_path(&plan.outdir, config);
    let mut entry = IndexEntry {
        shape: config.shape,
        learning_rate: config.learning_rate,
        status: "failed".into(),
        error: None,
        run_file: rel(&plan.outdir, &path),
        artifacts: None,
        final_mse: None,
        inactive: None,
        calibration: None,
    };
    let result = (|| -> Result<(ReportArtifacts, Calibration, RunProducts)> {
        train_to_file(config, &path, plan.created_utc)?;
        let products = load_products(&path, &plan.analysis_options())?;
        let artifacts = write_report_bundle(&products, &plan.outdir)?;
        let calibration = weights_calibration(&products.report)?;
        Ok((artifacts, calibration, products))
    })();
    match result {
        Ok((artifacts, calibration, products)) => {
            entry.status = "ok".into();
            entry.artifacts = Some(artifacts);
            entry.calibration = Some(calibration);
            entry.final_mse = products.manifest.final_loss;
            entry.inactive = Some(
                products
                    .report
                    .channels
                    .iter()
                    .map(|(c, r)| (*c, r.inactive_count))
                    .collect(),
            );
            (entry, Some(products))
        }
        Err(e) => {
            entry.error = Some(e.to_string());
            (entry, None)
        }
    }
}

/// Runs every (shape, learning rate) pair with up to `parallelism` trainings
/// at once, then writes comparison figures and `index.json`. Individual run
/// failures are recorded in the index rather than returned.
pub fn run_plan(plan: &ExperimentPlan) -> Result<RunIndex> {
    plan.validate()?;
    fs::create_dir_all(&plan.outdir)?;
    let configs = plan.run_configs();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.parallelism)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let results: Vec<(IndexEntry, Option<RunProducts>)> = pool.install(|| {
        use rayon::prelude::*;
        configs.par_iter().map(|c| run_one(c, plan)).collect()
    });

    let mut comparison_figures = Vec::new();
    for shape in &plan.shapes {
        let group: Vec<&RunProducts> = results
            .iter()
            .filter_map(|(_, p)| p.as_ref())
            .filter(|p| p.manifest.config.shape == *shape)
            .collect();
        if group.len() >= 2 {
            comparison_figures.extend(write_comparison_figures(&group, &plan.outdir)?);
        }
    }
    let index = RunIndex {
        index_version: INDEX_VERSION,
        plan: PlanSummary {
            shapes: plan.shapes.clone(),
            learning_rates: plan.learning_rates.clone(),
            epochs: plan.epochs,
            data_seed: plan.data_seed,
            init_seed: plan.init_seed,
            samples: plan.samples,
            capture_every: plan.capture_every,
            epsilon: plan.epsilon,
            bins: plan.bins,
        },
        entries: results.into_iter().map(|(e, _)| e).collect(),
        comparison_figures,
    };
    write_file(
        &plan.outdir.join("index.json"),
        to_canonical_pretty(&index)?.as_bytes(),
    )?;
    Ok(index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub run_file: String,
    pub learning_rate: f64,
    pub final_mse: f64,
    pub inactive: std::collections::BTreeMap<Channel, usize>,
    pub spread_of_spread: std::collections::BTreeMap<Channel, [f64; 2]>,
    pub lowest_mse: bool,
    pub fewest_inactive_activations: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub shape: ShapeKind,
    pub rows: Vec<ComparisonRow>,
}

/// Side-by-side summary of completed runs of one shape. Ties share a flag.
pub fn compare_runs(runs: &[PathBuf], opts: &AnalysisOptions) -> Result<Comparison> {
    if runs.len() < 2 {
        return Err(Error::invalid("compare needs at least two runs"));
    }
    let mut products = Vec::with_capacity(runs.len());
    for r in runs {
        products.push(load_products(r, opts)?);
    }
    let shape = products[0].manifest.config.shape;
    if let Some(p) = products.iter().find(|p| p.manifest.config.shape != shape) {
        return Err(Error::ShapeMismatch(format!(
            "{shape} vs {}",
            p.manifest.config.shape
        )));
    }
    let mut rows: Vec<ComparisonRow> = runs
        .iter()
        .zip(&products)
        .map(|(path, p)| ComparisonRow {
            run_file: path.display().to_string(),
            learning_rate: p.manifest.config.learning_rate,
            final_mse: p.manifest.final_loss.unwrap_or(p.reconstruction.final_mse),
            inactive: p
                .report
                .channels
                .iter()
                .map(|(c, r)| (*c, r.inactive_count))
                .collect(),
            spread_of_spread: p
                .report
                .channels
                .iter()
                .map(|(c, r)| (*c, [r.encoder.spread_of_spread, r.decoder.spread_of_spread]))
                .collect(),
            lowest_mse: false,
            fewest_inactive_activations: false,
        })
        .collect();
    let best_mse = rows
        .iter()
        .map(|r| r.final_mse)
        .fold(f64::INFINITY, f64::min);
    let fewest = rows
        .iter()
        .map(|r| r.inactive[&Channel::ActivationMeans])
        .min()
        .unwrap_or(0);
    for r in &mut rows {
        r.lowest_mse = r.final_mse == best_mse;
        r.fewest_inactive_activations = r.inactive[&Channel::ActivationMeans] == fewest;
    }
    Ok(Comparison { shape, rows })
}

impl Comparison {
    /// Plain-text table, one row per run.
    pub fn render(&self) -> String {
        let mut out = format!("shape: {}\n", self.shape);
        out.push_str(&format!("{:<10} {:>12}", "lr", "final_mse"));
        for c in Channel::ALL {
            out.push_str(&format!(" {:>14}", format!("inact:{c}")));
        }
        for c in Channel::ALL {
            out.push_str(&format!(" {:>22}", format!("sos:{c} enc/dec")));
        }
        out.push_str("  flags\n");
        for r in &self.rows {
            out.push_str(&format!("{:<10} {:>12.6e}", r.learning_rate, r.final_mse));
            for c in Channel::ALL {
                out.push_str(&format!(" {:>14}", r.inactive[&c]));
            }
            for c in Channel::ALL {
                let [e, d] = r.spread_of_spread[&c];
                out.push_str(&format!(" {:>22}", format!("{e:.3e}/{d:.3e}")));
            }
            let mut flags = Vec::new();
            if r.lowest_mse {
                flags.push("lowest-mse");
            }
            if r.fewest_inactive_activations {
                flags.push("fewest-inactive-activations");
            }
            out.push_str(&format!("  {}\n", flags.join(",")));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(dir: &Path, epochs: u32, lrs: Vec<f64>) -> ExperimentPlan {
        ExperimentPlan {
            learning_rates: lrs,
            epochs,
            samples: 60,
            outdir: dir.to_path_buf(),
            ..ExperimentPlan::default()
        }
    }

    #[test]
    fn stem_format() {
        let c = RunConfig {
            learning_rate: 0.0001,
            ..RunConfig::default()
        };
        assert_eq!(run_stem(&c), "spiral_0.0001_1000");
        assert_eq!(
            default_run_path(Path::new("out"), &c),
            PathBuf::from("out/runs/spiral_0.0001_1000.nfl")
        );
    }

    #[test]
    fn plan_from_partial_json() {
        let p: ExperimentPlan =
            serde_json::from_str(r#"{"shapes":["circle"],"epochs":5}"#).unwrap();
        assert_eq!(p.shapes, vec![ShapeKind::Circle]);
        assert_eq!(p.learning_rates, DEFAULT_LEARNING_RATES.to_vec());
        assert_eq!(p.epochs, 5);
        assert!(serde_json::from_str::<ExperimentPlan>(r#"{"shapez":[]}"#).is_err());
    }

    #[test]
    fn invalid_plans() {
        let dir = tempfile::tempdir().unwrap();
        assert!(run_plan(&plan(dir.path(), 2, vec![])).is_err());
        assert!(run_plan(&ExperimentPlan {
            parallelism: 0,
            ..plan(dir.path(), 2, vec![0.01])
        })
        .is_err());
    }

    #[test]
    fn small_plan_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let idx = run_plan(&plan(dir.path(), 3, vec![0.01, 0.001])).unwrap();
        assert_eq!(idx.failed(), 0);
        assert_eq!(idx.entries.len(), 2);
        assert_eq!(idx.comparison_figures.len(), 6);
        for e in &idx.entries {
            let a = e.artifacts.as_ref().unwrap();
            assert!(dir.path().join(&e.run_file).exists());
            for f in a.figures.iter().chain([&a.report_json, &a.table_csv]) {
                assert!(dir.path().join(f).exists(), "{f}");
            }
            assert!(e.final_mse.unwrap().is_finite());
        }
        assert!(dir.path().join("index.json").exists());

        let runs: Vec<PathBuf> = idx
            .entries
            .iter()
            .map(|e| dir.path().join(&e.run_file))
            .collect();
        let cmp = compare_runs(&runs, &AnalysisOptions::default()).unwrap();
        assert_eq!(cmp.rows.len(), 2);
        assert_eq!(cmp.rows.iter().filter(|r| r.lowest_mse).count(), 1);
        assert!(cmp.render().contains("lowest-mse"));
    }

    #[test]
    fn compare_rejects_mixed_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = plan(dir.path(), 2, vec![0.01]);
        p.shapes = vec![ShapeKind::Spiral, ShapeKind::Circle];
        let idx = run_plan(&p).unwrap();
        let runs: Vec<PathBuf> = idx
            .entries
            .iter()
            .map(|e| dir.path().join(&e.run_file))
            .collect();
        assert!(matches!(
            compare_runs(&runs, &AnalysisOptions::default()),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
