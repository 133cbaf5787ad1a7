//! Experiment orchestration behind the CLI.
//!
//! Every runner takes a resolved [`ExperimentConfig`], writes its artifacts
//! below `output_dir`, and appends one ledger record per (case, method) to
//! `output_dir/ledger.jsonl`. Ledger records hold only deterministic values
//! (no timings, no absolute paths), so a rerun with the same configuration
//! and seed reproduces them byte for byte. Timings go to the JSON reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use num_complex::Complex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{effective_rank, normalized_singular_values, singular_ratio};
use crate::error::{Error, Result, StageExt};
use crate::fields::{aggregate_field, panel_field, pattern_correlation, FieldMap};
use crate::geometry::Vec3;
use crate::io;
use crate::masks::{derive_seed, make_masks, Mask, MaskStrategy, SeedRecord, StrategyKind};
use crate::recon::{compute_metrics, peak_match, reconstruct, rasterize_truth, ImageMetrics, ReconResult, SolverOptions};
use crate::scene::{build_scene, reference_target, ImageGrid, RoiBox, RoiConfig, Scene, SceneConfig, Side, TargetMap};
use crate::sensing::{
    add_clutter_at, build_sensing_matrix, project_target, signal_power, simulate_measurement, Measurement, NoiseSpec,
    SensingMatrix,
};

/// Reference signal for the requested SNR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseReference {
    /// Each method's own clean measurement vector sets its noise power.
    #[default]
    PerMethod,
    /// One noise floor for all methods, set from the proposed method's clean
    /// clutter-free signal (equal receiver noise, equal transmit power).
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClutterConfig {
    /// y coordinates of the clutter scatterer, one case each.
    pub positions_y: Vec<f64>,
    pub x: f64,
    pub z: f64,
    pub reflectivity: f64,
    pub mask_count: usize,
    pub snr_db: f64,
}

impl Default for ClutterConfig {
    fn default() -> Self {
        Self {
            positions_y: vec![3.0, 5.0, 10.0],
            x: 0.0,
            z: 8.0,
            reflectivity: 1.0,
            mask_count: 30,
            snr_db: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvdConfig {
    pub mask_count: usize,
    /// Frequencies used for the study; a single frequency isolates the
    /// panel-pair rank limit.
    pub frequencies: Vec<f64>,
    pub grid: [usize; 2],
    pub include_random: bool,
}

impl Default for SvdConfig {
    fn default() -> Self {
        Self {
            mask_count: 60,
            frequencies: vec![6.0e9],
            grid: [31, 31],
            include_random: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldsConfig {
    pub mask_count: usize,
    pub grid: [usize; 2],
    /// Sampling window = ROI scaled by this factor.
    pub window_scale: f64,
}

impl Default for FieldsConfig {
    fn default() -> Self {
        Self {
            mask_count: 3,
            grid: [61, 61],
            window_scale: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoiSweepConfig {
    pub rois: Vec<RoiConfig>,
    pub mask_count: usize,
    pub grid: [usize; 2],
}

impl Default for RoiSweepConfig {
    fn default() -> Self {
        let roi = |x: f64| RoiConfig {
            center: [x, 1.9, 8.0],
            extent_x: 1.0,
            extent_y: 1.0,
            extent_z: 0.0,
        };
        Self {
            rois: vec![roi(-1.2), roi(0.0), roi(1.2)],
            mask_count: 5,
            grid: [81, 41],
        }
    }
}

/// Everything a run needs. Defaults reproduce the reference study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene: SceneConfig,
    /// Strategy for the `masks`, `fields` and `image` runners.
    pub strategy: MaskStrategy,
    pub mask_count: usize,
    pub snr_db: f64,
    pub noise_reference: NoiseReference,
    pub rng_seed: u64,
    pub output_dir: PathBuf,
    /// Inverse grid `[nx, ny]` over the ROI.
    pub inverse_grid: [usize; 2],
    pub solver: SolverOptions,
    pub clutter: ClutterConfig,
    pub svd: SvdConfig,
    pub fields: FieldsConfig,
    pub roi_sweep: RoiSweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            strategy: MaskStrategy::focused_speckle(),
            mask_count: 20,
            snr_db: 20.0,
            noise_reference: NoiseReference::PerMethod,
            rng_seed: 1,
            output_dir: PathBuf::from("out"),
            inverse_grid: [31, 31],
            solver: SolverOptions {
                discrepancy: 1.0,
                ..SolverOptions::default()
            },
            clutter: ClutterConfig::default(),
            svd: SvdConfig::default(),
            fields: FieldsConfig::default(),
            roi_sweep: RoiSweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: &str| Err(Error::Config(m.to_string()));
        if self.mask_count == 0 || self.clutter.mask_count == 0 || self.svd.mask_count == 0 {
            return cfg("mask counts must be at least 1");
        }
        if self.snr_db.is_nan() || self.clutter.snr_db.is_nan() {
            return cfg("snr_db must be a number (use inf for noiseless)");
        }
        if self.inverse_grid.contains(&0) || self.svd.grid.contains(&0) || self.fields.grid.contains(&0) || self.roi_sweep.grid.contains(&0) {
            return cfg("grid sizes must be positive");
        }
        if !(self.fields.window_scale >= 1.0) {
            return cfg("fields.window_scale must be at least 1");
        }
        if self.svd.frequencies.is_empty() {
            return cfg("svd.frequencies must not be empty");
        }
        if !self.clutter.reflectivity.is_finite() {
            return cfg("clutter reflectivity must be finite");
        }
        // geometry is checked by building the scene
        build_scene::<f64>(&self.scene)?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, with `output_dir` blanked so that
    /// the hash identifies the computation rather than where it was written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn noise(&self, snr_db: f64, shared_power: f64) -> NoiseSpec {
        if snr_db == f64::INFINITY {
            return NoiseSpec::Noiseless;
        }
        match self.noise_reference {
            NoiseReference::PerMethod => NoiseSpec::SnrDb(snr_db),
            NoiseReference::Shared => NoiseSpec::Power(shared_power),
        }
    }
}

/// One line of the results ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRecord {
    pub experiment: String,
    pub case: String,
    pub method: String,
    pub config_hash: String,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    hash: String,
    out: PathBuf,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
        Ok(Self {
            cfg,
            hash: cfg.hash(),
            out: cfg.output_dir.clone(),
        })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn record(&self, experiment: &str, case: &str, method: &str, metrics: BTreeMap<String, f64>, artifacts: Vec<String>) -> Result<()> {
        let rec = LedgerRecord {
            experiment: experiment.into(),
            case: case.into(),
            method: method.into(),
            config_hash: self.hash.clone(),
            seed: self.cfg.rng_seed,
            metrics,
            artifacts,
        };
        io::append_ledger(&self.path("ledger.jsonl"), &rec)
    }

    fn write_report<S: Serialize>(&self, rel: &str, report: &S) -> Result<()> {
        let path = self.path(rel);
        let text = serde_json::to_string_pretty(report).map_err(|e| Error::Format {
            format: "report",
            message: e.to_string(),
        })?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// Index of a method's mask stream below the root seed.
fn method_stream(kind: StrategyKind) -> u64 {
    match kind {
        StrategyKind::FocusedSpeckle => 0,
        StrategyKind::RasterScan => 1,
        StrategyKind::RandomPattern => 2,
    }
}

/// Noise stream for case `case` and method `kind`.
fn noise_seed(root: u64, case: usize, kind: StrategyKind) -> SeedRecord {
    SeedRecord::new(derive_seed(root, 1000 + case as u64), method_stream(kind))
}

/// Quality figures of one method in one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub metrics: ImageMetrics,
    /// Top-K peaks lying within one inverse-grid cell of a true scatterer.
    pub peak_hits: usize,
    /// Distinct scatterers covered by those peaks.
    pub peaks_covered: usize,
    pub rows: usize,
    pub iterations: usize,
    pub converged: bool,
    pub signal_power: f64,
    pub noise_power: f64,
    pub artifacts: Vec<String>,
}

impl MethodReport {
    fn ledger_metrics(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("correlation".into(), self.metrics.normalized_correlation);
        m.insert("peak_localization_error_m".into(), self.metrics.peak_localization_error);
        m.insert("background_energy_ratio".into(), self.metrics.background_energy_ratio);
        m.insert("peak_hits".into(), self.peak_hits as f64);
        m.insert("peaks_covered".into(), self.peaks_covered as f64);
        m.insert("rows".into(), self.rows as f64);
        m.insert("iterations".into(), self.iterations as f64);
        m.insert("converged".into(), self.converged as u8 as f64);
        m.insert("signal_power".into(), self.signal_power);
        m.insert("noise_power".into(), self.noise_power);
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub case: String,
    pub methods: Vec<MethodReport>,
    pub runtime_seconds: f64,
}

impl ComparisonReport {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == name)
    }
}

/// Masks and inverse matrix of one strategy, reused across cases.
struct Campaign {
    kind: StrategyKind,
    masks: Vec<Mask<f64>>,
    h_inv: SensingMatrix<f64>,
}

impl Campaign {
    fn build(scene: &Scene<f64>, strategy: &MaskStrategy, count: usize, root: u64, grid: &ImageGrid<f64>) -> Result<Self> {
        let kind = strategy.kind();
        let masks = make_masks(scene, strategy, count, derive_seed(root, method_stream(kind))).stage("masks")?;
        let h_inv = build_sensing_matrix(scene, &masks, &grid.points).stage("sensing")?;
        Ok(Self { kind, masks, h_inv })
    }

    fn measure(&self, scene: &Scene<f64>, target: &TargetMap<f64>, noise: NoiseSpec, seed: SeedRecord) -> Result<(Measurement<f64>, f64)> {
        let h_fwd = build_sensing_matrix(scene, &self.masks, &target.positions()).stage("sensing")?;
        let clean = h_fwd.apply(&project_target(target, &h_fwd.grid).stage("measurement")?);
        let g = simulate_measurement(&h_fwd, target, noise, seed).stage("measurement")?;
        Ok((g, signal_power(&clean)))
    }
}

fn clean_power(scene: &Scene<f64>, c: &Campaign, target: &TargetMap<f64>) -> Result<f64> {
    Ok(c.measure(scene, target, NoiseSpec::Noiseless, SeedRecord::new(0, 0))?.1)
}

#[allow(clippy::too_many_arguments)]
fn solve_and_score(
    run: &Run,
    name: &str,
    prefix: &str,
    c: &Campaign,
    g: &Measurement<f64>,
    signal: f64,
    target: &TargetMap<f64>,
    grid: &ImageGrid<f64>,
) -> Result<(MethodReport, ReconResult<f64>)> {
    let r = reconstruct(&c.h_inv, g, &run.cfg.solver).stage("reconstruction")?;
    let report = score(run, name, prefix, &r.sigma_est, target, grid, (r.iterations, r.converged), c.h_inv.rows, signal, g.noise_power)?;
    Ok((report, r))
}

#[allow(clippy::too_many_arguments)]
fn score(
    run: &Run,
    name: &str,
    prefix: &str,
    sigma: &[Complex<f64>],
    target: &TargetMap<f64>,
    grid: &ImageGrid<f64>,
    solver: (usize, bool),
    rows: usize,
    signal: f64,
    noise: f64,
) -> Result<MethodReport> {
    let metrics = compute_metrics(sigma, target, grid).stage("metrics")?;
    let (hits, covered) = peak_match(sigma, target, grid);
    let csv = format!("{prefix}{name}_recon.csv");
    let png = format!("{prefix}{name}_recon.png");
    io::write_recon_csv(&run.path(&csv), grid, sigma).stage("output")?;
    let mags: Vec<f64> = sigma.iter().map(|z| z.norm()).collect();
    io::write_grid_png(&run.path(&png), &mags, grid.nx, grid.ny, 8).stage("output")?;
    Ok(MethodReport {
        method: name.into(),
        metrics,
        peak_hits: hits,
        peaks_covered: covered,
        rows,
        iterations: solver.0,
        converged: solver.1,
        signal_power: signal,
        noise_power: noise,
        artifacts: vec![csv, png],
    })
}

/// Beamformed raster image: each inverse-grid cell takes the
/// frequency-combined magnitude `sqrt(Σ_f |g|²)` of its nearest scan point.
pub fn raster_beamformed_image(
    g: &Measurement<f64>,
    h: &SensingMatrix<f64>,
    scan_points: &[Vec3<f64>],
    grid: &ImageGrid<f64>,
) -> Vec<Complex<f64>> {
    let mut energy = vec![0.0; scan_points.len()];
    for (meta, v) in h.row_meta.iter().zip(&g.g) {
        if let Some(e) = energy.get_mut(meta.mask_index) {
            *e += v.norm_sqr();
        }
    }
    grid.points
        .iter()
        .map(|p| Complex::new(energy[crate::scene::nearest_index(scan_points, *p)].sqrt(), 0.0))
        .collect()
}

fn inverse_grid(cfg: &ExperimentConfig, scene: &Scene<f64>) -> ImageGrid<f64> {
    scene.roi.grid(cfg.inverse_grid[0], cfg.inverse_grid[1])
}

fn write_truth(run: &Run, prefix: &str, target: &TargetMap<f64>, grid: &ImageGrid<f64>) -> Result<String> {
    let rel = format!("{prefix}truth.png");
    io::write_grid_png(&run.path(&rel), &rasterize_truth(target, grid), grid.nx, grid.ny, 8).stage("output")?;
    Ok(rel)
}

/// Proposed vs raster scan vs random patterns with identical frequencies,
/// measurement budget, target and SNR. The raster method is scored twice:
/// through the same iterative pipeline (`raster`) and as a beamformed scan
/// image (`raster_beamformed`).
pub fn run_compare(cfg: &ExperimentConfig) -> Result<ComparisonReport> {
    let start = Instant::now();
    let run = Run::new(cfg)?;
    let scene = build_scene::<f64>(&cfg.scene).stage("scene")?;
    let grid = inverse_grid(cfg, &scene);
    let target = reference_target::<f64>();
    let count = cfg.mask_count;
    let strategies = [
        MaskStrategy::focused_speckle(),
        MaskStrategy::raster_for_count(count),
        MaskStrategy::RandomPattern,
    ];
    let campaigns = strategies
        .iter()
        .map(|s| Campaign::build(&scene, s, count, cfg.rng_seed, &grid))
        .collect::<Result<Vec<_>>>()?;
    let rows = campaigns[0].h_inv.rows;
    if campaigns.iter().any(|c| c.h_inv.rows != rows) {
        return Err(Error::Stage {
            stage: "sensing",
            source: Box::new(Error::Config("methods disagree on the measurement budget".into())),
        });
    }
    let shared = clean_power(&scene, &campaigns[0], &target)? / 10f64.powf(cfg.snr_db / 10.0);
    let prefix = "compare/";
    let truth = write_truth(&run, prefix, &target, &grid)?;
    let mut methods = Vec::new();
    for c in &campaigns {
        let name = c.kind.label();
        let (g, signal) = c.measure(&scene, &target, cfg.noise(cfg.snr_db, shared), noise_seed(cfg.rng_seed, 0, c.kind))?;
        let (rep, _) = solve_and_score(&run, name, prefix, c, &g, signal, &target, &grid)?;
        info!("compare {name}: correlation {:.4}, peaks {}/{}", rep.metrics.normalized_correlation, rep.peak_hits, target.len());
        methods.push(rep);
        if c.kind == StrategyKind::RasterScan {
            let MaskStrategy::RasterScan { nx, ny } = MaskStrategy::raster_for_count(count) else {
                unreachable!()
            };
            let scan = scene.roi.cell_centers(nx, ny);
            let img = raster_beamformed_image(&g, &c.h_inv, &scan, &grid);
            let rep = score(&run, "raster_beamformed", prefix, &img, &target, &grid, (0, true), rows, signal, g.noise_power)?;
            methods.push(rep);
        }
    }
    for m in &methods {
        let mut artifacts = m.artifacts.clone();
        artifacts.push(truth.clone());
        run.record("compare", "baseline", &m.method, m.ledger_metrics(), artifacts)?;
    }
    let report = ComparisonReport {
        case: "baseline".into(),
        methods,
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    run.write_report("compare/report.json", &report)?;
    Ok(report)
}

/// One clutter case of the robustness study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClutterCase {
    /// `None` for the clutter-free baseline.
    pub clutter_y: Option<f64>,
    pub report: ComparisonReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClutterReport {
    pub cases: Vec<ClutterCase>,
    pub runtime_seconds: f64,
}

impl ClutterReport {
    /// Correlation drop of `method` from the baseline to the case at `y`.
    pub fn drop(&self, method: &str, y: f64) -> Option<f64> {
        let base = self.cases.iter().find(|c| c.clutter_y.is_none())?.report.method(method)?;
        let case = self.cases.iter().find(|c| c.clutter_y == Some(y))?.report.method(method)?;
        Some(base.metrics.normalized_correlation - case.metrics.normalized_correlation)
    }
}

/// Proposed vs random patterns with a clutter scatterer outside the ROI.
/// The inverse grid covers the ROI only, so clutter acts as model mismatch.
pub fn run_clutter_study(cfg: &ExperimentConfig) -> Result<ClutterReport> {
    let start = Instant::now();
    let run = Run::new(cfg)?;
    let scene = build_scene::<f64>(&cfg.scene).stage("scene")?;
    let grid = inverse_grid(cfg, &scene);
    let target = reference_target::<f64>();
    let cc = &cfg.clutter;
    let campaigns = [MaskStrategy::focused_speckle(), MaskStrategy::RandomPattern]
        .iter()
        .map(|s| Campaign::build(&scene, s, cc.mask_count, cfg.rng_seed, &grid))
        .collect::<Result<Vec<_>>>()?;
    let shared = clean_power(&scene, &campaigns[0], &target)? / 10f64.powf(cc.snr_db / 10.0);

    let mut positions: Vec<Option<f64>> = vec![None];
    positions.extend(cc.positions_y.iter().map(|y| Some(*y)));
    let mut cases = Vec::new();
    let mut baseline: BTreeMap<String, f64> = BTreeMap::new();
    for (ci, y) in positions.iter().enumerate() {
        let case_start = Instant::now();
        let (case_name, scene_target) = match y {
            None => ("baseline".to_string(), target.clone()),
            Some(y) => (
                format!("clutter_y{y}"),
                add_clutter_at(&target, Vec3::new(cc.x, *y, cc.z), Complex::new(cc.reflectivity, 0.0)),
            ),
        };
        let prefix = format!("clutter/{case_name}/");
        let mut methods = Vec::new();
        for c in &campaigns {
            let name = c.kind.label();
            let (g, signal) = c.measure(&scene, &scene_target, cfg.noise(cc.snr_db, shared), noise_seed(cfg.rng_seed, ci, c.kind))?;
            let (rep, _) = solve_and_score(&run, name, &prefix, c, &g, signal, &scene_target, &grid)?;
            let mut m = rep.ledger_metrics();
            let corr = rep.metrics.normalized_correlation;
            match y {
                None => {
                    baseline.insert(name.into(), corr);
                }
                Some(y) => {
                    m.insert("clutter_y".into(), *y);
                    m.insert("correlation_drop".into(), baseline[name] - corr);
                }
            }
            info!("clutter {case_name} {name}: correlation {corr:.4}");
            run.record("clutter", &case_name, name, m, rep.artifacts.clone())?;
            methods.push(rep);
        }
        cases.push(ClutterCase {
            clutter_y: *y,
            report: ComparisonReport {
                case: case_name,
                methods,
                runtime_seconds: case_start.elapsed().as_secs_f64(),
            },
        });
    }
    let report = ClutterReport {
        cases,
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    run.write_report("clutter/report.json", &report)?;
    Ok(report)
}

/// Normalized singular-value curve of one mask configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdCurve {
    pub label: String,
    pub values: Vec<f64>,
}

impl SvdCurve {
    /// `σ_hi / σ_lo` with 1-based indices.
    pub fn ratio(&self, hi: usize, lo: usize) -> Option<f64> {
        singular_ratio(&self.values, hi, lo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdReport {
    pub curves: Vec<SvdCurve>,
    pub runtime_seconds: f64,
}

impl SvdReport {
    pub fn curve(&self, label: &str) -> Option<&SvdCurve> {
        self.curves.iter().find(|c| c.label == label)
    }
}

/// Singular-value curves for offset-only, offset+angle and (optionally)
/// random-pattern masks over the same grid and frequencies.
pub fn run_svd_study(cfg: &ExperimentConfig) -> Result<SvdReport> {
    let start = Instant::now();
    let run = Run::new(cfg)?;
    let sc = &cfg.svd;
    let scene = build_scene::<f64>(&cfg.scene)
        .and_then(|s| s.with_frequencies(sc.frequencies.clone()))
        .stage("scene")?;
    let grid = scene.roi.grid(sc.grid[0], sc.grid[1]);
    let mut variants = vec![
        ("offset_only", MaskStrategy::offsets_only()),
        ("offset_angles", MaskStrategy::focused_speckle()),
    ];
    if sc.include_random {
        variants.push(("random", MaskStrategy::RandomPattern));
    }
    let mut curves = Vec::new();
    for (i, (label, strategy)) in variants.iter().enumerate() {
        let masks = make_masks(&scene, strategy, sc.mask_count, derive_seed(cfg.rng_seed, 10 + i as u64)).stage("masks")?;
        let h = build_sensing_matrix(&scene, &masks, &grid.points).stage("sensing")?;
        let values = normalized_singular_values(&h);
        curves.push(SvdCurve {
            label: label.to_string(),
            values,
        });
    }
    let csv = "svd/singular_values.csv".to_string();
    write_svd_csv(&run.path(&csv), &curves)?;
    for c in &curves {
        let mut m = BTreeMap::new();
        for k in [10usize, 30, 36, 40, 60] {
            if let Some(v) = c.values.get(k - 1) {
                m.insert(format!("sigma_{k}"), *v);
            }
        }
        if let Some(r) = c.ratio(40, 30) {
            m.insert("ratio_40_30".into(), r);
        }
        m.insert("rank_1e-3".into(), effective_rank(&c.values, 1e-3) as f64);
        m.insert("rank_1e-9".into(), effective_rank(&c.values, 1e-9) as f64);
        run.record("svd", "baseline", &c.label, m, vec![csv.clone()])?;
    }
    let report = SvdReport {
        curves,
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    run.write_report("svd/report.json", &report)?;
    Ok(report)
}

fn write_svd_csv(path: &Path, curves: &[SvdCurve]) -> Result<()> {
    let mut text = String::from("index");
    for c in curves {
        text.push(',');
        text.push_str(&c.label);
    }
    text.push('\n');
    let n = curves.iter().map(|c| c.values.len()).max().unwrap_or(0);
    for i in 0..n {
        text.push_str(&(i + 1).to_string());
        for c in curves {
            text.push(',');
            if let Some(v) = c.values.get(i) {
                text.push_str(&format!("{v:e}"));
            }
        }
        text.push('\n');
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Per-ROI confinement figures of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiSweepEntry {
    pub roi: RoiConfig,
    /// Mean share of Tx pattern energy inside this ROI.
    pub confinement: f64,
    /// Largest mean share inside any other ROI of the sweep.
    pub max_mismatched_confinement: f64,
    /// Intensity centroid of the mask-summed pattern.
    pub centroid: [f64; 3],
    pub centroid_inside: bool,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiSweepReport {
    pub entries: Vec<RoiSweepEntry>,
    pub runtime_seconds: f64,
}

/// Bounding window of all ROIs, padded by one ROI extent on every side.
fn sweep_window(rois: &[RoiBox<f64>], nx: usize, ny: usize) -> ImageGrid<f64> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let mut pad: f64 = 0.0;
    for r in rois {
        let (x0, x1) = r.x_range();
        let (y0, y1) = r.y_range();
        lo = [lo[0].min(x0), lo[1].min(y0)];
        hi = [hi[0].max(x1), hi[1].max(y1)];
        pad = pad.max(r.extent_x).max(r.extent_y);
    }
    let z = rois[0].center.z;
    ImageGrid::spanning((lo[0] - pad, hi[0] + pad), (lo[1] - pad, hi[1] + pad), z, nx, ny)
}

/// Regenerates masks for each ROI and measures where the speckle energy lands.
pub fn run_roi_sweep(cfg: &ExperimentConfig) -> Result<RoiSweepReport> {
    let start = Instant::now();
    let run = Run::new(cfg)?;
    let sw = &cfg.roi_sweep;
    if sw.rois.len() < 2 {
        return Err(Error::Config("roi_sweep needs at least two ROIs".into()));
    }
    let base = build_scene::<f64>(&cfg.scene).stage("scene")?;
    let rois: Vec<RoiBox<f64>> = sw.rois.iter().map(|r| r.to_roi()).collect();
    if rois.iter().any(|r| (r.center.z - rois[0].center.z).abs() > 1e-9) {
        return Err(Error::Config("roi_sweep ROIs must share one z plane".into()));
    }
    let window = sweep_window(&rois, sw.grid[0], sw.grid[1]);
    let f0 = base.design_frequency;
    let mut entries = Vec::new();
    for (i, roi) in rois.iter().enumerate() {
        let scene = base.with_roi(*roi).stage("scene")?;
        let masks = make_masks(&scene, &MaskStrategy::focused_speckle(), sw.mask_count, derive_seed(cfg.rng_seed, 200 + i as u64))
            .stage("masks")?;
        let mut fractions = vec![0.0; rois.len()];
        let mut intensity = vec![0.0; window.len()];
        for mask in &masks {
            let field = aggregate_field(&scene, mask, Side::Tx, &window.points, f0).stage("fields")?;
            for (j, other) in rois.iter().enumerate() {
                fractions[j] += field.energy_fraction_inside(other) / masks.len() as f64;
            }
            for (acc, v) in intensity.iter_mut().zip(&field.values) {
                *acc += v.norm_sqr();
            }
        }
        let total: f64 = intensity.iter().sum();
        let mut c = [0.0; 3];
        for (p, e) in window.points.iter().zip(&intensity) {
            c[0] += p.x * e / total;
            c[1] += p.y * e / total;
            c[2] += p.z * e / total;
        }
        let centroid = Vec3::new(c[0], c[1], c[2]);
        let png = format!("roi_sweep/roi{i}_intensity.png");
        let mags: Vec<f64> = intensity.iter().map(|e| e.sqrt()).collect();
        io::write_grid_png(&run.path(&png), &mags, window.nx, window.ny, 4).stage("output")?;
        let mismatched = fractions
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, f)| *f)
            .fold(0.0, f64::max);
        let entry = RoiSweepEntry {
            roi: sw.rois[i],
            confinement: fractions[i],
            max_mismatched_confinement: mismatched,
            centroid: c,
            centroid_inside: roi.contains_xy(centroid),
            artifacts: vec![png],
        };
        let mut m = BTreeMap::new();
        m.insert("confinement".into(), entry.confinement);
        m.insert("max_mismatched_confinement".into(), entry.max_mismatched_confinement);
        m.insert("centroid_x".into(), c[0]);
        m.insert("centroid_y".into(), c[1]);
        m.insert("centroid_inside".into(), entry.centroid_inside as u8 as f64);
        run.record("roi_sweep", &format!("roi{i}"), StrategyKind::FocusedSpeckle.label(), m, entry.artifacts.clone())?;
        entries.push(entry);
    }
    let report = RoiSweepReport {
        entries,
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    run.write_report("roi_sweep/report.json", &report)?;
    Ok(report)
}

/// Pattern figures of the `fields` runner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldsReport {
    /// Share of aggregate Tx energy inside the ROI, per mask.
    pub confinement: Vec<f64>,
    /// Pattern correlation of mask 0 at each frequency against the design frequency.
    pub squint_correlation: Vec<(f64, f64)>,
    /// Pattern correlation between masks 0 and 1 (offset/angle diversity), if two masks exist.
    pub mask_correlation: Option<f64>,
    pub artifacts: Vec<String>,
}

fn write_field(run: &Run, rel: &str, field: &FieldMap<f64>, grid: &ImageGrid<f64>) -> Result<Vec<String>> {
    let csv = format!("{rel}.csv");
    let png = format!("{rel}.png");
    io::write_field_csv(&run.path(&csv), field).stage("output")?;
    io::write_grid_png(&run.path(&png), &field.magnitudes(), grid.nx, grid.ny, 4).stage("output")?;
    Ok(vec![csv, png])
}

/// Renders single-panel and aggregate speckle patterns of the configured
/// strategy over a window around the ROI, plus the frequency squint of mask 0.
pub fn run_fields(cfg: &ExperimentConfig) -> Result<FieldsReport> {
    let run = Run::new(cfg)?;
    let fc = &cfg.fields;
    let scene = build_scene::<f64>(&cfg.scene).stage("scene")?;
    let count = match cfg.strategy {
        MaskStrategy::RasterScan { nx, ny } => nx * ny,
        _ => fc.mask_count,
    };
    let masks = make_masks(&scene, &cfg.strategy, count, derive_seed(cfg.rng_seed, method_stream(cfg.strategy.kind())))
        .stage("masks")?;
    let window = scene.roi.scaled(fc.window_scale).grid(fc.grid[0], fc.grid[1]);
    let f0 = scene.design_frequency;
    let mut artifacts = Vec::new();
    let mut confinement = Vec::new();
    let mut patterns = Vec::new();
    for mask in masks.iter().take(fc.mask_count) {
        let field = aggregate_field(&scene, mask, Side::Tx, &window.points, f0).stage("fields")?;
        confinement.push(field.energy_fraction_inside(&scene.roi));
        artifacts.extend(write_field(&run, &format!("fields/mask{}_tx_aggregate", mask.index), &field, &window)?);
        patterns.push(field);
    }
    let first = &masks[0];
    for panel in scene.panels(Side::Tx) {
        let field = panel_field(&scene, first, panel.id, &window.points, f0).stage("fields")?;
        artifacts.extend(write_field(&run, &format!("fields/mask0_panel{}", panel.id), &field, &window)?);
    }
    let mut squint = Vec::new();
    for f in &scene.frequencies {
        let field = aggregate_field(&scene, first, Side::Tx, &window.points, *f).stage("fields")?;
        squint.push((*f, pattern_correlation(&patterns[0].values, &field.values)));
        artifacts.extend(write_field(&run, &format!("fields/mask0_f{:.0}MHz", f / 1e6), &field, &window)?);
    }
    let mask_correlation = (patterns.len() > 1).then(|| pattern_correlation(&patterns[0].values, &patterns[1].values));
    let mut m = BTreeMap::new();
    for (i, c) in confinement.iter().enumerate() {
        m.insert(format!("confinement_mask{i}"), *c);
    }
    for (f, c) in &squint {
        m.insert(format!("squint_correlation_{:.0}MHz", f / 1e6), *c);
    }
    if let Some(c) = mask_correlation {
        m.insert("mask0_mask1_correlation".into(), c);
    }
    run.record("fields", "baseline", cfg.strategy.kind().label(), m, artifacts.clone())?;
    Ok(FieldsReport {
        confinement,
        squint_correlation: squint,
        mask_correlation,
        artifacts,
    })
}

/// Generates the configured masks and writes them as CSV.
pub fn run_masks(cfg: &ExperimentConfig) -> Result<Vec<Mask<f64>>> {
    let run = Run::new(cfg)?;
    let scene = build_scene::<f64>(&cfg.scene).stage("scene")?;
    let masks = make_masks(&scene, &cfg.strategy, cfg.mask_count, derive_seed(cfg.rng_seed, method_stream(cfg.strategy.kind())))
        .stage("masks")?;
    let rel = "masks/masks.csv".to_string();
    io::write_masks_csv(&run.path(&rel), &masks).stage("output")?;
    let mut m = BTreeMap::new();
    m.insert("mask_count".into(), masks.len() as f64);
    m.insert("panels".into(), scene.panel_count() as f64);
    m.insert("elements_per_mask".into(), masks[0].profiles.iter().map(|p| p.phases.len()).sum::<usize>() as f64);
    run.record("masks", "baseline", cfg.strategy.kind().label(), m, vec![rel])?;
    Ok(masks)
}

/// Single-strategy imaging run: masks, sensing matrix and measurement
/// container, reconstruction and metrics.
pub fn run_image(cfg: &ExperimentConfig) -> Result<MethodReport> {
    let run = Run::new(cfg)?;
    let scene = build_scene::<f64>(&cfg.scene).stage("scene")?;
    let grid = inverse_grid(cfg, &scene);
    let target = reference_target::<f64>();
    let c = Campaign::build(&scene, &cfg.strategy, cfg.mask_count, cfg.rng_seed, &grid)?;
    let shared = clean_power(&scene, &c, &target)? / 10f64.powf(cfg.snr_db / 10.0);
    let (g, signal) = c.measure(&scene, &target, cfg.noise(cfg.snr_db, shared), noise_seed(cfg.rng_seed, 0, c.kind))?;
    let name = c.kind.label();
    let (mut rep, _) = solve_and_score(&run, name, "image/", &c, &g, signal, &target, &grid)?;
    let masks_rel = "image/masks.csv".to_string();
    io::write_masks_csv(&run.path(&masks_rel), &c.masks).stage("output")?;
    let bin_rel = "image/sensing.bin".to_string();
    io::write_sensing_bin(&run.path(&bin_rel), &c.h_inv, Some(&g)).stage("output")?;
    rep.artifacts.push(masks_rel);
    rep.artifacts.push(bin_rel);
    rep.artifacts.push(write_truth(&run, "image/", &target, &grid)?);
    run.record("image", "baseline", name, rep.ledger_metrics(), rep.artifacts.clone())?;
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.scene.panel_rows = 4;
        cfg.scene.panel_cols = 4;
        cfg.scene.frequencies = vec![5.9e9, 6.1e9];
        cfg.mask_count = 4;
        cfg.inverse_grid = [7, 7];
        cfg.clutter.mask_count = 3;
        cfg.clutter.positions_y = vec![5.0];
        cfg.svd.mask_count = 6;
        cfg.svd.grid = [5, 5];
        cfg.fields.grid = [9, 9];
        cfg.fields.mask_count = 2;
        cfg.roi_sweep.grid = [11, 7];
        cfg.roi_sweep.mask_count = 2;
        cfg.output_dir = dir.to_path_buf();
        cfg
    }

    #[test]
    fn default_config_roundtrips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let err = ExperimentConfig::from_toml_str("mask_cnt = 3").unwrap_err();
        assert!(err.is_config_error());
        let err = ExperimentConfig::from_toml_str("mask_count = 0").unwrap_err();
        assert!(err.is_config_error());
    }

    #[test]
    fn hash_ignores_output_dir_but_not_seed() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.rng_seed += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn compare_has_all_methods_and_equal_budgets() {
        let dir = tempfile::tempdir().unwrap();
        let rep = run_compare(&tiny(dir.path())).unwrap();
        let names: Vec<&str> = rep.methods.iter().map(|m| m.method.as_str()).collect();
        assert_eq!(names, ["proposed", "raster", "raster_beamformed", "random"]);
        assert!(rep.methods.iter().all(|m| m.rows == 8));
        let ledger = io::read_ledger(&dir.path().join("ledger.jsonl")).unwrap();
        assert_eq!(ledger.len(), 4);
        for rec in &ledger {
            for a in rec["artifacts"].as_array().unwrap() {
                assert!(dir.path().join(a.as_str().unwrap()).exists());
            }
        }
    }

    #[test]
    fn small_runners_complete() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let clutter = run_clutter_study(&cfg).unwrap();
        assert_eq!(clutter.cases.len(), 2);
        assert!(clutter.drop("proposed", 5.0).is_some());
        let svd = run_svd_study(&cfg).unwrap();
        assert_eq!(svd.curves.len(), 3);
        let sweep = run_roi_sweep(&cfg).unwrap();
        assert_eq!(sweep.entries.len(), 3);
        let fields = run_fields(&cfg).unwrap();
        assert_eq!(fields.confinement.len(), 2);
        assert!(fields.mask_correlation.is_some());
        let masks = run_masks(&cfg).unwrap();
        let back: Vec<Mask<f64>> = io::read_masks_csv(&dir.path().join("masks/masks.csv")).unwrap();
        assert_eq!(back, masks);
        let img = run_image(&cfg).unwrap();
        assert!(img.metrics.normalized_correlation.is_finite());
        let (h, g) = io::read_sensing_bin::<f64>(&dir.path().join("image/sensing.bin")).unwrap();
        assert_eq!(h.rows, 8);
        assert_eq!(g.unwrap().g.len(), 8);
    }

    #[test]
    fn raster_count_mismatch_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.strategy = MaskStrategy::RasterScan { nx: 3, ny: 3 };
        let err = run_image(&cfg).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "masks", .. }));
        assert!(err.is_config_error());
    }
}
