//! Seeded simulation sweeps.
//!
//! A run is the grid `sweep values × seeds`. Every cell draws its own model,
//! training set and test set from streams derived from its seed, fits every
//! requested method on the training set without ground truth, and scores the
//! result against the generator truth. Cells run on a work pool; rows are
//! sorted before writing, so output bytes do not depend on scheduling.
//!
//! Layout under `output_dir/<config-hash>/`:
//! `config.json`, `gamma_table.json`, `results.csv`, `timings.csv`,
//! `summary_<metric>.csv` and `<seed>/<method>/x<index>/` fit artifacts.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alpha_est::AlphaSearch;
use crate::baselines::{gdm, spa};
use crate::error::{DsnError, Result};
use crate::eval::{evaluate, EvalReport};
use crate::extension::{
    build_gamma_table, estimate_gamma_detailed, log_spaced, GammaTable, DEFAULT_ALPHA_RANGE,
    DEFAULT_GRID_POINTS, DEFAULT_MC_SAMPLES,
};
use crate::io::{ensure_dir, load_vertices, write_json};
use crate::model::{generate, Dataset, Kernel, SimplexNest};
use crate::numerics::DEFAULT_RESTARTS;
use crate::rng::derived;
use crate::vlad::{fit_auto, fit_known_alpha, FitOptions};

const MODEL_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;
const METHOD_STREAM: u64 = 3;
const GDM_MC_STREAM: u64 = 4;

/// Size presets. Explicit config values always win.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// `D = 500` (2000 for multinomial), 10 seeds.
    #[default]
    Desk,
    /// `D = 100`, 10 seeds.
    Quick,
    /// `D = 500` (2000 for multinomial), 20 seeds.
    Paper,
}

/// Symmetric scalar or full concentration vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaValue {
    Symmetric(f64),
    Vector(Vec<f64>),
}

impl AlphaValue {
    pub fn as_vec(&self) -> Vec<f64> {
        match self {
            AlphaValue::Symmetric(a) => vec![*a],
            AlphaValue::Vector(v) => v.clone(),
        }
    }

    /// The common value, if the prior is symmetric.
    pub fn symmetric(&self) -> Option<f64> {
        match self {
            AlphaValue::Symmetric(a) => Some(*a),
            AlphaValue::Vector(v) => {
                let first = *v.first()?;
                v.iter().all(|&a| a == first).then_some(first)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    N,
    CMin,
    Alpha,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// VLAD with `γ` at the true `α`.
    Vlad,
    /// VLAD with `α` estimated from moments.
    VladAlpha,
    /// GDM with `γ` from the table at the true `α`.
    Gdm,
    /// GDM with a fresh Monte-Carlo `γ` at the true `α`.
    GdmMc,
    Spa,
    /// Pre-computed vertices; `{seed}` and `{x}` in the path are substituted.
    External(String),
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "vlad" => Method::Vlad,
            "vlad_alpha" => Method::VladAlpha,
            "gdm" => Method::Gdm,
            "gdm_mc" => Method::GdmMc,
            "spa" => Method::Spa,
            other => match other.strip_prefix("external:") {
                Some(path) if !path.is_empty() => Method::External(path.to_string()),
                _ => return Err(DsnError::param(format!("unknown method {other:?}"))),
            },
        })
    }

    pub fn label(&self) -> String {
        match self {
            Method::Vlad => "vlad".into(),
            Method::VladAlpha => "vlad_alpha".into(),
            Method::Gdm => "gdm".into(),
            Method::GdmMc => "gdm_mc".into(),
            Method::Spa => "spa".into(),
            Method::External(p) => format!("external:{p}"),
        }
    }

    /// Directory-safe name.
    pub fn slug(&self, index: usize) -> String {
        match self {
            Method::External(_) => format!("external{index}"),
            other => other.label(),
        }
    }

    fn needs_table(&self) -> bool {
        matches!(self, Method::Vlad | Method::VladAlpha | Method::Gdm)
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Method::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mm,
    MmFrobenius,
    HeldoutFrobenius,
    Nll,
    Perplexity,
    Volume,
    AlphaHat,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mm => "mm",
            Metric::MmFrobenius => "mm_frobenius",
            Metric::HeldoutFrobenius => "heldout_frobenius",
            Metric::Nll => "nll",
            Metric::Perplexity => "perplexity",
            Metric::Volume => "volume",
            Metric::AlphaHat => "alpha_hat",
        }
    }

    fn value(self, row: &ResultRow) -> Option<f64> {
        match self {
            Metric::Mm => row.mm_distance,
            Metric::MmFrobenius => row.mm_frobenius,
            Metric::HeldoutFrobenius => row.heldout_frobenius,
            Metric::Nll => row.nll,
            Metric::Perplexity => row.perplexity,
            Metric::Volume => row.volume,
            Metric::AlphaHat => row.alpha_hat,
        }
    }

    fn needs_test_set(self) -> bool {
        matches!(
            self,
            Metric::HeldoutFrobenius | Metric::Nll | Metric::Perplexity
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GammaBuildSpec {
    pub m: usize,
    pub points: usize,
    pub lo: f64,
    pub hi: f64,
    pub seed: u64,
}

impl Default for GammaBuildSpec {
    fn default() -> Self {
        Self {
            m: DEFAULT_MC_SAMPLES,
            points: DEFAULT_GRID_POINTS,
            lo: DEFAULT_ALPHA_RANGE.0,
            hi: DEFAULT_ALPHA_RANGE.1,
            seed: 0,
        }
    }
}

impl GammaBuildSpec {
    pub fn build(&self, k: usize) -> Result<GammaTable> {
        build_gamma_table(
            k,
            &log_spaced(self.lo, self.hi, self.points)?,
            self.m,
            self.seed,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSource {
    Path(PathBuf),
    Build(GammaBuildSpec),
}

impl Default for GammaSource {
    fn default() -> Self {
        GammaSource::Build(GammaBuildSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scale: Scale,
    pub kernel: Kernel,
    /// Defaults by scale and kernel when absent.
    #[serde(rename = "D", skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(rename = "K")]
    pub k: usize,
    pub alpha: AlphaValue,
    pub n: usize,
    pub n_test: usize,
    pub c_min: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    /// Defaults by scale when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    pub methods: Vec<Method>,
    /// Defaults by kernel when absent; held-out scores need `n_test > 0`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Vec<Metric>>,
    pub gamma_table: GammaSource,
    pub restarts: usize,
    pub gamma_mc_samples: usize,
    pub normalize_counts: bool,
    pub alpha_search: AlphaSearch,
    pub save_artifacts: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scale: Scale::Desk,
            kernel: Kernel::Gaussian { sigma: 1.0 },
            dim: None,
            k: 10,
            alpha: AlphaValue::Symmetric(2.0),
            n: 10_000,
            n_test: 1_000,
            c_min: 0.5,
            sweep: None,
            seeds: None,
            methods: vec![
                Method::Vlad,
                Method::VladAlpha,
                Method::Gdm,
                Method::GdmMc,
                Method::Spa,
            ],
            metrics: None,
            gamma_table: GammaSource::default(),
            restarts: DEFAULT_RESTARTS,
            gamma_mc_samples: DEFAULT_MC_SAMPLES,
            normalize_counts: true,
            alpha_search: AlphaSearch::default(),
            save_artifacts: true,
            output_dir: PathBuf::from("runs"),
        }
    }
}

/// Multinomial documents in the simulation protocol have this many words.
pub const DEFAULT_DOCUMENT_LENGTH: u32 = 3000;

/// One sweep coordinate resolved into model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    pub x: f64,
    pub n: usize,
    pub c_min: f64,
    pub alpha: AlphaValue,
}

impl ExperimentConfig {
    /// Parses a JSON manifest on top of `base`: fields present in the JSON
    /// replace the base values, nested objects merge key by key.
    pub fn from_json_over(base: &ExperimentConfig, json: &str) -> Result<Self> {
        let overrides: serde_json::Value = serde_json::from_str(json)?;
        let mut merged = serde_json::to_value(base)?;
        merge_json(&mut merged, overrides);
        Ok(serde_json::from_value(merged)?)
    }

    pub fn dim(&self) -> usize {
        self.dim.unwrap_or(match (self.scale, self.kernel) {
            (Scale::Quick, _) => 100,
            (_, Kernel::Multinomial { .. }) => 2000,
            _ => 500,
        })
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| {
            let count = if self.scale == Scale::Paper { 20 } else { 10 };
            (0..count).collect()
        })
    }

    pub fn metrics(&self) -> Vec<Metric> {
        self.metrics.clone().unwrap_or_else(|| {
            let mut m = vec![Metric::Mm, Metric::MmFrobenius, Metric::Volume];
            if self.n_test > 0 {
                m.push(Metric::HeldoutFrobenius);
                match self.kernel {
                    Kernel::Poisson => m.push(Metric::Nll),
                    Kernel::Multinomial { .. } => m.push(Metric::Perplexity),
                    _ => {}
                }
            }
            if self.methods.contains(&Method::VladAlpha) {
                m.push(Metric::AlphaHat);
            }
            m
        })
    }

    pub fn points(&self) -> Result<Vec<SweepPoint>> {
        let base = SweepPoint {
            index: 0,
            x: self.n as f64,
            n: self.n,
            c_min: self.c_min,
            alpha: self.alpha.clone(),
        };
        let Some(sweep) = &self.sweep else {
            return Ok(vec![base]);
        };
        sweep
            .values
            .iter()
            .enumerate()
            .map(|(index, &x)| {
                let mut p = SweepPoint {
                    index,
                    x,
                    ..base.clone()
                };
                match sweep.parameter {
                    SweepParameter::N => {
                        if x.fract() != 0.0 || x < 1.0 {
                            return Err(DsnError::param(format!(
                                "sample size {x} is not a positive integer"
                            )));
                        }
                        p.n = x as usize;
                    }
                    SweepParameter::CMin => p.c_min = x,
                    SweepParameter::Alpha => p.alpha = AlphaValue::Symmetric(x),
                }
                Ok(p)
            })
            .collect()
    }

    /// Hash of every field except the output directory.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&canonical)?;
        let digest = Sha256::digest(&bytes);
        Ok(digest.iter().take(6).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        }))
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        let (dim, k) = (self.dim(), self.k);
        if k < 2 || dim + 1 < k {
            return Err(DsnError::param(format!("invalid shape D={dim}, K={k}")));
        }
        let seeds = self.seeds();
        if seeds.is_empty() {
            return Err(DsnError::param("no seeds"));
        }
        if seeds.iter().collect::<HashSet<_>>().len() != seeds.len() {
            return Err(DsnError::param("seeds must be distinct"));
        }
        if self.methods.is_empty() {
            return Err(DsnError::param("no methods"));
        }
        if self.restarts == 0 || self.gamma_mc_samples < k {
            return Err(DsnError::param(
                "restarts and gamma_mc_samples must be positive",
            ));
        }
        AlphaSearch::new(self.alpha_search.lo, self.alpha_search.hi)?;
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(DsnError::param("sweep has no values"));
            }
        }
        let metrics = self.metrics();
        if metrics.iter().any(|m| m.needs_test_set()) && self.n_test == 0 {
            return Err(DsnError::param("held-out metrics need n_test > 0"));
        }
        for p in self.points()? {
            if p.n <= k {
                return Err(DsnError::param(format!("n={} must exceed K={k}", p.n)));
            }
            if !(p.c_min > 0.0 && p.c_min <= 1.0) {
                return Err(DsnError::param(format!("c_min={} outside (0, 1]", p.c_min)));
            }
            let alpha = p.alpha.as_vec();
            if alpha.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
                return Err(DsnError::param("alpha must be positive"));
            }
            if alpha.len() != 1 && alpha.len() != k {
                return Err(DsnError::param(format!(
                    "alpha has {} entries, K={k}",
                    alpha.len()
                )));
            }
            for (mi, method) in self.methods.iter().enumerate() {
                if let Method::External(template) = method {
                    for &seed in &seeds {
                        let path = external_path(template, seed, p.index);
                        if !path.exists() {
                            return Err(DsnError::param(format!(
                                "method {mi}: external vertices {} not found",
                                path.display()
                            )));
                        }
                    }
                }
            }
        }
        if let GammaSource::Path(path) = &self.gamma_table {
            if !path.exists() {
                return Err(DsnError::param(format!(
                    "gamma table {} not found",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            restarts: self.restarts,
            normalize_counts: self.normalize_counts,
            ..FitOptions::default()
        }
    }
}

fn merge_json(base: &mut serde_json::Value, overrides: serde_json::Value) {
    match (base, overrides) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (key, value) in o {
                match b.get_mut(&key) {
                    Some(slot) if slot.is_object() && value.is_object() => merge_json(slot, value),
                    _ => {
                        b.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}

fn external_path(template: &str, seed: u64, x_index: usize) -> PathBuf {
    PathBuf::from(
        template
            .replace("{seed}", &seed.to_string())
            .replace("{x}", &x_index.to_string()),
    )
}

/// Model, training set and test set of one cell. The model stream depends
/// only on the seed, so a seed keeps its raw vertices across a sweep.
pub fn cell_data(
    config: &ExperimentConfig,
    point: &SweepPoint,
    seed: u64,
) -> Result<(Dataset, Option<Dataset>)> {
    let mut model_rng = derived(seed, &[MODEL_STREAM]);
    let model = SimplexNest::sample(
        config.kernel,
        config.dim(),
        config.k,
        &point.alpha.as_vec(),
        point.c_min,
        &mut model_rng,
    )?;
    let train = generate(
        &model,
        point.n,
        &mut derived(seed, &[TRAIN_STREAM, point.index as u64]),
    )?;
    let test = if config.n_test > 0 {
        Some(generate(
            &model,
            config.n_test,
            &mut derived(seed, &[TEST_STREAM, point.index as u64]),
        )?)
    } else {
        None
    };
    Ok((train, test))
}

/// One row of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub x_index: usize,
    pub x: f64,
    pub seed: u64,
    pub method: String,
    pub error: Option<String>,
    pub mm_distance: Option<f64>,
    pub mm_frobenius: Option<f64>,
    pub heldout_frobenius: Option<f64>,
    pub nll: Option<f64>,
    pub perplexity: Option<f64>,
    pub volume: Option<f64>,
    pub gamma: Option<f64>,
    pub alpha_hat: Option<f64>,
    pub floored: Option<usize>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl ResultRow {
    fn empty(point: &SweepPoint, seed: u64, method: &Method) -> Self {
        Self {
            x_index: point.index,
            x: point.x,
            seed,
            method: method.label(),
            error: None,
            mm_distance: None,
            mm_frobenius: None,
            heldout_frobenius: None,
            nll: None,
            perplexity: None,
            volume: None,
            gamma: None,
            alpha_hat: None,
            floored: None,
            wall_time_s: 0.0,
        }
    }

    fn absorb(&mut self, report: &EvalReport, metrics: &[Metric]) {
        let wants = |m: Metric| metrics.contains(&m);
        if wants(Metric::Mm) {
            self.mm_distance = Some(report.mm_distance);
        }
        if wants(Metric::MmFrobenius) {
            self.mm_frobenius = Some(report.mm_frobenius);
        }
        if wants(Metric::HeldoutFrobenius) {
            self.heldout_frobenius = report.frobenius_heldout;
        }
        if wants(Metric::Nll) {
            self.nll = report.nll;
        }
        if wants(Metric::Perplexity) {
            self.perplexity = report.perplexity;
        }
        if wants(Metric::Volume) {
            self.volume = Some(report.volume);
        }
        if metrics.iter().any(|m| m.needs_test_set()) {
            self.floored = Some(report.floored);
        }
    }
}

pub const RESULTS_HEADER: &str = "x_index,x,seed,method,status,mm_distance,mm_frobenius,heldout_frobenius,nll,perplexity,volume,gamma,alpha_hat,floored,error";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl ResultRow {
    pub fn csv_line(&self) -> String {
        let status = if self.error.is_some() { "failed" } else { "ok" };
        [
            self.x_index.to_string(),
            format!("{}", self.x),
            self.seed.to_string(),
            csv_field(&self.method),
            status.to_string(),
            fmt_opt(self.mm_distance),
            fmt_opt(self.mm_frobenius),
            fmt_opt(self.heldout_frobenius),
            fmt_opt(self.nll),
            fmt_opt(self.perplexity),
            fmt_opt(self.volume),
            fmt_opt(self.gamma),
            fmt_opt(self.alpha_hat),
            self.floored.map(|f| f.to_string()).unwrap_or_default(),
            csv_field(&self.error.clone().unwrap_or_default().replace('\n', " ")),
        ]
        .join(",")
    }
}

/// `(x, method) -> (mean, half standard deviation)` over successful seeds,
/// with the population standard deviation.
pub fn summarize(rows: &[ResultRow], metric: Metric) -> Vec<(f64, String, f64, f64)> {
    let mut groups: BTreeMap<(usize, String), (f64, Vec<f64>)> = BTreeMap::new();
    for row in rows {
        if let Some(v) = metric.value(row) {
            groups
                .entry((row.x_index, row.method.clone()))
                .or_insert_with(|| (row.x, Vec::new()))
                .1
                .push(v);
        }
    }
    groups
        .into_iter()
        .map(|((_, method), (x, values))| {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            (x, method, mean, 0.5 * var.sqrt())
        })
        .collect()
}

/// Output of [`run`].
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub root: PathBuf,
    pub rows: Vec<ResultRow>,
    pub failures: usize,
}

/// Resolves the gamma table named by the config, building it if needed.
pub fn resolve_gamma_table(config: &ExperimentConfig) -> Result<GammaTable> {
    let table = match &config.gamma_table {
        GammaSource::Path(path) => GammaTable::load(path)?,
        GammaSource::Build(spec) => spec.build(config.k)?,
    };
    if table.k != config.k {
        return Err(DsnError::param(format!(
            "gamma table is for K={}, config has K={}",
            table.k, config.k
        )));
    }
    Ok(table)
}

/// Runs the sweep on a pool of `threads` workers (rayon default if `None`).
pub fn run(config: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentOutcome> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| DsnError::param(format!("thread pool: {e}")))?;
    pool.install(|| run_in_pool(config))
}

fn run_in_pool(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let root = config.output_dir.join(config.hash()?);
    ensure_dir(&root)?;
    write_json(&root.join("config.json"), config)?;

    let table = if config.methods.iter().any(Method::needs_table) {
        let t = resolve_gamma_table(config)?;
        write_json(&root.join("gamma_table.json"), &t)?;
        Some(t)
    } else {
        None
    };
    let points = config.points()?;
    let gdm_mc_gammas: Vec<Option<std::result::Result<f64, String>>> = if config
        .methods
        .contains(&Method::GdmMc)
    {
        let gamma_seed = match &config.gamma_table {
            GammaSource::Build(spec) => spec.seed,
            GammaSource::Path(_) => 0,
        };
        points
            .par_iter()
            .map(|p| {
                let estimate = p
                    .alpha
                    .symmetric()
                    .ok_or_else(|| {
                        DsnError::Unsupported("extension parameters need a symmetric alpha".into())
                    })
                    .and_then(|a| {
                        let mut rng = derived(gamma_seed, &[GDM_MC_STREAM, p.index as u64]);
                        estimate_gamma_detailed(
                            config.k,
                            a,
                            config.gamma_mc_samples,
                            config.restarts,
                            &mut rng,
                        )
                    });
                Some(estimate.map(|e| e.gamma).map_err(|e| e.to_string()))
            })
            .collect()
    } else {
        vec![None; points.len()]
    };

    let metrics = config.metrics();
    let seeds = config.seeds();
    let cells: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let ctx = CellContext {
        config,
        table: table.as_ref(),
        gdm_mc_gammas: &gdm_mc_gammas,
        metrics: &metrics,
        root: &root,
    };
    let mut rows: Vec<ResultRow> = cells
        .par_iter()
        .map(|&(i, seed)| ctx.run_cell(&points[i], seed))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    rows.sort_by(|a, b| (a.x_index, a.seed, &a.method).cmp(&(b.x_index, b.seed, &b.method)));

    write_results(&root, &rows, &metrics)?;
    let failures = rows.iter().filter(|r| r.error.is_some()).count();
    Ok(ExperimentOutcome {
        root,
        rows,
        failures,
    })
}

fn write_results(root: &Path, rows: &[ResultRow], metrics: &[Metric]) -> Result<()> {
    let mut results = String::from(RESULTS_HEADER);
    results.push('\n');
    let mut timings = String::from("x_index,seed,method,wall_time_s\n");
    for row in rows {
        results.push_str(&row.csv_line());
        results.push('\n');
        let _ = writeln!(
            timings,
            "{},{},{},{:.6}",
            row.x_index,
            row.seed,
            csv_field(&row.method),
            row.wall_time_s
        );
    }
    let path = root.join("results.csv");
    fs::write(&path, results).map_err(|e| DsnError::io(&path, e))?;
    let path = root.join("timings.csv");
    fs::write(&path, timings).map_err(|e| DsnError::io(&path, e))?;
    for &metric in metrics {
        let mut out = String::from("x,method,mean,half_sd\n");
        for (x, method, mean, half_sd) in summarize(rows, metric) {
            let _ = writeln!(out, "{x},{},{mean:.16e},{half_sd:.16e}", csv_field(&method));
        }
        let path = root.join(format!("summary_{}.csv", metric.name()));
        fs::write(&path, out).map_err(|e| DsnError::io(&path, e))?;
    }
    Ok(())
}

struct CellContext<'a> {
    config: &'a ExperimentConfig,
    table: Option<&'a GammaTable>,
    gdm_mc_gammas: &'a [Option<std::result::Result<f64, String>>],
    metrics: &'a [Metric],
    root: &'a Path,
}

struct MethodFit {
    vertices: DMatrix<f64>,
    gamma: Option<f64>,
    alpha_hat: Option<f64>,
}

impl CellContext<'_> {
    fn run_cell(&self, point: &SweepPoint, seed: u64) -> Vec<ResultRow> {
        let data = cell_data(self.config, point, seed);
        self.config
            .methods
            .iter()
            .enumerate()
            .map(|(mi, method)| {
                let mut row = ResultRow::empty(point, seed, method);
                let outcome = data
                    .as_ref()
                    .map_err(|e| e.to_string())
                    .and_then(|(train, test)| {
                        let start = Instant::now();
                        let fitted = self
                            .fit_method(method, mi, point, seed, train)
                            .map_err(|e| e.to_string())?;
                        row.wall_time_s = start.elapsed().as_secs_f64();
                        row.gamma = fitted.gamma;
                        if self.metrics.contains(&Metric::AlphaHat) {
                            row.alpha_hat = fitted.alpha_hat;
                        }
                        let truth = train.truth.as_ref().expect("generated data carries truth");
                        let wants_test = self.metrics.iter().any(|m| m.needs_test_set());
                        let report = evaluate(
                            &fitted.vertices,
                            truth.simplex.vertices(),
                            if wants_test { test.as_ref() } else { None },
                            self.config.normalize_counts,
                        )
                        .map_err(|e| e.to_string())?;
                        row.absorb(&report, self.metrics);
                        Ok(())
                    });
                if let Err(message) = outcome {
                    log::warn!(
                        "cell x={} seed={seed} method={}: {message}",
                        point.index,
                        method.label()
                    );
                    row.error = Some(message);
                }
                row
            })
            .collect()
    }

    fn fit_method(
        &self,
        method: &Method,
        method_index: usize,
        point: &SweepPoint,
        seed: u64,
        train: &Dataset,
    ) -> Result<MethodFit> {
        let cfg = self.config;
        let blind = train.without_truth();
        let mut rng = derived(
            seed,
            &[METHOD_STREAM, point.index as u64, method_index as u64],
        );
        let artifacts = cfg.save_artifacts.then(|| {
            self.root
                .join(seed.to_string())
                .join(method.slug(method_index))
                .join(format!("x{}", point.index))
        });
        let true_alpha = || {
            point.alpha.symmetric().ok_or_else(|| {
                DsnError::Unsupported("extension parameters need a symmetric alpha".into())
            })
        };
        let table = || {
            self.table
                .ok_or_else(|| DsnError::param("gamma table missing"))
        };
        let opts = cfg.fit_options();
        let out = match method {
            Method::Vlad => {
                let f = fit_known_alpha(&blind, cfg.k, true_alpha()?, table()?, &opts, &mut rng)?;
                if let Some(dir) = &artifacts {
                    f.save(dir, Some(seed))?;
                }
                MethodFit {
                    vertices: f.vertices,
                    gamma: Some(f.gamma),
                    alpha_hat: None,
                }
            }
            Method::VladAlpha => {
                let (f, est) =
                    fit_auto(&blind, cfg.k, table()?, &cfg.alpha_search, &opts, &mut rng)?;
                if let Some(dir) = &artifacts {
                    f.save(dir, Some(seed))?;
                }
                MethodFit {
                    vertices: f.vertices,
                    gamma: Some(f.gamma),
                    alpha_hat: Some(est.alpha),
                }
            }
            Method::Gdm | Method::GdmMc => {
                let gamma = if *method == Method::Gdm {
                    table()?.lookup(true_alpha()?)
                } else {
                    match &self.gdm_mc_gammas[point.index] {
                        Some(Ok(g)) => *g,
                        Some(Err(e)) => return Err(DsnError::Numerical(e.clone())),
                        None => return Err(DsnError::param("gdm_mc gamma missing")),
                    }
                };
                let mut f = gdm(
                    &blind,
                    cfg.k,
                    gamma,
                    cfg.restarts,
                    cfg.normalize_counts,
                    &mut rng,
                )?;
                if *method == Method::GdmMc {
                    f.method = crate::baselines::Baseline::GdmMc;
                }
                if let Some(dir) = &artifacts {
                    f.save(dir, Some(seed))?;
                }
                MethodFit {
                    vertices: f.vertices,
                    gamma: Some(gamma),
                    alpha_hat: None,
                }
            }
            Method::Spa => {
                let f = spa(&blind, cfg.k, cfg.normalize_counts)?;
                if let Some(dir) = &artifacts {
                    f.save(dir, Some(seed))?;
                }
                MethodFit {
                    vertices: f.vertices,
                    gamma: None,
                    alpha_hat: None,
                }
            }
            Method::External(template) => {
                let vertices = load_vertices(&external_path(template, seed, point.index))?;
                MethodFit {
                    vertices,
                    gamma: None,
                    alpha_hat: None,
                }
            }
        };
        Ok(out)
    }
}

/// Writes the training set of every cell to `dir/<seed>/` (`dir/<seed>/x<index>/`
/// when sweeping) and its test set to the `test/` subdirectory.
pub fn generate_datasets(config: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let mut written = Vec::new();
    for p in &config.points()? {
        for seed in config.seeds() {
            let (train, test) = cell_data(config, p, seed)?;
            let mut cell = dir.join(seed.to_string());
            if config.sweep.is_some() {
                cell = cell.join(format!("x{}", p.index));
            }
            crate::io::save_dataset(&cell, &train, Some(seed))?;
            if let Some(test) = test {
                crate::io::save_dataset(&cell.join("test"), &test, Some(seed))?;
            }
            written.push(cell);
        }
    }
    Ok(written)
}
