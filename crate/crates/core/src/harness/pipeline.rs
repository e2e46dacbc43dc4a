use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Regime};
use super::plot::{Figure, Stroke, PALETTE};
use super::store::{hash_files, Store};
use crate::conformal::{
    build_band, conformal_quantile, empirical_coverage, rows_to_csv, uncalibrated_band, validation_sweep, BandInputs,
    CoverageSummary, Method, NonconformityMethod, PredictionBand, QuantileField, SweepTable,
};
use crate::digest::hash_json;
use crate::error::{Error, Result};
use crate::neural::{
    load_model, predict, predict_mc, save_model, train, CheckpointHeader, LossKind, MlpConfig, ModelParams,
};
use crate::sampling::{child_seed, latin_hypercube, Rng};
use crate::solvers::{generate_dataset, load_dataset, save_dataset, SimulationRecord, SOLVER_VERSION};
use crate::tensor::{
    load_stack, load_tensor, save_stack, save_with_sidecar, FieldStack, Finiteness, Sidecar,
};

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Gen,
    Train,
    Predict,
    Calibrate,
    Band,
    Validate,
    Sweep,
    StudyNcal,
    Plot,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Gen => "gen",
            Stage::Train => "train",
            Stage::Predict => "predict",
            Stage::Calibrate => "calibrate",
            Stage::Band => "band",
            Stage::Validate => "validate",
            Stage::Sweep => "sweep",
            Stage::StudyNcal => "study-ncal",
            Stage::Plot => "plot",
        }
    }
}

/// Child-seed indices of the master seed.
mod seeds {
    pub const TRAIN_DESIGN: u64 = 0;
    pub const POOL_DESIGN: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const MODEL: u64 = 10;
    pub const MC_DROPOUT: u64 = 20;
    pub const NCAL: u64 = 30;
}

/// Miscoverage levels drawn in the band-slice figure.
const SLICE_ALPHAS: [f64; 2] = [0.1, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Role {
    Aer,
    Std,
    CqrLo,
    CqrMid,
    CqrHi,
}

impl Role {
    fn name(self) -> &'static str {
        match self {
            Role::Aer => "aer",
            Role::Std => "std",
            Role::CqrLo => "cqr_lo",
            Role::CqrMid => "cqr_mid",
            Role::CqrHi => "cqr_hi",
        }
    }

    fn index(self) -> u64 {
        self as u64
    }

    fn for_method(m: &NonconformityMethod) -> &'static [Role] {
        match m {
            NonconformityMethod::Aer => &[Role::Aer],
            NonconformityMethod::Std { .. } => &[Role::Std],
            NonconformityMethod::Cqr { .. } => &[Role::CqrLo, Role::CqrMid, Role::CqrHi],
        }
    }
}

/// Record of one stage directory used by a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub key: String,
    /// Relative to the output directory.
    pub dir: PathBuf,
    #[serde(skip)]
    pub reused: bool,
}

/// Coverage at the primary level for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub experiment: String,
    pub method: Method,
    pub config_hash: String,
    pub seed: u64,
    pub calibrated: CoverageSummary,
    /// Tightness divided by the half-range of the training targets.
    pub tightness_normalised: f64,
    pub uncalibrated: Option<CoverageSummary>,
    pub infinite_quantile_cells: usize,
}

/// Everything a run produced or reused.
#[derive(Debug, Clone, Default)]
pub struct RunArtifacts {
    pub config_hash: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub stages: Vec<StageRecord>,
    pub reports: Vec<MethodReport>,
    pub sweeps: Vec<SweepTable>,
    pub ncal: Vec<(usize, SweepTable)>,
    /// Report and figure files (relative path to SHA-256).
    pub files: BTreeMap<String, String>,
    /// Wall-clock seconds per stage; not persisted.
    pub timings: Vec<(Stage, f64)>,
}

impl RunArtifacts {
    /// Whether every directory of `stage` came from an earlier run.
    pub fn reused(&self, stage: &str) -> bool {
        let mut it = self.stages.iter().filter(|s| s.stage == stage).peekable();
        it.peek().is_some() && it.all(|s| s.reused)
    }

    pub fn report(&self, m: Method) -> Option<&MethodReport> {
        self.reports.iter().find(|r| r.method == m)
    }

    pub fn sweep(&self, m: Method) -> Option<&SweepTable> {
        self.sweeps.iter().find(|s| s.method == m)
    }
}

#[derive(Serialize)]
struct ArtifactIndex<'a> {
    experiment: &'a str,
    config_hash: &'a str,
    seed: u64,
    stages: &'a [StageRecord],
    files: &'a BTreeMap<String, String>,
}

/// Calibration and validation outputs of one method.
#[derive(Debug, Clone)]
pub struct MethodData {
    pub method: NonconformityMethod,
    pub cal: BandInputs,
    pub val: BandInputs,
    pub cal_truth: FieldStack,
    pub val_truth: FieldStack,
    /// Point prediction on the validation set (for figures).
    pub point: FieldStack,
    /// Half-range of the training targets.
    pub width_scale: f64,
    key: String,
}

struct TrainedModel {
    model: ModelParams,
    key: String,
}

fn staged<T>(stage: Stage, path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage: stage.name(),
            path: path.to_path_buf(),
            source: Box::new(e),
        },
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

pub struct Pipeline {
    cfg: ExperimentConfig,
    store: Store,
    config_hash: String,
    art: RunArtifacts,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig, out: &Path) -> Result<Self> {
        cfg.validate()?;
        let config_hash = cfg.config_hash();
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        Ok(Pipeline {
            store: Store::new(out, config_hash.clone(), cfg.seed),
            art: RunArtifacts {
                config_hash: config_hash.clone(),
                seed: cfg.seed,
                out_dir: out.to_path_buf(),
                ..Default::default()
            },
            cfg,
            config_hash,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    fn seed(&self, index: u64) -> u64 {
        child_seed(self.cfg.seed, index)
    }

    fn record(&mut self, stage: Stage, key: &str, dir: &Path, reused: bool) {
        let rel = dir.strip_prefix(self.store.root()).unwrap_or(dir).to_path_buf();
        self.art.stages.push(StageRecord {
            stage: stage.name().to_string(),
            key: key.to_string(),
            dir: rel,
            reused,
        });
    }

    fn reports_dir(&self) -> PathBuf {
        self.store.root().join("reports")
    }

    fn plots_dir(&self) -> PathBuf {
        self.store.root().join("plots")
    }

    fn generate(&mut self, name: &str, regime: &Regime, n: usize, seed_index: u64) -> Result<(Vec<SimulationRecord>, String)> {
        let design_seed = self.seed(seed_index);
        let key = hash_json(&(name, regime, n, self.cfg.window, design_seed, SOLVER_VERSION));
        let dir = self.store.dir(&format!("data/{name}"), &key);
        let reused = self.store.is_complete(&dir, &key);
        let records = staged(Stage::Gen, &dir, (|| {
            if reused {
                return Ok(load_dataset(&dir)?.0);
            }
            self.store.begin(&dir)?;
            let design = latin_hypercube(&regime.specs, n, design_seed)?;
            let (records, manifest) = generate_dataset(&design, &regime.solver, self.cfg.window, design_seed)?;
            save_dataset(&dir, &records, &manifest)?;
            self.store.seal(&dir, Stage::Gen.name(), &key)?;
            Ok(records)
        })())?;
        self.record(Stage::Gen, &key, &dir, reused);
        Ok((records, key))
    }

    fn role_setup(&self, role: Role, in_len: usize, out_len: usize) -> (MlpConfig, LossKind) {
        let s = &self.cfg.surrogate;
        let mut sizes = vec![in_len];
        sizes.extend(&s.hidden);
        sizes.push(out_len);
        let mut m = MlpConfig::new(sizes);
        m.activation = s.activation;
        let (lo, hi) = self
            .cfg
            .methods
            .iter()
            .find_map(|m| match *m {
                NonconformityMethod::Cqr { alpha_lo, alpha_hi } => Some((alpha_lo, alpha_hi)),
                _ => None,
            })
            .unwrap_or((0.05, 0.95));
        match role {
            Role::Aer => (m, s.aer_loss),
            Role::Std => {
                m.dropout_rate = s.dropout_rate;
                (m, LossKind::Mse)
            }
            Role::CqrLo => (m, LossKind::Pinball { tau: lo }),
            Role::CqrMid => (m, LossKind::Pinball { tau: 0.5 }),
            Role::CqrHi => (m, LossKind::Pinball { tau: hi }),
        }
    }

    fn train_models(&mut self, data: &[SimulationRecord], data_key: &str) -> Result<BTreeMap<Role, TrainedModel>> {
        let mut roles: Vec<Role> = self.cfg.methods.iter().flat_map(Role::for_method).copied().collect();
        roles.sort();
        let inputs: Vec<Vec<f64>> = data.iter().map(|r| r.input.data().to_vec()).collect();
        let targets: Vec<Vec<f64>> = data.iter().map(|r| r.output.data().to_vec()).collect();
        let (in_len, out_len) = (inputs[0].len(), targets[0].len());
        let jobs: Vec<_> = roles
            .iter()
            .map(|&role| {
                let (mcfg, loss) = self.role_setup(role, in_len, out_len);
                let tcfg = self.cfg.train.with_seed(self.seed(seeds::MODEL + role.index()));
                let key = hash_json(&(data_key, &mcfg, &tcfg, loss));
                let dir = self.store.dir(&format!("models/{}", role.name()), &key);
                let reused = self.store.is_complete(&dir, &key);
                (role, mcfg, tcfg, loss, key, dir, reused)
            })
            .collect();
        let store = &self.store;
        let config_hash = &self.config_hash;
        // Independent models train in parallel; each is deterministic on its own.
        let trained: Vec<Result<TrainedModel>> = jobs
            .par_iter()
            .map(|(_, mcfg, tcfg, loss, key, dir, reused)| {
                staged(Stage::Train, dir, (|| {
                    if *reused {
                        let (model, _) = load_model(dir)?;
                        return Ok(TrainedModel { model, key: key.clone() });
                    }
                    store.begin(dir)?;
                    let out = train(&inputs, &targets, mcfg, tcfg, *loss)?;
                    let header = CheckpointHeader {
                        config: mcfg.clone(),
                        train: Some(tcfg.clone()),
                        loss: Some(*loss),
                        normalizer: out.model.normalizer,
                        seed: tcfg.seed,
                        config_hash: config_hash.clone(),
                        history: out.history,
                    };
                    save_model(dir, &out.model, &header)?;
                    store.seal(dir, Stage::Train.name(), key)?;
                    Ok(TrainedModel {
                        model: out.model,
                        key: key.clone(),
                    })
                })())
            })
            .collect();
        let mut models = BTreeMap::new();
        for ((role, .., key, dir, reused), m) in jobs.into_iter().zip(trained) {
            let m = m?;
            self.record(Stage::Train, &key, &dir, reused);
            models.insert(role, m);
        }
        Ok(models)
    }

    fn split(&self) -> (Vec<usize>, Vec<usize>) {
        let perm = Rng::new(self.seed(seeds::SPLIT)).permutation(self.cfg.n_cal + self.cfg.n_val);
        let (cal, val) = perm.split_at(self.cfg.n_cal);
        (cal.to_vec(), val.to_vec())
    }

    fn predict_method(
        &mut self,
        method: NonconformityMethod,
        pool: &[SimulationRecord],
        pool_key: &str,
        models: &BTreeMap<Role, TrainedModel>,
    ) -> Result<MethodData> {
        let roles = Role::for_method(&method);
        let model_keys: Vec<&str> = roles.iter().map(|r| models[r].key.as_str()).collect();
        let mc_seed = self.seed(seeds::MC_DROPOUT);
        let (cal_idx, val_idx) = self.split();
        let key = hash_json(&(pool_key, &model_keys, method, &cal_idx, mc_seed));
        let tag = method.tag();
        let dir = self.store.dir(&format!("predictions/{tag}"), &key);
        let reused = self.store.is_complete(&dir, &key);
        let dims = pool[0].output.dims();
        let width_scale = models[&roles[0]].model.normalizer.output_scale();
        let names: &[&str] = match tag {
            Method::Aer => &["pred"],
            Method::Std => &["mu", "sigma"],
            Method::Cqr => &["lo", "hi", "mid"],
        };
        let (seed, hash) = (self.cfg.seed, self.config_hash.clone());
        let stacks: BTreeMap<String, FieldStack> = staged(Stage::Predict, &dir, (|| {
            let mut stacks = BTreeMap::new();
            if reused {
                for part in ["cal", "val"] {
                    for name in names.iter().chain(&["truth"]) {
                        let stem = format!("{part}_{name}");
                        stacks.insert(stem.clone(), load_stack(&dir, &stem)?);
                    }
                }
                return Ok(stacks);
            }
            self.store.begin(&dir)?;
            let rows: Vec<Vec<Vec<f64>>> = pool
                .par_iter()
                .enumerate()
                .map(|(i, r)| {
                    let x = r.input.data();
                    Ok(match method {
                        NonconformityMethod::Aer => vec![predict(&models[&Role::Aer].model, x)?],
                        NonconformityMethod::Std { passes } => {
                            let mut rng = Rng::child(mc_seed, i as u64);
                            let (mu, sigma) = predict_mc(&models[&Role::Std].model, x, passes, &mut rng)?;
                            vec![mu, sigma]
                        }
                        NonconformityMethod::Cqr { .. } => vec![
                            predict(&models[&Role::CqrLo].model, x)?,
                            predict(&models[&Role::CqrHi].model, x)?,
                            predict(&models[&Role::CqrMid].model, x)?,
                        ],
                    })
                })
                .collect::<Result<_>>()?;
            let truth = FieldStack::from_tensors(pool.iter().map(|r| &r.output))?;
            let mut pool_stacks = vec![("truth", truth)];
            for (j, name) in names.iter().enumerate() {
                let data: Vec<Vec<f64>> = rows.iter().map(|r| r[j].clone()).collect();
                pool_stacks.push((name, FieldStack::from_rows(dims, &data)?));
            }
            for (part, idx) in [("cal", &cal_idx), ("val", &val_idx)] {
                for (name, s) in &pool_stacks {
                    let stem = format!("{part}_{name}");
                    let sub = s.select(idx)?;
                    save_stack(&dir, &stem, &sub, seed, &hash)?;
                    stacks.insert(stem, sub);
                }
            }
            self.store.seal(&dir, Stage::Predict.name(), &key)?;
            Ok(stacks)
        })())?;
        self.record(Stage::Predict, &key, &dir, reused);
        let get = |stem: &str| stacks[stem].clone();
        let inputs = |part: &str| match tag {
            Method::Aer => BandInputs::Aer {
                pred: get(&format!("{part}_pred")),
            },
            Method::Std => BandInputs::Std {
                mu: get(&format!("{part}_mu")),
                sigma: get(&format!("{part}_sigma")),
            },
            Method::Cqr => BandInputs::Cqr {
                lo: get(&format!("{part}_lo")),
                hi: get(&format!("{part}_hi")),
            },
        };
        let point = match tag {
            Method::Aer => get("val_pred"),
            Method::Std => get("val_mu"),
            Method::Cqr => get("val_mid"),
        };
        Ok(MethodData {
            method,
            cal: inputs("cal"),
            val: inputs("val"),
            cal_truth: get("cal_truth"),
            val_truth: get("val_truth"),
            point,
            width_scale,
            key,
        })
    }

    fn calibrate(&mut self, md: &MethodData, alpha: f64) -> Result<(QuantileField, String)> {
        let key = hash_json(&(&md.key, alpha));
        let tag = md.method.tag();
        let dir = self.store.dir(&format!("quantiles/{tag}"), &key);
        let reused = self.store.is_complete(&dir, &key);
        let n_cal = md.cal_truth.n_samples();
        let q = staged(Stage::Calibrate, &dir, (|| {
            if reused {
                let q = load_tensor(&dir.join("quantile.cpt"), Finiteness::PosInf)?;
                return Ok(QuantileField {
                    q,
                    alpha,
                    n_cal,
                    method: tag,
                });
            }
            self.store.begin(&dir)?;
            let scores = md.cal.scores(&md.cal_truth)?;
            let q = conformal_quantile(&scores, alpha)?;
            let sc = Sidecar::new(q.q.dims(), self.cfg.seed, self.config_hash.clone());
            save_with_sidecar(&dir, "quantile", &q.q, sc)?;
            self.store.seal(&dir, Stage::Calibrate.name(), &key)?;
            Ok(q)
        })())?;
        self.record(Stage::Calibrate, &key, &dir, reused);
        Ok((q, key))
    }

    fn band(&mut self, md: &MethodData, q: &QuantileField, q_key: &str) -> Result<PredictionBand> {
        let key = hash_json(&("band", q_key));
        let dir = self.store.dir(&format!("bands/{}", q.method), &key);
        let reused = self.store.is_complete(&dir, &key);
        let band = staged(Stage::Band, &dir, (|| {
            if reused {
                return Ok(PredictionBand {
                    lower: load_stack(&dir, "lower")?,
                    upper: load_stack(&dir, "upper")?,
                    method: q.method,
                    alpha: q.alpha,
                    n_cal: q.n_cal,
                });
            }
            self.store.begin(&dir)?;
            let band = build_band(&md.val, q)?;
            save_stack(&dir, "lower", &band.lower, self.cfg.seed, &self.config_hash)?;
            save_stack(&dir, "upper", &band.upper, self.cfg.seed, &self.config_hash)?;
            self.store.seal(&dir, Stage::Band.name(), &key)?;
            Ok(band)
        })())?;
        self.record(Stage::Band, &key, &dir, reused);
        Ok(band)
    }

    fn validate(&mut self, md: &MethodData, band: &PredictionBand, q: &QuantileField) -> Result<MethodReport> {
        let dir = self.reports_dir();
        staged(Stage::Validate, &dir, (|| {
            let report = empirical_coverage(band, &md.val_truth)?;
            let uncalibrated = match md.method.tag() {
                Method::Aer => None,
                _ => Some(empirical_coverage(&uncalibrated_band(&md.val, band.alpha)?, &md.val_truth)?.summary()),
            };
            let tag = md.method.tag();
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let sc = Sidecar::new(report.per_cell_coverage.dims(), self.cfg.seed, self.config_hash.clone());
            save_with_sidecar(&dir, &format!("coverage_{tag}"), &report.per_cell_coverage, sc)?;
            let out = MethodReport {
                experiment: self.cfg.experiment.name().to_string(),
                method: tag,
                config_hash: self.config_hash.clone(),
                seed: self.cfg.seed,
                tightness_normalised: report.tightness / md.width_scale,
                calibrated: report.summary(),
                uncalibrated,
                infinite_quantile_cells: q.n_infinite(),
            };
            write_file(&dir.join(format!("coverage_{tag}.json")), &to_json(&out))?;
            Ok(out)
        })())
    }

    fn sweep(&mut self, md: &MethodData) -> Result<SweepTable> {
        let tag = md.method.tag();
        let path = self.reports_dir().join(format!("sweep_{tag}.csv"));
        staged(Stage::Sweep, &path, (|| {
            let t = validation_sweep(&md.cal, &md.cal_truth, &md.val, &md.val_truth, &self.cfg.alphas, md.width_scale)?;
            write_file(&path, &rows_to_csv(&t.rows)?)?;
            Ok(t)
        })())
    }

    /// One sweep per calibration size on a seeded subsample of the
    /// calibration set.
    pub fn size_study(&self, md: &MethodData, sizes: &[usize]) -> Result<Vec<(usize, SweepTable)>> {
        let n_cal = md.cal_truth.n_samples();
        let mut out = Vec::with_capacity(sizes.len());
        for &size in sizes {
            if size == 0 || size > n_cal {
                return Err(Error::config(format!(
                    "calibration pool of {n_cal} cannot supply a subsample of {size}"
                )));
            }
            let mut idx = Rng::child(self.seed(seeds::NCAL), size as u64).permutation(n_cal);
            idx.truncate(size);
            let t = validation_sweep(
                &md.cal.select(&idx)?,
                &md.cal_truth.select(&idx)?,
                &md.val,
                &md.val_truth,
                &self.cfg.alphas,
                md.width_scale,
            )?;
            out.push((size, t));
        }
        Ok(out)
    }

    fn study(&mut self, md: &MethodData) -> Result<Vec<(usize, SweepTable)>> {
        let dir = self.reports_dir();
        let sizes = self.cfg.ncal_sizes.clone();
        staged(Stage::StudyNcal, &dir, (|| {
            let tables = self.size_study(md, &sizes)?;
            for (size, t) in &tables {
                write_file(&dir.join(format!("ncal_{}_{size}.csv", t.method)), &rows_to_csv(&t.rows)?)?;
            }
            Ok(tables)
        })())
    }

    fn plot(&mut self, md: &MethodData, sweep: Option<&SweepTable>, study: &[(usize, SweepTable)]) -> Result<()> {
        let dir = self.plots_dir();
        let tag = md.method.tag();
        let exp = self.cfg.experiment.name();
        staged(Stage::Plot, &dir, (|| {
            if let Some(t) = sweep {
                write_file(&dir.join(format!("coverage_{tag}.svg")), &coverage_figure(exp, t))?;
                write_file(&dir.join(format!("coverage_{tag}.csv")), &rows_to_csv(&t.rows)?)?;
            }
            let (svg, csv) = self.slice_figure(md)?;
            write_file(&dir.join(format!("band_slice_{tag}.svg")), &svg)?;
            write_file(&dir.join(format!("band_slice_{tag}.csv")), &csv)?;
            if !study.is_empty() {
                let (svg, csv) = size_figure(exp, tag, study)?;
                write_file(&dir.join(format!("ncal_{tag}.svg")), &svg)?;
                write_file(&dir.join(format!("ncal_{tag}.csv")), &csv)?;
            }
            Ok(())
        })())
    }

    /// Band slice of the first validation sample at the last output frame:
    /// along `x` for 1D fields, along `y` through the middle column for 2D.
    fn slice_figure(&self, md: &MethodData) -> Result<(String, String)> {
        let dims = md.val_truth.sample_dims();
        let t = dims.t() - 1;
        let cells: Vec<usize> = if dims.ny() > 1 {
            (0..dims.ny()).map(|j| dims.offset([t, dims.nx() / 2, j, 0]).expect("in range")).collect()
        } else {
            (0..dims.nx()).map(|i| dims.offset([t, i, 0, 0]).expect("in range")).collect()
        };
        let axis = if dims.ny() > 1 { "y index" } else { "x index" };
        let first = md.val.select(&[0])?;
        let scores = md.cal.scores(&md.cal_truth)?;
        let mut bands = Vec::new();
        for alpha in SLICE_ALPHAS {
            let q = conformal_quantile(&scores, alpha)?;
            bands.push((alpha, build_band(&first, &q)?));
        }
        let pick = |s: &[f64]| -> Vec<(f64, f64)> { cells.iter().enumerate().map(|(k, &c)| (k as f64, s[c])).collect() };
        let truth = pick(md.val_truth.sample(0));
        let point = pick(md.point.sample(0));
        let mut all: Vec<f64> = truth.iter().chain(&point).map(|p| p.1).collect();
        for (_, b) in &bands {
            all.extend(pick(b.lower.sample(0)).iter().map(|p| p.1));
            all.extend(pick(b.upper.sample(0)).iter().map(|p| p.1));
        }
        let mut fig = Figure::new(
            &format!("{} {}: band slice, last output frame", self.cfg.experiment.name(), md.method.tag()),
            axis,
            "field value",
            (0.0, (cells.len() - 1) as f64),
            Figure::padded_range(all),
        );
        for (i, (alpha, b)) in bands.iter().enumerate() {
            let (lo, hi) = (pick(b.lower.sample(0)), pick(b.upper.sample(0)));
            fig.area(&lo, &hi, PALETTE[2 + i], 0.2);
            fig.line(&lo, PALETTE[2 + i], Stroke::Dashed, Some(&format!("alpha = {alpha}")));
            fig.line(&hi, PALETTE[2 + i], Stroke::Dashed, None);
        }
        fig.line(&truth, PALETTE[0], Stroke::Solid, Some("truth"));
        fig.line(&point, PALETTE[1], Stroke::Solid, Some("prediction"));

        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["position".to_string(), "truth".into(), "prediction".into()];
        for (alpha, _) in &bands {
            header.push(format!("lower_{alpha}"));
            header.push(format!("upper_{alpha}"));
        }
        let csv_err = |e: csv::Error| Error::Format(format!("slice csv: {e}"));
        w.write_record(&header).map_err(csv_err)?;
        for (k, &c) in cells.iter().enumerate() {
            let mut rec = vec![k.to_string(), md.val_truth.sample(0)[c].to_string(), md.point.sample(0)[c].to_string()];
            for (_, b) in &bands {
                rec.push(b.lower.sample(0)[c].to_string());
                rec.push(b.upper.sample(0)[c].to_string());
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        let csv = String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?)
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok((fig.render(), csv))
    }

    fn finish(&mut self) -> Result<()> {
        let cfg_path = self.reports_dir().join("config.json");
        let mut cfg = self.cfg.clone();
        cfg.output_dir = None;
        write_file(&cfg_path, &cfg.to_json())?;
        if !self.art.reports.is_empty() {
            write_file(&self.reports_dir().join("summary.csv"), &summary_csv(&self.art.reports)?)?;
        }
        let mut files = BTreeMap::new();
        for sub in ["reports", "plots"] {
            let d = self.store.root().join(sub);
            if d.exists() {
                for (k, v) in hash_files(&d)? {
                    files.insert(format!("{sub}/{k}"), v);
                }
            }
        }
        self.art.files = files;
        let index = ArtifactIndex {
            experiment: self.cfg.experiment.name(),
            config_hash: &self.config_hash,
            seed: self.cfg.seed,
            stages: &self.art.stages,
            files: &self.art.files,
        };
        write_file(&self.store.root().join("artifacts.json"), &to_json(&index))
    }

    /// Run every stage up to and including `until`.
    pub fn run(mut self, until: Stage) -> Result<RunArtifacts> {
        let mut clock = Instant::now();
        let mut lap = |art: &mut RunArtifacts, stage: Stage| {
            art.timings.push((stage, clock.elapsed().as_secs_f64()));
            clock = Instant::now();
        };
        let cfg = self.cfg.clone();
        let (train_data, train_key) = self.generate("train", &cfg.train_regime, cfg.n_train, seeds::TRAIN_DESIGN)?;
        let (pool, pool_key) = self.generate("pool", &cfg.calibration_regime, cfg.n_cal + cfg.n_val, seeds::POOL_DESIGN)?;
        lap(&mut self.art, Stage::Gen);
        if until > Stage::Gen {
            let models = self.train_models(&train_data, &train_key)?;
            drop(train_data);
            lap(&mut self.art, Stage::Train);
            if until > Stage::Train {
                self.evaluate(&cfg, &pool, &pool_key, &models, until, &mut lap)?;
            }
        }
        self.finish()?;
        Ok(self.art)
    }

    fn evaluate(
        &mut self,
        cfg: &ExperimentConfig,
        pool: &[SimulationRecord],
        pool_key: &str,
        models: &BTreeMap<Role, TrainedModel>,
        until: Stage,
        lap: &mut impl FnMut(&mut RunArtifacts, Stage),
    ) -> Result<()> {
        let mut data = Vec::new();
        for &m in &cfg.methods {
            data.push(self.predict_method(m, pool, pool_key, models)?);
        }
        lap(&mut self.art, Stage::Predict);
        let steps = [
            Stage::Calibrate,
            Stage::Band,
            Stage::Validate,
            Stage::Sweep,
            Stage::StudyNcal,
            Stage::Plot,
        ];
        let mut quantiles = Vec::new();
        let mut bands = Vec::new();
        for stage in steps.into_iter().filter(|s| *s <= until) {
            for (i, md) in data.iter().enumerate() {
                match stage {
                    Stage::Calibrate => quantiles.push(self.calibrate(md, cfg.primary_alpha)?),
                    Stage::Band => {
                        let (q, key) = &quantiles[i];
                        bands.push(self.band(md, q, key)?);
                    }
                    Stage::Validate => {
                        let r = self.validate(md, &bands[i], &quantiles[i].0)?;
                        self.art.reports.push(r);
                    }
                    Stage::Sweep => {
                        let t = self.sweep(md)?;
                        self.art.sweeps.push(t);
                    }
                    Stage::StudyNcal => {
                        let tables = self.study(md)?;
                        self.art.ncal.extend(tables);
                    }
                    Stage::Plot => {
                        let tag = md.method.tag();
                        let sweep = self.art.sweep(tag).cloned();
                        let study: Vec<_> = self.art.ncal.iter().filter(|(_, t)| t.method == tag).cloned().collect();
                        self.plot(md, sweep.as_ref(), &study)?;
                    }
                    _ => unreachable!("not an evaluation stage"),
                }
            }
            lap(&mut self.art, stage);
        }
        Ok(())
    }
}

/// Run the experiment in `out` up to and including `until`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, until: Stage) -> Result<RunArtifacts> {
    Pipeline::new(cfg.clone(), out)?.run(until)
}

fn coverage_figure(experiment: &str, t: &SweepTable) -> String {
    let mut fig = Figure::new(
        &format!("{experiment} {}: coverage, n_cal = {}", t.method, t.n_cal),
        "target coverage 1 - alpha",
        "empirical coverage",
        (0.0, 1.0),
        (0.0, 1.0),
    );
    fig.line(&[(0.0, 0.0), (1.0, 1.0)], "black", Stroke::Dashed, Some("y = x"));
    let floor: Vec<(f64, f64)> = t.rows.iter().map(|r| (r.target, r.target - r.delta())).collect();
    fig.line(&floor, PALETTE[1], Stroke::Dashed, Some("target - delta"));
    let pts: Vec<(f64, f64)> = t.rows.iter().map(|r| (r.target, r.empirical)).collect();
    fig.line(&pts, PALETTE[0], Stroke::Solid, Some("empirical"));
    fig.markers(&pts, PALETTE[0]);
    fig.render()
}

fn size_figure(experiment: &str, method: Method, study: &[(usize, SweepTable)]) -> Result<(String, String)> {
    let mut fig = Figure::new(
        &format!("{experiment} {method}: calibration size"),
        "target coverage 1 - alpha",
        "empirical coverage",
        (0.0, 1.0),
        (0.0, 1.0),
    );
    fig.line(&[(0.0, 0.0), (1.0, 1.0)], "black", Stroke::Dashed, Some("y = x"));
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Format(format!("size csv: {e}"));
    w.write_record(["n_cal", "alpha", "target", "empirical", "beta_lo", "beta_hi"]).map_err(csv_err)?;
    for (i, (size, t)) in study.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = t.rows.iter().map(|r| (r.target, r.empirical)).collect();
        fig.line(&pts, color, Stroke::Solid, Some(&format!("n_cal = {size}")));
        fig.markers(&pts, color);
        for r in &t.rows {
            w.write_record([
                size.to_string(),
                r.alpha.to_string(),
                r.target.to_string(),
                r.empirical.to_string(),
                r.beta_lo.to_string(),
                r.beta_hi.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    let csv = String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok((fig.render(), csv))
}

fn summary_csv(reports: &[MethodReport]) -> Result<String> {
    #[derive(Serialize)]
    struct Row<'a> {
        experiment: &'a str,
        method: Method,
        alpha: f64,
        n_cal: usize,
        n_val: usize,
        uncalibrated: Option<f64>,
        calibrated: f64,
        beta_lo: Option<f64>,
        beta_hi: Option<f64>,
        tightness: f64,
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(Row {
            experiment: &r.experiment,
            method: r.method,
            alpha: r.calibrated.alpha,
            n_cal: r.calibrated.n_cal,
            n_val: r.calibrated.n_val,
            uncalibrated: r.uncalibrated.as_ref().map(|u| u.mean_coverage),
            calibrated: r.calibrated.mean_coverage,
            beta_lo: r.calibrated.beta_lo,
            beta_hi: r.calibrated.beta_hi,
            tightness: r.tightness_normalised,
        })
        .map_err(|e| Error::Format(format!("summary csv: {e}")))?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?).map_err(|e| Error::Format(e.to_string()))
}

/// Sweep tables written by earlier runs in `out/reports`, by file name.
pub fn load_sweep_reports(out: &Path) -> Result<Vec<(String, Vec<crate::conformal::SweepRow>)>> {
    let dir = out.join("reports");
    let mut names: Vec<String> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| (n.starts_with("sweep_") || n.starts_with("ncal_")) && n.ends_with(".csv"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::data(format!("no sweep reports in {}", dir.display())));
    }
    names
        .into_iter()
        .map(|n| {
            let p = dir.join(&n);
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            Ok((n, crate::conformal::rows_from_csv(&text)?))
        })
        .collect()
}

/// Check the reports in `out/reports` against the coverage thresholds:
/// every sweep point at or above `(1 - alpha) - delta`, and every
/// calibrated primary coverage inside its Beta interval. Returns one line
/// per violation.
pub fn check_reports(out: &Path) -> Result<Vec<String>> {
    let mut failures = Vec::new();
    for (name, rows) in load_sweep_reports(out)? {
        for r in rows.iter().filter(|r| r.shortfall() > 0.0) {
            failures.push(format!(
                "{name}: alpha {} coverage {:.4} below {:.4}",
                r.alpha,
                r.empirical,
                r.target - r.delta()
            ));
        }
    }
    let dir = out.join("reports");
    let mut names: Vec<String> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("coverage_") && n.ends_with(".json"))
        .collect();
    names.sort();
    for n in names {
        let p = dir.join(&n);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let r: MethodReport =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
        let c = &r.calibrated;
        if let (Some(lo), Some(hi)) = (c.beta_lo, c.beta_hi) {
            if !(lo..=hi).contains(&c.mean_coverage) {
                failures.push(format!(
                    "{n}: coverage {:.4} outside [{lo:.4}, {hi:.4}] at alpha {}",
                    c.mean_coverage, c.alpha
                ));
            }
        }
    }
    Ok(failures)
}
