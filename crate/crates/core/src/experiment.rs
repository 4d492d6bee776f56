//! Config-driven fusion runs: dataset construction, seeded training, and the
//! on-disk report layout.
//!
//! Every resolved run lives in `<out>/<hash>/`, where `hash` is the first 16
//! hex digits of the SHA-256 of the run's canonical JSON config. The directory
//! holds `config.json` (the resolved config), `epochs.csv`, `metrics.csv`,
//! `model.json` and `summary.json`. Re-running `config.json` reproduces the
//! same directory name and bit-identical logs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fusion::{
    corrupt_view, evaluate, make_synthetic_twoview, make_synthetic_twoview_maps, train, EpochLog,
    FeatureNet, FusionMode, NetConfig, SyntheticMapsSpec, SyntheticSpec, TrainSchedule,
    TwoViewDataset, ViewData, ViewSide,
};
use crate::io::{read_matrix, read_tensor};

pub const LIBRARY_NAME: &str = env!("CARGO_PKG_NAME");
pub const LIBRARY_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Where the two views come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic(SyntheticSpec),
    SyntheticMaps(SyntheticMapsSpec),
    /// Views as CCAT or CSV files (2-D for vectors, 3-D for map stacks);
    /// labels as a single column of class indices.
    Files {
        view_a: PathBuf,
        view_b: PathBuf,
        labels: PathBuf,
        n_classes: usize,
    },
}

impl DatasetConfig {
    fn offset_seed(&mut self, by: u64) {
        match self {
            DatasetConfig::Synthetic(s) => s.seed = s.seed.wrapping_add(by),
            DatasetConfig::SyntheticMaps(s) => s.seed = s.seed.wrapping_add(by),
            DatasetConfig::Files { .. } => {}
        }
    }

    pub fn load(&self) -> Result<TwoViewDataset> {
        match self {
            DatasetConfig::Synthetic(s) => make_synthetic_twoview(s),
            DatasetConfig::SyntheticMaps(s) => make_synthetic_twoview_maps(s),
            DatasetConfig::Files {
                view_a,
                view_b,
                labels,
                n_classes,
            } => {
                let view = |p: &Path| -> Result<ViewData> {
                    let t = read_tensor(p)?;
                    Ok(match t.dims.len() {
                        3 => ViewData::Maps(t.into_stack()?),
                        _ => ViewData::Vectors(t.into_matrix()?),
                    })
                };
                let l = read_matrix(labels)?;
                if l.ncols() != 1 {
                    return Err(Error::Config(format!(
                        "{}: labels need one column, found {}",
                        labels.display(),
                        l.ncols()
                    )));
                }
                let mut classes = Vec::with_capacity(l.nrows());
                for (row, &v) in l.iter().enumerate() {
                    if !(v >= 0.0 && v.fract() == 0.0) {
                        return Err(Error::Config(format!(
                            "{}: row {} label {v} is not a class index",
                            labels.display(),
                            row + 1
                        )));
                    }
                    classes.push(v as usize);
                }
                TwoViewDataset::new(view(view_a)?, view(view_b)?, classes, *n_classes)
            }
        }
    }
}

/// Leading `train` samples train, the next `val` validate, the rest test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: usize,
    #[serde(default)]
    pub val: usize,
}

/// Test-time noise on one view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corruption {
    pub view: ViewSide,
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub split: Split,
    #[serde(default)]
    pub net: NetConfig,
    pub schedule: TrainSchedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corruption: Option<Corruption>,
    /// Train every listed mode instead of just `schedule.mode`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compare_modes: Vec<FusionMode>,
    /// Repeat for each seed `s`: `schedule.seed = s`, and `s` is added to the
    /// dataset and corruption seeds.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep_seeds: Vec<u64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("{}: {e}", origin.display())))?;
        cfg.validate()
            .map_err(|e| Error::Config(format!("{}: {e}", origin.display())))?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.split.train == 0 {
            return Err(Error::Config("split.train must be positive".into()));
        }
        if let DatasetConfig::Files {
            view_a,
            view_b,
            labels,
            ..
        } = &self.dataset
        {
            for (field, p) in [("view_a", view_a), ("view_b", view_b), ("labels", labels)] {
                if !p.is_file() {
                    return Err(Error::Config(format!(
                        "dataset.files.{field}: {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        if let Some(c) = &self.corruption {
            if !(c.sigma >= 0.0 && c.sigma.is_finite()) {
                return Err(Error::Config(format!(
                    "corruption.sigma must be finite and >= 0, got {}",
                    c.sigma
                )));
            }
        }
        Ok(())
    }

    /// Canonical JSON; the hash input and the `config.json` content.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    /// One fully resolved single-run config per (mode, seed) pair.
    pub fn expand(&self) -> Vec<ExperimentConfig> {
        let modes = if self.compare_modes.is_empty() {
            vec![self.schedule.mode]
        } else {
            self.compare_modes.clone()
        };
        let seeds: Vec<Option<u64>> = if self.sweep_seeds.is_empty() {
            vec![None]
        } else {
            self.sweep_seeds.iter().copied().map(Some).collect()
        };
        let mut out = Vec::new();
        for &seed in &seeds {
            for &mode in &modes {
                let mut c = self.clone();
                c.compare_modes.clear();
                c.sweep_seeds.clear();
                c.schedule.mode = mode;
                if let Some(s) = seed {
                    c.schedule.seed = s;
                    c.dataset.offset_seed(s);
                    if let Some(cor) = &mut c.corruption {
                        cor.seed = cor.seed.wrapping_add(s);
                    }
                }
                out.push(c);
            }
        }
        out
    }

    pub fn is_single(&self) -> bool {
        self.compare_modes.len() <= 1 && self.sweep_seeds.len() <= 1
    }
}

/// The dataset of one run, cut into its parts.
pub struct RunData {
    pub train: TwoViewDataset,
    pub val: Option<TwoViewDataset>,
    pub test: TwoViewDataset,
    pub test_corrupted: Option<TwoViewDataset>,
}

pub fn build_data(cfg: &ExperimentConfig) -> Result<RunData> {
    let all = cfg.dataset.load()?;
    let (tr, va) = (cfg.split.train, cfg.split.val);
    if tr + va >= all.len() {
        return Err(Error::Config(format!(
            "split uses {} of {} samples and leaves no test set",
            tr + va,
            all.len()
        )));
    }
    let idx = |r: std::ops::Range<usize>| r.collect::<Vec<_>>();
    let test = all.select(&idx(tr + va..all.len()));
    let test_corrupted = match &cfg.corruption {
        Some(c) => Some(corrupt_view(&test, c.view, c.sigma, c.seed)?),
        None => None,
    };
    Ok(RunData {
        train: all.select(&idx(0..tr)),
        val: (va > 0).then(|| all.select(&idx(tr..tr + va))),
        test,
        test_corrupted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: f64,
    pub corrupted_test_accuracy: Option<f64>,
}

impl RunMetrics {
    /// Clean minus corrupted test accuracy.
    pub fn drop(&self) -> Option<f64> {
        self.corrupted_test_accuracy.map(|c| self.test_accuracy - c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub library: String,
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub metrics: RunMetrics,
    pub epochs: usize,
    pub replacements: usize,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub logs: Vec<EpochLog>,
}

/// `epoch,loss,corr,val_acc,replaced` with round-trip float formatting.
pub fn epochs_csv(logs: &[EpochLog]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "loss", "corr", "val_acc", "replaced"])
        .map_err(csv_err)?;
    for l in logs {
        w.write_record([
            l.epoch.to_string(),
            format!("{:?}", l.train_loss),
            format!("{:?}", l.train_corr),
            format!("{:?}", l.val_accuracy),
            (l.cca_replaced as u8).to_string(),
        ])
        .map_err(csv_err)?;
    }
    into_string(w)
}

fn metrics_csv(m: &RunMetrics) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["split", "accuracy"]).map_err(csv_err)?;
    let rows = [
        ("train", Some(m.train_accuracy)),
        ("val", m.val_accuracy),
        ("test", Some(m.test_accuracy)),
        ("test_corrupted", m.corrupted_test_accuracy),
    ];
    for (name, v) in rows {
        if let Some(v) = v {
            w.write_record([name.to_string(), format!("{v:?}")])
                .map_err(csv_err)?;
        }
    }
    into_string(w)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn evaluate_run(
    net: &FeatureNet,
    cfg: &ExperimentConfig,
    data: &RunData,
) -> Result<RunMetrics> {
    let s = &cfg.schedule;
    Ok(RunMetrics {
        train_accuracy: evaluate(net, s, &data.train)?,
        val_accuracy: data.val.as_ref().map(|v| evaluate(net, s, v)).transpose()?,
        test_accuracy: evaluate(net, s, &data.test)?,
        corrupted_test_accuracy: data
            .test_corrupted
            .as_ref()
            .map(|c| evaluate(net, s, c))
            .transpose()?,
    })
}

/// Trains one resolved config and writes its report directory under `out`.
pub fn run_single(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    if !cfg.is_single() {
        return Err(Error::Config(
            "run_single needs a resolved config; use run_experiment".into(),
        ));
    }
    cfg.validate()?;
    let data = build_data(cfg)?;
    let outcome = train(&data.train, data.val.as_ref(), &cfg.net, &cfg.schedule)?;
    let metrics = evaluate_run(&outcome.net, cfg, &data)?;

    let hash = cfg.hash();
    let dir = out.join(&hash);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.json"), cfg.canonical_json() + "\n")?;
    fs::write(dir.join("epochs.csv"), epochs_csv(&outcome.logs)?)?;
    fs::write(dir.join("metrics.csv"), metrics_csv(&metrics)?)?;
    write_json(&dir.join("model.json"), &outcome.net)?;
    let summary = RunSummary {
        library: LIBRARY_NAME.into(),
        version: LIBRARY_VERSION.into(),
        config_hash: hash,
        config: cfg.clone(),
        metrics,
        epochs: outcome.logs.len(),
        replacements: outcome.replacements.len(),
        final_train_loss: outcome.logs.last().map_or(f64::NAN, |l| l.train_loss),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(RunReport {
        dir,
        summary,
        logs: outcome.logs,
    })
}

/// Per-mode medians over the seeds of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: FusionMode,
    pub runs: usize,
    pub median_test_accuracy: f64,
    pub median_corrupted_test_accuracy: Option<f64>,
    pub median_drop: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub library: String,
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub modes: Vec<ModeSummary>,
    pub run_dirs: Vec<String>,
}

pub struct ExperimentReport {
    /// Directory of the comparison (or of the only run).
    pub dir: PathBuf,
    pub runs: Vec<RunReport>,
    pub comparison: Option<ComparisonSummary>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Runs every (mode, seed) of `cfg`. With `concurrent`, runs execute on
/// separate threads; results do not depend on it.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out: &Path,
    concurrent: bool,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let resolved = cfg.expand();
    let runs: Vec<RunReport> = if concurrent && resolved.len() > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = resolved
                .iter()
                .map(|c| scope.spawn(move || run_single(c, out)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("run thread panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        resolved
            .iter()
            .map(|c| run_single(c, out))
            .collect::<Result<Vec<_>>>()?
    };
    if cfg.is_single() {
        let dir = runs[0].dir.clone();
        return Ok(ExperimentReport {
            dir,
            runs,
            comparison: None,
        });
    }

    let hash = cfg.hash();
    let dir = out.join(&hash);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.json"), cfg.canonical_json() + "\n")?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "mode",
        "seed",
        "test_acc",
        "corrupted_test_acc",
        "drop",
        "run",
    ])
    .map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:?}"));
    for r in &runs {
        let m = &r.summary.metrics;
        let s = &r.summary.config.schedule;
        w.write_record([
            mode_name(s.mode),
            s.seed.to_string(),
            format!("{:?}", m.test_accuracy),
            opt(m.corrupted_test_accuracy),
            opt(m.drop()),
            r.summary.config_hash.clone(),
        ])
        .map_err(csv_err)?;
    }
    fs::write(dir.join("comparison.csv"), into_string(w)?)?;

    let mut modes: Vec<FusionMode> = Vec::new();
    for r in &runs {
        if !modes.contains(&r.summary.config.schedule.mode) {
            modes.push(r.summary.config.schedule.mode);
        }
    }
    let modes = modes
        .into_iter()
        .map(|mode| {
            let ms: Vec<&RunMetrics> = runs
                .iter()
                .filter(|r| r.summary.config.schedule.mode == mode)
                .map(|r| &r.summary.metrics)
                .collect();
            let collect = |f: &dyn Fn(&RunMetrics) -> Option<f64>| -> Option<f64> {
                ms.iter()
                    .map(|m| f(m))
                    .collect::<Option<Vec<f64>>>()
                    .map(|v| median(&v))
            };
            ModeSummary {
                mode,
                runs: ms.len(),
                median_test_accuracy: median(
                    &ms.iter().map(|m| m.test_accuracy).collect::<Vec<_>>(),
                ),
                median_corrupted_test_accuracy: collect(&|m| m.corrupted_test_accuracy),
                median_drop: collect(&|m| m.drop()),
            }
        })
        .collect();
    let comparison = ComparisonSummary {
        library: LIBRARY_NAME.into(),
        version: LIBRARY_VERSION.into(),
        config_hash: hash,
        config: cfg.clone(),
        modes,
        run_dirs: runs.iter().map(|r| r.summary.config_hash.clone()).collect(),
    };
    write_json(&dir.join("summary.json"), &comparison)?;
    Ok(ExperimentReport {
        dir,
        runs,
        comparison: Some(comparison),
    })
}

pub fn mode_name(mode: FusionMode) -> String {
    serde_json::to_value(mode)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

/// Loads a run directory and re-evaluates its saved model, optionally under
/// a different corruption.
pub fn evaluate_run_dir(dir: &Path, corruption: Option<Corruption>) -> Result<RunMetrics> {
    let mut cfg = ExperimentConfig::read(&dir.join("config.json"))?;
    if corruption.is_some() {
        cfg.corruption = corruption;
    }
    let text = fs::read_to_string(dir.join("model.json"))?;
    let net: FeatureNet = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: dir.join("model.json"),
        message: e.to_string(),
    })?;
    let data = build_data(&cfg)?;
    evaluate_run(&net, &cfg, &data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut spec = SyntheticSpec::new(120, 2, 3, 0.3, 0.3, 1);
        spec.dim_a = 4;
        spec.dim_b = 5;
        let mut schedule = TrainSchedule::new(FusionMode::Accar, 2);
        schedule.epochs = 4;
        schedule.cca_first_m = 3;
        schedule.cca_freq_t = 2;
        ExperimentConfig {
            dataset: DatasetConfig::Synthetic(spec),
            split: Split { train: 80, val: 20 },
            net: NetConfig::default(),
            schedule,
            corruption: Some(Corruption {
                view: ViewSide::B,
                sigma: 1.0,
                seed: 9,
            }),
            compare_modes: vec![],
            sweep_seeds: vec![],
        }
    }

    #[test]
    fn missing_seed_names_the_field() {
        let mut v = serde_json::to_value(small()).unwrap();
        v["schedule"].as_object_mut().unwrap().remove("seed");
        let err = ExperimentConfig::from_json(&v.to_string(), Path::new("run.json")).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("`seed`"), "{err}");
    }

    #[test]
    fn unknown_field_is_rejected() {
        let mut v = serde_json::to_value(small()).unwrap();
        v["schedule"]["learning_rat"] = 0.1.into();
        assert!(ExperimentConfig::from_json(&v.to_string(), Path::new("x")).is_err());
    }

    #[test]
    fn json_round_trip_keeps_hash() {
        let c = small();
        let back = ExperimentConfig::from_json(&c.canonical_json(), Path::new("x")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut other = c.clone();
        other.schedule.seed += 1;
        assert_ne!(other.hash(), c.hash());
    }

    #[test]
    fn expansion_resolves_modes_and_seeds() {
        let mut c = small();
        c.compare_modes = vec![FusionMode::Baseline, FusionMode::Accar];
        c.sweep_seeds = vec![10, 11];
        let runs = c.expand();
        assert_eq!(runs.len(), 4);
        assert!(runs.iter().all(|r| r.is_single()));
        assert_eq!(runs[1].schedule.mode, FusionMode::Accar);
        assert_eq!(runs[2].schedule.seed, 11);
        let DatasetConfig::Synthetic(s) = &runs[2].dataset else {
            panic!()
        };
        assert_eq!(s.seed, 12);
        assert_eq!(runs[2].corruption.unwrap().seed, 20);
    }

    #[test]
    fn split_must_leave_a_test_set() {
        let mut c = small();
        c.split = Split {
            train: 100,
            val: 20,
        };
        assert!(build_data(&c).is_err());
    }

    #[test]
    fn run_writes_reproducible_reports() {
        let tmp = tempfile::tempdir().unwrap();
        let a = run_single(&small(), tmp.path()).unwrap();
        for f in [
            "config.json",
            "epochs.csv",
            "metrics.csv",
            "model.json",
            "summary.json",
        ] {
            assert!(a.dir.join(f).is_file(), "{f}");
        }
        let logs = fs::read_to_string(a.dir.join("epochs.csv")).unwrap();
        assert!(logs.starts_with("epoch,loss,corr,val_acc,replaced\n"));
        assert_eq!(logs.lines().count(), 5);

        let again = ExperimentConfig::read(&a.dir.join("config.json")).unwrap();
        let tmp2 = tempfile::tempdir().unwrap();
        let b = run_single(&again, tmp2.path()).unwrap();
        assert_eq!(a.dir.file_name(), b.dir.file_name());
        assert_eq!(logs, fs::read_to_string(b.dir.join("epochs.csv")).unwrap());

        let m = evaluate_run_dir(&a.dir, None).unwrap();
        assert_eq!(m, a.summary.metrics);
    }

    #[test]
    fn concurrency_does_not_change_results() {
        let mut c = small();
        c.compare_modes = vec![FusionMode::Baseline, FusionMode::Ccar];
        c.sweep_seeds = vec![0, 1];
        let t1 = tempfile::tempdir().unwrap();
        let t2 = tempfile::tempdir().unwrap();
        let seq = run_experiment(&c, t1.path(), false).unwrap();
        let par = run_experiment(&c, t2.path(), true).unwrap();
        assert_eq!(seq.comparison, par.comparison);
        let cmp = fs::read_to_string(seq.dir.join("comparison.csv")).unwrap();
        assert_eq!(cmp.lines().count(), 5);
        assert_eq!(
            cmp,
            fs::read_to_string(par.dir.join("comparison.csv")).unwrap()
        );
    }

    #[test]
    fn median_rules() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
