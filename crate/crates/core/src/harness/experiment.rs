//! Cross-validated comparison of a backbone with and without the Reasoner.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::backbone::GraphOperators;
use crate::config::KvConfig;
use crate::context::{build_all_contexts, ContextSet, LabelSet};
use crate::error::{Error, Result};
use crate::explain::{explain_nodes, persist_explanations, ClassNames, ExplainItem, ExplanationRecord, ProviderConfig};
use crate::features::FeatureMatrix;
use crate::graph::{build_knn_graph, Graph};
use crate::model::{ModelConfig, XNodeModel};
use crate::split::Split;
use crate::train::{train, TrainData, TrainReport};

use super::cv::{make_cv_splits, CvPlan};
use super::dataset::{load_dataset, DatasetPaths};
use super::metrics::{compute_metrics, MetricSet};
use super::synth::{generate_synthetic, SynthConfig};

pub const SUMMARY_HEADER: &str =
    "method,dataset,acc_mean,acc_std,f1_mean,f1_std,sens_mean,sens_std,auc_mean,auc_std,epoch_time_s,peak_mem_mb";
pub const RUNS_HEADER: &str = "method,dataset,seed,fold,acc,f1,sens,auc,epoch_time_s,peak_mem_mb,status";

#[derive(Clone, Debug)]
pub enum DataSource {
    Synthetic(SynthConfig),
    Files(DatasetPaths),
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub source: DataSource,
    pub knn_k: usize,
    pub symmetrize: bool,
    pub plan: CvPlan,
    /// Base model settings; `reasoner` and `seed` are set per run.
    pub model: ModelConfig,
    /// Which variants to run: `false` is the plain backbone, `true` adds the Reasoner.
    pub methods: Vec<bool>,
    /// Write test-split explanations for every run.
    pub explain: bool,
    pub provider: ProviderConfig,
    pub parallel: bool,
}

const EXPERIMENT_KEYS: &[&str] = &[
    "dataset",
    "data",
    "features",
    "labels",
    "classes_file",
    "synth_n",
    "synth_d",
    "synth_k",
    "synth_sep",
    "synth_noise",
    "synth_seed",
    "knn_k",
    "symmetrize",
    "folds",
    "seeds",
    "train_frac",
    "methods",
    "explain",
    "parallel",
];

const PROVIDER_KEYS: &[&str] = &[
    "provider",
    "endpoint",
    "model",
    "token_env",
    "timeout_s",
    "max_retries",
    "backoff_ms",
    "adapter",
    "concurrency",
];

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: "synthetic".into(),
            source: DataSource::Synthetic(SynthConfig::default()),
            knn_k: 5,
            symmetrize: true,
            plan: CvPlan::default(),
            model: ModelConfig::default(),
            methods: vec![false, true],
            explain: false,
            provider: ProviderConfig::offline(),
            parallel: true,
        }
    }
}

impl ExperimentConfig {
    pub fn known_keys() -> Vec<&'static str> {
        EXPERIMENT_KEYS
            .iter()
            .chain(ModelConfig::KEYS)
            .chain(PROVIDER_KEYS)
            .copied()
            .collect()
    }

    /// Relative data paths are resolved against `base` (usually the config file's directory).
    pub fn from_kv(kv: &KvConfig, base: &Path) -> Result<Self> {
        kv.check_known(&Self::known_keys())?;
        let d = Self::default();
        let resolve = |p: String| -> PathBuf {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let source = match (kv.raw("data"), kv.raw("features")) {
            (Some("synthetic") | None, None) => {
                let s = SynthConfig::default();
                DataSource::Synthetic(SynthConfig {
                    n: kv.get_or("synth_n", s.n)?,
                    d: kv.get_or("synth_d", s.d)?,
                    k: kv.get_or("synth_k", s.k)?,
                    sep: kv.get_or("synth_sep", s.sep)?,
                    label_noise: kv.get_or("synth_noise", s.label_noise)?,
                    seed: kv.get_or("synth_seed", s.seed)?,
                })
            }
            (Some(dir), None) => DataSource::Files(DatasetPaths::in_dir(&resolve(dir.to_string()))),
            (None, Some(_)) => DataSource::Files(DatasetPaths {
                features: resolve(kv.get::<String>("features")?.expect("checked")),
                labels: resolve(
                    kv.get::<String>("labels")?
                        .ok_or_else(|| Error::Config("`features` requires `labels`".into()))?,
                ),
                classes: kv.get::<String>("classes_file")?.map(resolve),
                splits: None,
            }),
            (Some(_), Some(_)) => return Err(Error::Config("set either `data` or `features`, not both".into())),
        };
        let seeds = match kv.raw("seeds") {
            None => d.plan.seeds.clone(),
            Some(s) => s
                .split(',')
                .map(|t| t.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("invalid seed list `{s}`")))?,
        };
        let methods = match kv.raw("methods") {
            None => d.methods.clone(),
            Some(s) => s
                .split(',')
                .map(|t| match t.trim() {
                    "baseline" => Ok(false),
                    "reasoner" => Ok(true),
                    other => Err(Error::Config(format!("unknown method `{other}` (baseline | reasoner)"))),
                })
                .collect::<Result<_>>()?,
        };
        let mut model_kv = kv.clone();
        if !kv.contains("reasoner") {
            model_kv.set("reasoner", true);
        }
        Ok(Self {
            dataset: kv.get_or("dataset", d.dataset)?,
            source,
            knn_k: kv.get_or("knn_k", d.knn_k)?,
            symmetrize: kv.get_bool("symmetrize", d.symmetrize)?,
            plan: CvPlan {
                folds: kv.get_or("folds", d.plan.folds)?,
                seeds,
                train_frac: kv.get_or("train_frac", d.plan.train_frac)?,
            },
            model: ModelConfig::from_kv(&model_kv)?,
            methods,
            explain: kv.get_bool("explain", d.explain)?,
            provider: ProviderConfig::from_kv(kv)?,
            parallel: kv.get_bool("parallel", d.parallel)?,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let kv = KvConfig::load(path)?;
        Self::from_kv(&kv, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn method_config(&self, reasoner: bool, seed: u64) -> ModelConfig {
        ModelConfig {
            reasoner,
            seed,
            inject_mode: if reasoner {
                self.model.inject_mode
            } else {
                crate::model::InjectMode::Concat
            },
            ..self.model.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunMetrics {
    pub metrics: MetricSet,
    pub report: TrainReport,
    pub explanations: Option<Vec<ExplanationRecord>>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub method: String,
    pub seed: u64,
    pub fold: usize,
    pub outcome: std::result::Result<RunMetrics, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub dataset: String,
    pub acc: (f64, f64),
    pub f1: (f64, f64),
    pub sens: (f64, f64),
    pub auc: (f64, f64),
    pub epoch_time_s: f64,
    pub peak_mem_mb: f64,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl SummaryRow {
    /// Aggregates runs; metric values are reported in percent.
    pub fn from_runs(method: &str, dataset: &str, runs: &[&RunMetrics]) -> Self {
        let pct = |f: &dyn Fn(&MetricSet) -> f64| {
            let v: Vec<f64> = runs.iter().map(|r| 100.0 * f(&r.metrics)).collect();
            mean_std(&v)
        };
        let avg = |v: Vec<f64>| mean_std(&v).0;
        Self {
            method: method.into(),
            dataset: dataset.into(),
            acc: pct(&|m| m.accuracy),
            f1: pct(&|m| m.macro_f1),
            sens: pct(&|m| m.sensitivity),
            auc: pct(&|m| m.auc),
            epoch_time_s: avg(runs.iter().map(|r| r.report.mean_epoch_time()).collect()),
            peak_mem_mb: avg(runs.iter().map(|r| r.report.peak_mem_mb()).collect()),
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.4},{:.3}",
            self.method,
            self.dataset,
            self.acc.0,
            self.acc.1,
            self.f1.0,
            self.f1.1,
            self.sens.0,
            self.sens.1,
            self.auc.0,
            self.auc.1,
            self.epoch_time_s,
            self.peak_mem_mb
        )
    }

    /// `GCN+Reasoner  ACC 95.33±1.20  F1 ...`
    pub fn pretty(&self) -> String {
        format!(
            "{:<16} ACC {:.2}±{:.2}  F1 {:.2}±{:.2}  Sensitivity {:.2}±{:.2}  ROC-AUC {:.2}±{:.2}",
            self.method, self.acc.0, self.acc.1, self.f1.0, self.f1.1, self.sens.0, self.sens.1, self.auc.0, self.auc.1
        )
    }
}

pub fn summary_to_csv(rows: &[SummaryRow]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

pub fn parse_summary_csv(text: &str, path: Option<&Path>) -> Result<Vec<SummaryRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == SUMMARY_HEADER => {}
        _ => return Err(Error::parse(path, 1, format!("expected header `{SUMMARY_HEADER}`"))),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(idx, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 12 {
                return Err(Error::parse(path, idx + 1, "expected 12 columns"));
            }
            let num = |i: usize| {
                f[i].parse::<f64>()
                    .map_err(|_| Error::parse(path, idx + 1, format!("bad number `{}`", f[i])))
            };
            Ok(SummaryRow {
                method: f[0].into(),
                dataset: f[1].into(),
                acc: (num(2)?, num(3)?),
                f1: (num(4)?, num(5)?),
                sens: (num(6)?, num(7)?),
                auc: (num(8)?, num(9)?),
                epoch_time_s: num(10)?,
                peak_mem_mb: num(11)?,
            })
        })
        .collect()
}

/// Lower-case file-name form of a method label, e.g. `gcn_reasoner`.
pub fn method_slug(method: &str) -> String {
    method.to_lowercase().replace('+', "_")
}

/// Context vectors computed from the graph with only training labels visible.
pub fn contexts_for_split(
    g: &Graph,
    features: &FeatureMatrix,
    labels: &[usize],
    split: &Split,
    seed: u64,
) -> Result<ContextSet> {
    let visible = LabelSet::new(labels.to_vec(), split.train_mask(labels.len()))?;
    build_all_contexts(g, &visible, Some(features), seed)
}

pub struct ExperimentOutcome {
    pub runs: Vec<RunResult>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentOutcome {
    pub fn runs_csv(&self, dataset: &str) -> String {
        let mut s = format!("{RUNS_HEADER}\n");
        for r in &self.runs {
            match &r.outcome {
                Ok(m) => {
                    let _ = writeln!(
                        s,
                        "{},{dataset},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.3},ok",
                        r.method,
                        r.seed,
                        r.fold,
                        100.0 * m.metrics.accuracy,
                        100.0 * m.metrics.macro_f1,
                        100.0 * m.metrics.sensitivity,
                        100.0 * m.metrics.auc,
                        m.report.mean_epoch_time(),
                        m.report.peak_mem_mb()
                    );
                }
                Err(e) => {
                    let msg = e.replace([',', '\n'], " ");
                    let _ = writeln!(s, "{},{dataset},{},{},,,,,,,error: {msg}", r.method, r.seed, r.fold);
                }
            }
        }
        s
    }

    pub fn pretty_table(&self) -> String {
        self.summary.iter().map(|r| r.pretty() + "\n").collect()
    }
}

struct Prepared {
    features: FeatureMatrix,
    labels: Vec<usize>,
    classes: ClassNames,
    graph: Graph,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let (features, labels, classes) = match &cfg.source {
        DataSource::Synthetic(s) => {
            let d = generate_synthetic(s)?;
            (d.features, d.labels, d.classes)
        }
        DataSource::Files(paths) => {
            let b = load_dataset(&DatasetPaths { splits: None, ..paths.clone() }, 0, 0)?;
            (b.features, b.labels, b.classes)
        }
    };
    let graph = build_knn_graph(&features, cfg.knn_k, cfg.symmetrize)?;
    Ok(Prepared {
        features,
        labels,
        classes,
        graph,
    })
}

/// Trains `model_cfg` on one split and scores the test nodes.
#[allow(clippy::too_many_arguments)]
pub fn run_single(
    g: &Graph,
    features: &FeatureMatrix,
    labels: &[usize],
    classes: &ClassNames,
    split: &Split,
    contexts: &ContextSet,
    model_cfg: ModelConfig,
    provider: Option<&ProviderConfig>,
) -> Result<RunMetrics> {
    let data = TrainData {
        ops: GraphOperators::new(g),
        features: features.as_tensor(),
        contexts: contexts.matrix(),
        labels: labels.to_vec(),
        n_classes: classes.len(),
        split: split.clone(),
    };
    let (model, report) = train(model_cfg, &data)?;
    let metrics = evaluate_model(&model, &data, &split.test)?;
    let explanations = match provider {
        None => None,
        Some(p) => {
            let pred = model.predict(&data.ops, &data.features, &data.contexts)?;
            let items: Vec<ExplainItem> = split
                .test
                .iter()
                .map(|&i| ExplainItem {
                    node: i,
                    context: contexts.contexts[i].clone(),
                    pred: pred.labels[i],
                    truth: Some(labels[i]),
                })
                .collect();
            Some(explain_nodes(&items, classes, p.build()?.as_ref(), p.concurrency)?)
        }
    };
    Ok(RunMetrics {
        metrics,
        report,
        explanations,
    })
}

/// Metrics of `model` on the given rows.
pub fn evaluate_model(model: &XNodeModel, data: &TrainData, rows: &[usize]) -> Result<MetricSet> {
    let pred = model.predict(&data.ops, &data.features, &data.contexts)?;
    let y: Vec<usize> = rows.iter().map(|&i| data.labels[i]).collect();
    let p: Vec<usize> = rows.iter().map(|&i| pred.labels[i]).collect();
    compute_metrics(&p, &pred.probs.select_rows(rows), &y, data.n_classes)
}

/// Runs every `(method, seed, fold)` combination and writes reports under `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentOutcome> {
    if cfg.methods.is_empty() {
        return Err(Error::Config("no methods selected".into()));
    }
    let prep = prepare(cfg)?;
    let cv = make_cv_splits(prep.features.n_nodes(), &cfg.plan)?;
    let provider = cfg.explain.then_some(&cfg.provider);

    let one_split = |run: &super::cv::CvRun| -> Vec<RunResult> {
        let contexts = contexts_for_split(&prep.graph, &prep.features, &prep.labels, &run.split, run.seed);
        cfg.methods
            .iter()
            .map(|&reasoner| {
                let model_cfg = cfg.method_config(reasoner, run.seed);
                let method = model_cfg.method_name();
                let outcome = contexts
                    .as_ref()
                    .map_err(|e| e.to_string())
                    .and_then(|ctx| {
                        run_single(
                            &prep.graph,
                            &prep.features,
                            &prep.labels,
                            &prep.classes,
                            &run.split,
                            ctx,
                            model_cfg,
                            provider,
                        )
                        .map_err(|e| e.to_string())
                    });
                if let Err(e) = &outcome {
                    log::error!("{method} seed {} fold {} failed: {e}", run.seed, run.fold);
                }
                RunResult {
                    method,
                    seed: run.seed,
                    fold: run.fold,
                    outcome,
                }
            })
            .collect()
    };
    let nested: Vec<Vec<RunResult>> = if cfg.parallel {
        cv.par_iter().map(one_split).collect()
    } else {
        cv.iter().map(one_split).collect()
    };
    // method-major order, then seed and fold
    let mut runs: Vec<RunResult> = Vec::with_capacity(nested.len() * cfg.methods.len());
    for m in 0..cfg.methods.len() {
        runs.extend(nested.iter().map(|v| v[m].clone()));
    }

    let mut summary = Vec::new();
    for &reasoner in &cfg.methods {
        let method = cfg.method_config(reasoner, 0).method_name();
        let ok: Vec<&RunMetrics> = runs
            .iter()
            .filter(|r| r.method == method)
            .filter_map(|r| r.outcome.as_ref().ok())
            .collect();
        if !ok.is_empty() {
            summary.push(SummaryRow::from_runs(&method, &cfg.dataset, &ok));
        }
    }
    let outcome = ExperimentOutcome { runs, summary };

    if let Some(dir) = out {
        fs::create_dir_all(dir.join("reports"))?;
        fs::write(dir.join("summary.csv"), summary_to_csv(&outcome.summary))?;
        fs::write(dir.join("runs.csv"), outcome.runs_csv(&cfg.dataset))?;
        for r in &outcome.runs {
            if let Ok(m) = &r.outcome {
                let stem = format!("{}_s{}_f{}", method_slug(&r.method), r.seed, r.fold);
                m.report.write_csv(&dir.join("reports").join(format!("train_{stem}.csv")))?;
                if let Some(records) = &m.explanations {
                    fs::create_dir_all(dir.join("explanations"))?;
                    persist_explanations(records, &dir.join("explanations").join(format!("{stem}.jsonl")))?;
                }
            }
        }
    }
    if outcome.summary.is_empty() {
        return Err(Error::Dataset("every run failed; see runs.csv".into()));
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn config_keys() {
        let kv = KvConfig::parse("dataset = toy\nseeds = 1, 2\nmethods = reasoner\nalpha = 1.0\nknn_k = 4\n", None).unwrap();
        let cfg = ExperimentConfig::from_kv(&kv, Path::new(".")).unwrap();
        assert_eq!(cfg.plan.seeds, vec![1, 2]);
        assert_eq!(cfg.methods, vec![true]);
        assert_eq!(cfg.model.alpha, 1.0);
        assert_eq!(cfg.knn_k, 4);
        let bad = KvConfig::parse("alhpa = 1\n", None).unwrap();
        assert!(ExperimentConfig::from_kv(&bad, Path::new(".")).is_err());
    }

    #[test]
    fn small_experiment_end_to_end() {
        let cfg = ExperimentConfig {
            source: DataSource::Synthetic(SynthConfig {
                n: 60,
                d: 6,
                k: 2,
                sep: 6.0,
                label_noise: 0.0,
                seed: 3,
            }),
            plan: CvPlan {
                seeds: vec![1],
                ..CvPlan::default()
            },
            model: ModelConfig {
                d_h: 8,
                epochs: 30,
                timing: false,
                ..ModelConfig::default()
            },
            explain: true,
            ..ExperimentConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&cfg, Some(dir.path())).unwrap();
        assert_eq!(out.runs.len(), 6);
        assert_eq!(out.summary.len(), 2);
        assert_eq!(out.summary[0].method, "GCN");
        assert_eq!(out.summary[1].method, "GCN+Reasoner");
        let text = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(parse_summary_csv(&text, None).unwrap().len(), 2);
        assert!(dir.path().join("reports/train_gcn_reasoner_s1_f2.csv").exists());
        let expl = fs::read_to_string(dir.path().join("explanations/gcn_s1_f0.jsonl")).unwrap();
        assert_eq!(expl.lines().count(), 20);
    }
}
