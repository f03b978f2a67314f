//! Command-line interface.
//!
//! Every subcommand accepts `--config`, `--seed` and `--out`. Values given
//! as flags override the config file, which overrides built-in defaults.
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::backbone::{BackboneKind, GraphOperators};
use crate::checkpoint;
use crate::config::KvConfig;
use crate::context::ContextSet;
use crate::error::{Error, Result};
use crate::explain::{explain_nodes, persist_explanations, ClassNames, ExplainItem, ProviderConfig, ProviderKind};
use crate::features::FeatureMatrix;
use crate::graph::{build_knn_graph, Graph};
use crate::harness::cv::seed_splits;
use crate::harness::dataset::{labels_to_csv, read_labels, read_split};
use crate::harness::experiment::{contexts_for_split, summary_to_csv, ExperimentConfig, RunMetrics, SummaryRow};
use crate::harness::{compute_metrics, generate_synthetic, run_experiment, SynthConfig};
use crate::model::{ModelConfig, Prediction};
use crate::split::{Role, Split};
use crate::train::{TrainData, Trainer, TrainReport};

#[derive(Parser, Debug)]
#[command(name = "xnode", version, about = "Self-explaining graph neural networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Random seed (data generation, splits, community detection, initialization).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct DataArgs {
    /// Dataset directory holding features.txt, labels.csv, classes.csv and splits.csv.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// CSV `node,label`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// CSV `node,split`; generated from `--seed` and `--fold` when absent.
    #[arg(long)]
    pub splits: Option<PathBuf>,
    /// CSV `index,name`.
    #[arg(long)]
    pub classes: Option<PathBuf>,
    /// Cross-validation fold used when no splits file is given.
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelInputs {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Context CSV written by `extract-context`.
    #[arg(long)]
    pub contexts: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a Gaussian-cluster dataset directory.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        /// Number of classes.
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        sep: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Build a cosine kNN graph from a feature matrix.
    BuildGraph {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        k: Option<usize>,
        /// Keep the directed kNN relation instead of its symmetric union.
        #[arg(long)]
        directed: bool,
    },
    /// Compute per-node context vectors using training labels only.
    ExtractContext {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        inputs: ModelInputs,
        #[arg(long)]
        backbone: Option<BackboneKind>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        /// Train the plain backbone without the Reasoner head.
        #[arg(long)]
        no_reasoner: bool,
        /// Per-epoch report CSV (default: next to the checkpoint).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Predict class probabilities for every node.
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        inputs: ModelInputs,
        #[arg(long)]
        model: PathBuf,
    },
    /// Explain predictions for the nodes of one split.
    Explain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        inputs: ModelInputs,
        #[arg(long)]
        model: PathBuf,
        /// `offline` or `remote`.
        #[arg(long)]
        provider: Option<String>,
        #[arg(long)]
        endpoint: Option<String>,
        /// Remote model name.
        #[arg(long)]
        llm: Option<String>,
        /// Environment variable holding the bearer token.
        #[arg(long)]
        token_env: Option<String>,
        #[arg(long, default_value = "test")]
        role: String,
    },
    /// Score prediction files and write the summary CSV.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Prediction CSV; repeat for several runs.
        #[arg(long = "pred", required = true)]
        preds: Vec<PathBuf>,
        /// Per-epoch training reports, for the timing and memory columns.
        #[arg(long = "report")]
        reports: Vec<PathBuf>,
        #[arg(long, default_value = "test")]
        role: String,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Run the full cross-validation protocol from a config file.
    Experiment {
        #[command(flatten)]
        common: Common,
    },
}

/// Parses `argv` (including the program name) and runs it.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn load_kv(common: &Common) -> Result<KvConfig> {
    match &common.config {
        None => Ok(KvConfig::default()),
        Some(p) => {
            let kv = KvConfig::load(p)?;
            kv.check_known(&ExperimentConfig::known_keys())?;
            Ok(kv)
        }
    }
}

fn pick<T: FromStr>(flag: Option<T>, kv: &KvConfig, key: &str, default: T) -> Result<T> {
    match flag {
        Some(v) => Ok(v),
        None => kv.get_or(key, default),
    }
}

fn out_path(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn seed(common: &Common, kv: &KvConfig) -> Result<u64> {
    pick(common.seed, kv, "seed", 42)
}

impl DataArgs {
    fn resolve(&self, explicit: &Option<PathBuf>, file: &str) -> Option<PathBuf> {
        explicit
            .clone()
            .or_else(|| self.data.as_ref().map(|d| d.join(file)).filter(|p| p.exists()))
    }

    fn features(&self) -> Result<FeatureMatrix> {
        let p = self
            .resolve(&self.features, "features.txt")
            .ok_or_else(|| Error::Config("--features (or --data) is required".into()))?;
        FeatureMatrix::read(&p)
    }

    fn labels(&self) -> Result<Vec<usize>> {
        let p = self
            .resolve(&self.labels, "labels.csv")
            .ok_or_else(|| Error::Config("--labels (or --data) is required".into()))?;
        read_labels(&p)
    }

    fn classes(&self, labels: &[usize]) -> Result<ClassNames> {
        match self.resolve(&self.classes, "classes.csv") {
            Some(p) => ClassNames::load(&p),
            None => Ok(ClassNames::numbered(labels.iter().max().map_or(0, |m| m + 1))),
        }
    }

    fn split(&self, n: usize, seed: u64) -> Result<Split> {
        let split = match self.resolve(&self.splits, "splits.csv") {
            Some(p) => read_split(&p)?,
            None => {
                let mut all = seed_splits(n, seed, 3, 0.8)?;
                if self.fold >= all.len() {
                    return Err(Error::Config(format!("--fold {} out of range for 3 folds", self.fold)));
                }
                all.swap_remove(self.fold)
            }
        };
        split.roles(n)?;
        Ok(split)
    }
}

fn load_graph(inputs: &ModelInputs, data: &DataArgs) -> Result<Graph> {
    let p = inputs
        .graph
        .clone()
        .or_else(|| data.data.as_ref().map(|d| d.join("graph.txt")))
        .ok_or_else(|| Error::Config("--graph is required".into()))?;
    Graph::load(&p)
}

fn load_contexts(inputs: &ModelInputs, data: &DataArgs) -> Result<ContextSet> {
    let p = inputs
        .contexts
        .clone()
        .or_else(|| data.data.as_ref().map(|d| d.join("contexts.csv")))
        .ok_or_else(|| Error::Config("--contexts is required".into()))?;
    ContextSet::read_csv(&p)
}

fn check_rows(what: &str, rows: usize, n: usize) -> Result<()> {
    if rows != n {
        return Err(Error::Dataset(format!("{what} has {rows} rows but the graph has {n} nodes")));
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, contents)?;
    Ok(())
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            common,
            n,
            d,
            classes,
            sep,
            noise,
            fold,
        } => {
            let kv = load_kv(&common)?;
            let s = SynthConfig::default();
            let seed = seed(&common, &kv)?;
            let cfg = SynthConfig {
                n: pick(n, &kv, "synth_n", s.n)?,
                d: pick(d, &kv, "synth_d", s.d)?,
                k: pick(classes, &kv, "synth_k", s.k)?,
                sep: pick(sep, &kv, "synth_sep", s.sep)?,
                label_noise: pick(noise, &kv, "synth_noise", s.label_noise)?,
                seed,
            };
            let data = generate_synthetic(&cfg)?;
            let split = seed_splits(cfg.n, seed, 3, 0.8)?
                .into_iter()
                .nth(fold)
                .ok_or_else(|| Error::Config(format!("--fold {fold} out of range for 3 folds")))?;
            let dir = out_path(&common, "data");
            fs::create_dir_all(&dir)?;
            data.features.write_text(&dir.join("features.txt"))?;
            fs::write(dir.join("labels.csv"), labels_to_csv(&data.labels))?;
            fs::write(dir.join("classes.csv"), data.classes.to_csv())?;
            fs::write(dir.join("splits.csv"), split.to_csv())?;
            println!("wrote {} nodes, {} features, {} classes to {}", cfg.n, cfg.d, cfg.k, dir.display());
        }

        Command::BuildGraph {
            common,
            data,
            k,
            directed,
        } => {
            let kv = load_kv(&common)?;
            let x = data.features()?;
            let k = pick(k, &kv, "knn_k", 5)?;
            let symmetrize = !directed && kv.get_bool("symmetrize", true)?;
            let g = build_knn_graph(&x, k, symmetrize)?;
            let out = out_path(&common, "graph.txt");
            ensure_parent(&out)?;
            g.save(&out)?;
            println!("wrote graph with {} nodes and {} edges to {}", g.n_nodes(), g.num_edges(), out.display());
        }

        Command::ExtractContext { common, data, graph } => {
            let kv = load_kv(&common)?;
            let seed = seed(&common, &kv)?;
            let g = load_graph(&ModelInputs { graph, contexts: None }, &data)?;
            let x = data.features()?;
            let labels = data.labels()?;
            check_rows("features", x.n_nodes(), g.n_nodes())?;
            check_rows("labels", labels.len(), g.n_nodes())?;
            let split = data.split(g.n_nodes(), seed)?;
            let ctx = contexts_for_split(&g, &x, &labels, &split, seed)?;
            let out = out_path(&common, "contexts.csv");
            write_file(&out, ctx.to_csv())?;
            println!("wrote {} context vectors to {}", ctx.len(), out.display());
        }

        Command::Train {
            common,
            data,
            inputs,
            backbone,
            epochs,
            alpha,
            beta,
            lr,
            no_reasoner,
            report,
        } => {
            let mut kv = load_kv(&common)?;
            if let Some(s) = common.seed {
                kv.set("seed", s);
            }
            if let Some(b) = backbone {
                kv.set("backbone", b);
            }
            if let Some(e) = epochs {
                kv.set("epochs", e);
            }
            if let Some(a) = alpha {
                kv.set("alpha", a);
            }
            if let Some(b) = beta {
                kv.set("beta", b);
            }
            if let Some(l) = lr {
                kv.set("lr", l);
            }
            if no_reasoner {
                kv.set("reasoner", false);
                kv.set("inject_mode", "concat");
            }
            let cfg = ModelConfig::from_kv(&kv)?;
            let train_data = load_train_data(&data, &inputs, cfg.seed)?;
            let model = crate::model::XNodeModel::new(cfg, train_data.features.cols(), train_data.n_classes)?;
            let mut trainer = Trainer::new(model, &train_data)?;
            trainer.run()?;
            let (model, rep) = trainer.finish();
            let out = out_path(&common, "model.ckpt");
            write_file(&out, checkpoint::to_bytes(&model))?;
            let report_path = report.unwrap_or_else(|| out.with_extension("report.csv"));
            write_file(&report_path, rep.to_csv())?;
            println!(
                "{}: best epoch {} (val acc {}), checkpoint {}",
                rep.method,
                rep.best_epoch,
                rep.best_val_acc().map_or("n/a".into(), |a| format!("{:.4}", a)),
                out.display()
            );
        }

        Command::Predict {
            common,
            data,
            inputs,
            model,
        } => {
            let m = checkpoint::load(&model)?;
            let g = load_graph(&inputs, &data)?;
            let x = data.features()?;
            let ctx = load_contexts(&inputs, &data)?;
            check_rows("features", x.n_nodes(), g.n_nodes())?;
            check_rows("contexts", ctx.len(), g.n_nodes())?;
            let pred = m.predict(&GraphOperators::new(&g), &x.as_tensor(), &ctx.matrix())?;
            let out = out_path(&common, "predictions.csv");
            write_file(&out, pred.to_csv())?;
            println!("wrote predictions for {} nodes to {}", g.n_nodes(), out.display());
        }

        Command::Explain {
            common,
            data,
            inputs,
            model,
            provider,
            endpoint,
            llm,
            token_env,
            role,
        } => {
            let kv = load_kv(&common)?;
            let seed = seed(&common, &kv)?;
            let mut pkv = kv.clone();
            for (key, v) in [("provider", provider), ("endpoint", endpoint), ("model", llm), ("token_env", token_env)] {
                if let Some(v) = v {
                    pkv.set(key, v);
                }
            }
            let pcfg = ProviderConfig::from_kv(&pkv)?;
            if pcfg.kind == ProviderKind::Remote && pcfg.token_env.is_none() {
                log::warn!("remote provider configured without a token variable");
            }
            let m = checkpoint::load(&model)?;
            let g = load_graph(&inputs, &data)?;
            let x = data.features()?;
            let ctx = load_contexts(&inputs, &data)?;
            let labels = data.labels()?;
            let classes = data.classes(&labels)?;
            check_rows("features", x.n_nodes(), g.n_nodes())?;
            check_rows("contexts", ctx.len(), g.n_nodes())?;
            check_rows("labels", labels.len(), g.n_nodes())?;
            let split = data.split(g.n_nodes(), seed)?;
            let role: Role = role.parse()?;
            let pred = m.predict(&GraphOperators::new(&g), &x.as_tensor(), &ctx.matrix())?;
            let items: Vec<ExplainItem> = split
                .indices(role)
                .iter()
                .map(|&i| ExplainItem {
                    node: i,
                    context: ctx.contexts[i].clone(),
                    pred: pred.labels[i],
                    truth: Some(labels[i]),
                })
                .collect();
            let records = explain_nodes(&items, &classes, pcfg.build()?.as_ref(), pcfg.concurrency)?;
            let out = out_path(&common, "explanations.jsonl");
            ensure_parent(&out)?;
            persist_explanations(&records, &out)?;
            println!("wrote {} explanations to {}", records.len(), out.display());
        }

        Command::Evaluate {
            common,
            data,
            preds,
            reports,
            role,
            method,
            dataset,
        } => {
            let kv = load_kv(&common)?;
            let seed = seed(&common, &kv)?;
            let labels = data.labels()?;
            let split = data.split(labels.len(), seed)?;
            let role: Role = role.parse()?;
            let rows = split.indices(role);
            let y: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
            if !reports.is_empty() && reports.len() != preds.len() {
                return Err(Error::Config("give one --report per --pred, or none".into()));
            }
            let mut runs = Vec::new();
            for (r, path) in preds.iter().enumerate() {
                let pred = Prediction::parse_csv(&fs::read_to_string(path)?, Some(path))?;
                check_rows("predictions", pred.labels.len(), labels.len())?;
                let p: Vec<usize> = rows.iter().map(|&i| pred.labels[i]).collect();
                let metrics = compute_metrics(&p, &pred.probs.select_rows(rows), &y, pred.probs.cols())?;
                let report = match reports.get(r) {
                    Some(rp) => TrainReport {
                        epochs: TrainReport::parse_csv(&fs::read_to_string(rp)?, Some(rp))?,
                        ..TrainReport::default()
                    },
                    None => TrainReport::default(),
                };
                runs.push(RunMetrics {
                    metrics,
                    report,
                    explanations: None,
                });
            }
            let method = method.or_else(|| kv.raw("backbone").map(|b| b.to_uppercase())).unwrap_or_else(|| "model".into());
            let dataset = dataset.or_else(|| kv.raw("dataset").map(str::to_string)).unwrap_or_else(|| "dataset".into());
            let row = SummaryRow::from_runs(&method, &dataset, &runs.iter().collect::<Vec<_>>());
            let out = out_path(&common, "summary.csv");
            write_file(&out, summary_to_csv(std::slice::from_ref(&row)))?;
            println!("{}", row.pretty());
        }

        Command::Experiment { common } => {
            let path = common
                .config
                .clone()
                .ok_or_else(|| Error::Config("experiment requires --config".into()))?;
            let mut cfg = ExperimentConfig::load(&path)?;
            if let Some(s) = common.seed {
                cfg.plan.seeds = vec![s];
            }
            let out = out_path(&common, "results");
            let outcome = run_experiment(&cfg, Some(&out))?;
            print!("{}", outcome.pretty_table());
            println!("wrote {}", out.join("summary.csv").display());
        }
    }
    Ok(())
}

fn load_train_data(data: &DataArgs, inputs: &ModelInputs, seed: u64) -> Result<TrainData> {
    let g = load_graph(inputs, data)?;
    let x = data.features()?;
    let ctx = load_contexts(inputs, data)?;
    let labels = data.labels()?;
    let classes = data.classes(&labels)?;
    check_rows("features", x.n_nodes(), g.n_nodes())?;
    check_rows("contexts", ctx.len(), g.n_nodes())?;
    check_rows("labels", labels.len(), g.n_nodes())?;
    let split = data.split(g.n_nodes(), seed)?;
    Ok(TrainData {
        ops: GraphOperators::new(&g),
        features: x.as_tensor(),
        contexts: ctx.matrix(),
        labels,
        n_classes: classes.len(),
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["xnode", "train", "--bogus-flag"]), 1);
        assert_eq!(run(["xnode"]), 1);
        assert_eq!(run(["xnode", "no-such-command"]), 1);
        assert_eq!(run(["xnode", "--help"]), 0);
    }

    #[test]
    fn runtime_errors_exit_two() {
        assert_eq!(run(["xnode", "build-graph", "--features", "/nonexistent/x.txt"]), 2);
        assert_eq!(run(["xnode", "experiment"]), 2);
    }
}
