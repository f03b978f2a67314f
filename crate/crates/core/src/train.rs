//! Full-batch training with best-validation checkpointing.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use crate::autodiff::Tape;
use crate::backbone::GraphOperators;
use crate::context::ContextNorm;
use crate::error::{Error, Result};
use crate::model::{joint_loss, ModelConfig, Prediction, XNodeModel};
use crate::optim::{Adam, Optimizer};
use crate::params::ParamStore;
use crate::split::Split;
use crate::tensor::Tensor;

/// Everything a training run reads. `contexts` holds the raw (unnormalized)
/// `N × 7` context matrix, built with training labels only.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub ops: GraphOperators,
    pub features: Tensor,
    pub contexts: Tensor,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub split: Split,
}

impl TrainData {
    pub fn validate(&self) -> Result<()> {
        let n = self.ops.n;
        for (what, rows) in [
            ("features", self.features.rows()),
            ("contexts", self.contexts.rows()),
            ("labels", self.labels.len()),
        ] {
            if rows != n {
                return Err(Error::Dataset(format!("{what} has {rows} rows but the graph has {n} nodes")));
            }
        }
        for (t, _) in [(&self.features, "features"), (&self.contexts, "contexts")] {
            if let Some(pos) = t.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteFeature {
                    row: pos / t.cols(),
                    col: pos % t.cols(),
                });
            }
        }
        if let Some(&label) = self.labels.iter().find(|&&y| y >= self.n_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.n_classes,
            });
        }
        self.split.roles(n)?;
        if self.split.train.is_empty() {
            return Err(Error::Dataset("training split is empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub ce: f64,
    pub align: f64,
    pub recon: f64,
    pub total: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub val_ce: Option<f64>,
    pub epoch_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub method: String,
    pub alpha: f64,
    pub beta: f64,
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    /// Largest tape plus optimizer footprint seen in any epoch.
    pub peak_mem_bytes: usize,
}

pub const REPORT_HEADER: &str = "epoch,ce,align,recon,total,train_acc,val_acc,val_ce,epoch_time_s";

impl TrainReport {
    pub fn mean_epoch_time(&self) -> f64 {
        if self.epochs.is_empty() {
            return 0.0;
        }
        self.epochs.iter().map(|e| e.epoch_time_s).sum::<f64>() / self.epochs.len() as f64
    }

    pub fn peak_mem_mb(&self) -> f64 {
        self.peak_mem_bytes as f64 / (1024.0 * 1024.0)
    }

    pub fn best_val_acc(&self) -> Option<f64> {
        self.epochs.iter().filter_map(|e| e.val_acc).reduce(f64::max)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = format!("{REPORT_HEADER}\n");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                e.epoch,
                e.ce,
                e.align,
                e.recon,
                e.total,
                e.train_acc,
                opt(e.val_acc),
                opt(e.val_ce),
                e.epoch_time_s
            );
        }
        s
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn parse_csv(text: &str, path: Option<&std::path::Path>) -> Result<Vec<EpochLog>> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == REPORT_HEADER => {}
            _ => return Err(Error::parse(path, 1, format!("expected header `{REPORT_HEADER}`"))),
        }
        let mut out = Vec::new();
        for (idx, line) in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(Error::parse(path, idx + 1, "expected 9 columns"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(path, idx + 1, format!("bad number `{s}`")));
            let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
            out.push(EpochLog {
                epoch: f[0].parse().map_err(|_| Error::parse(path, idx + 1, "bad epoch"))?,
                ce: num(f[1])?,
                align: num(f[2])?,
                recon: num(f[3])?,
                total: num(f[4])?,
                train_acc: num(f[5])?,
                val_acc: opt(f[6])?,
                val_ce: opt(f[7])?,
                epoch_time_s: num(f[8])?,
            });
        }
        Ok(out)
    }
}

/// Steps a model one full-batch epoch at a time.
pub struct Trainer<'a> {
    model: XNodeModel,
    data: &'a TrainData,
    optimizer: Box<dyn Optimizer + Send>,
    features: Tensor,
    c_norm: Tensor,
    target: Tensor,
    train_rows: Arc<[usize]>,
    train_labels: Arc<[usize]>,
    report: TrainReport,
    best: Option<(f64, f64, ParamStore)>,
}

impl<'a> Trainer<'a> {
    /// Fits context normalization on training nodes and sets up Adam.
    pub fn new(model: XNodeModel, data: &'a TrainData) -> Result<Self> {
        let lr = model.config.lr;
        Self::with_optimizer(model, data, Box::new(Adam::new(lr)))
    }

    pub fn with_optimizer(
        mut model: XNodeModel,
        data: &'a TrainData,
        optimizer: Box<dyn Optimizer + Send>,
    ) -> Result<Self> {
        data.validate()?;
        if data.features.cols() != model.input_dim || data.n_classes != model.n_classes {
            return Err(Error::shape(
                "train",
                &[model.input_dim, model.n_classes],
                &[data.features.cols(), data.n_classes],
            ));
        }
        model.norm = Some(ContextNorm::fit(&data.contexts, &data.split.train_mask(data.ops.n))?);
        let (c_norm, target) = model.prepare_contexts(&data.contexts)?;
        let train_rows: Arc<[usize]> = data.split.train.clone().into();
        let train_labels: Arc<[usize]> = data.split.train.iter().map(|&i| data.labels[i]).collect();
        let report = TrainReport {
            method: model.config.method_name(),
            alpha: model.config.alpha,
            beta: model.config.beta,
            ..TrainReport::default()
        };
        Ok(Self {
            features: data.features.clone(),
            model,
            data,
            optimizer,
            c_norm,
            target,
            train_rows,
            train_labels,
            report,
            best: None,
        })
    }

    pub fn model(&self) -> &XNodeModel {
        &self.model
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    /// One forward/backward/update cycle. Metrics are taken from the forward
    /// pass before the update, so they describe the parameters going in.
    pub fn step(&mut self) -> Result<&EpochLog> {
        let start = Instant::now();
        let epoch = self.report.epochs.len();
        let cfg: &ModelConfig = &self.model.config;
        let mut tape = Tape::new();
        let x = tape.constant(self.features.clone());
        let c = tape.constant(self.c_norm.clone());
        let t = tape.constant(self.target.clone());
        let fwd = self.model.forward(&mut tape, &self.data.ops, x, c)?;
        let terms = joint_loss(
            &mut tape,
            &fwd,
            self.train_labels.clone(),
            self.train_rows.clone(),
            t,
            cfg.alpha,
            cfg.beta,
            cfg.recon_detach,
        )?;
        let ce = tape.value(terms.ce).item();
        let align = tape.value(terms.align).item();
        let recon = tape.value(terms.recon).item();
        let total = tape.value(terms.total).item();
        for (term, v) in [("cross-entropy", ce), ("alignment", align), ("reconstruction", recon)] {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { term, epoch });
            }
        }
        let grads = tape.backward(terms.total)?;

        let pred = Prediction::from_logits(tape.value(fwd.logits));
        let train_acc = accuracy_on(&pred, &self.data.labels, &self.data.split.train);
        let (val_acc, val_ce) = if self.data.split.val.is_empty() {
            (None, None)
        } else {
            let acc = accuracy_on(&pred, &self.data.labels, &self.data.split.val);
            let ce = self.data.split.val.iter().map(|&i| -pred.probs.get(i, self.data.labels[i]).ln()).sum::<f64>()
                / self.data.split.val.len() as f64;
            (Some(acc), Some(ce))
        };

        // Highest validation accuracy wins, then lower validation loss, then earlier.
        let better = match (&self.best, val_acc, val_ce) {
            (None, _, _) => true,
            (Some((best_acc, best_ce, _)), Some(acc), Some(vce)) => {
                acc > *best_acc || (acc == *best_acc && vce < *best_ce)
            }
            (Some(_), _, _) => true,
        };
        if better {
            self.best = Some((val_acc.unwrap_or(0.0), val_ce.unwrap_or(0.0), self.model.params.clone()));
            self.report.best_epoch = epoch;
        }

        let optimizer_bytes = self.model.params.num_scalars() * 4 * std::mem::size_of::<f64>();
        self.report.peak_mem_bytes = self.report.peak_mem_bytes.max(tape.value_bytes() + optimizer_bytes);
        drop(pred);
        grads.write_to(&mut self.model.params);
        drop(tape);
        self.optimizer.step(&mut self.model.params)?;

        let epoch_time_s = if self.model.config.timing {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        self.report.epochs.push(EpochLog {
            epoch,
            ce,
            align,
            recon,
            total,
            train_acc,
            val_acc,
            val_ce,
            epoch_time_s,
        });
        Ok(self.report.epochs.last().expect("just pushed"))
    }

    /// Runs the configured number of epochs.
    pub fn run(&mut self) -> Result<()> {
        for _ in self.report.epochs.len()..self.model.config.epochs {
            self.step()?;
        }
        Ok(())
    }

    /// The model with the best-validation parameters restored.
    pub fn finish(mut self) -> (XNodeModel, TrainReport) {
        if let Some((_, _, params)) = self.best.take() {
            self.model.params = params;
        }
        self.model.params.zero_grad();
        (self.model, self.report)
    }
}

fn accuracy_on(pred: &Prediction, labels: &[usize], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().filter(|&&i| pred.labels[i] == labels[i]).count() as f64 / rows.len() as f64
}

/// Initializes a model from `config` and trains it for `config.epochs`.
pub fn train(config: ModelConfig, data: &TrainData) -> Result<(XNodeModel, TrainReport)> {
    let model = XNodeModel::new(config, data.features.cols(), data.n_classes)?;
    let mut trainer = Trainer::new(model, data)?;
    trainer.run()?;
    Ok(trainer.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn toy_data() -> TrainData {
        // two triangles joined by a weak edge, one class each
        let g = Graph::from_edges(
            6,
            true,
            2,
            &[(0, 1, 0.9), (1, 2, 0.9), (0, 2, 0.9), (3, 4, 0.9), (4, 5, 0.9), (3, 5, 0.9), (2, 3, 0.1)],
        )
        .unwrap();
        TrainData {
            ops: GraphOperators::new(&g),
            features: Tensor::from_fn(6, 3, |r, c| if (r < 3) == (c == 0) { 1.0 } else { 0.1 * c as f64 }),
            contexts: Tensor::from_fn(6, 7, |r, c| ((r * 7 + c) as f64 * 0.37).sin()),
            labels: vec![0, 0, 0, 1, 1, 1],
            n_classes: 2,
            split: Split::new(vec![0, 1, 3, 4], vec![2, 5], vec![]),
        }
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            d_h: 8,
            reasoner_hidden: 4,
            decoder_hidden: 4,
            classifier_hidden: 0,
            epochs: 30,
            lr: 0.05,
            timing: false,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn total_is_sum_of_terms() {
        let data = toy_data();
        let (_, report) = train(small_config(), &data).unwrap();
        assert_eq!(report.epochs.len(), 30);
        for e in &report.epochs {
            assert!((e.total - (e.ce + 0.1 * e.align + 0.1 * e.recon)).abs() < 1e-9);
        }
        assert_eq!(report.best_val_acc(), Some(1.0));
    }

    #[test]
    fn deterministic_report() {
        let data = toy_data();
        let a = train(small_config(), &data).unwrap().1;
        let b = train(small_config(), &data).unwrap().1;
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(TrainReport::parse_csv(&a.to_csv(), None).unwrap(), a.epochs);
    }

    #[test]
    fn nan_features_name_the_term() {
        let mut data = toy_data();
        data.contexts.set(0, 0, f64::NAN);
        let model = XNodeModel::new(small_config(), 3, 2).unwrap();
        assert!(matches!(Trainer::new(model, &data), Err(Error::NonFiniteFeature { row: 0, col: 0 })));

        let mut data = toy_data();
        data.features = data.features.map(|v| v * 1e300);
        let model = XNodeModel::new(small_config(), 3, 2).unwrap();
        let err = Trainer::new(model, &data).unwrap().step().map(|_| ()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { term: "reconstruction", epoch: 0 }), "{err:?}");
    }

    #[test]
    fn rejects_inconsistent_data() {
        let mut data = toy_data();
        data.labels[0] = 5;
        assert!(train(small_config(), &data).is_err());
        let mut data = toy_data();
        data.split.test.push(0);
        assert!(train(small_config(), &data).is_err());
    }
}
