//! The self-explaining node classifier.
//!
//! For every node the model computes
//!
//! ```text
//! h_i   = Backbone(X, G)_i                      node embedding
//! e_i   = σ(W2 · ReLU(W1 · c_i + b1) + b2)      explanation vector (Reasoner)
//! ĥ_i   = Decoder(e_i)                          embedding reconstruction
//! ŷ_i   = MLP_class(Concat(h_i, e_i))           prediction
//! ```
//!
//! and is trained on
//!
//! ```text
//! L = mean_i [ CE(ŷ_i, y_i) + α ‖e_i − c_i‖² + β ‖ĥ_i − h_i‖² ]
//! ```
//!
//! over training nodes. `c_i` is the z-scored context vector; the alignment
//! target is `sigmoid(c_i)` by default so it lies in the Reasoner's output
//! range. `h_i` is detached in the reconstruction term unless
//! `recon_detach = false`.
//!
//! With `reasoner = false` the model is the plain backbone plus classifier.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::backbone::{Backbone, BackboneConfig, BackboneKind, GraphOperators, Linear};
use crate::config::KvConfig;
use crate::context::{ContextNorm, CONTEXT_DIM};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InjectMode {
    /// Concatenate `e_i` onto `h_i` before the classifier only.
    Concat,
    /// Additionally concatenate `e_i` onto the input of backbone layers ≥ 2.
    Layerwise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignTarget {
    SigmoidZscore,
    Zscore,
}

macro_rules! string_enum {
    ($ty:ty { $($variant:path => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s { $($name => Ok($variant),)+ other => Err(Error::Config(format!("unknown value `{other}`"))) }
            }
        }
    };
}

string_enum!(InjectMode { InjectMode::Concat => "concat", InjectMode::Layerwise => "layerwise" });
string_enum!(AlignTarget { AlignTarget::SigmoidZscore => "sigmoid_zscore", AlignTarget::Zscore => "zscore" });

/// Model and training hyperparameters. None of these have published values;
/// the defaults are sized for graphs of a few hundred nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    pub layers: usize,
    pub d_h: usize,
    pub heads: usize,
    pub reasoner: bool,
    pub d_e: usize,
    pub reasoner_hidden: usize,
    pub decoder_hidden: usize,
    /// 0 makes the classifier a single linear layer.
    pub classifier_hidden: usize,
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub inject_mode: InjectMode,
    pub recon_detach: bool,
    pub align_target: AlignTarget,
    /// Record wall-clock epoch times; when off they are reported as 0.
    pub timing: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneKind::Gcn,
            layers: 2,
            d_h: 64,
            heads: 1,
            reasoner: true,
            d_e: CONTEXT_DIM,
            reasoner_hidden: 32,
            decoder_hidden: 32,
            classifier_hidden: 32,
            alpha: 0.1,
            beta: 0.1,
            lr: 0.01,
            epochs: 200,
            seed: 42,
            inject_mode: InjectMode::Concat,
            recon_detach: true,
            align_target: AlignTarget::SigmoidZscore,
            timing: true,
        }
    }
}

impl ModelConfig {
    pub const KEYS: &'static [&'static str] = &[
        "backbone",
        "layers",
        "d_h",
        "heads",
        "reasoner",
        "d_e",
        "reasoner_hidden",
        "decoder_hidden",
        "classifier_hidden",
        "alpha",
        "beta",
        "lr",
        "epochs",
        "seed",
        "inject_mode",
        "recon_detach",
        "align_target",
        "timing",
    ];

    /// Reads the model keys from `kv`, falling back to defaults. Other keys are ignored.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let timing = match kv.raw("timing") {
            None => d.timing,
            Some("wall") => true,
            Some("off") => false,
            Some(_) => kv.get_bool("timing", d.timing)?,
        };
        let cfg = Self {
            backbone: kv.get_or("backbone", d.backbone)?,
            layers: kv.get_or("layers", d.layers)?,
            d_h: kv.get_or("d_h", d.d_h)?,
            heads: kv.get_or("heads", d.heads)?,
            reasoner: kv.get_bool("reasoner", d.reasoner)?,
            d_e: kv.get_or("d_e", d.d_e)?,
            reasoner_hidden: kv.get_or("reasoner_hidden", d.reasoner_hidden)?,
            decoder_hidden: kv.get_or("decoder_hidden", d.decoder_hidden)?,
            classifier_hidden: kv.get_or("classifier_hidden", d.classifier_hidden)?,
            alpha: kv.get_or("alpha", d.alpha)?,
            beta: kv.get_or("beta", d.beta)?,
            lr: kv.get_or("lr", d.lr)?,
            epochs: kv.get_or("epochs", d.epochs)?,
            seed: kv.get_or("seed", d.seed)?,
            inject_mode: kv.get_or("inject_mode", d.inject_mode)?,
            recon_detach: kv.get_bool("recon_detach", d.recon_detach)?,
            align_target: kv.get_or("align_target", d.align_target)?,
            timing,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.set("backbone", self.backbone);
        kv.set("layers", self.layers);
        kv.set("d_h", self.d_h);
        kv.set("heads", self.heads);
        kv.set("reasoner", self.reasoner);
        kv.set("d_e", self.d_e);
        kv.set("reasoner_hidden", self.reasoner_hidden);
        kv.set("decoder_hidden", self.decoder_hidden);
        kv.set("classifier_hidden", self.classifier_hidden);
        kv.set("alpha", self.alpha);
        kv.set("beta", self.beta);
        kv.set("lr", self.lr);
        kv.set("epochs", self.epochs);
        kv.set("seed", self.seed);
        kv.set("inject_mode", self.inject_mode);
        kv.set("recon_detach", self.recon_detach);
        kv.set("align_target", self.align_target);
        kv.set("timing", if self.timing { "wall" } else { "off" });
        kv
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::Config(format!(
                "loss weights must be non-negative, got alpha = {}, beta = {}",
                self.alpha, self.beta
            )));
        }
        if self.d_e != CONTEXT_DIM {
            return Err(Error::Config(format!(
                "d_e must equal the context width {CONTEXT_DIM} for the alignment term, got {}",
                self.d_e
            )));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.inject_mode == InjectMode::Layerwise && !self.reasoner {
            return Err(Error::Config("layerwise injection requires the reasoner".into()));
        }
        Ok(())
    }

    /// Short method label, e.g. `GCN` or `GCN+Reasoner`.
    pub fn method_name(&self) -> String {
        let base = self.backbone.to_string().to_uppercase();
        if self.reasoner {
            format!("{base}+Reasoner")
        } else {
            base
        }
    }
}

/// `σ(W2 · ReLU(W1 · c + b1) + b2)`.
#[derive(Clone, Debug)]
pub struct Reasoner {
    pub hidden: Linear,
    pub out: Linear,
}

/// Two-layer ReLU MLP reconstructing `h` from `e`.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub hidden: Linear,
    pub out: Linear,
}

/// MLP over `Concat(h, e)` (or `h` alone without a reasoner).
#[derive(Clone, Debug)]
pub struct Classifier {
    pub layers: Vec<Linear>,
}

/// Vars produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub h: Var,
    pub e: Option<Var>,
    pub h_hat: Option<Var>,
    pub logits: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub ce: Var,
    pub align: Var,
    pub recon: Var,
}

#[derive(Clone, Debug)]
pub struct XNodeModel {
    pub config: ModelConfig,
    pub input_dim: usize,
    pub n_classes: usize,
    pub params: ParamStore,
    pub backbone: Backbone,
    pub reasoner: Option<Reasoner>,
    pub decoder: Option<Decoder>,
    pub classifier: Classifier,
    /// Context normalization fit on training nodes; set by training.
    pub norm: Option<ContextNorm>,
}

impl XNodeModel {
    /// Initializes every parameter from `config.seed`.
    pub fn new(config: ModelConfig, input_dim: usize, n_classes: usize) -> Result<Self> {
        config.validate()?;
        if n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {n_classes}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let inject_dim = if config.inject_mode == InjectMode::Layerwise { config.d_e } else { 0 };
        let backbone = Backbone::init(
            BackboneConfig {
                kind: config.backbone,
                input_dim,
                hidden_dim: config.d_h,
                layers: config.layers,
                heads: config.heads,
                gin_eps: 0.0,
                inject_dim,
            },
            &mut params,
            &mut rng,
        )?;
        let (reasoner, decoder) = if config.reasoner {
            let r = Reasoner {
                hidden: Linear::init(&mut params, "reasoner.0", CONTEXT_DIM, config.reasoner_hidden, &mut rng),
                out: Linear::init(&mut params, "reasoner.1", config.reasoner_hidden, config.d_e, &mut rng),
            };
            let d = Decoder {
                hidden: Linear::init(&mut params, "decoder.0", config.d_e, config.decoder_hidden, &mut rng),
                out: Linear::init(&mut params, "decoder.1", config.decoder_hidden, config.d_h, &mut rng),
            };
            (Some(r), Some(d))
        } else {
            (None, None)
        };
        let z_dim = config.d_h + if config.reasoner { config.d_e } else { 0 };
        let mut widths = vec![z_dim];
        if config.classifier_hidden > 0 {
            widths.push(config.classifier_hidden);
        }
        widths.push(n_classes);
        let classifier = Classifier {
            layers: widths
                .windows(2)
                .enumerate()
                .map(|(l, w)| Linear::init(&mut params, &format!("classifier.{l}"), w[0], w[1], &mut rng))
                .collect(),
        };
        Ok(Self {
            config,
            input_dim,
            n_classes,
            params,
            backbone,
            reasoner,
            decoder,
            classifier,
            norm: None,
        })
    }

    pub fn reasoner_forward(&self, tape: &mut Tape, c: Var) -> Result<Var> {
        let r = self
            .reasoner
            .as_ref()
            .ok_or_else(|| Error::Config("model has no reasoner".into()))?;
        let [_, w] = tape.shape(c);
        if w != CONTEXT_DIM {
            return Err(Error::shape("reasoner_forward", &[CONTEXT_DIM], &[w]));
        }
        let hidden = r.hidden.forward(tape, &self.params, c)?;
        let hidden = tape.relu(hidden);
        let out = r.out.forward(tape, &self.params, hidden)?;
        Ok(tape.sigmoid(out))
    }

    pub fn decoder_forward(&self, tape: &mut Tape, e: Var) -> Result<Var> {
        let d = self
            .decoder
            .as_ref()
            .ok_or_else(|| Error::Config("model has no decoder".into()))?;
        let [_, w] = tape.shape(e);
        if w != self.config.d_e {
            return Err(Error::shape("decoder_forward", &[self.config.d_e], &[w]));
        }
        let hidden = d.hidden.forward(tape, &self.params, e)?;
        let hidden = tape.relu(hidden);
        d.out.forward(tape, &self.params, hidden)
    }

    /// Logits from `Concat(h, e)`, or from `h` when `e` is `None`.
    pub fn classify(&self, tape: &mut Tape, h: Var, e: Option<Var>) -> Result<Var> {
        let mut z = match e {
            Some(e) => tape.concat_cols(h, e)?,
            None => h,
        };
        let expected = self.params.value(self.classifier.layers[0].weight).rows();
        let [_, w] = tape.shape(z);
        if w != expected {
            return Err(Error::shape("classify", &[expected], &[w]));
        }
        let last = self.classifier.layers.len() - 1;
        for (l, lin) in self.classifier.layers.iter().enumerate() {
            z = lin.forward(tape, &self.params, z)?;
            if l < last {
                z = tape.relu(z);
            }
        }
        Ok(z)
    }

    /// Full forward pass; `c` is the normalized `N × 7` context matrix.
    pub fn forward(&self, tape: &mut Tape, ops: &GraphOperators, x: Var, c: Var) -> Result<Forward> {
        let e = match self.reasoner {
            Some(_) => Some(self.reasoner_forward(tape, c)?),
            None => None,
        };
        let inject = match self.config.inject_mode {
            InjectMode::Layerwise => e,
            InjectMode::Concat => None,
        };
        let h = self.backbone.forward(tape, &self.params, ops, x, inject)?;
        let h_hat = match e {
            Some(e) => Some(self.decoder_forward(tape, e)?),
            None => None,
        };
        let logits = self.classify(tape, h, e)?;
        Ok(Forward { h, e, h_hat, logits })
    }

    /// Normalized contexts and the alignment target for a raw context matrix.
    pub fn prepare_contexts(&self, raw: &Tensor) -> Result<(Tensor, Tensor)> {
        let norm = self
            .norm
            .as_ref()
            .ok_or_else(|| Error::Config("context normalization has not been fit".into()))?;
        let z = norm.apply(raw);
        let target = match self.config.align_target {
            AlignTarget::SigmoidZscore => z.map(|v| 1.0 / (1.0 + (-v).exp())),
            AlignTarget::Zscore => z.clone(),
        };
        Ok((z, target))
    }

    /// Class probabilities and argmax labels for every node.
    pub fn predict(&self, ops: &GraphOperators, features: &Tensor, contexts: &Tensor) -> Result<Prediction> {
        if features.rows() != ops.n || contexts.rows() != ops.n {
            return Err(Error::shape("predict", &[ops.n], &[features.rows(), contexts.rows()]));
        }
        let (c_norm, _) = self.prepare_contexts(contexts)?;
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let c = tape.constant(c_norm);
        let fwd = self.forward(&mut tape, ops, x, c)?;
        Ok(Prediction::from_logits(tape.value(fwd.logits)))
    }
}

/// Joint objective over the rows in `rows`:
/// `CE + α·mse(e, target) + β·mse(ĥ, h)`, each term averaged over rows.
#[allow(clippy::too_many_arguments)]
pub fn joint_loss(
    tape: &mut Tape,
    fwd: &Forward,
    labels: Arc<[usize]>,
    rows: Arc<[usize]>,
    align_target: Var,
    alpha: f64,
    beta: f64,
    recon_detach: bool,
) -> Result<LossTerms> {
    if alpha < 0.0 || beta < 0.0 {
        return Err(Error::Config(format!(
            "loss weights must be non-negative, got alpha = {alpha}, beta = {beta}"
        )));
    }
    let logits = tape.gather_rows(fwd.logits, rows.clone())?;
    let ce = tape.softmax_cross_entropy(logits, labels)?;
    let (align, recon) = match (fwd.e, fwd.h_hat) {
        (Some(e), Some(h_hat)) => {
            let e_rows = tape.gather_rows(e, rows.clone())?;
            let t_rows = tape.gather_rows(align_target, rows.clone())?;
            let align = tape.mse(e_rows, t_rows)?;
            let h = if recon_detach { tape.detach(fwd.h) } else { fwd.h };
            let hh_rows = tape.gather_rows(h_hat, rows.clone())?;
            let h_rows = tape.gather_rows(h, rows)?;
            let recon = tape.mse(hh_rows, h_rows)?;
            (align, recon)
        }
        _ => {
            let zero = tape.constant(Tensor::scalar(0.0));
            (zero, zero)
        }
    };
    let a = tape.scale(align, alpha);
    let b = tape.scale(recon, beta);
    let partial = tape.add(ce, a)?;
    let total = tape.add(partial, b)?;
    Ok(LossTerms { total, ce, align, recon })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    pub probs: Tensor,
}

impl Prediction {
    pub fn from_logits(logits: &Tensor) -> Self {
        let mut probs = Tensor::zeros(logits.rows(), logits.cols());
        for r in 0..logits.rows() {
            let row = logits.row_slice(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
            for (p, &x) in probs.row_slice_mut(r).iter_mut().zip(row) {
                *p = (x - m).exp() / z;
            }
        }
        let labels = (0..probs.rows()).map(|r| probs.argmax_row(r)).collect();
        Self { labels, probs }
    }

    pub fn to_csv(&self) -> String {
        let k = self.probs.cols();
        let mut s = String::from("node,pred");
        for c in 0..k {
            s.push_str(&format!(",prob_{c}"));
        }
        s.push('\n');
        for (i, &y) in self.labels.iter().enumerate() {
            s.push_str(&format!("{i},{y}"));
            for &p in self.probs.row_slice(i) {
                s.push_str(&format!(",{p}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn parse_csv(text: &str, path: Option<&std::path::Path>) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let header = match lines.next() {
            Some((_, h)) if h.starts_with("node,pred") => h,
            _ => return Err(Error::parse(path, 1, "expected header `node,pred,prob_0,...`")),
        };
        let k = header.split(',').count() - 2;
        let (mut labels, mut data) = (Vec::new(), Vec::new());
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != k + 2 {
                return Err(Error::parse(path, idx + 1, format!("expected {} columns", k + 2)));
            }
            let bad = || Error::parse(path, idx + 1, "bad number");
            if cols[0].parse::<usize>().map_err(|_| bad())? != labels.len() {
                return Err(Error::parse(path, idx + 1, "nodes must be listed in order"));
            }
            labels.push(cols[1].parse().map_err(|_| bad())?);
            for c in &cols[2..] {
                data.push(c.parse::<f64>().map_err(|_| bad())?);
            }
        }
        let probs = Tensor::new(labels.len(), k, data)?;
        Ok(Self { labels, probs })
    }
}
