//! Joint semi-supervised optimization: per labeled batch the loss is
//! alpha*X + (1-alpha)*J, per unlabeled batch (1-alpha)*J, with Adam, linear
//! learning-rate decay, temperature annealing, periodic evaluation and early
//! stopping.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{
    sample_gumbel_noise, span_forward, GumbelSchedule, SpanTerm, UnsupLossConfig,
};
use crate::classifier::{
    predict, sentence_classify_vars, span_classify_vars, supervised_loss_var, InferenceCombine,
};
use crate::corpus::{filter_document, make_batches, CorpusSplit, Document, FilterLimits, View};
use crate::encoding::{build_encoder, encode_document, EncodedDocument, EncoderConfig};
use crate::error::{FrissError, Result};
use crate::graph::{Graph, Var};
use crate::model::{ModelDims, ModelParams, ParamVars};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DictInit {
    Random,
    Centroid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    pub focal: bool,
    pub gumbel: bool,
    pub views: Vec<View>,
}

impl Default for Ablations {
    fn default() -> Self {
        Self {
            focal: true,
            gumbel: true,
            views: View::ALL.to_vec(),
        }
    }
}

/// All hyperparameters, schedules and ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub k: usize,
    /// Hidden width of the shared span-encoding layer; defaults to the
    /// encoder dimension.
    pub d_h: Option<usize>,
    pub lambda_orth: f64,
    pub t: usize,
    pub m_budget: f64,
    pub margin: f64,
    pub batch_size: usize,
    pub lr_encoder: f64,
    pub lr_other: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub max_epochs: usize,
    pub eval_every: usize,
    pub early_stop_patience: usize,
    /// Negatives per span, drawn from same-view spans of other documents in
    /// the mini-batch.
    pub negatives: usize,
    /// Unlabeled batches interleaved after each labeled batch; 0 = labeled
    /// only, 1 = alternating.
    pub unlabeled_per_batch: usize,
    pub gumbel: GumbelSchedule,
    pub ablations: Ablations,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub limits: FilterLimits,
    pub folds: usize,
    pub dict_init: DictInit,
    pub inference_combine: InferenceCombine,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            k: 15,
            d_h: None,
            lambda_orth: 1e-3,
            t: 8,
            m_budget: 8.0,
            margin: 1.0,
            batch_size: 8,
            lr_encoder: 2e-5,
            lr_other: 5e-4,
            weight_decay: 0.01,
            dropout: 0.3,
            max_epochs: 10,
            eval_every: 50,
            early_stop_patience: 20,
            negatives: 4,
            unlabeled_per_batch: 0,
            gumbel: GumbelSchedule::default(),
            ablations: Ablations::default(),
            seed: 0,
            encoder: EncoderConfig::default(),
            limits: FilterLimits::default(),
            folds: 10,
            dict_init: DictInit::Random,
            inference_combine: InferenceCombine::Mean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(FrissError::Config("alpha must be in [0, 1]".into()));
        }
        if self.t < 1 || self.t >= self.k {
            return Err(FrissError::Config(format!(
                "focal pool t={} must satisfy 1 <= t < K={}",
                self.t, self.k
            )));
        }
        if self.ablations.views.is_empty() {
            return Err(FrissError::Config("at least one view must be enabled".into()));
        }
        if self.batch_size < 1 {
            return Err(FrissError::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: TrainConfig = serde_yaml::from_str(&text)
            .map_err(|e| FrissError::Config(format!("failed to parse config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            d_w: self.encoder.dim,
            d_h: self.d_h.unwrap_or(self.encoder.dim),
            k: self.k,
        }
    }

    pub fn unsup_cfg(&self) -> UnsupLossConfig {
        UnsupLossConfig {
            margin: self.margin,
            t: self.t,
            m_budget: self.m_budget,
            lambda_orth: self.lambda_orth,
            use_gumbel: self.ablations.gumbel,
            use_focal: self.ablations.focal,
        }
    }

    pub fn config_hash(&self) -> String {
        use std::hash::{Hash, Hasher};
        let json = serde_json::to_string(self).unwrap_or_default();
        let mut h = std::collections::hash_map::DefaultHasher::new();
        json.hash(&mut h);
        format!("{:016x}", h.finish())
    }
}

/// Named ablation switches from the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationSwitch {
    NoFocal,
    NoGumbel,
    NoFocalNoGumbel,
    PredOnly,
    Arg0Only,
    Arg1Only,
}

impl std::str::FromStr for AblationSwitch {
    type Err = FrissError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "-focal" => Ok(Self::NoFocal),
            "-gumbel" => Ok(Self::NoGumbel),
            "-focal-gumbel" => Ok(Self::NoFocalNoGumbel),
            "p_only" => Ok(Self::PredOnly),
            "arg0_only" => Ok(Self::Arg0Only),
            "arg1_only" => Ok(Self::Arg1Only),
            other => Err(FrissError::InvalidArgument(format!("unknown ablation switch: {other}"))),
        }
    }
}

/// Apply an ablation switch to a config.
pub fn ablate(cfg: &TrainConfig, switch: AblationSwitch) -> TrainConfig {
    let mut out = cfg.clone();
    match switch {
        AblationSwitch::NoFocal => out.ablations.focal = false,
        AblationSwitch::NoGumbel => out.ablations.gumbel = false,
        AblationSwitch::NoFocalNoGumbel => {
            out.ablations.focal = false;
            out.ablations.gumbel = false;
        }
        AblationSwitch::PredOnly => out.ablations.views = vec![View::Pred],
        AblationSwitch::Arg0Only => out.ablations.views = vec![View::Arg0],
        AblationSwitch::Arg1Only => out.ablations.views = vec![View::Arg1],
    }
    out
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Accuracy and macro-F1 from (gold, predicted) pairs. Classes with zero
/// support contribute an F1 of 0 to the macro average.
pub fn classification_metrics(pairs: &[(usize, usize)], k: usize) -> Metrics {
    let mut tp = vec![0usize; k];
    let mut fp = vec![0usize; k];
    let mut fneg = vec![0usize; k];
    let mut correct = 0usize;
    for &(gold, pred) in pairs {
        if gold == pred {
            correct += 1;
            tp[gold] += 1;
        } else {
            fp[pred] += 1;
            fneg[gold] += 1;
        }
    }
    let mut f1_sum = 0.0;
    for c in 0..k {
        let denom = 2 * tp[c] + fp[c] + fneg[c];
        if tp[c] + fneg[c] == 0 {
            log::debug!("class {c} has zero support in evaluation; F1 counted as 0");
        }
        if denom > 0 {
            f1_sum += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    Metrics {
        accuracy: if pairs.is_empty() { 0.0 } else { correct as f64 / pairs.len() as f64 },
        macro_f1: f1_sum / k as f64,
    }
}

// ---------------------------------------------------------------------------
// Adam with decoupled weight decay and linear LR decay
// ---------------------------------------------------------------------------

struct Adam {
    m: HashMap<&'static str, Array2<f64>>,
    v: HashMap<&'static str, Array2<f64>>,
    step: usize,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new() -> Self {
        Self {
            m: HashMap::new(),
            v: HashMap::new(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update. `lr_scale` carries the linear decay factor. All current
    /// parameter tensors are non-encoder parameters (table encoders are
    /// frozen), so they take `lr_other`; the encoder group exists for
    /// encoders that expose trainable tensors.
    fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &[(&'static str, Array2<f64>)],
        cfg: &TrainConfig,
        lr_scale: f64,
    ) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let grad_map: HashMap<&'static str, &Array2<f64>> =
            grads.iter().map(|(n, g)| (*n, g)).collect();
        for (name, tensor) in params.named_arrays_mut() {
            let Some(grad) = grad_map.get(name) else { continue };
            let lr = cfg.lr_other * lr_scale;
            let m = self
                .m
                .entry(name)
                .or_insert_with(|| Array2::zeros(tensor.raw_dim()));
            let v = self
                .v
                .entry(name)
                .or_insert_with(|| Array2::zeros(tensor.raw_dim()));
            *m = &*m * self.beta1 + &(*grad * (1.0 - self.beta1));
            *v = &*v * self.beta2 + &(grad.mapv(|x| x * x) * (1.0 - self.beta2));
            let m_hat = &*m / bc1;
            let v_hat = v.mapv(|x| (x / bc2).sqrt() + self.eps);
            // Decoupled weight decay; no biases or normalization layers exist.
            let update = &m_hat / &v_hat + &tensor.mapv(|x| x * cfg.weight_decay);
            *tensor -= &(update * lr);
        }
    }
}

// ---------------------------------------------------------------------------
// Batch preparation and the forward graph
// ---------------------------------------------------------------------------

/// One span with all stochastic inputs frozen (negatives, Gumbel noise,
/// dropout mask), so the loss is a deterministic function of the parameters.
pub struct PreparedSpan {
    pub view: View,
    pub doc_slot: usize,
    pub v_tilde: Array1<f64>,
    pub v_pos: Array1<f64>,
    pub negatives: Vec<Array1<f64>>,
    pub noise: Option<Array1<f64>>,
    pub dropout_mask: Option<Array2<f64>>,
}

pub struct PreparedDoc {
    pub label: Option<usize>,
    pub sentence_vectors: Vec<Array1<f64>>,
    pub sentence_masks: Option<Vec<Array2<f64>>>,
}

pub struct PreparedBatch {
    pub spans: Vec<PreparedSpan>,
    pub docs: Vec<PreparedDoc>,
    pub contrastive_skipped: usize,
}

fn dropout_mask<R: Rng>(rows: usize, p: f64, rng: &mut R) -> Array2<f64> {
    let keep = 1.0 - p;
    Array2::from_shape_fn((rows, 1), |_| {
        if rng.gen::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}

/// Freeze a mini-batch: sample negatives, Gumbel noise and dropout masks.
/// `train_mode` off disables all stochastic elements.
pub fn prepare_batch<R: Rng>(
    batch: &[&EncodedDocument],
    cfg: &TrainConfig,
    rng: &mut R,
    train_mode: bool,
) -> PreparedBatch {
    let dims = cfg.dims();
    let mut spans = Vec::new();
    let mut skipped = 0usize;
    // Per view, the positions of every span in the batch for negative sampling.
    let mut pool: [Vec<(usize, usize)>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (slot, doc) in batch.iter().enumerate() {
        for (si, span) in doc.spans.iter().enumerate() {
            if cfg.ablations.views.contains(&span.view) {
                pool[span.view.index()].push((slot, si));
            }
        }
    }
    for (slot, doc) in batch.iter().enumerate() {
        for span in &doc.spans {
            if !cfg.ablations.views.contains(&span.view) {
                continue;
            }
            // Candidates: same-view spans of other documents.
            let candidates: Vec<&(usize, usize)> = pool[span.view.index()]
                .iter()
                .filter(|(s, _)| *s != slot)
                .collect();
            let mut negatives = Vec::new();
            if train_mode && cfg.negatives > 0 {
                if candidates.is_empty() {
                    skipped += 1;
                } else {
                    let mut idx: Vec<usize> = (0..candidates.len()).collect();
                    // Partial Fisher-Yates for sampling without replacement.
                    let take = cfg.negatives.min(candidates.len());
                    for i in 0..take {
                        let j = rng.gen_range(i..idx.len());
                        idx.swap(i, j);
                    }
                    for &i in idx.iter().take(take) {
                        let (s, si) = *candidates[i];
                        negatives.push(batch[s].spans[si].v_span.clone());
                    }
                }
            }
            let noise = if train_mode && cfg.ablations.gumbel {
                Some(sample_gumbel_noise(cfg.k, rng))
            } else {
                None
            };
            let mask = if train_mode && cfg.dropout > 0.0 {
                Some(dropout_mask(dims.d_h, cfg.dropout, rng))
            } else {
                None
            };
            spans.push(PreparedSpan {
                view: span.view,
                doc_slot: slot,
                v_tilde: span.v_tilde.clone(),
                v_pos: span.v_span.clone(),
                negatives,
                noise,
                dropout_mask: mask,
            });
        }
    }
    let docs = batch
        .iter()
        .map(|doc| PreparedDoc {
            label: doc.label,
            sentence_vectors: doc.sentence_vectors.clone(),
            sentence_masks: if train_mode && cfg.dropout > 0.0 {
                Some(
                    doc.sentence_vectors
                        .iter()
                        .map(|_| dropout_mask(dims.d_w, cfg.dropout, rng))
                        .collect(),
                )
            } else {
                None
            },
        })
        .collect();
    PreparedBatch {
        spans,
        docs,
        contrastive_skipped: skipped,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BatchLossVars {
    pub total: Var,
    pub supervised: Var,
    pub unsupervised: Var,
    pub per_view: [Var; 3],
}

/// Build the full loss graph for a frozen batch:
/// total = alpha*X + (1-alpha)*J, with X summed over labeled documents and J
/// summed over enabled views.
pub fn batch_loss_graph(
    g: &mut Graph,
    pv: &ParamVars,
    batch: &PreparedBatch,
    cfg: &TrainConfig,
    tau: f64,
) -> Result<BatchLossVars> {
    let ucfg = cfg.unsup_cfg();
    // d per (doc_slot, view) for the classifier path.
    let mut d_by_doc: Vec<[Vec<Var>; 3]> = (0..batch.docs.len())
        .map(|_| [Vec::new(), Vec::new(), Vec::new()])
        .collect();
    let mut per_view_terms: [Vec<Var>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for span in &batch.spans {
        let term = SpanTerm {
            v_tilde: &span.v_tilde,
            v_pos: &span.v_pos,
            negatives: span.negatives.iter().collect(),
            noise: span.noise.clone(),
            dropout_mask: span.dropout_mask.clone(),
        };
        let fwd = span_forward(g, pv, span.view, &term, tau, &ucfg)?;
        per_view_terms[span.view.index()].push(fwd.loss);
        d_by_doc[span.doc_slot][span.view.index()].push(fwd.d);
    }
    let zero = g.leaf_scalar(0.0);
    let mut per_view = [zero; 3];
    let mut j_terms = Vec::new();
    for view in View::ALL {
        if !cfg.ablations.views.contains(&view) {
            continue;
        }
        let mut terms = per_view_terms[view.index()].clone();
        terms.push(crate::autoencoder::gram_penalty_var(g, pv.f[view.index()], cfg.lambda_orth));
        let j_z = g.add_n(&terms);
        per_view[view.index()] = j_z;
        j_terms.push(j_z);
    }
    let unsupervised = g.add_n(&j_terms);

    let mut x_terms = Vec::new();
    for (slot, doc) in batch.docs.iter().enumerate() {
        let Some(label) = doc.label else { continue };
        if d_by_doc[slot].iter().all(Vec::is_empty) {
            return Err(FrissError::InvalidArgument(format!(
                "labeled document in slot {slot} has no spans in any enabled view"
            )));
        }
        let y_hat_u = span_classify_vars(g, &d_by_doc[slot])?;
        let sent_vars: Vec<Var> = doc.sentence_vectors.iter().map(|v| g.leaf_vec(v)).collect();
        let y_hat_s = sentence_classify_vars(g, pv, &sent_vars, doc.sentence_masks.as_deref())?;
        x_terms.push(supervised_loss_var(g, y_hat_u, y_hat_s, label));
    }
    let supervised = if x_terms.is_empty() {
        g.leaf_scalar(0.0)
    } else {
        g.add_n(&x_terms)
    };
    let sup_scaled = g.scale(supervised, cfg.alpha);
    let unsup_scaled = g.scale(unsupervised, 1.0 - cfg.alpha);
    let total = if x_terms.is_empty() {
        // Unlabeled batch: only (1-alpha)*J.
        unsup_scaled
    } else {
        g.add(sup_scaled, unsup_scaled)
    };
    Ok(BatchLossVars {
        total,
        supervised,
        unsupervised,
        per_view,
    })
}

/// Loss value only, for finite-difference checks against the same frozen
/// batch.
pub fn batch_loss_value(
    params: &ModelParams,
    batch: &PreparedBatch,
    cfg: &TrainConfig,
    tau: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let pv = ParamVars::insert(&mut g, params);
    let vars = batch_loss_graph(&mut g, &pv, batch, cfg, tau)?;
    Ok(g.scalar(vars.total))
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalPoint {
    pub iteration: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossPoint {
    pub iteration: usize,
    pub total: f64,
    pub supervised: f64,
    pub unsupervised: f64,
    pub per_view: [f64; 3],
    pub labeled: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub fold: usize,
    pub evals: Vec<EvalPoint>,
    pub losses: Vec<LossPoint>,
    pub best_iteration: usize,
    pub best_accuracy: f64,
    pub best_macro_f1: f64,
    /// Evaluation index at which early stopping fired, if it did.
    pub early_stopped_at_eval: Option<usize>,
    pub contrastive_skipped: usize,
}

impl TrainReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn save_loss_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| FrissError::Config(e.to_string()))?;
        w.write_record(["iteration", "total", "supervised", "unsupervised", "j_pred", "j_arg0", "j_arg1", "labeled"])
            .map_err(|e| FrissError::Config(e.to_string()))?;
        for p in &self.losses {
            w.write_record([
                p.iteration.to_string(),
                p.total.to_string(),
                p.supervised.to_string(),
                p.unsupervised.to_string(),
                p.per_view[0].to_string(),
                p.per_view[1].to_string(),
                p.per_view[2].to_string(),
                p.labeled.to_string(),
            ])
            .map_err(|e| FrissError::Config(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut x = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^ (x >> 31)
}

/// Filter and encode raw documents; unusable documents are dropped and
/// reported via the returned count.
pub fn prepare_documents(
    docs: &[&Document],
    cfg: &TrainConfig,
) -> Result<(Vec<EncodedDocument>, usize)> {
    let encoder = build_encoder(&cfg.encoder)?;
    let mut out = Vec::new();
    let mut dropped = 0usize;
    for doc in docs {
        match filter_document(doc, &cfg.limits) {
            Ok(filtered) => out.push(encode_document(encoder.as_ref(), &filtered)?),
            Err(FrissError::UnusableDocument(id)) => {
                log::warn!("document {id} unusable after filtering; excluded");
                dropped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok((out, dropped))
}

/// Core training entry: optimize on `train_docs` (plus optional unlabeled
/// documents), evaluating on `eval_docs`. Returns the report and the
/// best-accuracy parameters.
pub fn train_on(
    train_docs: &[EncodedDocument],
    unlabeled_docs: &[EncodedDocument],
    eval_docs: &[EncodedDocument],
    cfg: &TrainConfig,
    fold: usize,
) -> Result<(TrainReport, ModelParams)> {
    cfg.validate()?;
    if train_docs.is_empty() {
        return Err(FrissError::InvalidArgument("no training documents".into()));
    }
    let dims = cfg.dims();
    let mut params = ModelParams::init(dims, mix_seed(cfg.seed, 1));
    if cfg.dict_init == DictInit::Centroid {
        for view in View::ALL {
            let embeddings: Vec<Array1<f64>> = train_docs
                .iter()
                .chain(unlabeled_docs.iter())
                .flat_map(|d| d.spans.iter())
                .filter(|s| s.view == view)
                .map(|s| s.v_span.clone())
                .collect();
            params.init_dictionary_from_centroids(view, &embeddings, mix_seed(cfg.seed, 2));
        }
    }

    let use_unlabeled = cfg.unlabeled_per_batch > 0 && !unlabeled_docs.is_empty();
    let labeled_batches_per_epoch = train_docs.len().div_ceil(cfg.batch_size);
    let per_epoch = labeled_batches_per_epoch
        * (1 + if use_unlabeled { cfg.unlabeled_per_batch } else { 0 });
    let total_steps = (cfg.max_epochs * per_epoch).max(1);

    let mut adam = Adam::new();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 3));
    let mut report = TrainReport {
        fold,
        evals: Vec::new(),
        losses: Vec::new(),
        best_iteration: 0,
        best_accuracy: f64::NEG_INFINITY,
        best_macro_f1: 0.0,
        early_stopped_at_eval: None,
        contrastive_skipped: 0,
    };
    let mut best_params = params.clone();
    let mut step = 0usize;
    let mut non_improving = 0usize;
    let mut stopped = false;

    // Unlabeled documents are consumed round-robin from a per-epoch shuffle.
    'epochs: for epoch in 0..cfg.max_epochs {
        let labeled_order = make_batches(train_docs.len(), cfg.batch_size, mix_seed(cfg.seed, 100 + epoch as u64))?;
        let unlabeled_order: Vec<Vec<usize>> = if use_unlabeled {
            make_batches(unlabeled_docs.len(), cfg.batch_size, mix_seed(cfg.seed, 200 + epoch as u64))?
        } else {
            Vec::new()
        };
        let mut unlabeled_cursor = 0usize;
        for batch_ids in &labeled_order {
            let mut queue: Vec<(Vec<&EncodedDocument>, bool)> = Vec::new();
            queue.push((batch_ids.iter().map(|&i| &train_docs[i]).collect(), true));
            if use_unlabeled {
                for _ in 0..cfg.unlabeled_per_batch {
                    if unlabeled_order.is_empty() {
                        break;
                    }
                    let b = &unlabeled_order[unlabeled_cursor % unlabeled_order.len()];
                    unlabeled_cursor += 1;
                    queue.push((b.iter().map(|&i| &unlabeled_docs[i]).collect(), false));
                }
            }
            for (batch, labeled) in queue {
                let tau = cfg.gumbel.tau(step);
                let prepared = prepare_batch(&batch, cfg, &mut rng, true);
                report.contrastive_skipped += prepared.contrastive_skipped;
                let mut g = Graph::new();
                let pv = ParamVars::insert(&mut g, &params);
                let vars = batch_loss_graph(&mut g, &pv, &prepared, cfg, tau)?;
                let total = g.scalar(vars.total);
                if !total.is_finite() {
                    return Err(FrissError::Diverged(format!(
                        "non-finite loss at step {step} (tau={tau:.3}, labeled={labeled})"
                    )));
                }
                report.losses.push(LossPoint {
                    iteration: step,
                    total,
                    supervised: g.scalar(vars.supervised),
                    unsupervised: g.scalar(vars.unsupervised),
                    per_view: [
                        g.scalar(vars.per_view[0]),
                        g.scalar(vars.per_view[1]),
                        g.scalar(vars.per_view[2]),
                    ],
                    labeled,
                });
                g.backward(vars.total);
                let grads: Vec<(&'static str, Array2<f64>)> = pv
                    .all()
                    .into_iter()
                    .map(|(name, var)| (name, g.grad(var).clone()))
                    .collect();
                let lr_scale = 1.0 - step as f64 / total_steps as f64;
                adam.step(&mut params, &grads, cfg, lr_scale.max(0.0));
                step += 1;

                if step % cfg.eval_every == 0 && !eval_docs.is_empty() {
                    let metrics = evaluate(&params, eval_docs, cfg)?;
                    record_eval(&mut report, &params, &mut best_params, &mut non_improving, step, metrics);
                    if non_improving >= cfg.early_stop_patience {
                        report.early_stopped_at_eval = Some(report.evals.len() - 1);
                        stopped = true;
                        break 'epochs;
                    }
                }
            }
        }
        let _ = epoch;
    }

    // Final evaluation if none ever ran (short runs) or training ended
    // between scheduled evaluations.
    if !eval_docs.is_empty() && !stopped && report.evals.last().map(|e| e.iteration) != Some(step) {
        let metrics = evaluate(&params, eval_docs, cfg)?;
        record_eval(&mut report, &params, &mut best_params, &mut non_improving, step, metrics);
    }
    if report.best_accuracy == f64::NEG_INFINITY {
        report.best_accuracy = 0.0;
        best_params = params;
    }
    Ok((report, best_params))
}

fn record_eval(
    report: &mut TrainReport,
    params: &ModelParams,
    best_params: &mut ModelParams,
    non_improving: &mut usize,
    step: usize,
    metrics: Metrics,
) {
    report.evals.push(EvalPoint {
        iteration: step,
        accuracy: metrics.accuracy,
        macro_f1: metrics.macro_f1,
    });
    // Strict improvement keeps the earlier checkpoint on ties.
    if metrics.accuracy > report.best_accuracy {
        report.best_accuracy = metrics.accuracy;
        report.best_macro_f1 = metrics.macro_f1;
        report.best_iteration = step;
        *best_params = params.clone();
        *non_improving = 0;
    } else {
        *non_improving += 1;
    }
}

pub fn evaluate(params: &ModelParams, docs: &[EncodedDocument], cfg: &TrainConfig) -> Result<Metrics> {
    let mut pairs = Vec::new();
    for doc in docs {
        let Some(gold) = doc.label else { continue };
        let pred = predict(params, doc, &cfg.ablations.views, cfg.inference_combine)?;
        pairs.push((gold, pred.combined_argmax));
    }
    Ok(classification_metrics(&pairs, cfg.k))
}

/// Train against one fold of a split: that fold is held out for evaluation,
/// the remaining folds train, and the split's unlabeled set feeds J.
pub fn train_fold(
    docs: &[Document],
    split: &CorpusSplit,
    fold_index: usize,
    cfg: &TrainConfig,
) -> Result<(TrainReport, ModelParams)> {
    if fold_index >= split.folds.len() {
        return Err(FrissError::InvalidArgument(format!(
            "fold index {fold_index} out of range for {} folds",
            split.folds.len()
        )));
    }
    let by_id: HashMap<&str, &Document> = docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let collect = |ids: &[String]| -> Result<Vec<&Document>> {
        ids.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| FrissError::InvalidArgument(format!("split references unknown doc {id}")))
            })
            .collect()
    };
    let mut train_raw = Vec::new();
    for (i, fold) in split.folds.iter().enumerate() {
        if i != fold_index {
            train_raw.extend(collect(fold)?);
        }
    }
    let eval_raw = collect(&split.folds[fold_index])?;
    let unlabeled_raw = collect(&split.unlabeled)?;
    let (train_docs, _) = prepare_documents(&train_raw, cfg)?;
    let (eval_docs, _) = prepare_documents(&eval_raw, cfg)?;
    let (unlabeled_docs, _) = prepare_documents(&unlabeled_raw, cfg)?;
    train_on(&train_docs, &unlabeled_docs, &eval_docs, cfg, fold_index)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub per_fold: Vec<TrainReport>,
    pub mean_accuracy: f64,
    /// Population standard deviation.
    pub std_accuracy: f64,
    pub mean_macro_f1: f64,
    pub std_macro_f1: f64,
}

pub fn aggregate_cv(per_fold: Vec<TrainReport>) -> CvReport {
    let accs: Vec<f64> = per_fold.iter().map(|r| r.best_accuracy).collect();
    let f1s: Vec<f64> = per_fold.iter().map(|r| r.best_macro_f1).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let std = |v: &[f64], m: f64| (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt();
    let ma = mean(&accs);
    let mf = mean(&f1s);
    CvReport {
        std_accuracy: std(&accs, ma),
        std_macro_f1: std(&f1s, mf),
        mean_accuracy: ma,
        mean_macro_f1: mf,
        per_fold,
    }
}

/// Full k-fold cross-validation.
pub fn cross_validate(docs: &[Document], split: &CorpusSplit, cfg: &TrainConfig) -> Result<CvReport> {
    let mut per_fold = Vec::new();
    for fold in 0..split.folds.len() {
        let (report, _) = train_fold(docs, split, fold, cfg)?;
        per_fold.push(report);
    }
    Ok(aggregate_cv(per_fold))
}
