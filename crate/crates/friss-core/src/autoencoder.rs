//! Multi-view dictionary-learning autoencoder: span encoding to descriptor
//! distributions, Gumbel-softmax reconstruction, and the contrastive, focal
//! triplet and orthogonality loss terms.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::View;
use crate::error::{FrissError, Result};
use crate::graph::{Graph, Var};
use crate::model::{ModelParams, ParamVars};

/// Epsilon added inside log() when building Gumbel logits; softmax outputs
/// can underflow to exact zero.
pub const LOG_EPS: f64 = 1e-12;

/// Temperature annealing for the Gumbel-softmax sampler.
/// tau(iter) = max(floor, exp(-decay * bucket * update_every)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GumbelSchedule {
    pub tau_floor: f64,
    pub decay: f64,
    pub update_every: usize,
}

impl Default for GumbelSchedule {
    fn default() -> Self {
        Self {
            tau_floor: 0.5,
            decay: 5e-4,
            update_every: 50,
        }
    }
}

impl GumbelSchedule {
    pub fn tau(&self, iteration: usize) -> f64 {
        let bucket = iteration / self.update_every;
        let effective = (bucket * self.update_every) as f64;
        (-self.decay * effective).exp().max(self.tau_floor)
    }
}

/// Knobs for the unsupervised loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnsupLossConfig {
    pub margin: f64,
    /// Focal pool size: number of least-activated descriptors.
    pub t: usize,
    /// Total margin budget |M|.
    pub m_budget: f64,
    pub lambda_orth: f64,
    pub use_gumbel: bool,
    pub use_focal: bool,
}

impl Default for UnsupLossConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            t: 8,
            m_budget: 8.0,
            lambda_orth: 1e-3,
            use_gumbel: true,
            use_focal: true,
        }
    }
}

// ---------------------------------------------------------------------------
// Graph builders (used by training and, through the wrappers below, tests)
// ---------------------------------------------------------------------------

/// Encode one span input into descriptor logits and distribution:
/// l = W_view · ReLU(W_h · v_tilde), d = softmax(l). `dropout_mask`, when
/// given, is applied to the hidden layer (training mode only).
pub fn encode_span_vars(
    g: &mut Graph,
    pv: &ParamVars,
    v_tilde: Var,
    view: View,
    dropout_mask: Option<&Array2<f64>>,
) -> (Var, Var) {
    let hidden = g.matvec(pv.w_h, v_tilde);
    let mut hidden = g.relu(hidden);
    if let Some(mask) = dropout_mask {
        hidden = g.mul_const_array(hidden, mask);
    }
    let l = g.matvec(pv.w_view[view.index()], hidden);
    let d = g.softmax(l);
    (l, d)
}

/// Differentiable Gumbel-softmax transform with externally supplied noise:
/// g = softmax((log(d + eps) + noise) / tau). At tau = 1 with zero noise this
/// is the identity on d; annealing tau sharpens samples toward one-hot while
/// keeping argmax(g) distributed as Categorical(d) (Gumbel-max property).
pub fn gumbel_transform_var(g: &mut Graph, d: Var, tau: f64, noise: &Array1<f64>) -> Var {
    let logits = g.log_eps(d, LOG_EPS);
    let noise_col: Array2<f64> =
        Array2::from_shape_vec((noise.len(), 1), noise.to_vec()).expect("shape");
    let shifted = g.add_const_array(logits, &noise_col);
    let scaled = g.scale(shifted, 1.0 / tau);
    g.softmax(scaled)
}

/// v_hat = Fᵀ g.
pub fn reconstruct_var(g: &mut Graph, f: Var, weights: Var) -> Var {
    g.tmatvec(f, weights)
}

/// Mean hinge over negatives: (1/|N|) Σ max(0, margin + d(v̂,v⁺) − d(v̂,vⁿ)).
pub fn contrastive_loss_var(
    g: &mut Graph,
    v_hat: Var,
    v_pos: Var,
    negatives: &[Var],
    margin: f64,
) -> Var {
    let dist_pos = g.l2_dist(v_hat, v_pos);
    let mut terms = Vec::with_capacity(negatives.len());
    for &neg in negatives {
        let dist_neg = g.l2_dist(v_hat, neg);
        let diff = g.sub(dist_pos, dist_neg);
        let shifted = g.add_scalar(diff, margin);
        terms.push(g.relu(shifted));
    }
    g.average(&terms)
}

/// Indices of the `t` smallest entries, ties broken by ascending index.
pub fn smallest_t_indices(values: &[f64], t: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)));
    idx.truncate(t);
    idx
}

/// Focal triplet loss: the t least-activated descriptors are pushed away from
/// the reconstruction with per-descriptor margins m_i = M·(1 − gᵗ_i)², where
/// gᵗ is the selected weights renormalized to sum 1.
pub fn focal_triplet_loss_var(
    g: &mut Graph,
    f: Var,
    weights: Var,
    v_hat: Var,
    v_pos: Var,
    t: usize,
    m_budget: f64,
) -> Result<Var> {
    let k = g.value(weights).nrows();
    if t < 1 || t >= k {
        return Err(FrissError::InvalidArgument(format!(
            "focal pool size t={t} must satisfy 1 <= t < K={k}"
        )));
    }
    let w_vals: Vec<f64> = g.value(weights).iter().cloned().collect();
    let selected = smallest_t_indices(&w_vals, t);

    let gathered = g.gather_rows(weights, selected.clone());
    let total = g.sum(gathered);
    let renorm = g.div_by_scalar_var(gathered, total);
    let one_minus = g.sub_from_scalar(1.0, renorm);
    let sq = g.ew_mul(one_minus, one_minus);
    let margins = g.scale(sq, m_budget);

    let dist_pos = g.l2_dist(v_hat, v_pos);
    let mut terms = Vec::with_capacity(t);
    for (slot, &row) in selected.iter().enumerate() {
        let descriptor_row = g.gather_rows(f, vec![row]);
        let descriptor = g.transpose(descriptor_row);
        let dist_desc = g.l2_dist(v_hat, descriptor);
        let m_i = g.select_entry(margins, slot);
        let diff = g.sub(dist_pos, dist_desc);
        let shifted = g.add(m_i, diff);
        terms.push(g.relu(shifted));
    }
    Ok(g.average(&terms))
}

/// λ‖F Fᵀ − I‖²_F.
pub fn gram_penalty_var(g: &mut Graph, f: Var, lambda: f64) -> Var {
    let k = g.value(f).nrows();
    let gram = g.matmul_nt(f, f);
    let eye = g.leaf(Array2::eye(k));
    let dev = g.sub(gram, eye);
    let sq = g.ew_mul(dev, dev);
    let total = g.sum(sq);
    g.scale(total, lambda)
}

/// One span's inputs to the unsupervised loss, already embedded.
pub struct SpanTerm<'a> {
    pub v_tilde: &'a Array1<f64>,
    pub v_pos: &'a Array1<f64>,
    pub negatives: Vec<&'a Array1<f64>>,
    /// Gumbel(0,1) noise, one draw per span; ignored when `use_gumbel` is off.
    pub noise: Option<Array1<f64>>,
    pub dropout_mask: Option<Array2<f64>>,
}

pub struct SpanForward {
    pub d: Var,
    /// Contrastive + focal contribution of this span (no regularizer).
    pub loss: Var,
    /// True when the span had no in-batch negatives and the contrastive term
    /// was skipped.
    pub contrastive_skipped: bool,
}

/// Forward pass of one span through the autoencoder, returning its descriptor
/// distribution and loss contribution.
pub fn span_forward(
    g: &mut Graph,
    pv: &ParamVars,
    view: View,
    term: &SpanTerm<'_>,
    tau: f64,
    cfg: &UnsupLossConfig,
) -> Result<SpanForward> {
    let v_tilde = g.leaf_vec(term.v_tilde);
    let v_pos = g.leaf_vec(term.v_pos);
    let (_l, d) = encode_span_vars(g, pv, v_tilde, view, term.dropout_mask.as_ref());
    let weights = match (&term.noise, cfg.use_gumbel) {
        (Some(noise), true) => gumbel_transform_var(g, d, tau, noise),
        _ => d,
    };
    let v_hat = reconstruct_var(g, pv.f[view.index()], weights);

    let mut parts: Vec<Var> = Vec::new();
    let contrastive_skipped = term.negatives.is_empty();
    if !contrastive_skipped {
        let negs: Vec<Var> = term.negatives.iter().map(|n| g.leaf_vec(n)).collect();
        parts.push(contrastive_loss_var(g, v_hat, v_pos, &negs, cfg.margin));
    }
    if cfg.use_focal {
        parts.push(focal_triplet_loss_var(
            g,
            pv.f[view.index()],
            weights,
            v_hat,
            v_pos,
            cfg.t,
            cfg.m_budget,
        )?);
    }
    let loss = if parts.is_empty() {
        g.leaf_scalar(0.0)
    } else {
        g.add_n(&parts)
    };
    Ok(SpanForward {
        d,
        loss,
        contrastive_skipped,
    })
}

/// J_z for one view: Σ_spans (Jᵘ + Jᵗ) + λ‖F Fᵀ − I‖²_F. A view with no spans
/// contributes only its regularizer. Returns the per-span descriptor
/// distributions alongside the loss for the classifier path.
pub fn view_loss_vars(
    g: &mut Graph,
    pv: &ParamVars,
    view: View,
    spans: &[SpanTerm<'_>],
    tau: f64,
    cfg: &UnsupLossConfig,
) -> Result<(Var, Vec<SpanForward>)> {
    let mut forwards = Vec::with_capacity(spans.len());
    let mut terms = Vec::with_capacity(spans.len() + 1);
    for term in spans {
        let fwd = span_forward(g, pv, view, term, tau, cfg)?;
        terms.push(fwd.loss);
        forwards.push(fwd);
    }
    terms.push(gram_penalty_var(g, pv.f[view.index()], cfg.lambda_orth));
    Ok((g.add_n(&terms), forwards))
}

// ---------------------------------------------------------------------------
// Numeric wrappers (spec-level operations; build an ephemeral graph)
// ---------------------------------------------------------------------------

/// l = W_view · ReLU(W_h · v_tilde), d = softmax(l).
pub fn encode_span(
    params: &ModelParams,
    v_tilde: &Array1<f64>,
    view: View,
) -> Result<(Array1<f64>, Array1<f64>)> {
    if v_tilde.len() != params.w_h.ncols() {
        return Err(FrissError::DimensionMismatch(format!(
            "v_tilde has length {} but W_h expects {}",
            v_tilde.len(),
            params.w_h.ncols()
        )));
    }
    let mut g = Graph::new();
    let pv = ParamVars::insert(&mut g, params);
    let vt = g.leaf_vec(v_tilde);
    let (l, d) = encode_span_vars(&mut g, &pv, vt, view, None);
    let to_vec = |v: Var, g: &Graph| Array1::from(g.value(v).iter().cloned().collect::<Vec<_>>());
    Ok((to_vec(l, &g), to_vec(d, &g)))
}

/// Draw Gumbel(0,1) noise of length `k` from a seeded RNG.
pub fn sample_gumbel_noise<R: Rng>(k: usize, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_fn(k, |_| {
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        -(-u.ln()).ln()
    })
}

/// Deterministic Gumbel-softmax transform given noise.
pub fn gumbel_transform(d: &Array1<f64>, tau: f64, noise: &Array1<f64>) -> Result<Array1<f64>> {
    if tau <= 0.0 {
        return Err(FrissError::InvalidArgument("tau must be > 0".into()));
    }
    let mut g = Graph::new();
    let dv = g.leaf_vec(d);
    let out = gumbel_transform_var(&mut g, dv, tau, noise);
    Ok(Array1::from(g.value(out).iter().cloned().collect::<Vec<_>>()))
}

/// Sample g from the Gumbel-softmax around `d` at temperature `tau`.
pub fn gumbel_sample<R: Rng>(d: &Array1<f64>, tau: f64, rng: &mut R) -> Result<Array1<f64>> {
    let noise = sample_gumbel_noise(d.len(), rng);
    gumbel_transform(d, tau, &noise)
}

/// v_hat = Fᵀ g.
pub fn reconstruct(f: &Array2<f64>, weights: &Array1<f64>) -> Result<Array1<f64>> {
    if f.nrows() != weights.len() {
        return Err(FrissError::DimensionMismatch(format!(
            "dictionary has {} rows but weights length is {}",
            f.nrows(),
            weights.len()
        )));
    }
    Ok(f.t().dot(weights))
}

pub fn contrastive_loss(
    v_hat: &Array1<f64>,
    v_pos: &Array1<f64>,
    negatives: &[Array1<f64>],
    margin: f64,
) -> Result<f64> {
    if negatives.is_empty() {
        return Err(FrissError::InvalidArgument("contrastive loss needs >= 1 negative".into()));
    }
    let mut g = Graph::new();
    let vh = g.leaf_vec(v_hat);
    let vp = g.leaf_vec(v_pos);
    let negs: Vec<Var> = negatives.iter().map(|n| g.leaf_vec(n)).collect();
    let loss = contrastive_loss_var(&mut g, vh, vp, &negs, margin);
    Ok(g.scalar(loss))
}

pub fn focal_triplet_loss(
    f: &Array2<f64>,
    weights: &Array1<f64>,
    v_hat: &Array1<f64>,
    v_pos: &Array1<f64>,
    t: usize,
    m_budget: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let fv = g.leaf(f.clone());
    let wv = g.leaf_vec(weights);
    let vh = g.leaf_vec(v_hat);
    let vp = g.leaf_vec(v_pos);
    let loss = focal_triplet_loss_var(&mut g, fv, wv, vh, vp, t, m_budget)?;
    Ok(g.scalar(loss))
}

/// Numeric J_z over prepared span terms (one view).
pub fn view_loss(
    params: &ModelParams,
    view: View,
    spans: &[SpanTerm<'_>],
    tau: f64,
    cfg: &UnsupLossConfig,
) -> Result<f64> {
    let mut g = Graph::new();
    let pv = ParamVars::insert(&mut g, params);
    let (loss, _) = view_loss_vars(&mut g, &pv, view, spans, tau, cfg)?;
    Ok(g.scalar(loss))
}

/// Descriptor distribution of one span in evaluation mode (no dropout, no
/// sampling).
pub fn descriptor_distribution(
    params: &ModelParams,
    v_tilde: &Array1<f64>,
    view: View,
) -> Result<Array1<f64>> {
    encode_span(params, v_tilde, view).map(|(_, d)| d)
}
