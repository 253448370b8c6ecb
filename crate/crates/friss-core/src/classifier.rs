//! Document-level frame prediction from aggregated span descriptor
//! distributions and aggregated sentence representations, plus the supervised
//! cross-entropy loss.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::autoencoder::{descriptor_distribution, LOG_EPS};
use crate::corpus::View;
use crate::encoding::EncodedDocument;
use crate::error::{FrissError, Result};
use crate::graph::{Graph, Var};
use crate::model::{ModelParams, ParamVars};

/// How the two classifier heads combine at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceCombine {
    Mean,
    SentenceOnly,
    SpanOnly,
}

impl Default for InferenceCombine {
    fn default() -> Self {
        InferenceCombine::Mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePrediction {
    pub y_hat_u: Array1<f64>,
    pub y_hat_s: Array1<f64>,
    pub combined_argmax: usize,
}

/// First index attaining the maximum (deterministic tie-break).
pub fn argmax(v: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Graph builders
// ---------------------------------------------------------------------------

/// Span-based head: w_u = (1/Z) Σ_views (1/|S_z|) Σ_spans d, softmaxed.
/// Z counts only views that have at least one span.
pub fn span_classify_vars(g: &mut Graph, per_view_d: &[Vec<Var>; 3]) -> Result<Var> {
    let mut view_means = Vec::new();
    for d_vars in per_view_d.iter() {
        if !d_vars.is_empty() {
            view_means.push(g.average(d_vars));
        }
    }
    if view_means.is_empty() {
        return Err(FrissError::InvalidArgument(
            "span classifier needs at least one span in one view".into(),
        ));
    }
    let w_u = g.average(&view_means);
    Ok(g.softmax(w_u))
}

/// Sentence-based head: softmax of the sentence-mean of W_t·ReLU(W_r·v_s).
pub fn sentence_classify_vars(
    g: &mut Graph,
    pv: &ParamVars,
    sentence_vectors: &[Var],
    dropout_masks: Option<&[Array2<f64>]>,
) -> Result<Var> {
    if sentence_vectors.is_empty() {
        return Err(FrissError::InvalidArgument("document has no sentences".into()));
    }
    let mut logits = Vec::with_capacity(sentence_vectors.len());
    for (i, &v_s) in sentence_vectors.iter().enumerate() {
        let hidden = g.matvec(pv.w_r, v_s);
        let mut hidden = g.relu(hidden);
        if let Some(masks) = dropout_masks {
            hidden = g.mul_const_array(hidden, &masks[i]);
        }
        logits.push(g.matvec(pv.w_t, hidden));
    }
    let mean = g.average(&logits);
    Ok(g.softmax(mean))
}

/// X = CE(ŷ_u, y) + CE(ŷ_s, y) with CE the negative log of the true-class
/// probability.
pub fn supervised_loss_var(g: &mut Graph, y_hat_u: Var, y_hat_s: Var, y: usize) -> Var {
    let pu = g.select_entry(y_hat_u, y);
    let ps = g.select_entry(y_hat_s, y);
    let lu = g.log_eps(pu, LOG_EPS);
    let ls = g.log_eps(ps, LOG_EPS);
    let total = g.add(lu, ls);
    g.scale(total, -1.0)
}

// ---------------------------------------------------------------------------
// Numeric operations
// ---------------------------------------------------------------------------

fn col_to_vec(g: &Graph, v: Var) -> Array1<f64> {
    Array1::from(g.value(v).iter().cloned().collect::<Vec<_>>())
}

/// Aggregate per-view descriptor distributions into the span-based frame
/// distribution.
pub fn span_classify(activations: &[Vec<Array1<f64>>; 3]) -> Result<Array1<f64>> {
    let mut g = Graph::new();
    let per_view: [Vec<Var>; 3] = [
        activations[0].iter().map(|d| g.leaf_vec(d)).collect(),
        activations[1].iter().map(|d| g.leaf_vec(d)).collect(),
        activations[2].iter().map(|d| g.leaf_vec(d)).collect(),
    ];
    let out = span_classify_vars(&mut g, &per_view)?;
    Ok(col_to_vec(&g, out))
}

pub fn sentence_classify(params: &ModelParams, sentence_vectors: &[Array1<f64>]) -> Result<Array1<f64>> {
    let mut g = Graph::new();
    let pv = ParamVars::insert(&mut g, params);
    let vars: Vec<Var> = sentence_vectors.iter().map(|v| g.leaf_vec(v)).collect();
    let out = sentence_classify_vars(&mut g, &pv, &vars, None)?;
    Ok(col_to_vec(&g, out))
}

pub fn supervised_loss(y_hat_u: &Array1<f64>, y_hat_s: &Array1<f64>, y: usize) -> f64 {
    -((y_hat_u[y] + LOG_EPS).ln()) - (y_hat_s[y] + LOG_EPS).ln()
}

/// Deterministic inference over one encoded document: evaluation mode uses d
/// directly (no Gumbel sampling, no dropout).
pub fn predict(
    params: &ModelParams,
    doc: &EncodedDocument,
    views_enabled: &[View],
    combine: InferenceCombine,
) -> Result<FramePrediction> {
    let mut activations: [Vec<Array1<f64>>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for span in &doc.spans {
        if !views_enabled.contains(&span.view) {
            continue;
        }
        let d = descriptor_distribution(params, &span.v_tilde, span.view)?;
        activations[span.view.index()].push(d);
    }
    if activations.iter().all(Vec::is_empty) {
        return Err(FrissError::UnusableDocument(doc.doc_id.clone()));
    }
    let y_hat_u = span_classify(&activations)?;
    let y_hat_s = sentence_classify(params, &doc.sentence_vectors)?;
    let combined_argmax = match combine {
        InferenceCombine::Mean => {
            let mean = (&y_hat_u + &y_hat_s) / 2.0;
            argmax(&mean)
        }
        InferenceCombine::SentenceOnly => argmax(&y_hat_s),
        InferenceCombine::SpanOnly => argmax(&y_hat_u),
    };
    Ok(FramePrediction {
        y_hat_u,
        y_hat_s,
        combined_argmax,
    })
}
