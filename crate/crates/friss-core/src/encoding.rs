//! Contextual token encoders and span embedding construction.
//!
//! The encoder is pluggable: desk-scale work uses [`ToyEncoder`], a
//! deterministic hash-based embedding table; production runs load a
//! precomputed token-vector table from disk ([`TableEncoder`]). Everything
//! downstream only sees fixed-width vectors.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, RoleSpan, View};
use crate::error::{FrissError, Result};

pub trait Encoder: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    /// One embedding per token, shape |tokens| x dim. Deterministic in
    /// evaluation mode.
    fn encode(&self, tokens: &[String]) -> Array2<f64>;
}

/// Encoder selection, mirrored in the training config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Toy: label only. Pretrained: path to the vector table.
    pub name: String,
    pub dim: usize,
    #[serde(default = "default_vocab_seed")]
    pub vocab_seed: u64,
}

fn default_vocab_seed() -> u64 {
    17
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Toy,
    Pretrained,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Toy,
            name: "toy".into(),
            dim: 32,
            vocab_seed: 17,
        }
    }
}

pub fn build_encoder(cfg: &EncoderConfig) -> Result<Box<dyn Encoder>> {
    match cfg.kind {
        EncoderKind::Toy => Ok(Box::new(toy_encoder(cfg.vocab_seed, cfg.dim)?)),
        EncoderKind::Pretrained => Ok(Box::new(TableEncoder::load(Path::new(&cfg.name))?)),
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic hash-based token embeddings with light positional mixing.
#[derive(Debug, Clone)]
pub struct ToyEncoder {
    seed: u64,
    dim: usize,
}

/// Build a [`ToyEncoder`]. `dim` must be at least 2.
pub fn toy_encoder(vocab_seed: u64, dim: usize) -> Result<ToyEncoder> {
    if dim < 2 {
        return Err(FrissError::InvalidArgument("toy encoder dim must be >= 2".into()));
    }
    Ok(ToyEncoder { seed: vocab_seed, dim })
}

impl ToyEncoder {
    fn hash_vector(&self, stream: u64) -> Array1<f64> {
        let mut out = Array1::zeros(self.dim);
        let mut state = splitmix64(self.seed ^ stream);
        for v in out.iter_mut() {
            state = splitmix64(state);
            // Map to roughly unit-scale values in [-1, 1).
            *v = (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
        }
        out
    }

    fn token_vector(&self, token: &str, position: usize) -> Array1<f64> {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        token.hash(&mut h);
        let base = self.hash_vector(h.finish());
        let pos = self.hash_vector(0x504F_5349_5449_4F4E ^ splitmix64(position as u64 + 1));
        base + pos * 0.05
    }
}

impl Encoder for ToyEncoder {
    fn name(&self) -> &str {
        "toy"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, tokens: &[String]) -> Array2<f64> {
        let mut out = Array2::zeros((tokens.len(), self.dim));
        for (i, tok) in tokens.iter().enumerate() {
            out.row_mut(i).assign(&self.token_vector(tok, i));
        }
        out
    }
}

/// Frozen token-vector table produced by an external pre-training step.
/// File format: JSON `{ "dim": D, "vectors": { token: [f64; D], ... } }`.
/// Out-of-vocabulary tokens fall back to a deterministic hash vector.
pub struct TableEncoder {
    name: String,
    dim: usize,
    table: HashMap<String, Array1<f64>>,
    fallback: ToyEncoder,
}

#[derive(Deserialize)]
struct TableFile {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl TableEncoder {
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let parsed: TableFile = serde_json::from_reader(std::io::BufReader::new(file))?;
        let mut table = HashMap::new();
        for (tok, v) in parsed.vectors {
            if v.len() != parsed.dim {
                return Err(FrissError::Config(format!(
                    "vector for token {tok:?} has length {} but dim is {}",
                    v.len(),
                    parsed.dim
                )));
            }
            table.insert(tok, Array1::from(v));
        }
        Ok(Self {
            name: path.display().to_string(),
            dim: parsed.dim,
            table,
            fallback: toy_encoder(0, parsed.dim)?,
        })
    }
}

impl Encoder for TableEncoder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, tokens: &[String]) -> Array2<f64> {
        let mut out = Array2::zeros((tokens.len(), self.dim));
        for (i, tok) in tokens.iter().enumerate() {
            match self.table.get(tok) {
                Some(v) => out.row_mut(i).assign(v),
                None => out.row_mut(i).assign(&self.fallback.token_vector(tok, i)),
            }
        }
        out
    }
}

/// Raw and derived representations of one role assignment.
#[derive(Debug, Clone)]
pub struct SpanEncoding {
    pub view: View,
    /// Mean of the token vectors in the span.
    pub v_span: Array1<f64>,
    /// Mean of all token vectors in the sentence.
    pub v_sentence: Array1<f64>,
    /// [v_span ; v_sentence].
    pub v_tilde: Array1<f64>,
    pub source: SpanSource,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanSource {
    pub doc_id: String,
    pub sentence_index: usize,
    pub predicate_group: usize,
    pub span: RoleSpan,
}

/// Encode a sentence: token matrix plus its column-wise mean.
pub fn embed_sentence(encoder: &dyn Encoder, tokens: &[String]) -> Result<(Array2<f64>, Array1<f64>)> {
    if tokens.is_empty() {
        return Err(FrissError::InvalidArgument("cannot embed an empty sentence".into()));
    }
    let matrix = encoder.encode(tokens);
    let v_sentence = matrix.mean_axis(Axis(0)).expect("non-empty");
    Ok((matrix, v_sentence))
}

/// Build the span representation for one role assignment.
pub fn embed_span(
    token_matrix: &Array2<f64>,
    span: &RoleSpan,
    v_sentence: &Array1<f64>,
    doc_id: &str,
) -> Result<SpanEncoding> {
    if span.token_end <= span.token_start {
        return Err(FrissError::InvalidArgument(format!(
            "degenerate span [{}, {})",
            span.token_start, span.token_end
        )));
    }
    if span.token_end > token_matrix.nrows() {
        return Err(FrissError::DimensionMismatch(format!(
            "span [{}, {}) exceeds token matrix with {} rows",
            span.token_start,
            span.token_end,
            token_matrix.nrows()
        )));
    }
    let rows = token_matrix.slice(ndarray::s![span.token_start..span.token_end, ..]);
    let v_span = rows.mean_axis(Axis(0)).expect("non-empty");
    let mut v_tilde = Array1::zeros(v_span.len() + v_sentence.len());
    v_tilde.slice_mut(ndarray::s![..v_span.len()]).assign(&v_span);
    v_tilde.slice_mut(ndarray::s![v_span.len()..]).assign(v_sentence);
    Ok(SpanEncoding {
        view: span.view,
        v_span,
        v_sentence: v_sentence.clone(),
        v_tilde,
        source: SpanSource {
            doc_id: doc_id.to_string(),
            sentence_index: span.sentence_index,
            predicate_group: span.predicate_group,
            span: *span,
        },
    })
}

/// All representations a (filtered) document feeds into the model: one
/// sentence vector per sentence and one [`SpanEncoding`] per role assignment.
#[derive(Debug, Clone)]
pub struct EncodedDocument {
    pub doc_id: String,
    pub label: Option<usize>,
    pub sentence_vectors: Vec<Array1<f64>>,
    pub spans: Vec<SpanEncoding>,
}

pub fn encode_document(encoder: &dyn Encoder, doc: &Document) -> Result<EncodedDocument> {
    let mut sentence_vectors = Vec::with_capacity(doc.sentences.len());
    let mut matrices = Vec::with_capacity(doc.sentences.len());
    for tokens in &doc.sentences {
        let (m, v) = embed_sentence(encoder, tokens)?;
        matrices.push(m);
        sentence_vectors.push(v);
    }
    let mut spans = Vec::with_capacity(doc.spans.len());
    for span in &doc.spans {
        spans.push(embed_span(
            &matrices[span.sentence_index],
            span,
            &sentence_vectors[span.sentence_index],
            &doc.doc_id,
        )?);
    }
    Ok(EncodedDocument {
        doc_id: doc.doc_id.clone(),
        label: doc.label,
        sentence_vectors,
        spans,
    })
}
