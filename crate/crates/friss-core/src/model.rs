//! Model parameters, initialization and the checkpoint container.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::View;
use crate::error::{FrissError, Result};
use crate::graph::{Graph, Var};

/// All trainable tensors. Layout convention is `(out, in)` so each layer is a
/// plain matrix-vector product; no biases anywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Shared encoding layer, (D_h, 2*D_w).
    pub w_h: Array2<f64>,
    /// Per-view projection onto descriptor logits, (K, D_h).
    pub w_view: [Array2<f64>; 3],
    /// Per-view dictionary, (K, D_w). Rows are descriptors.
    pub f: [Array2<f64>; 3],
    /// Sentence classifier hidden layer, (D_w, D_w).
    pub w_r: Array2<f64>,
    /// Sentence classifier output layer, (K, D_w).
    pub w_t: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d_w: usize,
    pub d_h: usize,
    pub k: usize,
}

fn uniform_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    // Scaled uniform, scale 1/sqrt(fan_in).
    let scale = 1.0 / (cols as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale))
}

impl ModelParams {
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ModelDims { d_w, d_h, k } = dims;
        Self {
            w_h: uniform_init(&mut rng, d_h, 2 * d_w),
            w_view: [
                uniform_init(&mut rng, k, d_h),
                uniform_init(&mut rng, k, d_h),
                uniform_init(&mut rng, k, d_h),
            ],
            f: [
                uniform_init(&mut rng, k, d_w),
                uniform_init(&mut rng, k, d_w),
                uniform_init(&mut rng, k, d_w),
            ],
            w_r: uniform_init(&mut rng, d_w, d_w),
            w_t: uniform_init(&mut rng, k, d_w),
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            d_w: self.f[0].ncols(),
            d_h: self.w_h.nrows(),
            k: self.f[0].nrows(),
        }
    }

    /// Replace a view dictionary with centroids of span embeddings: spans are
    /// shuffled, split into K chunks, and each row becomes a chunk mean.
    pub fn init_dictionary_from_centroids(
        &mut self,
        view: View,
        span_embeddings: &[Array1<f64>],
        seed: u64,
    ) {
        let k = self.f[view.index()].nrows();
        let d_w = self.f[view.index()].ncols();
        if span_embeddings.is_empty() {
            return;
        }
        let mut order: Vec<usize> = (0..span_embeddings.len()).collect();
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ view.index() as u64);
        order.shuffle(&mut rng);
        for row in 0..k {
            let chunk: Vec<usize> = order.iter().skip(row).step_by(k).cloned().collect();
            if chunk.is_empty() {
                continue;
            }
            let mut mean = Array1::<f64>::zeros(d_w);
            for &i in &chunk {
                mean += &span_embeddings[i];
            }
            mean /= chunk.len() as f64;
            self.f[view.index()].row_mut(row).assign(&mean);
        }
    }

    pub fn named_arrays(&self) -> Vec<(&'static str, &Array2<f64>)> {
        vec![
            ("W_h", &self.w_h),
            ("W_pred", &self.w_view[0]),
            ("W_arg0", &self.w_view[1]),
            ("W_arg1", &self.w_view[2]),
            ("F_pred", &self.f[0]),
            ("F_arg0", &self.f[1]),
            ("F_arg1", &self.f[2]),
            ("W_r", &self.w_r),
            ("W_t", &self.w_t),
        ]
    }

    pub fn named_arrays_mut(&mut self) -> Vec<(&'static str, &mut Array2<f64>)> {
        let ModelParams {
            w_h,
            w_view: [wp, wa0, wa1],
            f: [fp, fa0, fa1],
            w_r,
            w_t,
        } = self;
        vec![
            ("W_h", w_h),
            ("W_pred", wp),
            ("W_arg0", wa0),
            ("W_arg1", wa1),
            ("F_pred", fp),
            ("F_arg0", fa0),
            ("F_arg1", fa1),
            ("W_r", w_r),
            ("W_t", w_t),
        ]
    }
}

/// Graph handles for all parameter tensors of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ParamVars {
    pub w_h: Var,
    pub w_view: [Var; 3],
    pub f: [Var; 3],
    pub w_r: Var,
    pub w_t: Var,
}

impl ParamVars {
    pub fn insert(g: &mut Graph, p: &ModelParams) -> Self {
        Self {
            w_h: g.leaf(p.w_h.clone()),
            w_view: [
                g.leaf(p.w_view[0].clone()),
                g.leaf(p.w_view[1].clone()),
                g.leaf(p.w_view[2].clone()),
            ],
            f: [g.leaf(p.f[0].clone()), g.leaf(p.f[1].clone()), g.leaf(p.f[2].clone())],
            w_r: g.leaf(p.w_r.clone()),
            w_t: g.leaf(p.w_t.clone()),
        }
    }

    pub fn all(&self) -> Vec<(&'static str, Var)> {
        vec![
            ("W_h", self.w_h),
            ("W_pred", self.w_view[0]),
            ("W_arg0", self.w_view[1]),
            ("W_arg1", self.w_view[2]),
            ("F_pred", self.f[0]),
            ("F_arg0", self.f[1]),
            ("F_arg1", self.f[2]),
            ("W_r", self.w_r),
            ("W_t", self.w_t),
        ]
    }
}

// ---------------------------------------------------------------------------
// Checkpoint container: JSON manifest + raw little-endian f64 blocks in one
// file. Array payloads are addressed by (offset, len) from the manifest.
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 8] = b"FRISSCK1";

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    arrays: Vec<ArrayEntry>,
    config_hash: String,
    /// Free-form metadata (label registry, encoder config, train config).
    meta: serde_json::Value,
}

pub struct Checkpoint {
    pub params: ModelParams,
    pub config_hash: String,
    pub meta: serde_json::Value,
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    config_hash: &str,
    meta: serde_json::Value,
) -> Result<()> {
    let mut arrays = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    for (name, arr) in params.named_arrays() {
        let offset = data.len();
        for v in arr.iter() {
            data.extend_from_slice(&v.to_le_bytes());
        }
        arrays.push(ArrayEntry {
            name: name.to_string(),
            rows: arr.nrows(),
            cols: arr.ncols(),
            offset,
            len: arr.len() * 8,
        });
    }
    let manifest = Manifest {
        arrays,
        config_hash: config_hash.to_string(),
        meta,
    };
    let manifest_bytes = serde_json::to_vec(&manifest)?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(CKPT_MAGIC)?;
    file.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
    file.write_all(&manifest_bytes)?;
    file.write_all(&data)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(FrissError::Checkpoint("bad magic".into()));
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)?;
    let manifest_len = u64::from_le_bytes(len_bytes) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    file.read_exact(&mut manifest_bytes)?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)?;
    let mut data = Vec::new();
    file.read_to_end(&mut data)?;

    let read_array = |name: &str| -> Result<Array2<f64>> {
        let entry = manifest
            .arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| FrissError::Checkpoint(format!("missing array {name}")))?;
        if entry.offset + entry.len > data.len() || entry.len != entry.rows * entry.cols * 8 {
            return Err(FrissError::Checkpoint(format!("corrupt array {name}")));
        }
        let vals: Vec<f64> = data[entry.offset..entry.offset + entry.len]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Array2::from_shape_vec((entry.rows, entry.cols), vals)
            .map_err(|e| FrissError::Checkpoint(e.to_string()))
    };

    let mut params = ModelParams {
        w_h: read_array("W_h")?,
        w_view: [read_array("W_pred")?, read_array("W_arg0")?, read_array("W_arg1")?],
        f: [read_array("F_pred")?, read_array("F_arg0")?, read_array("F_arg1")?],
        w_r: read_array("W_r")?,
        w_t: read_array("W_t")?,
    };
    // Touch the mut accessor so shape sanity stays in one place.
    for (name, arr) in params.named_arrays_mut() {
        if arr.is_empty() {
            return Err(FrissError::Checkpoint(format!("empty array {name}")));
        }
    }
    Ok(Checkpoint {
        params,
        config_hash: manifest.config_hash,
        meta: manifest.meta,
    })
}
