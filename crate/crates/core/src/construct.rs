//! Explicit weights for the in-context regression Transformer.
//!
//! Residual-stream layout (0-based columns, `w = p + 3`):
//!
//! ```text
//! [0, w)                     original token + position block
//! [r w, (r+1) w)             Z_r, r = 1..=R       (history copies)
//! [(R+1+i) w, (R+2+i) w)     F_{i+1}, i = 0..m    (future copies)
//! [(L+1) w, (L+1) w + p^m)   Vec block            (m > 1 only)
//! then                       W, P_out rows of p R columns
//! D-2, D-1                   ones, test indicator
//! ```
//!
//! `R = L - m` and `P_out = p^m`. The regression input of a row is its
//! stacked history `z' = [Z_1 tokens; ...; Z_R tokens]` (most recent first,
//! delimiter column excluded); the target is the row's own token (or its
//! Vec code). Demonstration endpoints are the non-test rows whose `F_m`
//! block is the delimiter.

use std::ops::Range;

use nalgebra::{DMatrix, Matrix2};
use serde::{Deserialize, Serialize};

use crate::context::{ContextLayout, ReadoutMode};
use crate::error::{Error, Result};
use crate::kernel::{Activation, HeadWeights, Layer, RowEncoder, TransformerStack};

/// Copy-layer inverse temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Beta1 {
    /// The exact infinite-temperature limit.
    Hard,
    Finite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstructionConfig {
    pub layout: ContextLayout,
    pub beta1: Beta1,
    pub beta2: f64,
    /// Number of gradient-descent layers.
    pub steps: usize,
    pub lr: f64,
}

impl ConstructionConfig {
    /// Hardmax copies, `beta2 = 2000 n k` and the default learning rate.
    pub fn new(layout: ContextLayout, steps: usize) -> Result<Self> {
        let cfg = ConstructionConfig {
            layout,
            beta1: Beta1::Hard,
            beta2: 2000.0 * layout.n as f64 * layout.k as f64,
            steps,
            lr: default_lr(&layout),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let ly = &self.layout;
        if !(self.beta2 > 1000.0 * ly.n as f64 * ly.k as f64) {
            return Err(Error::InvalidConfig(format!("beta2 = {} must exceed 1000 n k", self.beta2)));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("need at least one gradient step layer".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if let Beta1::Finite(b) = self.beta1 {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::InvalidConfig(format!("beta1 = {b} must be positive")));
            }
        }
        Ok(())
    }

    pub fn mode(&self) -> ReadoutMode {
        self.layout.readout_mode()
    }
}

/// `1 / (2 n R)`: each regression input has squared norm `R`, so the Gram
/// spectrum is at most `n R` and gradient descent with the factor-2 loss
/// gradient is stable.
pub fn default_lr(layout: &ContextLayout) -> f64 {
    1.0 / (2.0 * layout.n as f64 * layout.window_len() as f64)
}

/// Column ranges of every block in the residual stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub original: Range<usize>,
    pub z_blocks: Vec<Range<usize>>,
    pub f_blocks: Vec<Range<usize>>,
    pub vec_block: Option<Range<usize>>,
    /// First column of the W block.
    pub w_start: usize,
    /// Rows of W, `p^m`.
    pub w_rows: usize,
    /// Columns of W, `p R`.
    pub w_cols: usize,
    /// Where the prediction is written on the last row.
    pub output: Range<usize>,
    pub ones: usize,
    pub test: usize,
}

impl FeatureMap {
    pub fn new(layout: &ContextLayout) -> Result<Self> {
        let ly = layout;
        let w = ly.block_width();
        let r = ly.window_len();
        let block = |i: usize| i * w..(i + 1) * w;
        let z_blocks: Vec<_> = (1..=r).map(block).collect();
        let f_blocks: Vec<_> = (r + 1..=r + ly.m).map(block).collect();
        let mut next = (ly.l + 1) * w;
        let vec_block = (ly.m > 1).then(|| {
            let b = next..next + ly.out_dim();
            next = b.end;
            b
        });
        let w_rows = ly.out_dim();
        let w_cols = ly.p * r;
        let w_start = next;
        let end = w_start + w_rows * w_cols;
        if end > ly.d - 2 {
            return Err(Error::Capacity { needed: end + 2, available: ly.d });
        }
        let output = match &vec_block {
            Some(b) => b.clone(),
            None => 0..ly.p,
        };
        Ok(FeatureMap {
            original: block(0),
            z_blocks,
            f_blocks,
            vec_block,
            w_start,
            w_rows,
            w_cols,
            output,
            ones: ly.ones_col(),
            test: ly.test_col(),
        })
    }

    /// Column of `W[j, c]`.
    pub fn w_col(&self, j: usize, c: usize) -> usize {
        self.w_start + j * self.w_cols + c
    }

    /// Column holding coordinate `c` of the regression input `z'`.
    pub fn z_col(&self, c: usize, p: usize) -> usize {
        self.z_blocks[c / p].start + c % p
    }

    /// Column holding target coordinate `j`.
    pub fn target_col(&self, j: usize) -> usize {
        match &self.vec_block {
            Some(b) => b.start + j,
            None => j,
        }
    }

    /// The W block as stored on row `row` of a hidden state.
    pub fn read_w(&self, h: &DMatrix<f64>, row: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.w_rows, self.w_cols, |j, c| h[(row, self.w_col(j, c))])
    }

    /// The gate block whose delimiter marks a demonstration endpoint.
    pub fn gate_block(&self) -> &Range<usize> {
        self.f_blocks.last().expect("at least one future block")
    }
}

/// `A` and `B` scaled by `beta1`: `s_a^T A s_b = beta1 cos((a - b - 1) theta)`
/// and `s_a^T B s_b = beta1 cos((a - b + 1) theta)`.
pub fn rotation_matrices(layout: &ContextLayout, beta1: f64) -> (Matrix2<f64>, Matrix2<f64>) {
    let (s, c) = layout.theta().sin_cos();
    let a = Matrix2::new(c, s, -s, c) * beta1;
    let b = Matrix2::new(c, -s, s, c) * beta1;
    (a, b)
}

fn ceil_log2(x: usize) -> usize {
    (usize::BITS - (x.max(1) - 1).leading_zeros()) as usize
}

/// Number of copy layers needed to fill `blocks` shifted copies.
pub fn copy_layer_count(blocks: usize) -> usize {
    ceil_log2(blocks) + 1
}

/// A hard or soft copy head: the query reads the position stored at column
/// `query_pos`, the key reads the original position, and the value moves
/// `len` columns from `src` to `dst`.
fn copy_head(ly: &ContextLayout, rot: &Matrix2<f64>, activation: Activation, query_pos: usize, src: usize, dst: usize, len: usize) -> HeadWeights {
    let mut h = HeadWeights::new(ly.d, 2, activation);
    for i in 0..2 {
        for j in 0..2 {
            h.query.set(query_pos + i, j, rot[(i, j)]);
        }
        h.key.set(ly.p + 1 + i, i, 1.0);
    }
    for c in 0..len {
        h.value.set(src + c, dst + c, 1.0);
    }
    h
}

/// Doubling schedule filling `blocks` (history when `rot` is A, future when
/// it is B). Layer 1 copies the original block into `blocks[0]`; layer
/// `j >= 2` uses offset `delta = 2^(j-2)`: its query carries the position of
/// `blocks[delta-2]` (the original block when `delta = 1`), so it attends the
/// row `delta` steps away and copies that row's `blocks[0..delta]` into
/// `blocks[delta..2 delta]`.
fn doubling_layers(ly: &ContextLayout, rot: &Matrix2<f64>, activation: Activation, blocks: &[Range<usize>], name: &str) -> Vec<Layer> {
    let w = ly.block_width();
    let mut layers = vec![Layer::Attention {
        label: format!("{name}-copy-1"),
        heads: vec![copy_head(ly, rot, activation, ly.p + 1, 0, blocks[0].start, w)],
    }];
    let mut known = 1;
    let mut j = 2;
    while known < blocks.len() {
        let delta = 1 << (j - 2);
        let query_pos = if delta == 1 { ly.p + 1 } else { blocks[delta - 2].start + ly.p + 1 };
        let count = delta.min(blocks.len() - delta);
        layers.push(Layer::Attention {
            label: format!("{name}-copy-{j}"),
            heads: vec![copy_head(ly, rot, activation, query_pos, blocks[0].start, blocks[delta].start, count * w)],
        });
        known = delta + count;
        j += 1;
    }
    layers
}

/// History layers followed by future layers.
pub fn build_copy_layers(config: &ConstructionConfig) -> Result<(Vec<Layer>, FeatureMap)> {
    config.validate()?;
    let ly = &config.layout;
    let fm = FeatureMap::new(ly)?;
    let (scale, activation) = match config.beta1 {
        Beta1::Hard => (1.0, Activation::Hardmax),
        Beta1::Finite(b) => (b, Activation::Softmax),
    };
    let (a, b) = rotation_matrices(ly, scale);
    let mut layers = doubling_layers(ly, &a, activation, &fm.z_blocks, "history");
    layers.extend(doubling_layers(ly, &b, activation, &fm.f_blocks, "future"));
    Ok((layers, fm))
}

/// Encoder writing `Vec(token, F_1, ..., F_{m-1})` into the Vec block.
pub fn build_vec_encoder(config: &ConstructionConfig, fm: &FeatureMap) -> Option<Layer> {
    let target = fm.vec_block.as_ref()?.start;
    let ly = &config.layout;
    let mut sources = vec![0];
    sources.extend(fm.f_blocks[..ly.m - 1].iter().map(|b| b.start));
    Some(Layer::Encoder { label: "vec-encoder".into(), encoder: RowEncoder::VecProduct { sources, width: ly.p, target } })
}

/// One gradient step per layer on `sum_i ||o_i - W z_i||^2`.
///
/// For target row `j` the positive head scores row `s` with
/// `x_s = W_j z'_s - o_j(s) - beta2 (gate_s + test_s)`, where `gate_s` is the
/// non-delimiter mass of the gate block, and writes `-2 lr x_s z'_s` into
/// `W_j`. The negative head flips the sign of the `W_j` and `o_j` terms (the
/// gating term keeps its sign) and of the value, so the pair adds
/// `-2 lr x_s z'_s` for every endpoint and nothing elsewhere.
pub fn build_gd_layers(config: &ConstructionConfig, fm: &FeatureMap) -> Result<Vec<Layer>> {
    config.validate()?;
    let ly = &config.layout;
    let pin = fm.w_cols;
    let gate = fm.gate_block();
    let mut heads = Vec::with_capacity(2 * fm.w_rows);
    for j in 0..fm.w_rows {
        for sign in [1.0, -1.0] {
            let mut h = HeadWeights::new(ly.d, pin + 2, Activation::Relu);
            for c in 0..pin {
                h.query.set(fm.w_col(j, c), c, sign);
                let zc = fm.z_col(c, ly.p);
                h.key.set(zc, c, 1.0);
                h.value.set(zc, fm.w_col(j, c), -2.0 * config.lr * sign);
            }
            h.query.set(fm.ones, pin, -sign);
            h.key.set(fm.target_col(j), pin, 1.0);
            h.query.set(fm.ones, pin + 1, -config.beta2);
            for c in 0..ly.p {
                h.key.set(gate.start + c, pin + 1, 1.0);
            }
            h.key.set(fm.test, pin + 1, 1.0);
            heads.push(h);
        }
    }
    Ok((1..=config.steps).map(|t| Layer::Attention { label: format!("gd-{t}"), heads: heads.clone() }).collect())
}

/// Writes `W_j z'_test` into output column `j` of the last row.
///
/// Row `t` scores row `s` with `z'_t W_j(s) - beta2 (1 - test_t)` and reads
/// the value `ones - sum(token block)`, which is nonzero only on the final
/// query row. The ReLU pair therefore writes the inner product exactly on
/// test rows and nothing on demonstration rows, with no dependence on the
/// sequence length.
pub fn build_prediction_layer(config: &ConstructionConfig, fm: &FeatureMap) -> Result<Layer> {
    config.validate()?;
    let ly = &config.layout;
    let pin = fm.w_cols;
    let mut heads = Vec::with_capacity(2 * fm.w_rows);
    for j in 0..fm.w_rows {
        let out = fm.output.start + j;
        for sign in [1.0, -1.0] {
            let mut h = HeadWeights::new(ly.d, pin + 1, Activation::Relu);
            for c in 0..pin {
                h.query.set(fm.z_col(c, ly.p), c, sign);
                h.key.set(fm.w_col(j, c), c, 1.0);
            }
            h.query.set(fm.ones, pin, -config.beta2);
            h.query.set(fm.test, pin, config.beta2);
            h.key.set(fm.ones, pin, 1.0);
            h.value.set(fm.ones, out, sign);
            for c in ly.token_cols() {
                h.value.set(c, out, -sign);
            }
            heads.push(h);
        }
    }
    Ok(Layer::Attention { label: "predict".into(), heads })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackMetadata {
    pub history_layers: usize,
    pub future_layers: usize,
    pub encoder_layers: usize,
    pub gd_layers: usize,
    pub attention_layers: usize,
    pub lr: f64,
    pub beta1: Beta1,
    pub beta2: f64,
    pub update_rule: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructedStack {
    pub stack: TransformerStack,
    pub feature_map: FeatureMap,
    pub metadata: StackMetadata,
}

impl ConstructedStack {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Index into [`crate::kernel::forward_trace`] output just after the
    /// copy layers.
    pub fn after_copy(&self) -> usize {
        self.metadata.history_layers + self.metadata.future_layers
    }

    /// Trace index after gradient layer `t` (`t = 0` is before the first).
    pub fn after_gd(&self, t: usize) -> usize {
        self.after_copy() + self.metadata.encoder_layers + t
    }
}

/// Copy layers, the Vec encoder when `m > 1`, `T` gradient layers and the
/// prediction layer.
pub fn assemble_stack(config: &ConstructionConfig) -> Result<ConstructedStack> {
    let (mut layers, fm) = build_copy_layers(config)?;
    let ly = &config.layout;
    let history_layers = copy_layer_count(fm.z_blocks.len());
    let future_layers = copy_layer_count(ly.m);
    let mut encoder_layers = 0;
    if let Some(enc) = build_vec_encoder(config, &fm) {
        layers.push(enc);
        encoder_layers = 1;
    }
    layers.extend(build_gd_layers(config, &fm)?);
    layers.push(build_prediction_layer(config, &fm)?);
    let stack = TransformerStack::new(ly.d, layers)?;
    let metadata = StackMetadata {
        history_layers,
        future_layers,
        encoder_layers,
        gd_layers: config.steps,
        attention_layers: stack.attention_layer_count(),
        lr: config.lr,
        beta1: config.beta1,
        beta2: config.beta2,
        update_rule: "W <- W - lr * 2 (W Z - O) Z^T".into(),
    };
    Ok(ConstructedStack { stack, feature_map: fm, metadata })
}
