//! Attention-only Transformer evaluation.
//!
//! A head computes `sigma(M Q (M K)^T) M V`; a layer adds the sum of its
//! heads to the residual stream. Weights are stored as sparse coordinate
//! lists so that every inner product is a fixed-order sum over the nonzero
//! weights. Attention outputs are summed with [`canonical_sum`], which makes
//! the result depend only on the multiset of contributing rows.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::canonical_sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Softmax,
    Relu,
    /// Weight one on the largest logit, lowest row index on ties.
    Hardmax,
}

/// Sparse `rows x cols` matrix as `(row, col, weight)` triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMap {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMap {
    pub fn new(rows: usize, cols: usize) -> Self {
        SparseMap { rows, cols, entries: Vec::new() }
    }

    /// Add `w` at `(row, col)`; zero weights are dropped.
    pub fn set(&mut self, row: usize, col: usize, w: f64) -> &mut Self {
        assert!(row < self.rows && col < self.cols, "({row}, {col}) outside {}x{}", self.rows, self.cols);
        if w != 0.0 {
            self.entries.retain(|&(r, c, _)| (r, c) != (row, col));
            self.entries.push((row, col, w));
        }
        self
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut s = SparseMap::new(m.nrows(), m.ncols());
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                if m[(r, c)] != 0.0 {
                    s.entries.push((r, c, m[(r, c)]));
                }
            }
        }
        s
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for &(r, c, w) in &self.entries {
            m[(r, c)] += w;
        }
        m
    }

    /// Entries grouped by output column, each group ordered by input row.
    fn by_column(&self) -> Vec<(usize, Vec<(usize, f64)>)> {
        let mut sorted = self.entries.clone();
        sorted.sort_by_key(|&(r, c, _)| (c, r));
        let mut groups: Vec<(usize, Vec<(usize, f64)>)> = Vec::new();
        for (r, c, w) in sorted {
            match groups.last_mut() {
                Some((gc, g)) if *gc == c => g.push((r, w)),
                _ => groups.push((c, vec![(r, w)])),
            }
        }
        groups
    }

    /// `M * self`, restricted to the nonzero output columns.
    fn project(&self, m: &DMatrix<f64>) -> (Vec<usize>, DMatrix<f64>) {
        let groups = self.by_column();
        let cols: Vec<usize> = groups.iter().map(|(c, _)| *c).collect();
        let out = DMatrix::from_fn(m.nrows(), groups.len(), |t, j| {
            groups[j].1.iter().fold(0.0, |acc, &(r, w)| acc + m[(t, r)] * w)
        });
        (cols, out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadWeights {
    /// `D x dk`
    pub query: SparseMap,
    /// `D x dk`
    pub key: SparseMap,
    /// `D x D`
    pub value: SparseMap,
    pub activation: Activation,
}

impl HeadWeights {
    pub fn new(width: usize, key_dim: usize, activation: Activation) -> Self {
        HeadWeights {
            query: SparseMap::new(width, key_dim),
            key: SparseMap::new(width, key_dim),
            value: SparseMap::new(width, width),
            activation,
        }
    }

    /// Dense head from `D x D` query, key and value matrices.
    pub fn from_dense(q: &DMatrix<f64>, k: &DMatrix<f64>, v: &DMatrix<f64>, activation: Activation) -> Self {
        HeadWeights {
            query: SparseMap::from_dense(q),
            key: SparseMap::from_dense(k),
            value: SparseMap::from_dense(v),
            activation,
        }
    }

    fn check(&self, width: usize) -> Result<()> {
        let ok = self.query.rows == width
            && self.key.rows == width
            && self.query.cols == self.key.cols
            && self.value.rows == width
            && self.value.cols == width;
        if ok {
            Ok(())
        } else {
            Err(Error::Shape {
                expected: format!("head over width {width}"),
                got: format!(
                    "q {}x{}, k {}x{}, v {}x{}",
                    self.query.rows, self.query.cols, self.key.rows, self.key.cols, self.value.rows, self.value.cols
                ),
            })
        }
    }
}

/// Deterministic row transformation interposed between attention layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowEncoder {
    /// Writes the Kronecker product of the `width`-wide blocks starting at
    /// `sources` into `width^len(sources)` columns starting at `target`.
    /// On one-hot blocks this is the big-endian tuple encoding.
    VecProduct { sources: Vec<usize>, width: usize, target: usize },
}

impl RowEncoder {
    fn apply(&self, h: &mut DMatrix<f64>) -> Result<()> {
        match self {
            RowEncoder::VecProduct { sources, width, target } => {
                let out = width.pow(sources.len() as u32);
                let d = h.ncols();
                if sources.is_empty() || sources.iter().any(|&s| s + width > d) || target + out > d {
                    return Err(Error::Encoder(format!("blocks {sources:?}/{target} do not fit width {d}")));
                }
                if sources.iter().any(|&s| s < *target + out && *target < s + width) {
                    return Err(Error::Encoder("source and target blocks overlap".into()));
                }
                if h.columns(*target, out).iter().any(|&x| x != 0.0) {
                    return Err(Error::Encoder(format!("target block at column {target} is not zero")));
                }
                for t in 0..h.nrows() {
                    let mut acc = vec![1.0];
                    for &s in sources {
                        acc = acc.iter().flat_map(|&a| (0..*width).map(move |c| (a, c))).map(|(a, c)| a * h[(t, s + c)]).collect();
                    }
                    for (i, v) in acc.into_iter().enumerate() {
                        h[(t, target + i)] = v;
                    }
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Attention { label: String, heads: Vec<HeadWeights> },
    Encoder { label: String, encoder: RowEncoder },
}

impl Layer {
    pub fn label(&self) -> &str {
        match self {
            Layer::Attention { label, .. } | Layer::Encoder { label, .. } => label,
        }
    }

    pub fn is_attention(&self) -> bool {
        matches!(self, Layer::Attention { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerStack {
    pub width: usize,
    pub layers: Vec<Layer>,
}

impl TransformerStack {
    pub fn new(width: usize, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("a stack needs at least one layer".into()));
        }
        for layer in &layers {
            if let Layer::Attention { heads, .. } = layer {
                for h in heads {
                    h.check(width)?;
                }
            }
        }
        Ok(TransformerStack { width, layers })
    }

    pub fn attention_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| l.is_attention()).count()
    }

    pub fn encoder_count(&self) -> usize {
        self.layers.len() - self.attention_layer_count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let stack: TransformerStack = serde_json::from_str(s)?;
        TransformerStack::new(stack.width, stack.layers)
    }
}

fn check_width(m: &DMatrix<f64>, width: usize) -> Result<()> {
    if m.ncols() != width {
        return Err(Error::Shape { expected: format!("width {width}"), got: format!("width {}", m.ncols()) });
    }
    Ok(())
}

/// Activated attention scores of row `t` against every row.
fn row_weights(qm: &DMatrix<f64>, km: &DMatrix<f64>, t: usize, activation: Activation) -> Vec<f64> {
    let rows = km.nrows();
    let logits: Vec<f64> = (0..rows)
        .map(|s| (0..qm.ncols()).fold(0.0, |acc, j| acc + qm[(t, j)] * km[(s, j)]))
        .collect();
    match activation {
        Activation::Relu => logits.into_iter().map(|x| x.max(0.0)).collect(),
        Activation::Hardmax => {
            let mut best = 0;
            for s in 1..rows {
                if logits[s] > logits[best] {
                    best = s;
                }
            }
            let mut w = vec![0.0; rows];
            w[best] = 1.0;
            w
        }
        Activation::Softmax => {
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|x| x / z).collect()
        }
    }
}

/// Query and key projections, `M Q` and `M K` over the shared key dimension.
fn projections(m: &DMatrix<f64>, head: &HeadWeights) -> (DMatrix<f64>, DMatrix<f64>) {
    let dk = head.query.cols;
    let dense = |map: &SparseMap| {
        let (cols, proj) = map.project(m);
        let mut out = DMatrix::zeros(m.nrows(), dk);
        for (j, &c) in cols.iter().enumerate() {
            out.set_column(c, &proj.column(j));
        }
        out
    };
    (dense(&head.query), dense(&head.key))
}

/// The `rows x rows` matrix of activated attention scores.
pub fn attention_weights(m: &DMatrix<f64>, head: &HeadWeights) -> Result<DMatrix<f64>> {
    check_width(m, head.query.rows)?;
    head.check(m.ncols())?;
    let (qm, km) = projections(m, head);
    let rows: Vec<Vec<f64>> = (0..m.nrows()).into_par_iter().map(|t| row_weights(&qm, &km, t, head.activation)).collect();
    Ok(DMatrix::from_fn(m.nrows(), m.nrows(), |t, s| rows[t][s]))
}

/// Sparse head output: per row, `(column, value)` for the value map's
/// nonzero output columns.
fn head_output(m: &DMatrix<f64>, head: &HeadWeights) -> Vec<Vec<(usize, f64)>> {
    let (qm, km) = projections(m, head);
    let (vcols, vm) = head.value.project(m);
    if vcols.is_empty() {
        return vec![Vec::new(); m.nrows()];
    }
    (0..m.nrows())
        .into_par_iter()
        .map(|t| {
            let a = row_weights(&qm, &km, t, head.activation);
            let active: Vec<usize> = (0..a.len()).filter(|&s| a[s] != 0.0).collect();
            let mut terms = Vec::with_capacity(active.len());
            vcols
                .iter()
                .enumerate()
                .map(|(j, &c)| {
                    terms.clear();
                    terms.extend(active.iter().map(|&s| a[s] * vm[(s, j)]).filter(|&x| x != 0.0));
                    (c, canonical_sum(&mut terms))
                })
                .collect()
        })
        .collect()
}

/// `sigma(M Q K^T M^T) M V`.
pub fn attention(m: &DMatrix<f64>, head: &HeadWeights) -> Result<DMatrix<f64>> {
    check_width(m, head.query.rows)?;
    head.check(m.ncols())?;
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (t, row) in head_output(m, head).into_iter().enumerate() {
        for (c, x) in row {
            out[(t, c)] = x;
        }
    }
    Ok(out)
}

/// One layer applied to `h` in place.
pub fn apply_layer(h: &mut DMatrix<f64>, layer: &Layer) -> Result<()> {
    match layer {
        Layer::Attention { heads, .. } => {
            let outputs = heads
                .iter()
                .map(|head| {
                    head.check(h.ncols())?;
                    Ok(head_output(h, head))
                })
                .collect::<Result<Vec<_>>>()?;
            for out in outputs {
                for (t, row) in out.into_iter().enumerate() {
                    for (c, x) in row {
                        h[(t, c)] += x;
                    }
                }
            }
            Ok(())
        }
        Layer::Encoder { encoder, .. } => encoder.apply(h),
    }
}

pub fn forward(m0: &DMatrix<f64>, stack: &TransformerStack) -> Result<DMatrix<f64>> {
    check_width(m0, stack.width)?;
    let mut h = m0.clone();
    for layer in &stack.layers {
        apply_layer(&mut h, layer)?;
    }
    Ok(h)
}

/// `[H^(0), H^(1), ..., H^(layers)]`.
pub fn forward_trace(m0: &DMatrix<f64>, stack: &TransformerStack) -> Result<Vec<DMatrix<f64>>> {
    check_width(m0, stack.width)?;
    let mut trace = vec![m0.clone()];
    for layer in &stack.layers {
        let mut h = trace.last().expect("nonempty").clone();
        apply_layer(&mut h, layer)?;
        trace.push(h);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng as _;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = stream_rng(seed, 0);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_query_softmax_is_uniform() {
        let m = random_matrix(4, 3, 1);
        let v = random_matrix(3, 3, 2);
        let head = HeadWeights::from_dense(&DMatrix::zeros(3, 3), &DMatrix::zeros(3, 3), &v, Activation::Softmax);
        let out = attention(&m, &head).unwrap();
        let mv = &m * &v;
        for t in 0..4 {
            for c in 0..3 {
                let mean = mv.column(c).mean();
                assert!((out[(t, c)] - mean).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_query_relu_is_zero() {
        let m = random_matrix(4, 3, 1);
        let v = random_matrix(3, 3, 2);
        let head = HeadWeights::from_dense(&DMatrix::zeros(3, 3), &DMatrix::zeros(3, 3), &v, Activation::Relu);
        assert_eq!(attention(&m, &head).unwrap(), DMatrix::zeros(4, 3));
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let m = random_matrix(3, 5, 3);
        let head = HeadWeights::from_dense(&random_matrix(5, 5, 4), &random_matrix(5, 5, 5), &random_matrix(5, 5, 6), Activation::Softmax);
        let a = attention_weights(&m, &head).unwrap();
        for t in 0..3 {
            assert!((a.row(t).sum() - 1.0).abs() < 1e-12);
            assert!(a.row(t).iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn dense_reference_agrees() {
        let m = random_matrix(6, 4, 7);
        let (q, k, v) = (random_matrix(4, 4, 8), random_matrix(4, 4, 9), random_matrix(4, 4, 10));
        let head = HeadWeights::from_dense(&q, &k, &v, Activation::Relu);
        let logits = (&m * &q) * (&m * &k).transpose();
        let expected = logits.map(|x| x.max(0.0)) * (&m * &v);
        assert!((attention(&m, &head).unwrap() - expected).amax() < 1e-12);
    }

    #[test]
    fn hardmax_ties_pick_lowest_row() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 1.0, 7.0, 0.0, 9.0]);
        let mut head = HeadWeights::new(2, 1, Activation::Hardmax);
        head.query.set(0, 0, 1.0);
        head.key.set(0, 0, 1.0);
        head.value.set(1, 1, 1.0);
        let out = attention(&m, &head).unwrap();
        // rows 0 and 1 tie on the key, row 0 wins
        assert_eq!(out[(0, 1)], 5.0);
        // the last query has a zero logit everywhere, so row 0 again
        assert_eq!(out[(2, 1)], 5.0);
    }

    #[test]
    fn empty_layer_and_zero_value_are_identity() {
        let m = random_matrix(4, 3, 11);
        let stack = TransformerStack::new(3, vec![Layer::Attention { label: "empty".into(), heads: vec![] }]).unwrap();
        assert_eq!(forward(&m, &stack).unwrap(), m);
        let head = HeadWeights::from_dense(&random_matrix(3, 3, 1), &random_matrix(3, 3, 2), &DMatrix::zeros(3, 3), Activation::Softmax);
        let stack = TransformerStack::new(3, vec![Layer::Attention { label: "v0".into(), heads: vec![head] }]).unwrap();
        assert_eq!(forward(&m, &stack).unwrap(), m);
    }

    #[test]
    fn residual_additivity() {
        let m = random_matrix(5, 4, 12);
        let h1 = HeadWeights::from_dense(&random_matrix(4, 4, 1), &random_matrix(4, 4, 2), &random_matrix(4, 4, 3), Activation::Softmax);
        let h2 = HeadWeights::from_dense(&random_matrix(4, 4, 4), &random_matrix(4, 4, 5), &random_matrix(4, 4, 6), Activation::Relu);
        let stack = TransformerStack::new(4, vec![Layer::Attention { label: "l".into(), heads: vec![h1.clone(), h2.clone()] }]).unwrap();
        let expected = &m + attention(&m, &h1).unwrap() + attention(&m, &h2).unwrap();
        assert_eq!(forward(&m, &stack).unwrap(), expected);
    }

    #[test]
    fn shape_errors() {
        let head = HeadWeights::new(3, 1, Activation::Relu);
        assert!(attention(&DMatrix::zeros(2, 4), &head).is_err());
        assert!(TransformerStack::new(3, vec![]).is_err());
        let stack = TransformerStack::new(4, vec![Layer::Attention { label: "x".into(), heads: vec![] }]).unwrap();
        assert!(forward(&DMatrix::zeros(2, 3), &stack).is_err());
        assert!(TransformerStack::new(4, vec![Layer::Attention { label: "x".into(), heads: vec![head] }]).is_err());
    }

    #[test]
    fn vec_encoder_product() {
        let mut h = DMatrix::zeros(3, 8);
        // row 0: (1, 0) -> code 2; row 1: (0, 1) -> code 1; row 2: zero block
        h[(0, 1)] = 1.0;
        h[(0, 2)] = 1.0;
        h[(1, 0)] = 1.0;
        h[(1, 3)] = 1.0;
        h[(2, 2)] = 1.0;
        let enc = RowEncoder::VecProduct { sources: vec![0, 2], width: 2, target: 4 };
        enc.apply(&mut h).unwrap();
        assert_eq!(h.row(0).columns(4, 4).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(h.row(1).columns(4, 4).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 0.0, 0.0]);
        assert!(h.row(2).columns(4, 4).iter().all(|&x| x == 0.0));
        // writing twice violates the zero-target contract
        assert!(matches!(enc.apply(&mut h), Err(Error::Encoder(_))));
        let bad = RowEncoder::VecProduct { sources: vec![0, 2], width: 2, target: 6 };
        assert!(bad.apply(&mut DMatrix::zeros(3, 8)).is_err());
    }

    #[test]
    fn stack_json_roundtrip() {
        let head = HeadWeights::from_dense(&random_matrix(3, 3, 1), &random_matrix(3, 3, 2), &random_matrix(3, 3, 3), Activation::Hardmax);
        let stack = TransformerStack::new(
            3,
            vec![
                Layer::Attention { label: "a".into(), heads: vec![head] },
                Layer::Encoder { label: "e".into(), encoder: RowEncoder::VecProduct { sources: vec![0], width: 1, target: 2 } },
            ],
        )
        .unwrap();
        let back = TransformerStack::from_json(&stack.to_json().unwrap()).unwrap();
        assert_eq!(back, stack);
        assert_eq!(back.attention_layer_count(), 1);
        assert_eq!(back.encoder_count(), 1);
    }
}
