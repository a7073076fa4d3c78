//! The in-context input matrix and the tuple encoder.
//!
//! Row layout of `M0` (1-based positions): demonstration `i` occupies
//! positions `(i-1)(L+1)+1 ..= i(L+1)`, its last row being the delimiter;
//! the test prefix follows, and the final row is the query with an all-zero
//! token block.
//!
//! Column layout (0-based): `0..=p` token one-hot (`p` is the delimiter),
//! `p+1`/`p+2` the sin/cos position embedding, `D-2` a constant one and
//! `D-1` the test-row indicator. Everything else starts at zero and is
//! scratch space for the constructed Transformer.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::symbol_of;
use crate::linalg::fmt17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextLayout {
    /// Number of demonstrations.
    pub n: usize,
    /// Demonstration length (window of `L - 1` plus the target).
    pub l: usize,
    /// Test prefix length plus one.
    pub k: usize,
    /// Vocabulary size, excluding the delimiter.
    pub p: usize,
    /// Number of jointly predicted symbols (1 for the standard task).
    pub m: usize,
    /// Embedding width.
    pub d: usize,
}

/// Which slice of the last output row holds the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutMode {
    Standard,
    Extended,
}

impl ContextLayout {
    /// Layout with the default width
    /// `(L+1)(p+3) + p * max(p, p^m) * (L-1) + p^m + 2`, raised to `2 p^m L`
    /// if that is larger.
    pub fn new(n: usize, l: usize, k: usize, p: usize, m: usize) -> Result<Self> {
        let d = Self::default_width(l, p, m);
        Self::with_width(n, l, k, p, m, d)
    }

    pub fn with_width(n: usize, l: usize, k: usize, p: usize, m: usize, d: usize) -> Result<Self> {
        if n == 0 || p == 0 || m == 0 {
            return Err(Error::InvalidDimension(format!("n={n}, p={p}, m={m} must be positive")));
        }
        if l <= m {
            return Err(Error::InvalidDimension(format!("need L > m, got L={l}, m={m}")));
        }
        if k < l {
            return Err(Error::InvalidDimension(format!("need k >= L, got k={k}, L={l}")));
        }
        let layout = ContextLayout { n, l, k, p, m, d };
        let floor = 2 * layout.out_dim() * l;
        if d < floor || d < (l + 1) * (p + 3) + 2 {
            return Err(Error::Capacity { needed: floor.max((l + 1) * (p + 3) + 2), available: d });
        }
        Ok(layout)
    }

    pub fn default_width(l: usize, p: usize, m: usize) -> usize {
        let pm = p.pow(m as u32);
        let base = (l + 1) * (p + 3) + p * p.max(pm) * (l - 1) + pm + 2;
        base.max(2 * pm * l)
    }

    pub fn rows(&self) -> usize {
        self.n * (self.l + 1) + self.k
    }

    /// Rows belonging to demonstrations (including delimiters).
    pub fn demo_rows(&self) -> usize {
        self.n * (self.l + 1)
    }

    /// Dimension of the predicted vector, `p^m`.
    pub fn out_dim(&self) -> usize {
        self.p.pow(self.m as u32)
    }

    /// Number of window symbols each regression input holds.
    pub fn window_len(&self) -> usize {
        self.l - self.m
    }

    pub fn readout_mode(&self) -> ReadoutMode {
        if self.m > 1 {
            ReadoutMode::Extended
        } else {
            ReadoutMode::Standard
        }
    }

    /// Angular step of the position embedding, `1 / (1000 n k)`.
    pub fn theta(&self) -> f64 {
        1.0 / (1000.0 * self.n as f64 * self.k as f64)
    }

    /// `[sin(pos theta), cos(pos theta)]` for a 1-based position.
    pub fn position_embedding(&self, pos: usize) -> [f64; 2] {
        let a = pos as f64 * self.theta();
        [a.sin(), a.cos()]
    }

    pub fn token_cols(&self) -> std::ops::Range<usize> {
        0..self.p + 1
    }
    pub fn delimiter_col(&self) -> usize {
        self.p
    }
    pub fn position_cols(&self) -> std::ops::Range<usize> {
        self.p + 1..self.p + 3
    }
    /// Width of the token-plus-position block copied by the feature layers.
    pub fn block_width(&self) -> usize {
        self.p + 3
    }
    pub fn ones_col(&self) -> usize {
        self.d - 2
    }
    pub fn test_col(&self) -> usize {
        self.d - 1
    }
}

/// `M0` together with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextMatrix {
    pub data: DMatrix<f64>,
    pub layout: ContextLayout,
}

/// Lay out `n` demonstrations of length `L` and a test prefix of length
/// `k - 1` (all as 0-based symbols) into `M0`.
pub fn build_context(demos: &[Vec<usize>], test_prefix: &[usize], layout: &ContextLayout) -> Result<ContextMatrix> {
    let ly = layout;
    if demos.len() != ly.n {
        return Err(Error::Shape { expected: format!("{} demonstrations", ly.n), got: format!("{}", demos.len()) });
    }
    for (i, demo) in demos.iter().enumerate() {
        if demo.len() != ly.l {
            return Err(Error::DemoMismatch { demo: i, reason: format!("length {} != L = {}", demo.len(), ly.l) });
        }
        if let Some(&s) = demo.iter().find(|&&s| s >= ly.p) {
            return Err(Error::DemoMismatch { demo: i, reason: format!("symbol {s} outside vocabulary {}", ly.p) });
        }
    }
    if test_prefix.len() + 1 != ly.k {
        return Err(Error::Shape {
            expected: format!("test prefix of length {}", ly.k - 1),
            got: format!("{}", test_prefix.len()),
        });
    }
    if let Some(&s) = test_prefix.iter().find(|&&s| s >= ly.p) {
        return Err(Error::InvalidDimension(format!("test symbol {s} outside vocabulary {}", ly.p)));
    }

    let mut data = DMatrix::zeros(ly.rows(), ly.d);
    let mut row = 0;
    for demo in demos {
        for &s in demo {
            data[(row, s)] = 1.0;
            row += 1;
        }
        data[(row, ly.delimiter_col())] = 1.0;
        row += 1;
    }
    for &s in test_prefix {
        data[(row, s)] = 1.0;
        row += 1;
    }
    for t in 0..ly.rows() {
        let [s, c] = ly.position_embedding(t + 1);
        data[(t, ly.p + 1)] = s;
        data[(t, ly.p + 2)] = c;
        data[(t, ly.ones_col())] = 1.0;
        if t >= ly.demo_rows() {
            data[(t, ly.test_col())] = 1.0;
        }
    }
    Ok(ContextMatrix { data, layout: *ly })
}

impl ContextMatrix {
    /// Token symbol of a row, `None` for the final query row.
    pub fn token(&self, row: usize) -> Option<usize> {
        let block = self.data.row(row).columns(0, self.layout.p + 1).transpose();
        symbol_of(&block).ok()
    }

    /// Recover the demonstrations from the token block.
    pub fn demos(&self) -> Vec<Vec<usize>> {
        let ly = self.layout;
        (0..ly.n)
            .map(|i| (0..ly.l).filter_map(|s| self.token(i * (ly.l + 1) + s)).collect())
            .collect()
    }

    /// Recover the test prefix from the token block.
    pub fn test_prefix(&self) -> Vec<usize> {
        let ly = self.layout;
        (ly.demo_rows()..ly.rows() - 1).filter_map(|t| self.token(t)).collect()
    }

    /// Row-major CSV with 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_matrix_csv(&self.data, out)
    }
}

pub(crate) fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|&x| fmt17(x)))?;
    }
    w.flush()?;
    Ok(())
}

/// Big-endian code of a symbol tuple: `sum_j s_j p^(m-1-j)`.
pub fn vec_index(symbols: &[usize], p: usize) -> usize {
    symbols.iter().fold(0, |acc, &s| acc * p + s)
}

/// Inverse of [`vec_index`] for tuples of length `m`.
pub fn vec_decode(code: usize, p: usize, m: usize) -> Vec<usize> {
    let mut out = vec![0; m];
    let mut c = code;
    for slot in out.iter_mut().rev() {
        *slot = c % p;
        c /= p;
    }
    out
}

/// One-hot encoding of a tuple of one-hot vectors over `p` symbols into the
/// `p^m`-dimensional basis.
pub fn vec_encode(tuple: &[DVector<f64>]) -> Result<DVector<f64>> {
    let Some(first) = tuple.first() else {
        return Err(Error::InvalidDimension("empty tuple".into()));
    };
    let p = first.len();
    let mut symbols = Vec::with_capacity(tuple.len());
    for v in tuple {
        if v.len() != p {
            return Err(Error::Shape { expected: format!("length {p}"), got: format!("{}", v.len()) });
        }
        symbols.push(symbol_of(v)?);
    }
    let mut out = DVector::zeros(p.pow(tuple.len() as u32));
    out[vec_index(&symbols, p)] = 1.0;
    Ok(out)
}

/// The prediction slice of the final row of a Transformer output.
pub fn read_out(output: &DMatrix<f64>, layout: &ContextLayout, mode: ReadoutMode) -> Result<DVector<f64>> {
    if output.shape() != (layout.rows(), layout.d) {
        return Err(Error::Shape {
            expected: format!("{}x{}", layout.rows(), layout.d),
            got: format!("{}x{}", output.nrows(), output.ncols()),
        });
    }
    let last = layout.rows() - 1;
    let (start, len) = match mode {
        ReadoutMode::Standard => (0, layout.p),
        ReadoutMode::Extended => ((layout.l + 1) * (layout.p + 3), layout.out_dim()),
    };
    Ok(output.row(last).columns(start, len).transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::one_hot;

    #[test]
    fn tiny_layout_rows() {
        let ly = ContextLayout::new(1, 2, 2, 2, 1).unwrap();
        let m0 = build_context(&[vec![0, 1]], &[1], &ly).unwrap();
        assert_eq!(m0.data.nrows(), 5);
        // 1-based row 3 is the delimiter, row 5 the empty query
        assert_eq!(m0.data.row(2).columns(0, 3).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0]);
        assert!(m0.data.row(4).columns(0, 3).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fixed_embedding_columns() {
        let ly = ContextLayout::new(2, 3, 5, 3, 1).unwrap();
        let m0 = build_context(&[vec![0, 1, 2], vec![2, 2, 0]], &[1, 0, 2, 1], &ly).unwrap();
        assert!(m0.data.column(ly.d - 2).iter().all(|&x| x == 1.0));
        let test: Vec<f64> = m0.data.column(ly.d - 1).iter().copied().collect();
        let expected: Vec<f64> = (0..ly.rows()).map(|t| if t >= 8 { 1.0 } else { 0.0 }).collect();
        assert_eq!(test, expected);
        assert_eq!(test.iter().filter(|&&x| x == 1.0).count(), ly.k);
    }

    #[test]
    fn first_position_embedding() {
        let ly = ContextLayout::new(2, 3, 4, 2, 1).unwrap();
        let m0 = build_context(&[vec![0, 1, 0], vec![1, 1, 0]], &[0, 1, 1], &ly).unwrap();
        assert_eq!(m0.data[(0, 3)], (1.0f64 / 8000.0).sin());
        assert_eq!(m0.data[(0, 4)], (1.0f64 / 8000.0).cos());
    }

    #[test]
    fn demo_errors_name_the_offender() {
        let ly = ContextLayout::new(2, 3, 4, 2, 1).unwrap();
        let err = build_context(&[vec![0, 1, 0], vec![1, 1]], &[0, 1, 1], &ly).unwrap_err();
        assert!(matches!(err, Error::DemoMismatch { demo: 1, .. }));
        let err = build_context(&[vec![0, 5, 0], vec![1, 1, 0]], &[0, 1, 1], &ly).unwrap_err();
        assert!(matches!(err, Error::DemoMismatch { demo: 0, .. }));
        assert!(build_context(&[vec![0, 1, 0], vec![1, 1, 0]], &[0, 1], &ly).is_err());
    }

    #[test]
    fn layout_validation() {
        assert!(ContextLayout::new(1, 3, 2, 2, 1).is_err());
        assert!(ContextLayout::new(1, 2, 3, 2, 2).is_err());
        assert!(ContextLayout::with_width(1, 3, 4, 2, 1, 5).is_err());
        let ly = ContextLayout::new(3, 4, 6, 3, 2).unwrap();
        assert!(ly.d >= 2 * 9 * 4);
    }

    #[test]
    fn vec_encode_identity_for_single_symbol() {
        for s in 0..4 {
            assert_eq!(vec_encode(&[one_hot(s, 4)]).unwrap(), one_hot(s, 4));
        }
    }

    #[test]
    fn vec_encode_big_endian() {
        let v = vec_encode(&[one_hot(0, 2), one_hot(1, 2)]).unwrap();
        assert_eq!(v, one_hot(1, 4));
        assert_eq!(vec_decode(1, 2, 2), vec![0, 1]);
    }

    #[test]
    fn vec_encode_rejects_non_one_hot() {
        assert!(vec_encode(&[DVector::from_vec(vec![0.5, 0.5])]).is_err());
        assert!(vec_encode(&[one_hot(0, 2), one_hot(0, 3)]).is_err());
    }

    #[test]
    fn read_out_shape_checked() {
        let ly = ContextLayout::new(1, 2, 2, 2, 1).unwrap();
        assert!(read_out(&DMatrix::zeros(4, ly.d), &ly, ReadoutMode::Standard).is_err());
        let m0 = build_context(&[vec![0, 1]], &[1], &ly).unwrap();
        let r = read_out(&m0.data, &ly, ReadoutMode::Standard).unwrap();
        assert_eq!(r, DVector::zeros(2));
    }

    #[test]
    fn csv_export_has_17_digits() {
        let ly = ContextLayout::new(1, 2, 2, 2, 1).unwrap();
        let m0 = build_context(&[vec![0, 1]], &[1], &ly).unwrap();
        let mut buf = Vec::new();
        m0.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        let first = text.lines().next().unwrap().split(',').next().unwrap();
        assert_eq!(first, "1.0000000000000000e0");
        let parsed: f64 = text.lines().next().unwrap().split(',').nth(3).unwrap().parse().unwrap();
        assert_eq!(parsed, m0.data[(0, 3)]);
    }
}
