//! Dense tensors, matrices, and the mode-wise algebra built on them.
//!
//! Storage is row-major (last index fastest) throughout, but [`Tensor::vec`]
//! and [`Tensor::unfold`] follow the column-major fiber-ordering convention
//! that is standard in the tensor-decomposition literature: `vec` enumerates
//! with the *first* index fastest, and the mode-`n` unfolding places the
//! fiber at multi-index `(i_1, …, i_N)` in column
//! `j = Σ_{k≠n} i_k · J_k` with `J_k = Π_{m<k, m≠n} I_m`. Under this
//! convention `vec(X ×₁U₁ ×₂U₂ ×₃U₃) = (U₃ ⊗ U₂ ⊗ U₁)·vec(X)`, which the
//! rest of the crate relies on. The bridge between the two conventions is
//! internal to `vec`/`unfold`/`fold` and never leaks.
//!
//! Mode indices in the public API are 1-based: mode 1 is the first
//! (channel) axis of a `C×H×W` tensor.

use crate::{Error, Result};

/// One axis of a third-order activation tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    Channel,
    Height,
    Width,
}

impl Mode {
    /// The 1-based mode index: channel → 1, height → 2, width → 3.
    pub fn index(self) -> usize {
        match self {
            Mode::Channel => 1,
            Mode::Height => 2,
            Mode::Width => 3,
        }
    }

    /// Single-letter name used by the selector text format.
    pub fn letter(self) -> char {
        match self {
            Mode::Channel => 'C',
            Mode::Height => 'H',
            Mode::Width => 'W',
        }
    }

    pub fn from_letter(c: char) -> Option<Mode> {
        match c {
            'C' => Some(Mode::Channel),
            'H' => Some(Mode::Height),
            'W' => Some(Mode::Width),
            _ => None,
        }
    }

    pub const ALL: [Mode; 3] = [Mode::Channel, Mode::Height, Mode::Width];
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Extents of a third-order activation tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TensorShape3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl TensorShape3 {
    pub fn new(c: usize, h: usize, w: usize) -> Result<Self> {
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Contract(format!(
                "tensor extents must be positive, got {c}x{h}x{w}"
            )));
        }
        Ok(Self { c, h, w })
    }

    pub fn extent(&self, mode: Mode) -> usize {
        match mode {
            Mode::Channel => self.c,
            Mode::Height => self.h,
            Mode::Width => self.w,
        }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dims(&self) -> Vec<usize> {
        vec![self.c, self.h, self.w]
    }
}

impl std::fmt::Display for TensorShape3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

/// Dense N-way array of `f64` with explicit shape, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from its shape and row-major data.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::Contract("tensor order must be at least 1".into()));
        }
        if shape.contains(&0) {
            return Err(Error::Contract(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} implies {expect} elements, data has {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(shape.to_vec(), vec![0.0; len])
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(shape.to_vec(), vec![1.0; len])
    }

    /// Order-1 tensor wrapping a vector.
    pub fn from_vec(v: Vec<f64>) -> Result<Self> {
        let n = v.len();
        Self::new(vec![n], v)
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn shape3(&self) -> Result<TensorShape3> {
        match self.shape[..] {
            [c, h, w] => TensorShape3::new(c, h, w),
            _ => Err(Error::Dimension(format!(
                "expected an order-3 tensor, got order {}",
                self.order()
            ))),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Row-major flat offset of a multi-index.
    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.order());
        let mut off = 0;
        for (i, (&ix, &ext)) in idx.iter().zip(&self.shape).enumerate() {
            debug_assert!(ix < ext, "index {ix} out of bounds for axis {i}");
            off = off * ext + ix;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let off = self.offset(idx);
        self.data[off] = value;
    }

    /// Column-major (first-index-fastest) vectorisation as an order-1 tensor.
    pub fn vec(&self) -> Tensor {
        let mut strides = vec![0usize; self.order()];
        let mut acc = 1usize;
        for (s, &ext) in strides.iter_mut().zip(&self.shape) {
            *s = acc;
            acc *= ext;
        }
        let mut out = vec![0.0; self.data.len()];
        let mut idx = vec![0usize; self.order()];
        for &v in &self.data {
            let pos: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            out[pos] = v;
            Self::advance(&mut idx, &self.shape);
        }
        Tensor {
            shape: vec![out.len()],
            data: out,
        }
    }

    /// Inverse of [`Tensor::vec`]: reshapes an order-1 tensor back to `shape`.
    pub fn from_vectorised(v: &Tensor, shape: &[usize]) -> Result<Tensor> {
        if v.order() != 1 {
            return Err(Error::Dimension(format!(
                "expected an order-1 tensor, got order {}",
                v.order()
            )));
        }
        let len: usize = shape.iter().product();
        if len != v.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape a length-{} vector into {shape:?}",
                v.len()
            )));
        }
        let mut out = Tensor::zeros(shape)?;
        let mut strides = vec![0usize; shape.len()];
        let mut acc = 1usize;
        for (s, &ext) in strides.iter_mut().zip(shape) {
            *s = acc;
            acc *= ext;
        }
        let mut idx = vec![0usize; shape.len()];
        for slot in out.data.iter_mut() {
            let pos: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            *slot = v.data[pos];
            Self::advance(&mut idx, shape);
        }
        Ok(out)
    }

    fn check_mode(&self, mode: usize) -> Result<usize> {
        if mode == 0 || mode > self.order() {
            return Err(Error::InvalidMode {
                mode,
                order: self.order(),
            });
        }
        Ok(mode - 1)
    }

    /// Column strides `J_k` of the canonical fiber ordering for mode `n0`
    /// (0-based): `J_k = Π_{m<k, m≠n0} I_m`.
    fn fiber_strides(shape: &[usize], n0: usize) -> Vec<usize> {
        let mut strides = vec![0usize; shape.len()];
        let mut acc = 1usize;
        for (k, &ext) in shape.iter().enumerate() {
            if k == n0 {
                continue;
            }
            strides[k] = acc;
            acc *= ext;
        }
        strides
    }

    /// Row-major multi-index increment (last axis fastest).
    fn advance(idx: &mut [usize], shape: &[usize]) {
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < shape[ax] {
                return;
            }
            idx[ax] = 0;
        }
    }

    /// Mode-`n` unfolding: the `I_n × Π_{t≠n} I_t` matrix whose columns are
    /// the mode-`n` fibers in canonical order. `mode` is 1-based.
    pub fn unfold(&self, mode: usize) -> Result<Matrix> {
        let n0 = self.check_mode(mode)?;
        let rows = self.shape[n0];
        let cols = self.data.len() / rows;
        let strides = Self::fiber_strides(&self.shape, n0);
        let mut m = Matrix::zeros(rows, cols);
        let mut idx = vec![0usize; self.order()];
        for &v in &self.data {
            let r = idx[n0];
            let j: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            m.data[r * cols + j] = v;
            Self::advance(&mut idx, &self.shape);
        }
        Ok(m)
    }

    /// Exact inverse of [`Tensor::unfold`] under the same fiber ordering.
    pub fn fold(m: &Matrix, mode: usize, shape: &[usize]) -> Result<Tensor> {
        if shape.is_empty() {
            return Err(Error::Contract("tensor order must be at least 1".into()));
        }
        if mode == 0 || mode > shape.len() {
            return Err(Error::InvalidMode {
                mode,
                order: shape.len(),
            });
        }
        let n0 = mode - 1;
        let rows = shape[n0];
        let cols: usize = shape.iter().enumerate().filter(|&(k, _)| k != n0).map(|(_, &e)| e).product();
        if m.rows != rows || m.cols != cols {
            return Err(Error::Dimension(format!(
                "cannot fold a {}x{} matrix into {shape:?} along mode {mode} (need {rows}x{cols})",
                m.rows, m.cols
            )));
        }
        let mut out = Tensor::zeros(shape)?;
        let strides = Self::fiber_strides(shape, n0);
        let mut idx = vec![0usize; shape.len()];
        for slot in out.data.iter_mut() {
            let r = idx[n0];
            let j: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            *slot = m.data[r * cols + j];
            Self::advance(&mut idx, shape);
        }
        Ok(out)
    }

    /// Mode-`n` product `self ×ₙ w`: satisfies
    /// `unfold(result, n) = w · unfold(self, n)` exactly.
    pub fn mode_n_product(&self, w: &Matrix, mode: usize) -> Result<Tensor> {
        let n0 = self.check_mode(mode)?;
        if w.cols != self.shape[n0] {
            return Err(Error::Dimension(format!(
                "mode-{mode} product needs a matrix with {} columns, got {}x{}",
                self.shape[n0], w.rows, w.cols
            )));
        }
        let unfolded = self.unfold(mode)?;
        let product = w.matmul(&unfolded);
        let mut new_shape = self.shape.clone();
        new_shape[n0] = w.rows;
        Tensor::fold(&product, mode, &new_shape)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| x * factor).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "elementwise op on shapes {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "elementwise op on shapes {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Rank-1 order-3 tensor `u ∘ v ∘ w`: `result(i,j,k) = u(i)·v(j)·w(k)`.
pub fn outer3(u: &[f64], v: &[f64], w: &[f64]) -> Result<Tensor> {
    if u.is_empty() || v.is_empty() || w.is_empty() {
        return Err(Error::Contract("outer3 factors must be non-empty".into()));
    }
    let mut data = Vec::with_capacity(u.len() * v.len() * w.len());
    for &a in u {
        for &b in v {
            let ab = a * b;
            for &c in w {
                data.push(ab * c);
            }
        }
    }
    Tensor::new(vec![u.len(), v.len(), w.len()], data)
}

/// Generalised inner product of an order-3 tensor with the first three modes
/// of an order-4 weight tensor: `out(l) = Σ_{c,h,w} z(c,h,w)·w(c,h,w,l)`.
pub fn gen_inner_product(z: &Tensor, w: &Tensor) -> Result<Tensor> {
    if z.order() != 3 || w.order() != 4 {
        return Err(Error::Dimension(format!(
            "generalised inner product needs an order-3 and an order-4 tensor, got orders {} and {}",
            z.order(),
            w.order()
        )));
    }
    if z.shape() != &w.shape()[..3] {
        return Err(Error::Dimension(format!(
            "activation shape {:?} does not match weight leading extents {:?}",
            z.shape(),
            &w.shape()[..3]
        )));
    }
    let d = w.shape()[3];
    let mut out = vec![0.0; d];
    for (i, &zv) in z.data().iter().enumerate() {
        let ws = &w.data()[i * d..(i + 1) * d];
        for (o, &wv) in out.iter_mut().zip(ws) {
            *o += zv * wv;
        }
    }
    Tensor::from_vec(out)
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Contract(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if rows * cols != data.len() {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} elements, data has {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul dimension mismatch: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let row_out = &mut out.data[i * other.cols..(i + 1) * other.cols];
                let row_b = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in row_out.iter_mut().zip(row_b) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Kronecker product: the `(I₁J₁) × (I₂J₂)` block matrix whose `(i₁,i₂)`
    /// block is `self(i₁,i₂) · other`.
    pub fn kronecker(&self, other: &Matrix) -> Matrix {
        let rows = self.rows * other.rows;
        let cols = self.cols * other.cols;
        let mut out = Matrix::zeros(rows, cols);
        for i1 in 0..self.rows {
            for i2 in 0..self.cols {
                let x = self.data[i1 * self.cols + i2];
                if x == 0.0 {
                    continue;
                }
                for j1 in 0..other.rows {
                    for j2 in 0..other.cols {
                        out.data[(i1 * other.rows + j1) * cols + (i2 * other.cols + j2)] =
                            x * other.data[j1 * other.cols + j2];
                    }
                }
            }
        }
        out
    }

    /// Column `c` as a vector.
    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.data[r * self.cols + c]).collect()
    }

    /// The leading `n` columns as a new matrix.
    pub fn take_cols(&self, n: usize) -> Result<Matrix> {
        if n == 0 || n > self.cols {
            return Err(Error::Dimension(format!(
                "cannot take {n} columns from a {}x{} matrix",
                self.rows, self.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, n);
        for r in 0..self.rows {
            out.data[r * n..(r + 1) * n]
                .copy_from_slice(&self.data[r * self.cols..r * self.cols + n]);
        }
        Ok(out)
    }

    /// Matrix–vector product.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec dimension mismatch");
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        debug_assert!(self.rows == other.rows && self.cols == other.cols);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `‖selfᵀ·self − I‖_max`, the orthonormality defect of the columns.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.transpose().matmul(self);
        gram.max_abs_diff(&Matrix::identity(self.cols))
    }

    /// Order-2 tensor view of this matrix (row-major copy).
    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            shape: vec![self.rows, self.cols],
            data: self.data.clone(),
        }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Matrix> {
        match t.shape()[..] {
            [r, c] => Matrix::new(r, c, t.data().to_vec()),
            _ => Err(Error::Dimension(format!(
                "expected an order-2 tensor, got order {}",
                t.order()
            ))),
        }
    }
}
