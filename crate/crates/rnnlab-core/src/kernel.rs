//! Dense linear algebra and activation primitives, each paired with its
//! vector-Jacobian-product companion. Everything is 64-bit and row-major.
//!
//! VJP companions *accumulate* into their output buffers, so cotangents of
//! parameters shared across time steps add up naturally during BPTT.

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Owned dense vector. Dimension is the length.
pub type Vector = Vec<f64>;

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length must be rows*cols");
        Matrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
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

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Entrywise `self += other`.
    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "matrix shape mismatch in add");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }
}

/// Dot product with four independent accumulators.
///
/// The fixed summation order is part of the crate's determinism contract;
/// the independent partial sums also let the compiler vectorize despite
/// strict FP semantics.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let (ca, ta) = a.split_at(a.len() - a.len() % 4);
    let (cb, tb) = b.split_at(ca.len());
    for (pa, pb) in ca.chunks_exact(4).zip(cb.chunks_exact(4)) {
        acc[0] += pa[0] * pb[0];
        acc[1] += pa[1] * pb[1];
        acc[2] += pa[2] * pb[2];
        acc[3] += pa[3] * pb[3];
    }
    let mut tail = 0.0;
    for (x, y) in ta.iter().zip(tb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += a * x`, elementwise.
pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `W·x`.
pub fn affine(w: &Matrix, x: &[f64]) -> Vector {
    let mut out = vec![0.0; w.rows];
    affine_acc(w, x, &mut out);
    out
}

/// `out += W·x`. Lets callers form `U·x + V·h` without a temporary.
pub fn affine_acc(w: &Matrix, x: &[f64], out: &mut [f64]) {
    assert_eq!(w.cols, x.len(), "affine: W has {} cols but x has dim {}", w.cols, x.len());
    assert_eq!(w.rows, out.len(), "affine: W has {} rows but out has dim {}", w.rows, out.len());
    for i in 0..w.rows {
        out[i] += dot(w.row(i), x);
    }
}

/// Accumulates the weight cotangent of `y = W·x`: `dW += dy ⊗ x`.
pub fn affine_vjp_weights(x: &[f64], dy: &[f64], dw: &mut Matrix) {
    assert_eq!(dw.cols, x.len(), "affine vjp: dW cols vs x");
    assert_eq!(dw.rows, dy.len(), "affine vjp: dW rows vs dy");
    for (i, &g) in dy.iter().enumerate() {
        if g != 0.0 {
            axpy(dw.row_mut(i), g, x);
        }
    }
}

/// Accumulates the input cotangent of `y = W·x`: `dx += Wᵀ·dy`.
///
/// Written as a sweep of row-axpys so the inner loop walks contiguous memory.
pub fn affine_vjp_input(w: &Matrix, dy: &[f64], dx: &mut [f64]) {
    assert_eq!(w.rows, dy.len(), "affine vjp: W rows vs dy");
    assert_eq!(w.cols, dx.len(), "affine vjp: W cols vs dx");
    for (i, &g) in dy.iter().enumerate() {
        if g != 0.0 {
            axpy(dx, g, w.row(i));
        }
    }
}

/// Elementwise logistic `σ(z) = 1/(1+e^{−z})`.
pub fn logistic(x: &[f64]) -> Vector {
    x.iter().map(|&z| 1.0 / (1.0 + (-z).exp())).collect()
}

/// Elementwise hyperbolic tangent.
pub fn tanh(x: &[f64]) -> Vector {
    x.iter().map(|&z| z.tanh()).collect()
}

/// Accumulates the input cotangent of `y = σ(x)`, expressed via the output:
/// `dx += dy ⊙ y ⊙ (1−y)`.
pub fn logistic_vjp(y: &[f64], dy: &[f64], dx: &mut [f64]) {
    assert_eq!(y.len(), dy.len(), "logistic vjp: y vs dy");
    assert_eq!(y.len(), dx.len(), "logistic vjp: y vs dx");
    for i in 0..y.len() {
        dx[i] += dy[i] * y[i] * (1.0 - y[i]);
    }
}

/// Accumulates the input cotangent of `y = tanh(x)`: `dx += dy ⊙ (1−y²)`.
pub fn tanh_vjp(y: &[f64], dy: &[f64], dx: &mut [f64]) {
    assert_eq!(y.len(), dy.len(), "tanh vjp: y vs dy");
    assert_eq!(y.len(), dx.len(), "tanh vjp: y vs dx");
    for i in 0..y.len() {
        dx[i] += dy[i] * (1.0 - y[i] * y[i]);
    }
}

/// Softmax cross entropy against an integer label.
///
/// Returns `(loss, probs, grad_logits)`. The loss is computed as
/// `logsumexp(logits) − logits[label]`, which never evaluates `log(0)`,
/// and the softmax subtracts the max before exponentiating.
pub fn softmax_xent(logits: &[f64], label: usize) -> (f64, Vector, Vector) {
    assert!(label < logits.len(), "label {} out of range for {} classes", label, logits.len());
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vector = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = probs.iter().sum();
    let inv = 1.0 / sum;
    for p in &mut probs {
        *p *= inv;
    }
    let loss = sum.ln() + max - logits[label];
    let mut grad = probs.clone();
    grad[label] -= 1.0;
    (loss, probs, grad)
}

/// Scales the collection so its joint 2-norm is at most `max_norm`.
///
/// Returns the applied scale: 1 when the norm is already within bounds,
/// otherwise exactly `max_norm / norm`.
pub fn global_norm_clip(mats: &mut [&mut Matrix], max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "clip threshold must be positive");
    let mut sq = 0.0;
    for m in mats.iter() {
        sq += dot(m.data(), m.data());
    }
    let norm = sq.sqrt();
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let scale = max_norm / norm;
    for m in mats.iter_mut() {
        m.scale(scale);
    }
    scale
}
