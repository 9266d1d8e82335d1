//! Dense row-major matrices. Rank-2 covers everything this crate computes;
//! vectors are 1xN. Values are held as f64 in memory; the on-disk checkpoint
//! format stores f32 (see `checkpoint`).

use crate::rng::DetRng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "tensor dims must be positive");
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "data length {} != {}x{}",
            data.len(),
            rows,
            cols
        );
        Tensor { rows, cols, data }
    }

    /// 1xN row vector.
    pub fn row(data: Vec<f64>) -> Self {
        let cols = data.len();
        Tensor::from_vec(1, cols, data)
    }

    /// Uniform init in [-bound, bound].
    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut DetRng) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        Tensor::from_vec(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_slice_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn scale_in_place(&mut self, c: f64) {
        self.data.iter_mut().for_each(|x| *x *= c);
    }

    /// self += other
    pub fn add_assign(&mut self, other: &Tensor) {
        assert!(self.same_shape(other), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// argmax per row, first index on ties.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|r| {
                let row = self.row_slice(r);
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}

/// C = A @ B. Zero entries of A are skipped, which makes one-hot heavy
/// inputs (melody tokens, chroma bits) cheap.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(
        a.cols, b.rows,
        "matmul shape mismatch: {}x{} @ {}x{}",
        a.rows, a.cols, b.rows, b.cols
    );
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data[kk * n..(kk + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aik * bv;
            }
        }
    }
    Tensor::from_vec(m, n, c)
}

/// dA += dC @ B^T
pub fn matmul_acc_grad_a(grad_a: &mut Tensor, dc: &Tensor, b: &Tensor) {
    let (m, k, n) = (grad_a.rows, grad_a.cols, b.cols);
    assert_eq!(dc.rows, m);
    assert_eq!(dc.cols, n);
    assert_eq!(b.rows, k);
    for i in 0..m {
        let dcrow = dc.row_slice(i);
        let garow = grad_a.row_slice_mut(i);
        for (kk, g) in garow.iter_mut().enumerate() {
            let brow = &b.data[kk * n..(kk + 1) * n];
            let mut acc = 0.0;
            for (dv, bv) in dcrow.iter().zip(brow) {
                acc += dv * bv;
            }
            *g += acc;
        }
    }
}

/// dB += A^T @ dC
pub fn matmul_acc_grad_b(grad_b: &mut Tensor, a: &Tensor, dc: &Tensor) {
    let (m, k, n) = (a.rows, a.cols, dc.cols);
    assert_eq!(grad_b.rows, k);
    assert_eq!(grad_b.cols, n);
    assert_eq!(dc.rows, m);
    for i in 0..m {
        let arow = a.row_slice(i);
        let dcrow = dc.row_slice(i);
        for (kk, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let gbrow = grad_b.row_slice_mut(kk);
            for (g, &dv) in gbrow.iter_mut().zip(dcrow) {
                *g += aik * dv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eye(n: usize) -> Tensor {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.set(i, i, 1.0);
        }
        t
    }

    #[test]
    fn matmul_identity() {
        let a = Tensor::from_vec(3, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        assert_eq!(matmul(&eye(3), &a), a);
        assert_eq!(matmul(&a, &eye(3)), a);
    }

    #[test]
    fn matmul_known_product() {
        let a = Tensor::from_vec(2, 3, vec![1.0, 0.0, 2.0, -1.0, 3.0, 1.0]);
        let b = Tensor::from_vec(3, 2, vec![3.0, 1.0, 2.0, 1.0, 1.0, 0.0]);
        let c = matmul(&a, &b);
        assert_eq!(c.data(), &[5.0, 1.0, 4.0, 2.0]);
    }

    #[test]
    #[should_panic(expected = "matmul shape mismatch")]
    fn matmul_shape_mismatch_panics() {
        let a = Tensor::zeros(2, 3);
        let b = Tensor::zeros(2, 3);
        matmul(&a, &b);
    }

    #[test]
    fn argmax_rows_ties_to_first() {
        let t = Tensor::from_vec(2, 3, vec![1.0, 3.0, 3.0, 0.5, 0.1, 0.2]);
        assert_eq!(t.argmax_rows(), vec![1, 0]);
    }
}
