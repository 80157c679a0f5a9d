use crate::error::NnError;

/// Dense row-major array of `f32` with at most three dimensions.
///
/// Matrix-style operations treat a rank-1 tensor `[n]` as a single row
/// `[1 x n]` and a rank-3 tensor `[a, b, c]` as `[a*b x c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self, NnError> {
        if shape.is_empty() || shape.len() > 3 || shape.iter().any(|&d| d == 0) {
            return Err(NnError::dim("tensor", "1 to 3 positive dims", format!("{shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NnError::dim("tensor", n, data.len()));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![value; n]).expect("valid shape")
    }

    pub fn vector(data: Vec<f32>) -> Self {
        let n = data.len();
        Tensor::new(&[n], data).expect("non-empty vector")
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, NnError> {
        Tensor::new(&[rows, cols], data)
    }

    pub fn scalar(value: f32) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Last dimension.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("rank >= 1")
    }

    /// Product of all leading dimensions.
    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    pub fn row(&self, r: usize) -> &[f32] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> f32 {
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, NnError> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.is_empty() || shape.len() > 3 {
            return Err(NnError::dim("reshape", self.data.len(), format!("{shape:?}")));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }
}

/// Fixed-order dot product with eight f32 lanes.
#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let xa = &a[c * 8..c * 8 + 8];
        let xb = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = 0.0f32;
    for k in chunks * 8..a.len() {
        tail += a[k] * b[k];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    debug_assert_eq!(x.len(), y.len());
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[inline(always)]
fn lanes(c: &[f32]) -> &[f32; 8] {
    c.try_into().expect("chunk of eight")
}

#[inline(always)]
fn reduce(acc: &[f32; 8], tail: f32) -> f32 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Four dot products against one shared right-hand side, each summed in
/// the same order as [`dot`].
#[inline(always)]
fn dot4(x: [&[f32]; 4], w: &[f32]) -> [f32; 4] {
    let n = w.len() / 8 * 8;
    let mut acc = [[0.0f32; 8]; 4];
    let it = w[..n]
        .chunks_exact(8)
        .zip(x[0][..n].chunks_exact(8))
        .zip(x[1][..n].chunks_exact(8))
        .zip(x[2][..n].chunks_exact(8))
        .zip(x[3][..n].chunks_exact(8));
    for ((((wc, a), b), c), d) in it {
        let (wc, xs) = (lanes(wc), [lanes(a), lanes(b), lanes(c), lanes(d)]);
        for j in 0..4 {
            for l in 0..8 {
                acc[j][l] += xs[j][l] * wc[l];
            }
        }
    }
    let mut out = [0.0f32; 4];
    for j in 0..4 {
        let mut tail = 0.0f32;
        for k in n..w.len() {
            tail += x[j][k] * w[k];
        }
        out[j] = reduce(&acc[j], tail);
    }
    out
}

/// `y = x . W^T + b` on raw row-major buffers; `y` must be zeroed.
pub(crate) fn matmul_t(x: &[f32], inp: usize, w: &[f32], bias: Option<&[f32]>, y: &mut [f32]) {
    let out = w.len() / inp.max(1);
    if out == 0 || inp == 0 {
        if let Some(b) = bias {
            for yr in y.chunks_exact_mut(out.max(1)) {
                yr.copy_from_slice(&b[..yr.len()]);
            }
        }
        return;
    }
    let rows = x.len() / inp;
    let b_at = |o: usize| bias.map_or(0.0, |b| b[o]);
    let blocks = rows / 4;
    for blk in 0..blocks {
        let r = blk * 4;
        let xr = [0, 1, 2, 3].map(|j| &x[(r + j) * inp..(r + j + 1) * inp]);
        for (o, wo) in w.chunks_exact(inp).enumerate() {
            let d = dot4(xr, wo);
            for j in 0..4 {
                y[(r + j) * out + o] = d[j] + b_at(o);
            }
        }
    }
    for r in blocks * 4..rows {
        let xr = &x[r * inp..(r + 1) * inp];
        for (o, wo) in w.chunks_exact(inp).enumerate() {
            y[r * out + o] = dot(xr, wo) + b_at(o);
        }
    }
}

/// `gx += g . W` for `g` of shape `[rows, out]`, summing over outputs in
/// ascending order and skipping zero upstream entries.
pub(crate) fn linear_grad_input(g: &[f32], w: &[f32], inp: usize, gx: &mut [f32]) {
    let out = w.len() / inp.max(1);
    if out == 0 || inp == 0 {
        return;
    }
    let rows = g.len() / out;
    let blocks = rows / 4;
    for blk in 0..blocks {
        let r = blk * 4;
        let (g0, rest) = gx[r * inp..(r + 4) * inp].split_at_mut(inp);
        let (g1, rest) = rest.split_at_mut(inp);
        let (g2, g3) = rest.split_at_mut(inp);
        for (o, wo) in w.chunks_exact(inp).enumerate() {
            let c = [0, 1, 2, 3].map(|j| g[(r + j) * out + o]);
            if c.iter().all(|&v| v != 0.0) {
                for k in 0..inp {
                    let wk = wo[k];
                    g0[k] += c[0] * wk;
                    g1[k] += c[1] * wk;
                    g2[k] += c[2] * wk;
                    g3[k] += c[3] * wk;
                }
            } else {
                for (gj, &cj) in [&mut *g0, &mut *g1, &mut *g2, &mut *g3].into_iter().zip(&c) {
                    if cj != 0.0 {
                        axpy(cj, wo, gj);
                    }
                }
            }
        }
    }
    for r in blocks * 4..rows {
        let gxr = &mut gx[r * inp..(r + 1) * inp];
        for (o, wo) in w.chunks_exact(inp).enumerate() {
            let go = g[r * out + o];
            if go != 0.0 {
                axpy(go, wo, gxr);
            }
        }
    }
}

/// `acc += g^T . x` in f64, summing over rows in ascending order and
/// skipping zero upstream entries.
pub(crate) fn linear_grad_weight(g: &[f32], x: &[f32], inp: usize, acc: &mut [f64]) {
    let out = acc.len() / inp.max(1);
    if out == 0 || inp == 0 {
        return;
    }
    let rows = x.len() / inp;
    let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    for r in 0..rows {
        let xr = &x64[r * inp..(r + 1) * inp];
        for (o, ao) in acc.chunks_exact_mut(inp).enumerate() {
            let go = g[r * out + o];
            if go != 0.0 {
                let a = go as f64;
                for (av, &xv) in ao.iter_mut().zip(xr) {
                    *av += a * xv;
                }
            }
        }
    }
}

/// Sum of squared differences, accumulated in f64.
pub fn sq_err_sum(pred: &[f32], target: &[f32]) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p as f64 - t as f64;
            d * d
        })
        .sum()
}

/// `y = x . W^T + b` on plain tensors.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor, NnError> {
    let (out, inp) = (weight.rows(), weight.cols());
    if x.cols() != inp {
        return Err(NnError::dim("linear", inp, x.cols()));
    }
    if let Some(b) = bias {
        if b.len() != out {
            return Err(NnError::dim("linear bias", out, b.len()));
        }
    }
    let rows = x.rows();
    let mut y = vec![0.0f32; rows * out];
    matmul_t(x.data(), inp, weight.data(), bias.map(|b| b.data()), &mut y);
    Tensor::matrix(rows, out, y)
}

/// Sum of squares `||pred - target||^2`.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f32, NnError> {
    if pred.shape() != target.shape() {
        return Err(NnError::dim("mse", format!("{:?}", pred.shape()), format!("{:?}", target.shape())));
    }
    Ok(sq_err_sum(pred.data(), target.data()) as f32)
}

/// Mean of squared differences.
pub fn mse_mean(pred: &Tensor, target: &Tensor) -> Result<f32, NnError> {
    let s = mse(pred, target)? as f64;
    Ok((s / pred.len() as f64) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(&[1, 1, 1, 1], vec![0.0]).is_err());
        assert!(Tensor::new(&[0], vec![]).is_err());
        let t = Tensor::new(&[2, 3, 4], vec![0.0; 24]).unwrap();
        assert_eq!((t.rows(), t.cols()), (6, 4));
    }

    #[test]
    fn linear_examples() {
        let id = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::vector(vec![1.0, 2.0]);
        let zero_b = Tensor::vector(vec![0.0, 0.0]);
        assert_eq!(linear(&x, &id, Some(&zero_b)).unwrap().data(), &[1.0, 2.0]);

        let w = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let b = Tensor::vector(vec![3.0]);
        assert_eq!(linear(&Tensor::vector(vec![5.0, 7.0]), &w, Some(&b)).unwrap().data(), &[3.0]);

        let w = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = linear(&Tensor::vector(vec![1.0, 1.0]), &w, Some(&zero_b)).unwrap();
        assert_eq!(y.data(), &[3.0, 7.0]);

        assert!(linear(&Tensor::vector(vec![1.0, 1.0, 1.0]), &w, None).is_err());
    }

    #[test]
    fn mse_examples() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &Tensor::vector(vec![0.0, 0.0])).unwrap(), 5.0);
        assert_eq!(mse(&Tensor::vector(vec![0.5]), &Tensor::vector(vec![0.0])).unwrap(), 0.25);
        assert!(mse(&a, &Tensor::vector(vec![0.0])).is_err());
        assert_eq!(mse_mean(&a, &Tensor::vector(vec![0.0, 0.0])).unwrap(), 2.5);
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f32> = (0..19).map(|i| i as f32 * 0.5 - 3.0).collect();
        let b: Vec<f32> = (0..19).map(|i| (i as f32).sin()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| (*x as f64) * (*y as f64)).sum();
        assert!((dot(&a, &b) as f64 - naive).abs() < 1e-4);
    }
}
