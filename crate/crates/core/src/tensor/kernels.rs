//! Forward kernels and the adjoint helpers the graph uses for backward.
//!
//! All reductions run in ascending index order.

use super::gemm::{gemm, MatRef};
use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Norm2,
}

/// Geometry of a batched valid convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_height: usize,
    pub out_width: usize,
    /// Whether the caller passed an unbatched `[C, H, W]` input.
    pub unbatched: bool,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernels: &[usize], bias: &[usize], stride: usize) -> Result<Self> {
        const OP: &str = "conv2d";
        let (batch, rest, unbatched) = match input.len() {
            3 => (1, input, true),
            4 => (input[0], &input[1..], false),
            _ => return Err(TensorError::dim(OP, format!("input must be [C,H,W] or [B,C,H,W], got {input:?}"))),
        };
        let (in_channels, height, width) = (rest[0], rest[1], rest[2]);
        if kernels.len() != 4 || kernels[2] != kernels[3] {
            return Err(TensorError::dim(OP, format!("kernels must be [O,C,k,k], got {kernels:?}")));
        }
        if kernels[1] != in_channels {
            return Err(TensorError::dim(OP, format!("input has {in_channels} channels, kernels expect {}", kernels[1])));
        }
        if bias != [kernels[0]] {
            return Err(TensorError::dim(OP, format!("bias {bias:?} does not match {} kernels", kernels[0])));
        }
        if stride == 0 {
            return Err(TensorError::contract(OP, "stride must be positive"));
        }
        let kernel = kernels[2];
        if height < kernel || width < kernel {
            return Err(TensorError::dim(OP, format!("input {height}x{width} smaller than kernel {kernel}")));
        }
        Ok(ConvGeometry {
            batch,
            in_channels,
            height,
            width,
            out_channels: kernels[0],
            kernel,
            stride,
            out_height: (height - kernel) / stride + 1,
            out_width: (width - kernel) / stride + 1,
            unbatched,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn positions(&self) -> usize {
        self.out_height * self.out_width
    }

    pub fn output_shape(&self) -> Vec<usize> {
        if self.unbatched {
            vec![self.out_channels, self.out_height, self.out_width]
        } else {
            vec![self.batch, self.out_channels, self.out_height, self.out_width]
        }
    }
}

/// Unfolds receptive fields into a `[C*k*k, B*H'*W']` matrix.
pub fn im2col(x: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (k, s) = (g.kernel, g.stride);
    let positions = g.positions();
    let cols_n = g.batch * positions;
    let mut cols = vec![0.0; g.patch_len() * cols_n];
    for c in 0..g.in_channels {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * cols_n..(row + 1) * cols_n];
                for b in 0..g.batch {
                    let plane = &x[(b * g.in_channels + c) * g.height * g.width..];
                    for oy in 0..g.out_height {
                        let src = &plane[(oy * s + ki) * g.width + kj..];
                        let out = &mut dst[b * positions + oy * g.out_width..];
                        for ox in 0..g.out_width {
                            out[ox] = src[ox * s];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds columns back onto the input layout.
pub fn col2im(cols: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (k, s) = (g.kernel, g.stride);
    let positions = g.positions();
    let cols_n = g.batch * positions;
    let mut x = vec![0.0; g.batch * g.in_channels * g.height * g.width];
    for c in 0..g.in_channels {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * cols_n..(row + 1) * cols_n];
                for b in 0..g.batch {
                    let plane = &mut x[(b * g.in_channels + c) * g.height * g.width..];
                    for oy in 0..g.out_height {
                        let from = &src[b * positions + oy * g.out_width..];
                        let base = (oy * s + ki) * g.width + kj;
                        for ox in 0..g.out_width {
                            plane[base + ox * s] += from[ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Valid cross-correlation plus bias. Returns the output and the unfolded
/// input (needed for the kernel gradient).
pub fn conv2d_forward(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Result<(Tensor, Vec<f64>, ConvGeometry)> {
    let g = ConvGeometry::new(x.shape(), w.shape(), b.shape(), stride)?;
    let cols = im2col(x.data(), &g);
    let cols_n = g.batch * g.positions();
    let mut y = vec![0.0; g.out_channels * cols_n];
    gemm(MatRef::new(w.data(), g.out_channels, g.patch_len()), MatRef::new(&cols, g.patch_len(), cols_n), &mut y, false);
    let positions = g.positions();
    let mut out = vec![0.0; y.len()];
    for o in 0..g.out_channels {
        let bias = b.data()[o];
        let row = &y[o * cols_n..(o + 1) * cols_n];
        for bi in 0..g.batch {
            let dst = &mut out[(bi * g.out_channels + o) * positions..][..positions];
            for (d, &v) in dst.iter_mut().zip(&row[bi * positions..(bi + 1) * positions]) {
                *d = v + bias;
            }
        }
    }
    Ok((Tensor::from_parts(g.output_shape(), out), cols, g))
}

pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Result<Tensor> {
    conv2d_forward(x, w, b, stride).map(|(y, _, _)| y)
}

/// Output gradient rearranged from `[B, O, P]` to `[O, B*P]`.
pub fn conv_grad_matrix(grad: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let positions = g.positions();
    let cols_n = g.batch * positions;
    let mut gy = vec![0.0; g.out_channels * cols_n];
    for bi in 0..g.batch {
        for o in 0..g.out_channels {
            let src = &grad[(bi * g.out_channels + o) * positions..][..positions];
            gy[o * cols_n + bi * positions..][..positions].copy_from_slice(src);
        }
    }
    gy
}

/// Kernel, bias and (optionally) input gradients of [`conv2d_forward`].
pub fn conv2d_backward(gy: &[f64], cols: &[f64], w: &Tensor, g: &ConvGeometry, need_input: bool) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let cols_n = g.batch * g.positions();
    let gyt = conv_grad_matrix(gy, g);
    let mut gw = vec![0.0; g.out_channels * g.patch_len()];
    gemm(MatRef::new(&gyt, g.out_channels, cols_n), MatRef::new(cols, g.patch_len(), cols_n).t(), &mut gw, false);
    let gb = gyt.chunks_exact(cols_n).map(|row| row.iter().sum()).collect();
    let gx = need_input.then(|| {
        let mut gcols = vec![0.0; g.patch_len() * cols_n];
        gemm(MatRef::new(w.data(), g.out_channels, g.patch_len()).t(), MatRef::new(&gyt, g.out_channels, cols_n), &mut gcols, false);
        col2im(&gcols, g)
    });
    (gx, gw, gb)
}

/// Shapes of a batched matrix-vector product: `w: [N, M, R, P]`,
/// `u: [N, P]` or `[B, N, P]`.
#[derive(Debug, Clone, Copy)]
pub struct MatvecGeometry {
    pub batch: usize,
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub p: usize,
    pub unbatched: bool,
}

impl MatvecGeometry {
    pub fn new(w: &[usize], u: &[usize]) -> Result<Self> {
        const OP: &str = "batched_matvec";
        if w.len() != 4 {
            return Err(TensorError::dim(OP, format!("transforms must be [N,M,R,P], got {w:?}")));
        }
        let (batch, rest, unbatched) = match u.len() {
            2 => (1, u, true),
            3 => (u[0], &u[1..], false),
            _ => return Err(TensorError::dim(OP, format!("vectors must be [N,P] or [B,N,P], got {u:?}"))),
        };
        if rest[0] != w[0] || rest[1] != w[3] {
            return Err(TensorError::dim(OP, format!("transforms {w:?} incompatible with vectors {u:?}")));
        }
        Ok(MatvecGeometry { batch, n: w[0], m: w[1], r: w[2], p: w[3], unbatched })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        if self.unbatched {
            vec![self.n, self.m, self.r]
        } else {
            vec![self.batch, self.n, self.m, self.r]
        }
    }
}

/// `out[b, i, j, :] = w[i, j, :, :] · u[b, i, :]`.
pub fn batched_matvec(w: &Tensor, u: &Tensor) -> Result<Tensor> {
    let g = MatvecGeometry::new(w.shape(), u.shape())?;
    let (n, m, r, p) = (g.n, g.m, g.r, g.p);
    let mut out = vec![0.0; g.batch * n * m * r];
    let wd = w.data();
    for b in 0..g.batch {
        for i in 0..n {
            let ui = &u.data()[(b * n + i) * p..][..p];
            for j in 0..m {
                for row in 0..r {
                    let wrow = &wd[((i * m + j) * r + row) * p..][..p];
                    let mut acc = 0.0;
                    for q in 0..p {
                        acc += wrow[q] * ui[q];
                    }
                    out[((b * n + i) * m + j) * r + row] = acc;
                }
            }
        }
    }
    Ok(Tensor::from_parts(g.output_shape(), out))
}

/// Gradients of [`batched_matvec`] with respect to `w` and `u`.
pub fn batched_matvec_backward(w: &Tensor, u: &Tensor, grad: &[f64], need_w: bool, need_u: bool) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let g = MatvecGeometry::new(w.shape(), u.shape()).expect("validated in forward");
    let (n, m, r, p) = (g.n, g.m, g.r, g.p);
    let wd = w.data();
    let ud = u.data();
    let gw = need_w.then(|| {
        let mut gw = vec![0.0; n * m * r * p];
        for b in 0..g.batch {
            for i in 0..n {
                let ui = &ud[(b * n + i) * p..][..p];
                for jr in 0..m * r {
                    let go = grad[(b * n + i) * m * r + jr];
                    let dst = &mut gw[(i * m * r + jr) * p..][..p];
                    for q in 0..p {
                        dst[q] += go * ui[q];
                    }
                }
            }
        }
        gw
    });
    let gu = need_u.then(|| {
        let mut gu = vec![0.0; g.batch * n * p];
        for b in 0..g.batch {
            for i in 0..n {
                let dst = &mut gu[(b * n + i) * p..][..p];
                for jr in 0..m * r {
                    let go = grad[(b * n + i) * m * r + jr];
                    let wrow = &wd[(i * m * r + jr) * p..][..p];
                    for q in 0..p {
                        dst[q] += go * wrow[q];
                    }
                }
            }
        }
        gu
    });
    (gw, gu)
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
pub fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::contract(op, format!("axis {axis} out of range for shape {shape:?}")));
    }
    Ok(())
}

/// Numerically stable softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    check_axis("softmax", x.shape(), axis)?;
    let (outer, len, inner) = axis_extents(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    let mut exps = vec![0.0; len];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let mut max = f64::NEG_INFINITY;
            for k in 0..len {
                max = max.max(xd[at(k)]);
            }
            let mut total = 0.0;
            for k in 0..len {
                exps[k] = (xd[at(k)] - max).exp();
                total += exps[k];
            }
            for k in 0..len {
                out[at(k)] = exps[k] / total;
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Vector-Jacobian product of softmax given its output `y`.
pub fn softmax_backward(y: &Tensor, grad: &[f64], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = axis_extents(y.shape(), axis);
    let yd = y.data();
    let mut gx = vec![0.0; yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let mut dot = 0.0;
            for k in 0..len {
                dot += grad[at(k)] * yd[at(k)];
            }
            for k in 0..len {
                gx[at(k)] = yd[at(k)] * (grad[at(k)] - dot);
            }
        }
    }
    gx
}

fn reduced_shape(shape: &[usize], axis: Option<usize>) -> Vec<usize> {
    match axis {
        None => Vec::new(),
        Some(a) => shape.iter().enumerate().filter(|&(i, _)| i != a).map(|(_, &d)| d).collect(),
    }
}

/// Sum, mean or Euclidean norm over one axis (`Some`) or all values (`None`).
/// The reduced axis is removed from the shape.
pub fn reduce(kind: ReduceKind, x: &Tensor, axis: Option<usize>) -> Result<Tensor> {
    let shape = x.shape();
    let (outer, len, inner) = match axis {
        Some(a) => {
            check_axis("reduce", shape, a)?;
            axis_extents(shape, a)
        }
        None => (1, x.len(), 1),
    };
    let xd = x.data();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let mut acc = 0.0;
            for k in 0..len {
                let v = xd[(o * len + k) * inner + i];
                acc += match kind {
                    ReduceKind::Norm2 => v * v,
                    _ => v,
                };
            }
            out[o * inner + i] = match kind {
                ReduceKind::Sum => acc,
                ReduceKind::Mean => acc / len as f64,
                ReduceKind::Norm2 => acc.sqrt(),
            };
        }
    }
    Ok(Tensor::from_parts(reduced_shape(shape, axis), out))
}

pub fn reduce_backward(kind: ReduceKind, x: &Tensor, y: &Tensor, grad: &[f64], axis: Option<usize>) -> Vec<f64> {
    let (outer, len, inner) = match axis {
        Some(a) => axis_extents(x.shape(), a),
        None => (1, x.len(), 1),
    };
    let xd = x.data();
    let yd = y.data();
    let mut gx = vec![0.0; xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let g = grad[o * inner + i];
            let scale = match kind {
                ReduceKind::Sum => g,
                ReduceKind::Mean => g / len as f64,
                // The norm is not differentiable at the origin; take the zero subgradient.
                ReduceKind::Norm2 => {
                    let n = yd[o * inner + i];
                    if n > 0.0 {
                        g / n
                    } else {
                        0.0
                    }
                }
            };
            for k in 0..len {
                let at = (o * len + k) * inner + i;
                gx[at] = match kind {
                    ReduceKind::Norm2 => scale * xd[at],
                    _ => scale,
                };
            }
        }
    }
    gx
}

/// Fully connected layer `x · wᵀ + b` with `x: [B, in]`, `w: [out, in]`.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    const OP: &str = "linear";
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || b.shape() != [ws[0]] {
        return Err(TensorError::dim(OP, format!("input {xs:?}, weight {ws:?}, bias {:?}", b.shape())));
    }
    let (batch, inputs, outputs) = (xs[0], xs[1], ws[0]);
    let mut y = vec![0.0; batch * outputs];
    gemm(MatRef::new(x.data(), batch, inputs), MatRef::new(w.data(), outputs, inputs).t(), &mut y, false);
    for row in y.chunks_exact_mut(outputs) {
        for (v, bias) in row.iter_mut().zip(b.data()) {
            *v += bias;
        }
    }
    Ok(Tensor::from_parts(vec![batch, outputs], y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Six nested loops, summing channel, kernel row, kernel column in
    /// ascending order with one fused multiply-add per term, bias added last.
    fn direct_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Tensor {
        let (c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (c_out, k) = (w.shape()[0], w.shape()[2]);
        let (oh, ow) = ((h - k) / stride + 1, (wd - k) / stride + 1);
        let mut out = Tensor::zeros(&[c_out, oh, ow]);
        for o in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..c_in {
                        for ki in 0..k {
                            for kj in 0..k {
                                acc = x.at(&[c, oy * stride + ki, ox * stride + kj]).mul_add(w.at(&[o, c, ki, kj]), acc);
                            }
                        }
                    }
                    let off = out.offset(&[o, oy, ox]);
                    out.data_mut()[off] = acc + b.data()[o];
                }
            }
        }
        out
    }

    #[test]
    fn conv_table_shapes() {
        let x = Tensor::zeros(&[1, 28, 28]);
        let w = Tensor::zeros(&[4, 1, 9, 9]);
        let y = conv2d(&x, &w, &Tensor::zeros(&[4]), 1).unwrap();
        assert_eq!(y.shape(), &[4, 20, 20]);
        let x = Tensor::zeros(&[3, 20, 20]);
        let w = Tensor::zeros(&[2, 3, 9, 9]);
        let y = conv2d(&x, &w, &Tensor::zeros(&[2]), 2).unwrap();
        assert_eq!(y.shape(), &[2, 6, 6]);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&mut rng, &[1, 5, 5]);
        let w = Tensor::full(&[1, 1, 1, 1], 1.0);
        let y = conv2d(&x, &w, &Tensor::zeros(&[1]), 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor(&mut rng, &[1, 5, 5]);
        let w = random_tensor(&mut rng, &[2, 1, 3, 3]);
        let b = random_tensor(&mut rng, &[2]);
        let y = conv2d(&x, &w, &b, 1).unwrap();
        let oracle = direct_conv(&x, &w, &b, 1);
        for (a, e) in y.data().iter().zip(oracle.data()) {
            assert!((a - e).abs() <= 1e-12);
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let err = conv2d(&Tensor::zeros(&[2, 5, 5]), &Tensor::zeros(&[1, 3, 3, 3]), &Tensor::zeros(&[1]), 1);
        assert!(matches!(err, Err(TensorError::Dimension { .. })));
    }

    proptest! {
        #[test]
        fn conv_bit_identical_to_direct_loops(
            seed in 0u64..10_000,
            c_in in 1usize..=3,
            c_out in 1usize..=3,
            h in 1usize..=8,
            w in 1usize..=8,
            k in 1usize..=4,
            stride in 1usize..=3,
        ) {
            prop_assume!(k <= h && k <= w);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_tensor(&mut rng, &[c_in, h, w]);
            let kern = random_tensor(&mut rng, &[c_out, c_in, k, k]);
            let b = random_tensor(&mut rng, &[c_out]);
            prop_assert_eq!(conv2d(&x, &kern, &b, stride).unwrap(), direct_conv(&x, &kern, &b, stride));
        }

        #[test]
        fn softmax_normalized_and_shift_invariant(
            seed in 0u64..10_000,
            dims in proptest::collection::vec(1usize..5, 1..4),
            axis_pick in 0usize..3,
            shift in -1000.0f64..1000.0,
        ) {
            let axis = axis_pick % dims.len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_tensor(&mut rng, &dims);
            let y = softmax(&x, axis).unwrap();
            let sums = reduce(ReduceKind::Sum, &y, Some(axis)).unwrap();
            for s in sums.data() {
                prop_assert!((s - 1.0).abs() <= 1e-12);
            }
            let shifted = Tensor::new(dims.clone(), x.data().iter().map(|v| v + shift).collect()).unwrap();
            let ys = softmax(&shifted, axis).unwrap();
            for (a, b) in y.data().iter().zip(ys.data()) {
                prop_assert!(*a >= 0.0);
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn matvec_identity_zero_and_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // identity transforms
        let (n, m, p) = (3, 2, 4);
        let mut w = Tensor::zeros(&[n, m, p, p]);
        for i in 0..n {
            for j in 0..m {
                for d in 0..p {
                    let off = w.offset(&[i, j, d, d]);
                    w.data_mut()[off] = 1.0;
                }
            }
        }
        let u = random_tensor(&mut rng, &[n, p]);
        let votes = batched_matvec(&w, &u).unwrap();
        for i in 0..n {
            for j in 0..m {
                for d in 0..p {
                    assert_eq!(votes.at(&[i, j, d]), u.at(&[i, d]));
                }
            }
        }
        let zero = batched_matvec(&random_tensor(&mut rng, &[n, m, 2, p]), &Tensor::zeros(&[n, p])).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));

        let (n, m, r, p) = (3, 2, 2, 4);
        let w = random_tensor(&mut rng, &[n, m, r, p]);
        let u = random_tensor(&mut rng, &[n, p]);
        let votes = batched_matvec(&w, &u).unwrap();
        for i in 0..n {
            for j in 0..m {
                for row in 0..r {
                    let mut acc = 0.0;
                    for q in 0..p {
                        acc += w.at(&[i, j, row, q]) * u.at(&[i, q]);
                    }
                    assert!((votes.at(&[i, j, row]) - acc).abs() <= 1e-12);
                }
            }
        }
        assert!(batched_matvec(&w, &Tensor::zeros(&[n, p + 1])).is_err());
    }

    #[test]
    fn softmax_analytic_cases() {
        let y = softmax(&Tensor::full(&[4], 0.7), 0).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let y = softmax(&Tensor::from_vec(vec![0.0, 3f64.ln()]), 0).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-12 && (y.data()[1] - 0.75).abs() < 1e-12);
        let y1 = softmax(&Tensor::from_vec(vec![1000.0, 1000.0 + 3f64.ln()]), 0).unwrap();
        for (a, b) in y.data().iter().zip(y1.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(softmax(&y, 1).is_err());
    }

    #[test]
    fn reductions() {
        let v = Tensor::from_vec(vec![3.0, 4.0]);
        assert_eq!(reduce(ReduceKind::Norm2, &v, None).unwrap().item(), Some(5.0));
        assert_eq!(reduce(ReduceKind::Sum, &Tensor::full(&[10], 1.0), Some(0)).unwrap().item(), Some(10.0));
        assert_eq!(reduce(ReduceKind::Mean, &Tensor::from_vec(vec![1.0, 2.0, 3.0]), None).unwrap().item(), Some(2.0));
        let m = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let rows = reduce(ReduceKind::Sum, &m, Some(1)).unwrap();
        assert_eq!(rows.shape(), &[2]);
        assert_eq!(rows.data(), &[6.0, 15.0]);
        let cols = reduce(ReduceKind::Sum, &m, Some(0)).unwrap();
        assert_eq!(cols.data(), &[5.0, 7.0, 9.0]);
    }

    #[test]
    fn pointwise_functions() {
        assert_eq!(relu(-2.5), 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
