//! Forward and backward passes for the layer set used by the part networks:
//! same-padded stride-1 convolution, 3x3/2 max pooling, dense layers, relu
//! and the two-way softmax cross-entropy.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{gemm, MatRef, Real, Tensor};

/// Output size of a valid 3x3 window with stride 2, or `None` if `n < 3`.
pub fn pool_out_dim(n: usize) -> Option<usize> {
    (n >= 3).then(|| (n - 3) / 2 + 1)
}

struct ConvGeom {
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
}

impl ConvGeom {
    fn new<T: Real>(input: &Tensor<T>, kernel: &Tensor<T>) -> Result<Self> {
        let (h, w, cin) = input.dims3()?;
        let (kh, kw, kcin, cout) = match kernel.shape()[..] {
            [a, b, c, d] => (a, b, c, d),
            _ => return Err(shape_err!("conv kernel must be rank 4, got {:?}", kernel.shape())),
        };
        if kcin != cin {
            return Err(shape_err!("conv kernel expects {} input channels, input has {}", kcin, cin));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(shape_err!("conv kernel spatial dims must be odd, got {}x{}", kh, kw));
        }
        Ok(Self { h, w, cin, kh, kw, cout })
    }

    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    /// Unrolls zero-padded receptive fields into a `(h*w) x (kh*kw*cin)` matrix.
    fn im2col<T: Real>(&self, input: &[T]) -> Vec<T> {
        let (ph, pw) = ((self.kh / 2) as isize, (self.kw / 2) as isize);
        let patch = self.patch_len();
        let mut col = vec![T::zero(); self.h * self.w * patch];
        for y in 0..self.h {
            for x in 0..self.w {
                let row = &mut col[(y * self.w + x) * patch..][..patch];
                for ky in 0..self.kh {
                    let sy = y as isize + ky as isize - ph;
                    if sy < 0 || sy >= self.h as isize {
                        continue;
                    }
                    for kx in 0..self.kw {
                        let sx = x as isize + kx as isize - pw;
                        if sx < 0 || sx >= self.w as isize {
                            continue;
                        }
                        let src = (sy as usize * self.w + sx as usize) * self.cin;
                        let dst = (ky * self.kw + kx) * self.cin;
                        row[dst..dst + self.cin].copy_from_slice(&input[src..src + self.cin]);
                    }
                }
            }
        }
        col
    }

    fn col2im<T: Real>(&self, col: &[T]) -> Vec<T> {
        let (ph, pw) = ((self.kh / 2) as isize, (self.kw / 2) as isize);
        let patch = self.patch_len();
        let mut out = vec![T::zero(); self.h * self.w * self.cin];
        for y in 0..self.h {
            for x in 0..self.w {
                let row = &col[(y * self.w + x) * patch..][..patch];
                for ky in 0..self.kh {
                    let sy = y as isize + ky as isize - ph;
                    if sy < 0 || sy >= self.h as isize {
                        continue;
                    }
                    for kx in 0..self.kw {
                        let sx = x as isize + kx as isize - pw;
                        if sx < 0 || sx >= self.w as isize {
                            continue;
                        }
                        let dst = (sy as usize * self.w + sx as usize) * self.cin;
                        let src = (ky * self.kw + kx) * self.cin;
                        for c in 0..self.cin {
                            out[dst + c] = out[dst + c] + row[src + c];
                        }
                    }
                }
            }
        }
        out
    }
}

/// Same-padded, stride-1 cross-correlation plus bias.
pub fn conv2d<T: Real>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let g = ConvGeom::new(input, kernel)?;
    if bias.len() != g.cout {
        return Err(shape_err!("conv bias has {} entries, expected {}", bias.len(), g.cout));
    }
    let col = g.im2col(input.data());
    let rows = g.h * g.w;
    let mut out = Vec::with_capacity(rows * g.cout);
    for _ in 0..rows {
        out.extend_from_slice(bias.data());
    }
    gemm(
        MatRef::new(&col, rows, g.patch_len()),
        MatRef::new(kernel.data(), g.patch_len(), g.cout),
        &mut out,
        T::one(),
    );
    Tensor::new(vec![g.h, g.w, g.cout], out)
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T = f32> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = ConvGeom::new(input, kernel)?;
    if grad_out.shape() != [g.h, g.w, g.cout] {
        return Err(shape_err!(
            "conv output gradient has shape {:?}, expected {:?}",
            grad_out.shape(),
            [g.h, g.w, g.cout]
        ));
    }
    let rows = g.h * g.w;
    let patch = g.patch_len();
    let col = g.im2col(input.data());
    let gout = MatRef::new(grad_out.data(), rows, g.cout);

    let mut gk = vec![T::zero(); patch * g.cout];
    gemm(MatRef::new(&col, rows, patch).t(), gout, &mut gk, T::zero());

    let mut gb = vec![T::zero(); g.cout];
    for row in grad_out.data().chunks_exact(g.cout) {
        for (acc, v) in gb.iter_mut().zip(row) {
            *acc = *acc + *v;
        }
    }

    let mut gcol = vec![T::zero(); rows * patch];
    gemm(gout, MatRef::new(kernel.data(), patch, g.cout).t(), &mut gcol, T::zero());
    let gi = g.col2im(&gcol);

    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), gi)?,
        kernel: Tensor::new(kernel.shape().to_vec(), gk)?,
        bias: Tensor::new(vec![g.cout], gb)?,
    })
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Gradient through relu given the layer's *output*.
pub fn relu_backward<T: Real>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if output.shape() != grad_out.shape() {
        return Err(shape_err!("relu gradient shape {:?} vs {:?}", grad_out.shape(), output.shape()));
    }
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&o, &g)| if o > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(output.shape().to_vec(), data)
}

/// Max-pool output together with the flat input index each output came from.
#[derive(Clone, Debug)]
pub struct Pooled<T = f32> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
}

pub fn maxpool3x3s2<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(maxpool3x3s2_indexed(input)?.output)
}

pub fn maxpool3x3s2_indexed<T: Real>(input: &Tensor<T>) -> Result<Pooled<T>> {
    let (h, w, c) = input.dims3()?;
    let (oh, ow) = match (pool_out_dim(h), pool_out_dim(w)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(shape_err!("max pool needs at least 3x3 input, got {}x{}", h, w)),
    };
    let src = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut argmax = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best_idx = (2 * oy * w + 2 * ox) * c + ch;
                let mut best = src[best_idx];
                for dy in 0..3 {
                    for dx in 0..3 {
                        let idx = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        // strict comparison keeps the first maximum on ties
                        if src[idx] > best {
                            best = src[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok(Pooled { output: Tensor::new(vec![oh, ow, c], out)?, argmax })
}

pub fn maxpool3x3s2_backward<T: Real>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != grad_out.len() {
        return Err(shape_err!("pool gradient has {} entries, argmax {}", grad_out.len(), argmax.len()));
    }
    let mut grad = Tensor::zeros(input_shape);
    let gi = grad.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        gi[idx] = gi[idx] + g;
    }
    Ok(grad)
}

/// Affine map `x * W + b` with `W` stored `din x dout`. Any input rank is
/// accepted and flattened.
pub fn dense<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (din, dout) = dense_dims(input, weight)?;
    let mut out = match bias {
        Some(b) if b.len() != dout => {
            return Err(shape_err!("dense bias has {} entries, expected {}", b.len(), dout))
        }
        Some(b) => b.data().to_vec(),
        None => vec![T::zero(); dout],
    };
    gemm(MatRef::new(input.data(), 1, din), MatRef::new(weight.data(), din, dout), &mut out, T::one());
    Tensor::new(vec![dout], out)
}

#[derive(Clone, Debug)]
pub struct DenseGrads<T = f32> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let (din, dout) = dense_dims(input, weight)?;
    if grad_out.len() != dout {
        return Err(shape_err!("dense output gradient has {} entries, expected {}", grad_out.len(), dout));
    }
    let mut gw = vec![T::zero(); din * dout];
    gemm(
        MatRef::new(input.data(), 1, din).t(),
        MatRef::new(grad_out.data(), 1, dout),
        &mut gw,
        T::zero(),
    );
    let mut gx = vec![T::zero(); din];
    gemm(
        MatRef::new(grad_out.data(), 1, dout),
        MatRef::new(weight.data(), din, dout).t(),
        &mut gx,
        T::zero(),
    );
    Ok(DenseGrads {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        weight: Tensor::new(weight.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![dout], grad_out.data().to_vec())?,
    })
}

fn dense_dims<T: Real>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize)> {
    let (din, dout) = match weight.shape()[..] {
        [a, b] => (a, b),
        _ => return Err(shape_err!("dense weight must be rank 2, got {:?}", weight.shape())),
    };
    if input.len() != din {
        return Err(shape_err!("dense layer expects {} inputs, got {}", din, input.len()));
    }
    Ok((din, dout))
}

/// Loss and logit gradient of a two-way softmax for one label, evaluated in
/// f64 with max subtraction.
pub(crate) fn softmax_xent_pair(l0: f64, l1: f64, label: u8) -> (f64, [f64; 2]) {
    let m = l0.max(l1);
    let lse = m + ((l0 - m).exp() + (l1 - m).exp()).ln();
    let p = [(l0 - lse).exp(), (l1 - lse).exp()];
    let target = if label == 0 { l0 } else { l1 };
    let mut grad = p;
    grad[label as usize] -= 1.0;
    ((lse - target).max(0.0), grad)
}

/// `-log p(label)` under a two-way softmax and its gradient `p - onehot`.
pub fn softmax_xent<T: Real>(logits: &Tensor<T>, label: u8) -> Result<(f64, Tensor<T>)> {
    if logits.len() != 2 {
        return Err(shape_err!("softmax_xent expects 2 logits, got {}", logits.len()));
    }
    if label > 1 {
        return Err(Error::InvalidArgument(format!("label must be 0 or 1, got {label}")));
    }
    if !logits.is_finite() {
        return Err(Error::InvalidArgument("non-finite logits".into()));
    }
    let d = logits.data();
    let (loss, g) = softmax_xent_pair(d[0].as_f64(), d[1].as_f64(), label);
    let grad = Tensor::new(logits.shape().to_vec(), g.iter().map(|&v| T::from_f64_lossy(v)).collect())?;
    Ok((loss, grad))
}

/// Two-way softmax probabilities.
pub fn softmax2(l0: f64, l1: f64) -> [f64; 2] {
    let m = l0.max(l1);
    let (e0, e1) = ((l0 - m).exp(), (l1 - m).exp());
    [e0 / (e0 + e1), e1 / (e0 + e1)]
}
