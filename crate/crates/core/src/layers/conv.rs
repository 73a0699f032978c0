//! 2-D convolution with "same" zero padding, lowered to im2col + GEMM.
//!
//! Weights are laid out `(kh, kw, cin, cout)` so the flattened kernel is a
//! `(kh*kw*cin) x cout` matrix whose row order matches the im2col columns.

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T = f32> {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// `(kernel, kernel, in_channels, out_channels)` row-major.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T = f32> {
    /// `None` when the caller asked to skip the input gradient.
    pub input: Option<Tensor<T>>,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Output length and leading pad for "same" padding: `out = ceil(len / stride)`.
///
/// Total padding is split with the extra pixel on the trailing side.
pub fn same_padding(len: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let needed = ((out - 1) * stride + kernel).saturating_sub(len);
    (out, needed / 2)
}

impl<T: Real> ConvParams<T> {
    pub fn zeros(kernel: usize, in_channels: usize, out_channels: usize, stride: usize) -> Self {
        ConvParams {
            kernel,
            in_channels,
            out_channels,
            stride,
            weights: vec![T::zero(); kernel * kernel * in_channels * out_channels],
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Rows of the flattened kernel matrix.
    fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    pub fn output_shape(&self, input: Shape) -> Shape {
        let (oh, _) = same_padding(input.h, self.kernel, self.stride);
        let (ow, _) = same_padding(input.w, self.kernel, self.stride);
        Shape::new(input.n, oh, ow, self.out_channels)
    }

    fn validate(&self, input: Shape) -> Result<()> {
        if self.stride == 0 || self.kernel == 0 {
            return Err(Error::config("kernel and stride must be positive"));
        }
        if self.weights.len() != self.patch_len() * self.out_channels
            || self.bias.len() != self.out_channels
        {
            return Err(Error::config(format!(
                "convolution parameters do not match ({k}, {k}, {}, {})",
                self.in_channels,
                self.out_channels,
                k = self.kernel
            )));
        }
        if input.c != self.in_channels {
            return Err(Error::config(format!(
                "input has {} channels but the kernel expects {}",
                input.c, self.in_channels
            )));
        }
        if input.h == 0 || input.w == 0 {
            return Err(Error::config(format!("empty spatial input {input}")));
        }
        Ok(())
    }
}

struct Geometry {
    in_shape: Shape,
    out_h: usize,
    out_w: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Geometry {
    fn new<T: Real>(p: &ConvParams<T>, input: Shape) -> Self {
        let (out_h, pad_top) = same_padding(input.h, p.kernel, p.stride);
        let (out_w, pad_left) = same_padding(input.w, p.kernel, p.stride);
        Geometry {
            in_shape: input,
            out_h,
            out_w,
            pad_top,
            pad_left,
        }
    }

    fn pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input coordinate sampled by output `o` at kernel tap `k`, if inside.
    #[inline]
    fn tap(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
        (o * stride + k).checked_sub(pad).filter(|&i| i < len)
    }
}

/// Unfolds one sample into `cols`, a `(out_h*out_w) x (k*k*cin)` matrix.
fn im2col<T: Real>(p: &ConvParams<T>, g: &Geometry, sample: &[T], cols: &mut [T]) {
    let s = g.in_shape;
    let cin = s.c;
    let row_len = p.patch_len();
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &mut cols[(oy * g.out_w + ox) * row_len..][..row_len];
            for ky in 0..p.kernel {
                let iy = Geometry::tap(oy, ky, p.stride, g.pad_top, s.h);
                for kx in 0..p.kernel {
                    let dst = &mut row[(ky * p.kernel + kx) * cin..][..cin];
                    let ix = Geometry::tap(ox, kx, p.stride, g.pad_left, s.w);
                    match (iy, ix) {
                        (Some(iy), Some(ix)) => {
                            let src = (iy * s.w + ix) * cin;
                            dst.copy_from_slice(&sample[src..src + cin]);
                        }
                        _ => dst.fill(T::zero()),
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column-gradient matrix back onto one input sample.
fn col2im<T: Real>(p: &ConvParams<T>, g: &Geometry, cols: &[T], sample: &mut [T]) {
    let s = g.in_shape;
    let cin = s.c;
    let row_len = p.patch_len();
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &cols[(oy * g.out_w + ox) * row_len..][..row_len];
            for ky in 0..p.kernel {
                let Some(iy) = Geometry::tap(oy, ky, p.stride, g.pad_top, s.h) else {
                    continue;
                };
                for kx in 0..p.kernel {
                    let Some(ix) = Geometry::tap(ox, kx, p.stride, g.pad_left, s.w) else {
                        continue;
                    };
                    let src = &row[(ky * p.kernel + kx) * cin..][..cin];
                    let dst = &mut sample[(iy * s.w + ix) * cin..][..cin];
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d += v;
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Real>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    params.validate(input.shape())?;
    let g = Geometry::new(params, input.shape());
    let out_shape = params.output_shape(input.shape());
    let (pixels, k, cout) = (g.pixels(), params.patch_len(), params.out_channels);

    let mut out = Tensor::zeros(out_shape);
    let mut cols = vec![T::zero(); pixels * k];
    for n in 0..out_shape.n {
        im2col(params, &g, input.sample(n), &mut cols);
        let dst = out.sample_mut(n);
        for px in dst.chunks_exact_mut(cout) {
            px.copy_from_slice(&params.bias);
        }
        // SAFETY: cols is pixels x k, weights is k x cout, dst is pixels x cout,
        // all row-major and sized above.
        unsafe {
            T::gemm(
                pixels,
                k,
                cout,
                T::one(),
                cols.as_ptr(),
                k as isize,
                1,
                params.weights.as_ptr(),
                cout as isize,
                1,
                T::one(),
                dst.as_mut_ptr(),
                cout as isize,
                1,
            );
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to its input, weights and bias.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    conv2d_backward_opt(input, params, upstream, true)
}

/// As [`conv2d_backward`]; `need_input = false` skips the input gradient
/// (the first layer of a network never needs it).
pub fn conv2d_backward_opt<T: Real>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    upstream: &Tensor<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    params.validate(input.shape())?;
    let expected = params.output_shape(input.shape());
    if upstream.shape() != expected {
        return Err(Error::config(format!(
            "upstream gradient shape {} does not match convolution output {}",
            upstream.shape(),
            expected
        )));
    }
    let g = Geometry::new(params, input.shape());
    let (pixels, k, cout) = (g.pixels(), params.patch_len(), params.out_channels);

    let mut grad_w = vec![T::zero(); k * cout];
    let mut grad_b = vec![T::zero(); cout];
    let mut grad_in = need_input.then(|| Tensor::zeros(input.shape()));
    let mut cols = vec![T::zero(); pixels * k];

    for n in 0..input.shape().n {
        let up = upstream.sample(n);
        for px in up.chunks_exact(cout) {
            for (b, &v) in grad_b.iter_mut().zip(px) {
                *b += v;
            }
        }

        im2col(params, &g, input.sample(n), &mut cols);
        // grad_w += cols^T * up
        // SAFETY: cols^T is k x pixels via swapped strides; up is pixels x cout.
        unsafe {
            T::gemm(
                k,
                pixels,
                cout,
                T::one(),
                cols.as_ptr(),
                1,
                k as isize,
                up.as_ptr(),
                cout as isize,
                1,
                T::one(),
                grad_w.as_mut_ptr(),
                cout as isize,
                1,
            );
        }

        if let Some(gi) = grad_in.as_mut() {
            // cols <- up * W^T
            // SAFETY: up is pixels x cout; W^T is cout x k via swapped strides.
            unsafe {
                T::gemm(
                    pixels,
                    cout,
                    k,
                    T::one(),
                    up.as_ptr(),
                    cout as isize,
                    1,
                    params.weights.as_ptr(),
                    1,
                    cout as isize,
                    T::zero(),
                    cols.as_mut_ptr(),
                    k as isize,
                    1,
                );
            }
            col2im(params, &g, &cols, gi.sample_mut(n));
        }
    }

    Ok(ConvGrads {
        input: grad_in,
        weights: grad_w,
        bias: grad_b,
    })
}
