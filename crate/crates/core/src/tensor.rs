//! Dense rank-4 tensors in `(n, h, w, c)` row-major order.

use std::fmt;
use std::ops::{AddAssign, Index, IndexMut};

use num_traits::Float;

/// Floating-point element type usable by every layer.
///
/// The model runs at `f32`; `f64` exists so gradient checks can be run
/// against a tighter finite-difference tolerance.
pub trait Real: Float + Default + AddAssign + Send + Sync + fmt::Debug + 'static {
    fn lit(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `c <- alpha * a * b + beta * c` on strided row/column-major matrices.
    ///
    /// # Safety
    /// Strides and dimensions must describe valid regions of the given slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    fn lit(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    fn lit(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Tensor dimensions `(n, h, w, c)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub const fn new(n: usize, h: usize, w: usize, c: usize) -> Self {
        Shape { n, h, w, c }
    }

    pub const fn len(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one sample.
    pub const fn sample_len(&self) -> usize {
        self.h * self.w * self.c
    }

    #[inline]
    pub const fn offset(&self, n: usize, y: usize, x: usize, c: usize) -> usize {
        ((n * self.h + y) * self.w + x) * self.c + c
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.h, self.w, self.c)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// Wraps `data`; panics if its length disagrees with `shape`.
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            shape.len(),
            "tensor data length does not match shape {shape}"
        );
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.shape.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.shape.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// Copy of sample `n` as a batch of one.
    pub fn select(&self, n: usize) -> Tensor<T> {
        Tensor::from_vec(
            Shape::new(1, self.shape.h, self.shape.w, self.shape.c),
            self.sample(n).to_vec(),
        )
    }

    /// Concatenates equally shaped tensors along the batch axis.
    pub fn stack(parts: &[Tensor<T>]) -> Option<Tensor<T>> {
        let first = parts.first()?.shape;
        let mut data = Vec::with_capacity(first.sample_len() * parts.len());
        let mut n = 0;
        for p in parts {
            let s = p.shape;
            if (s.h, s.w, s.c) != (first.h, first.w, first.c) {
                return None;
            }
            n += s.n;
            data.extend_from_slice(&p.data);
        }
        Some(Tensor::from_vec(
            Shape::new(n, first.h, first.w, first.c),
            data,
        ))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: T) -> Tensor<T> {
        self.map(|v| v * k)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reverses the column order of every row.
    pub fn flip_horizontal(&self) -> Tensor<T> {
        let s = self.shape;
        let mut out = Tensor::zeros(s);
        for n in 0..s.n {
            for y in 0..s.h {
                for x in 0..s.w {
                    let src = s.offset(n, y, x, 0);
                    let dst = s.offset(n, y, s.w - 1 - x, 0);
                    out.data[dst..dst + s.c].copy_from_slice(&self.data[src..src + s.c]);
                }
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

impl<T: Real> Index<(usize, usize, usize, usize)> for Tensor<T> {
    type Output = T;

    fn index(&self, (n, y, x, c): (usize, usize, usize, usize)) -> &T {
        &self.data[self.shape.offset(n, y, x, c)]
    }
}

impl<T: Real> IndexMut<(usize, usize, usize, usize)> for Tensor<T> {
    fn index_mut(&mut self, (n, y, x, c): (usize, usize, usize, usize)) -> &mut T {
        let off = self.shape.offset(n, y, x, c);
        &mut self.data[off]
    }
}

impl<T> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offset_is_row_major() {
        let s = Shape::new(2, 3, 4, 5);
        assert_eq!(s.offset(0, 0, 0, 1), 1);
        assert_eq!(s.offset(0, 0, 1, 0), 5);
        assert_eq!(s.offset(0, 1, 0, 0), 20);
        assert_eq!(s.offset(1, 0, 0, 0), 60);
        assert_eq!(s.len(), 120);
    }

    #[test]
    fn flip_twice_is_identity() {
        let s = Shape::new(1, 2, 3, 2);
        let t = Tensor::<f32>::from_vec(s, (0..12).map(|v| v as f32).collect());
        let f = t.flip_horizontal();
        assert_eq!(f[(0, 0, 0, 0)], t[(0, 0, 2, 0)]);
        assert_eq!(f[(0, 1, 2, 1)], t[(0, 1, 0, 1)]);
        assert_eq!(f.flip_horizontal(), t);
    }

    #[test]
    fn stack_rejects_mixed_shapes() {
        let a = Tensor::<f32>::zeros(Shape::new(1, 2, 2, 1));
        let b = Tensor::<f32>::zeros(Shape::new(1, 3, 2, 1));
        assert!(Tensor::stack(&[a.clone(), b]).is_none());
        assert_eq!(Tensor::stack(&[a.clone(), a]).unwrap().shape(), Shape::new(2, 2, 2, 1));
    }
}
