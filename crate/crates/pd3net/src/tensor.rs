//! Dense 4-D tensors in `(batch, channels, height, width)` layout.
//!
//! Data is row-major with width contiguous, which is what every convolution
//! inner loop in this crate strides over. Values are `f64`: the gradient
//! checking suites need more headroom than `f32` offers, and at the scales
//! this crate targets the bandwidth cost is acceptable.

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Tensor dimensions `(batch, channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Shape { batch, channels, height, width }
    }

    /// Total element count, or a size error on overflow.
    pub fn len(&self) -> Result<usize> {
        self.batch
            .checked_mul(self.channels)
            .and_then(|x| x.checked_mul(self.height))
            .and_then(|x| x.checked_mul(self.width))
            .ok_or_else(|| Error::Size(format!("{self:?} overflows addressable size")))
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.batch, self.channels, self.height, self.width)
    }
}

/// How to fill a freshly allocated tensor.
#[derive(Debug, Clone, Copy)]
pub enum Fill {
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
    /// Zero-mean normal with standard deviation `sqrt(2 / fan_in)`.
    HeNormal { fan_in: usize },
}

/// Dense 4-D array with an optional gradient buffer of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Allocate a tensor with the requested fill.
    pub fn new(shape: Shape, fill: Fill, rng: &mut Rng) -> Result<Tensor> {
        let len = shape.len()?;
        let data = match fill {
            Fill::Constant(value) => vec![value; len],
            Fill::Uniform { lo, hi } => {
                if lo > hi {
                    return Err(Error::Param(format!("uniform bounds inverted: {lo} > {hi}")));
                }
                (0..len).map(|_| rng.uniform(lo, hi)).collect()
            }
            Fill::HeNormal { fan_in } => {
                if fan_in == 0 {
                    return Err(Error::Param("he_normal fan_in must be >= 1".into()));
                }
                let std_dev = (2.0 / fan_in as f64).sqrt();
                (0..len).map(|_| rng.normal(std_dev)).collect()
            }
        };
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn zeros(shape: Shape) -> Tensor {
        let len = shape.len().expect("shape overflow");
        Tensor { shape, data: vec![0.0; len], grad: None }
    }

    pub fn full(shape: Shape, value: f64) -> Tensor {
        let len = shape.len().expect("shape overflow");
        Tensor { shape, data: vec![value; len], grad: None }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Tensor> {
        if shape.len()? != data.len() {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.channels + c) * self.shape.height + y) * self.shape.width + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: f64) {
        let i = self.index(n, c, y, x);
        self.data[i] = value;
    }

    /// Contiguous `(n, c)` image plane.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let hw = self.shape.height * self.shape.width;
        let start = (n * self.shape.channels + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let hw = self.shape.height * self.shape.width;
        let start = (n * self.shape.channels + c) * hw;
        &mut self.data[start..start + hw]
    }

    // ---- gradient slot ----------------------------------------------------

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    pub fn alloc_grad(&mut self) {
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.data.len()]);
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }

    // ---- elementwise ------------------------------------------------------

    fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "elementwise shapes differ: {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Tensor { shape: self.shape, data, grad: None })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Tensor { shape: self.shape, data, grad: None })
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Ok(Tensor { shape: self.shape, data, grad: None })
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        let data = self.data.iter().map(|a| a * factor).collect();
        Tensor { shape: self.shape, data, grad: None }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data.iter().map(|&a| f(a)).collect();
        Tensor { shape: self.shape, data, grad: None }
    }

    // ---- structure --------------------------------------------------------

    /// Stack `a`'s channels before `b`'s. Batch and spatial dims must agree.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape.batch != b.shape.batch
            || a.shape.height != b.shape.height
            || a.shape.width != b.shape.width
        {
            return Err(Error::Shape(format!(
                "concat_channels: {} vs {} disagree outside the channel dim",
                a.shape, b.shape
            )));
        }
        let shape = Shape::new(
            a.shape.batch,
            a.shape.channels + b.shape.channels,
            a.shape.height,
            a.shape.width,
        );
        let mut out = Tensor::zeros(shape);
        let hw = shape.height * shape.width;
        for n in 0..shape.batch {
            for c in 0..a.shape.channels {
                out.plane_mut(n, c).copy_from_slice(a.plane(n, c));
            }
            for c in 0..b.shape.channels {
                out.plane_mut(n, a.shape.channels + c).copy_from_slice(b.plane(n, c));
            }
        }
        debug_assert_eq!(out.data.len(), shape.batch * shape.channels * hw);
        Ok(out)
    }

    /// Copy of channels `lo..hi`.
    pub fn slice_channels(&self, lo: usize, hi: usize) -> Result<Tensor> {
        if lo >= hi || hi > self.shape.channels {
            return Err(Error::Shape(format!(
                "slice_channels {lo}..{hi} out of range for {} channels",
                self.shape.channels
            )));
        }
        let shape = Shape::new(self.shape.batch, hi - lo, self.shape.height, self.shape.width);
        let mut out = Tensor::zeros(shape);
        for n in 0..shape.batch {
            for c in lo..hi {
                out.plane_mut(n, c - lo).copy_from_slice(self.plane(n, c));
            }
        }
        Ok(out)
    }

    /// Remove rows/columns from the spatial borders.
    /// `crop = ((top, bottom), (left, right))`.
    pub fn crop2d(&self, crop: ((usize, usize), (usize, usize))) -> Result<Tensor> {
        let ((top, bottom), (left, right)) = crop;
        if top + bottom >= self.shape.height && top + bottom > 0 {
            return Err(Error::Shape(format!(
                "crop rows {top}+{bottom} >= height {}",
                self.shape.height
            )));
        }
        if left + right >= self.shape.width && left + right > 0 {
            return Err(Error::Shape(format!(
                "crop cols {left}+{right} >= width {}",
                self.shape.width
            )));
        }
        let shape = Shape::new(
            self.shape.batch,
            self.shape.channels,
            self.shape.height - top - bottom,
            self.shape.width - left - right,
        );
        let mut out = Tensor::zeros(shape);
        for n in 0..shape.batch {
            for c in 0..shape.channels {
                let src = self.plane(n, c);
                let dst = out.plane_mut(n, c);
                for y in 0..shape.height {
                    let src_off = (y + top) * self.shape.width + left;
                    let dst_off = y * shape.width;
                    dst[dst_off..dst_off + shape.width]
                        .copy_from_slice(&src[src_off..src_off + shape.width]);
                }
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
