use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// `M × C` latent codes.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSet {
    pub codes: Tensor<f64>,
}

impl LatentSet {
    pub fn new(codes: Tensor<f64>) -> Result<Self> {
        if codes.shape().len() != 2 {
            return Err(Error::InvalidArgument(format!("latent set must be [M, C], got {:?}", codes.shape())));
        }
        if !codes.is_finite() {
            return Err(Error::NonFinite { op: "latent set" });
        }
        Ok(Self { codes })
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        Self::new(t.cast())
    }

    pub fn len(&self) -> usize {
        self.codes.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn channels(&self) -> usize {
        self.codes.cols()
    }

    pub fn tensor<T: Real>(&self) -> Tensor<T> {
        self.codes.cast()
    }
}

/// `F` frames of `M × C` codes, stored frame-major as `[F, M, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSequence {
    pub codes: Tensor<f64>,
}

impl LatentSequence {
    pub fn new(codes: Tensor<f64>) -> Result<Self> {
        if codes.shape().len() != 3 {
            return Err(Error::InvalidArgument(format!("latent sequence must be [F, M, C], got {:?}", codes.shape())));
        }
        if !codes.is_finite() {
            return Err(Error::NonFinite { op: "latent sequence" });
        }
        Ok(Self { codes })
    }

    pub fn from_frames(frames: &[LatentSet]) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::InvalidArgument("latent sequence needs a frame".into()))?;
        let (m, c) = (first.len(), first.channels());
        let mut data = Vec::with_capacity(frames.len() * m * c);
        for f in frames {
            if (f.len(), f.channels()) != (m, c) {
                return Err(Error::ShapeMismatch {
                    op: "latent sequence",
                    lhs: vec![m, c],
                    rhs: f.codes.shape().to_vec(),
                });
            }
            data.extend_from_slice(f.codes.data());
        }
        Self::new(Tensor::new(vec![frames.len(), m, c], data)?)
    }

    pub fn frames(&self) -> usize {
        self.codes.shape()[0]
    }

    pub fn codes_per_frame(&self) -> usize {
        self.codes.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.codes.shape()[2]
    }

    pub fn frame(&self, t: usize) -> LatentSet {
        let n = self.codes_per_frame() * self.channels();
        let data = self.codes.data()[t * n..(t + 1) * n].to_vec();
        LatentSet { codes: Tensor::new(vec![self.codes_per_frame(), self.channels()], data).expect("frame shape") }
    }

    /// Frame-major `[F·M, C]` view for the attention blocks.
    pub fn flat<T: Real>(&self) -> Tensor<T> {
        self.codes
            .cast::<T>()
            .reshape(vec![self.frames() * self.codes_per_frame(), self.channels()])
            .expect("flat shape")
    }

    pub fn from_flat<T: Real>(t: &Tensor<T>, frames: usize) -> Result<Self> {
        let (rows, c) = (t.rows(), t.cols());
        if frames == 0 || rows % frames != 0 {
            return Err(Error::InvalidArgument(format!("{rows} rows do not split into {frames} frames")));
        }
        Self::new(t.cast::<f64>().reshape(vec![frames, rows / frames, c])?)
    }
}
