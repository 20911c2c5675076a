use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;
use crate::error::{config_err, data_err, Error, Result};

/// Axis layout of a non-2D representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TensorLayout {
    /// N × S × C: samples, sequence positions, channels.
    #[serde(rename = "nsc")]
    SequenceChannels,
    /// N × C × H × W: samples, channels, height, width.
    #[serde(rename = "nchw")]
    ChannelsSpatial,
}

impl TensorLayout {
    pub fn rank(self) -> usize {
        match self {
            TensorLayout::SequenceChannels => 3,
            TensorLayout::ChannelsSpatial => 4,
        }
    }

    pub fn channel_axis(self) -> usize {
        match self {
            TensorLayout::SequenceChannels => 2,
            TensorLayout::ChannelsSpatial => 1,
        }
    }
}

impl FromStr for TensorLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nsc" => Ok(TensorLayout::SequenceChannels),
            "nchw" => Ok(TensorLayout::ChannelsSpatial),
            other => Err(config_err!("unknown tensor layout {other:?}; expected nsc or nchw")),
        }
    }
}

impl fmt::Display for TensorLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TensorLayout::SequenceChannels => "nsc",
            TensorLayout::ChannelsSpatial => "nchw",
        })
    }
}

/// Row-major 3D or 4D representation produced by a decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTensor {
    layout: TensorLayout,
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl EmbeddingTensor {
    pub fn new(layout: TensorLayout, dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.len() != layout.rank() {
            return Err(config_err!(
                "layout {layout} needs {} axes, got {:?}",
                layout.rank(),
                dims
            ));
        }
        if dims.contains(&0) {
            return Err(data_err!("tensor has an empty axis: {dims:?}"));
        }
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(data_err!("tensor {dims:?} needs {len} values, got {}", data.len()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(data_err!("non-finite tensor entry at flat index {pos}"));
        }
        Ok(Self { layout, dims, data })
    }

    /// Reinterprets each matrix row as the trailing axes `inner` (e.g. `[S, C]`
    /// or `[C, H, W]`), which is how tensors travel inside `EMB1` files.
    pub fn from_matrix(matrix: &EmbeddingMatrix, layout: TensorLayout, inner: &[usize]) -> Result<Self> {
        let per_row: usize = inner.iter().product();
        if per_row != matrix.n_features() {
            return Err(data_err!(
                "shape {inner:?} holds {per_row} values per sample, matrix rows have {}",
                matrix.n_features()
            ));
        }
        let mut dims = vec![matrix.n_samples()];
        dims.extend_from_slice(inner);
        Self::new(layout, dims, matrix.as_slice().to_vec())
    }

    /// Flattens back to N × (product of trailing axes).
    pub fn to_matrix(&self) -> Result<EmbeddingMatrix> {
        let n = self.dims[0];
        EmbeddingMatrix::new(n, self.data.len() / n, self.data.clone())
    }

    pub fn layout(&self) -> TensorLayout {
        self.layout
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn n_samples(&self) -> usize {
        self.dims[0]
    }

    pub fn n_channels(&self) -> usize {
        self.dims[self.layout.channel_axis()]
    }
}
