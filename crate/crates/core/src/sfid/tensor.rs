use rand_distr::{Distribution, StandardNormal};

use super::{DebiasModel, ImputeMode};
use crate::embstore::{EmbeddingMatrix, EmbeddingTensor, TensorLayout};
use crate::error::{config_err, data_err, Result};
use crate::seed;

/// Averages away the non-channel axes: the sequence axis of `N×S×C`, or the
/// spatial axes of `N×C×H×W`. Sums are accumulated in `f64`.
pub fn reduce_to_2d(t: &EmbeddingTensor) -> Result<EmbeddingMatrix> {
    let d = t.dims();
    let x = t.as_slice();
    let n = d[0];
    let (c, data) = match t.layout() {
        TensorLayout::SequenceChannels => {
            let (s, c) = (d[1], d[2]);
            let mut out = Vec::with_capacity(n * c);
            for i in 0..n {
                let block = &x[i * s * c..(i + 1) * s * c];
                let mut acc = vec![0.0f64; c];
                for pos in block.chunks_exact(c) {
                    acc.iter_mut().zip(pos).for_each(|(a, &v)| *a += v as f64);
                }
                out.extend(acc.iter().map(|a| (a / s as f64) as f32));
            }
            (c, out)
        }
        TensorLayout::ChannelsSpatial => {
            let (c, hw) = (d[1], d[2] * d[3]);
            let out = x
                .chunks_exact(hw)
                .map(|plane| (plane.iter().map(|&v| v as f64).sum::<f64>() / hw as f64) as f32)
                .collect();
            (c, out)
        }
    };
    EmbeddingMatrix::new(n, c, data)
}

/// Broadcasts each selected channel's fill over every position of the
/// non-channel axes; other channels are untouched.
pub fn apply_debias_tensor(model: &DebiasModel, t: &EmbeddingTensor) -> Result<EmbeddingTensor> {
    apply_debias_tensor_seeded(model, t, model.provenance().noise_seed.unwrap_or(0))
}

pub fn apply_debias_tensor_seeded(model: &DebiasModel, t: &EmbeddingTensor, noise_seed: u64) -> Result<EmbeddingTensor> {
    if t.n_channels() != model.source_dim() {
        return Err(data_err!(
            "tensor has {} channels, the model expects {}",
            t.n_channels(),
            model.source_dim()
        ));
    }
    if model.mode() == ImputeMode::Drop {
        return Err(config_err!("DROP models cannot be applied to tensors"));
    }
    let mut out = t.clone();
    if model.k() == 0 {
        return Ok(out);
    }
    let d = t.dims().to_vec();
    let c = t.n_channels();
    let mut fill = vec![None; c];
    for (&j, &v) in model.indices().iter().zip(model.values()) {
        fill[j] = Some(v);
    }
    let gauss = model.mode() == ImputeMode::Gaussian;
    let mut rng = seed::rng(noise_seed, "sfid.gauss.tensor");
    let mut put = |slot: &mut f32, j: usize| {
        if let Some(v) = fill[j] {
            *slot = if gauss {
                let g: f64 = StandardNormal.sample(&mut rng);
                g as f32
            } else {
                v
            };
        }
    };
    let data = out.data_mut();
    match t.layout() {
        TensorLayout::SequenceChannels => {
            for pos in data.chunks_exact_mut(c) {
                pos.iter_mut().enumerate().for_each(|(j, slot)| put(slot, j));
            }
        }
        TensorLayout::ChannelsSpatial => {
            let hw = d[2] * d[3];
            for (p, plane) in data.chunks_exact_mut(hw).enumerate() {
                let j = p % c;
                plane.iter_mut().for_each(|slot| put(slot, j));
            }
        }
    }
    Ok(out)
}
