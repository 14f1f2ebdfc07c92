use rand::Rng as _;

use super::Clip;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Maximum absolute intensity shift drawn by [`augment`].
pub const MAX_INTENSITY_SHIFT: f64 = 0.1;

/// Optional horizontal flip of every frame, then `v + shift` clamped to `[0, 1]`.
pub fn augment_with(clip: &Clip, flip: bool, shift: f64) -> Clip {
    let shape = clip.voxels.shape().to_vec();
    let side = shape[3];
    let src = clip.voxels.data();
    let data = if flip {
        let mut out = Vec::with_capacity(src.len());
        for row in src.chunks(side) {
            out.extend(row.iter().rev().map(|v| (v + shift).clamp(0.0, 1.0)));
        }
        out
    } else if shift == 0.0 {
        src.to_vec()
    } else {
        src.iter().map(|v| (v + shift).clamp(0.0, 1.0)).collect()
    };
    Clip {
        voxels: Tensor::new(shape, data).expect("shape preserved"),
        source_indices: clip.source_indices.clone(),
        source_range: clip.source_range,
    }
}

/// Training-time augmentation: flip with probability 0.5, shift ~ U(-0.1, 0.1).
pub fn augment(clip: &Clip, rng: &mut Rng) -> Clip {
    let flip = rng.random_bool(0.5);
    let shift = rng.random_range(-MAX_INTENSITY_SHIFT..MAX_INTENSITY_SHIFT);
    augment_with(clip, flip, shift)
}
