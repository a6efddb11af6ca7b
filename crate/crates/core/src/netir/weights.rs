use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{BiasSource, IrError, Layer, NetGraph, WeightSource};
use crate::bscore::{apply_mask, BlockCooWeight};
use crate::tensor::Tensor4;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Uniform `i8` codes in `[-127, 127]`, `C_out × h × k × C_in`.
pub fn seeded_weights(seed: u64, dims: [usize; 4]) -> Tensor4<i32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::from_fn(dims, |_| rng.gen_range(-127..=127))
}

/// Dense `Γ W` of a weighted layer.
pub fn materialize_weights(graph: &NetGraph, layer: &Layer) -> Result<Tensor4<i32>, IrError> {
    let spec =
        layer.weights.as_ref().ok_or_else(|| IrError::Weights { layer: layer.id.clone(), message: "layer has no weights".into() })?;
    let dims = [spec.out_channels, layer.kernel.0, layer.kernel.1, spec.in_channels];
    let err = |message: String| IrError::Weights { layer: layer.id.clone(), message };
    let dense = match &spec.source {
        WeightSource::Seeded { seed } => seeded_weights(*seed, dims),
        WeightSource::Sidecar { path, .. } => {
            let full = graph.base_dir.as_deref().unwrap_or(Path::new(".")).join(path);
            let bytes = std::fs::read(&full).map_err(|source| IrError::Io { path: full.display().to_string(), source })?;
            let coo = BlockCooWeight::<i8>::from_bytes(&bytes)?;
            if coo.out_channels != dims[0] || coo.kernel != (dims[1], dims[2]) || coo.in_channels != dims[3] {
                return Err(err(format!("sidecar {path} does not have dims {dims:?}")));
            }
            if let Some(m) = &spec.mask {
                if coo.mask() != *m {
                    return Err(err(format!("sidecar {path} block structure differs from the model mask")));
                }
            }
            coo.map(i32::from).decompress()
        }
    };
    match &spec.mask {
        Some(m) => Ok(apply_mask(&dense, m)?),
        None => Ok(dense),
    }
}

pub fn materialize_bias(layer: &Layer) -> Result<Vec<i32>, IrError> {
    let spec = layer.weights.as_ref().ok_or_else(|| IrError::Weights { layer: layer.id.clone(), message: "layer has no bias".into() })?;
    let n = spec.out_channels;
    match &spec.bias {
        BiasSource::Zero => Ok(vec![0; n]),
        BiasSource::Seeded { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            Ok((0..n).map(|_| rng.gen_range(-512..=512)).collect())
        }
        BiasSource::Values(v) if v.len() == n => Ok(v.clone()),
        BiasSource::Values(v) => {
            Err(IrError::Weights { layer: layer.id.clone(), message: format!("bias has {} values for {n} outputs", v.len()) })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_is_deterministic_and_bounded() {
        let a = seeded_weights(5, [8, 3, 3, 8]);
        assert_eq!(a, seeded_weights(5, [8, 3, 3, 8]));
        assert_ne!(a, seeded_weights(6, [8, 3, 3, 8]));
        assert!(a.data().iter().all(|v| (-127..=127).contains(v)));
    }

    #[test]
    fn sha_of_empty() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
