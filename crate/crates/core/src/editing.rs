//! Edits, multi-modal sampling and interpolation paths.

use crate::error::{invalid, Result};
use crate::metrics::{InterpolationPath, LatentMapper};
use crate::real::Real;
use crate::types::{sample_noise, AttributeVector, IsfRng, LatentCode, NoiseVector};

/// One edit and the noise that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Edit<S = f32> {
    pub code: LatentCode<S>,
    pub noise: NoiseVector<S>,
}

/// `w* = M(w, z, d)`. Without an explicit `z` a fresh one is drawn and returned.
pub fn manipulate<S: Real>(
    w: &LatentCode<S>,
    target: &AttributeVector<S>,
    z: Option<&NoiseVector<S>>,
    mapper: &dyn LatentMapper<S>,
    rng: &mut IsfRng,
) -> Result<Edit<S>> {
    let noise = match z {
        Some(z) => z.clone(),
        None => sample_noise(mapper.noise_dim(), rng)?,
    };
    Ok(Edit {
        code: mapper.map(w, &noise, target)?,
        noise,
    })
}

/// `count` edits with independent noise draws.
pub fn sample_modes<S: Real>(
    w: &LatentCode<S>,
    target: &AttributeVector<S>,
    count: usize,
    mapper: &dyn LatentMapper<S>,
    rng: &mut IsfRng,
) -> Result<Vec<Edit<S>>> {
    if count == 0 {
        return Err(invalid("sample_modes needs count >= 1"));
    }
    (0..count).map(|_| manipulate(w, target, None, mapper, rng)).collect()
}

/// `s_t = src + (t / T) (dst - src)` for `t = 0..=T`; both endpoints are
/// stored exactly.
pub fn build_path<S: Real>(src: &LatentCode<S>, dst: &LatentCode<S>, steps: usize) -> Result<InterpolationPath<S>> {
    if steps < 2 {
        return Err(invalid("interpolation needs T >= 2"));
    }
    dst.ensure_shape(src.shape())?;
    let mut codes = Vec::with_capacity(steps + 1);
    codes.push(src.clone());
    for t in 1..steps {
        codes.push(src.lerp(dst, S::from_f64(t as f64 / steps as f64))?);
    }
    codes.push(dst.clone());
    InterpolationPath::new(codes, None)
}
