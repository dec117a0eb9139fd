//! Conversions between channel vectors and network images.
//!
//! A vector `z = [h_d; v_1; ...; v_K]` of length `M (K + 1)` becomes an
//! `M x (K + 1)` image whose two channels hold the real and imaginary parts.
//! FFDNet folds row pairs into channels and appends a noise-level map.

use lis_core::C64;

use crate::error::{CnnError, Result};
use crate::tensor::{Real, Tensor};

pub const IMAGE_CHANNELS: usize = 2;
pub const PACKED_DATA_CHANNELS: usize = 4;
pub const PACKED_CHANNELS: usize = 5;

/// `(1, M, K+1, 2)` image of `z`; pixel `(m, k)` holds `z[k M + m]`.
pub fn to_image<T: Real>(z: &[C64], m: usize) -> Result<Tensor<T>> {
    if m == 0 || z.is_empty() || z.len() % m != 0 {
        return Err(CnnError::ShapeMismatch(format!("vector of length {} is not M(K+1) with M = {m}", z.len())));
    }
    let cols = z.len() / m;
    let mut data = Vec::with_capacity(2 * z.len());
    for r in 0..m {
        for c in 0..cols {
            let v = z[c * m + r];
            data.push(T::lit(v.re));
            data.push(T::lit(v.im));
        }
    }
    Tensor::new([1, m, cols, IMAGE_CHANNELS], data)
}

/// Inverse of [`to_image`] for batch item `b`.
pub fn from_image<T: Real>(img: &Tensor<T>, b: usize) -> Result<Vec<C64>> {
    let [n, m, cols, c] = img.dims();
    if c != IMAGE_CHANNELS || b >= n {
        return Err(CnnError::ShapeMismatch(format!("expected a 2-channel image with item {b}, got {:?}", img.dims())));
    }
    let mut z = vec![C64::new(0.0, 0.0); m * cols];
    for r in 0..m {
        for k in 0..cols {
            z[k * m + r] = C64::new(img.get(b, r, k, 0).as_f64(), img.get(b, r, k, 1).as_f64());
        }
    }
    Ok(z)
}

/// Noise-map value for FFDNet: the per-component standard deviation
/// `σ / √(2 T_p)` of the LS error.
pub fn noise_level(sigma: f64, t_p: usize) -> f64 {
    sigma / (2.0 * t_p as f64).sqrt()
}

/// Packs a batch of images into `(N, M/2, K+1, 5)`: channels are
/// (Re even row, Re odd row, Im even row, Im odd row, noise level).
pub fn ffdnet_pack_levels<T: Real>(img: &Tensor<T>, levels: &[T]) -> Result<Tensor<T>> {
    let [n, m, cols, c] = img.dims();
    if c != IMAGE_CHANNELS {
        return Err(CnnError::ShapeMismatch(format!("expected a 2-channel image, got {:?}", img.dims())));
    }
    if m % 2 != 0 {
        return Err(CnnError::OddAntennaCount(m));
    }
    if levels.len() != n {
        return Err(CnnError::ShapeMismatch(format!("{} noise levels for a batch of {n}", levels.len())));
    }
    let half = m / 2;
    let mut out = Tensor::zeros([n, half, cols, PACKED_CHANNELS]);
    for b in 0..n {
        for r in 0..half {
            for k in 0..cols {
                let at = out.offset(b, r, k, 0);
                let px = &mut out.as_mut_slice()[at..at + PACKED_CHANNELS];
                px[0] = img.get(b, 2 * r, k, 0);
                px[1] = img.get(b, 2 * r + 1, k, 0);
                px[2] = img.get(b, 2 * r, k, 1);
                px[3] = img.get(b, 2 * r + 1, k, 1);
                px[4] = levels[b];
            }
        }
    }
    Ok(out)
}

/// [`ffdnet_pack_levels`] with the same noise standard deviation `sigma`
/// for every item.
pub fn ffdnet_pack<T: Real>(img: &Tensor<T>, sigma: f64, t_p: usize) -> Result<Tensor<T>> {
    let level = T::lit(noise_level(sigma, t_p));
    ffdnet_pack_levels(img, &vec![level; img.batch()])
}

/// Inverse of the packing on channels 0–3; a noise channel, if present, is
/// ignored.
pub fn ffdnet_unpack<T: Real>(packed: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, half, cols, c] = packed.dims();
    if c < PACKED_DATA_CHANNELS {
        return Err(CnnError::ShapeMismatch(format!("packed tensor needs 4 data channels, got {c}")));
    }
    let mut img = Tensor::zeros([n, 2 * half, cols, IMAGE_CHANNELS]);
    for b in 0..n {
        for r in 0..half {
            for k in 0..cols {
                img.set(b, 2 * r, k, 0, packed.get(b, r, k, 0));
                img.set(b, 2 * r + 1, k, 0, packed.get(b, r, k, 1));
                img.set(b, 2 * r, k, 1, packed.get(b, r, k, 2));
                img.set(b, 2 * r + 1, k, 1, packed.get(b, r, k, 3));
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_z(m: usize, k: usize) -> Vec<C64> {
        (0..m * (k + 1)).map(|i| C64::new(i as f64 * 0.25 - 1.0, 2.0 - i as f64 * 0.5)).collect()
    }

    #[test]
    fn image_layout_and_round_trip() {
        let z = sample_z(3, 2);
        let img: Tensor<f64> = to_image(&z, 3).unwrap();
        assert_eq!(img.dims(), [1, 3, 3, 2]);
        for m in 0..3 {
            for k in 0..3 {
                assert_eq!(img.get(0, m, k, 0), z[k * 3 + m].re);
                assert_eq!(img.get(0, m, k, 1), z[k * 3 + m].im);
            }
        }
        assert_eq!(from_image(&img, 0).unwrap(), z);
        let zero: Tensor<f32> = to_image(&vec![C64::new(0.0, 0.0); 6], 2).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
        assert!(to_image::<f32>(&z, 4).is_err());
    }

    #[test]
    fn pack_shape_noise_and_round_trip() {
        let z = sample_z(4, 1);
        let img: Tensor<f64> = to_image(&z, 4).unwrap();
        let packed = ffdnet_pack(&img, 10f64.sqrt(), 11).unwrap();
        assert_eq!(packed.dims(), [1, 2, 2, 5]);
        assert!((packed.get(0, 1, 1, 4) - (10.0f64 / 22.0).sqrt()).abs() < 1e-15);
        assert!((noise_level(10f64.sqrt(), 11) - 0.67420).abs() < 1e-5);
        assert_eq!(packed.get(0, 1, 0, 1), z[3].re);
        assert_eq!(packed.get(0, 1, 1, 2), z[6].im);
        assert_eq!(ffdnet_unpack(&packed).unwrap(), img);

        let odd: Tensor<f32> = to_image(&sample_z(3, 1), 3).unwrap();
        assert!(matches!(ffdnet_pack(&odd, 1.0, 2), Err(CnnError::OddAntennaCount(3))));
    }
}
