//! Numeric primitives behind the spectral features: FFT, a direct DFT used as
//! its oracle, mean removal, min-max scaling and proportional-duplication
//! alignment.
//!
//! Every function here is a pure function of its inputs.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

fn check_series(x: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::EmptySeries);
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok(())
}

/// Direct O(N²) evaluation of the DFT `X[k] = Σ x[n]·e^{-j2πnk/N}`.
///
/// The phase index `n·k` is reduced modulo `N` and looked up in a table of
/// the `N` roots of unity, so large products do not lose precision.
pub fn naive_dft(x: &[f64]) -> Result<Vec<Complex64>> {
    check_series(x)?;
    let n = x.len();
    let roots: Vec<Complex64> = (0..n).map(|j| Complex64::from_polar(1.0, -2.0 * PI * j as f64 / n as f64)).collect();
    let out = (0..n).map(|k| x.iter().enumerate().map(|(i, &v)| roots[(i * k) % n] * v).sum()).collect();
    Ok(out)
}

/// Iterative radix-2 decimation-in-time FFT of a real series.
///
/// The input is promoted to complex and transformed in place; length must be
/// `2^m` with `m >= 1`.
pub fn fft_radix2(x: &[f64]) -> Result<Vec<Complex64>> {
    check_series(x)?;
    let n = x.len();
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_in_place(&mut buf);
    Ok(buf)
}

fn fft_in_place(buf: &mut [Complex64]) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }

    let mut len = 2;
    while len <= n {
        let half = len / 2;
        // Twiddles are evaluated directly rather than by recurrence to keep
        // error flat across stages.
        let twiddles: Vec<Complex64> =
            (0..half).map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / len as f64)).collect();
        for start in (0..n).step_by(len) {
            for (k, w) in twiddles.iter().enumerate() {
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

/// One-sided magnitude spectrum: `|X[k]|` for `k = 0..N/2`.
pub fn magnitude_spectrum(x: &[f64]) -> Result<Vec<f64>> {
    let spec = fft_radix2(x)?;
    Ok(spec[..x.len() / 2].iter().map(|c| c.norm()).collect())
}

pub fn remove_mean(x: &[f64]) -> Result<Vec<f64>> {
    check_series(x)?;
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    Ok(x.iter().map(|v| v - mean).collect())
}

/// Scales a series onto `[0, 1]`. A constant series maps to all zeros.
pub fn minmax_normalize(v: &[f64]) -> Result<Vec<f64>> {
    check_series(v)?;
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let range = hi - lo;
    if range <= 0.0 {
        return Ok(vec![0.0; v.len()]);
    }
    Ok(v.iter()
        .map(|&x| {
            // Pin the extremes so the output hits 0 and 1 exactly.
            if x == hi {
                1.0
            } else {
                ((x - lo) / range).clamp(0.0, 1.0)
            }
        })
        .collect())
}

/// Source index feeding output position `j` when stretching `l` items to `target`.
#[inline]
pub fn align_source_index(j: usize, l: usize, target: usize) -> usize {
    j * l / target
}

/// Stretches `v` to `target` elements by proportional duplication:
/// `out[j] = v[floor(j·l/target)]`.
pub fn align_to_length(v: &[f64], target: usize) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::EmptySeries);
    }
    if v.len() > target {
        return Err(Error::CannotShrink { from: v.len(), to: target });
    }
    let l = v.len();
    Ok((0..target).map(|j| v[align_source_index(j, l, target)]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: &[Complex64], b: &[Complex64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).norm() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn dft_impulse_is_flat() {
        let x = naive_dft(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_close(&x, &[Complex64::new(1.0, 0.0); 4], 1e-12);
    }

    #[test]
    fn dft_constant_is_dc() {
        let c = 2.5;
        let x = naive_dft(&[c; 4]).unwrap();
        assert!((x[0] - Complex64::new(4.0 * c, 0.0)).norm() < 1e-12);
        for v in &x[1..] {
            assert!(v.norm() < 1e-12);
        }
    }

    #[test]
    fn dft_cosine_bins() {
        let x: Vec<f64> = (0..8).map(|n| (2.0 * PI * n as f64 / 8.0).cos()).collect();
        let spec = naive_dft(&x).unwrap();
        for (k, v) in spec.iter().enumerate() {
            let want = if k == 1 || k == 7 { 4.0 } else { 0.0 };
            assert!((v - Complex64::new(want, 0.0)).norm() < 1e-12, "bin {k}: {v}");
        }
    }

    #[test]
    fn dft_rejects_empty() {
        assert!(matches!(naive_dft(&[]), Err(Error::EmptySeries)));
    }

    #[test]
    fn fft_trivial_cases() {
        let mut imp = vec![0.0; 8];
        imp[0] = 1.0;
        assert_close(&fft_radix2(&imp).unwrap(), &[Complex64::new(1.0, 0.0); 8], 1e-12);
        let dc = fft_radix2(&[1.0; 4]).unwrap();
        let want = [4.0, 0.0, 0.0, 0.0].map(|r| Complex64::new(r, 0.0));
        assert_close(&dc, &want, 1e-12);
    }

    #[test]
    fn fft_rejects_bad_lengths() {
        assert!(matches!(fft_radix2(&[1.0; 6]), Err(Error::NotPowerOfTwo(6))));
        assert!(matches!(fft_radix2(&[1.0]), Err(Error::NotPowerOfTwo(1))));
        assert!(matches!(fft_radix2(&[1.0, f64::NAN]), Err(Error::NonFinite(1))));
    }

    #[test]
    fn magnitude_examples() {
        let mut imp = vec![0.0; 8];
        imp[0] = 1.0;
        for v in magnitude_spectrum(&imp).unwrap() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let c = 0.75;
        let m = magnitude_spectrum(&[c; 8]).unwrap();
        assert!((m[0] - 8.0 * c).abs() < 1e-12);
        assert!(m[1..].iter().all(|v| v.abs() < 1e-12));

        let x: Vec<f64> = (0..8).map(|n| (2.0 * PI * n as f64 / 8.0).cos()).collect();
        let m = magnitude_spectrum(&x).unwrap();
        assert_eq!(m.len(), 4);
        for (got, want) in m.iter().zip([0.0, 4.0, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn remove_mean_examples() {
        assert_eq!(remove_mean(&[1.0, 2.0, 3.0]).unwrap(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(remove_mean(&[5.0; 3]).unwrap(), vec![0.0; 3]);
        assert_eq!(remove_mean(&[-1.0, 1.0]).unwrap(), vec![-1.0, 1.0]);
        assert!(remove_mean(&[]).is_err());
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(minmax_normalize(&[2.0, 4.0, 6.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&[7.0; 3]).unwrap(), vec![0.0; 3]);
        assert_eq!(minmax_normalize(&[0.0, 1.0]).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn align_examples() {
        let (a, b, c) = (1.0, 2.0, 3.0);
        assert_eq!(align_to_length(&[a, b], 4).unwrap(), vec![a, a, b, b]);
        assert_eq!(align_to_length(&[a, b, c], 4).unwrap(), vec![a, a, b, c]);
        assert_eq!(align_to_length(&[a, b, c], 3).unwrap(), vec![a, b, c]);
        assert!(matches!(align_to_length(&[a, b, c], 2), Err(Error::CannotShrink { from: 3, to: 2 })));
        assert!(align_to_length(&[], 2).is_err());
    }
}
