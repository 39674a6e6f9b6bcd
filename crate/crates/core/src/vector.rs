//! Dense vector helpers shared by the embedding paths.

use half::f16;

/// Dot product accumulated in f64.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// L2-normalizes in place; an all-zero vector stays zero.
pub fn normalize(v: &mut [f32]) {
    let n = norm(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x = (*x as f64 / n) as f32;
        }
    }
}

pub fn normalize_f64(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

/// Rounds every entry to the nearest half-precision value.
pub fn quantize_f16(v: &mut [f32]) {
    for x in v.iter_mut() {
        *x = f16::from_f32(*x).to_f32();
    }
}

pub fn is_f16_exact(v: &[f32]) -> bool {
    v.iter().all(|&x| f16::from_f32(x).to_f32().to_bits() == x.to_bits())
}
