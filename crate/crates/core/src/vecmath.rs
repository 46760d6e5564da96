//! Dot products and cosine geometry with a fixed summation order.
//!
//! Eight interleaved accumulators let the compiler vectorize the loop while
//! keeping results bit-reproducible. `dot(a, a)` is bitwise equal to
//! `norm_sq(a)` and `dot(a, b)` to `dot(b, a)`, which makes the cosine
//! distance of a vector to itself exactly zero.

const LANES: usize = 8;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f64; LANES];
    let chunks = a.len() / LANES;
    for c in 0..chunks {
        let xa = &a[c * LANES..(c + 1) * LANES];
        let xb = &b[c * LANES..(c + 1) * LANES];
        for l in 0..LANES {
            acc[l] += xa[l] * xb[l];
        }
    }
    for i in chunks * LANES..a.len() {
        acc[i % LANES] += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Cosine similarity given precomputed squared norms (both nonzero).
#[inline]
pub fn cosine_similarity_with_norms(a: &[f64], b: &[f64], a_norm_sq: f64, b_norm_sq: f64) -> f64 {
    (dot(a, b) / (a_norm_sq * b_norm_sq).sqrt()).clamp(-1.0, 1.0)
}

#[inline]
pub fn cosine_distance_with_norms(a: &[f64], b: &[f64], a_norm_sq: f64, b_norm_sq: f64) -> f64 {
    1.0 - cosine_similarity_with_norms(a, b, a_norm_sq, b_norm_sq)
}
