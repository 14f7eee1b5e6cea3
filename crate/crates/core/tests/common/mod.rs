//! Shared fixtures: the two worked sample vectors and an independent
//! resampling + cosine oracle the library is checked against.
#![allow(dead_code)]

/// Frame lengths of one browser's session for a page (30 messages).
pub const SAMPLE_A: [u32; 30] = [
    327, 1514, 70, 84, 327, 1514, 70, 84, 391, 1514, 70, 84, 295, 1514, 70, 118, 146, 539, 133,
    133, 104, 85, 85, 350, 220, 69, 122, 402, 100, 78,
];

/// Frame lengths of a different browser's session for the same page (25
/// messages).
pub const SAMPLE_B: [u32; 25] = [
    295, 1514, 70, 84, 359, 1514, 70, 84, 359, 1514, 70, 118, 146, 549, 133, 183, 85, 85, 350,
    220, 92, 122, 402, 100, 78,
];

/// Similarity of the sample pair at common length 30, frozen from an
/// external linear-interpolation + dot-product computation.
pub const SAMPLE_SIMILARITY: f64 = 0.48045283188151555;

/// Unit-interval piecewise-linear resampling, written as a plain `xp`/`fp`
/// bracketing evaluation so it shares no arithmetic with the library.
pub fn oracle_resample(src: &[u32], target: usize) -> Vec<f64> {
    let n = src.len();
    assert!(n >= 2 && target >= 2);
    let xp: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let fp: Vec<f64> = src.iter().map(|&v| v as f64).collect();
    (0..target)
        .map(|j| {
            let x = j as f64 / (target - 1) as f64;
            if x <= xp[0] {
                return fp[0];
            }
            if x >= xp[n - 1] {
                return fp[n - 1];
            }
            let mut i = 0;
            while xp[i + 1] < x {
                i += 1;
            }
            fp[i] + (x - xp[i]) * (fp[i + 1] - fp[i]) / (xp[i + 1] - xp[i])
        })
        .collect()
}

pub fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let norm_a: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_b: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    dot / (norm_a * norm_b)
}

/// Oracle similarity of two length vectors: resample the shorter up to the
/// longer's length, then cosine.
pub fn oracle_similarity(a: &[u32], b: &[u32]) -> f64 {
    let common = a.len().max(b.len());
    let left = oracle_resample(a, common);
    let right = oracle_resample(b, common);
    oracle_cosine(&left, &right)
}
