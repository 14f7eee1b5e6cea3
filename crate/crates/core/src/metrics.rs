//! Length vectors, piecewise-linear resampling, and the cosine metrics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Whether a vector holds whole-frame lengths or TLS record lengths.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "lowercase")]
pub enum VectorMode {
    #[default]
    Frame,
    Record,
}

impl fmt::Display for VectorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VectorMode::Frame => write!(f, "frame"),
            VectorMode::Record => write!(f, "record"),
        }
    }
}

impl FromStr for VectorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "frame" => Ok(VectorMode::Frame),
            "record" => Ok(VectorMode::Record),
            other => Err(format!("unknown vector mode {other:?}, expected frame|record")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VectorLabel {
    pub browser: String,
    pub url: String,
    pub mode: VectorMode,
}

/// Ordered positive message lengths observed for one session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LengthVector {
    values: Vec<u32>,
    label: Option<VectorLabel>,
}

impl LengthVector {
    /// Build a vector, rejecting empty input and zero lengths.
    pub fn new(values: Vec<u32>) -> Result<Self, MetricsError> {
        if values.is_empty() {
            return Err(MetricsError::EmptyVector);
        }
        if let Some(index) = values.iter().position(|&v| v == 0) {
            return Err(MetricsError::ZeroLength { index });
        }
        Ok(LengthVector {
            values,
            label: None,
        })
    }

    pub fn with_label(mut self, label: VectorLabel) -> Self {
        self.label = Some(label);
        self
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn label(&self) -> Option<&VectorLabel> {
        self.label.as_ref()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

impl Serialize for LengthVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.values.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LengthVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let values = Vec::<u32>::deserialize(deserializer)?;
        LengthVector::new(values).map_err(serde::de::Error::custom)
    }
}

/// A vector resampled onto a grid of `target_len` evenly spaced samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampledVector {
    values: Vec<f64>,
    source_len: usize,
    target_len: usize,
}

impl ResampledVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn target_len(&self) -> usize {
        self.target_len
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("length vector must not be empty")]
    EmptyVector,
    #[error("length vector value at index {index} is zero; lengths must be positive")]
    ZeroLength { index: usize },
    #[error("vector too short to interpolate: {len} samples, need at least 2")]
    VectorTooShort { len: usize },
    #[error("bad target length {target}: need at least 2")]
    BadTargetLength { target: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine similarity is undefined for an all-zero vector")]
    ZeroVector,
}

/// Piecewise-linear resampling.
///
/// Source sample `i` sits at position `i/(n-1)` of a unit interval and the
/// output is evaluated at `j/(m-1)`; both endpoints map exactly, and
/// resampling to the source length returns the values unchanged.
pub fn interpolate(v: &LengthVector, target_len: usize) -> Result<ResampledVector, MetricsError> {
    if v.len() < 2 {
        return Err(MetricsError::VectorTooShort { len: v.len() });
    }
    if target_len < 2 {
        return Err(MetricsError::BadTargetLength { target: target_len });
    }
    let src = v.as_f64();
    let values = resample(&src, target_len);
    Ok(ResampledVector {
        values,
        source_len: src.len(),
        target_len,
    })
}

fn resample(src: &[f64], target_len: usize) -> Vec<f64> {
    let n = src.len();
    if target_len == n {
        return src.to_vec();
    }
    let last_seg = n - 1;
    let mut out = Vec::with_capacity(target_len);
    for j in 0..target_len {
        if j == 0 {
            out.push(src[0]);
            continue;
        }
        if j == target_len - 1 {
            out.push(src[n - 1]);
            continue;
        }
        // integer product before the division keeps shared grid points exact
        let pos = (j * last_seg) as f64 / (target_len - 1) as f64;
        let mut i = pos.floor() as usize;
        if i >= last_seg {
            i = last_seg - 1;
        }
        let frac = pos - i as f64;
        out.push(src[i] + frac * (src[i + 1] - src[i]));
    }
    out
}

/// Cosine of the angle between two equal-length vectors: `a.b / (|a||b|)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(MetricsError::EmptyVector);
    }
    let mut dot = 0.0;
    let mut norm_a = 0.0;
    let mut norm_b = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(MetricsError::ZeroVector);
    }
    Ok((dot / (norm_a * norm_b).sqrt()).clamp(-1.0, 1.0))
}

/// `1 - cosine_similarity(a, b)`.
pub fn cosine_dissimilarity(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    cosine_similarity(a, b).map(|s| 1.0 - s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub similarity: f64,
    pub dissimilarity: f64,
    pub common_len: usize,
}

/// Which vector gets resampled when lengths differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResamplePolicy {
    /// Resample the shorter vector up to the longer one's length.
    #[default]
    ShorterUp,
    /// Resample the longer vector down to the shorter one's length.
    LongerDown,
}

/// Compare two length vectors, resampling to a common length first when they
/// differ (the shorter is resampled up by default; equal lengths skip
/// interpolation entirely).
pub fn compare(a: &LengthVector, b: &LengthVector) -> Result<Comparison, MetricsError> {
    compare_with(a, b, ResamplePolicy::ShorterUp)
}

pub fn compare_with(
    a: &LengthVector,
    b: &LengthVector,
    policy: ResamplePolicy,
) -> Result<Comparison, MetricsError> {
    if a.len() < 2 {
        return Err(MetricsError::VectorTooShort { len: a.len() });
    }
    if b.len() < 2 {
        return Err(MetricsError::VectorTooShort { len: b.len() });
    }
    let common_len = match policy {
        ResamplePolicy::ShorterUp => a.len().max(b.len()),
        ResamplePolicy::LongerDown => a.len().min(b.len()),
    };
    let left = if a.len() == common_len {
        a.as_f64()
    } else {
        interpolate(a, common_len)?.into_values()
    };
    let right = if b.len() == common_len {
        b.as_f64()
    } else {
        interpolate(b, common_len)?.into_values()
    };
    let similarity = cosine_similarity(&left, &right)?;
    Ok(Comparison {
        similarity,
        dissimilarity: 1.0 - similarity,
        common_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // the two worked example vectors used across the test suite
    pub(crate) const SAMPLE_A: [u32; 30] = [
        327, 1514, 70, 84, 327, 1514, 70, 84, 391, 1514, 70, 84, 295, 1514, 70, 118, 146, 539,
        133, 133, 104, 85, 85, 350, 220, 69, 122, 402, 100, 78,
    ];
    pub(crate) const SAMPLE_B: [u32; 25] = [
        295, 1514, 70, 84, 359, 1514, 70, 84, 359, 1514, 70, 118, 146, 549, 133, 183, 85, 85, 350,
        220, 92, 122, 402, 100, 78,
    ];
    // frozen from an independent resampling + dot-product oracle
    const SAMPLE_SIMILARITY: f64 = 0.48045283188151555;
    const SAMPLE_B_TO_29: [f64; 29] = [
        295.0,
        1339.857142857143,
        482.57142857142867,
        78.0,
        201.85714285714283,
        689.0000000000002,
        1307.7142857142865,
        70.0,
        81.99999999999999,
        280.4285714285716,
        1019.0000000000005,
        895.1428571428577,
        83.71428571428568,
        122.00000000000003,
        146.0,
        491.4285714285716,
        251.85714285714334,
        161.5714285714285,
        140.99999999999986,
        85.0,
        122.85714285714275,
        350.0,
        238.57142857142853,
        128.57142857142873,
        109.1428571428571,
        242.00000000000045,
        315.7142857142854,
        96.85714285714286,
        78.0,
    ];
    const TOL: f64 = 1e-9;

    fn lv(values: &[u32]) -> LengthVector {
        LengthVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn constructor_rejects_empty_and_zero() {
        assert_eq!(LengthVector::new(vec![]), Err(MetricsError::EmptyVector));
        assert_eq!(
            LengthVector::new(vec![3, 0, 1]),
            Err(MetricsError::ZeroLength { index: 1 })
        );
    }

    #[test]
    fn two_points_to_three_hits_the_midpoint() {
        let out = interpolate(&lv(&[1, 3]), 3).unwrap();
        assert_eq!(out.values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn resampling_to_own_length_is_identity() {
        let v = lv(&SAMPLE_B);
        let out = interpolate(&v, v.len()).unwrap();
        let expected: Vec<f64> = SAMPLE_B.iter().map(|&x| x as f64).collect();
        assert_eq!(out.values(), expected.as_slice());
    }

    #[test]
    fn sample_b_to_29_matches_the_frozen_oracle() {
        let out = interpolate(&lv(&SAMPLE_B), 29).unwrap();
        assert_eq!(out.values().len(), 29);
        for (got, want) in out.values().iter().zip(SAMPLE_B_TO_29) {
            assert!((got - want).abs() < TOL, "{got} vs {want}");
        }
    }

    #[test]
    fn interpolate_rejects_short_inputs_and_targets() {
        assert_eq!(
            interpolate(&lv(&[5]), 4),
            Err(MetricsError::VectorTooShort { len: 1 })
        );
        assert_eq!(
            interpolate(&lv(&[5, 6]), 1),
            Err(MetricsError::BadTargetLength { target: 1 })
        );
    }

    #[test]
    fn cosine_of_identical_vectors_is_one() {
        let a = [3.0, 4.0, 5.0];
        assert_eq!(cosine_similarity(&a, &a).unwrap(), 1.0);
        assert_eq!(cosine_dissimilarity(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn cosine_of_orthogonal_vectors_is_zero() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_dissimilarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn cosine_errors_are_named() {
        assert_eq!(
            cosine_similarity(&[1.0], &[1.0, 2.0]),
            Err(MetricsError::DimensionMismatch { left: 1, right: 2 })
        );
        assert_eq!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]),
            Err(MetricsError::ZeroVector)
        );
    }

    #[test]
    fn compare_identical_vectors() {
        let v = lv(&[10, 20, 30]);
        let cmp = compare(&v, &v).unwrap();
        assert_eq!(cmp.similarity, 1.0);
        assert_eq!(cmp.dissimilarity, 0.0);
        assert_eq!(cmp.common_len, 3);
    }

    #[test]
    fn compare_is_scale_invariant() {
        let a = lv(&[12, 99, 4, 57]);
        let b = lv(&[84, 693, 28, 399]); // 7 * a
        let cmp = compare(&a, &b).unwrap();
        assert!((cmp.similarity - 1.0).abs() < TOL);
        assert!(cmp.dissimilarity.abs() < TOL);
    }

    #[test]
    fn compare_samples_matches_the_frozen_oracle() {
        let cmp = compare(&lv(&SAMPLE_A), &lv(&SAMPLE_B)).unwrap();
        assert_eq!(cmp.common_len, 30);
        assert!((cmp.similarity - SAMPLE_SIMILARITY).abs() < TOL);
        assert!((cmp.dissimilarity - (1.0 - SAMPLE_SIMILARITY)).abs() < TOL);
        assert_eq!(cmp.dissimilarity, 1.0 - cmp.similarity);
    }

    #[test]
    fn longer_down_policy_resamples_down() {
        let cmp = compare_with(
            &lv(&SAMPLE_A),
            &lv(&SAMPLE_B),
            ResamplePolicy::LongerDown,
        )
        .unwrap();
        assert_eq!(cmp.common_len, 25);
        // same vectors through the opposite policy give a nearby but
        // different value
        assert!((cmp.similarity - SAMPLE_SIMILARITY).abs() > 1e-6);
    }

    #[test]
    fn compare_requires_two_samples() {
        assert_eq!(
            compare(&lv(&[5]), &lv(&[1, 2])),
            Err(MetricsError::VectorTooShort { len: 1 })
        );
    }

    proptest! {
        #[test]
        fn compare_is_symmetric(
            a in proptest::collection::vec(1u32..2000, 2..40),
            b in proptest::collection::vec(1u32..2000, 2..40),
        ) {
            let va = lv(&a);
            let vb = lv(&b);
            let ab = compare(&va, &vb).unwrap();
            let ba = compare(&vb, &va).unwrap();
            prop_assert_eq!(ab.similarity, ba.similarity);
            prop_assert_eq!(ab.dissimilarity, ba.dissimilarity);
            prop_assert_eq!(ab.common_len, ba.common_len);
        }

        #[test]
        fn similarity_and_dissimilarity_are_complementary(
            a in proptest::collection::vec(1u32..5000, 2..40),
            b in proptest::collection::vec(1u32..5000, 2..40),
        ) {
            let cmp = compare(&lv(&a), &lv(&b)).unwrap();
            prop_assert!((cmp.similarity + cmp.dissimilarity - 1.0).abs() < 1e-12);
            prop_assert!(cmp.similarity > 0.0 && cmp.similarity <= 1.0);
            prop_assert!(cmp.dissimilarity >= 0.0 && cmp.dissimilarity < 1.0);
        }

        #[test]
        fn resampled_endpoints_and_range_are_preserved(
            v in proptest::collection::vec(1u32..65536, 2..50),
            target in 2usize..80,
        ) {
            let vec = lv(&v);
            let out = interpolate(&vec, target).unwrap();
            prop_assert_eq!(out.values()[0], v[0] as f64);
            prop_assert_eq!(out.values()[target - 1], v[v.len() - 1] as f64);
            let lo = *v.iter().min().unwrap() as f64;
            let hi = *v.iter().max().unwrap() as f64;
            for &x in out.values() {
                prop_assert!(x >= lo && x <= hi);
            }
        }

        #[test]
        fn resampling_preserves_monotone_grids(
            mut v in proptest::collection::vec(1u32..10000, 2..50),
            target in 2usize..80,
        ) {
            v.sort_unstable();
            let out = interpolate(&lv(&v), target).unwrap();
            for pair in out.values().windows(2) {
                prop_assert!(pair[0] <= pair[1]);
            }
        }
    }
}
