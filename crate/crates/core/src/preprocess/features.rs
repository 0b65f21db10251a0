use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{ObjectPose, ObjectSample, PreprocessError, Reflection};
use crate::nn::{Mask, Matrix, Scalar};

pub const N_FEATURES: usize = 5;
pub const FEATURE_NAMES: [&str; N_FEATURES] = ["x_obj", "y_obj", "rcs", "range", "v_r"];
/// Lower bound on every normalization standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

const RCS_COLUMN: usize = 2;

static TRUNCATIONS: AtomicUsize = AtomicUsize::new(0);

/// Number of inputs, process-wide, that had more reflections than the pad
/// length and were cut down.
pub fn truncation_warnings() -> usize {
    TRUNCATIONS.load(Ordering::Relaxed)
}

/// Moves a reflection into the object frame: translate by the object position,
/// then rotate by minus the heading so the heading axis becomes +x.
pub fn to_object_frame(refl: &Reflection, pose: &ObjectPose) -> (f64, f64) {
    let dx = refl.x_world - pose.x;
    let dy = refl.y_world - pose.y;
    let (sin, cos) = pose.heading.sin_cos();
    (cos * dx + sin * dy, -sin * dx + cos * dy)
}

/// `[x_obj, y_obj, rcs, range, v_r]`. Azimuth is not a network feature.
pub fn build_feature_vector(refl: &Reflection, pose: &ObjectPose) -> [f64; N_FEATURES] {
    let (x, y) = to_object_frame(refl, pose);
    [x, y, refl.rcs, refl.range_m, refl.v_r]
}

pub fn sample_feature_rows(sample: &ObjectSample) -> Vec<[f64; N_FEATURES]> {
    sample
        .reflections
        .iter()
        .map(|r| build_feature_vector(r, &sample.pose))
        .collect()
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; N_FEATURES],
    pub std: [f64; N_FEATURES],
}

impl NormStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; N_FEATURES],
            std: [1.0; N_FEATURES],
        }
    }

    pub fn normalize(&self, row: &[f64; N_FEATURES]) -> [f64; N_FEATURES] {
        std::array::from_fn(|j| (row[j] - self.mean[j]) / self.std[j])
    }
}

/// Statistics over every real reflection of every sample given. Pass the
/// training split only.
pub fn compute_norm_stats(samples: &[ObjectSample]) -> Result<NormStats, PreprocessError> {
    let rows: Vec<_> = samples.iter().flat_map(sample_feature_rows).collect();
    if rows.is_empty() {
        return Err(PreprocessError::EmptyTrainingSet);
    }
    let n = rows.len() as f64;
    let mut mean = [0.0; N_FEATURES];
    for row in &rows {
        for j in 0..N_FEATURES {
            mean[j] += row[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; N_FEATURES];
    for row in &rows {
        for j in 0..N_FEATURES {
            let d = row[j] - mean[j];
            var[j] += d * d;
        }
    }
    let std = var.map(|v| (v / n).sqrt().max(STD_FLOOR));
    Ok(NormStats { mean, std })
}

/// Fixed-size network input: normalized rows first, zero rows after, and a
/// mask marking the real ones.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedInput<T = f32> {
    pub features: Matrix<T>,
    pub mask: Mask,
    pub m_real: usize,
    /// Reflections discarded because the list was longer than the pad length.
    pub dropped: usize,
}

impl<T: Scalar> PaddedInput<T> {
    pub fn pad_length(&self) -> usize {
        self.features.rows()
    }

    pub fn cast<U: Scalar>(&self) -> PaddedInput<U> {
        PaddedInput {
            features: self.features.cast(),
            mask: self.mask.clone(),
            m_real: self.m_real,
            dropped: self.dropped,
        }
    }
}

/// Normalizes and pads `rows` to `pad_length`. Lists that are too long keep
/// the `pad_length` reflections with the highest RCS, in their original order.
pub fn pad_and_mask<T: Scalar>(
    rows: &[[f64; N_FEATURES]],
    pad_length: usize,
    stats: &NormStats,
) -> Result<PaddedInput<T>, PreprocessError> {
    if rows.is_empty() {
        return Err(PreprocessError::NoRows);
    }
    let mut keep: Vec<usize> = (0..rows.len()).collect();
    let dropped = rows.len().saturating_sub(pad_length);
    if dropped > 0 {
        keep.sort_by(|&a, &b| rows[b][RCS_COLUMN].total_cmp(&rows[a][RCS_COLUMN]).then(a.cmp(&b)));
        keep.truncate(pad_length);
        keep.sort_unstable();
        TRUNCATIONS.fetch_add(1, Ordering::Relaxed);
    }
    let mut features = Matrix::zeros(pad_length, N_FEATURES);
    for (dst, &src) in keep.iter().enumerate() {
        let normalized = stats.normalize(&rows[src]);
        for (slot, v) in features.row_mut(dst).iter_mut().zip(normalized) {
            *slot = T::from_f64_lossy(v);
        }
    }
    Ok(PaddedInput {
        features,
        mask: Mask::prefix(pad_length, keep.len()),
        m_real: keep.len(),
        dropped,
    })
}
