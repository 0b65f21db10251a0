use serde::{Deserialize, Serialize};

use crate::preprocess::{to_object_frame, ObjectSample};

pub const N_HANDCRAFTED: usize = 13;

pub const HANDCRAFTED_NAMES: [&str; N_HANDCRAFTED] = [
    "velocity_resolution",
    "num_reflections",
    "has_stationary",
    "mean_azimuth",
    "mean_rcs",
    "mean_range",
    "extent_sum",
    "range_interval",
    "range_variance",
    "range_std",
    "vr_interval",
    "vr_variance",
    "vr_std",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Sensor Doppler resolution, m/s. Constant per dataset.
    pub velocity_resolution: f64,
    /// |v_r| below this counts as a stationary reflection, m/s.
    pub stationary_threshold: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            velocity_resolution: 0.1,
            stationary_threshold: 0.1,
        }
    }
}

/// Per-object summary statistics of the reflection list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandcraftedFeatures {
    pub velocity_resolution: f64,
    pub num_reflections: f64,
    pub has_stationary: f64,
    pub mean_azimuth: f64,
    pub mean_rcs: f64,
    pub mean_range: f64,
    pub extent_sum: f64,
    pub range_interval: f64,
    pub range_variance: f64,
    pub range_std: f64,
    pub vr_interval: f64,
    pub vr_variance: f64,
    pub vr_std: f64,
}

impl HandcraftedFeatures {
    pub fn to_array(&self) -> [f64; N_HANDCRAFTED] {
        [
            self.velocity_resolution,
            self.num_reflections,
            self.has_stationary,
            self.mean_azimuth,
            self.mean_rcs,
            self.mean_range,
            self.extent_sum,
            self.range_interval,
            self.range_variance,
            self.range_std,
            self.vr_interval,
            self.vr_variance,
            self.vr_std,
        ]
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance.
fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64
}

fn interval(values: &[f64]) -> f64 {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    hi - lo
}

/// Panics on a sample without reflections.
pub fn extract_handcrafted(sample: &ObjectSample, config: &FeatureConfig) -> HandcraftedFeatures {
    assert!(!sample.reflections.is_empty(), "sample without reflections");
    let refl = &sample.reflections;
    let ranges: Vec<f64> = refl.iter().map(|r| r.range_m).collect();
    let vrs: Vec<f64> = refl.iter().map(|r| r.v_r).collect();
    let rcs: Vec<f64> = refl.iter().map(|r| r.rcs).collect();
    let azimuths: Vec<f64> = refl.iter().map(|r| r.azimuth).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = refl.iter().map(|r| to_object_frame(r, &sample.pose)).unzip();
    let range_variance = variance(&ranges);
    let vr_variance = variance(&vrs);
    HandcraftedFeatures {
        velocity_resolution: config.velocity_resolution,
        num_reflections: refl.len() as f64,
        has_stationary: if vrs.iter().any(|v| v.abs() < config.stationary_threshold) {
            1.0
        } else {
            0.0
        },
        mean_azimuth: mean(&azimuths),
        mean_rcs: mean(&rcs),
        mean_range: mean(&ranges),
        extent_sum: interval(&xs) + interval(&ys),
        range_interval: interval(&ranges),
        range_variance,
        range_std: range_variance.sqrt(),
        vr_interval: interval(&vrs),
        vr_variance,
        vr_std: vr_variance.sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{ObjectClass, ObjectPose, Reflection};

    fn sample(refl: &[(f64, f64, f64)]) -> ObjectSample {
        ObjectSample {
            track_id: "t".into(),
            class_label: ObjectClass::Car,
            pose: ObjectPose {
                x: 10.0,
                y: 0.0,
                heading: 0.0,
            },
            reflections: refl
                .iter()
                .map(|&(x, range_m, v_r)| Reflection {
                    x_world: x,
                    y_world: 0.5,
                    rcs: 1.0,
                    range_m,
                    v_r,
                    azimuth: 0.05,
                })
                .collect(),
        }
    }

    #[test]
    fn single_reflection_has_no_spread() {
        let f = extract_handcrafted(&sample(&[(10.0, 10.0, 2.0)]), &FeatureConfig::default());
        assert_eq!(f.num_reflections, 1.0);
        assert_eq!(f.extent_sum, 0.0);
        for v in [
            f.range_interval,
            f.range_variance,
            f.range_std,
            f.vr_interval,
            f.vr_variance,
            f.vr_std,
        ] {
            assert_eq!(v, 0.0);
        }
        assert_eq!(f.velocity_resolution, 0.1);
    }

    #[test]
    fn two_ranges_population_moments() {
        let f = extract_handcrafted(
            &sample(&[(10.0, 10.0, 0.5), (12.0, 12.0, 0.5)]),
            &FeatureConfig::default(),
        );
        assert_eq!(f.range_interval, 2.0);
        assert_eq!(f.range_variance, 1.0);
        assert_eq!(f.range_std, 1.0);
        assert_eq!(f.mean_range, 11.0);
        assert_eq!(f.extent_sum, 2.0);
    }

    #[test]
    fn stationary_flag() {
        let config = FeatureConfig::default();
        assert_eq!(
            extract_handcrafted(&sample(&[(10.0, 10.0, 0.05), (10.0, 10.0, 3.0)]), &config).has_stationary,
            1.0
        );
        assert_eq!(
            extract_handcrafted(&sample(&[(10.0, 10.0, 0.5), (10.0, 10.0, 3.0)]), &config).has_stationary,
            0.0
        );
    }

    #[test]
    fn permutation_invariant() {
        let a = sample(&[(9.0, 10.0, 0.3), (11.0, 12.0, -0.5), (10.5, 11.0, 1.5)]);
        let mut b = a.clone();
        b.reflections.reverse();
        let (fa, fb) = (
            extract_handcrafted(&a, &FeatureConfig::default()),
            extract_handcrafted(&b, &FeatureConfig::default()),
        );
        for (x, y) in fa.to_array().iter().zip(fb.to_array()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(fa.vr_variance, fa.vr_std * fa.vr_std);
    }
}
