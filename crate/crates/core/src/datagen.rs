//! Seeded synthetic radar tracks.
//!
//! Each track is an approach: the sensor drives toward an object and samples
//! are taken at decreasing range. Reflections are scattered over a simple
//! per-class body shape, moved into the world by the true pose, and labelled
//! with the tracker's (noisy) pose estimate.
//!
//! All numbers in the default profiles are invented. They only encode
//! qualitative facts: cars are large and bright, pedestrians and cyclists move
//! tangentially, non-obstacles are small, weak and static. Pedestrians and
//! cyclists are deliberately given the same reflection statistics and the same
//! summed extent; they differ only in elongation, which needs the relation
//! between reflections to see.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::preprocess::{ObjectClass, ObjectPose, ObjectSample, Reflection, MAX_RANGE_M};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyShape {
    /// Reflections on the outline of a rectangle; the first two always hit the
    /// front and rear faces.
    Outline,
    /// Reflections anywhere inside a rectangle.
    Filled,
    /// Gaussian blob, `length`/`width` used as standard deviations.
    Blob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub class_label: ObjectClass,
    pub shape: BodyShape,
    /// Body length range in meters (along the body axis).
    pub length: (f64, f64),
    pub width: (f64, f64),
    /// Reflection count range at the closest range; the upper bound shrinks
    /// with distance.
    pub reflections_per_sample: (usize, usize),
    pub rcs_mean: f64,
    pub rcs_spread: f64,
    /// Half-width of the uniform per-reflection radial-velocity spread.
    pub vr_spread: f64,
    /// Tangential speed range; zero for static objects.
    pub speed: (f64, f64),
    /// Probability that a track's body axis lies across the tracker heading.
    pub axis_flip_probability: f64,
    pub start_range: (f64, f64),
    pub samples_per_track: (usize, usize),
}

impl ClassProfile {
    pub fn mover(&self) -> bool {
        self.speed.1 > 0.0
    }

    pub fn default_for(class_label: ObjectClass) -> Self {
        match class_label {
            ObjectClass::Car => Self {
                class_label,
                shape: BodyShape::Outline,
                length: (4.2, 4.8),
                width: (1.7, 1.9),
                reflections_per_sample: (8, 30),
                rcs_mean: 10.0,
                rcs_spread: 5.0,
                vr_spread: 0.1,
                speed: (0.0, 0.0),
                axis_flip_probability: 0.0,
                start_range: (55.0, 72.0),
                samples_per_track: (20, 40),
            },
            ObjectClass::Pedestrian => Self {
                class_label,
                shape: BodyShape::Filled,
                length: (1.1, 1.3),
                width: (1.1, 1.3),
                reflections_per_sample: (5, 12),
                rcs_mean: -7.0,
                rcs_spread: 4.0,
                vr_spread: 1.0,
                speed: (1.0, 2.0),
                axis_flip_probability: 0.0,
                start_range: (25.0, 45.0),
                samples_per_track: (10, 20),
            },
            ObjectClass::Cyclist => Self {
                class_label,
                shape: BodyShape::Filled,
                length: (2.0, 2.2),
                width: (0.2, 0.4),
                reflections_per_sample: (5, 12),
                rcs_mean: -7.0,
                rcs_spread: 4.0,
                vr_spread: 1.0,
                speed: (1.0, 2.0),
                axis_flip_probability: 0.5,
                start_range: (25.0, 45.0),
                samples_per_track: (8, 16),
            },
            ObjectClass::NonObstacle => Self {
                class_label,
                shape: BodyShape::Blob,
                length: (0.1, 0.2),
                width: (0.1, 0.2),
                reflections_per_sample: (1, 3),
                rcs_mean: -14.0,
                rcs_spread: 3.0,
                vr_spread: 0.05,
                speed: (0.0, 0.0),
                axis_flip_probability: 0.0,
                start_range: (40.0, 72.0),
                samples_per_track: (10, 20),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenSpec {
    pub tracks_per_class: BTreeMap<ObjectClass, usize>,
    pub profiles: Vec<ClassProfile>,
    /// Closest approach range in meters.
    pub stop_range: f64,
    /// Uniform tracker position error, per axis, in meters.
    pub center_jitter: f64,
    /// Standard deviation of the tracker heading error in radians.
    pub heading_noise: f64,
    /// Standard deviation of per-reflection position noise in meters.
    pub position_noise: f64,
    pub seed: u64,
}

/// Track counts of the reference dataset divided by ten.
pub const DESK_TRACKS: [(ObjectClass, usize); 4] = [
    (ObjectClass::Car, 57),
    (ObjectClass::Pedestrian, 34),
    (ObjectClass::Cyclist, 27),
    (ObjectClass::NonObstacle, 70),
];

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            tracks_per_class: DESK_TRACKS.into_iter().collect(),
            profiles: ObjectClass::ALL.into_iter().map(ClassProfile::default_for).collect(),
            stop_range: 5.0,
            center_jitter: 0.5,
            heading_noise: 0.05,
            position_noise: 0.05,
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn profile(&self, class: ObjectClass) -> ClassProfile {
        self.profiles
            .iter()
            .find(|p| p.class_label == class)
            .cloned()
            .unwrap_or_else(|| ClassProfile::default_for(class))
    }

    pub fn track_id(class: ObjectClass, index: usize) -> String {
        format!("{class}-{index:04}")
    }
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.gen_range(range.0..range.1)
    } else {
        range.0
    }
}

fn uniform_count(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

fn normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    std * rng.sample::<f64, _>(StandardNormal)
}

fn body_point(rng: &mut ChaCha8Rng, shape: BodyShape, length: f64, width: f64, index: usize) -> (f64, f64) {
    let (hl, hw) = (length / 2.0, width / 2.0);
    match shape {
        BodyShape::Outline => {
            if index < 2 {
                let x = if index == 0 { hl } else { -hl };
                return (x, rng.gen_range(-hw..hw));
            }
            let perimeter = 2.0 * (length + width);
            let s = rng.gen_range(0.0..perimeter);
            if s < length {
                (s - hl, hw)
            } else if s < 2.0 * length {
                (s - length - hl, -hw)
            } else if s < 2.0 * length + width {
                (hl, s - 2.0 * length - hw)
            } else {
                (-hl, s - 2.0 * length - width - hw)
            }
        }
        BodyShape::Filled => (rng.gen_range(-hl..hl), rng.gen_range(-hw..hw)),
        BodyShape::Blob => (normal(rng, length), normal(rng, width)),
    }
}

fn approach_ranges(rng: &mut ChaCha8Rng, profile: &ClassProfile, stop_range: f64) -> Vec<f64> {
    let n = uniform_count(rng, profile.samples_per_track.0, profile.samples_per_track.1).max(1);
    let start = uniform(rng, profile.start_range).min(MAX_RANGE_M - 3.0);
    let stop = stop_range + rng.gen_range(0.0..2.0);
    if n == 1 {
        return vec![start];
    }
    (0..n)
        .map(|k| start + (stop - start) * k as f64 / (n - 1) as f64)
        .collect()
}

/// Generates one track. Deterministic in `(spec, class, track_id)`.
pub fn generate_track(spec: &GenSpec, class: ObjectClass, track_id: &str) -> Vec<ObjectSample> {
    let profile = spec.profile(class);
    let mut rng = seed::rng(
        spec.seed,
        &[seed::label("track"), class.index() as u64, seed::label(track_id)],
    );

    let length = uniform(&mut rng, profile.length);
    let width = uniform(&mut rng, profile.width);
    let flipped = rng.gen_bool(profile.axis_flip_probability.clamp(0.0, 1.0));
    let lateral = rng.gen_range(-3.0..3.0);
    let speed = uniform(&mut rng, profile.speed);
    let heading = rng.gen_range(-PI..PI);
    let rcs_offset = normal(&mut rng, 1.0);

    let ranges = approach_ranges(&mut rng, &profile, spec.stop_range);
    let (lo, hi) = profile.reflections_per_sample;
    let mut samples = Vec::with_capacity(ranges.len());
    for (k, &distance) in ranges.iter().enumerate() {
        let drift = if profile.mover() { 0.05 * speed * k as f64 } else { 0.0 };
        let y = (lateral + drift * heading.sin().signum()).clamp(-6.0, 6.0);
        let x = (distance * distance - y * y).max(1.0).sqrt();
        let (sin_h, cos_h) = heading.sin_cos();

        let closeness = 1.0 - 0.6 * ((distance - spec.stop_range) / (MAX_RANGE_M - spec.stop_range)).clamp(0.0, 1.0);
        let hi_here = lo + ((hi - lo) as f64 * closeness).round() as usize;
        let count = uniform_count(&mut rng, lo, hi_here.max(lo)).max(1);

        let mut reflections = Vec::with_capacity(count);
        for i in 0..count {
            let (mut bx, mut by) = body_point(&mut rng, profile.shape, length, width, i);
            if flipped {
                (bx, by) = (-by, bx);
            }
            bx += normal(&mut rng, spec.position_noise);
            by += normal(&mut rng, spec.position_noise);
            let wx = x + cos_h * bx - sin_h * by;
            let wy = y + sin_h * bx + cos_h * by;
            let range_m = wx.hypot(wy);
            let bulk = speed * (cos_h * wx + sin_h * wy) / range_m;
            let v_r = bulk + rng.gen_range(-1.0..=1.0) * profile.vr_spread;
            reflections.push(Reflection {
                x_world: wx,
                y_world: wy,
                rcs: profile.rcs_mean + rcs_offset + normal(&mut rng, profile.rcs_spread),
                range_m,
                v_r,
                azimuth: wy.atan2(wx),
            });
        }

        let jitter = spec.center_jitter;
        let pose = ObjectPose {
            x: x + if jitter > 0.0 {
                rng.gen_range(-jitter..jitter)
            } else {
                0.0
            },
            y: y + if jitter > 0.0 {
                rng.gen_range(-jitter..jitter)
            } else {
                0.0
            },
            heading: heading + normal(&mut rng, spec.heading_noise),
        };
        samples.push(ObjectSample {
            track_id: track_id.to_owned(),
            class_label: class,
            pose,
            reflections,
        });
    }
    samples
}

/// All tracks of all classes, classes in label order, tracks in index order.
pub fn generate_dataset(spec: &GenSpec) -> Vec<ObjectSample> {
    let mut out = Vec::new();
    for (&class, &n) in &spec.tracks_per_class {
        for t in 0..n {
            out.extend(generate_track(spec, class, &GenSpec::track_id(class, t)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::to_object_frame;

    fn extents(s: &ObjectSample) -> (f64, f64) {
        let pts: Vec<_> = s.reflections.iter().map(|r| to_object_frame(r, &s.pose)).collect();
        let span = |f: fn(&(f64, f64)) -> f64| {
            let (lo, hi) = pts
                .iter()
                .map(f)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            hi - lo
        };
        (span(|p| p.0), span(|p| p.1))
    }

    #[test]
    fn cars_are_longer_than_wide() {
        for seed in 0..5 {
            let spec = GenSpec::with_seed(seed);
            for t in 0..5 {
                for s in generate_track(&spec, ObjectClass::Car, &GenSpec::track_id(ObjectClass::Car, t)) {
                    let (ex, ey) = extents(&s);
                    assert!(ex >= ey, "{ex} < {ey}");
                }
            }
        }
    }

    #[test]
    fn non_obstacles_are_static() {
        let spec = GenSpec::with_seed(3);
        for t in 0..20 {
            for s in generate_track(&spec, ObjectClass::NonObstacle, &format!("n{t}")) {
                assert!(s.reflections.iter().all(|r| r.v_r.abs() < 0.2));
            }
        }
    }

    #[test]
    fn tracks_are_deterministic() {
        let spec = GenSpec::with_seed(8);
        let a = generate_track(&spec, ObjectClass::Cyclist, "c-1");
        assert_eq!(a, generate_track(&spec, ObjectClass::Cyclist, "c-1"));
        assert_ne!(a, generate_track(&spec, ObjectClass::Cyclist, "c-2"));
    }

    #[test]
    fn approach_is_monotone_and_in_range() {
        let spec = GenSpec::with_seed(2);
        for class in ObjectClass::ALL {
            let samples = generate_track(&spec, class, "x");
            assert!(!samples.is_empty());
            for w in samples.windows(2) {
                assert!(w[1].pose.distance() < w[0].pose.distance() + 1.5);
            }
            for s in &samples {
                assert!(!s.reflections.is_empty());
                assert!(s.pose.distance() <= MAX_RANGE_M);
                assert!(s.reflections.iter().all(|r| r.range_m <= MAX_RANGE_M && r.is_valid()));
            }
        }
    }

    #[test]
    fn desk_track_counts() {
        let spec = GenSpec::default();
        let counts: Vec<usize> = ObjectClass::ALL.iter().map(|c| spec.tracks_per_class[c]).collect();
        assert_eq!(counts, vec![57, 34, 27, 70]);
        let data = generate_dataset(&spec);
        for class in ObjectClass::ALL {
            let tracks: std::collections::BTreeSet<_> = data
                .iter()
                .filter(|s| s.class_label == class)
                .map(|s| s.track_id.clone())
                .collect();
            assert_eq!(tracks.len(), spec.tracks_per_class[&class]);
        }
    }

    #[test]
    fn seeds_change_values_not_structure() {
        let small = |seed| GenSpec {
            tracks_per_class: [(ObjectClass::Car, 2), (ObjectClass::Cyclist, 2)].into_iter().collect(),
            ..GenSpec::with_seed(seed)
        };
        let (a, b) = (generate_dataset(&small(1)), generate_dataset(&small(2)));
        assert_ne!(a, b);
        let ids = |d: &[ObjectSample]| {
            d.iter()
                .map(|s| (s.track_id.clone(), s.class_label))
                .collect::<std::collections::BTreeSet<_>>()
        };
        assert_eq!(ids(&a), ids(&b));
    }
}
