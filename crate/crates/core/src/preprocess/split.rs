use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ObjectClass, ObjectSample, PreprocessError};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Splits {
    pub train: Vec<ObjectSample>,
    pub val: Vec<ObjectSample>,
    pub test: Vec<ObjectSample>,
}

impl Splits {
    pub fn track_ids(samples: &[ObjectSample]) -> BTreeSet<&str> {
        samples.iter().map(|s| s.track_id.as_str()).collect()
    }
}

const MIN_TRACKS: usize = 3;

/// Splits by track: the tracks of each class are shuffled and cut into
/// train/val/test so that no track contributes samples to two splits.
///
/// Validation and test each receive at least one track per class. Samples keep
/// their dataset order inside each split.
pub fn trackwise_split(samples: &[ObjectSample], ratios: SplitRatios, seed: u64) -> Result<Splits, PreprocessError> {
    // A track belongs to the class of its first sample.
    let mut track_class: HashMap<&str, ObjectClass> = HashMap::new();
    for s in samples {
        track_class.entry(&s.track_id).or_insert(s.class_label);
    }
    let mut per_class: BTreeMap<ObjectClass, Vec<&str>> = BTreeMap::new();
    for (&track, &class) in &track_class {
        per_class.entry(class).or_default().push(track);
    }

    let mut assignment: HashMap<&str, usize> = HashMap::new();
    for (class, mut tracks) in per_class {
        if tracks.len() < MIN_TRACKS {
            return Err(PreprocessError::TooFewTracks {
                class,
                found: tracks.len(),
                needed: MIN_TRACKS,
            });
        }
        tracks.sort_unstable();
        let mut rng = seed::rng(seed, &[seed::label("trackwise_split"), class.index() as u64]);
        tracks.shuffle(&mut rng);
        let n = tracks.len();
        let n_val = ((ratios.val * n as f64).round() as usize).max(1);
        let n_test = ((ratios.test * n as f64).round() as usize).max(1);
        let n_train = n - n_val - n_test;
        for (i, track) in tracks.into_iter().enumerate() {
            let split = if i < n_train {
                0
            } else if i < n_train + n_val {
                1
            } else {
                2
            };
            assignment.insert(track, split);
        }
    }

    let mut out = Splits::default();
    for s in samples {
        match assignment[s.track_id.as_str()] {
            0 => out.train.push(s.clone()),
            1 => out.val.push(s.clone()),
            _ => out.test.push(s.clone()),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{ObjectPose, Reflection};

    fn dataset(tracks_per_class: &[(ObjectClass, usize)], samples_per_track: usize) -> Vec<ObjectSample> {
        let mut out = Vec::new();
        for &(class, n) in tracks_per_class {
            for t in 0..n {
                for k in 0..samples_per_track {
                    out.push(ObjectSample {
                        track_id: format!("{class}-{t}"),
                        class_label: class,
                        pose: ObjectPose {
                            x: 10.0 + k as f64,
                            y: 0.0,
                            heading: 0.0,
                        },
                        reflections: vec![Reflection {
                            x_world: 10.0,
                            y_world: 0.0,
                            rcs: 0.0,
                            range_m: 10.0,
                            v_r: 0.0,
                            azimuth: 0.0,
                        }],
                    });
                }
            }
        }
        out
    }

    #[test]
    fn ten_tracks_split_six_two_two() {
        let data = dataset(&[(ObjectClass::Car, 10)], 3);
        let s = trackwise_split(&data, SplitRatios::default(), 7).unwrap();
        assert_eq!(Splits::track_ids(&s.train).len(), 6);
        assert_eq!(Splits::track_ids(&s.val).len(), 2);
        assert_eq!(Splits::track_ids(&s.test).len(), 2);
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), data.len());
    }

    #[test]
    fn splits_are_disjoint_and_reproducible() {
        let data = dataset(
            &[
                (ObjectClass::Car, 13),
                (ObjectClass::Cyclist, 5),
                (ObjectClass::Pedestrian, 3),
            ],
            2,
        );
        let a = trackwise_split(&data, SplitRatios::default(), 11).unwrap();
        let b = trackwise_split(&data, SplitRatios::default(), 11).unwrap();
        assert_eq!(a, b);
        let (tr, va, te) = (
            Splits::track_ids(&a.train),
            Splits::track_ids(&a.val),
            Splits::track_ids(&a.test),
        );
        assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
    }

    #[test]
    fn too_few_tracks_names_the_class() {
        let data = dataset(&[(ObjectClass::Car, 5), (ObjectClass::NonObstacle, 2)], 1);
        assert_eq!(
            trackwise_split(&data, SplitRatios::default(), 0),
            Err(PreprocessError::TooFewTracks {
                class: ObjectClass::NonObstacle,
                found: 2,
                needed: 3
            })
        );
    }
}
