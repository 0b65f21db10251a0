use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Samples whose object is farther than this from the sensor are discarded.
pub const MAX_RANGE_M: f64 = 75.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Car,
    Pedestrian,
    Cyclist,
    NonObstacle,
}

impl ObjectClass {
    pub const COUNT: usize = 4;
    pub const ALL: [ObjectClass; 4] = [
        ObjectClass::Car,
        ObjectClass::Pedestrian,
        ObjectClass::Cyclist,
        ObjectClass::NonObstacle,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectClass::Car => "car",
            ObjectClass::Pedestrian => "pedestrian",
            ObjectClass::Cyclist => "cyclist",
            ObjectClass::NonObstacle => "non_obstacle",
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownClass(pub String);

impl FromStr for ObjectClass {
    type Err = UnknownClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| UnknownClass(s.to_owned()))
    }
}

/// One radar detection, world coordinates, radial velocity ego-motion
/// compensated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reflection {
    pub x_world: f64,
    pub y_world: f64,
    /// dBsm
    pub rcs: f64,
    pub range_m: f64,
    pub v_r: f64,
    pub azimuth: f64,
}

impl Reflection {
    pub fn is_valid(&self) -> bool {
        [
            self.x_world,
            self.y_world,
            self.rcs,
            self.range_m,
            self.v_r,
            self.azimuth,
        ]
        .iter()
        .all(|v| v.is_finite())
            && self.range_m >= 0.0
    }
}

/// Tracked object position and heading in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl ObjectPose {
    pub fn distance(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// One tracked object at one instant: the unit of classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSample {
    pub track_id: String,
    pub class_label: ObjectClass,
    pub pose: ObjectPose,
    pub reflections: Vec<Reflection>,
}

/// Drops samples whose object lies beyond `max_range_m` of the sensor.
pub fn apply_range_cutoff(samples: Vec<ObjectSample>, max_range_m: f64) -> Vec<ObjectSample> {
    samples
        .into_iter()
        .filter(|s| s.pose.distance() <= max_range_m)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_names_round_trip() {
        for c in ObjectClass::ALL {
            assert_eq!(c.as_str().parse::<ObjectClass>().unwrap(), c);
            assert_eq!(ObjectClass::from_index(c.index()), Some(c));
        }
        assert_eq!("truck".parse::<ObjectClass>(), Err(UnknownClass("truck".into())));
    }
}
