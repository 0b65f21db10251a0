//! JSON-lines dataset files: one object sample per line.
//!
//! ```text
//! {"track_id":"car-0001","class":"car","pose":{"x":..,"y":..,"heading":..},
//!  "reflections":[{"x":..,"y":..,"rcs":..,"range":..,"vr":..,"azimuth":..}]}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ObjectClass, ObjectPose, ObjectSample, Reflection};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed JSON: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown class {class:?}")]
    UnknownClass { line: usize, class: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: String },
    #[error("line {line}: sample has no reflections")]
    EmptyReflections { line: usize },
    #[error("line {line}: invalid value in `{field}`")]
    InvalidValue { line: usize, field: String },
    #[error("JSON encoding failed: {0}")]
    Encode(#[from] serde_json::Error),
}

#[derive(Serialize)]
struct PoseOut {
    x: f64,
    y: f64,
    heading: f64,
}

#[derive(Serialize)]
struct ReflectionOut {
    x: f64,
    y: f64,
    rcs: f64,
    range: f64,
    vr: f64,
    azimuth: f64,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    track_id: &'a str,
    class: &'static str,
    pose: PoseOut,
    reflections: Vec<ReflectionOut>,
}

#[derive(Deserialize)]
struct PoseIn {
    x: Option<f64>,
    y: Option<f64>,
    heading: Option<f64>,
}

#[derive(Deserialize)]
struct ReflectionIn {
    x: Option<f64>,
    y: Option<f64>,
    rcs: Option<f64>,
    range: Option<f64>,
    vr: Option<f64>,
    azimuth: Option<f64>,
}

#[derive(Deserialize)]
struct RecordIn {
    track_id: Option<String>,
    class: Option<String>,
    pose: Option<PoseIn>,
    reflections: Option<Vec<ReflectionIn>>,
}

fn require<T>(value: Option<T>, line: usize, field: impl Into<String>) -> Result<T, DatasetError> {
    value.ok_or_else(|| DatasetError::MissingField {
        line,
        field: field.into(),
    })
}

fn parse_line(text: &str, line: usize) -> Result<ObjectSample, DatasetError> {
    let rec: RecordIn = serde_json::from_str(text).map_err(|e| DatasetError::Parse {
        line,
        message: e.to_string(),
    })?;
    let track_id = require(rec.track_id, line, "track_id")?;
    let class_name = require(rec.class, line, "class")?;
    let class_label: ObjectClass = class_name.parse().map_err(|_| DatasetError::UnknownClass {
        line,
        class: class_name,
    })?;
    let pose = require(rec.pose, line, "pose")?;
    let pose = ObjectPose {
        x: require(pose.x, line, "pose.x")?,
        y: require(pose.y, line, "pose.y")?,
        heading: require(pose.heading, line, "pose.heading")?,
    };
    let raw = require(rec.reflections, line, "reflections")?;
    if raw.is_empty() {
        return Err(DatasetError::EmptyReflections { line });
    }
    let mut reflections = Vec::with_capacity(raw.len());
    for (i, r) in raw.into_iter().enumerate() {
        let field = |name: &str| format!("reflections[{i}].{name}");
        let refl = Reflection {
            x_world: require(r.x, line, field("x"))?,
            y_world: require(r.y, line, field("y"))?,
            rcs: require(r.rcs, line, field("rcs"))?,
            range_m: require(r.range, line, field("range"))?,
            v_r: require(r.vr, line, field("vr"))?,
            azimuth: require(r.azimuth, line, field("azimuth"))?,
        };
        if !refl.is_valid() {
            return Err(DatasetError::InvalidValue {
                line,
                field: format!("reflections[{i}]"),
            });
        }
        reflections.push(refl);
    }
    Ok(ObjectSample {
        track_id,
        class_label,
        pose,
        reflections,
    })
}

/// Reads a dataset; blank lines are skipped, line numbers are 1-based.
pub fn read_dataset_from<R: Read>(reader: R) -> Result<Vec<ObjectSample>, DatasetError> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line, idx + 1)?);
    }
    Ok(out)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<ObjectSample>, DatasetError> {
    read_dataset_from(File::open(path)?)
}

pub fn write_dataset_to<W: Write>(samples: &[ObjectSample], writer: W) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(writer);
    for s in samples {
        let rec = RecordOut {
            track_id: &s.track_id,
            class: s.class_label.as_str(),
            pose: PoseOut {
                x: s.pose.x,
                y: s.pose.y,
                heading: s.pose.heading,
            },
            reflections: s
                .reflections
                .iter()
                .map(|r| ReflectionOut {
                    x: r.x_world,
                    y: r.y_world,
                    rcs: r.rcs,
                    range: r.range_m,
                    vr: r.v_r,
                    azimuth: r.azimuth,
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(samples: &[ObjectSample], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    write_dataset_to(samples, File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"track_id":"a","class":"cyclist","pose":{"x":1.0,"y":2.0,"heading":0.5},"reflections":[{"x":1.5,"y":2.0,"rcs":-3.0,"range":2.5,"vr":0.25,"azimuth":0.9}]}"#;

    #[test]
    fn parses_a_record() {
        let data = read_dataset_from(GOOD.as_bytes()).unwrap();
        assert_eq!(data.len(), 1);
        assert_eq!(data[0].class_label, ObjectClass::Cyclist);
        assert_eq!(data[0].reflections[0].v_r, 0.25);
        assert_eq!(data[0].reflections[0].range_m, 2.5);
    }

    #[test]
    fn unknown_class_reports_line() {
        let text = format!("{GOOD}\n{}", GOOD.replace("cyclist", "truck"));
        match read_dataset_from(text.as_bytes()) {
            Err(DatasetError::UnknownClass { line: 2, class }) => assert_eq!(class, "truck"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_reflections_rejected() {
        let text = r#"{"track_id":"a","class":"car","pose":{"x":1,"y":2,"heading":0},"reflections":[]}"#;
        assert!(matches!(
            read_dataset_from(text.as_bytes()),
            Err(DatasetError::EmptyReflections { line: 1 })
        ));
    }

    #[test]
    fn missing_field_is_named() {
        let text = GOOD.replace(r#","vr":0.25"#, "");
        match read_dataset_from(text.as_bytes()) {
            Err(DatasetError::MissingField { line: 1, field }) => assert_eq!(field, "reflections[0].vr"),
            other => panic!("unexpected {other:?}"),
        }
        let text = GOOD.replace(r#""track_id":"a","#, "");
        assert!(matches!(
            read_dataset_from(text.as_bytes()),
            Err(DatasetError::MissingField { line: 1, .. })
        ));
    }

    #[test]
    fn malformed_json_reports_line() {
        let text = format!("{GOOD}\n\n{{not json");
        assert!(matches!(
            read_dataset_from(text.as_bytes()),
            Err(DatasetError::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn negative_range_rejected() {
        let text = GOOD.replace(r#""range":2.5"#, r#""range":-1.0"#);
        assert!(matches!(
            read_dataset_from(text.as_bytes()),
            Err(DatasetError::InvalidValue { line: 1, .. })
        ));
    }
}
