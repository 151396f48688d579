//! Dataset files: one JSON object per line.
//!
//! Floating-point values are written with 17 significant digits so that
//! reading a file back reproduces every value bit for bit.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::synth::{CandidateObject, GroundTruth, Sample, Scene};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    seed: u64,
    objects: Vec<CandidateObject>,
    target_id: usize,
    target_box: BBox,
    expression: String,
}

struct FullPrecision;

impl Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

pub fn to_line(sample: &Sample) -> String {
    let record = Record {
        seed: sample.scene.seed,
        objects: sample.scene.objects.clone(),
        target_id: sample.scene.target_id,
        target_box: sample.truth.target_box,
        expression: sample.truth.expression.clone(),
    };
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FullPrecision);
    record.serialize(&mut ser).expect("record serializes");
    String::from_utf8(buf).expect("json is utf-8")
}

fn from_line(line: &str) -> std::result::Result<Sample, String> {
    let r: Record = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if r.target_id >= r.objects.len() {
        return Err(format!(
            "target_id {} out of range for {} objects",
            r.target_id,
            r.objects.len()
        ));
    }
    if let Some((i, o)) = r.objects.iter().enumerate().find(|(i, o)| o.id != *i) {
        return Err(format!("object at position {i} has id {}", o.id));
    }
    if !r.target_box.is_valid() {
        return Err("target_box must be finite with positive extent".into());
    }
    Ok(Sample {
        scene: Scene {
            objects: r.objects,
            target_id: r.target_id,
            seed: r.seed,
        },
        truth: GroundTruth {
            target_box: r.target_box,
            target_id: r.target_id,
            expression: r.expression,
        },
    })
}

pub fn write_dataset(path: &Path, samples: &[Sample]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for s in samples {
        writeln!(out, "{}", to_line(s)).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<Sample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = from_line(&line).map_err(|message| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        })?;
        samples.push(sample);
    }
    Ok(samples)
}
