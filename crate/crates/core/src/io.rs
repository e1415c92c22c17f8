//! CSV files for trajectories, single frames and recordings, plus JSON helpers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{feature_names, Frame, Representation, Trajectory, FEATURES};
use crate::preprocess::{Recording, Sample, RECORDING_CHANNELS};

const PALM_NAMES: [&str; 6] = ["palm_x", "palm_y", "palm_z", "palm_roll", "palm_pitch", "palm_yaw"];

pub fn trajectory_header() -> Vec<String> {
    std::iter::once("t".to_string()).chain(feature_names()).collect()
}

pub fn recording_header() -> Vec<String> {
    let mut h = trajectory_header();
    h.extend(PALM_NAMES.iter().map(|s| s.to_string()));
    h
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::format(path, e)
}

fn check_header(path: &Path, found: &csv::StringRecord, expected: &[String]) -> Result<()> {
    let ok = found.len() == expected.len() && found.iter().zip(expected).all(|(a, b)| a.trim() == b);
    if ok {
        Ok(())
    } else {
        Err(csv_err(
            path,
            format!("unexpected header, expected {} columns: {}", expected.len(), expected.join(",")),
        ))
    }
}

fn parse_cell(path: &Path, line: usize, cell: &str, allow_missing: bool) -> Result<f64> {
    let cell = cell.trim();
    if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
        if allow_missing {
            return Ok(f64::NAN);
        }
        return Err(csv_err(path, format!("line {line}: missing value")));
    }
    cell.parse()
        .map_err(|_| csv_err(path, format!("line {line}: cannot parse `{cell}` as a number")))
}

fn read_rows(path: &Path, reader: impl Read, expected: &[String], allow_missing: bool) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    check_header(path, &header, expected)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i + 2;
        rows.push(
            rec.iter()
                .map(|c| parse_cell(path, line, c, allow_missing))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(rows)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn write_rows<'a>(
    path: &Path,
    writer: impl Write,
    header: &[String],
    rows: impl Iterator<Item = Vec<f64>> + 'a,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(row.into_iter().map(fmt)).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn frame_row(t: f64, f: &Frame) -> Vec<f64> {
    std::iter::once(t).chain(f.features.iter().copied()).collect()
}

pub fn write_trajectory(writer: impl Write, t: &Trajectory) -> Result<()> {
    write_trajectory_at(Path::new("<trajectory>"), writer, t)
}

fn write_trajectory_at(path: &Path, writer: impl Write, t: &Trajectory) -> Result<()> {
    if t.representation() != Representation::Physical {
        return Err(Error::InvalidInput("trajectory files hold physical coordinates".into()));
    }
    let dt = t.dt();
    write_rows(
        path,
        writer,
        &trajectory_header(),
        t.frames().iter().enumerate().map(move |(k, f)| frame_row(k as f64 * dt, f)),
    )
}

pub fn read_trajectory(path: &Path, reader: impl Read) -> Result<Trajectory> {
    let rows = read_rows(path, reader, &trajectory_header(), false)?;
    if rows.len() < 2 {
        return Err(csv_err(path, "a trajectory needs at least 2 rows"));
    }
    let dt = (rows[rows.len() - 1][0] - rows[0][0]) / (rows.len() - 1) as f64;
    let frames = rows
        .iter()
        .map(|r| Frame::new(r[1..].try_into().expect("header checked")))
        .collect();
    Trajectory::new(frames, dt, Representation::Physical).map_err(|e| csv_err(path, e))
}

pub fn save_trajectory(path: &Path, t: &Trajectory) -> Result<()> {
    write_trajectory_at(path, create(path)?, t)
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    read_trajectory(path, open(path)?)
}

/// One frame in trajectory layout; the time column is written as 0 and ignored on load.
pub fn save_frame(path: &Path, f: &Frame) -> Result<()> {
    write_rows(path, create(path)?, &trajectory_header(), std::iter::once(frame_row(0.0, f)))
}

pub fn read_frame(path: &Path, reader: impl Read) -> Result<Frame> {
    let rows = read_rows(path, reader, &trajectory_header(), false)?;
    match rows.as_slice() {
        [row] => Ok(Frame::new(row[1..].try_into().expect("header checked"))),
        _ => Err(csv_err(path, format!("expected exactly one frame, found {}", rows.len()))),
    }
}

pub fn load_frame(path: &Path) -> Result<Frame> {
    read_frame(path, open(path)?)
}

/// Recording CSV; missing values are written as empty cells.
pub fn write_recording(writer: impl Write, r: &Recording) -> Result<()> {
    write_recording_at(Path::new("<recording>"), writer, r)
}

fn write_recording_at(path: &Path, writer: impl Write, r: &Recording) -> Result<()> {
    write_rows(
        path,
        writer,
        &recording_header(),
        r.times()
            .iter()
            .zip(r.samples())
            .map(|(t, s)| std::iter::once(*t).chain(s.iter().copied()).collect()),
    )
}

/// Reads a recording; empty or `nan` cells become missing values.
pub fn read_recording(path: &Path, name: &str, reader: impl Read) -> Result<Recording> {
    let rows = read_rows(path, reader, &recording_header(), true)?;
    let mut times = Vec::with_capacity(rows.len());
    let mut samples = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        if r[0].is_nan() {
            return Err(csv_err(path, format!("line {}: missing timestamp", i + 2)));
        }
        times.push(r[0]);
        let s: Sample = r[1..].try_into().expect("header checked");
        samples.push(s);
    }
    debug_assert_eq!(RECORDING_CHANNELS, FEATURES + 6);
    Recording::new(name, times, samples).map_err(|e| csv_err(path, e))
}

pub fn save_recording(path: &Path, r: &Recording) -> Result<()> {
    write_recording_at(path, create(path)?, r)
}

/// Loads a recording named after the file stem.
pub fn load_recording(path: &Path) -> Result<Recording> {
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    read_recording(path, &name, open(path)?)
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| csv_err(path, e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| csv_err(path, e))
}
