//! Raw state dumps: a little-endian `f64` matrix (one row per sample,
//! row-major) next to a JSON header.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde_json::{json, Value};

use super::Trajectory;
use crate::problems::Layout;
use crate::scalar::Real;

pub const FORMAT: &str = "grokflow-states";
pub const VERSION: u64 = 1;

fn layout_json(layout: Option<&Layout>) -> Value {
    match layout {
        None => Value::Null,
        Some(Layout::Flat { dim }) => json!({"kind": "flat", "dim": dim}),
        Some(Layout::Factors { n, m, rank }) => json!({"kind": "factors", "n": n, "m": m, "rank": rank}),
        Some(Layout::Diagonal { d }) => json!({"kind": "diagonal", "d": d}),
        Some(Layout::TwoLayer { width }) => json!({"kind": "two_layer", "width": width}),
    }
}

/// Header describing a state dump of `traj`.
pub fn header<T: Real>(traj: &Trajectory<T>, data_file: &str) -> Value {
    let cols = traj.states().first().map_or(0, |s| s.len());
    json!({
        "format": FORMAT,
        "version": VERSION,
        "data_file": data_file,
        "dtype": "f64",
        "endianness": "little",
        "order": "row_major",
        "rows": traj.len(),
        "cols": cols,
        "lambda": traj.lambda().as_f64(),
        "timescale": traj.timescale().as_str(),
        "layout": layout_json(traj.layout()),
        "times": traj.times().iter().map(|t| t.as_f64()).collect::<Vec<_>>(),
    })
}

pub fn write_states<T: Real, W: Write>(traj: &Trajectory<T>, mut out: W) -> io::Result<()> {
    for s in traj.states() {
        for x in s.iter() {
            out.write_all(&x.as_f64().to_le_bytes())?;
        }
    }
    out.flush()
}

/// Writes `<stem>.bin` and `<stem>.json` into `dir`.
pub fn write_sidecar<T: Real>(traj: &Trajectory<T>, dir: &Path, stem: &str) -> io::Result<()> {
    let bin = format!("{stem}.bin");
    write_states(traj, io::BufWriter::new(fs::File::create(dir.join(&bin))?))?;
    let hdr = serde_json::to_string_pretty(&header(traj, &bin)).map_err(io::Error::other)?;
    fs::write(dir.join(format!("{stem}.json")), hdr)
}

/// Loaded state dump.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDump {
    pub header: Value,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl StateDump {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Reads a dump through its JSON header.
pub fn read_sidecar(header_path: &Path) -> io::Result<StateDump> {
    let bad = |msg: &str| io::Error::new(io::ErrorKind::InvalidData, msg.to_string());
    let header: Value = serde_json::from_str(&fs::read_to_string(header_path)?).map_err(io::Error::other)?;
    if header["format"] != FORMAT {
        return Err(bad("not a state dump header"));
    }
    let rows = header["rows"].as_u64().ok_or_else(|| bad("missing rows"))? as usize;
    let cols = header["cols"].as_u64().ok_or_else(|| bad("missing cols"))? as usize;
    let file = header["data_file"].as_str().ok_or_else(|| bad("missing data_file"))?;
    let dir = header_path.parent().unwrap_or(Path::new("."));
    let mut bytes = Vec::new();
    fs::File::open(dir.join(file))?.read_to_end(&mut bytes)?;
    if bytes.len() != rows * cols * 8 {
        return Err(bad("state dump size does not match header"));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(StateDump {
        header,
        rows,
        cols,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::Timescale;
    use nalgebra::DVector;

    #[test]
    fn round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        let states = vec![DVector::from_vec(vec![1.0, -2.5]), DVector::from_vec(vec![3.0, 1e-300])];
        let tr = Trajectory::new(vec![0.0, 0.5], states, 0.1, Timescale::Fast).unwrap();
        write_sidecar(&tr, dir, "states").unwrap();
        let d = read_sidecar(&dir.join("states.json")).unwrap();
        assert_eq!((d.rows, d.cols), (2, 2));
        assert_eq!(d.row(0), &[1.0, -2.5]);
        assert_eq!(d.row(1), &[3.0, 1e-300]);
        assert_eq!(d.header["endianness"], "little");
    }
}
