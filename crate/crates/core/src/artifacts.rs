//! Output files: trace CSV, metrics JSON and wait heatmaps (CSV and PGM).

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::grid::{CellKind, Coord, GridMap};
use crate::sim::{SimMetrics, TraceAction, TraceEvent};

/// Gray level of obstacle pixels in heatmaps.
pub const OBSTACLE_GRAY: u8 = 128;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Format(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io { path: path.display().to_string(), source }
}

pub fn write_trace_csv<W: Write>(trace: &[TraceEvent], out: W) -> Result<(), ArtifactError> {
    let mut w = csv::Writer::from_writer(out);
    if trace.is_empty() {
        w.write_record(["tick", "agent", "status", "row", "col", "action", "lock_event"])?;
    }
    for e in trace {
        w.serialize(e)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceEvent>, ArtifactError> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r.deserialize().collect::<Result<Vec<TraceEvent>, _>>()?;
    Ok(rows)
}

pub fn save_trace(trace: &[TraceEvent], path: &Path) -> Result<(), ArtifactError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    write_trace_csv(trace, io::BufWriter::new(file))
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceEvent>, ArtifactError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_trace_csv(io::BufReader::new(file))
}

pub fn save_metrics(metrics: &SimMetrics, path: &Path) -> Result<(), ArtifactError> {
    fs::write(path, metrics.to_json() + "\n").map_err(io_err(path))
}

pub fn load_metrics(path: &Path) -> Result<SimMetrics, ArtifactError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Wait counts per cell rebuilt from the `wait` rows of a trace.
pub fn wait_counts_from_trace(
    trace: &[TraceEvent],
    width: usize,
    height: usize,
) -> Result<Vec<Vec<u64>>, ArtifactError> {
    let mut grid = vec![vec![0u64; width]; height];
    for e in trace.iter().filter(|e| e.action == TraceAction::Wait) {
        let cell = grid
            .get_mut(e.row)
            .and_then(|r| r.get_mut(e.col))
            .ok_or_else(|| ArtifactError::Format(format!("trace row at {} is outside {height}x{width}", e.loc())))?;
        *cell += 1;
    }
    Ok(grid)
}

/// Gray levels: the most frequent cell is black, zero is white, obstacles
/// are mid-gray. With no waits at all the whole image is white.
pub fn heatmap_pixels(counts: &[Vec<u64>], map: Option<&GridMap>) -> Vec<u8> {
    let max = counts.iter().flatten().copied().max().unwrap_or(0);
    let mut px = Vec::with_capacity(counts.len() * counts.first().map_or(0, Vec::len));
    for (r, row) in counts.iter().enumerate() {
        for (c, &n) in row.iter().enumerate() {
            let obstacle = map.is_some_and(|m| m.cell(Coord::new(r, c)) == CellKind::Obstacle);
            px.push(if max == 0 {
                255
            } else if obstacle {
                OBSTACLE_GRAY
            } else {
                255 - (255.0 * n as f64 / max as f64).round() as u8
            });
        }
    }
    px
}

/// Binary 8-bit PGM (P5).
pub fn write_pgm<W: Write>(mut out: W, width: usize, height: usize, pixels: &[u8]) -> io::Result<()> {
    assert_eq!(pixels.len(), width * height, "pixel buffer size");
    write!(out, "P5\n{width} {height}\n255\n")?;
    out.write_all(pixels)?;
    out.flush()
}

/// Parses a binary PGM with maxval 255 into `(width, height, pixels)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), ArtifactError> {
    let bad = || ArtifactError::Format("not an 8-bit P5 image".into());
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while bytes.get(pos).ok_or_else(bad)?.is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?);
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad());
    }
    let w: usize = fields[1].parse().map_err(|_| bad())?;
    let h: usize = fields[2].parse().map_err(|_| bad())?;
    let data = bytes.get(pos + 1..).ok_or_else(bad)?;
    if data.len() != w * h {
        return Err(bad());
    }
    Ok((w, h, data.to_vec()))
}

pub fn heatmap_csv(counts: &[Vec<u64>]) -> String {
    let mut out = String::new();
    for row in counts {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Writes `<stem>.pgm` and `<stem>.csv` next to each other.
pub fn save_heatmap(counts: &[Vec<u64>], map: Option<&GridMap>, stem: &Path) -> Result<(), ArtifactError> {
    let height = counts.len();
    let width = counts.first().map_or(0, Vec::len);
    let pgm = stem.with_extension("pgm");
    let file = fs::File::create(&pgm).map_err(io_err(&pgm))?;
    write_pgm(io::BufWriter::new(file), width, height, &heatmap_pixels(counts, map)).map_err(io_err(&pgm))?;
    let csv = stem.with_extension("csv");
    fs::write(&csv, heatmap_csv(counts)).map_err(io_err(&csv))
}
