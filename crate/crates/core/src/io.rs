//! File formats: mask CSV, field and image grids, the binary sensing container
//! and the JSONL results ledger.
//!
//! All text formats carry a header row. Binary data is little-endian.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{GrayImage, Luma};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::FieldMap;
use crate::geometry::Vec3;
use crate::masks::{Mask, PhaseProfile, SeedRecord, Steering, StrategyKind};
use crate::scalar::Real;
use crate::scene::ImageGrid;
use crate::sensing::{Measurement, RowMeta, SensingMatrix};

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            format: "csv",
            message: format!("{}: {other:?}", path.display()),
        },
    }
}

// ---------------------------------------------------------------------------
// masks

/// One element of one panel of one mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub mask_index: usize,
    pub kind: StrategyKind,
    pub panel_id: usize,
    pub row: usize,
    pub col: usize,
    pub phase: f64,
    pub theta: Option<f64>,
    pub phi: Option<f64>,
    pub offset: f64,
    pub seed: u64,
    pub stream: u64,
}

/// Writes masks as CSV, one line per element:
/// `mask_index,kind,panel_id,row,col,phase,theta,phi,offset,seed,stream`.
///
/// Steering columns are empty for random patterns.
pub fn write_masks_csv<T: Real>(path: &Path, masks: &[Mask<T>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for mask in masks {
        for (pid, profile) in mask.profiles.iter().enumerate() {
            let steer = mask.steering.get(pid).copied().flatten();
            for m in 0..profile.rows {
                for n in 0..profile.cols {
                    let rec = MaskRecord {
                        mask_index: mask.index,
                        kind: mask.kind,
                        panel_id: pid,
                        row: m,
                        col: n,
                        phase: profile.get(m, n).to_f64_lossy(),
                        theta: steer.map(|s| s.theta.to_f64_lossy()),
                        phi: steer.map(|s| s.phi.to_f64_lossy()),
                        offset: mask.offsets[pid].to_f64_lossy(),
                        seed: mask.seed_record.seed,
                        stream: mask.seed_record.stream,
                    };
                    w.serialize(rec).map_err(|e| csv_err(path, e))?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads masks written by [`write_masks_csv`]. Masks are returned in order of `mask_index`.
pub fn read_masks_csv<T: Real>(path: &Path) -> Result<Vec<Mask<T>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    // mask -> panel -> records
    let mut groups: BTreeMap<usize, BTreeMap<usize, Vec<MaskRecord>>> = BTreeMap::new();
    for rec in r.deserialize::<MaskRecord>() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        groups.entry(rec.mask_index).or_default().entry(rec.panel_id).or_default().push(rec);
    }
    let bad = |message: String| Error::Format { format: "mask csv", message };
    let mut out = Vec::with_capacity(groups.len());
    for (index, panels) in groups {
        let mut profiles = Vec::new();
        let mut steering = Vec::new();
        let mut offsets = Vec::new();
        let mut kind = None;
        let mut seed_record = None;
        for (expected, (pid, recs)) in panels.into_iter().enumerate() {
            if pid != expected {
                return Err(bad(format!("mask {index}: panel ids must be contiguous from 0, found {pid}")));
            }
            let rows = recs.iter().map(|r| r.row).max().unwrap_or(0) + 1;
            let cols = recs.iter().map(|r| r.col).max().unwrap_or(0) + 1;
            if recs.len() != rows * cols {
                return Err(bad(format!("mask {index} panel {pid}: {} elements for a {rows}×{cols} grid", recs.len())));
            }
            let mut phases = vec![T::zero(); rows * cols];
            let mut seen = vec![false; rows * cols];
            for r in &recs {
                let i = r.row * cols + r.col;
                if seen[i] {
                    return Err(bad(format!("mask {index} panel {pid}: duplicate element ({}, {})", r.row, r.col)));
                }
                seen[i] = true;
                phases[i] = T::lit(r.phase);
            }
            let first = &recs[0];
            kind.get_or_insert(first.kind);
            seed_record.get_or_insert(SeedRecord::new(first.seed, first.stream));
            profiles.push(PhaseProfile {
                panel_id: pid,
                rows,
                cols,
                phases,
            });
            steering.push(match (first.theta, first.phi) {
                (Some(t), Some(p)) => Some(Steering {
                    theta: T::lit(t),
                    phi: T::lit(p),
                }),
                _ => None,
            });
            offsets.push(T::lit(first.offset));
        }
        out.push(Mask {
            index,
            kind: kind.ok_or_else(|| bad(format!("mask {index} has no panels")))?,
            profiles,
            steering,
            offsets,
            seed_record: seed_record.unwrap_or(SeedRecord::new(0, 0)),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// fields and images

/// Writes `x,y,z,re,im` per sample.
pub fn write_field_csv<T: Real>(path: &Path, field: &FieldMap<T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["x", "y", "z", "re", "im"]).map_err(|e| csv_err(path, e))?;
    for (p, v) in field.sample_points.iter().zip(&field.values) {
        let [x, y, z] = p.to_f64();
        w.serialize((x, y, z, v.re.to_f64_lossy(), v.im.to_f64_lossy()))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Sample points and complex values of a field map.
pub type FieldSamples = (Vec<Vec3<f64>>, Vec<Complex<f64>>);

/// Reads a field CSV back into `(points, values)`.
pub fn read_field_csv(path: &Path) -> Result<FieldSamples> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    let mut points = Vec::new();
    let mut values = Vec::new();
    for rec in r.deserialize::<(f64, f64, f64, f64, f64)>() {
        let (x, y, z, re, im) = rec.map_err(|e| csv_err(path, e))?;
        points.push(Vec3::new(x, y, z));
        values.push(Complex::new(re, im));
    }
    Ok((points, values))
}

/// Renders row-major grid values (`index = iy·nx + ix`) as an 8-bit grayscale PNG,
/// max-normalized, with +y at the top. Each sample becomes a `scale × scale` block.
pub fn write_grid_png<T: Real>(path: &Path, values: &[T], nx: usize, ny: usize, scale: u32) -> Result<()> {
    if values.len() != nx * ny {
        return Err(Error::Dimension {
            what: "image values vs grid",
            expected: nx * ny,
            actual: values.len(),
        });
    }
    let max = values.iter().map(|v| v.to_f64_lossy()).fold(0.0, f64::max);
    let scale = scale.max(1);
    let mut img = GrayImage::new(nx as u32 * scale, ny as u32 * scale);
    for iy in 0..ny {
        for ix in 0..nx {
            let v = values[iy * nx + ix].to_f64_lossy();
            let level = if max > 0.0 { (255.0 * (v / max).clamp(0.0, 1.0)).round() as u8 } else { 0 };
            let top = (ny - 1 - iy) as u32 * scale;
            for dy in 0..scale {
                for dx in 0..scale {
                    img.put_pixel(ix as u32 * scale + dx, top + dy, Luma([level]));
                }
            }
        }
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    img.save(path)?;
    Ok(())
}

/// Writes `x,y,magnitude,phase` for a reconstruction on `grid`.
pub fn write_recon_csv<T: Real>(path: &Path, grid: &ImageGrid<T>, sigma: &[Complex<T>]) -> Result<()> {
    if sigma.len() != grid.len() {
        return Err(Error::Dimension {
            what: "reconstruction vs grid",
            expected: grid.len(),
            actual: sigma.len(),
        });
    }
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["x", "y", "magnitude", "phase"]).map_err(|e| csv_err(path, e))?;
    for (p, s) in grid.points.iter().zip(sigma) {
        w.serialize((p.x.to_f64_lossy(), p.y.to_f64_lossy(), s.norm().to_f64_lossy(), s.arg().to_f64_lossy()))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// binary sensing container
//
// Layout (all little-endian):
//   magic      8 bytes  "RISRCI\0\x01"
//   precision  u32      8 = complex64 (two f32), 16 = complex128 (two f64)
//   flags      u32      bit 0: a measurement block follows the matrix
//   rows       u64
//   cols       u64
//   row_meta   rows × (mask_index u64, frequency f64)
//   grid       cols × (x f64, y f64, z f64)
//   entries    rows·cols complex values, row-major
//   measurement (if flagged):
//     snr_db f64, noise_power f64, seed u64, stream u64, rows complex values

const MAGIC: &[u8; 8] = b"RISRCI\0\x01";

fn precision_of<T: Real>() -> u32 {
    2 * std::mem::size_of::<T>() as u32
}

struct LeWriter<W: Write> {
    inner: W,
    precision: u32,
}

impl<W: Write> LeWriter<W> {
    fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.inner.write_all(b)
    }
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn complex<T: Real>(&mut self, z: Complex<T>) -> std::io::Result<()> {
        if self.precision == 8 {
            self.bytes(&(z.re.to_f64_lossy() as f32).to_le_bytes())?;
            self.bytes(&(z.im.to_f64_lossy() as f32).to_le_bytes())
        } else {
            self.f64(z.re.to_f64_lossy())?;
            self.f64(z.im.to_f64_lossy())
        }
    }
}

struct LeReader<R: Read> {
    inner: R,
    precision: u32,
}

impl<R: Read> LeReader<R> {
    fn array<const N: usize>(&mut self) -> std::io::Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b)?;
        Ok(b)
    }
    fn u32(&mut self) -> std::io::Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> std::io::Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> std::io::Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn complex<T: Real>(&mut self) -> std::io::Result<Complex<T>> {
        if self.precision == 8 {
            let re = f32::from_le_bytes(self.array()?);
            let im = f32::from_le_bytes(self.array()?);
            Ok(Complex::new(T::lit(re as f64), T::lit(im as f64)))
        } else {
            Ok(Complex::new(T::lit(self.f64()?), T::lit(self.f64()?)))
        }
    }
}

/// Writes `h` (and optionally a measurement of it) to the binary container.
pub fn write_sensing_bin<T: Real>(path: &Path, h: &SensingMatrix<T>, measurement: Option<&Measurement<T>>) -> Result<()> {
    if let Some(m) = measurement {
        if m.g.len() != h.rows {
            return Err(Error::Dimension {
                what: "measurement vs matrix rows",
                expected: h.rows,
                actual: m.g.len(),
            });
        }
    }
    let mut w = LeWriter {
        inner: create(path)?,
        precision: precision_of::<T>(),
    };
    let run = |w: &mut LeWriter<BufWriter<File>>| -> std::io::Result<()> {
        w.bytes(MAGIC)?;
        w.u32(w.precision)?;
        w.u32(measurement.is_some() as u32)?;
        w.u64(h.rows as u64)?;
        w.u64(h.cols as u64)?;
        for meta in &h.row_meta {
            w.u64(meta.mask_index as u64)?;
            w.f64(meta.frequency)?;
        }
        for p in &h.grid {
            for c in p.to_f64() {
                w.f64(c)?;
            }
        }
        for z in &h.entries {
            w.complex(*z)?;
        }
        if let Some(m) = measurement {
            w.f64(m.snr_db)?;
            w.f64(m.noise_power)?;
            w.u64(m.noise_seed.seed)?;
            w.u64(m.noise_seed.stream)?;
            for z in &m.g {
                w.complex(*z)?;
            }
        }
        w.inner.flush()
    };
    run(&mut w).map_err(|e| Error::io(path, e))
}

/// Reads a container written by [`write_sensing_bin`] at either precision.
pub fn read_sensing_bin<T: Real>(path: &Path) -> Result<(SensingMatrix<T>, Option<Measurement<T>>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = LeReader {
        inner: BufReader::new(file),
        precision: 0,
    };
    let bad = |message: String| Error::Format {
        format: "sensing container",
        message,
    };
    let io = |e| Error::io(path, e);
    let magic: [u8; 8] = r.array().map_err(io)?;
    if &magic != MAGIC {
        return Err(bad("bad magic".into()));
    }
    r.precision = r.u32().map_err(io)?;
    if r.precision != 8 && r.precision != 16 {
        return Err(bad(format!("unsupported precision {}", r.precision)));
    }
    let flags = r.u32().map_err(io)?;
    let rows = r.u64().map_err(io)? as usize;
    let cols = r.u64().map_err(io)? as usize;
    // Guard against absurd headers before allocating.
    let expected = (rows as u128) * (cols as u128) * r.precision as u128;
    let available = fs::metadata(path).map_err(io)?.len() as u128;
    if expected > available {
        return Err(bad(format!("header claims {rows}×{cols} entries but file holds {available} bytes")));
    }
    let mut row_meta = Vec::with_capacity(rows);
    for _ in 0..rows {
        let mask_index = r.u64().map_err(io)? as usize;
        let frequency = r.f64().map_err(io)?;
        row_meta.push(RowMeta { mask_index, frequency });
    }
    let mut grid = Vec::with_capacity(cols);
    for _ in 0..cols {
        let c = [r.f64().map_err(io)?, r.f64().map_err(io)?, r.f64().map_err(io)?];
        grid.push(Vec3::from_f64(c));
    }
    let mut entries = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        entries.push(r.complex().map_err(io)?);
    }
    let h = SensingMatrix {
        rows,
        cols,
        entries,
        row_meta,
        grid,
    };
    let measurement = if flags & 1 == 1 {
        let snr_db = r.f64().map_err(io)?;
        let noise_power = r.f64().map_err(io)?;
        let seed = r.u64().map_err(io)?;
        let stream = r.u64().map_err(io)?;
        let mut g = Vec::with_capacity(rows);
        for _ in 0..rows {
            g.push(r.complex().map_err(io)?);
        }
        Some(Measurement {
            g,
            snr_db,
            noise_power,
            noise_seed: SeedRecord::new(seed, stream),
        })
    } else {
        None
    };
    Ok((h, measurement))
}

/// CSV dump of a (small) matrix: `row,mask_index,frequency,col,re,im`.
pub fn write_sensing_csv<T: Real>(path: &Path, h: &SensingMatrix<T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["row", "mask_index", "frequency", "col", "re", "im"])
        .map_err(|e| csv_err(path, e))?;
    for i in 0..h.rows {
        let meta = h.row_meta[i];
        for (j, z) in h.row(i).iter().enumerate() {
            w.serialize((i, meta.mask_index, meta.frequency, j, z.re.to_f64_lossy(), z.im.to_f64_lossy()))
                .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// ledger

/// Appends one JSON record as a line of `path`.
pub fn append_ledger<S: Serialize>(path: &Path, record: &S) -> Result<()> {
    let line = serde_json::to_string(record).map_err(|e| Error::Format {
        format: "ledger",
        message: e.to_string(),
    })?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Parses every line of a ledger file.
pub fn read_ledger(path: &Path) -> Result<Vec<serde_json::Value>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Format {
                format: "ledger",
                message: e.to_string(),
            })
        })
        .collect()
}
