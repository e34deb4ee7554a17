//! On-disk formats.
//!
//! # DT3 tensor container
//!
//! Magic bytes `DT3\0`, then the three dimensions as 64-bit little-endian
//! unsigned integers, then `I·J·K` 64-bit little-endian floats in the
//! linearization order documented in [`crate::tensor`].
//!
//! # Plain-text tensor
//!
//! First line `I J K`; every following non-empty line `i j k value` with
//! 1-based indices. Entries not listed are zero.
//!
//! # Stream directory
//!
//! A generated stream exports as one DT3 file per batch plus `manifest.txt`
//! listing the spec echo and, per batch, its file, true rank and active
//! concepts — the interchange format the harness reloads.

use crate::error::{Error, Result};
use crate::gen::{GroundTruth, StreamSpec};
use crate::tensor::DenseTensor3;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const DT3_MAGIC: &[u8; 4] = b"DT3\0";
pub const MANIFEST_NAME: &str = "manifest.txt";

pub fn write_dt3(t: &DenseTensor3<f64>, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    write(DT3_MAGIC)?;
    let (i, j, k) = t.dims();
    for d in [i as u64, j as u64, k as u64] {
        write(&d.to_le_bytes())?;
    }
    for &v in t.values() {
        write(&v.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dt3(path: &Path) -> Result<DenseTensor3<f64>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 28 || &bytes[..4] != DT3_MAGIC {
        return Err(Error::format(path, "missing DT3 magic"));
    }
    let dim_at = |off: usize| u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()) as usize;
    let (i, j, k) = (dim_at(4), dim_at(12), dim_at(20));
    let expected = 28 + i * j * k * 8;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} bytes for dims ({i}, {j}, {k}), got {}", bytes.len()),
        ));
    }
    let values: Vec<f64> = bytes[28..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DenseTensor3::new((i, j, k), values)
}

pub fn read_text_tensor(path: &Path) -> Result<DenseTensor3<f64>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty file"))?
        .map_err(|e| Error::io(path, e))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(path, "header must be `I J K`"))?;
    if dims.len() != 3 {
        return Err(Error::format(path, "header must have three dimensions"));
    }
    let (ni, nj, nk) = (dims[0], dims[1], dims[2]);
    let mut t = DenseTensor3::zeros((ni, nj, nk));
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(Error::format(
                path,
                format!("line {} must be `i j k value`", lineno + 2),
            ));
        }
        let idx = |s: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|_| Error::format(path, format!("bad index on line {}", lineno + 2)))
        };
        let (i, j, k) = (idx(parts[0])?, idx(parts[1])?, idx(parts[2])?);
        if i == 0 || j == 0 || k == 0 || i > ni || j > nj || k > nk {
            return Err(Error::format(
                path,
                format!("index out of range on line {} (indices are 1-based)", lineno + 2),
            ));
        }
        let v: f64 = parts[3]
            .parse()
            .map_err(|_| Error::format(path, format!("bad value on line {}", lineno + 2)))?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("line {} of {}", lineno + 2, path.display())));
        }
        t.set(i - 1, j - 1, k - 1, v);
    }
    Ok(t)
}

/// A stream reloaded from disk: everything the harness needs except the
/// generator's global factors.
#[derive(Debug, Clone)]
pub struct SavedStream {
    pub dims: (usize, usize, usize),
    pub initial_rank: usize,
    pub full_rank: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub batch_ranks: Vec<usize>,
    pub active_sets: Vec<Vec<usize>>,
    pub batches: Vec<DenseTensor3<f64>>,
}

fn batch_file_name(index: usize) -> String {
    format!("batch_{index:04}.dt3")
}

pub fn export_stream(gt: &GroundTruth<f64>, spec: &StreamSpec, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST_NAME);
    let file = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut w = BufWriter::new(file);
    let werr = |e| Error::io(&manifest_path, e);
    writeln!(w, "# dt3 stream manifest v1").map_err(werr)?;
    let (i, j, k) = spec.dims;
    writeln!(w, "dims = {i} {j} {k}").map_err(werr)?;
    writeln!(w, "initial_rank = {}", spec.initial_rank).map_err(werr)?;
    writeln!(w, "full_rank = {}", spec.full_rank).map_err(werr)?;
    writeln!(w, "batch_size = {}", spec.batch_size).map_err(werr)?;
    writeln!(w, "seed = {}", spec.seed).map_err(werr)?;
    writeln!(w, "noise_sigma = {}", spec.noise_sigma).map_err(werr)?;
    writeln!(w, "batches = {}", gt.num_batches()).map_err(werr)?;
    for (idx, batch) in gt.batches.iter().enumerate() {
        let name = batch_file_name(idx);
        let active: Vec<String> = gt.active_sets[idx].iter().map(|c| c.to_string()).collect();
        writeln!(
            w,
            "batch = {idx} {name} rank={} active={}",
            gt.batch_ranks[idx],
            active.join(",")
        )
        .map_err(werr)?;
        write_dt3(batch, &dir.join(name))?;
    }
    w.flush().map_err(werr)
}

pub fn import_stream(dir: &Path) -> Result<SavedStream> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut dims = None;
    let mut initial_rank = None;
    let mut full_rank = None;
    let mut batch_size = None;
    let mut seed = None;
    let mut noise_sigma = None;
    let mut declared_batches = None;
    let mut rows: Vec<(usize, PathBuf, usize, Vec<usize>)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::format(&manifest_path, format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |what: &str| Error::format(&manifest_path, format!("line {}: {what}", lineno + 1));
        match key {
            "dims" => {
                let parts: Vec<usize> = value
                    .split_whitespace()
                    .map(|s| s.parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("dims must be three integers"))?;
                if parts.len() != 3 {
                    return Err(bad("dims must be three integers"));
                }
                dims = Some((parts[0], parts[1], parts[2]));
            }
            "initial_rank" => initial_rank = Some(value.parse().map_err(|_| bad("bad integer"))?),
            "full_rank" => full_rank = Some(value.parse().map_err(|_| bad("bad integer"))?),
            "batch_size" => batch_size = Some(value.parse().map_err(|_| bad("bad integer"))?),
            "seed" => seed = Some(value.parse().map_err(|_| bad("bad integer"))?),
            "noise_sigma" => noise_sigma = Some(value.parse().map_err(|_| bad("bad number"))?),
            "batches" => declared_batches = Some(value.parse().map_err(|_| bad("bad integer"))?),
            "batch" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                if parts.len() != 4 {
                    return Err(bad("batch line must be `index file rank=R active=...`"));
                }
                let index: usize = parts[0].parse().map_err(|_| bad("bad batch index"))?;
                let file = dir.join(parts[1]);
                let rank: usize = parts[2]
                    .strip_prefix("rank=")
                    .ok_or_else(|| bad("missing rank="))?
                    .parse()
                    .map_err(|_| bad("bad rank"))?;
                let active: Vec<usize> = parts[3]
                    .strip_prefix("active=")
                    .ok_or_else(|| bad("missing active="))?
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("bad active set"))?;
                rows.push((index, file, rank, active));
            }
            other => {
                return Err(bad(&format!("unknown key `{other}`")));
            }
        }
    }
    let missing = |what: &str| Error::format(&manifest_path, format!("missing `{what}`"));
    let dims = dims.ok_or_else(|| missing("dims"))?;
    let declared = declared_batches.ok_or_else(|| missing("batches"))?;
    rows.sort_by_key(|r| r.0);
    if rows.len() != declared || rows.iter().enumerate().any(|(i, r)| r.0 != i) {
        return Err(Error::format(
            &manifest_path,
            "batch lines must cover 0..batches exactly once",
        ));
    }
    let mut batches = Vec::with_capacity(rows.len());
    let mut batch_ranks = Vec::with_capacity(rows.len());
    let mut active_sets = Vec::with_capacity(rows.len());
    for (_, file, rank, active) in rows {
        let t = read_dt3(&file)?;
        if (t.dims().0, t.dims().1) != (dims.0, dims.1) {
            return Err(Error::format(&file, "batch dims disagree with manifest"));
        }
        batches.push(t);
        batch_ranks.push(rank);
        active_sets.push(active);
    }
    Ok(SavedStream {
        dims,
        initial_rank: initial_rank.ok_or_else(|| missing("initial_rank"))?,
        full_rank: full_rank.ok_or_else(|| missing("full_rank"))?,
        batch_size: batch_size.ok_or_else(|| missing("batch_size"))?,
        seed: seed.ok_or_else(|| missing("seed"))?,
        noise_sigma: noise_sigma.ok_or_else(|| missing("noise_sigma"))?,
        batch_ranks,
        active_sets,
        batches,
    })
}

/// Reads a DT3 file with `K = 1` as an `I × R` matrix — the convention used
/// for factor-matrix files.
pub fn read_matrix_dt3(path: &Path) -> Result<ndarray::Array2<f64>> {
    let t = read_dt3(path)?;
    let (i, j, k) = t.dims();
    if k != 1 {
        return Err(Error::format(
            path,
            format!("factor files must have K = 1, got K = {k}"),
        ));
    }
    Ok(ndarray::Array2::from_shape_fn((i, j), |(r, c)| t.get(r, c, 0)))
}

/// Writes an `I × R` matrix as a DT3 file with `K = 1`.
pub fn write_matrix_dt3(m: &ndarray::Array2<f64>, path: &Path) -> Result<()> {
    let (i, j) = m.dim();
    let t = DenseTensor3::from_fn((i, j, 1), |r, c, _| m[(r, c)]);
    write_dt3(&t, path)
}
