//! Versioned binary parameter checkpoints.
//!
//! Layout: magic "SCRB", u32 version, u32 model kind, a kind-specific header
//! (bottleneck width and layer shapes for the autoencoder; group counts, time
//! constants and gate mode for the recurrent net), then named weight blocks
//! as little-endian f32, each prefixed with its name and (rows, cols).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::cae::{CaeParams, ImageKind, Linear};
use crate::error::{NetError, Result};
use crate::mtrnn::{GateMode, GroupSpecs, MtrnnParams, NodeGroupSpec};

const MAGIC: &[u8; 4] = b"SCRB";
const VERSION: u32 = 1;
const KIND_CAE: u32 = 1;
const KIND_MTRNN: u32 = 2;

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f32(w: &mut impl Write, v: f32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f32(r: &mut impl Read) -> Result<f32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(f32::from_le_bytes(buf))
}

fn write_block(w: &mut impl Write, name: &str, rows: usize, cols: usize, data: impl Iterator<Item = f32>) -> Result<()> {
    let bytes = name.as_bytes();
    write_u32(w, bytes.len() as u32)?;
    w.write_all(bytes)?;
    write_u32(w, rows as u32)?;
    write_u32(w, cols as u32)?;
    let mut n = 0usize;
    for v in data {
        write_f32(w, v)?;
        n += 1;
    }
    debug_assert_eq!(n, rows * cols);
    Ok(())
}

struct BlockReader {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

fn read_block(r: &mut impl Read) -> Result<BlockReader> {
    let name_len = read_u32(r)? as usize;
    if name_len > 256 {
        return Err(NetError::Checkpoint(format!("implausible block name length {name_len}")));
    }
    let mut name_buf = vec![0u8; name_len];
    r.read_exact(&mut name_buf)?;
    let name = String::from_utf8(name_buf)
        .map_err(|e| NetError::Checkpoint(format!("bad block name: {e}")))?;
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(read_f32(r)?);
    }
    Ok(BlockReader { name, rows, cols, data })
}

fn expect_block(r: &mut impl Read, want: &str) -> Result<BlockReader> {
    let blk = read_block(r)?;
    if blk.name != want {
        return Err(NetError::Checkpoint(format!("expected block {want}, found {}", blk.name)));
    }
    Ok(blk)
}

// ---------------------------------------------------------------------------
// CAE
// ---------------------------------------------------------------------------

pub fn save_cae(p: &CaeParams<f32>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, VERSION)?;
    write_u32(&mut w, KIND_CAE)?;
    write_u32(&mut w, match p.kind {
        ImageKind::Whole => 0,
        ImageKind::Trimmed => 1,
    })?;
    write_u32(&mut w, p.img as u32)?;
    write_u32(&mut w, p.mid as u32)?;
    write_u32(&mut w, p.channels.len() as u32)?;
    for &c in &p.channels {
        write_u32(&mut w, c as u32)?;
    }
    write_u32(&mut w, p.fc_hidden.len() as u32)?;
    for &c in &p.fc_hidden {
        write_u32(&mut w, c as u32)?;
    }
    let names = p.block_names();
    write_u32(&mut w, names.len() as u32 * 2)?;
    for (name, blk) in names.iter().zip(p.blocks()) {
        let (rows, cols) = blk.w.dim();
        write_block(&mut w, &format!("{name}.w"), rows, cols, blk.w.iter().copied())?;
        write_block(&mut w, &format!("{name}.b"), 1, blk.b.len(), blk.b.iter().copied())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_cae(path: &Path) -> Result<CaeParams<f32>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NetError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NetError::Checkpoint(format!("unsupported version {version}")));
    }
    let kind_tag = read_u32(&mut r)?;
    if kind_tag != KIND_CAE {
        return Err(NetError::Checkpoint(format!("not an autoencoder checkpoint (kind {kind_tag})")));
    }
    let kind = match read_u32(&mut r)? {
        0 => ImageKind::Whole,
        1 => ImageKind::Trimmed,
        other => return Err(NetError::Checkpoint(format!("bad image kind {other}"))),
    };
    let img = read_u32(&mut r)? as usize;
    let mid = read_u32(&mut r)? as usize;
    let n_ch = read_u32(&mut r)? as usize;
    let channels: Vec<usize> = (0..n_ch)
        .map(|_| read_u32(&mut r).map(|v| v as usize))
        .collect::<Result<_>>()?;
    let n_fc = read_u32(&mut r)? as usize;
    let fc_hidden: Vec<usize> = (0..n_fc)
        .map(|_| read_u32(&mut r).map(|v| v as usize))
        .collect::<Result<_>>()?;

    let mut p = CaeParams::<f32>::with_shape(kind, img, &channels, &fc_hidden, mid, 0);
    let n_blocks = read_u32(&mut r)? as usize;
    let names = p.block_names();
    if n_blocks != names.len() * 2 {
        return Err(NetError::Checkpoint(format!(
            "block count mismatch: header {n_blocks}, model {}",
            names.len() * 2
        )));
    }
    for (name, blk) in names.iter().zip(p.blocks_mut()) {
        let wb = expect_block(&mut r, &format!("{name}.w"))?;
        let (rows, cols) = blk.w.dim();
        if (wb.rows, wb.cols) != (rows, cols) {
            return Err(NetError::Checkpoint(format!(
                "block {name}.w shape mismatch: file ({}, {}), model ({rows}, {cols})",
                wb.rows, wb.cols
            )));
        }
        blk.w = Array2::from_shape_vec((rows, cols), wb.data).unwrap();
        let bb = expect_block(&mut r, &format!("{name}.b"))?;
        if bb.cols != blk.b.len() {
            return Err(NetError::Checkpoint(format!("block {name}.b length mismatch")));
        }
        blk.b = Array1::from_vec(bb.data);
    }
    Ok(p)
}

// ---------------------------------------------------------------------------
// MTRNN
// ---------------------------------------------------------------------------

pub fn save_mtrnn(p: &MtrnnParams, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, VERSION)?;
    write_u32(&mut w, KIND_MTRNN)?;
    for g in [p.specs.io, p.specs.cf, p.specs.cs] {
        write_u32(&mut w, g.count as u32)?;
        write_f32(&mut w, g.tau as f32)?;
    }
    write_u32(&mut w, match p.gate {
        GateMode::Literal => 0,
        GateMode::SoftmaxOnly => 1,
        GateMode::Identity => 2,
    })?;
    write_u32(&mut w, p.w_cf_cf.is_some() as u32)?;

    let blocks: Vec<(&str, &Array2<f64>)> = {
        let mut v = vec![
            ("w_io_io", &p.w_io_io),
            ("w_io_cf", &p.w_io_cf),
            ("w_cf_io", &p.w_cf_io),
            ("w_cf_cs", &p.w_cf_cs),
        ];
        if let Some(w) = &p.w_cf_cf {
            v.push(("w_cf_cf", w));
        }
        v.push(("w_cs_cs", &p.w_cs_cs));
        v.push(("w_cs_cf", &p.w_cs_cf));
        v.push(("w_a", &p.w_a));
        v
    };
    write_u32(&mut w, blocks.len() as u32 + 1)?;
    for (name, arr) in blocks {
        let (rows, cols) = arr.dim();
        write_block(&mut w, name, rows, cols, arr.iter().map(|&v| v as f32))?;
    }
    write_block(&mut w, "b_a", 1, p.b_a.len(), p.b_a.iter().map(|&v| v as f32))?;
    w.flush()?;
    Ok(())
}

pub fn load_mtrnn(path: &Path) -> Result<MtrnnParams> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NetError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NetError::Checkpoint(format!("unsupported version {version}")));
    }
    if read_u32(&mut r)? != KIND_MTRNN {
        return Err(NetError::Checkpoint("not a recurrent-net checkpoint".into()));
    }
    let mut groups = Vec::new();
    for _ in 0..3 {
        let count = read_u32(&mut r)? as usize;
        let tau = read_f32(&mut r)? as f64;
        groups.push(NodeGroupSpec { count, tau });
    }
    let specs = GroupSpecs { io: groups[0], cf: groups[1], cs: groups[2] };
    let gate = match read_u32(&mut r)? {
        0 => GateMode::Literal,
        1 => GateMode::SoftmaxOnly,
        2 => GateMode::Identity,
        other => return Err(NetError::Checkpoint(format!("bad gate mode {other}"))),
    };
    let cf_rec = read_u32(&mut r)? != 0;
    let mut p = MtrnnParams::new(specs, gate, cf_rec, 0);
    let n_blocks = read_u32(&mut r)? as usize;
    let expected_names = p.block_names();
    if n_blocks != expected_names.len() {
        return Err(NetError::Checkpoint(format!(
            "block count mismatch: file {n_blocks}, model {}",
            expected_names.len()
        )));
    }
    for name in expected_names {
        let blk = expect_block(&mut r, name)?;
        let data: Vec<f64> = blk.data.iter().map(|&v| v as f64).collect();
        if name == "b_a" {
            if blk.cols != p.b_a.len() {
                return Err(NetError::Checkpoint("b_a length mismatch".into()));
            }
            p.b_a = Array1::from_vec(data);
        } else {
            let target = match name {
                "w_io_io" => &mut p.w_io_io,
                "w_io_cf" => &mut p.w_io_cf,
                "w_cf_io" => &mut p.w_cf_io,
                "w_cf_cs" => &mut p.w_cf_cs,
                "w_cf_cf" => p.w_cf_cf.as_mut().unwrap(),
                "w_cs_cs" => &mut p.w_cs_cs,
                "w_cs_cf" => &mut p.w_cs_cf,
                "w_a" => &mut p.w_a,
                other => return Err(NetError::Checkpoint(format!("unknown block {other}"))),
            };
            if target.dim() != (blk.rows, blk.cols) {
                return Err(NetError::Checkpoint(format!("block {name} shape mismatch")));
            }
            *target = Array2::from_shape_vec((blk.rows, blk.cols), data).unwrap();
        }
    }
    Ok(p)
}

/// Peek at the gate mode recorded in an MTRNN checkpoint header.
pub fn mtrnn_gate_mode(path: &Path) -> Result<GateMode> {
    load_mtrnn(path).map(|p| p.gate)
}

fn linear_close(a: &Linear<f32>, b: &Linear<f32>) -> bool {
    a.w == b.w && a.b == b.b
}

/// Exact equality of two f32 parameter sets (used by determinism tests).
pub fn cae_params_equal(a: &CaeParams<f32>, b: &CaeParams<f32>) -> bool {
    a.blocks().iter().zip(b.blocks().iter()).all(|(x, y)| linear_close(x, y))
}
