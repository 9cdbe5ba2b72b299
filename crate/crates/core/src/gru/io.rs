//! Versioned little-endian binary model file.
//!
//! ```text
//! "GRUM"  u32 version
//! u32 input_dim, hidden, layers, output_dim, window
//! f64 mean[3], scale[3]
//! per layer: W_uz W_ur W_uh W_hz W_hr W_hh b_z b_r b_h
//! head: W b
//! ```
//! Matrices are stored row-major as f64.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::network::GruNetwork;
use super::train::{Normalization, TrainedModel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GRUM";
const VERSION: u32 = 1;

pub fn write_model<W: Write>(model: &TrainedModel, mut w: W) -> std::io::Result<()> {
    let net = &model.net;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for d in [
        net.input_dim(),
        net.hidden_dim(),
        net.num_layers(),
        net.output_dim(),
        model.window,
    ] {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in model.norm.mean.iter().chain(model.norm.scale.iter()) {
        w.write_all(&v.to_le_bytes())?;
    }
    for (data, (rows, cols)) in net.tensors().into_iter().zip(net.shapes()) {
        for i in 0..rows {
            for j in 0..cols {
                w.write_all(&data[j * rows + i].to_le_bytes())?;
            }
        }
    }
    w.flush()
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::ModelFormat(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|e| Error::ModelFormat(format!("truncated body: {e}")))?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_model<R: Read>(mut r: R) -> Result<TrainedModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::ModelFormat(format!("truncated header: {e}")))?;
    if &magic != MAGIC {
        return Err(Error::ModelFormat("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::ModelFormat(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = read_u32(&mut r)? as usize;
    }
    let [input, hidden, layers, output, window] = dims;
    if input != 3 || output != 3 || hidden == 0 || layers == 0 || window == 0 {
        return Err(Error::ModelFormat(format!("unsupported dims {dims:?}")));
    }
    let mut stats = [0.0; 6];
    for s in &mut stats {
        *s = read_f64(&mut r)?;
    }
    let mut net = GruNetwork::zeros(input, hidden, layers, output);
    let shapes = net.shapes();
    for (data, (rows, cols)) in net.tensors_mut().into_iter().zip(shapes) {
        for i in 0..rows {
            for j in 0..cols {
                data[j * rows + i] = read_f64(&mut r)?;
            }
        }
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)
        .map_err(|e| Error::ModelFormat(e.to_string()))?;
    if !rest.is_empty() {
        return Err(Error::ModelFormat(format!("{} trailing bytes", rest.len())));
    }
    Ok(TrainedModel {
        net,
        norm: Normalization {
            mean: Vector3::new(stats[0], stats[1], stats[2]),
            scale: Vector3::new(stats[3], stats[4], stats[5]),
        },
        window,
    })
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_model(model, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(std::io::BufReader::new(file))
}
