//! Checkpoint file format.
//!
//! One file per checkpoint: an 8-byte little-endian header length, a JSON
//! header (format version, task index, layer specs), then raw
//! little-endian `f64` parameter blobs in layer order. Affine layers
//! store weights then bias; conv layers kernel then bias; batchnorm
//! layers gamma, beta, running mean, running variance, then epsilon.
//! Round-trips are bit-exact.

use crate::linalg::Mat;
use crate::nn::{Layer, LayerSpec, Network, NnError};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    task_index: usize,
    layers: Vec<LayerSpec>,
}

pub fn save_network(path: &Path, net: &Network, task_index: usize) -> Result<(), NnError> {
    let header = Header {
        format_version: FORMAT_VERSION,
        task_index,
        layers: net.specs(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| NnError::BadCheckpoint(format!("header encode: {e}")))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for layer in net.layers() {
        match layer {
            Layer::Affine { w: wm, b } => {
                write_f64s(&mut w, wm.as_slice())?;
                write_f64s(&mut w, b)?;
            }
            Layer::Relu => {}
            Layer::Conv2d { w: wv, b, .. } => {
                write_f64s(&mut w, wv)?;
                write_f64s(&mut w, b)?;
            }
            Layer::BatchNormAffine {
                gamma,
                beta,
                mean,
                var,
                eps,
            } => {
                write_f64s(&mut w, gamma)?;
                write_f64s(&mut w, beta)?;
                write_f64s(&mut w, mean)?;
                write_f64s(&mut w, var)?;
                write_f64s(&mut w, &[*eps])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint, returning the network and the task index recorded
/// in the header.
pub fn load_network(path: &Path) -> Result<(Network, usize), NnError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut len_buf = [0u8; 8];
    r.read_exact(&mut len_buf)
        .map_err(|_| NnError::BadCheckpoint("missing header length".into()))?;
    let header_len = u64::from_le_bytes(len_buf) as usize;
    if header_len > 1 << 24 {
        return Err(NnError::BadCheckpoint(format!(
            "implausible header length {header_len}"
        )));
    }
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| NnError::BadCheckpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| NnError::BadCheckpoint(format!("header decode: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(NnError::BadCheckpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let mut layers = Vec::with_capacity(header.layers.len());
    for spec in &header.layers {
        let layer = match *spec {
            LayerSpec::Affine { in_dim, out_dim } => {
                let w = read_f64s(&mut r, out_dim * in_dim)?;
                let b = read_f64s(&mut r, out_dim)?;
                Layer::Affine {
                    w: Mat::from_vec(out_dim, in_dim, w),
                    b,
                }
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                in_h,
                in_w,
            } => {
                let w = read_f64s(&mut r, out_ch * in_ch * kernel * kernel)?;
                let b = read_f64s(&mut r, out_ch)?;
                Layer::Conv2d {
                    w,
                    b,
                    in_ch,
                    out_ch,
                    kernel,
                    in_h,
                    in_w,
                }
            }
            LayerSpec::BatchNormAffine { dim } => {
                let gamma = read_f64s(&mut r, dim)?;
                let beta = read_f64s(&mut r, dim)?;
                let mean = read_f64s(&mut r, dim)?;
                let var = read_f64s(&mut r, dim)?;
                let eps = read_f64s(&mut r, 1)?[0];
                Layer::BatchNormAffine {
                    gamma,
                    beta,
                    mean,
                    var,
                    eps,
                }
            }
        };
        layers.push(layer);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(NnError::BadCheckpoint("trailing bytes after blobs".into()));
    }
    Ok((Network::new(layers), header.task_index))
}

fn write_f64s(w: &mut impl Write, vals: &[f64]) -> Result<(), NnError> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>, NnError> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| NnError::BadCheckpoint("truncated parameter blob".into()))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
