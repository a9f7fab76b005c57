//! Flat binary model snapshots.
//!
//! Layout: 8-byte magic, u32 layer count, then per layer
//! `(u32 in_dim, u32 out_dim, u8 activation)`, then per layer the weight
//! values (row-major) followed by the bias values, all little-endian f64 in
//! canonical parameter order. Used for teacher snapshots and run resumption.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::linalg::DenseMatrix;
use crate::nn::{Activation, Layer, MlpModel};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"LTCILMD1";

fn activation_tag(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Identity => 1,
    }
}

fn activation_from_tag(tag: u8) -> Result<Activation> {
    match tag {
        0 => Ok(Activation::Relu),
        1 => Ok(Activation::Identity),
        other => Err(Error::Parse(format!("unknown activation tag {other}"))),
    }
}

pub fn write_model<W: Write>(model: &MlpModel, w: &mut W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(model.layers().len() as u32).to_le_bytes())?;
    for layer in model.layers() {
        w.write_all(&(layer.in_dim() as u32).to_le_bytes())?;
        w.write_all(&(layer.out_dim() as u32).to_le_bytes())?;
        w.write_all(&[activation_tag(layer.activation())])?;
    }
    for layer in model.layers() {
        for v in layer.weights().values() {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in layer.bias() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_model<R: Read>(r: &mut R) -> Result<MlpModel> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse("bad snapshot magic".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let layer_count = u32::from_le_bytes(u32buf) as usize;
    if layer_count == 0 {
        return Err(Error::Parse("snapshot has zero layers".into()));
    }

    let mut dims = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        r.read_exact(&mut u32buf)?;
        let in_dim = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf)?;
        let out_dim = u32::from_le_bytes(u32buf) as usize;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        dims.push((in_dim, out_dim, activation_from_tag(tag[0])?));
    }

    let mut f64buf = [0u8; 8];
    let mut layers = Vec::with_capacity(layer_count);
    for (in_dim, out_dim, activation) in dims {
        let mut weights = Vec::with_capacity(in_dim * out_dim);
        for _ in 0..in_dim * out_dim {
            r.read_exact(&mut f64buf)?;
            weights.push(f64::from_le_bytes(f64buf));
        }
        let mut bias = Vec::with_capacity(out_dim);
        for _ in 0..out_dim {
            r.read_exact(&mut f64buf)?;
            bias.push(f64::from_le_bytes(f64buf));
        }
        layers.push(Layer::new(
            DenseMatrix::from_vec(out_dim, in_dim, weights)?,
            bias,
            activation,
        )?);
    }
    MlpModel::from_layers(layers)
}

pub fn save_model(model: &MlpModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    let mut r = BufReader::new(File::open(path)?);
    read_model(&mut r)
}
