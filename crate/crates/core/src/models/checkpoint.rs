//! Checkpoint format.
//!
//! Layout: magic `SNN1`, u32 version, topology byte, input dims, a layer
//! descriptor table (kinds + parameter shapes), then every parameter and
//! running statistic as little-endian 64-bit floats, then an optional
//! feature standardizer block.

use std::io::{Read, Write};
use std::path::Path;

use crate::features::Standardizer;
use crate::nn::{LayerDesc, NnError, Real, Tensor};

use super::{build_model, Model, Topology};

const MAGIC: &[u8; 4] = b"SNN1";
const VERSION: u32 = 1;

/// A model plus the feature standardizer it was trained with.
pub struct Checkpoint<T: Real> {
    pub model: Model<T>,
    pub standardizer: Option<Standardizer>,
}

struct Writer<W: Write> {
    out: W,
}

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: u32) -> Result<(), NnError> {
        self.out.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn u8(&mut self, v: u8) -> Result<(), NnError> {
        self.out.write_all(&[v])?;
        Ok(())
    }

    fn f64(&mut self, v: f64) -> Result<(), NnError> {
        self.out.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn tensor<T: Real>(&mut self, t: &Tensor<T>) -> Result<(), NnError> {
        self.u32(t.shape.len() as u32)?;
        for &d in &t.shape {
            self.u32(d as u32)?;
        }
        for v in &t.data {
            self.f64(v.to_f64())?;
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.at + n > self.bytes.len() {
            return Err(NnError::BadCheckpoint("unexpected end of file".into()));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64, NnError> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn tensor<T: Real>(&mut self) -> Result<Tensor<T>, NnError> {
        let ndim = self.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(T::of(self.f64()?));
        }
        Ok(Tensor::from_vec(&shape, data))
    }
}

fn desc_config(desc: &LayerDesc) -> Vec<u32> {
    match *desc {
        LayerDesc::Conv2d { in_ch, out_ch, kh, kw } => {
            vec![in_ch as u32, out_ch as u32, kh as u32, kw as u32]
        }
        LayerDesc::Conv1d { in_ch, out_ch, k } => vec![in_ch as u32, out_ch as u32, k as u32],
        LayerDesc::BatchNorm { features } => vec![features as u32],
        LayerDesc::MaxPool2d { h, w } => vec![h as u32, w as u32],
        LayerDesc::Dense { inputs, outputs } => vec![inputs as u32, outputs as u32],
        LayerDesc::Dropout { p } => vec![(p * 1e6).round() as u32],
        LayerDesc::Relu | LayerDesc::GlobalAvgPool2d | LayerDesc::Softmax | LayerDesc::StatsPool => {
            Vec::new()
        }
    }
}

pub fn save_checkpoint<T: Real>(
    path: impl AsRef<Path>,
    model: &mut Model<T>,
    standardizer: Option<&Standardizer>,
) -> Result<(), NnError> {
    let mut w = Writer { out: std::io::BufWriter::new(std::fs::File::create(path)?) };
    w.out.write_all(MAGIC)?;
    w.u32(VERSION)?;
    w.u8(match model.topology {
        Topology::Cnn2d => 0,
        Topology::Xvec1d => 1,
    })?;
    w.u32(model.input_channels as u32)?;
    w.u32(model.bands as u32)?;
    w.u32(model.frames as u32)?;

    let descs = model.descriptors();
    w.u32(descs.len() as u32)?;
    for d in &descs {
        w.u8(d.kind_id())?;
        let cfg = desc_config(d);
        w.u32(cfg.len() as u32)?;
        for v in cfg {
            w.u32(v)?;
        }
    }

    let params = model.params();
    w.u32(params.len() as u32)?;
    for p in &params {
        w.tensor(&p.value)?;
    }
    drop(params);

    let state: Vec<Tensor<T>> = model.state_tensors();
    w.u32(state.len() as u32)?;
    for t in &state {
        w.tensor(t)?;
    }

    match standardizer {
        None => w.u8(0)?,
        Some(s) => {
            w.u8(1)?;
            w.u32(s.bands as u32)?;
            w.u32(s.channels as u32)?;
            for v in &s.mean {
                w.f64(*v)?;
            }
            for v in &s.std {
                w.f64(*v)?;
            }
        }
    }
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<Checkpoint<T>, NnError> {
    let mut bytes = Vec::new();
    std::fs::File::open(&path)?.read_to_end(&mut bytes)?;
    let mut r = Reader { bytes: &bytes, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(NnError::BadCheckpoint("missing SNN1 magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(NnError::BadCheckpoint(format!("unsupported version {version}")));
    }
    let topology = match r.u8()? {
        0 => Topology::Cnn2d,
        1 => Topology::Xvec1d,
        b => return Err(NnError::BadCheckpoint(format!("unknown topology byte {b}"))),
    };
    let channels = r.u32()? as usize;
    let bands = r.u32()? as usize;
    let frames = r.u32()? as usize;

    let mut model = build_model::<T>(topology, channels, bands, frames, 0)
        .map_err(|e| NnError::BadCheckpoint(format!("cannot rebuild topology: {e}")))?;

    let n_layers = r.u32()? as usize;
    let descs = model.descriptors();
    if n_layers != descs.len() {
        return Err(NnError::BadCheckpoint(format!(
            "layer count {n_layers} does not match topology ({})",
            descs.len()
        )));
    }
    for desc in &descs {
        let kind = r.u8()?;
        if kind != desc.kind_id() {
            return Err(NnError::BadCheckpoint(format!(
                "layer kind {kind} does not match {desc:?}"
            )));
        }
        let n_cfg = r.u32()? as usize;
        let expected = desc_config(desc);
        if n_cfg != expected.len() {
            return Err(NnError::BadCheckpoint("layer config size mismatch".into()));
        }
        for e in expected {
            if r.u32()? != e {
                return Err(NnError::BadCheckpoint(format!("layer config differs for {desc:?}")));
            }
        }
    }

    let n_params = r.u32()? as usize;
    {
        let mut params = model.params();
        if n_params != params.len() {
            return Err(NnError::BadCheckpoint("parameter count mismatch".into()));
        }
        for p in params.iter_mut() {
            let t: Tensor<T> = r.tensor()?;
            if t.shape != p.value.shape {
                return Err(NnError::BadCheckpoint(format!(
                    "parameter shape {:?} does not match {:?}",
                    t.shape, p.value.shape
                )));
            }
            p.value = t;
        }
    }

    let n_state = r.u32()? as usize;
    {
        let mut state = model.state_tensors_mut();
        if n_state != state.len() {
            return Err(NnError::BadCheckpoint("state tensor count mismatch".into()));
        }
        for s in state.iter_mut() {
            let t: Tensor<T> = r.tensor()?;
            if t.shape != s.shape {
                return Err(NnError::BadCheckpoint("state shape mismatch".into()));
            }
            **s = t;
        }
    }

    let standardizer = match r.u8()? {
        0 => None,
        1 => {
            let bands = r.u32()? as usize;
            let channels = r.u32()? as usize;
            let n = bands * channels;
            let mut mean = Vec::with_capacity(n);
            for _ in 0..n {
                mean.push(r.f64()?);
            }
            let mut std = Vec::with_capacity(n);
            for _ in 0..n {
                std.push(r.f64()?);
            }
            Some(Standardizer { bands, channels, mean, std })
        }
        b => return Err(NnError::BadCheckpoint(format!("bad standardizer flag {b}"))),
    };

    Ok(Checkpoint { model, standardizer })
}
