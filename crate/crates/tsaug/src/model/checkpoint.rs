//! Flat binary checkpoint format.
//!
//! Layout (all integers and doubles little-endian):
//!
//! ```text
//! magic    8 bytes  "TSAUGNET"
//! version  u32      1
//! kind     u8       0 = MLP, 1 = Conv-1D
//! arch     MLP:  steps u32, channels u32, h1 u32, h2 u32, classes u32, dropout f64
//!          Conv: steps u32, channels u32, classes u32, ch[0..4] u32 x4, kernel u32
//! params   u64 count, then count f64 (flat parameter order)
//! buffers  u64 count, then count f64 (batch-norm running statistics)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{ConvArch, ConvModel, MlpArch, MlpModel, Model};
use crate::error::{Error, Result};
use crate::rng::RngStream;

const MAGIC: &[u8; 8] = b"TSAUGNET";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_block(out: &mut Vec<u8>, values: &[f64]) {
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        put_f64(out, *v);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::parse("checkpoint", "unexpected end of file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn block(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    match model {
        Model::Mlp(m) => {
            out.push(0);
            put_u32(&mut out, m.arch.input_steps as u32);
            put_u32(&mut out, m.arch.channels as u32);
            put_u32(&mut out, m.arch.hidden[0] as u32);
            put_u32(&mut out, m.arch.hidden[1] as u32);
            put_u32(&mut out, m.arch.classes as u32);
            put_f64(&mut out, m.arch.dropout);
        }
        Model::Conv1d(m) => {
            out.push(1);
            put_u32(&mut out, m.arch.input_steps as u32);
            put_u32(&mut out, m.arch.in_channels as u32);
            put_u32(&mut out, m.arch.classes as u32);
            for ch in m.arch.channels {
                put_u32(&mut out, ch as u32);
            }
            put_u32(&mut out, m.arch.kernel as u32);
        }
    }
    put_block(&mut out, &model.params());
    put_block(&mut out, &model.buffers());

    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut r = Reader { buf: &buf, pos: 0 };

    if r.take(8)? != MAGIC {
        return Err(Error::parse("checkpoint", "bad magic bytes"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::parse(
            "checkpoint",
            format!("unsupported version {version}"),
        ));
    }
    // Construction consumes an init stream; the values are immediately
    // overwritten by the stored parameter block.
    let init = RngStream::new(0);
    let mut model = match r.u8()? {
        0 => {
            let arch = MlpArch {
                input_steps: r.u32()? as usize,
                channels: r.u32()? as usize,
                hidden: [r.u32()? as usize, r.u32()? as usize],
                classes: r.u32()? as usize,
                dropout: r.f64()?,
            };
            Model::Mlp(MlpModel::new(arch, init)?)
        }
        1 => {
            let arch = ConvArch {
                input_steps: r.u32()? as usize,
                in_channels: r.u32()? as usize,
                classes: r.u32()? as usize,
                channels: [
                    r.u32()? as usize,
                    r.u32()? as usize,
                    r.u32()? as usize,
                    r.u32()? as usize,
                ],
                kernel: r.u32()? as usize,
            };
            Model::Conv1d(ConvModel::new(arch, init)?)
        }
        other => {
            return Err(Error::parse(
                "checkpoint",
                format!("unknown model kind {other}"),
            ))
        }
    };
    let params = r.block()?;
    model.set_params(&params)?;
    let buffers = r.block()?;
    model.set_buffers(&buffers)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelKind, ModelSpec};

    #[test]
    fn checkpoints_round_trip_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        for kind in [ModelKind::Mlp, ModelKind::Conv1d] {
            let spec = ModelSpec { kind, width: 0.05, dropout: 0.2 };
            let model = spec.build(12, 2, 3, RngStream::new(4)).unwrap();
            let path = dir.path().join(format!("{kind}.bin"));
            model.save(&path).unwrap();
            let loaded = Model::load(&path).unwrap();
            assert_eq!(model.params(), loaded.params());
            assert_eq!(model.buffers(), loaded.buffers());
            assert_eq!(model.input_shape(), loaded.input_shape());
            assert_eq!(model.classes(), loaded.classes());
        }
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(Model::load(&path).is_err());
    }
}
