//! Binary persistence for trained weights and generated datasets.
//!
//! Both formats are little-endian, start with a 4-byte magic and a `u32`
//! version, and end with the CRC32 of every preceding byte.

use std::fs;
use std::path::Path;

use crate::data::{Dataset, Split};
use crate::error::{CnnError, Result};
use crate::image::IMAGE_CHANNELS;
use crate::layers::{BatchNormParams, KERNEL};
use crate::network::{Arch, Layer, LayerKind, NetworkWeights};
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: [u8; 4] = *b"LISW";
pub const DATASET_MAGIC: [u8; 4] = *b"LISD";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u16(&mut self, v: usize) -> Result<()> {
        let v = u16::try_from(v).map_err(|_| CnnError::InvalidConfig(format!("{v} does not fit in 16 bits")))?;
        self.buf.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f32s(&mut self, vals: &[f32]) {
        for v in vals {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(CnnError::TruncatedFile)?;
        let s = self.bytes.get(self.pos..end).ok_or(CnnError::TruncatedFile)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<usize> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or(CnnError::TruncatedFile)?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    /// Checks the magic and version.
    fn header(&mut self, magic: [u8; 4], what: &'static str) -> Result<()> {
        let found = self.bytes.get(..4).ok_or(CnnError::TruncatedFile)?;
        if found != magic {
            return Err(CnnError::BadMagic(what));
        }
        self.pos = 4;
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(CnnError::VersionMismatch { expected: FORMAT_VERSION, found: version });
        }
        Ok(())
    }

    /// Verifies that exactly the trailing checksum remains and matches.
    fn checksum(&mut self) -> Result<()> {
        let body = self.pos;
        let remaining = self.bytes.len() - body;
        if remaining < 4 {
            return Err(CnnError::TruncatedFile);
        }
        let tail = self.bytes.len() - 4;
        let stored = u32::from_le_bytes(self.bytes[tail..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(&self.bytes[..tail]);
        if stored != computed {
            return Err(CnnError::ChecksumMismatch { stored, computed });
        }
        if remaining > 4 {
            return Err(CnnError::Malformed(format!("{} unexpected bytes before the checksum", remaining - 4)));
        }
        Ok(())
    }
}

pub fn encode_weights(w: &NetworkWeights<f32>) -> Result<Vec<u8>> {
    w.validate()?;
    let mut out = Writer::default();
    out.buf.extend_from_slice(&WEIGHTS_MAGIC);
    out.u32(FORMAT_VERSION);
    out.u8(w.arch.code());
    out.u16(w.depth)?;
    out.u16(w.features)?;
    out.u16(w.m)?;
    out.u16(w.k)?;
    out.u16(w.layers.len())?;
    for l in &w.layers {
        out.u8(l.kind.code());
        out.u16(l.c_in)?;
        out.u16(l.c_out)?;
        out.f32s(&l.kernel);
        out.f32s(&l.bias);
        if let Some(p) = &l.bn {
            out.f32s(&p.gamma);
            out.f32s(&p.beta);
            out.f32s(&p.running_mean);
            out.f32s(&p.running_var);
        }
    }
    Ok(out.finish())
}

pub fn decode_weights(bytes: &[u8]) -> Result<NetworkWeights<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(WEIGHTS_MAGIC, "weights")?;
    let arch_code = r.u8()?;
    let arch = Arch::from_code(arch_code).ok_or_else(|| CnnError::Malformed(format!("unknown architecture code {arch_code}")))?;
    let depth = r.u16()?;
    let features = r.u16()?;
    let m = r.u16()?;
    let k = r.u16()?;
    let count = r.u16()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let code = r.u8()?;
        let kind = LayerKind::from_code(code).ok_or_else(|| CnnError::Malformed(format!("unknown layer kind {code}")))?;
        let c_in = r.u16()?;
        let c_out = r.u16()?;
        let kernel = r.f32s(KERNEL * KERNEL * c_in * c_out)?;
        let bias = r.f32s(c_out)?;
        let bn = match kind {
            LayerKind::Conv => None,
            LayerKind::ConvBn => Some(BatchNormParams {
                gamma: r.f32s(c_out)?,
                beta: r.f32s(c_out)?,
                running_mean: r.f32s(c_out)?,
                running_var: r.f32s(c_out)?,
            }),
        };
        layers.push(Layer { kind, c_in, c_out, kernel, bias, bn });
    }
    r.checksum()?;
    let w = NetworkWeights { arch, depth, features, m, k, layers };
    w.validate()?;
    Ok(w)
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn save_weights(w: &NetworkWeights<f32>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_weights(w)?)
}

pub fn load_weights(path: &Path) -> Result<NetworkWeights<f32>> {
    decode_weights(&fs::read(path)?)
}

fn write_split(out: &mut Writer, s: &Split) -> Result<()> {
    out.u32(u32::try_from(s.len()).map_err(|_| CnnError::InvalidConfig("split too large".into()))?);
    out.f32s(s.inputs.as_slice());
    out.f32s(s.targets.as_slice());
    out.f32s(&s.sigma2);
    Ok(())
}

fn read_split(r: &mut Reader, m: usize, k: usize) -> Result<Split> {
    let n = r.u32()? as usize;
    let dims = [n, m, k + 1, IMAGE_CHANNELS];
    let item = m * (k + 1) * IMAGE_CHANNELS;
    let inputs = Tensor::new(dims, r.f32s(n * item)?)?;
    let targets = Tensor::new(dims, r.f32s(n * item)?)?;
    let sigma2 = r.f32s(n)?;
    Ok(Split { inputs, targets, sigma2 })
}

pub fn encode_dataset(d: &Dataset) -> Result<Vec<u8>> {
    let mut out = Writer::default();
    out.buf.extend_from_slice(&DATASET_MAGIC);
    out.u32(FORMAT_VERSION);
    out.u16(d.m)?;
    out.u16(d.k)?;
    out.u16(d.t_p)?;
    out.u16(d.snr_db.len())?;
    for v in &d.snr_db {
        out.f64(*v);
    }
    for s in [&d.train, &d.val, &d.test] {
        write_split(&mut out, s)?;
    }
    Ok(out.finish())
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(DATASET_MAGIC, "dataset")?;
    let m = r.u16()?;
    let k = r.u16()?;
    let t_p = r.u16()?;
    let n_snr = r.u16()?;
    let snr_db = (0..n_snr).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let train = read_split(&mut r, m, k)?;
    let val = read_split(&mut r, m, k)?;
    let test = read_split(&mut r, m, k)?;
    r.checksum()?;
    Ok(Dataset { m, k, t_p, snr_db, train, val, test })
}

pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    write_atomic(path, &encode_dataset(d)?)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}
