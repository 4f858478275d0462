use alloc::string::String;
use alloc::vec::Vec;

use super::{Encoder, EncoderConfig};
use crate::numerics::{DType, ParamSet, Real, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UCNV";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(Error::Truncated { needed: n, available });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn utf8(&mut self, n: usize) -> Result<String> {
        let raw = self.take(n)?;
        core::str::from_utf8(raw)
            .map(String::from)
            .map_err(|_| Error::Config("checkpoint string is not UTF-8".into()))
    }
}

fn read_tensor<T: Real>(r: &mut Reader<'_>) -> Result<(String, Tensor<T>)> {
    let name_len = r.u16()? as usize;
    let name = r.utf8(name_len)?;
    let rank = r.u8()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32()? as usize);
    }
    let tag = r.u8()?;
    let dtype = DType::from_tag(tag).ok_or_else(|| Error::Config(alloc::format!("unknown dtype tag {tag}")))?;
    let n: usize = shape.iter().product();
    let raw = r.take(n * dtype.size())?;
    let data: Vec<T> = match dtype {
        DType::F32 => raw
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::read_le(c) as f64))
            .collect(),
        DType::F64 => raw.chunks_exact(8).map(|c| T::from_f64(f64::read_le(c))).collect(),
    };
    Ok((name, Tensor::new(&shape, data)?))
}

impl<T: Real> Encoder<T> {
    /// Serializes every parameter (in registration order, at precision `T`)
    /// followed by the configuration text.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params().len() as u32).to_le_bytes());
        for p in self.params().iter() {
            out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.push(p.value.rank() as u8);
            for &e in p.value.shape() {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            out.push(T::DTYPE as u8);
            for &x in p.value.data() {
                x.write_le(&mut out);
            }
        }
        let config = self.config().to_text();
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        out
    }

    /// Rebuilds the encoder described by the embedded configuration and
    /// fills it with the stored tensors.
    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).map_err(|_| Error::BadMagic)? != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            tensors.push(read_tensor::<T>(&mut r)?);
        }
        let config_len = r.u32()? as usize;
        let config = EncoderConfig::parse(&r.utf8(config_len)?)?;

        let skeleton = Encoder::build_zeroed(&config)?;
        let layout = skeleton.params();
        let mut slots: Vec<Option<Tensor<T>>> = (0..layout.len()).map(|_| None).collect();
        for (name, value) in tensors {
            let index = layout.find(&name).ok_or_else(|| Error::UnknownTensor(name.clone()))?;
            let expected = layout.by_index(index).value.shape();
            if expected != value.shape() {
                return Err(Error::TensorShape {
                    name,
                    expected: expected.to_vec(),
                    found: value.shape().to_vec(),
                });
            }
            slots[index] = Some(value);
        }
        let mut params = ParamSet::new();
        for (p, slot) in layout.iter().zip(slots) {
            let value = slot.ok_or_else(|| Error::MissingTensor(p.name.clone()))?;
            params.register(p.name.clone(), value)?;
        }
        Ok(skeleton.with_params(params))
    }
}
