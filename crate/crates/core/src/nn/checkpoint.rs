//! TBNET1 checkpoints: the magic string, then every persistent tensor in
//! network order as `name_len: u16 LE`, name bytes, `rank: u8`,
//! `dims: u32 LE` each, and little-endian f32 values. Round-trips are
//! bit-exact for f32 networks.

use super::network::Network;
use super::tensor::Scalar;
use super::NnError;
use std::path::Path;

pub const MAGIC: &[u8; 6] = b"TBNET1";

pub fn save_checkpoint<T: Scalar>(net: &Network<T>) -> Vec<u8> {
    let tensors = net.persistent();
    let mut out = Vec::with_capacity(
        MAGIC.len() + tensors.iter().map(|(n, t)| n.len() + 16 + 4 * t.numel()).sum::<usize>(),
    );
    out.extend_from_slice(MAGIC);
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        assert!(name_bytes.len() <= u16::MAX as usize, "tensor name too long");
        out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(name_bytes);
        let shape = tensor.shape();
        assert!(shape.len() <= u8::MAX as usize, "tensor rank too high");
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.pos + n > self.bytes.len() {
            return Err(NnError::CkptTruncated);
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16, NnError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, NnError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Restores parameters and running statistics into an already-built
/// network. Tensor names and shapes must match the network's persistent
/// walk exactly, in order.
pub fn load_checkpoint<T: Scalar>(net: &mut Network<T>, bytes: &[u8]) -> Result<(), NnError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(NnError::CkptMagic);
    }
    let mut slots = net.persistent_mut();
    let expected = slots.len();
    for (i, (name, tensor)) in slots.iter_mut().enumerate() {
        if r.pos == r.bytes.len() {
            return Err(NnError::CkptCount {
                expected,
                found: i,
            });
        }
        let name_len = r.u16()? as usize;
        let found_name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| NnError::CkptTruncated)?
            .to_string();
        if found_name != *name {
            return Err(NnError::CkptName {
                expected: name.clone(),
                found: found_name,
            });
        }
        let rank = r.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        if dims != tensor.shape() {
            return Err(NnError::CkptShape {
                name: found_name,
                expected: tensor.shape().to_vec(),
                found: dims,
            });
        }
        for v in tensor.data_mut() {
            *v = T::from_f64(r.f32()? as f64);
        }
    }
    if r.pos != r.bytes.len() {
        return Err(NnError::CkptTrailing(r.bytes.len() - r.pos));
    }
    Ok(())
}

pub fn write_checkpoint<T: Scalar>(net: &Network<T>, path: &Path) -> Result<(), NnError> {
    std::fs::write(path, save_checkpoint(net)).map_err(|e| NnError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn read_checkpoint<T: Scalar>(net: &mut Network<T>, path: &Path) -> Result<(), NnError> {
    let bytes = std::fs::read(path).map_err(|e| NnError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    load_checkpoint(net, &bytes)
}
