//! Versioned little-endian tensor container used for network checkpoints and
//! attribute-discovery dictionaries.
//!
//! ```text
//! magic    6 bytes  "CNNAA1"
//! version  u8       1
//! kind     u8       0 = network, 1 = dictionary
//! header   kind-specific (see FORMATS.md)
//! count    u32      number of tensors
//! tensor   name_len u32, name (UTF-8), rank u32, dims u32 x rank, payload f32 x prod(dims)
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::netdef::{Arch, ConvDef, Family, Mode, Network, NetworkSpec};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"CNNAA1";
pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Network = 0,
    Dictionary = 1,
}

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(kind: Kind) -> Self {
        let mut buf = MAGIC.to_vec();
        buf.push(VERSION);
        buf.push(kind as u8);
        Self { buf }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("container fields fit in u32");
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn tensors<'a>(&mut self, tensors: impl ExactSizeIterator<Item = (String, &'a Tensor)>) {
        self.u32(tensors.len());
        for (name, t) in tensors {
            self.str(&name);
            self.u32(t.rank());
            for &d in t.shape() {
                self.u32(d);
            }
            for v in t.data() {
                self.buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], kind: Kind) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 2 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = bytes[MAGIC.len()];
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let got = bytes[MAGIC.len() + 1];
        if got != kind as u8 {
            return Err(Error::Format(format!("container kind {got}, expected {}", kind as u8)));
        }
        Ok(Self { bytes, pos: MAGIC.len() + 2 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated payload at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("tensor name is not UTF-8".into()))
    }

    pub fn tensors(&mut self) -> Result<Vec<(String, Tensor)>> {
        let count = self.u32()?;
        let mut out = Vec::new();
        for _ in 0..count {
            let name = self.str()?;
            let rank = self.u32()?;
            if rank == 0 || rank > 8 {
                return Err(Error::Format(format!("tensor {name} has rank {rank}")));
            }
            let dims = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
            let len = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let len = len.ok_or_else(|| Error::Format(format!("tensor {name} is too large")))?;
            let raw = self.take(len.checked_mul(4).ok_or_else(|| Error::Format("overflow".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            let t = Tensor::new(dims, data).map_err(|e| Error::Format(format!("tensor {name}: {e}")))?;
            out.push((name, t));
        }
        Ok(out)
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn write_spec(w: &mut Writer, spec: &NetworkSpec) {
    w.u8(match spec.family {
        Family::Deep => 0,
        Family::Wide => 1,
        Family::Custom(_) => 2,
    });
    w.u8(match spec.mode {
        Mode::Binary => 0,
        Mode::Multi => 1,
    });
    w.u32(spec.input_h);
    w.u32(spec.input_w);
    w.u32(spec.num_attrs);
    if let Family::Custom(arch) = &spec.family {
        w.u32(arch.in_channels);
        w.u32(arch.stages.len());
        for stage in &arch.stages {
            w.u32(stage.len());
            for c in stage {
                w.u32(c.kernel);
                w.u32(c.channels);
            }
        }
        w.u32(arch.fc.len());
        for &f in &arch.fc {
            w.u32(f);
        }
    }
}

fn read_spec(r: &mut Reader<'_>) -> Result<NetworkSpec> {
    let family_tag = r.u8()?;
    let mode = match r.u8()? {
        0 => Mode::Binary,
        1 => Mode::Multi,
        m => return Err(Error::Format(format!("unknown mode tag {m}"))),
    };
    let (input_h, input_w, num_attrs) = (r.u32()?, r.u32()?, r.u32()?);
    let family = match family_tag {
        0 => Family::Deep,
        1 => Family::Wide,
        2 => {
            let in_channels = r.u32()?;
            let n_stages = r.u32()?;
            let mut stages = Vec::new();
            for _ in 0..n_stages.min(64) {
                let n = r.u32()?;
                let mut stage = Vec::new();
                for _ in 0..n.min(64) {
                    stage.push(ConvDef { kernel: r.u32()?, channels: r.u32()? });
                }
                stages.push(stage);
            }
            let n_fc = r.u32()?;
            let fc = (0..n_fc.min(64)).map(|_| r.u32()).collect::<Result<_>>()?;
            Family::Custom(Arch { in_channels, stages, fc })
        }
        f => return Err(Error::Format(format!("unknown family tag {f}"))),
    };
    let spec = NetworkSpec { family, mode, input_h, input_w, num_attrs };
    spec.validate().map_err(|e| Error::Format(format!("embedded spec is invalid: {e}")))?;
    Ok(spec)
}

pub fn save_checkpoint(net: &Network) -> Vec<u8> {
    let mut w = Writer::new(Kind::Network);
    write_spec(&mut w, &net.spec);
    w.tensors(net.named_tensors().into_iter());
    w.finish()
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader::new(bytes, Kind::Network)?;
    let spec = read_spec(&mut r)?;
    let tensors = r.tensors()?;
    r.finish()?;
    Network::from_parts(spec, tensors)
}

pub fn write_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, save_checkpoint(net))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    load_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netdef::{build, count_params};

    fn mouth() -> NetworkSpec {
        NetworkSpec::multi(Family::Deep, 65, 38, 10).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = build(&mouth(), 3).unwrap();
        let bytes = save_checkpoint(&net);
        let back = load_checkpoint(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(save_checkpoint(&back), bytes);
    }

    #[test]
    fn custom_arch_round_trips() {
        let arch = Arch { in_channels: 1, stages: vec![vec![ConvDef { kernel: 3, channels: 2 }]], fc: vec![4, 3] };
        let spec = NetworkSpec::new(Family::Custom(arch), Mode::Binary, 6, 6, 1).unwrap();
        let net = build(&spec, 1).unwrap();
        assert_eq!(load_checkpoint(&save_checkpoint(&net)).unwrap(), net);
    }

    #[test]
    fn rejects_corruption() {
        let net = build(&mouth(), 3).unwrap();
        let mut bytes = save_checkpoint(&net);
        assert!(matches!(load_checkpoint(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(load_checkpoint(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_tensor_that_disagrees_with_spec() {
        let net = build(&mouth(), 3).unwrap();
        let mut bytes = save_checkpoint(&net);
        // num_attrs lives at offset 6 + 1 + 1 + 2 + 4 + 4
        bytes[18] = 9;
        assert!(matches!(load_checkpoint(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn file_size_follows_parameter_count() {
        let spec = mouth();
        let bytes = save_checkpoint(&build(&spec, 0).unwrap());
        let header = 6 + 1 + 1 + (1 + 1 + 4 + 4 + 4) + 4;
        let per_tensor: usize = spec
            .layer_plan()
            .unwrap()
            .iter()
            .map(|p| {
                let name = |suffix: &str| 4 + p.name.len() + suffix.len();
                let w = name(".weight") + 4 + 4 * p.weight_shape.len();
                let b = p.bias.map_or(0, |_| name(".bias") + 4 + 4);
                w + b
            })
            .sum();
        assert_eq!(bytes.len(), header + per_tensor + 4 * count_params(&spec).unwrap());
    }
}
