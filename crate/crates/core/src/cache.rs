//! Binary replica cache.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "SCNNREP1" | u32 version | u32 rank | u64 extent * rank
//! u64 output channels | u64 replicas | u64 hidden channels C
//! f64 alpha | u64 seed
//! per replica: each output channel's values, then the output biases (f64)
//! ```
//!
//! The per-channel extents are the spatial extents followed by `K`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::network::NetworkOutput;
use crate::tensor::{Axis, AxisRole, Tensor};

const MAGIC: &[u8; 8] = b"SCNNREP1";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicaCache {
    pub alpha: f64,
    pub seed: u64,
    /// Hidden-layer channel count of the simulated network.
    pub channels: usize,
    pub outputs: Vec<NetworkOutput>,
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Format { what: "replica cache", detail: detail.into() }
}

impl ReplicaCache {
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let first = self.outputs.first().ok_or_else(|| bad("no replicas to write"))?;
        let proto = first.channels.first().ok_or_else(|| bad("replicas have no channels"))?;
        let shape = proto.shape();
        let n_out = first.channels.len();
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for e in &shape {
            w.write_all(&(*e as u64).to_le_bytes())?;
        }
        for v in [n_out, self.outputs.len(), self.channels] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&self.alpha.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for o in &self.outputs {
            if o.channels.len() != n_out || o.biases.len() != n_out {
                return Err(bad("replicas disagree in channel count"));
            }
            for c in &o.channels {
                if c.shape() != shape {
                    return Err(bad("replicas disagree in shape"));
                }
                for v in c.data() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            for b in &o.biases {
                w.write_all(&b.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let rank = read_u32(&mut r)? as usize;
        if rank < 2 {
            return Err(bad("rank must cover at least one spatial axis and the input axis"));
        }
        let shape = (0..rank).map(|_| read_u64(&mut r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let n_out = read_u64(&mut r)? as usize;
        let n_replicas = read_u64(&mut r)? as usize;
        let channels = read_u64(&mut r)? as usize;
        let alpha = f64::from_le_bytes(read_array(&mut r)?);
        let seed = read_u64(&mut r)?;

        let mut axes: Vec<Axis> = shape[..rank - 1].iter().map(|&e| Axis::new(AxisRole::Spatial, e)).collect();
        axes.push(Axis::new(AxisRole::Input, shape[rank - 1]));
        let len: usize = shape.iter().product();
        let mut outputs = Vec::with_capacity(n_replicas);
        for _ in 0..n_replicas {
            let mut tensors = Vec::with_capacity(n_out);
            for _ in 0..n_out {
                let data = (0..len).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
                tensors.push(Tensor::new(axes.clone(), data)?);
            }
            let biases = (0..n_out).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
            outputs.push(NetworkOutput { channels: tensors, biases });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(ReplicaCache { alpha, seed, channels, outputs })
    }
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| bad(format!("truncated: {e}")))?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r)?))
}
