//! Binary container for backbone outputs produced by an external network.
//!
//! Layout: the 4-byte magic `OPTN`, a little-endian `u32` header length, a
//! UTF-8 JSON header, then the raw little-endian values: all spatial logits
//! (`N × Hh × Wh × C`, channel-last) followed by all depth logits (`N × Dz`).
//!
//! ```json
//! {"dims": [N, Hh, Wh, C], "depth_dims": [N, Dz], "dtype": "f32", "layout": "nhwc"}
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{decode, BackboneOutput, CoordinateGrid, DecodedPose};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"OPTN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorHeader {
    pub dims: [usize; 4],
    pub depth_dims: [usize; 2],
    pub dtype: DType,
    pub layout: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackboneBatch {
    F32(Vec<BackboneOutput<f32>>),
    F64(Vec<BackboneOutput<f64>>),
}

impl BackboneBatch {
    pub fn len(&self) -> usize {
        match self {
            BackboneBatch::F32(v) => v.len(),
            BackboneBatch::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn decode_all(&self, joints: usize, depth: usize, grid: &CoordinateGrid) -> Result<Vec<DecodedPose>> {
        match self {
            BackboneBatch::F32(v) => v.iter().map(|o| decode(o, joints, depth, grid)).collect(),
            BackboneBatch::F64(v) => v.iter().map(|o| decode(o, joints, depth, grid)).collect(),
        }
    }
}

pub fn write_batch(path: &Path, batch: &BackboneBatch) -> Result<()> {
    let mut buf = Vec::new();
    encode(&mut buf, batch)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_batch(path: &Path) -> Result<BackboneBatch> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bytes(&mut bytes.as_slice())
}

pub fn encode(out: &mut impl Write, batch: &BackboneBatch) -> Result<()> {
    fn shape<T>(v: &[BackboneOutput<T>]) -> Result<([usize; 4], [usize; 2])> {
        let first = v.first().ok_or_else(|| Error::Shape("empty batch".into()))?;
        let dims = [v.len(), first.height, first.width, first.channels];
        let dz = first.depth.len();
        if v
            .iter()
            .any(|o| [o.height, o.width, o.channels] != dims[1..] || o.depth.len() != dz)
        {
            return Err(Error::Shape("frames in a batch must share a shape".into()));
        }
        Ok((dims, [v.len(), dz]))
    }
    let (dims, depth_dims, dtype) = match batch {
        BackboneBatch::F32(v) => {
            let (d, z) = shape(v)?;
            (d, z, DType::F32)
        }
        BackboneBatch::F64(v) => {
            let (d, z) = shape(v)?;
            (d, z, DType::F64)
        }
    };
    let header = serde_json::to_vec(&TensorHeader {
        dims,
        depth_dims,
        dtype,
        layout: "nhwc".into(),
    })?;
    let mut body = Vec::new();
    match batch {
        BackboneBatch::F32(v) => {
            v.iter().flat_map(|o| &o.spatial).for_each(|x| body.extend_from_slice(&x.to_le_bytes()));
            v.iter().flat_map(|o| &o.depth).for_each(|x| body.extend_from_slice(&x.to_le_bytes()));
        }
        BackboneBatch::F64(v) => {
            v.iter().flat_map(|o| &o.spatial).for_each(|x| body.extend_from_slice(&x.to_le_bytes()));
            v.iter().flat_map(|o| &o.depth).for_each(|x| body.extend_from_slice(&x.to_le_bytes()));
        }
    }
    let io = |e| Error::io("<tensor stream>", e);
    out.write_all(MAGIC).map_err(io)?;
    out.write_all(&(header.len() as u32).to_le_bytes()).map_err(io)?;
    out.write_all(&header).map_err(io)?;
    out.write_all(&body).map_err(io)
}

pub fn decode_bytes(input: &mut impl Read) -> Result<BackboneBatch> {
    let io = |e| Error::io("<tensor stream>", e);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Shape("not a backbone tensor file (bad magic)".into()));
    }
    let mut len = [0u8; 4];
    input.read_exact(&mut len).map_err(io)?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    input.read_exact(&mut header).map_err(io)?;
    let header: TensorHeader = serde_json::from_slice(&header)?;
    if header.layout != "nhwc" {
        return Err(Error::Shape(format!("unsupported layout {:?}", header.layout)));
    }
    let [n, h, w, c] = header.dims;
    let [n2, dz] = header.depth_dims;
    if n != n2 || n == 0 {
        return Err(Error::Shape(format!("batch sizes disagree: {n} vs {n2}")));
    }
    let mut body = Vec::new();
    input.read_to_end(&mut body).map_err(io)?;

    let frame = h * w * c;
    let count = n * (frame + dz);
    macro_rules! frames {
        ($t:ty, $variant:ident) => {{
            const SIZE: usize = std::mem::size_of::<$t>();
            if body.len() != count * SIZE {
                return Err(Error::Shape(format!("expected {} data bytes, found {}", count * SIZE, body.len())));
            }
            let values: Vec<$t> = body
                .chunks_exact(SIZE)
                .map(|b| <$t>::from_le_bytes(b.try_into().expect("chunk has SIZE bytes")))
                .collect();
            let (spatial, depth) = values.split_at(n * frame);
            let outputs = (0..n)
                .map(|i| {
                    BackboneOutput::new(
                        h,
                        w,
                        c,
                        spatial[i * frame..(i + 1) * frame].to_vec(),
                        depth[i * dz..(i + 1) * dz].to_vec(),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            BackboneBatch::$variant(outputs)
        }};
    }
    Ok(match header.dtype {
        DType::F32 => frames!(f32, F32),
        DType::F64 => frames!(f64, F64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_f32() {
        let frames: Vec<_> = (0..3)
            .map(|i| {
                BackboneOutput::new(
                    2,
                    2,
                    3,
                    (0..12).map(|k| (k + i) as f32 * 0.5).collect(),
                    vec![i as f32; 4],
                )
                .unwrap()
            })
            .collect();
        let batch = BackboneBatch::F32(frames);
        let mut buf = Vec::new();
        encode(&mut buf, &batch).unwrap();
        assert_eq!(&buf[..4], MAGIC);
        assert_eq!(decode_bytes(&mut buf.as_slice()).unwrap(), batch);
    }

    #[test]
    fn truncated_body_is_rejected() {
        let batch = BackboneBatch::F64(vec![BackboneOutput::new(1, 1, 2, vec![1.0, 2.0], vec![0.0]).unwrap()]);
        let mut buf = Vec::new();
        encode(&mut buf, &batch).unwrap();
        buf.pop();
        assert!(decode_bytes(&mut buf.as_slice()).is_err());
        assert!(decode_bytes(&mut &b"NOPE"[..]).is_err());
    }
}
