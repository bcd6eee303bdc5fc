//! Binary model file.
//!
//! ```text
//! magic        8 bytes   "DNDRMDL\0"
//! version      u32       1
//! digest       32 bytes  SHA-256 of every byte after this field
//! schema_len   u32       followed by the schema text (UTF-8)
//! fe           u32 × 3   input_channels, window_len, block count
//!              u32 × 3   kernel_size, num_filters, pool_size per block
//! heads        u32       head count, then per head:
//!              u32 × 2   task index, layer count
//!              u32 × b   layer widths
//! parameters   f32 …     extractor (weights, bias per block), then heads in
//!                        task order (weights, bias per layer)
//! ```
//!
//! Integers are little-endian `u32`, floats little-endian IEEE-754 binary32.
//! Tensor shapes are implied by the declared specs.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hierarchy::{ModelBundle, TaskGraph, TaskId};
use crate::tensor_nn::{
    ConvBlockSpec, ConvLayer, DenseLayer, FeatureExtractor, FeatureExtractorSpec, Head, HeadSpec,
    Tensor,
};

pub const MAGIC: &[u8; 8] = b"DNDRMDL\0";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// How floats are turned into little-endian bytes. Both produce identical
/// output; the second never touches native byte order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FloatCodec {
    #[default]
    LeBytes,
    BitShift,
}

impl FloatCodec {
    fn encode(self, v: f32, out: &mut Vec<u8>) {
        match self {
            FloatCodec::LeBytes => out.extend_from_slice(&v.to_le_bytes()),
            FloatCodec::BitShift => {
                let b = v.to_bits();
                out.extend_from_slice(&[b as u8, (b >> 8) as u8, (b >> 16) as u8, (b >> 24) as u8]);
            }
        }
    }

    fn decode(self, b: [u8; 4]) -> f32 {
        match self {
            FloatCodec::LeBytes => f32::from_le_bytes(b),
            FloatCodec::BitShift => f32::from_bits(
                b[0] as u32 | (b[1] as u32) << 8 | (b[2] as u32) << 16 | (b[3] as u32) << 24,
            ),
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("value {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Byte length of everything except the parameter block and schema text.
pub fn header_len(bundle: &ModelBundle) -> usize {
    let fe = bundle.feature_extractor().spec();
    let heads: usize = bundle
        .heads()
        .values()
        .map(|h| 8 + 4 * h.spec().layer_widths.len())
        .sum();
    MAGIC.len() + 4 + DIGEST_LEN + 4 + 12 + 12 * fe.blocks.len() + 4 + heads
}

pub fn to_bytes(bundle: &ModelBundle) -> Result<Vec<u8>> {
    to_bytes_with(bundle, FloatCodec::default())
}

pub fn to_bytes_with(bundle: &ModelBundle, codec: FloatCodec) -> Result<Vec<u8>> {
    let mut body = Vec::new();
    let schema = bundle.graph().to_schema_text();
    put_u32(&mut body, schema.len())?;
    body.extend_from_slice(schema.as_bytes());

    let fe = bundle.feature_extractor();
    let spec = fe.spec();
    put_u32(&mut body, spec.input_channels)?;
    put_u32(&mut body, spec.window_len)?;
    put_u32(&mut body, spec.blocks.len())?;
    for b in &spec.blocks {
        put_u32(&mut body, b.kernel_size)?;
        put_u32(&mut body, b.num_filters)?;
        put_u32(&mut body, b.pool_size)?;
    }
    put_u32(&mut body, bundle.heads().len())?;
    for (t, h) in bundle.heads() {
        put_u32(&mut body, t.0)?;
        put_u32(&mut body, h.spec().layer_widths.len())?;
        for &w in &h.spec().layer_widths {
            put_u32(&mut body, w)?;
        }
    }
    for p in fe.params() {
        p.data().iter().for_each(|&v| codec.encode(v, &mut body));
    }
    for h in bundle.heads().values() {
        for p in h.params() {
            p.data().iter().for_each(|&v| codec.encode(v, &mut body));
        }
    }

    let mut out = Vec::with_capacity(MAGIC.len() + 4 + DIGEST_LEN + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&Sha256::digest(&body));
    out.extend_from_slice(&body);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn tensor(&mut self, shape: &[usize], codec: FloatCodec, what: &str) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?, what)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| codec.decode([c[0], c[1], c[2], c[3]]))
            .collect();
        Tensor::new(shape.to_vec(), data)
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelBundle> {
    from_bytes_with(bytes, FloatCodec::default())
}

pub fn from_bytes_with(bytes: &[u8], codec: FloatCodec) -> Result<ModelBundle> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Format("bad magic: not a dendron model file".into()));
    }
    let version = cur.u32("version")?;
    if version != VERSION as usize {
        return Err(Error::Format(format!(
            "unsupported version {version}, this build reads version {VERSION}"
        )));
    }
    let digest = cur.take(DIGEST_LEN, "digest")?;
    if Sha256::digest(&bytes[cur.pos..]).as_slice() != digest {
        return Err(Error::Format("digest mismatch: file is corrupted".into()));
    }

    let schema_len = cur.u32("schema length")?;
    let schema = std::str::from_utf8(cur.take(schema_len, "schema")?)
        .map_err(|_| Error::Format("schema is not UTF-8".into()))?;
    let graph = TaskGraph::from_schema_text(schema)?;

    let input_channels = cur.u32("input channels")?;
    let window_len = cur.u32("window length")?;
    let n_blocks = cur.u32("block count")?;
    let mut blocks = Vec::new();
    for _ in 0..n_blocks {
        blocks.push(ConvBlockSpec {
            kernel_size: cur.u32("kernel size")?,
            num_filters: cur.u32("filter count")?,
            pool_size: cur.u32("pool size")?,
        });
    }
    let fe_spec = FeatureExtractorSpec {
        input_channels,
        window_len,
        blocks,
    };
    let shapes = fe_spec.block_shapes()?;
    let feature_dim = fe_spec.feature_dim()?;

    let n_heads = cur.u32("head count")?;
    let mut head_specs = Vec::new();
    for _ in 0..n_heads {
        let task = TaskId(cur.u32("head task")?);
        let n_layers = cur.u32("head layer count")?;
        let widths = (0..n_layers)
            .map(|_| cur.u32("layer width"))
            .collect::<Result<Vec<_>>>()?;
        head_specs.push((task, HeadSpec { layer_widths: widths }));
    }

    let mut layers = Vec::new();
    for (b, s) in fe_spec.blocks.iter().zip(&shapes) {
        layers.push(ConvLayer {
            spec: *b,
            weights: cur.tensor(&[b.num_filters, s.in_channels, b.kernel_size], codec, "conv weights")?,
            bias: cur.tensor(&[b.num_filters], codec, "conv bias")?,
        });
    }
    let fe = FeatureExtractor::from_layers(fe_spec, layers)?;
    let mut heads = BTreeMap::new();
    for (task, spec) in head_specs {
        spec.validate()?;
        let dense = spec
            .layer_dims(feature_dim)
            .into_iter()
            .map(|(i, o)| {
                Ok(DenseLayer {
                    weights: cur.tensor(&[o, i], codec, "dense weights")?,
                    bias: cur.tensor(&[o], codec, "dense bias")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if heads.insert(task, Head::from_layers(spec, feature_dim, dense)?).is_some() {
            return Err(Error::Format(format!("duplicate head for {task}")));
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the parameter block",
            bytes.len() - cur.pos
        )));
    }
    ModelBundle::new(fe, heads, graph)
}

/// Write atomically: the file appears complete or not at all.
pub fn save_model(bundle: &ModelBundle, path: &Path) -> Result<()> {
    let bytes = to_bytes(bundle)?;
    let tmp = path.with_extension("tmp-write");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelBundle> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// SHA-256 over the extractor's spec and parameter bytes.
pub fn feature_extractor_digest(fe: &FeatureExtractor) -> [u8; 32] {
    let mut h = Sha256::new();
    let spec = fe.spec();
    for v in [spec.input_channels, spec.window_len, spec.blocks.len()] {
        h.update((v as u64).to_le_bytes());
    }
    for b in &spec.blocks {
        for v in [b.kernel_size, b.num_filters, b.pool_size] {
            h.update((v as u64).to_le_bytes());
        }
    }
    for p in fe.params() {
        for v in p.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().into()
}

/// SHA-256 over every parameter of the bundle in file order.
pub fn bundle_digest(bundle: &ModelBundle) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(feature_extractor_digest(bundle.feature_extractor()));
    for (t, head) in bundle.heads() {
        h.update((t.0 as u64).to_le_bytes());
        for p in head.params() {
            for v in p.data() {
                h.update(v.to_le_bytes());
            }
        }
    }
    h.finalize().into()
}
