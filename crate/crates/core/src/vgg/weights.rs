//! Portable weight files.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! "SFW1" | u32 version = 1 | u32 tensor count
//! per tensor: u16 name length | UTF-8 name | u8 dtype (0 = f32) | u8 ndim
//!             | ndim x u32 dims | f32 payload
//! u32 CRC-32 of every preceding byte
//! ```
//!
//! A sidecar manifest (`<stem>.manifest`, plain `key = value` lines) may
//! declare the expected tensors, per-tensor payload CRCs, the network
//! architecture and the input preprocessing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{Kernel, Tensor};

use super::network::{Layer, NetworkSpec};

pub const MAGIC: &[u8; 4] = b"SFW1";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelOrder {
    Rgb,
    Bgr,
}

/// Maps `[0, 1]` RGB images to network input and back.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preprocess {
    pub order: ChannelOrder,
    /// Per-channel means in network channel order, in scaled units.
    pub mean: [f64; 3],
    pub scale: f64,
}

impl Default for Preprocess {
    fn default() -> Self {
        Preprocess {
            order: ChannelOrder::Bgr,
            mean: [103.939, 116.779, 123.68],
            scale: 255.0,
        }
    }
}

impl Preprocess {
    fn source_channel(&self, c: usize) -> usize {
        match self.order {
            ChannelOrder::Rgb => c,
            ChannelOrder::Bgr => 2 - c,
        }
    }

    /// `[0, 1]` RGB image to network input.
    pub fn apply(&self, image: &Tensor) -> Result<Tensor> {
        if image.channels() != 3 {
            return Err(Error::shape(format!(
                "preprocessing expects 3 channels, got {}",
                image.channels()
            )));
        }
        Ok(Tensor::from_fn(image.shape(), |c, y, x| {
            image.get(self.source_channel(c), y, x) * self.scale - self.mean[c]
        }))
    }

    /// Network-space tensor back to a `[0, 1]` RGB image (unclamped).
    pub fn invert(&self, input: &Tensor) -> Result<Tensor> {
        if input.channels() != 3 {
            return Err(Error::shape(format!(
                "postprocessing expects 3 channels, got {}",
                input.channels()
            )));
        }
        Ok(Tensor::from_fn(input.shape(), |c, y, x| {
            let net_c = self.source_channel(c);
            (input.get(net_c, y, x) + self.mean[net_c]) / self.scale
        }))
    }

    /// Per-channel `[lo, hi]` bounds of valid pixels in network space.
    pub fn valid_range(&self) -> [(f64, f64); 3] {
        let mut r = [(0.0, 0.0); 3];
        for (c, b) in r.iter_mut().enumerate() {
            *b = (-self.mean[c], self.scale - self.mean[c]);
        }
        r
    }
}

/// A named dense array as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl StoredTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(StoredTensor { dims, data })
    }

    /// CRC-32 of the little-endian f32 payload.
    pub fn payload_crc(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for v in &self.data {
            h.update(&(*v as f32).to_le_bytes());
        }
        h.finalize()
    }
}

/// Named tensors loaded from one or more weight files.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore {
    tensors: BTreeMap<String, StoredTensor>,
    pub preprocess: Preprocess,
    pub arch: Option<String>,
}

impl WeightStore {
    pub fn new() -> Self {
        WeightStore::default()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: StoredTensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn insert_conv(&mut self, layer: &str, kernel: &Kernel, bias: &[f64]) {
        let dims = vec![kernel.out_channels(), kernel.in_channels(), 3, 3];
        self.insert(
            format!("{layer}.weight"),
            StoredTensor {
                dims,
                data: kernel.data().to_vec(),
            },
        );
        self.insert(
            format!("{layer}.bias"),
            StoredTensor {
                dims: vec![bias.len()],
                data: bias.to_vec(),
            },
        );
    }

    /// Adds every tensor of `other`, replacing duplicates.
    pub fn merge(&mut self, other: WeightStore) {
        self.tensors.extend(other.tensors);
        if self.arch.is_none() {
            self.arch = other.arch;
        }
    }

    pub fn kernel(&self, layer: &str, in_c: usize, out_c: usize) -> Result<Kernel> {
        let key = format!("{layer}.weight");
        let t = self
            .get(&key)
            .ok_or_else(|| Error::validation(format!("missing weight entry {key}")))?;
        if t.dims != [out_c, in_c, 3, 3] {
            return Err(Error::validation(format!(
                "{key}: expected {out_c}x{in_c}x3x3, found {}",
                dims_string(&t.dims)
            )));
        }
        Kernel::new(out_c, in_c, t.data.clone())
    }

    pub fn bias(&self, layer: &str, out_c: usize) -> Result<&[f64]> {
        let key = format!("{layer}.bias");
        let t = self
            .get(&key)
            .ok_or_else(|| Error::validation(format!("missing weight entry {key}")))?;
        if t.dims != [out_c] {
            return Err(Error::validation(format!(
                "{key}: expected {out_c}, found {}",
                dims_string(&t.dims)
            )));
        }
        Ok(&t.data)
    }

    /// Checks every conv of `net` resolves to correctly shaped entries.
    pub fn validate_for(&self, net: &NetworkSpec) -> Result<()> {
        for layer in net.layers() {
            if let Layer::Conv { name, in_c, out_c } = layer {
                self.kernel(name, *in_c, *out_c)?;
                self.bias(name, *out_c)?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::argument(format!("tensor name too long: {name}")))?;
            let ndim = u8::try_from(t.dims.len())
                .map_err(|_| Error::argument(format!("{name}: too many dimensions")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.push(ndim);
            for &d in &t.dims {
                let d = u32::try_from(d)
                    .map_err(|_| Error::argument(format!("{name}: dimension too large")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    /// Parses an SFW1 image. Preprocessing and architecture stay at defaults.
    pub fn from_bytes(bytes: &[u8]) -> Result<WeightStore> {
        if bytes.len() < 16 {
            return Err(Error::Format(format!(
                "file too short ({} bytes)",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic, expected SFW1".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored_crc = u32::from_le_bytes(trailer.try_into().unwrap());
        let actual_crc = crc32fast::hash(body);
        if stored_crc != actual_crc {
            return Err(Error::Format(format!(
                "CRC mismatch: stored {stored_crc:08x}, computed {actual_crc:08x}"
            )));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut store = WeightStore::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let dtype = r.u8()?;
            if dtype != DTYPE_F32 {
                return Err(Error::Format(format!("{name}: unsupported dtype {dtype}")));
            }
            let ndim = r.u8()? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u32()? as usize);
            }
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("{name}: dimensions overflow")))?;
            let payload = r.take(n.checked_mul(4).ok_or_else(|| {
                Error::Format(format!("{name}: payload size overflows"))
            })?)?;
            let data = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect();
            if store.tensors.insert(name.clone(), StoredTensor { dims, data }).is_some() {
                return Err(Error::Format(format!("duplicate tensor {name}")));
            }
        }
        if r.pos != body.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after last tensor",
                body.len() - r.pos
            )));
        }
        Ok(store)
    }

    /// Writes the SFW1 file and its sidecar manifest.
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))?;
        let mpath = manifest_path(path);
        fs::write(&mpath, self.manifest().render()).map_err(|e| Error::io(&mpath, e))
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            arch: self.arch.clone(),
            preprocess: Some(self.preprocess),
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| ManifestEntry {
                    name: n.clone(),
                    dims: t.dims.clone(),
                    crc32: Some(t.payload_crc()),
                })
                .collect(),
        }
    }

    /// Checks this store against a manifest. Every declared tensor must be
    /// present with the declared shape and, when given, payload CRC.
    pub fn check_manifest(&self, manifest: &Manifest) -> Result<()> {
        for entry in &manifest.tensors {
            let t = self.get(&entry.name).ok_or_else(|| {
                Error::validation(format!("manifest entry {} missing from file", entry.name))
            })?;
            if t.dims != entry.dims {
                return Err(Error::validation(format!(
                    "{}: file has shape {}, manifest expects {}",
                    entry.name,
                    dims_string(&t.dims),
                    dims_string(&entry.dims)
                )));
            }
            if let Some(crc) = entry.crc32 {
                let actual = t.payload_crc();
                if actual != crc {
                    return Err(Error::validation(format!(
                        "{}: payload CRC {actual:08x} differs from manifest {crc:08x}",
                        entry.name
                    )));
                }
            }
        }
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated file at offset {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn dims_string(dims: &[usize]) -> String {
    dims.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

fn parse_dims(s: &str) -> Option<Vec<usize>> {
    if s.is_empty() {
        return Some(Vec::new());
    }
    s.split('x').map(|d| d.trim().parse().ok()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub crc32: Option<u32>,
}

/// Sidecar manifest: expected tensors and preprocessing.
///
/// ```text
/// arch = vgg16
/// channel_order = bgr
/// mean = 103.939, 116.779, 123.68
/// scale = 255
/// tensor.conv1_1.weight = 64x3x3x3 crc32=1a2b3c4d
/// ```
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub arch: Option<String>,
    pub preprocess: Option<Preprocess>,
    pub tensors: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Manifest> {
        let mut m = Manifest::default();
        let mut pre = Preprocess::default();
        let mut saw_pre = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::Format(format!("manifest line {}: {raw}", lineno + 1));
            let (key, value) = line.split_once('=').ok_or_else(bad)?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "format" => {
                    if value != "SFW1" {
                        return Err(Error::Format(format!("manifest format {value}")));
                    }
                }
                "arch" => m.arch = Some(value.to_string()),
                "channel_order" => {
                    saw_pre = true;
                    pre.order = match value {
                        "rgb" => ChannelOrder::Rgb,
                        "bgr" => ChannelOrder::Bgr,
                        _ => return Err(bad()),
                    }
                }
                "mean" => {
                    saw_pre = true;
                    let vals: Vec<f64> = value
                        .split(',')
                        .map(|v| v.trim().parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad())?;
                    pre.mean = vals.try_into().map_err(|_| bad())?;
                }
                "scale" => {
                    saw_pre = true;
                    pre.scale = value.parse().map_err(|_| bad())?;
                }
                k if k.starts_with("tensor.") => {
                    let name = k["tensor.".len()..].to_string();
                    let mut parts = value.split_whitespace();
                    let dims = parts.next().and_then(parse_dims).ok_or_else(bad)?;
                    let mut crc32 = None;
                    for extra in parts {
                        let hex = extra.strip_prefix("crc32=").ok_or_else(bad)?;
                        crc32 = Some(u32::from_str_radix(hex, 16).map_err(|_| bad())?);
                    }
                    m.tensors.push(ManifestEntry { name, dims, crc32 });
                }
                // unknown keys are tolerated so newer exporters stay readable
                _ => {}
            }
        }
        if saw_pre {
            m.preprocess = Some(pre);
        }
        Ok(m)
    }

    pub fn render(&self) -> String {
        let mut s = String::from("format = SFW1\n");
        if let Some(a) = &self.arch {
            let _ = writeln!(s, "arch = {a}");
        }
        if let Some(p) = &self.preprocess {
            let order = match p.order {
                ChannelOrder::Rgb => "rgb",
                ChannelOrder::Bgr => "bgr",
            };
            let _ = writeln!(s, "channel_order = {order}");
            let _ = writeln!(s, "mean = {}, {}, {}", p.mean[0], p.mean[1], p.mean[2]);
            let _ = writeln!(s, "scale = {}", p.scale);
        }
        for e in &self.tensors {
            let _ = write!(s, "tensor.{} = {}", e.name, dims_string(&e.dims));
            if let Some(c) = e.crc32 {
                let _ = write!(s, " crc32={c:08x}");
            }
            s.push('\n');
        }
        s
    }
}

/// `weights.sfw` -> `weights.manifest`.
pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest")
}

/// Loads an SFW1 file, validating it against its sidecar manifest when one exists.
pub fn load_weights(path: &Path) -> Result<WeightStore> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut store = WeightStore::from_bytes(&bytes)?;
    let mpath = manifest_path(path);
    if mpath.exists() && mpath != path {
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest = Manifest::parse(&text)?;
        store.check_manifest(&manifest)?;
        if let Some(p) = manifest.preprocess {
            store.preprocess = p;
        }
        store.arch = manifest.arch;
    }
    Ok(store)
}

/// Loads several weight files into one store; later files win on name clashes.
pub fn load_weight_files<P: AsRef<Path>>(paths: &[P]) -> Result<WeightStore> {
    let mut iter = paths.iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::argument("no weight file given"))?;
    let mut store = load_weights(first.as_ref())?;
    for p in iter {
        store.merge(load_weights(p.as_ref())?);
    }
    Ok(store)
}
