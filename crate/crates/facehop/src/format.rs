//! Binary model file.
//!
//! ```text
//! "FHOP" | version: u32 | body_len: u64 | body | crc32(everything before it): u32
//! body  = section*
//! section = tag: [u8; 4] | len: u64 | payload
//! ```
//!
//! All integers are little-endian, all reals are little-endian `f64`.
//! Sections, in write order: `CONF` (run config as TOML text), `TREE`
//! (node tree), `KERN` (per-unit AC kernels, channel energies and kinds),
//! `BIAS` (per-unit biases), `RPCA` (region PCAs), `LRWT` (base and meta
//! logistic regressions). Unknown sections are skipped on load.

use std::collections::HashMap;
use std::path::Path;

use facehop_core::classify::{EnsembleModel, LrModel, Variant};
use facehop_core::features::{RegionPca, RegionSpec};
use facehop_core::hoptree::{HopModel, Node, HOPS};
use facehop_core::linalg::Pca;
use facehop_core::saab::{NodeKind, SaabUnit};
use facehop_core::FaceHop;

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"FHOP";
pub const VERSION: u32 = 1;
const HEADER: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("model file is truncated")]
    Truncated,
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model format version {0} (this build reads version {VERSION})")]
    UnsupportedVersion(u32),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed model file: {0}")]
    Malformed(String),
}

fn malformed(msg: impl Into<String>) -> FormatError {
    FormatError::Malformed(msg.into())
}

/// A fitted model together with the run configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub run: RunConfig,
    pub model: FaceHop,
}

impl ModelFile {
    pub fn new(run: RunConfig, model: FaceHop) -> Result<Self> {
        if run.face_hop_config()? != model.config {
            return Err(Error::Usage("model was not trained with this run configuration".into()));
        }
        Ok(Self { run, model })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let sections: [(&[u8; 4], Vec<u8>); 6] = [
            (b"CONF", self.run.to_toml_string().into_bytes()),
            (b"TREE", write_tree(&self.model.tree)),
            (b"KERN", write_kernels(&self.model.tree)),
            (b"BIAS", write_biases(&self.model.tree)),
            (b"RPCA", write_regions(&self.model.regions)),
            (b"LRWT", write_ensemble(&self.model.ensemble)),
        ];
        let mut body = Writer::default();
        for (tag, payload) in sections {
            body.bytes(tag);
            body.u64(payload.len() as u64);
            body.bytes(&payload);
        }
        let mut out = Writer::default();
        out.bytes(&MAGIC);
        out.u32(VERSION);
        out.u64(body.0.len() as u64);
        out.bytes(&body.0);
        let crc = crc32fast::hash(&out.0);
        out.u32(crc);
        out.0
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, FormatError> {
        if bytes.len() < 4 {
            return Err(FormatError::Truncated);
        }
        if bytes[..4] != MAGIC {
            return Err(FormatError::BadMagic);
        }
        if bytes.len() < 8 {
            return Err(FormatError::Truncated);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        if bytes.len() < HEADER {
            return Err(FormatError::Truncated);
        }
        let body_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let expected = (HEADER as u64).checked_add(body_len).and_then(|n| n.checked_add(4));
        match expected {
            Some(n) if (bytes.len() as u64) < n => return Err(FormatError::Truncated),
            None => return Err(FormatError::Truncated),
            Some(n) if (bytes.len() as u64) > n => return Err(malformed("trailing bytes after checksum")),
            _ => {}
        }
        let split = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[split..].try_into().unwrap());
        let computed = crc32fast::hash(&bytes[..split]);
        if stored != computed {
            return Err(FormatError::Checksum { stored, computed });
        }

        let mut sections: HashMap<[u8; 4], &[u8]> = HashMap::new();
        let mut r = Reader::new(&bytes[HEADER..split]);
        while !r.is_empty() {
            let tag: [u8; 4] = r.take(4)?.try_into().unwrap();
            let len = r.len_u64()?;
            let payload = r.take(len)?;
            if sections.insert(tag, payload).is_some() {
                return Err(malformed(format!("duplicate section {}", String::from_utf8_lossy(&tag))));
            }
        }
        let get = |tag: &[u8; 4]| {
            sections
                .get(tag)
                .copied()
                .ok_or_else(|| malformed(format!("missing section {}", String::from_utf8_lossy(tag))))
        };

        let text = std::str::from_utf8(get(b"CONF")?).map_err(|_| malformed("config is not UTF-8"))?;
        let run = RunConfig::from_toml_str(text).map_err(|e| malformed(e.to_string()))?;
        let config = run.face_hop_config().map_err(|e| malformed(e.to_string()))?;
        let nodes = read_tree(get(b"TREE")?)?;
        let units = read_units(get(b"KERN")?, get(b"BIAS")?)?;
        let tree = HopModel::from_parts(config.hop.clone(), units, nodes).map_err(|e| malformed(e.to_string()))?;
        let regions = read_regions(get(b"RPCA")?)?;
        let ensemble = read_ensemble(get(b"LRWT")?)?;
        let model = FaceHop::from_parts(config, tree, regions, ensemble).map_err(|e| malformed(e.to_string()))?;
        Ok(Self { run, model })
    }

    /// Write atomically: a temporary sibling file is renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| {
            let _ = std::fs::remove_file(&tmp);
            Error::io(path, e)
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|source| Error::Model { path: path.to_path_buf(), source })
    }
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("dimension fits in u32"));
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|x| self.f64(*x));
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.bytes(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| malformed("section overrun"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> std::result::Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> std::result::Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn len(&mut self) -> std::result::Result<usize, FormatError> {
        Ok(self.u32()? as usize)
    }
    fn len_u64(&mut self) -> std::result::Result<usize, FormatError> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| malformed("length overflow"))
    }
    fn f64(&mut self) -> std::result::Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, FormatError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| malformed("length overflow"))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn str(&mut self) -> std::result::Result<String, FormatError> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| malformed("string is not UTF-8"))
    }
    fn finish(&self, what: &str) -> std::result::Result<(), FormatError> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(malformed(format!("trailing bytes in {what} section")))
        }
    }
}

fn kind_code(k: NodeKind) -> u8 {
    match k {
        NodeKind::Intermediate => 0,
        NodeKind::Leaf => 1,
        NodeKind::Discard => 2,
    }
}

fn kind_from(code: u8) -> std::result::Result<NodeKind, FormatError> {
    match code {
        0 => Ok(NodeKind::Intermediate),
        1 => Ok(NodeKind::Leaf),
        2 => Ok(NodeKind::Discard),
        _ => Err(malformed(format!("unknown node kind {code}"))),
    }
}

fn write_tree(tree: &HopModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.len(tree.nodes().len());
    for n in tree.nodes() {
        w.u8(n.hop);
        w.u32(n.unit);
        w.u32(n.channel);
        w.u32(n.parent.unwrap_or(u32::MAX));
        w.f64(n.energy);
        w.u8(kind_code(n.kind));
    }
    w.0
}

fn read_tree(buf: &[u8]) -> std::result::Result<Vec<Node>, FormatError> {
    let mut r = Reader::new(buf);
    let n = r.len()?;
    let mut nodes = Vec::with_capacity(n.min(buf.len()));
    for _ in 0..n {
        let hop = r.u8()?;
        let unit = r.u32()?;
        let channel = r.u32()?;
        let parent = Some(r.u32()?).filter(|&p| p != u32::MAX);
        let energy = r.f64()?;
        let kind = kind_from(r.u8()?)?;
        nodes.push(Node { hop, unit, channel, parent, energy, kind });
    }
    r.finish("TREE")?;
    Ok(nodes)
}

fn write_kernels(tree: &HopModel) -> Vec<u8> {
    let mut w = Writer::default();
    for units in tree.all_units() {
        w.len(units.len());
        for u in units {
            w.len(u.window());
            w.len(u.n_ac_kernels());
            w.f64s(u.ac_kernels());
            w.f64s(u.energies());
            u.partition().iter().for_each(|k| w.u8(kind_code(*k)));
        }
    }
    w.0
}

fn write_biases(tree: &HopModel) -> Vec<u8> {
    let mut w = Writer::default();
    for units in tree.all_units() {
        w.len(units.len());
        units.iter().for_each(|u| w.f64(u.bias()));
    }
    w.0
}

fn read_units(kern: &[u8], bias: &[u8]) -> std::result::Result<[Vec<SaabUnit>; HOPS], FormatError> {
    let mut k = Reader::new(kern);
    let mut b = Reader::new(bias);
    let mut hops: [Vec<SaabUnit>; HOPS] = Default::default();
    for units in hops.iter_mut() {
        let n = k.len()?;
        if b.len()? != n {
            return Err(malformed("bias and kernel sections disagree on unit count"));
        }
        for _ in 0..n {
            let window = k.len()?;
            let dim = window.checked_mul(window).ok_or_else(|| malformed("window overflow"))?;
            let n_ac = k.len()?;
            let kernels = k.f64s(n_ac.checked_mul(dim).ok_or_else(|| malformed("length overflow"))?)?;
            let energies = k.f64s(dim)?;
            let partition = (0..dim).map(|_| kind_from(k.u8()?)).collect::<std::result::Result<Vec<_>, _>>()?;
            let unit = SaabUnit::from_parts(window, kernels, b.f64()?, energies, partition)
                .map_err(|e| malformed(e.to_string()))?;
            units.push(unit);
        }
    }
    k.finish("KERN")?;
    b.finish("BIAS")?;
    Ok(hops)
}

fn write_regions(regions: &[RegionPca]) -> Vec<u8> {
    let mut w = Writer::default();
    w.len(regions.len());
    for r in regions {
        w.str(&r.spec.name);
        w.u8(r.spec.hop);
        for v in [r.spec.top, r.spec.left, r.spec.height, r.spec.width, r.channels, r.pca.dim, r.n_comp()] {
            w.len(v);
        }
        w.f64s(&r.pca.mean);
        w.f64s(&r.pca.components);
        w.f64s(&r.pca.eigenvalues);
    }
    w.0
}

fn read_regions(buf: &[u8]) -> std::result::Result<Vec<RegionPca>, FormatError> {
    let mut r = Reader::new(buf);
    let n = r.len()?;
    let mut out = Vec::new();
    for _ in 0..n {
        let name = r.str()?;
        let hop = r.u8()?;
        let mut header = [0usize; 7];
        for v in &mut header {
            *v = r.len()?;
        }
        let [top, left, height, width, channels, dim, n_comp] = header;
        let spec = RegionSpec { name, hop, top, left, height, width };
        if dim != spec.spatial_dim() || n_comp > dim {
            return Err(malformed(format!("region {} has inconsistent dimensions", spec.name)));
        }
        let mean = r.f64s(dim)?;
        let components = r.f64s(n_comp * dim)?;
        let eigenvalues = r.f64s(dim)?;
        out.push(RegionPca { spec, channels, pca: Pca { dim, mean, components, eigenvalues } });
    }
    r.finish("RPCA")?;
    Ok(out)
}

fn write_lr(w: &mut Writer, m: &LrModel) {
    w.len(m.n_features());
    w.f64s(&m.weights);
    w.f64(m.intercept);
    w.f64s(&m.mean);
    w.f64s(&m.std);
}

fn read_lr(r: &mut Reader) -> std::result::Result<LrModel, FormatError> {
    let d = r.len()?;
    let weights = r.f64s(d)?;
    let intercept = r.f64()?;
    let mean = r.f64s(d)?;
    let std = r.f64s(d)?;
    Ok(LrModel { weights, intercept, mean, std })
}

fn write_ensemble(e: &EnsembleModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.u8(match e.variant {
        Variant::FaceHopI => 1,
        Variant::FaceHopII => 2,
    });
    w.len(e.base.len());
    e.base.iter().for_each(|m| write_lr(&mut w, m));
    write_lr(&mut w, &e.meta);
    w.0
}

fn read_ensemble(buf: &[u8]) -> std::result::Result<EnsembleModel, FormatError> {
    let mut r = Reader::new(buf);
    let variant = match r.u8()? {
        1 => Variant::FaceHopI,
        2 => Variant::FaceHopII,
        v => return Err(malformed(format!("unknown variant code {v}"))),
    };
    let n = r.len()?;
    let base = (0..n).map(|_| read_lr(&mut r)).collect::<std::result::Result<Vec<_>, _>>()?;
    let meta = read_lr(&mut r)?;
    r.finish("LRWT")?;
    EnsembleModel::from_parts(base, meta, variant).map_err(|e| malformed(e.to_string()))
}
