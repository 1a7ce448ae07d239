//! On-disk formats.
//!
//! Features, checkpoints and embedding indexes share one little-endian
//! binary layout: a four-byte magic tag, a `u32` version, then a
//! schema-specific payload. Floats are stored as IEEE-754 `f32`. Strings are
//! a `u32` byte length followed by UTF-8.
//!
//! The utterance manifest is plain text, one line per utterance:
//! `id<TAB>segment ends<TAB>word ids`, lists comma-separated.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::gas::GasModel;
use crate::numeric::{Matrix, Parameters};
use crate::ssae::{BoundarySet, DecoderFeed, EmbeddingSequence, ModelConfig, SsaeParams};

pub const FEATURE_MAGIC: &[u8; 4] = b"SGAW";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SGCK";
pub const INDEX_MAGIC: &[u8; 4] = b"SGIX";
pub const VERSION: u32 = 1;

/// Writes through a temporary file in the same directory and renames it
/// into place, so readers never see a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn header(magic: &[u8; 4]) -> Self {
        let mut w = Self::default();
        w.buf.extend_from_slice(magic);
        w.u32(VERSION);
        w
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn len(&mut self, n: usize) -> Result<()> {
        let v = u32::try_from(n).map_err(|_| Error::Input(format!("count {n} does not fit in u32")))?;
        self.u32(v);
        Ok(())
    }

    fn str(&mut self, s: &str) -> Result<()> {
        self.len(s.len())?;
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }

    fn floats(&mut self, values: &[f64]) {
        for &v in values {
            self.buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
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

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let available = self.buf.len() - self.pos;
        if available < n {
            return Err(Error::Format {
                offset: self.pos,
                reason: format!("truncated {what}: expected {n} bytes, found {available}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let m = self.take(4, "magic")?;
        if m != magic {
            return Err(Error::Format {
                offset: 0,
                reason: format!(
                    "bad magic: expected {:?}, found {:?}",
                    String::from_utf8_lossy(magic),
                    String::from_utf8_lossy(m)
                ),
            });
        }
        let v = self.u32("version")?;
        if v != VERSION {
            return Err(Error::Format {
                offset: 4,
                reason: format!("unsupported version: expected {VERSION}, found {v}"),
            });
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn str(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let at = self.pos;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Format {
            offset: at,
            reason: format!("{what} is not valid UTF-8"),
        })
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Matrix> {
        let at = self.pos;
        let n = rows.checked_mul(cols).and_then(|n| n.checked_mul(4)).ok_or_else(|| Error::Format {
            offset: at,
            reason: format!("{what} size {rows}x{cols} overflows"),
        })?;
        let b = self.take(n, what)?;
        let data: Vec<f64> = b
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        Matrix::from_vec(rows, cols, data).map_err(|_| Error::Format {
            offset: at,
            reason: format!("{what} holds non-finite values"),
        })
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format {
                offset: self.pos,
                reason: format!("{} trailing bytes", self.buf.len() - self.pos),
            });
        }
        Ok(())
    }
}

pub fn encode_features(f: &FeatureMatrix) -> Result<Vec<u8>> {
    let mut w = Writer::header(FEATURE_MAGIC);
    w.len(f.len())?;
    w.len(f.dim())?;
    w.floats(f.frames.as_slice());
    Ok(w.buf)
}

pub fn decode_features(bytes: &[u8], id: &str) -> Result<FeatureMatrix> {
    let mut r = Reader::new(bytes);
    r.header(FEATURE_MAGIC)?;
    let t = r.u32("frame count")? as usize;
    let d = r.u32("feature dim")? as usize;
    let frames = r.matrix(t, d, "feature payload")?;
    r.finish()?;
    FeatureMatrix::new(id, frames)
}

pub fn write_features(path: &Path, f: &FeatureMatrix) -> Result<()> {
    atomic_write(path, &encode_features(f)?)
}

/// Reads a feature file; the utterance id is the file stem.
pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    decode_features(&read_file(path)?, &id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Gas,
    Ssae,
}

impl ModelKind {
    fn tag(self) -> &'static str {
        match self {
            ModelKind::Gas => "gas",
            ModelKind::Ssae => "ssae",
        }
    }
}

/// Named parameter tensors plus the settings that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub seed: u64,
    /// `key = value` snapshot of the configuration.
    pub config: Vec<(String, String)>,
    pub tensors: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn from_params<P: Parameters>(kind: ModelKind, seed: u64, config: Vec<(String, String)>, params: &P) -> Self {
        Self {
            kind,
            seed,
            config,
            tensors: params.tensors().into_iter().map(|(n, m)| (n, m.clone())).collect(),
        }
    }

    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn config_usize(&self, key: &str) -> Result<usize> {
        self.config_value(key)
            .ok_or_else(|| Error::Compat(format!("checkpoint lacks `{key}`")))?
            .parse()
            .map_err(|_| Error::Compat(format!("checkpoint `{key}` is not a count")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::header(CHECKPOINT_MAGIC);
        w.str(self.kind.tag())?;
        w.u64(self.seed);
        w.len(self.config.len())?;
        for (k, v) in &self.config {
            w.str(k)?;
            w.str(v)?;
        }
        w.len(self.tensors.len())?;
        for (name, m) in &self.tensors {
            w.str(name)?;
            w.len(m.rows())?;
            w.len(m.cols())?;
            w.floats(m.as_slice());
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.header(CHECKPOINT_MAGIC)?;
        let at = r.pos;
        let kind = match r.str("model kind")?.as_str() {
            "gas" => ModelKind::Gas,
            "ssae" => ModelKind::Ssae,
            other => {
                return Err(Error::Format {
                    offset: at,
                    reason: format!("unknown model kind `{other}`"),
                })
            }
        };
        let seed = r.u64("seed")?;
        let n = r.u32("config count")? as usize;
        let mut config = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            config.push((r.str("config key")?, r.str("config value")?));
        }
        let n = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let name = r.str("tensor name")?;
            let rows = r.u32("tensor rows")? as usize;
            let cols = r.u32("tensor cols")? as usize;
            let m = r.matrix(rows, cols, &format!("tensor `{name}`"))?;
            tensors.push((name, m));
        }
        r.finish()?;
        Ok(Self {
            kind,
            seed,
            config,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }

    /// SHA-256 of the serialized checkpoint, hex encoded.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(fingerprint(&self.to_bytes()?))
    }

    /// Copies the stored tensors into `params`, which must have the same
    /// names and shapes in the same order.
    pub fn load_into<P: Parameters>(&self, params: &mut P) -> Result<()> {
        let names: Vec<(String, (usize, usize))> =
            params.tensors().into_iter().map(|(n, m)| (n, m.shape())).collect();
        if names.len() != self.tensors.len() {
            return Err(Error::Compat(format!(
                "checkpoint has {} tensors, model expects {}",
                self.tensors.len(),
                names.len()
            )));
        }
        for ((name, shape), (stored, m)) in names.iter().zip(&self.tensors) {
            if name != stored || *shape != m.shape() {
                return Err(Error::Compat(format!(
                    "tensor `{stored}` {:?} does not fit model tensor `{name}` {shape:?}",
                    m.shape()
                )));
            }
        }
        for (dst, (_, src)) in params.tensors_mut().into_iter().zip(&self.tensors) {
            dst.as_mut_slice().copy_from_slice(src.as_slice());
        }
        Ok(())
    }

    pub fn from_ssae(params: &SsaeParams, seed: u64, mut extra: Vec<(String, String)>) -> Self {
        let mut config = model_config_pairs(&params.config);
        config.append(&mut extra);
        Self::from_params(ModelKind::Ssae, seed, config, params)
    }

    pub fn to_ssae(&self) -> Result<SsaeParams> {
        self.expect_kind(ModelKind::Ssae)?;
        let feed = match self.config_value("decoder_feed") {
            Some("teacher_forced") => DecoderFeed::TeacherForced,
            Some("free_running") | None => DecoderFeed::FreeRunning,
            Some(other) => return Err(Error::Compat(format!("unknown decoder_feed `{other}`"))),
        };
        let config = ModelConfig {
            feature_dim: self.config_usize("feature_dim")?,
            gas_dim: self.config_usize("gas_dim")?,
            hidden_dim: self.config_usize("hidden_dim")?,
            gate_hidden: self.config_usize("gate_hidden")?,
            gate_layers: self.config_usize("gate_layers")?,
            decoder_feed: feed,
        };
        // the initial values are overwritten by the stored tensors
        let mut params = SsaeParams::new(config, &mut ChaCha8Rng::seed_from_u64(0));
        self.load_into(&mut params)?;
        Ok(params)
    }

    pub fn from_gas(model: &GasModel, seed: u64, mut extra: Vec<(String, String)>) -> Self {
        let mut config = vec![
            ("feature_dim".to_string(), model.feature_dim().to_string()),
            ("hidden_dim".to_string(), model.hidden_dim().to_string()),
        ];
        config.append(&mut extra);
        Self::from_params(ModelKind::Gas, seed, config, model)
    }

    pub fn to_gas(&self) -> Result<GasModel> {
        self.expect_kind(ModelKind::Gas)?;
        let mut model = GasModel::zeros(self.config_usize("feature_dim")?, self.config_usize("hidden_dim")?);
        self.load_into(&mut model)?;
        Ok(model)
    }

    fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Compat(format!(
                "expected a {} checkpoint, found {}",
                kind.tag(),
                self.kind.tag()
            )));
        }
        Ok(())
    }
}

pub fn model_config_pairs(c: &ModelConfig) -> Vec<(String, String)> {
    let feed = match c.decoder_feed {
        DecoderFeed::FreeRunning => "free_running",
        DecoderFeed::TeacherForced => "teacher_forced",
    };
    [
        ("feature_dim", c.feature_dim.to_string()),
        ("gas_dim", c.gas_dim.to_string()),
        ("hidden_dim", c.hidden_dim.to_string()),
        ("gate_hidden", c.gate_hidden.to_string()),
        ("gate_layers", c.gate_layers.to_string()),
        ("decoder_feed", feed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

pub fn fingerprint(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub id: String,
    pub boundaries: BoundarySet,
    pub embeddings: EmbeddingSequence,
}

/// Per-document segmentations and embeddings produced by one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    /// Fingerprint of the checkpoint that produced the entries.
    pub checkpoint: String,
    pub entries: Vec<IndexEntry>,
}

impl EmbeddingIndex {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::header(INDEX_MAGIC);
        w.str(&self.checkpoint)?;
        w.len(self.entries.len())?;
        for e in &self.entries {
            if e.embeddings.len() != e.boundaries.num_segments() {
                return Err(Error::shape("index entry embeddings", e.boundaries.num_segments(), e.embeddings.len()));
            }
            w.str(&e.id)?;
            w.len(e.boundaries.num_frames())?;
            w.len(e.boundaries.num_segments())?;
            for &end in e.boundaries.ends() {
                w.len(end)?;
            }
            w.len(e.embeddings.dim())?;
            w.floats(e.embeddings.vectors.as_slice());
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.header(INDEX_MAGIC)?;
        let checkpoint = r.str("checkpoint fingerprint")?;
        let n = r.u32("entry count")? as usize;
        let mut entries = Vec::with_capacity(n.min(1 << 16));
        let mut dim = None;
        for _ in 0..n {
            let id = r.str("document id")?;
            let frames = r.u32("frame count")? as usize;
            let segs = r.u32("segment count")? as usize;
            let at = r.pos;
            let ends = (0..segs).map(|_| r.u32("segment end").map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let boundaries = BoundarySet::from_ends(frames, ends).map_err(|e| Error::Format {
                offset: at,
                reason: format!("document `{id}`: {e}"),
            })?;
            let at = r.pos;
            let d = r.u32("embedding dim")? as usize;
            if *dim.get_or_insert(d) != d {
                return Err(Error::Format {
                    offset: at,
                    reason: format!("document `{id}` has embedding dim {d}, expected {}", dim.unwrap_or(d)),
                });
            }
            let vectors = r.matrix(segs, d, "embeddings")?;
            entries.push(IndexEntry {
                id,
                boundaries,
                embeddings: EmbeddingSequence { vectors },
            });
        }
        r.finish()?;
        Ok(Self { checkpoint, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }

    /// Fails unless the index was built from the checkpoint with this
    /// fingerprint.
    pub fn check_checkpoint(&self, fingerprint: &str) -> Result<()> {
        if self.checkpoint != fingerprint {
            return Err(Error::Compat(format!(
                "index was built from checkpoint {}, not {}",
                self.checkpoint, fingerprint
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub boundaries: BoundarySet,
    pub words: Vec<usize>,
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        let _ = writeln!(s, "{}\t{}\t{}", e.id, join(e.boundaries.ends()), join(&e.words));
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Input(format!("manifest line {}: {what}", n + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(bad(&format!("expected 3 tab-separated fields, found {}", cols.len())));
        }
        let list = |s: &str| -> Result<Vec<usize>> {
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split(',')
                .map(|x| x.trim().parse::<usize>().map_err(|_| bad(&format!("`{x}` is not a number"))))
                .collect()
        };
        let ends = list(cols[1])?;
        let t = *ends.last().ok_or_else(|| bad("no segment ends"))?;
        let boundaries = BoundarySet::from_ends(t, ends).map_err(|e| bad(&e.to_string()))?;
        out.push(ManifestEntry {
            id: cols[0].to_string(),
            boundaries,
            words: list(cols[2])?,
        });
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    atomic_write(path, format_manifest(entries).as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}
