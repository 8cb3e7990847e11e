//! Binary dataset file.
//!
//! ```text
//! "MPDS" | version: u32
//! episode block*      len: u64 | payload | crc32(payload): u32
//! manifest block      len: u64 | JSON    | crc32(JSON): u32
//! trailer             manifest offset: u64 | "MPDE"
//! ```
//!
//! Integers and floats are little-endian. An episode payload is a small header
//! followed by one self-describing array per field (`tag: [u8; 4]`, element
//! kind, element count, raw data). RGB is stored as bytes; every other array
//! as `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::expert::{Episode, StepRecord};
use crate::error::{Error, Result};
use crate::nets::NormStats;
use crate::simenv::Observation;

const MAGIC: &[u8; 4] = b"MPDS";
const TRAILER_MAGIC: &[u8; 4] = b"MPDE";
pub const FORMAT_VERSION: u32 = 1;
const TRAILER_LEN: u64 = 12;
const HEADER_LEN: u64 = 8;

const KIND_U8: u8 = 1;
const KIND_F32: u8 = 2;

/// Summary written after the last episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub embodiment: String,
    pub episode_count: usize,
    /// Byte offset of each episode block.
    pub offsets: Vec<u64>,
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub action_mean: Vec<f64>,
    pub action_std: Vec<f64>,
    /// Inclusive range of generation seeds.
    pub seed_range: [u64; 2],
    pub has_depth: bool,
    pub instructions: Vec<String>,
    pub total_steps: usize,
    /// Free-form provenance supplied by the writer's caller.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub meta: serde_json::Value,
}

impl DatasetManifest {
    pub fn stats(&self) -> NormStats {
        NormStats {
            state_mean: self.state_mean.clone(),
            state_std: self.state_std.clone(),
            action_mean: self.action_mean.clone(),
            action_std: self.action_std.clone(),
        }
    }
}

/// Running sums for the per-dimension statistics.
#[derive(Debug, Clone, Default)]
struct Moments {
    n: usize,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Moments {
    fn push(&mut self, v: &[f32]) {
        if self.sum.is_empty() {
            self.sum = vec![0.0; v.len()];
            self.sq = vec![0.0; v.len()];
        }
        self.n += 1;
        for (i, &x) in v.iter().enumerate() {
            let x = x as f64;
            self.sum[i] += x;
            self.sq[i] += x * x;
        }
    }

    fn finish(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n.max(1) as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let std = self.sq.iter().zip(&mean).map(|(s, m)| (s / n - m * m).max(0.0).sqrt()).collect();
        (mean, std)
    }
}

/// Streams episodes to disk; call [`DatasetWriter::finish`] to seal the file.
pub struct DatasetWriter {
    out: BufWriter<File>,
    path: PathBuf,
    pos: u64,
    embodiment: Option<String>,
    offsets: Vec<u64>,
    states: Moments,
    actions: Moments,
    seeds: Option<[u64; 2]>,
    has_depth: Option<bool>,
    instructions: Vec<String>,
    total_steps: usize,
    meta: serde_json::Value,
}

impl DatasetWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        out.write_all(MAGIC).map_err(|e| Error::io(&path, e))?;
        out.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            out,
            path,
            pos: HEADER_LEN,
            embodiment: None,
            offsets: Vec::new(),
            states: Moments::default(),
            actions: Moments::default(),
            seeds: None,
            has_depth: None,
            instructions: Vec::new(),
            total_steps: 0,
            meta: serde_json::Value::Null,
        })
    }

    /// Provenance stored verbatim in the manifest.
    pub fn set_meta(&mut self, meta: serde_json::Value) {
        self.meta = meta;
    }

    pub fn push(&mut self, ep: &Episode) -> Result<()> {
        match &self.embodiment {
            None => self.embodiment = Some(ep.embodiment.clone()),
            Some(e) if *e != ep.embodiment => {
                return Err(Error::Contract(format!("dataset mixes embodiments {e} and {}", ep.embodiment)))
            }
            _ => {}
        }
        if ep.steps.is_empty() {
            return Err(Error::Contract(format!("episode {} has no steps", ep.seed)));
        }
        let depth = ep.steps[0].observation.depth.is_some();
        if ep.steps.iter().any(|s| s.observation.depth.is_some() != depth) || self.has_depth.is_some_and(|d| d != depth) {
            return Err(Error::Contract("depth must be present in every record or none".into()));
        }
        self.has_depth = Some(depth);
        let payload = encode_episode(ep)?;
        let crc = crc32fast::hash(&payload);
        let io = |e| Error::io(&self.path, e);
        self.out.write_all(&(payload.len() as u64).to_le_bytes()).map_err(io)?;
        self.out.write_all(&payload).map_err(io)?;
        self.out.write_all(&crc.to_le_bytes()).map_err(io)?;
        self.offsets.push(self.pos);
        self.pos += 8 + payload.len() as u64 + 4;
        for s in &ep.steps {
            self.states.push(&s.observation.state);
            self.actions.push(&s.action);
        }
        self.total_steps += ep.steps.len();
        self.seeds = Some(match self.seeds {
            None => [ep.seed, ep.seed],
            Some([lo, hi]) => [lo.min(ep.seed), hi.max(ep.seed)],
        });
        if !self.instructions.contains(&ep.instruction) {
            self.instructions.push(ep.instruction.clone());
        }
        Ok(())
    }

    /// Writes the manifest and trailer. Fails on an empty dataset.
    pub fn finish(mut self) -> Result<DatasetManifest> {
        let Some(embodiment) = self.embodiment.clone() else {
            return Err(Error::Contract("refusing to write an empty dataset".into()));
        };
        let (state_mean, state_std) = self.states.finish();
        let (action_mean, action_std) = self.actions.finish();
        let manifest = DatasetManifest {
            version: FORMAT_VERSION,
            embodiment,
            episode_count: self.offsets.len(),
            offsets: self.offsets.clone(),
            state_mean,
            state_std,
            action_mean,
            action_std,
            seed_range: self.seeds.unwrap_or_default(),
            has_depth: self.has_depth.unwrap_or(false),
            instructions: self.instructions.clone(),
            total_steps: self.total_steps,
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| Error::Malformed(e.to_string()))?;
        let crc = crc32fast::hash(&json);
        let path = self.path.clone();
        let io = |e| Error::io(&path, e);
        self.out.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
        self.out.write_all(&json).map_err(io)?;
        self.out.write_all(&crc.to_le_bytes()).map_err(io)?;
        self.out.write_all(&self.pos.to_le_bytes()).map_err(io)?;
        self.out.write_all(TRAILER_MAGIC).map_err(io)?;
        self.out.flush().map_err(io)?;
        Ok(manifest)
    }
}

/// Writes `episodes` to `path` and returns the manifest.
pub fn write_dataset<'a>(episodes: impl IntoIterator<Item = &'a Episode>, path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let mut it = episodes.into_iter().peekable();
    if it.peek().is_none() {
        return Err(Error::Contract("refusing to write an empty dataset".into()));
    }
    let mut w = DatasetWriter::create(path)?;
    for ep in it {
        w.push(ep)?;
    }
    w.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadOptions {
    /// Drop stored depth while decoding to save memory.
    pub load_depth: bool,
}

impl Default for ReadOptions {
    fn default() -> Self {
        Self { load_depth: true }
    }
}

/// Random access to the episodes of a dataset file.
pub struct DatasetReader {
    file: BufReader<File>,
    path: PathBuf,
    len: u64,
    manifest: DatasetManifest,
    opts: ReadOptions,
}

impl DatasetReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::open_with(path, ReadOptions::default())
    }

    pub fn open_with(path: impl AsRef<Path>, opts: ReadOptions) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        let mut file = BufReader::new(file);
        let truncated = |what: &str| Error::Truncated(what.to_string(), path.clone());

        let mut head = [0u8; 8];
        if len < 4 {
            return Err(truncated("header"));
        }
        read_at(&mut file, &path, 0, &mut head[..4])?;
        if &head[..4] != MAGIC {
            return Err(Error::BadMagic { path });
        }
        if len < HEADER_LEN {
            return Err(truncated("header"));
        }
        read_at(&mut file, &path, 0, &mut head)?;
        let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Version { path, found: version, expected: FORMAT_VERSION });
        }
        if len < HEADER_LEN + TRAILER_LEN {
            return Err(truncated("trailer"));
        }
        let mut trailer = [0u8; 12];
        read_at(&mut file, &path, len - TRAILER_LEN, &mut trailer)?;
        if &trailer[8..] != TRAILER_MAGIC {
            return Err(truncated("trailer"));
        }
        let manifest_at = u64::from_le_bytes(trailer[..8].try_into().unwrap());
        let json = read_block(&mut file, &path, len - TRAILER_LEN, manifest_at, "manifest")?;
        let manifest: DatasetManifest =
            serde_json::from_slice(&json).map_err(|e| Error::Malformed(format!("{}: manifest: {e}", path.display())))?;
        if manifest.offsets.len() != manifest.episode_count || manifest.offsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Malformed(format!("{}: inconsistent episode offsets", path.display())));
        }
        Ok(Self { file, path, len: manifest_at, manifest, opts })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.episode_count
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.episode_count == 0
    }

    pub fn episode(&mut self, i: usize) -> Result<Episode> {
        let at = *self
            .manifest
            .offsets
            .get(i)
            .ok_or_else(|| Error::Contract(format!("episode {i} out of range")))?;
        let payload = read_block(&mut self.file, &self.path, self.len, at, &format!("episode {i}"))?;
        decode_episode(&payload, self.opts).map_err(|e| match e {
            Error::Malformed(m) => Error::Malformed(format!("{}: episode {i}: {m}", self.path.display())),
            other => other,
        })
    }

    pub fn episodes(&mut self) -> impl Iterator<Item = Result<Episode>> + '_ {
        (0..self.len()).map(move |i| self.episode(i))
    }
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<(DatasetManifest, Vec<Episode>)> {
    read_dataset_with(path, ReadOptions::default())
}

pub fn read_dataset_with(path: impl AsRef<Path>, opts: ReadOptions) -> Result<(DatasetManifest, Vec<Episode>)> {
    let mut r = DatasetReader::open_with(path, opts)?;
    let eps = r.episodes().collect::<Result<Vec<_>>>()?;
    Ok((r.manifest.clone(), eps))
}

fn read_at(file: &mut BufReader<File>, path: &Path, at: u64, buf: &mut [u8]) -> Result<()> {
    file.seek(SeekFrom::Start(at)).map_err(|e| Error::io(path, e))?;
    file.read_exact(buf).map_err(|e| Error::io(path, e))
}

/// Reads `len | payload | crc` at `at`, which must end by `limit`.
fn read_block(file: &mut BufReader<File>, path: &Path, limit: u64, at: u64, what: &str) -> Result<Vec<u8>> {
    let truncated = || Error::Truncated(what.to_string(), path.to_path_buf());
    if at.checked_add(8).is_none_or(|end| end > limit) {
        return Err(truncated());
    }
    let mut n = [0u8; 8];
    read_at(file, path, at, &mut n)?;
    let n = u64::from_le_bytes(n);
    if at.checked_add(12).and_then(|v| v.checked_add(n)).is_none_or(|end| end > limit) {
        return Err(truncated());
    }
    let mut payload = vec![0u8; n as usize];
    file.read_exact(&mut payload).map_err(|e| Error::io(path, e))?;
    let mut crc = [0u8; 4];
    file.read_exact(&mut crc).map_err(|e| Error::io(path, e))?;
    if crc32fast::hash(&payload) != u32::from_le_bytes(crc) {
        return Err(Error::Checksum { block: what.to_string(), path: path.to_path_buf() });
    }
    Ok(payload)
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend((s.len() as u32).to_le_bytes());
    buf.extend(s.as_bytes());
}

fn put_field_u8(buf: &mut Vec<u8>, tag: &[u8; 4], data: impl ExactSizeIterator<Item = u8>) {
    buf.extend(tag);
    buf.push(KIND_U8);
    buf.extend((data.len() as u64).to_le_bytes());
    buf.extend(data);
}

fn put_field_f32<'a>(buf: &mut Vec<u8>, tag: &[u8; 4], rows: impl Iterator<Item = &'a [f32]> + Clone) {
    let n: usize = rows.clone().map(|r| r.len()).sum();
    buf.extend(tag);
    buf.push(KIND_F32);
    buf.extend((n as u64).to_le_bytes());
    for r in rows {
        for v in r {
            buf.extend(v.to_le_bytes());
        }
    }
}

/// Encodes one episode as a self-describing record payload (no framing or
/// checksum). Also used for single-step request records.
pub fn encode_episode(ep: &Episode) -> Result<Vec<u8>> {
    if ep.steps.is_empty() {
        return Err(Error::Contract("cannot encode an episode without steps".into()));
    }
    let first = &ep.steps[0];
    let dims = [
        first.observation.rgb.len(),
        first.observation.depth.as_ref().map_or(0, Vec::len),
        first.observation.state.len(),
        first.observation.forces.len(),
        first.action.len(),
    ];
    for s in &ep.steps {
        let o = &s.observation;
        let d = [o.rgb.len(), o.depth.as_ref().map_or(0, Vec::len), o.state.len(), o.forces.len(), s.action.len()];
        if d != dims {
            return Err(Error::Contract(format!("episode {} has ragged records", ep.seed)));
        }
    }
    let obs = || ep.steps.iter().map(|s| &s.observation);
    let mut buf = Vec::with_capacity(ep.steps.len() * (dims[0] + 4 * (dims[1] + dims[2] + dims[3] + dims[4]) + 1) + 256);
    put_str(&mut buf, &ep.embodiment);
    put_str(&mut buf, &ep.instruction);
    buf.extend(ep.seed.to_le_bytes());
    buf.push(u8::from(ep.success));
    buf.extend((ep.steps.len() as u64).to_le_bytes());
    for d in dims {
        buf.extend((d as u64).to_le_bytes());
    }
    put_field_u8(&mut buf, b"RGB8", obs().flat_map(|o| o.rgb.iter().copied()).collect::<Vec<_>>().into_iter());
    if dims[1] > 0 {
        put_field_f32(&mut buf, b"DPTH", obs().map(|o| o.depth.as_deref().unwrap_or(&[])));
    }
    put_field_f32(&mut buf, b"STAT", obs().map(|o| o.state.as_slice()));
    put_field_u8(&mut buf, b"CNTC", obs().map(|o| u8::from(o.contact)).collect::<Vec<_>>().into_iter());
    put_field_f32(&mut buf, b"FRCE", obs().map(|o| o.forces.as_slice()));
    put_field_f32(&mut buf, b"ACTN", ep.steps.iter().map(|s| s.action.as_slice()));
    Ok(buf)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Malformed(format!("payload ends at {} but {} more bytes were expected", self.buf.len(), n))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Malformed("length overflows usize".into()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Malformed("invalid UTF-8".into()))
    }

    /// Reads a field header and returns the raw element bytes.
    fn field(&mut self, tag: &[u8; 4], kind: u8, count: usize) -> Result<&'a [u8]> {
        let t = self.take(4)?;
        if t != tag {
            return Err(Error::Malformed(format!(
                "expected field {}, found {}",
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(t)
            )));
        }
        let k = self.u8()?;
        let n = self.usize()?;
        if k != kind || n != count {
            return Err(Error::Malformed(format!(
                "field {} has kind {k} × {n}, expected {kind} × {count}",
                String::from_utf8_lossy(tag)
            )));
        }
        let width = if kind == KIND_F32 { 4 } else { 1 };
        self.take(n.checked_mul(width).ok_or_else(|| Error::Malformed("field too large".into()))?)
    }
}

fn f32_rows(raw: &[u8], width: usize) -> Vec<Vec<f32>> {
    let vals: Vec<f32> = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    if width == 0 {
        return Vec::new();
    }
    vals.chunks(width).map(<[f32]>::to_vec).collect()
}

/// Inverse of [`encode_episode`].
pub fn decode_episode(buf: &[u8], opts: ReadOptions) -> Result<Episode> {
    let mut c = Cursor { buf, pos: 0 };
    let embodiment = c.string()?;
    let instruction = c.string()?;
    let seed = c.u64()?;
    let success = c.u8()? != 0;
    let n = c.usize()?;
    let mut dims = [0usize; 5];
    for d in dims.iter_mut() {
        *d = c.usize()?;
    }
    let [rgb_w, depth_w, state_w, force_w, action_w] = dims;
    let total = |w: usize| n.checked_mul(w).ok_or_else(|| Error::Malformed("field too large".into()));

    let rgb = c.field(b"RGB8", KIND_U8, total(rgb_w)?)?;
    let depth = if depth_w > 0 {
        let raw = c.field(b"DPTH", KIND_F32, total(depth_w)?)?;
        opts.load_depth.then(|| f32_rows(raw, depth_w))
    } else {
        None
    };
    let states = f32_rows(c.field(b"STAT", KIND_F32, total(state_w)?)?, state_w);
    let contact = c.field(b"CNTC", KIND_U8, n)?;
    let forces = f32_rows(c.field(b"FRCE", KIND_F32, total(force_w)?)?, force_w);
    let actions = f32_rows(c.field(b"ACTN", KIND_F32, total(action_w)?)?, action_w);
    if c.pos != buf.len() {
        return Err(Error::Malformed(format!("{} trailing bytes", buf.len() - c.pos)));
    }
    let row = |rows: &[Vec<f32>], i: usize| rows.get(i).cloned().unwrap_or_default();

    let mut depth = depth.map(Vec::into_iter);
    let steps = (0..n)
        .map(|i| StepRecord {
            observation: Observation {
                rgb: rgb[i * rgb_w..(i + 1) * rgb_w].to_vec(),
                depth: depth.as_mut().and_then(Iterator::next),
                state: row(&states, i),
                contact: contact[i] != 0,
                forces: row(&forces, i),
            },
            action: row(&actions, i),
        })
        .collect();
    Ok(Episode { embodiment, instruction, seed, steps, success })
}
