//! Self-describing binary trace files.
//!
//! Layout: magic bytes `PONDTRC1`, a 4-byte little-endian unsigned metadata
//! length, UTF-8 JSON metadata, then channel-interleaved little-endian IEEE
//! 64-bit floats (frame = one sample per channel). The format is seekable and
//! language-neutral; writers go through a temp file and an atomic rename.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::trace::{Provenance, QuadraturePair, TimeTrace, TraceUnit};

pub const MAGIC: &[u8; 8] = b"PONDTRC1";

/// Metadata block carried by every trace file. Extra fields round-trip
/// through `extra` untouched.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceMeta {
    pub sample_rate_hz: f64,
    pub channels: Vec<String>,
    pub units: Vec<TraceUnit>,
    pub n_frames: u64,
    pub seed: u64,
    pub config_hash: String,
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub config: Value,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, Value>,
}

impl TraceMeta {
    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != self.units.len() {
            return Err(Error::Format("channels and units differ in length".into()));
        }
        if self.channels.is_empty() {
            return Err(Error::Format("trace file with no channels".into()));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::Format("non-positive sample rate".into()));
        }
        Ok(())
    }
}

/// Streaming writer: frames are pushed in chunks and the file appears under
/// its final name only after a successful `finish()`.
pub struct TraceWriter {
    meta: TraceMeta,
    writer: BufWriter<File>,
    tmp_path: PathBuf,
    final_path: PathBuf,
    frames_written: u64,
    buf: Vec<u8>,
    finished: bool,
}

impl TraceWriter {
    pub fn create(path: &Path, meta: TraceMeta) -> Result<Self> {
        meta.validate()?;
        let tmp_path = path.with_extension("pondtrc.tmp");
        let file = File::create(&tmp_path)?;
        let mut writer = BufWriter::with_capacity(1 << 20, file);
        let meta_json = serde_json::to_vec(&meta)?;
        writer.write_all(MAGIC)?;
        writer.write_all(&(meta_json.len() as u32).to_le_bytes())?;
        writer.write_all(&meta_json)?;
        Ok(Self {
            meta,
            writer,
            tmp_path,
            final_path: path.to_path_buf(),
            frames_written: 0,
            buf: Vec::new(),
            finished: false,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.meta.channels.len()
    }

    /// Write one chunk of frames. `channels` holds equal-length slices, one
    /// per channel, interleaved on disk frame by frame.
    pub fn write_frames(&mut self, channels: &[&[f64]]) -> Result<()> {
        let nch = self.n_channels();
        if channels.len() != nch {
            return Err(Error::Format(format!(
                "expected {nch} channels, got {}",
                channels.len()
            )));
        }
        let n = channels[0].len();
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::Format("channel chunks differ in length".into()));
        }
        self.buf.clear();
        self.buf.reserve(n * nch * 8);
        for i in 0..n {
            for c in channels {
                self.buf.extend_from_slice(&c[i].to_le_bytes());
            }
        }
        self.writer.write_all(&self.buf)?;
        self.frames_written += n as u64;
        Ok(())
    }

    /// Flush, patch nothing (frame count must match the declared metadata),
    /// and atomically rename into place.
    pub fn finish(mut self) -> Result<()> {
        if self.frames_written != self.meta.n_frames {
            return Err(Error::Format(format!(
                "declared {} frames but wrote {}",
                self.meta.n_frames, self.frames_written
            )));
        }
        self.writer.flush()?;
        std::fs::rename(&self.tmp_path, &self.final_path)?;
        self.finished = true;
        Ok(())
    }
}

impl Drop for TraceWriter {
    fn drop(&mut self) {
        if !self.finished {
            let _ = std::fs::remove_file(&self.tmp_path);
        }
    }
}

/// Streaming reader over the frame payload.
pub struct TraceReader {
    pub meta: TraceMeta,
    reader: BufReader<File>,
    frames_read: u64,
}

impl TraceReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let mut reader = BufReader::with_capacity(1 << 20, file);
        let mut magic = [0u8; 8];
        reader.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?} in {}",
                magic,
                path.display()
            )));
        }
        let mut len_bytes = [0u8; 4];
        reader.read_exact(&mut len_bytes)?;
        let meta_len = u32::from_le_bytes(len_bytes) as usize;
        let mut meta_bytes = vec![0u8; meta_len];
        reader.read_exact(&mut meta_bytes)?;
        let meta: TraceMeta = serde_json::from_slice(&meta_bytes)?;
        meta.validate()?;
        Ok(Self {
            meta,
            reader,
            frames_read: 0,
        })
    }

    pub fn frames_remaining(&self) -> u64 {
        self.meta.n_frames - self.frames_read
    }

    /// Read up to `max_frames` frames into per-channel buffers (cleared
    /// first). Returns the number of frames read; 0 means end of payload.
    pub fn read_frames(&mut self, out: &mut [Vec<f64>], max_frames: usize) -> Result<usize> {
        let nch = self.meta.channels.len();
        if out.len() != nch {
            return Err(Error::Format(format!(
                "expected {nch} output buffers, got {}",
                out.len()
            )));
        }
        for o in out.iter_mut() {
            o.clear();
        }
        let want = (self.frames_remaining().min(max_frames as u64)) as usize;
        if want == 0 {
            return Ok(0);
        }
        let mut raw = vec![0u8; want * nch * 8];
        self.reader.read_exact(&mut raw).map_err(|e| {
            Error::Format(format!("truncated payload ({e}); file shorter than declared"))
        })?;
        for o in out.iter_mut() {
            o.reserve(want);
        }
        for i in 0..want {
            for (c, o) in out.iter_mut().enumerate() {
                let off = (i * nch + c) * 8;
                let v = f64::from_le_bytes(raw[off..off + 8].try_into().unwrap());
                o.push(v);
            }
        }
        self.frames_read += want as u64;
        Ok(want)
    }
}

/// Write an in-memory quadrature pair (channels x0, xpi2).
pub fn write_pair(path: &Path, pair: &QuadraturePair, meta: TraceMeta) -> Result<()> {
    let mut meta = meta;
    meta.sample_rate_hz = pair.sample_rate();
    meta.channels = vec![pair.x0.label.clone(), pair.xpi2.label.clone()];
    meta.units = vec![pair.x0.unit, pair.xpi2.unit];
    meta.n_frames = pair.len() as u64;
    let mut w = TraceWriter::create(path, meta)?;
    w.write_frames(&[&pair.x0.samples, &pair.xpi2.samples])?;
    w.finish()
}

/// Read a whole two-channel file into memory.
pub fn read_pair(path: &Path) -> Result<QuadraturePair> {
    let mut r = TraceReader::open(path)?;
    if r.meta.channels.len() != 2 {
        return Err(Error::Format(format!(
            "expected a 2-channel pair file, found {} channels",
            r.meta.channels.len()
        )));
    }
    let n = r.meta.n_frames as usize;
    let mut bufs = vec![Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut chunk = vec![Vec::new(), Vec::new()];
    loop {
        let got = r.read_frames(&mut chunk, 1 << 20)?;
        if got == 0 {
            break;
        }
        bufs[0].extend_from_slice(&chunk[0]);
        bufs[1].extend_from_slice(&chunk[1]);
    }
    let prov = Provenance {
        seed: r.meta.seed,
        config_hash: r.meta.config_hash.clone(),
    };
    let x0 = TimeTrace::new(
        r.meta.sample_rate_hz,
        std::mem::take(&mut bufs[0]),
        r.meta.units[0],
        r.meta.channels[0].clone(),
        prov.clone(),
    )?;
    let xpi2 = TimeTrace::new(
        r.meta.sample_rate_hz,
        std::mem::take(&mut bufs[1]),
        r.meta.units[1],
        r.meta.channels[1].clone(),
        prov,
    )?;
    QuadraturePair::new(x0, xpi2)
}

/// Write a single-channel trace file.
pub fn write_trace(path: &Path, trace: &TimeTrace, mut meta: TraceMeta) -> Result<()> {
    meta.sample_rate_hz = trace.sample_rate;
    meta.channels = vec![trace.label.clone()];
    meta.units = vec![trace.unit];
    meta.n_frames = trace.len() as u64;
    let mut w = TraceWriter::create(path, meta)?;
    w.write_frames(&[&trace.samples])?;
    w.finish()
}

/// Read a single-channel trace file.
pub fn read_trace(path: &Path) -> Result<(TimeTrace, TraceMeta)> {
    let mut r = TraceReader::open(path)?;
    if r.meta.channels.len() != 1 {
        return Err(Error::Format(format!(
            "expected a 1-channel file, found {}",
            r.meta.channels.len()
        )));
    }
    let mut bufs = vec![Vec::new()];
    let mut all = Vec::with_capacity(r.meta.n_frames as usize);
    loop {
        let got = r.read_frames(&mut bufs, 1 << 20)?;
        if got == 0 {
            break;
        }
        all.extend_from_slice(&bufs[0]);
    }
    let trace = TimeTrace::new(
        r.meta.sample_rate_hz,
        all,
        r.meta.units[0],
        r.meta.channels[0].clone(),
        Provenance {
            seed: r.meta.seed,
            config_hash: r.meta.config_hash.clone(),
        },
    )?;
    Ok((trace, r.meta))
}

pub fn basic_meta(sample_rate_hz: f64, seed: u64, config_hash: &str) -> TraceMeta {
    TraceMeta {
        sample_rate_hz,
        channels: vec![],
        units: vec![],
        n_frames: 0,
        seed,
        config_hash: config_hash.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: Value::Null,
        extra: serde_json::Map::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    fn sample_pair(n: usize) -> QuadraturePair {
        let prov = Provenance {
            seed: 7,
            config_hash: "abc".into(),
        };
        let x0 = TimeTrace::new(
            100.0,
            (0..n).map(|i| i as f64 * 0.5).collect(),
            TraceUnit::ShotNoise,
            "x0",
            prov.clone(),
        )
        .unwrap();
        let xpi2 = TimeTrace::new(
            100.0,
            (0..n).map(|i| -(i as f64)).collect(),
            TraceUnit::ShotNoise,
            "xpi2",
            prov,
        )
        .unwrap();
        QuadraturePair::new(x0, xpi2).unwrap()
    }

    #[test]
    fn pair_round_trip() {
        let dir = tmpdir();
        let path = dir.path().join("pair.pondtrc");
        let pair = sample_pair(1000);
        write_pair(&path, &pair, basic_meta(100.0, 7, "abc")).unwrap();
        let back = read_pair(&path).unwrap();
        assert_eq!(back.x0.samples, pair.x0.samples);
        assert_eq!(back.xpi2.samples, pair.xpi2.samples);
        assert_eq!(back.x0.unit, TraceUnit::ShotNoise);
        assert_eq!(back.x0.provenance.config_hash, "abc");
    }

    #[test]
    fn magic_is_checked() {
        let dir = tmpdir();
        let path = dir.path().join("bogus.pondtrc");
        std::fs::write(&path, b"NOTMAGIC\x00\x00\x00\x00").unwrap();
        match TraceReader::open(&path) {
            Err(Error::Format(_)) => {}
            Err(other) => panic!("expected format error, got {other:?}"),
            Ok(_) => panic!("expected format error, got success"),
        }
    }

    #[test]
    fn header_layout_is_exact() {
        let dir = tmpdir();
        let path = dir.path().join("t.pondtrc");
        let pair = sample_pair(3);
        write_pair(&path, &pair, basic_meta(100.0, 7, "h")).unwrap();
        let raw = std::fs::read(&path).unwrap();
        assert_eq!(&raw[..8], MAGIC);
        let meta_len = u32::from_le_bytes(raw[8..12].try_into().unwrap()) as usize;
        let meta: TraceMeta = serde_json::from_slice(&raw[12..12 + meta_len]).unwrap();
        assert_eq!(meta.n_frames, 3);
        // payload: frame-interleaved f64 LE
        let payload = &raw[12 + meta_len..];
        assert_eq!(payload.len(), 3 * 2 * 8);
        let first = f64::from_le_bytes(payload[0..8].try_into().unwrap());
        let second = f64::from_le_bytes(payload[8..16].try_into().unwrap());
        assert_eq!(first, 0.0); // x0[0]
        assert_eq!(second, -0.0); // xpi2[0]
        let third = f64::from_le_bytes(payload[16..24].try_into().unwrap());
        assert_eq!(third, 0.5); // x0[1]
    }

    #[test]
    fn truncated_payload_is_detected() {
        let dir = tmpdir();
        let path = dir.path().join("t.pondtrc");
        let pair = sample_pair(100);
        write_pair(&path, &pair, basic_meta(100.0, 7, "h")).unwrap();
        let raw = std::fs::read(&path).unwrap();
        std::fs::write(&path, &raw[..raw.len() - 16]).unwrap();
        assert!(read_pair(&path).is_err());
    }

    #[test]
    fn chunked_read_matches_whole_read() {
        let dir = tmpdir();
        let path = dir.path().join("t.pondtrc");
        let pair = sample_pair(997);
        write_pair(&path, &pair, basic_meta(100.0, 7, "h")).unwrap();
        let mut r = TraceReader::open(&path).unwrap();
        let mut bufs = vec![Vec::new(), Vec::new()];
        let mut x0 = Vec::new();
        loop {
            let got = r.read_frames(&mut bufs, 100).unwrap();
            if got == 0 {
                break;
            }
            x0.extend_from_slice(&bufs[0]);
        }
        assert_eq!(x0, pair.x0.samples);
    }

    #[test]
    fn unfinished_writer_leaves_no_file() {
        let dir = tmpdir();
        let path = dir.path().join("t.pondtrc");
        {
            let mut meta = basic_meta(1.0, 0, "");
            meta.channels = vec!["a".into()];
            meta.units = vec![TraceUnit::ShotNoise];
            meta.n_frames = 10;
            let mut w = TraceWriter::create(&path, meta).unwrap();
            w.write_frames(&[&[1.0, 2.0]]).unwrap();
            // dropped without finish()
        }
        assert!(!path.exists());
        assert!(!path.with_extension("pondtrc.tmp").exists());
    }
}
