//! On-disk formats for feature tracks, annotations, and taxonomies.
//!
//! A feature file is little-endian binary:
//!
//! | offset | size      | field                         |
//! |--------|-----------|-------------------------------|
//! | 0      | 4         | magic `OWLF`                  |
//! | 4      | 4         | format version (`u32` = 1)    |
//! | 8      | 1         | modality (0 visual, 1 audio)  |
//! | 9      | 4         | channels `D` (`u32`)          |
//! | 13     | 4         | snippets `L` (`u32`)          |
//! | 17     | 8         | snippets per second (`f64`)   |
//! | 25     | 4·D·L     | `f32` payload, channel-major  |

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnnotatedVideo, Corpus, FeatureTrack, GtSegment, Modality, Taxonomy};
use crate::error::{Error, Result};
use crate::numerics::Tensor2;

pub const FEATURE_MAGIC: &[u8; 4] = b"OWLF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 25;

impl FeatureTrack {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.dim() * self.len());
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.push(self.modality().code());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.fps().to_le_bytes());
        for &v in self.data().data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != FEATURE_MAGIC {
            return Err(r.err_at(0, format!("bad magic {magic:?}")));
        }
        let version = r.u32()?;
        if version != FEATURE_VERSION {
            return Err(r.err_at(4, format!("unsupported version {version}")));
        }
        let code = r.take(1)?[0];
        let modality = Modality::from_code(code).ok_or_else(|| r.err_at(8, format!("unknown modality code {code}")))?;
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(r.err_at(9, "D must be at least 1".into()));
        }
        let len = r.u32()? as usize;
        if len == 0 {
            return Err(r.err_at(13, "L must be at least 1".into()));
        }
        let fps = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(r.err_at(17, format!("invalid fps {fps}")));
        }
        let mut data = Vec::with_capacity(dim * len);
        for _ in 0..dim * len {
            let v = f32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(r.err_at(r.pos as u64 - 4, format!("non-finite value {v}")));
            }
            data.push(v as f64);
        }
        if r.pos != bytes.len() {
            return Err(r.err_at(
                r.pos as u64,
                format!("{} trailing bytes after a {dim}x{len} payload", bytes.len() - r.pos),
            ));
        }
        FeatureTrack::new(modality, fps, Tensor2::from_vec(dim, len, data)?)
    }
}

pub(crate) struct Reader<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err_at(
                self.bytes.len() as u64,
                format!("truncated: needed {n} bytes at offset {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn err_at(&self, offset: u64, msg: String) -> Error {
        Error::Parse { offset, msg }
    }
}

pub fn write_feature_file(path: &Path, track: &FeatureTrack) -> Result<()> {
    fs::write(path, track.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: &Path) -> Result<FeatureTrack> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureTrack::from_bytes(&bytes)
}

/// JSON view of a video's ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub video_id: String,
    pub duration: f64,
    pub segments: Vec<GtSegment>,
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::Dependency(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_annotation(path: &Path, ann: &Annotation) -> Result<()> {
    write_json(path, ann)
}

pub fn read_annotation(path: &Path) -> Result<Annotation> {
    read_json(path)
}

pub fn write_taxonomy(path: &Path, tax: &Taxonomy) -> Result<()> {
    write_json(path, tax)
}

pub fn read_taxonomy(path: &Path) -> Result<Taxonomy> {
    let tax: Taxonomy = read_json(path)?;
    tax.validate()?;
    Ok(tax)
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    videos: Vec<String>,
}

/// Writes `taxonomy.json`, `manifest.json` and per-video
/// `<id>.json`, `<id>.visual.owlf`, `<id>.audio.owlf` into `dir`.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_taxonomy(&dir.join("taxonomy.json"), &corpus.taxonomy)?;
    let manifest = Manifest {
        videos: corpus.videos.iter().map(|v| v.video_id.clone()).collect(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    for v in &corpus.videos {
        write_annotation(&dir.join(format!("{}.json", v.video_id)), &v.annotation())?;
        write_feature_file(&dir.join(format!("{}.visual.owlf", v.video_id)), &v.visual)?;
        write_feature_file(&dir.join(format!("{}.audio.owlf", v.video_id)), &v.audio)?;
    }
    Ok(())
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let taxonomy = read_taxonomy(&dir.join("taxonomy.json"))?;
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    let mut videos = Vec::with_capacity(manifest.videos.len());
    for id in manifest.videos {
        let ann = read_annotation(&dir.join(format!("{id}.json")))?;
        let load = |suffix: &str| {
            let p = dir.join(format!("{id}.{suffix}.owlf"));
            if !p.exists() {
                return Err(Error::Dependency(p));
            }
            read_feature_file(&p)
        };
        let video = AnnotatedVideo {
            video_id: ann.video_id,
            duration: ann.duration,
            segments: ann.segments,
            visual: load("visual")?,
            audio: load("audio")?,
        };
        video.validate(&taxonomy)?;
        videos.push(video);
    }
    Ok(Corpus { taxonomy, videos })
}
