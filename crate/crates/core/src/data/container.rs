//! Dataset manifest (JSON) plus the binary frame and feature containers.
//!
//! Frame container: `"KFGV"`, version `u16`, width `u16`, height `u16`,
//! n_frames `u32`, then `n_frames * height * width` raw 8-bit pixels.
//! Feature container: `"KFGF"`, version `u16`, entry count `u32`, then per entry
//! frame index `u32` followed by 256 `f32` values. All integers little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GrayFrame, Label, Roi, VideoSample, FEATURE_DIM};
use crate::error::{Error, Result};

pub const FRAME_MAGIC: &[u8; 4] = b"KFGV";
pub const FEATURE_MAGIC: &[u8; 4] = b"KFGF";
pub const CONTAINER_VERSION: u16 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub frames_file: String,
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    pub key_frame_index: usize,
    pub label: u8,
    /// `[frame, x1, y1, x2, y2]`
    pub rois: Vec<[u32; 5]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features_file: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub videos: Vec<ManifestEntry>,
}

/// Little-endian cursor that reports the byte offset of any short read.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: format!(
                    "{}: truncated, wanted {n} more bytes of {}",
                    self.what,
                    self.buf.len() - self.pos
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != want {
            return Err(Error::Format {
                offset: 0,
                msg: format!(
                    "{}: bad magic {:?}",
                    self.what,
                    String::from_utf8_lossy(got)
                ),
            });
        }
        Ok(())
    }
    fn version(&mut self) -> Result<()> {
        let v = self.u16()?;
        if v != CONTAINER_VERSION {
            return Err(Error::Version {
                found: v as u32,
                expected: CONTAINER_VERSION as u32,
            });
        }
        Ok(())
    }
}

pub fn encode_frames(frames: &[GrayFrame]) -> Result<Vec<u8>> {
    let (w, h) = frames
        .first()
        .map(|f| (f.width, f.height))
        .ok_or_else(|| Error::Data("cannot encode an empty frame sequence".into()))?;
    if w > u16::MAX as usize || h > u16::MAX as usize {
        return Err(Error::Data(format!(
            "frame size {w}x{h} exceeds the container limit"
        )));
    }
    let mut out = Vec::with_capacity(14 + frames.len() * w * h);
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(w as u16).to_le_bytes());
    out.extend_from_slice(&(h as u16).to_le_bytes());
    out.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    for f in frames {
        out.extend_from_slice(&f.pixels);
    }
    Ok(out)
}

pub fn decode_frames(buf: &[u8], what: &str) -> Result<Vec<GrayFrame>> {
    let mut r = Reader {
        buf,
        pos: 0,
        what: what.to_string(),
    };
    r.magic(FRAME_MAGIC)?;
    r.version()?;
    let w = r.u16()? as usize;
    let h = r.u16()? as usize;
    let n = r.u32()? as usize;
    let mut frames = Vec::with_capacity(n);
    for _ in 0..n {
        frames.push(GrayFrame::new(w, h, r.take(w * h)?.to_vec())?);
    }
    if r.pos != buf.len() {
        return Err(Error::Format {
            offset: r.pos as u64,
            msg: format!("{what}: {} trailing bytes", buf.len() - r.pos),
        });
    }
    Ok(frames)
}

pub fn encode_features(features: &[Option<Vec<f64>>]) -> Vec<u8> {
    let entries: Vec<(usize, &Vec<f64>)> = features
        .iter()
        .enumerate()
        .filter_map(|(i, f)| f.as_ref().map(|f| (i, f)))
        .collect();
    let mut out = Vec::with_capacity(10 + entries.len() * (4 + 4 * FEATURE_DIM));
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (i, f) in entries {
        out.extend_from_slice(&(i as u32).to_le_bytes());
        for &v in f {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_features(buf: &[u8], n_frames: usize, what: &str) -> Result<Vec<Option<Vec<f64>>>> {
    let mut r = Reader {
        buf,
        pos: 0,
        what: what.to_string(),
    };
    r.magic(FEATURE_MAGIC)?;
    r.version()?;
    let count = r.u32()? as usize;
    let mut out = vec![None; n_frames];
    for _ in 0..count {
        let at = r.pos;
        let frame = r.u32()? as usize;
        if frame >= n_frames {
            return Err(Error::Format {
                offset: at as u64,
                msg: format!("{what}: feature for frame {frame} beyond {n_frames} frames"),
            });
        }
        let raw = r.take(4 * FEATURE_DIM)?;
        let v: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        out[frame] = Some(v);
    }
    Ok(out)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `manifest.json`, `frames/<id>.kfgv` and `features/<id>.kfgf` under `dir`.
pub fn write_dataset(dir: &Path, videos: &[VideoSample]) -> Result<PathBuf> {
    let mut manifest = Manifest::default();
    for v in videos {
        v.validate()?;
        let frames_file = format!("frames/{}.kfgv", v.id);
        write(&dir.join(&frames_file), &encode_frames(&v.frames)?)?;
        let features_file = if v.features.iter().any(Option::is_some) {
            let name = format!("features/{}.kfgf", v.id);
            write(&dir.join(&name), &encode_features(&v.features))?;
            Some(name)
        } else {
            None
        };
        manifest.videos.push(ManifestEntry {
            id: v.id.clone(),
            frames_file,
            width: v.width(),
            height: v.height(),
            n_frames: v.n_frames(),
            key_frame_index: v.key_frame_index,
            label: v.label as u8,
            rois: v
                .rois
                .iter()
                .enumerate()
                .filter_map(|(i, r)| r.map(|r| [i as u32, r.x1, r.y1, r.x2, r.y2]))
                .collect(),
            features_file,
        });
    }
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write(&path, text.as_bytes())?;
    Ok(path)
}

fn load_entry(base: &Path, e: &ManifestEntry) -> Result<VideoSample> {
    let ctx = |msg: String| Error::Data(format!("video {}: {msg}", e.id));
    if e.key_frame_index >= e.n_frames {
        return Err(ctx(format!(
            "key_frame_index {} out of range for {} frames",
            e.key_frame_index, e.n_frames
        )));
    }
    let frames_path = base.join(&e.frames_file);
    let frames = decode_frames(&read(&frames_path)?, &frames_path.display().to_string())?;
    if frames.len() != e.n_frames {
        return Err(ctx(format!(
            "container holds {} frames, manifest says {}",
            frames.len(),
            e.n_frames
        )));
    }
    if let Some(f) = frames.first() {
        if f.width != e.width || f.height != e.height {
            return Err(ctx(format!(
                "container frames are {}x{}, manifest says {}x{}",
                f.width, f.height, e.width, e.height
            )));
        }
    }
    let mut rois = vec![None; e.n_frames];
    for &[frame, x1, y1, x2, y2] in &e.rois {
        let frame = frame as usize;
        if frame >= e.n_frames {
            return Err(ctx(format!(
                "roi for frame {frame} beyond {} frames",
                e.n_frames
            )));
        }
        let roi = Roi::new(x1, y1, x2, y2);
        roi.validate(e.width, e.height)
            .map_err(|_| ctx(format!("frame {frame}: roi {roi:?} out of bounds")))?;
        rois[frame] = Some(roi);
    }
    let features = match &e.features_file {
        Some(name) => {
            let p = base.join(name);
            decode_features(&read(&p)?, e.n_frames, &p.display().to_string())?
        }
        None => vec![None; e.n_frames],
    };
    let sample = VideoSample {
        id: e.id.clone(),
        frames,
        rois,
        features,
        key_frame_index: e.key_frame_index,
        label: Label::from_index(e.label).map_err(|err| ctx(err.to_string()))?,
    };
    sample.validate()?;
    Ok(sample)
}

/// Loads and validates every video listed in the manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<VideoSample>> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    manifest
        .videos
        .iter()
        .map(|e| load_entry(base, e))
        .collect()
}

/// Hex SHA-256 over the manifest and every container it references, in manifest order.
pub fn dataset_digest(dir: &Path) -> Result<String> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = read(&manifest_path)?;
    let manifest: Manifest = serde_json::from_slice(&text)?;
    let mut h = Sha256::new();
    h.update(&text);
    for e in &manifest.videos {
        h.update(read(&dir.join(&e.frames_file))?);
        if let Some(f) = &e.features_file {
            h.update(read(&dir.join(f))?);
        }
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_container_header_layout() {
        let f = GrayFrame::new(3, 2, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let bytes = encode_frames(&[f.clone(), f]).unwrap();
        assert_eq!(&bytes[..4], b"KFGV");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 3);
        assert_eq!(u16::from_le_bytes([bytes[8], bytes[9]]), 2);
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 14 + 12);
    }

    #[test]
    fn truncated_container_names_offset() {
        let f = GrayFrame::new(3, 2, vec![0; 6]).unwrap();
        let bytes = encode_frames(&[f]).unwrap();
        let err = decode_frames(&bytes[..17], "x").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 14, .. }), "{err}");
    }

    #[test]
    fn feature_round_trip() {
        let mut feats = vec![None; 3];
        feats[1] = Some((0..FEATURE_DIM).map(|i| i as f32 as f64 * 0.5).collect());
        let bytes = encode_features(&feats);
        assert_eq!(decode_features(&bytes, 3, "f").unwrap(), feats);
        assert!(decode_features(&bytes, 1, "f").is_err());
    }
}
