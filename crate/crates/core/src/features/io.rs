//! Feature tensor file format.
//!
//! Layout: magic `SFT1`, little-endian u32 triple (bands, frames, channels),
//! u8 kind, u8 mode, then 32-bit float data in band-major, frame-next,
//! channel-last order.

use std::io::{Read, Write};
use std::path::Path;

use crate::audio::ChannelMode;

use super::{FeatureError, FeatureKind, FeatureMap};

const MAGIC: &[u8; 4] = b"SFT1";

pub fn write_feature_map(path: impl AsRef<Path>, map: &FeatureMap) -> Result<(), FeatureError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    for dim in [map.bands, map.frames, map.channels] {
        out.write_all(&(dim as u32).to_le_bytes())?;
    }
    out.write_all(&[match map.kind {
        FeatureKind::Mel => 0u8,
        FeatureKind::Cqt => 1,
    }])?;
    out.write_all(&[match map.mode {
        ChannelMode::M => 0u8,
        ChannelMode::Lrms => 1,
    }])?;
    for v in &map.data {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Read a feature map; `segment_id` is taken from the file stem.
pub fn read_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap, FeatureError> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 18 || &bytes[0..4] != MAGIC {
        return Err(FeatureError::BadFeatureFile(format!(
            "{}: missing SFT1 magic",
            path.display()
        )));
    }
    let dim = |at: usize| {
        u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]) as usize
    };
    let (bands, frames, channels) = (dim(4), dim(8), dim(12));
    let kind = match bytes[16] {
        0 => FeatureKind::Mel,
        1 => FeatureKind::Cqt,
        k => return Err(FeatureError::BadFeatureFile(format!("unknown kind byte {k}"))),
    };
    let mode = match bytes[17] {
        0 => ChannelMode::M,
        1 => ChannelMode::Lrms,
        m => return Err(FeatureError::BadFeatureFile(format!("unknown mode byte {m}"))),
    };
    let expected = bands * frames * channels;
    let payload = &bytes[18..];
    if payload.len() != expected * 4 {
        return Err(FeatureError::BadFeatureFile(format!(
            "{}: expected {} data bytes, found {}",
            path.display(),
            expected * 4,
            payload.len()
        )));
    }
    let mut data = Vec::with_capacity(expected);
    for chunk in payload.chunks_exact(4) {
        data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }
    let segment_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(FeatureMap { bands, frames, channels, kind, mode, segment_id, data })
}
