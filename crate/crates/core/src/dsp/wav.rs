//! 16-bit PCM WAV reading and writing.

use std::path::Path;

use super::AudioClip;
use crate::error::{Error, Result};

const PCM: u16 = 1;
const EXTENSIBLE: u16 = 0xfffe;

pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode_wav(&bytes)
}

pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_wav(clip))?;
    Ok(())
}

fn u16_at(b: &[u8], off: usize) -> Result<u16> {
    b.get(off..off + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| Error::format(off as u64, "unexpected end of file"))
}

fn u32_at(b: &[u8], off: usize) -> Result<u32> {
    b.get(off..off + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| Error::format(off as u64, "unexpected end of file"))
}

struct Format {
    channels: u16,
    sample_rate: u32,
}

/// Parses a RIFF/WAVE byte stream holding 16-bit PCM. Multi-channel audio
/// is downmixed to the channel mean; samples are scaled by 1/32768.
pub fn decode_wav(b: &[u8]) -> Result<AudioClip> {
    if b.get(0..4) != Some(b"RIFF") {
        return Err(Error::format(0, "missing RIFF tag"));
    }
    if b.get(8..12) != Some(b"WAVE") {
        return Err(Error::format(8, "missing WAVE tag"));
    }
    let mut off = 12;
    let mut fmt: Option<Format> = None;
    while off + 8 <= b.len() {
        let id = &b[off..off + 4];
        let size = u32_at(b, off + 4)? as usize;
        let body = off + 8;
        if id == b"fmt " {
            if size < 16 {
                return Err(Error::format(off as u64 + 4, "fmt chunk shorter than 16 bytes"));
            }
            let mut tag = u16_at(b, body)?;
            if tag == EXTENSIBLE && size >= 26 {
                tag = u16_at(b, body + 24)?;
            }
            if tag != PCM {
                return Err(Error::format(body as u64, format!("unsupported codec tag {tag:#06x}")));
            }
            let channels = u16_at(b, body + 2)?;
            let sample_rate = u32_at(b, body + 4)?;
            let bits = u16_at(b, body + 14)?;
            if bits != 16 {
                return Err(Error::format(
                    body as u64 + 14,
                    format!("unsupported bit depth {bits}"),
                ));
            }
            if channels == 0 || sample_rate == 0 {
                return Err(Error::format(body as u64 + 2, "zero channels or sample rate"));
            }
            fmt = Some(Format {
                channels,
                sample_rate,
            });
        } else if id == b"data" {
            let Some(f) = &fmt else {
                return Err(Error::format(off as u64, "data chunk before fmt chunk"));
            };
            let end = body.checked_add(size).filter(|&e| e <= b.len()).ok_or_else(|| {
                Error::format(off as u64 + 4, "data chunk runs past end of file")
            })?;
            let ch = f.channels as usize;
            let frames = size / (2 * ch);
            if frames == 0 {
                return Err(Error::format(off as u64 + 4, "empty data chunk"));
            }
            let data = &b[body..end];
            let samples = (0..frames)
                .map(|i| {
                    let sum: f32 = (0..ch)
                        .map(|c| {
                            let j = 2 * (i * ch + c);
                            i16::from_le_bytes([data[j], data[j + 1]]) as f32 / 32768.0
                        })
                        .sum();
                    sum / ch as f32
                })
                .collect();
            return Ok(AudioClip::new(samples, f.sample_rate));
        }
        off = body + size + (size & 1);
    }
    Err(Error::format(off as u64, "no data chunk"))
}

/// Mono 16-bit PCM encoding; samples are rounded after scaling by 32768
/// and saturated to the i16 range.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}
