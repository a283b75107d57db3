//! Minimal RIFF/AVI demuxer for MJPEG and uncompressed DIB video streams.

use image::{DynamicImage, GrayImage, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Codec {
    Mjpeg,
    Dib { bit_count: u16 },
}

#[derive(Debug)]
pub(crate) struct AviVideo {
    pub fps: f64,
    pub frames: Vec<DynamicImage>,
}

struct Stream {
    codec: Codec,
    width: u32,
    height: i32,
    palette: Vec<[u8; 3]>,
    fps: f64,
}

fn fourcc(b: &[u8]) -> [u8; 4] {
    [b[0], b[1], b[2], b[3]]
}

fn u16_at(b: &[u8], off: usize) -> Result<u16, String> {
    b.get(off..off + 2).map(|s| u16::from_le_bytes([s[0], s[1]])).ok_or_else(|| "header truncated".to_string())
}

fn u32_at(b: &[u8], off: usize) -> Result<u32, String> {
    b.get(off..off + 4).map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]])).ok_or_else(|| "header truncated".to_string())
}

/// Iterates `(fourcc, payload)` chunks of a RIFF list body, failing on any
/// chunk that runs past the end of the buffer.
fn chunks(body: &[u8]) -> Result<Vec<([u8; 4], &[u8])>, String> {
    let mut out = Vec::new();
    let mut pos = 0usize;
    while pos + 8 <= body.len() {
        let id = fourcc(&body[pos..]);
        let size = u32_at(body, pos + 4)? as usize;
        let start = pos + 8;
        let end = start.checked_add(size).filter(|&e| e <= body.len()).ok_or_else(|| format!("chunk {} truncated", String::from_utf8_lossy(&id)))?;
        out.push((id, &body[start..end]));
        pos = end + (size & 1);
    }
    if body[pos.min(body.len())..].iter().any(|&b| b != 0) {
        return Err("trailing partial chunk".into());
    }
    Ok(out)
}

pub(crate) fn decode_avi(bytes: &[u8]) -> Result<AviVideo, String> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"AVI " {
        return Err("not a RIFF/AVI file".into());
    }
    let mut stream: Option<Stream> = None;
    let mut avih_fps = None;
    let mut frames = Vec::new();

    // The first RIFF holds the header; OpenDML files append AVIX RIFFs.
    for (id, riff) in chunks(bytes)? {
        if &id != b"RIFF" || riff.len() < 4 {
            continue;
        }
        for (cid, body) in chunks(&riff[4..])? {
            if &cid != b"LIST" || body.len() < 4 {
                continue;
            }
            match &body[0..4] {
                b"hdrl" => {
                    for (hid, hbody) in chunks(&body[4..])? {
                        if &hid == b"avih" {
                            let usec = u32_at(hbody, 0)?;
                            if usec > 0 {
                                avih_fps = Some(1e6 / usec as f64);
                            }
                        } else if &hid == b"LIST" && hbody.len() >= 4 && &hbody[0..4] == b"strl" && stream.is_none() {
                            stream = parse_strl(&hbody[4..])?;
                        }
                    }
                }
                b"movi" => {
                    let s = stream.as_ref().ok_or("movi before stream header")?;
                    collect_frames(&body[4..], s, &mut frames)?;
                }
                _ => {}
            }
        }
    }
    let s = stream.ok_or("no video stream")?;
    let fps = if s.fps > 0.0 { s.fps } else { avih_fps.unwrap_or(25.0) };
    Ok(AviVideo { fps, frames })
}

fn parse_strl(body: &[u8]) -> Result<Option<Stream>, String> {
    let mut fps = 0.0;
    let mut is_video = false;
    let mut result = None;
    for (id, b) in chunks(body)? {
        match &id {
            b"strh" => {
                is_video = b.get(0..4) == Some(b"vids");
                let scale = u32_at(b, 20)?;
                let rate = u32_at(b, 24)?;
                if scale > 0 {
                    fps = rate as f64 / scale as f64;
                }
            }
            b"strf" if is_video => {
                let header_size = u32_at(b, 0)? as usize;
                let width = u32_at(b, 4)?;
                let height = u32_at(b, 8)? as i32;
                let bit_count = u16_at(b, 14)?;
                let compression = fourcc(b.get(16..20).ok_or("strf truncated")?);
                let codec = match &compression {
                    b"MJPG" | b"mjpg" | b"AVRn" | b"JPEG" => Codec::Mjpeg,
                    [0, 0, 0, 0] | b"DIB " => Codec::Dib { bit_count },
                    other => return Err(format!("unsupported codec {}", String::from_utf8_lossy(other))),
                };
                let mut palette = Vec::new();
                if let Codec::Dib { bit_count: 8 } = codec {
                    let pal = b.get(header_size..).unwrap_or(&[]);
                    palette = pal.chunks_exact(4).take(256).map(|q| [q[2], q[1], q[0]]).collect();
                    if palette.is_empty() {
                        palette = (0..=255u8).map(|v| [v, v, v]).collect();
                    }
                }
                result = Some(Stream { codec, width, height, palette, fps: 0.0 });
            }
            _ => {}
        }
    }
    Ok(result.map(|mut s| {
        s.fps = fps;
        s
    }))
}

fn collect_frames(movi: &[u8], stream: &Stream, out: &mut Vec<DynamicImage>) -> Result<(), String> {
    for (id, body) in chunks(movi)? {
        if &id == b"LIST" {
            if body.len() >= 4 && &body[0..4] == b"rec " {
                collect_frames(&body[4..], stream, out)?;
            }
            continue;
        }
        // Stream 00 video chunks: "00dc" (compressed) or "00db" (uncompressed).
        if &id[0..2] != b"00" || !(&id[2..4] == b"dc" || &id[2..4] == b"db") || body.is_empty() {
            continue;
        }
        out.push(decode_frame(body, stream)?);
    }
    Ok(())
}

fn decode_frame(data: &[u8], stream: &Stream) -> Result<DynamicImage, String> {
    match stream.codec {
        Codec::Mjpeg => image::load_from_memory_with_format(data, image::ImageFormat::Jpeg).map_err(|e| format!("jpeg frame: {e}")),
        Codec::Dib { bit_count } => {
            let w = stream.width as usize;
            let h = stream.height.unsigned_abs() as usize;
            let bottom_up = stream.height > 0;
            let bpp = bit_count as usize / 8;
            if bpp != 1 && bpp != 3 {
                return Err(format!("unsupported DIB bit depth {bit_count}"));
            }
            let stride = (w * bpp).div_ceil(4) * 4;
            if data.len() < stride * h {
                return Err("DIB frame truncated".into());
            }
            let row_of = |y: usize| if bottom_up { h - 1 - y } else { y };
            if bpp == 1 && stream.palette.iter().all(|p| p[0] == p[1] && p[1] == p[2]) {
                let mut img = GrayImage::new(w as u32, h as u32);
                for y in 0..h {
                    let row = &data[row_of(y) * stride..];
                    for x in 0..w {
                        let v = stream.palette.get(row[x] as usize).map(|p| p[0]).unwrap_or(row[x]);
                        img.put_pixel(x as u32, y as u32, image::Luma([v]));
                    }
                }
                return Ok(DynamicImage::ImageLuma8(img));
            }
            let mut img = RgbImage::new(w as u32, h as u32);
            for y in 0..h {
                let row = &data[row_of(y) * stride..];
                for x in 0..w {
                    let px = if bpp == 1 {
                        stream.palette.get(row[x] as usize).copied().unwrap_or([row[x]; 3])
                    } else {
                        [row[3 * x + 2], row[3 * x + 1], row[3 * x]]
                    };
                    img.put_pixel(x as u32, y as u32, image::Rgb(px));
                }
            }
            Ok(DynamicImage::ImageRgb8(img))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_riff() {
        assert!(decode_avi(b"hello world, not a video").is_err());
    }

    #[test]
    fn rejects_overlong_chunk() {
        let mut b = b"RIFF".to_vec();
        b.extend_from_slice(&1000u32.to_le_bytes());
        b.extend_from_slice(b"AVI ");
        assert!(decode_avi(&b).is_err());
    }
}
