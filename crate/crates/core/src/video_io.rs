//! Frame-sequence ingest, resize/crop preprocessing and PNG export.
//!
//! Only still-image sequences are read (8-bit PNG and binary PPM). Container
//! formats are expected to be unpacked upstream, e.g. with
//! `ffmpeg -i clip.mp4 frames/f%04d.png`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{shape_str, Tensor};

/// Frames per second as a rational `num / den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameRate {
    pub num: u32,
    pub den: u32,
}

/// A decoded frame sequence. Every frame is `3 x H x W` with values in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct VideoClip {
    frames: Vec<Tensor<f32>>,
    pub fps: Option<FrameRate>,
    pub source: String,
}

impl VideoClip {
    pub fn new(frames: Vec<Tensor<f32>>, fps: Option<FrameRate>, source: impl Into<String>) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::Size("a clip needs at least one frame".into()))?;
        let (c, _, _) = first.dims3()?;
        if c != 3 {
            return Err(Error::shape("3 channels", shape_str(first.shape())));
        }
        for (k, f) in frames.iter().enumerate() {
            if f.shape() != first.shape() {
                return Err(Error::shape(shape_str(first.shape()), format!("frame {k} has {}", shape_str(f.shape()))));
            }
            if f.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Numeric(format!("frame {k} has values outside [0, 1]")));
            }
        }
        Ok(Self { frames, fps, source: source.into() })
    }

    pub fn frames(&self) -> &[Tensor<f32>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(H, W)` shared by all frames.
    pub fn dims(&self) -> (usize, usize) {
        let s = self.frames[0].shape();
        (s[1], s[2])
    }
}

fn rgb_to_tensor(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let mut data = vec![0.0f32; 3 * h * w];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px[c] as f32 / 255.0;
        }
    }
    Tensor::from_parts(vec![3, h, w], data)
}

/// Decodes one PNG or PPM file into a `3 x H x W` frame.
pub fn load_frame(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format { path: path.to_path_buf(), reason: other.to_string() },
    })?;
    Ok(rgb_to_tensor(&img.to_rgb8()))
}

/// Loads every file in `dir` whose name matches the glob `pattern`, in
/// lexicographic filename order.
pub fn load_image_sequence(dir: &Path, pattern: &str) -> Result<VideoClip> {
    let matcher =
        glob::Pattern::new(pattern).map_err(|e| Error::Config(format!("bad file pattern `{pattern}`: {e}")))?;
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if entry.path().is_file() && matcher.matches(&name) {
            paths.push(entry.path());
        }
    }
    if paths.is_empty() {
        return Err(Error::EmptyInput { dir: dir.to_path_buf(), pattern: pattern.to_string() });
    }
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    let mut frames = Vec::with_capacity(paths.len());
    for p in &paths {
        let f = load_frame(p)?;
        if let Some(first) = frames.first() {
            let first: &Tensor<f32> = first;
            if first.shape() != f.shape() {
                return Err(Error::shape(
                    shape_str(first.shape()),
                    format!("{} has {}", p.display(), shape_str(f.shape())),
                ));
            }
        }
        frames.push(f);
    }
    VideoClip::new(frames, None, dir.display().to_string())
}

/// Target `(H, W)` with the short side set to `short_side` and the long side
/// rounded half-up.
pub fn resized_dims(h: usize, w: usize, short_side: usize) -> (usize, usize) {
    let scale = |long: usize, short: usize| (2 * long * short_side + short) / (2 * short);
    if h <= w {
        (short_side, scale(w, h).max(1))
    } else {
        (scale(h, w).max(1), short_side)
    }
}

/// Bilinear resample of one CHW frame with half-pixel centers.
pub fn resize_frame(frame: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = frame.dims3()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Size("resize target must be at least 1x1".into()));
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, (src - lo as f64) as f32)
            })
            .collect()
    };
    let ys = axis(out_h, h);
    let xs = axis(out_w, w);
    let src = frame.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let p = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = p[y0 * w + x0] + fx * (p[y0 * w + x1] - p[y0 * w + x0]);
                let bot = p[y1 * w + x0] + fx * (p[y1 * w + x1] - p[y1 * w + x0]);
                out.push((top + fy * (bot - top)).clamp(0.0, 1.0));
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, out_h, out_w], out))
}

/// Resizes every frame so that `min(H, W) == short_side`, preserving aspect.
pub fn resize_bilinear(clip: &VideoClip, short_side: usize) -> Result<VideoClip> {
    if short_side == 0 {
        return Err(Error::Size("short side must be at least 1".into()));
    }
    let (h, w) = clip.dims();
    let (oh, ow) = resized_dims(h, w, short_side);
    let frames = clip.frames().iter().map(|f| resize_frame(f, oh, ow)).collect::<Result<_>>()?;
    Ok(VideoClip { frames, fps: clip.fps, source: clip.source.clone() })
}

/// Top-left offsets `(y, x)` of a centered `size x size` window.
pub fn crop_offsets(h: usize, w: usize, size: usize) -> Result<(usize, usize)> {
    if size == 0 || size > h.min(w) {
        return Err(Error::Crop { size, height: h, width: w });
    }
    Ok(((h - size) / 2, (w - size) / 2))
}

pub fn crop_frame(frame: &Tensor<f32>, top: usize, left: usize, size: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = frame.dims3()?;
    if top + size > h || left + size > w {
        return Err(Error::Crop { size, height: h, width: w });
    }
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        let p = frame.channel(ch);
        for y in top..top + size {
            out.extend_from_slice(&p[y * w + left..y * w + left + size]);
        }
    }
    Ok(Tensor::from_parts(vec![c, size, size], out))
}

/// Cuts the centered `size x size` window out of every frame.
pub fn center_crop(clip: &VideoClip, size: usize) -> Result<VideoClip> {
    let (h, w) = clip.dims();
    let (top, left) = crop_offsets(h, w, size)?;
    let frames = clip.frames().iter().map(|f| crop_frame(f, top, left, size)).collect::<Result<_>>()?;
    Ok(VideoClip { frames, fps: clip.fps, source: clip.source.clone() })
}

/// 8-bit heatmap of a CHW (or HW) tensor: mean absolute value over channels,
/// then min-max stretched to `[0, 255]`. A flat map becomes all zeros.
pub fn heatmap_pixels(t: &Tensor<f32>) -> Result<(usize, usize, Vec<u8>)> {
    let (c, h, w) = match t.shape()[..] {
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        _ => return Err(Error::shape("rank 2 or 3", shape_str(t.shape()))),
    };
    let plane = h * w;
    let mut mag = vec![0.0f64; plane];
    for ch in 0..c {
        for (m, v) in mag.iter_mut().zip(&t.data()[ch * plane..(ch + 1) * plane]) {
            *m += (*v as f64).abs();
        }
    }
    mag.iter_mut().for_each(|m| *m /= c as f64);
    let lo = mag.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pixels = if hi > lo {
        mag.iter().map(|m| ((m - lo) / (hi - lo) * 255.0).round() as u8).collect()
    } else {
        vec![0u8; plane]
    };
    Ok((h, w, pixels))
}

pub fn export_heatmap_png(t: &Tensor<f32>, path: &Path) -> Result<()> {
    let (h, w, pixels) = heatmap_pixels(t)?;
    let img = GrayImage::from_raw(w as u32, h as u32, pixels).expect("buffer sized to image");
    save(img.save_with_format(path, ImageFormat::Png), path)
}

/// Writes a `3 x H x W` frame in `[0, 1]` as an 8-bit RGB PNG.
pub fn export_rgb_png(frame: &Tensor<f32>, path: &Path) -> Result<()> {
    let (c, h, w) = frame.dims3()?;
    if c != 3 {
        return Err(Error::shape("3 channels", shape_str(frame.shape())));
    }
    let mut raw = Vec::with_capacity(3 * h * w);
    for i in 0..h * w {
        for ch in 0..3 {
            raw.push((frame.data()[ch * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let img = RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer sized to image");
    save(img.save_with_format(path, ImageFormat::Png), path)
}

fn save(r: image::ImageResult<()>, path: &Path) -> Result<()> {
    r.map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    })
}
