//! Images, dense feature maps, bilinear resampling and multi-scale pyramids.
//!
//! All pixel data is stored row-major and channel-interleaved: the value of
//! channel `c` at `(x, y)` lives at `(y * width + x) * channels + c`. Feature
//! maps use the same layout with `depth` in place of `channels`, so a
//! grayscale image and a depth-1 feature map share a buffer layout.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};

/// ITU-R 601 luma weights.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// A grayscale or RGB image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: data.len(),
            });
        }
        if let Some(v) = data
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::invalid(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// A single-channel image filled with `value`.
    pub fn constant(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, 1, vec![value; width * height])
    }

    /// Builds a grayscale image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, 1, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Extracts one channel as a grayscale image.
    pub fn channel(&self, c: usize) -> Result<Image> {
        if c >= self.channels {
            return Err(Error::invalid(format!(
                "channel {c} out of range for {}-channel image",
                self.channels
            )));
        }
        let data = self
            .data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect();
        Ok(Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        })
    }

    /// Luma conversion; grayscale input is returned unchanged.
    pub fn to_grayscale(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| {
                let v = LUMA[0] * px[0] as f64 + LUMA[1] * px[1] as f64 + LUMA[2] * px[2] as f64;
                v.clamp(0.0, 1.0) as f32
            })
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Bilinear resampling with half-pixel-centred coordinates and clamped borders.
    pub fn resize(&self, new_width: usize, new_height: usize) -> Result<Image> {
        if new_width == 0 || new_height == 0 {
            return Err(Error::invalid(format!(
                "resize target must be positive, got {new_width}x{new_height}"
            )));
        }
        if new_width == self.width && new_height == self.height {
            return Ok(self.clone());
        }
        let data = resample_bilinear(
            &self.data,
            self.width,
            self.height,
            self.channels,
            new_width,
            new_height,
        );
        Ok(Image {
            width: new_width,
            height: new_height,
            channels: self.channels,
            data: data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        })
    }

    /// Aspect-preserving resize to the given height.
    pub fn resize_to_height(&self, height: usize) -> Result<Image> {
        if height == 0 {
            return Err(Error::invalid("target height must be positive"));
        }
        let width = scaled_dim(self.width, height as f64 / self.height as f64);
        self.resize(width, height)
    }

    /// Crops a `w`x`h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::TooSmall(format!(
                "crop {w}x{h}+{x0}+{y0} does not fit a {}x{} image",
                self.width, self.height
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(w * h * c);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Ok(Image {
            width: w,
            height: h,
            channels: c,
            data,
        })
    }

    /// Crop of the given size centred in the image.
    pub fn crop_center(&self, w: usize, h: usize) -> Result<Image> {
        if w > self.width || h > self.height {
            return Err(Error::TooSmall(format!(
                "central {w}x{h} crop requested from a {}x{} image",
                self.width, self.height
            )));
        }
        self.crop((self.width - w) / 2, (self.height - h) / 2, w, h)
    }

    pub fn flip_horizontal(&self) -> Image {
        let c = self.channels;
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.width * c) {
            for px in row.chunks_exact(c).rev() {
                data.extend_from_slice(px);
            }
        }
        Image {
            width: self.width,
            height: self.height,
            channels: c,
            data,
        }
    }

    /// In-plane rotation about the image centre by `degrees`
    /// (counter-clockwise as displayed). Bilinear sampling; source
    /// coordinates outside the image are clamped to the nearest edge pixel.
    pub fn rotate(&self, degrees: f64) -> Image {
        if degrees == 0.0 {
            return self.clone();
        }
        let (w, h, c) = (self.width, self.height, self.channels);
        let (sin, cos) = degrees.to_radians().sin_cos();
        let cx = (w as f64 - 1.0) / 2.0;
        let cy = (h as f64 - 1.0) / 2.0;
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let sx = cos * dx - sin * dy + cx;
                let sy = sin * dx + cos * dy + cy;
                for ch in 0..c {
                    data.push(self.sample_clamped(sx, sy, ch).clamp(0.0, 1.0));
                }
            }
        }
        Image {
            width: w,
            height: h,
            channels: c,
            data,
        }
    }

    fn sample_clamped(&self, sx: f64, sy: f64, ch: usize) -> f32 {
        sample_bilinear(
            &self.data,
            self.width,
            self.height,
            self.channels,
            sx,
            sy,
            ch,
        ) as f32
    }

    /// Loads a PNG or binary PNM file. 8-bit samples map to `v / 255`,
    /// 16-bit samples to `v / 65535`.
    pub fn load(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let dynamic = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(from_dynamic(dynamic))
    }

    /// Writes an 8-bit PGM (grayscale) rendering, for debugging.
    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let gray = self.to_grayscale();
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(
            gray.width as u32,
            gray.height as u32,
            gray.data.iter().map(|v| quantize_u8(*v)).collect(),
        )
        .expect("buffer length matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Pnm)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }

    /// Writes a 16-bit PNG, preserving channel count.
    pub fn save_png16(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let samples: Vec<u16> = self.data.iter().map(|v| quantize_u16(*v)).collect();
        let (w, h) = (self.width as u32, self.height as u32);
        let result = if self.channels == 1 {
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, samples)
                .expect("buffer length matches dimensions")
                .save_with_format(path, image::ImageFormat::Png)
        } else {
            ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, samples)
                .expect("buffer length matches dimensions")
                .save_with_format(path, image::ImageFormat::Png)
        };
        result.map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn quantize_u16(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn from_dynamic(dynamic: DynamicImage) -> Image {
    let (width, height) = (dynamic.width() as usize, dynamic.height() as usize);
    let gray = matches!(
        dynamic,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
    );
    let sixteen = matches!(
        dynamic,
        DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
            | DynamicImage::ImageRgb16(_)
            | DynamicImage::ImageRgba16(_)
    );
    let data: Vec<f32> = match (gray, sixteen) {
        (true, false) => dynamic
            .to_luma8()
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / 255.0)
            .collect(),
        (true, true) => dynamic
            .to_luma16()
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / 65535.0)
            .collect(),
        (false, false) => dynamic
            .to_rgb8()
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / 255.0)
            .collect(),
        (false, true) => dynamic
            .to_rgb16()
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / 65535.0)
            .collect(),
    };
    Image {
        width,
        height,
        channels: if gray { 1 } else { 3 },
        data,
    }
}

/// `round(dim * ratio)` with halves rounded away from zero, at least 1.
pub fn scaled_dim(dim: usize, ratio: f64) -> usize {
    ((dim as f64 * ratio).round() as usize).max(1)
}

fn sample_bilinear(
    data: &[f32],
    w: usize,
    h: usize,
    c: usize,
    sx: f64,
    sy: f64,
    ch: usize,
) -> f64 {
    let sx = sx.clamp(0.0, (w - 1) as f64);
    let sy = sy.clamp(0.0, (h - 1) as f64);
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let at = |x: usize, y: usize| data[(y * w + x) * c + ch] as f64;
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

fn resample_bilinear(
    data: &[f32],
    w: usize,
    h: usize,
    c: usize,
    new_w: usize,
    new_h: usize,
) -> Vec<f32> {
    let sx_scale = w as f64 / new_w as f64;
    let sy_scale = h as f64 / new_h as f64;
    let mut out = Vec::with_capacity(new_w * new_h * c);
    for y in 0..new_h {
        let sy = (y as f64 + 0.5) * sy_scale - 0.5;
        for x in 0..new_w {
            let sx = (x as f64 + 0.5) * sx_scale - 0.5;
            for ch in 0..c {
                out.push(sample_bilinear(data, w, h, c, sx, sy, ch) as f32);
            }
        }
    }
    out
}

/// Separable Gaussian blur of a single plane with clamped borders.
pub fn blur_plane(data: &[f32], width: usize, height: usize, sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    let mut tmp = vec![0f32; data.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, weight) in kernel.iter().enumerate() {
                let sx = clamp(x as isize + k as isize - radius, width);
                acc += weight * data[y * width + sx] as f64;
            }
            tmp[y * width + x] = (acc / norm) as f32;
        }
    }
    let mut out = vec![0f32; data.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, weight) in kernel.iter().enumerate() {
                let sy = clamp(y as isize + k as isize - radius, height);
                acc += weight * tmp[sy * width + x] as f64;
            }
            out[y * width + x] = (acc / norm) as f32;
        }
    }
    out
}

/// A dense `height x width x depth` array of finite reals.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    depth: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, depth: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || depth == 0 {
            return Err(Error::invalid(format!(
                "feature map dimensions must be positive, got {height}x{width}x{depth}"
            )));
        }
        let expected = height * width * depth;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature map contains non-finite values"));
        }
        Ok(Self {
            height,
            width,
            depth,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, depth: usize) -> Self {
        Self {
            height,
            width,
            depth,
            data: vec![0.0; height * width * depth],
        }
    }

    /// Same buffer, channels become depth.
    pub fn from_image(img: &Image) -> Self {
        Self {
            height: img.height,
            width: img.width,
            depth: img.channels,
            data: img.data.clone(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.depth)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, z: usize) -> f32 {
        self.data[(y * self.width + x) * self.depth + z]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, z: usize, v: f32) {
        self.data[(y * self.width + x) * self.depth + z] = v;
    }

    /// Top-left crop to `h x w`, keeping all channels.
    pub fn crop(&self, h: usize, w: usize) -> Result<FeatureMap> {
        if h == 0 || w == 0 || h > self.height || w > self.width {
            return Err(Error::TooSmall(format!(
                "cannot crop {}x{} map to {h}x{w}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(h * w * self.depth);
        for y in 0..h {
            let start = y * self.width * self.depth;
            data.extend_from_slice(&self.data[start..start + w * self.depth]);
        }
        Ok(FeatureMap {
            height: h,
            width: w,
            depth: self.depth,
            data,
        })
    }

    /// Stacks maps of identical spatial size along the depth axis.
    pub fn concat_depth(maps: &[FeatureMap]) -> Result<FeatureMap> {
        let first = maps
            .first()
            .ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let (h, w) = (first.height, first.width);
        if let Some(m) = maps.iter().find(|m| m.height != h || m.width != w) {
            return Err(Error::invalid(format!(
                "cannot concatenate {}x{} map with {h}x{w}",
                m.height, m.width
            )));
        }
        let depth: usize = maps.iter().map(|m| m.depth).sum();
        let mut data = Vec::with_capacity(h * w * depth);
        for p in 0..h * w {
            for m in maps {
                data.extend_from_slice(&m.data[p * m.depth..(p + 1) * m.depth]);
            }
        }
        Ok(FeatureMap {
            height: h,
            width: w,
            depth,
            data,
        })
    }

    /// Window of size `h x w` at `(y0, x0)`, flattened in storage order.
    pub fn window(&self, y0: usize, x0: usize, h: usize, w: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(h * w * self.depth);
        let row_len = w * self.depth;
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * self.depth;
            out.extend_from_slice(&self.data[start..start + row_len]);
        }
        out
    }
}

/// One pyramid level: a resize ratio and the map at that scale.
#[derive(Clone, Debug, PartialEq)]
pub struct PyramidLevel<T> {
    pub ratio: f64,
    pub map: T,
}

/// A multi-scale stack ordered by strictly increasing ratio, ending at 1.0.
#[derive(Clone, Debug, PartialEq)]
pub struct Pyramid<T> {
    levels: Vec<PyramidLevel<T>>,
}

impl<T> Pyramid<T> {
    pub fn levels(&self) -> &[PyramidLevel<T>] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Applies `f` to every level, keeping ratios.
    pub fn map<U>(&self, f: impl Fn(&T) -> Result<U>) -> Result<Pyramid<U>> {
        let levels = self
            .levels
            .iter()
            .map(|l| {
                Ok(PyramidLevel {
                    ratio: l.ratio,
                    map: f(&l.map)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Pyramid { levels })
    }

    /// Builds a pyramid from already-computed levels.
    pub fn from_levels(levels: Vec<PyramidLevel<T>>) -> Result<Self> {
        validate_ratios(&levels.iter().map(|l| l.ratio).collect::<Vec<_>>())?;
        Ok(Self { levels })
    }
}

/// Ratios must be non-empty, each in (0, 1], strictly increasing.
pub fn validate_ratios(ratios: &[f64]) -> Result<()> {
    if ratios.is_empty() {
        return Err(Error::invalid("pyramid needs at least one ratio"));
    }
    for r in ratios {
        if !(r.is_finite() && *r > 0.0 && *r <= 1.0) {
            return Err(Error::invalid(format!("pyramid ratio {r} outside (0, 1]")));
        }
    }
    if ratios.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("pyramid ratios must be strictly increasing"));
    }
    Ok(())
}

/// Resizes `img` once per ratio. A ratio of exactly 1.0 reuses the input.
pub fn build_pyramid(img: &Image, ratios: &[f64]) -> Result<Pyramid<Image>> {
    validate_ratios(ratios)?;
    let levels = ratios
        .iter()
        .map(|&ratio| {
            let map = if ratio == 1.0 {
                img.clone()
            } else {
                img.resize(scaled_dim(img.width, ratio), scaled_dim(img.height, ratio))?
            };
            Ok(PyramidLevel { ratio, map })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Pyramid { levels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb(px: [f32; 3]) -> Image {
        Image::new(1, 1, 3, px.to_vec()).unwrap()
    }

    #[test]
    fn grayscale_weights() {
        assert!((rgb([1.0, 1.0, 1.0]).to_grayscale().data()[0] - 1.0).abs() < 1e-6);
        assert!((rgb([1.0, 0.0, 0.0]).to_grayscale().data()[0] - 0.299).abs() < 1e-6);
        let gray = Image::from_fn(3, 2, |x, y| (x + y) as f32 / 4.0).unwrap();
        assert_eq!(gray.to_grayscale(), gray);
    }

    #[test]
    fn new_rejects_bad_pixels() {
        assert!(Image::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Image::new(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(Image::new(2, 1, 1, vec![0.0]).is_err());
        assert!(Image::new(1, 1, 2, vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = Image::from_fn(5, 4, |x, y| ((x * 7 + y * 3) % 10) as f32 / 10.0).unwrap();
        assert_eq!(img.resize(5, 4).unwrap(), img);
        let c = Image::constant(7, 5, 0.37).unwrap();
        for (w, h) in [(3, 2), (14, 10), (1, 1), (9, 13)] {
            let r = c.resize(w, h).unwrap();
            assert!(r.data().iter().all(|v| (v - 0.37).abs() < 1e-6));
        }
    }

    #[test]
    fn resize_two_pixels_to_four() {
        // Half-pixel mapping puts the targets at -0.25, 0.25, 0.75, 1.25.
        let img = Image::new(2, 1, 1, vec![0.0, 1.0]).unwrap();
        let r = img.resize(4, 1).unwrap();
        assert_eq!(r.data(), &[0.0, 0.25, 0.75, 1.0]);
        assert!(r.data().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn resize_rejects_zero() {
        let img = Image::constant(4, 4, 0.5).unwrap();
        assert!(img.resize(0, 3).is_err());
        assert!(img.resize(3, 0).is_err());
        assert!(img.resize_to_height(0).is_err());
    }

    #[test]
    fn resize_to_height_keeps_aspect() {
        let img = Image::constant(300, 200, 0.1).unwrap();
        let r = img.resize_to_height(400).unwrap();
        assert_eq!((r.width(), r.height()), (600, 400));
    }

    #[test]
    fn up_then_down_on_gradient() {
        let img = Image::from_fn(20, 12, |x, y| (x as f32 / 19.0) * 0.6 + (y as f32 / 11.0) * 0.4)
            .unwrap();
        let back = img.resize(40, 24).unwrap().resize(20, 12).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.05);
        }
    }

    #[test]
    fn pyramid_levels() {
        let img = Image::constant(400, 300, 0.5).unwrap();
        let p = build_pyramid(&img, &[0.5, 1.0]).unwrap();
        let dims: Vec<_> = p
            .levels()
            .iter()
            .map(|l| (l.map.width(), l.map.height()))
            .collect();
        assert_eq!(dims, vec![(200, 150), (400, 300)]);

        let single = build_pyramid(&img, &[1.0]).unwrap();
        assert_eq!(single.levels()[0].map, img);

        let frame = Image::constant(10, 231, 0.5).unwrap();
        let p = build_pyramid(&frame, &[0.8, 0.9, 1.0]).unwrap();
        let heights: Vec<_> = p.levels().iter().map(|l| l.map.height()).collect();
        assert_eq!(heights, vec![185, 208, 231]);
    }

    #[test]
    fn pyramid_rejects_bad_ratios() {
        let img = Image::constant(4, 4, 0.5).unwrap();
        assert!(build_pyramid(&img, &[]).is_err());
        assert!(build_pyramid(&img, &[0.5, 0.5]).is_err());
        assert!(build_pyramid(&img, &[0.9, 0.5]).is_err());
        assert!(build_pyramid(&img, &[0.0, 1.0]).is_err());
        assert!(build_pyramid(&img, &[1.2]).is_err());
    }

    #[test]
    fn rotate_zero_and_flip_twice() {
        let img = Image::from_fn(6, 5, |x, y| ((x * 3 + y * 5) % 7) as f32 / 7.0).unwrap();
        assert_eq!(img.rotate(0.0), img);
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
        assert_eq!(img.flip_horizontal().get(0, 0, 0), img.get(5, 0, 0));
    }

    #[test]
    fn rotate_quarter_turn_moves_pixels() {
        let mut data = vec![0.0; 9];
        data[1] = 1.0; // top middle
        let img = Image::new(3, 3, 1, data).unwrap();
        let r = img.rotate(90.0);
        // Counter-clockwise: the top-middle pixel moves to the left-middle.
        assert!((r.get(0, 1, 0) - 1.0).abs() < 1e-6);
        assert!(r.get(1, 0, 0).abs() < 1e-6);
    }

    #[test]
    fn crops() {
        let img = Image::from_fn(6, 4, |x, y| (x + 6 * y) as f32 / 24.0).unwrap();
        let c = img.crop_center(2, 2).unwrap();
        assert_eq!(c.get(0, 0, 0), img.get(2, 1, 0));
        assert!(img.crop_center(7, 2).is_err());
        assert!(img.crop(5, 0, 2, 1).is_err());
    }

    #[test]
    fn png_and_pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(5, 3, |x, y| (x * 3 + y) as f32 / 15.0).unwrap();
        let png = dir.path().join("a.png");
        img.save_png16(&png).unwrap();
        let back = Image::load(&png).unwrap();
        assert_eq!(back.channels(), 1);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-4);
        }
        let pgm = dir.path().join("a.pgm");
        img.save_pgm(&pgm).unwrap();
        let back = Image::load(&pgm).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn binary_ppm_maps_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 51, 255]);
        std::fs::write(&path, bytes).unwrap();
        let img = Image::load(&path).unwrap();
        assert_eq!(img.channels(), 3);
        assert_eq!(img.data(), &[1.0, 0.0, 0.0, 0.0, 0.2, 1.0]);
    }

    #[test]
    fn feature_map_concat_and_window() {
        let a = FeatureMap::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = FeatureMap::new(2, 2, 2, (0..8).map(|v| v as f32).collect()).unwrap();
        let c = FeatureMap::concat_depth(&[a, b]).unwrap();
        assert_eq!(c.depth(), 3);
        assert_eq!(&c.data()[..6], &[1.0, 0.0, 1.0, 2.0, 2.0, 3.0]);
        assert_eq!(c.window(1, 1, 1, 1), vec![4.0, 6.0, 7.0]);
    }

    #[test]
    fn blur_preserves_constants() {
        let plane = vec![0.3f32; 30];
        let out = blur_plane(&plane, 6, 5, 1.5);
        assert!(out.iter().all(|v| (v - 0.3).abs() < 1e-6));
    }

    proptest::proptest! {
        #[test]
        fn resize_stays_in_range(
            w in 1usize..12, h in 1usize..12, nw in 1usize..20, nh in 1usize..20,
            seed in 0u64..1000,
        ) {
            let img = Image::from_fn(w, h, |x, y| {
                let v = (x as u64 * 31 + y as u64 * 17 + seed) % 101;
                v as f32 / 100.0
            }).unwrap();
            let r = img.resize(nw, nh).unwrap();
            proptest::prop_assert!(r.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
