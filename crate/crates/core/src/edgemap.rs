//! Image edges and the geometry built on top of them.
//!
//! Covers grayscale image I/O, Canny edge detection, an exact
//! nearest-edge-pixel index, exact Euclidean distance transforms, and the
//! smooth edge cost surface that averages distance transforms over a set of
//! detector thresholds and image scales.
//!
//! Image coordinates: x grows right, y grows down, pixel (x, y) sits at
//! continuous position (x, y) (top-left pixel center is the origin).

use std::path::Path;

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::kdtree::KdTree2;

/// Grayscale image with intensities in [0, 1], row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("image dimensions must be positive".into()));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for a {width}x{height} image",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "intensities must lie in [0, 1]".into(),
            ));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        GrayImage::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    /// Loads a PGM (P5) or grayscale PNG image, normalizing to [0, 1].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .unwrap_or_default();
        match ext.as_str() {
            "pgm" => load_pgm(path),
            "png" => load_png(path),
            other => Err(Error::InvalidArgument(format!(
                "unsupported image extension `{other}` (expected pgm or png)"
            ))),
        }
    }

    /// Writes an 8-bit binary PGM.
    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        bytes.extend(
            self.data
                .iter()
                .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
        );
        std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

fn load_png(path: &Path) -> Result<GrayImage> {
    let name = path.display().to_string();
    let img = image::open(path)
        .map_err(|e| Error::parse(&name, "png", e.to_string()))?
        .to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0[0] as f64 / 65535.0).collect();
    GrayImage::new(w, h, data)
}

fn load_pgm(path: &Path) -> Result<GrayImage> {
    let name = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| Error::io(name.clone(), e))?;
    let mut pos = 0usize;

    let mut token = |field: &str| -> Result<String> {
        // Skip whitespace and `#` comments between header tokens.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(&name, field, "unexpected end of header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = token("magic")?;
    if magic != "P5" {
        return Err(Error::parse(&name, "magic", format!("expected P5, got {magic}")));
    }
    let width: usize = token("width")?
        .parse()
        .map_err(|_| Error::parse(&name, "width", "not an integer"))?;
    let height: usize = token("height")?
        .parse()
        .map_err(|_| Error::parse(&name, "height", "not an integer"))?;
    let maxval: u32 = token("maxval")?
        .parse()
        .map_err(|_| Error::parse(&name, "maxval", "not an integer"))?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::parse(&name, "maxval", format!("{maxval} out of range")));
    }
    pos += 1; // single whitespace byte after maxval

    let bytes_per = if maxval > 255 { 2 } else { 1 };
    let expected = width * height * bytes_per;
    let payload = bytes
        .get(pos..pos + expected)
        .ok_or_else(|| Error::parse(&name, "data", "truncated pixel data"))?;
    let maxval = maxval as f64;
    let data: Vec<f64> = if bytes_per == 1 {
        payload.iter().map(|&b| b as f64 / maxval).collect()
    } else {
        payload
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / maxval)
            .collect()
    };
    GrayImage::new(width, height, data)
}

/// Writes a 16-bit binary PGM (big-endian samples).
pub(crate) fn write_pgm16(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    samples: &[u16],
) -> Result<()> {
    let path = path.as_ref();
    debug_assert_eq!(samples.len(), width * height);
    let mut bytes = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for &s in samples {
        bytes.extend_from_slice(&s.to_be_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Edge pixels of an image plus an exact nearest-neighbor index.
#[derive(Debug, Clone)]
pub struct EdgeSet {
    width: usize,
    height: usize,
    /// Sorted row-major; unique.
    pixels: Vec<(u32, u32)>,
    tree: KdTree2,
}

impl EdgeSet {
    pub fn new(mut pixels: Vec<(u32, u32)>, width: usize, height: usize) -> Result<Self> {
        for &(x, y) in &pixels {
            if x as usize >= width || y as usize >= height {
                return Err(Error::InvalidArgument(format!(
                    "edge pixel ({x}, {y}) outside {width}x{height} image"
                )));
            }
        }
        pixels.sort_unstable_by_key(|&(x, y)| (y, x));
        pixels.dedup();
        let tree = KdTree2::new(pixels.iter().map(|&(x, y)| [x as f64, y as f64]).collect());
        Ok(EdgeSet {
            width,
            height,
            pixels,
            tree,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[(u32, u32)] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Nearest edge pixel to a continuous point and its Euclidean distance.
    /// Equals an exhaustive scan, with distance ties broken toward the
    /// row-major-first pixel.
    pub fn nearest(&self, p: Vector2<f64>) -> Result<((u32, u32), f64)> {
        let (index, dist) = self
            .tree
            .nearest([p.x, p.y])
            .ok_or_else(|| Error::NoEdges("nearest-edge query on empty edge set".into()))?;
        Ok((self.pixels[index], dist))
    }

    /// Exact Euclidean distance transform of this edge set.
    pub fn distance_transform(&self) -> DistanceField {
        distance_transform(self.width, self.height, &self.pixels)
    }

    /// Writes edges as a white-on-black PGM.
    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut img = GrayImage::constant(self.width, self.height, 0.0)?;
        for &(x, y) in &self.pixels {
            img.set(x as usize, y as usize, 1.0);
        }
        img.save_pgm(path)
    }
}

const SOBEL_MAX: f64 = 5.656854249492381; // 4 * sqrt(2), peak magnitude on [0,1] input

/// Separable Gaussian blur with replicated borders.
pub(crate) fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    for w in &mut kernel {
        *w /= sum;
    }

    let (w, h) = (img.width as i64, img.height as i64);
    let mut horiz = vec![0.0; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, &kw) in kernel.iter().enumerate() {
                let sx = (x + ki as i64 - radius).clamp(0, w - 1);
                acc += kw * img.data[(y * w + sx) as usize];
            }
            horiz[(y * w + x) as usize] = acc;
        }
    }
    let mut out = vec![0.0; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, &kw) in kernel.iter().enumerate() {
                let sy = (y + ki as i64 - radius).clamp(0, h - 1);
                acc += kw * horiz[(sy * w + x) as usize];
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    GrayImage {
        width: img.width,
        height: img.height,
        data: out,
    }
}

/// Gradient magnitude (normalized by the Sobel peak response so thresholds
/// live in [0,1]) and direction quantized to 4 bins:
/// 0 = horizontal (x) gradient, 1 = down-right diagonal, 2 = vertical,
/// 3 = down-left diagonal. Borders are replicated.
pub(crate) fn sobel_magnitude_direction(img: &GrayImage) -> (Vec<f64>, Vec<u8>) {
    let (w, h) = (img.width as i64, img.height as i64);
    let at = |x: i64, y: i64| -> f64 {
        img.data[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize]
    };
    let mut magnitude = vec![0.0; img.data.len()];
    let mut direction = vec![0u8; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            let idx = (y * w + x) as usize;
            magnitude[idx] = (gx * gx + gy * gy).sqrt() / SOBEL_MAX;
            let mut angle = gy.atan2(gx).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            direction[idx] = if !(22.5..157.5).contains(&angle) {
                0
            } else if angle < 67.5 {
                1
            } else if angle < 112.5 {
                2
            } else {
                3
            };
        }
    }
    (magnitude, direction)
}

pub(crate) const DIRECTION_OFFSETS: [(i64, i64); 4] = [(1, 0), (1, 1), (0, 1), (1, -1)];

/// Thins the magnitude field to local maxima along the gradient direction.
/// Plateaus keep the pixel on the negative-offset side so perfectly
/// symmetric step edges stay one pixel wide.
fn non_maximum_suppression(
    magnitude: &[f64],
    direction: &[u8],
    width: usize,
    height: usize,
) -> Vec<bool> {
    let (w, h) = (width as i64, height as i64);
    let mag = |x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= w || y >= h {
            0.0
        } else {
            magnitude[(y * w + x) as usize]
        }
    };
    let mut keep = vec![false; magnitude.len()];
    for y in 0..h {
        for x in 0..w {
            let idx = (y * w + x) as usize;
            let m = magnitude[idx];
            if m <= 0.0 {
                continue;
            }
            let (dx, dy) = DIRECTION_OFFSETS[direction[idx] as usize];
            keep[idx] = m >= mag(x + dx, y + dy) && m > mag(x - dx, y - dy);
        }
    }
    keep
}

/// Canny edge detection: Gaussian blur, Sobel gradients, non-maximum
/// suppression, hysteresis linking from strong (>= high) through weak
/// (>= low) pixels, 8-connected.
pub fn canny_edges(img: &GrayImage, low: f64, high: f64, sigma: f64) -> Result<EdgeSet> {
    if !(0.0 <= low && low <= high && high <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "thresholds must satisfy 0 <= low <= high <= 1, got ({low}, {high})"
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let blurred = gaussian_blur(img, sigma);
    let (magnitude, direction) = sobel_magnitude_direction(&blurred);
    let keep = non_maximum_suppression(&magnitude, &direction, img.width, img.height);

    let (w, h) = (img.width, img.height);
    let mut visited = vec![false; magnitude.len()];
    let mut stack = Vec::new();
    for idx in 0..magnitude.len() {
        if keep[idx] && magnitude[idx] >= high && !visited[idx] {
            visited[idx] = true;
            stack.push(idx);
            while let Some(cur) = stack.pop() {
                let (cx, cy) = ((cur % w) as i64, (cur / w) as i64);
                for dy in -1..=1i64 {
                    for dx in -1..=1i64 {
                        let (nx, ny) = (cx + dx, cy + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let nidx = (ny * w as i64 + nx) as usize;
                        if !visited[nidx] && keep[nidx] && magnitude[nidx] >= low {
                            visited[nidx] = true;
                            stack.push(nidx);
                        }
                    }
                }
            }
        }
    }
    let pixels: Vec<(u32, u32)> = (0..magnitude.len())
        .filter(|&idx| visited[idx])
        .map(|idx| ((idx % w) as u32, (idx / w) as u32))
        .collect();
    EdgeSet::new(pixels, w, h)
}

/// Single-threshold edge detection for the multi-scale cost surface:
/// gradient magnitude thresholding with non-maximum suppression, no
/// hysteresis. A light blur keeps the suppression stable on anti-aliased
/// input.
pub fn gradient_edges(img: &GrayImage, threshold: f64) -> Result<EdgeSet> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "threshold must lie in [0, 1], got {threshold}"
        )));
    }
    let blurred = gaussian_blur(img, 1.0);
    let (magnitude, direction) = sobel_magnitude_direction(&blurred);
    let keep = non_maximum_suppression(&magnitude, &direction, img.width, img.height);
    let pixels = (0..magnitude.len())
        .filter(|&idx| keep[idx] && magnitude[idx] >= threshold)
        .map(|idx| ((idx % img.width) as u32, (idx / img.width) as u32))
        .collect();
    EdgeSet::new(pixels, img.width, img.height)
}

/// Per-pixel Euclidean distances to a site set; infinite when there are no
/// sites.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DistanceField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Exact Euclidean distance transform (two-pass lower-envelope method on
/// squared distances). Every pixel of an empty site set is at distance
/// infinity.
pub fn distance_transform(width: usize, height: usize, sites: &[(u32, u32)]) -> DistanceField {
    let mut sq = vec![f64::INFINITY; width * height];
    for &(x, y) in sites {
        sq[y as usize * width + x as usize] = 0.0;
    }

    // Columns, then rows; each pass takes the 1D lower envelope.
    let mut scratch_in = vec![0.0; width.max(height)];
    let mut scratch_out = vec![0.0; width.max(height)];
    for x in 0..width {
        for y in 0..height {
            scratch_in[y] = sq[y * width + x];
        }
        envelope_1d(&scratch_in[..height], &mut scratch_out[..height]);
        for y in 0..height {
            sq[y * width + x] = scratch_out[y];
        }
    }
    for y in 0..height {
        scratch_in[..width].copy_from_slice(&sq[y * width..(y + 1) * width]);
        envelope_1d(&scratch_in[..width], &mut scratch_out[..width]);
        sq[y * width..(y + 1) * width].copy_from_slice(&scratch_out[..width]);
    }

    DistanceField {
        width,
        height,
        data: sq.into_iter().map(f64::sqrt).collect(),
    }
}

/// 1D squared-distance transform: out[q] = min_p (q - p)^2 + f[p].
fn envelope_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    // Hull of parabola indices and the left boundary of each one's reign.
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    let mut started = false;
    for q in 0..n {
        if f[q].is_infinite() {
            continue;
        }
        if !started {
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
            started = true;
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64))
                / (2.0 * q as f64 - 2.0 * p as f64);
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    if !started {
        out.copy_from_slice(f);
        return;
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        out[q] = d * d + f[p];
    }
}

/// Bilinear resample to new dimensions; samples map through aligned pixel
/// centers with border clamping.
pub(crate) fn resample(img: &GrayImage, new_width: usize, new_height: usize) -> GrayImage {
    let sx = img.width as f64 / new_width as f64;
    let sy = img.height as f64 / new_height as f64;
    let mut data = vec![0.0; new_width * new_height];
    for y in 0..new_height {
        for x in 0..new_width {
            let fx = (x as f64 + 0.5) * sx - 0.5;
            let fy = (y as f64 + 0.5) * sy - 0.5;
            data[y * new_width + x] =
                bilinear(&img.data, img.width, img.height, fx, fy).clamp(0.0, 1.0);
        }
    }
    GrayImage {
        width: new_width,
        height: new_height,
        data,
    }
}

/// Bilinear blend with border clamp.
fn bilinear(data: &[f64], width: usize, height: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (width - 1) as f64);
    let y = y.clamp(0.0, (height - 1) as f64);
    let x0 = (x.floor() as usize).min(width - 1);
    let y0 = (y.floor() as usize).min(height - 1);
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let v00 = data[y0 * width + x0];
    let v10 = data[y0 * width + x1];
    let v01 = data[y1 * width + x0];
    let v11 = data[y1 * width + x1];
    (v00 * (1.0 - fx) + v10 * fx) * (1.0 - fy) + (v01 * (1.0 - fx) + v11 * fx) * fy
}

/// Distance transforms of one image across a (threshold, scale) grid, all
/// expressed at working resolution in working-resolution pixel units.
#[derive(Debug, Clone)]
pub struct DistanceStack {
    width: usize,
    height: usize,
    fields: Vec<DistanceField>,
}

impl DistanceStack {
    pub(crate) fn from_fields(fields: Vec<DistanceField>) -> Result<Self> {
        let first = fields
            .first()
            .ok_or_else(|| Error::InvalidArgument("distance stack needs at least one field".into()))?;
        let (width, height) = (first.width, first.height);
        if fields.iter().any(|f| f.width != width || f.height != height) {
            return Err(Error::DimensionMismatch(
                "distance stack fields must share dimensions".into(),
            ));
        }
        Ok(DistanceStack {
            width,
            height,
            fields,
        })
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn fields(&self) -> &[DistanceField] {
        &self.fields
    }

    /// Averages the normalized fields `D/(D+kappa)` into a cost surface.
    /// Fails when every field is infinite (no edges anywhere).
    pub fn cost_surface(&self, kappa: f64) -> Result<EdgeCostSurface> {
        if !(kappa > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "kappa must be positive, got {kappa}"
            )));
        }
        if self.fields.iter().all(|f| f.data.iter().all(|d| d.is_infinite())) {
            return Err(Error::NoEdges(
                "no edges detected at any threshold or scale".into(),
            ));
        }
        let n = self.fields.len() as f64;
        let mut s = vec![0.0; self.width * self.height];
        for field in &self.fields {
            for (acc, &d) in s.iter_mut().zip(&field.data) {
                *acc += if d.is_infinite() { 1.0 } else { d / (d + kappa) };
            }
        }
        for acc in &mut s {
            *acc /= n;
        }
        Ok(EdgeCostSurface {
            width: self.width,
            height: self.height,
            s,
            n: self.fields.len(),
            kappa,
        })
    }
}

/// Multi-scale distance stack: for each (threshold, scale) pair the image
/// is resampled by the scale factor, edges are detected by thresholded
/// gradient magnitude with non-maximum suppression, and the distance
/// transform is scaled into working-resolution pixels and resampled back.
pub fn build_distance_stack(
    img: &GrayImage,
    thresholds: &[f64],
    scales: &[f64],
) -> Result<DistanceStack> {
    if thresholds.is_empty() || scales.is_empty() {
        return Err(Error::InvalidArgument(
            "thresholds and scales must be non-empty".into(),
        ));
    }
    if scales.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
        return Err(Error::InvalidArgument(
            "scales must lie in (0, 1]".into(),
        ));
    }
    let mut fields = Vec::with_capacity(thresholds.len() * scales.len());
    for &scale in scales {
        let cw = ((img.width as f64 * scale).round() as usize).max(1);
        let ch = ((img.height as f64 * scale).round() as usize).max(1);
        let scaled = if cw == img.width && ch == img.height {
            img.clone()
        } else {
            resample(img, cw, ch)
        };
        for &threshold in thresholds {
            let edges = gradient_edges(&scaled, threshold)?;
            let coarse = edges.distance_transform();
            // Coarse pixels are 1/scale working pixels wide; convert before
            // resampling so all fields share units.
            let factor = img.width as f64 / cw as f64;
            fields.push(upsample_distance(&coarse, img.width, img.height, factor));
        }
    }
    DistanceStack::from_fields(fields)
}

fn upsample_distance(
    coarse: &DistanceField,
    width: usize,
    height: usize,
    factor: f64,
) -> DistanceField {
    if coarse.width == width && coarse.height == height {
        return DistanceField {
            width,
            height,
            data: coarse.data.iter().map(|d| d * factor).collect(),
        };
    }
    let sx = coarse.width as f64 / width as f64;
    let sy = coarse.height as f64 / height as f64;
    let mut data = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let cx = (x as f64 + 0.5) * sx - 0.5;
            let cy = (y as f64 + 0.5) * sy - 0.5;
            data[y * width + x] =
                bilinear(&coarse.data, coarse.width, coarse.height, cx, cy) * factor;
        }
    }
    DistanceField {
        width,
        height,
        data,
    }
}

/// Smooth edge cost in [0, 1): the mean of `D/(D+kappa)` over the distance
/// stack. Zero exactly where every stacked field is zero.
#[derive(Debug, Clone)]
pub struct EdgeCostSurface {
    width: usize,
    height: usize,
    s: Vec<f64>,
    n: usize,
    kappa: f64,
}

impl EdgeCostSurface {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn field_count(&self) -> usize {
        self.n
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn values(&self) -> &[f64] {
        &self.s
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.s[y * self.width + x]
    }

    /// Bilinear sample with border clamp; exact at integer coordinates.
    pub fn sample(&self, p: Vector2<f64>) -> f64 {
        bilinear(&self.s, self.width, self.height, p.x, p.y)
    }

    /// Sample plus its gradient with respect to the continuous position.
    /// The gradient is the analytic derivative of the bilinear blend; it is
    /// zero in the clamped region outside the image.
    pub fn sample_with_gradient(&self, p: Vector2<f64>) -> (f64, Vector2<f64>) {
        let inside_x = (0.0..=(self.width - 1) as f64).contains(&p.x);
        let inside_y = (0.0..=(self.height - 1) as f64).contains(&p.y);
        let x = p.x.clamp(0.0, (self.width - 1) as f64);
        let y = p.y.clamp(0.0, (self.height - 1) as f64);
        let x0 = (x.floor() as usize).min(self.width - 1);
        let y0 = (y.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let v00 = self.s[y0 * self.width + x0];
        let v10 = self.s[y0 * self.width + x1];
        let v01 = self.s[y1 * self.width + x0];
        let v11 = self.s[y1 * self.width + x1];
        let value = (v00 * (1.0 - fx) + v10 * fx) * (1.0 - fy) + (v01 * (1.0 - fx) + v11 * fx) * fy;
        let dx = if inside_x {
            (v10 - v00) * (1.0 - fy) + (v11 - v01) * fy
        } else {
            0.0
        };
        let dy = if inside_y {
            (v01 - v00) * (1.0 - fx) + (v11 - v10) * fx
        } else {
            0.0
        };
        (value, Vector2::new(dx, dy))
    }

    /// Writes the surface as an 8-bit PGM (0 = on edge, bright = far).
    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        GrayImage::new(self.width, self.height, self.s.clone())?.save_pgm(path)
    }
}

/// Builds the cost surface in one step.
pub fn build_cost_surface(
    img: &GrayImage,
    thresholds: &[f64],
    scales: &[f64],
    kappa: f64,
) -> Result<EdgeCostSurface> {
    build_distance_stack(img, thresholds, scales)?.cost_surface(kappa)
}

/// Detector thresholds for the multi-scale cost surface.
pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.1, 0.2, 0.3];
/// Image scales for the multi-scale cost surface.
pub const DEFAULT_SCALES: [f64; 3] = [1.0, 0.5, 0.25];
/// Canny defaults: blur sigma, hysteresis thresholds on normalized
/// gradient magnitude.
pub const CANNY_SIGMA: f64 = 1.4;
pub const CANNY_HIGH: f64 = 0.15;
pub const CANNY_LOW: f64 = 0.05;
