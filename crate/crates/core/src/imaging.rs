//! Pixel-domain utilities: images and masks, Canny edges, distance
//! transforms, boundaries, and PNG/PPM I/O.

use std::collections::VecDeque;
use std::path::Path;

use image::{ColorType, GrayImage, Luma};
use robomask_tensor::{Tensor, Var};

use crate::error::{contract, dims, Error, Result};

/// Planar (channel-major) image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(contract(
                "image",
                format!("channels must be 1 or 3, got {channels}"),
            ));
        }
        if data.len() != height * width * channels {
            return Err(dims("image", &[channels, height, width], &[data.len()]));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(contract("image", format!("value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x).clamp(0.0, 1.0));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// `[C, H, W]` tensor view of the pixels.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([self.channels, self.height, self.width], self.data.clone())
            .expect("image shape")
    }

    /// Rec. 601 luma; single-channel images are returned as-is.
    pub fn luma(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.data.clone();
        }
        let n = self.height * self.width;
        (0..n)
            .map(|i| 0.299 * self.data[i] + 0.587 * self.data[n + i] + 0.114 * self.data[2 * n + i])
            .collect()
    }

    /// Reflect-pads bottom and right edges up to multiples of `m`.
    pub fn pad_to_multiple(&self, m: usize) -> Image {
        let (h, w) = (
            self.height.next_multiple_of(m),
            self.width.next_multiple_of(m),
        );
        Image::from_fn(h, w, self.channels, |c, y, x| {
            self.get(c, reflect(y, self.height), reflect(x, self.width))
        })
    }

    pub fn crop(&self, height: usize, width: usize) -> Image {
        Image::from_fn(height, width, self.channels, |c, y, x| self.get(c, y, x))
    }
}

/// Reflection without edge repeat (`…, n-2, n-1, n-2, …`), clamped for tiny inputs.
fn reflect(i: usize, n: usize) -> usize {
    if i < n {
        i
    } else if n > 1 {
        let r = 2 * (n - 1) as isize - i as isize;
        r.max(0) as usize
    } else {
        0
    }
}

/// Strictly binary per-pixel mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(dims("mask", &[height, width], &[data.len()]));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Thresholds a `[H, W]` (or `[1, H, W]`) tensor: `value >= threshold` is foreground.
    pub fn from_tensor(t: &Tensor, threshold: f64) -> Result<Self> {
        let (h, w) = match *t.shape() {
            [h, w] | [1, h, w] => (h, w),
            _ => {
                return Err(contract(
                    "mask",
                    format!("expected [H,W] tensor, got {:?}", t.shape()),
                ))
            }
        };
        Ok(Self {
            height: h,
            width: w,
            data: t.data().iter().map(|&v| v >= threshold).collect(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.height, self.width]
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// `[H, W]` tensor of 0/1.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            [self.height, self.width],
            self.data
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        )
        .expect("mask shape")
    }

    pub fn pad_to_multiple(&self, m: usize) -> BinaryMask {
        let (h, w) = (
            self.height.next_multiple_of(m),
            self.width.next_multiple_of(m),
        );
        BinaryMask::from_fn(h, w, |y, x| {
            self.get(reflect(y, self.height), reflect(x, self.width))
        })
    }

    pub fn crop(&self, height: usize, width: usize) -> BinaryMask {
        BinaryMask::from_fn(height, width, |y, x| self.get(y, x))
    }

    /// Logical OR of two equally sized masks.
    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        if self.shape() != other.shape() {
            return Err(dims("union", &self.shape(), &other.shape()));
        }
        Ok(BinaryMask {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a || *b)
                .collect(),
        })
    }

    /// Max over non-overlapping `f×f` blocks as a `[1, H/f, W/f]` 0/1 tensor.
    pub fn max_pool(&self, f: usize) -> Result<Tensor> {
        if f == 0 || !self.height.is_multiple_of(f) || !self.width.is_multiple_of(f) {
            return Err(contract(
                "max_pool",
                format!("{}x{} is not divisible by {f}", self.height, self.width),
            ));
        }
        let (oh, ow) = (self.height / f, self.width / f);
        let mut out = vec![0.0; oh * ow];
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    out[(y / f) * ow + x / f] = 1.0;
                }
            }
        }
        Ok(Tensor::new([1, oh, ow], out)?)
    }
}

/// Binary edge map after hysteresis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeMap(BinaryMask);

impl EdgeMap {
    pub fn mask(&self) -> &BinaryMask {
        &self.0
    }

    /// Max-pooled to feature resolution, `[1, H/f, W/f]`.
    pub fn pooled(&self, f: usize) -> Result<Tensor> {
        self.0.max_pool(f)
    }
}

const TIE_EPS: f64 = 1e-9;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    for v in &mut k {
        *v /= total;
    }
    k
}

fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Separable Gaussian blur with edge-clamped borders.
fn gaussian_blur(src: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * src[y * w + clamp_idx(x as isize + i as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp[clamp_idx(y as isize + i as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Sobel derivatives `(gx, gy)` with edge-clamped borders; `gy` points down.
pub fn sobel(src: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |y: isize, x: isize| src[clamp_idx(y, h) * w + clamp_idx(x, w)];
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            gy[i] = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
        }
    }
    (gx, gy)
}

/// Canny edge detector on the image luma.
///
/// Gaussian smoothing, Sobel gradients, non-maximum suppression along the
/// gradient direction quantized to 45°, then hysteresis with 8-connectivity.
/// `low`/`high` apply to magnitude normalized by the image maximum. Along a
/// plateau of equal magnitudes (within 1e-9) only the pixel furthest in the
/// positive scan direction survives suppression.
pub fn canny(img: &Image, sigma: f64, low: f64, high: f64) -> Result<EdgeMap> {
    if !(low > 0.0 && low < high && high <= 1.0) {
        return Err(Error::Config(format!(
            "Canny thresholds need 0 < low < high <= 1, got {low}, {high}"
        )));
    }
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::Config(format!(
            "Canny sigma must be positive, got {sigma}"
        )));
    }
    let (h, w) = (img.height(), img.width());
    let smooth = gaussian_blur(&img.luma(), h, w, sigma);
    let (gx, gy) = sobel(&smooth, h, w);
    let mut mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    let max = mag.iter().cloned().fold(0.0, f64::max);
    if max < 1e-12 {
        return Ok(EdgeMap(BinaryMask::empty(h, w)));
    }
    for m in &mut mag {
        *m /= max;
    }

    let m_at = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut thin = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = mag[i];
            if m == 0.0 {
                continue;
            }
            let mut angle = gy[i].atan2(gx[i]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            // Positive-direction neighbor offset (dy, dx).
            let (dy, dx): (isize, isize) = if !(22.5..157.5).contains(&angle) {
                (0, 1)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            let (yi, xi) = (y as isize, x as isize);
            let pos = m_at(yi + dy, xi + dx);
            let neg = m_at(yi - dy, xi - dx);
            if m > pos + TIE_EPS && m >= neg - TIE_EPS {
                thin[i] = m;
            }
        }
    }

    let mut out = vec![false; h * w];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for (i, &m) in thin.iter().enumerate() {
        if m >= high {
            out[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !out[j] && thin[j] >= low {
                    out[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    Ok(EdgeMap(BinaryMask {
        height: h,
        width: w,
        data: out,
    }))
}

/// Average-pools a soft `[H, W]` mask over 16×16 blocks (differentiable).
pub fn downsample_mask_16(soft: &Var) -> Result<Var> {
    let shape = soft.shape();
    if shape.len() != 2 || !shape[0].is_multiple_of(16) || !shape[1].is_multiple_of(16) {
        return Err(contract(
            "downsample_mask_16",
            format!("expected [H,W] with both divisible by 16, got {shape:?}"),
        ));
    }
    Ok(soft.avg_pool2d(16)?)
}

/// Exact 1-D squared distance transform (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    let mut first = None;
    for (q, fq) in f.iter().enumerate() {
        if fq.is_finite() {
            first = Some(q);
            break;
        }
    }
    let Some(start) = first else {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    };
    v[0] = start;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in start + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64))
                / (2.0 * q as f64 - 2.0 * p as f64);
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
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
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from every pixel to the nearest `target` pixel
/// (`+inf` when there is none). Exact, computed in two separable passes.
pub fn squared_distance_to(targets: &[bool], h: usize, w: usize) -> Vec<f64> {
    let mut cols = vec![0.0; h * w];
    let mut buf_in = vec![0.0; h];
    let mut buf_out = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            buf_in[y] = if targets[y * w + x] {
                0.0
            } else {
                f64::INFINITY
            };
        }
        edt_1d(&buf_in, &mut buf_out);
        for y in 0..h {
            cols[y * w + x] = buf_out[y];
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        edt_1d(&cols[y * w..(y + 1) * w], &mut out[y * w..(y + 1) * w]);
    }
    out
}

/// Per-pixel distance field.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceField {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl DistanceField {
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Location of the maximum, ties broken by lowest row-major index.
    pub fn argmax(&self) -> Option<(usize, usize)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in self.data.iter().enumerate() {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| (i / self.width, i % self.width))
    }
}

/// Euclidean distance from each foreground pixel to the nearest background
/// pixel; pixels beyond the image border count as background. Zero on
/// background.
pub fn distance_transform(mask: &BinaryMask) -> DistanceField {
    let (h, w) = (mask.height + 2, mask.width + 2);
    let mut targets = vec![true; h * w];
    for y in 0..mask.height {
        for x in 0..mask.width {
            targets[(y + 1) * w + x + 1] = !mask.get(y, x);
        }
    }
    let sq = squared_distance_to(&targets, h, w);
    let mut data = Vec::with_capacity(mask.height * mask.width);
    for y in 0..mask.height {
        for x in 0..mask.width {
            data.push(sq[(y + 1) * w + x + 1].sqrt());
        }
    }
    DistanceField {
        height: mask.height,
        width: mask.width,
        data,
    }
}

/// Foreground pixels 4-adjacent to background or to the image border.
pub fn boundary_map(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = (mask.height, mask.width);
    BinaryMask::from_fn(h, w, |y, x| {
        mask.get(y, x)
            && (y == 0
                || x == 0
                || y + 1 == h
                || x + 1 == w
                || !mask.get(y - 1, x)
                || !mask.get(y + 1, x)
                || !mask.get(y, x - 1)
                || !mask.get(y, x + 1))
    })
}

fn image_err(path: &Path, msg: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

/// Reads an 8-bit single-channel PNG; pixels above 127 are foreground.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    if img.color() != ColorType::L8 {
        return Err(image_err(
            path,
            format!("expected 8-bit grayscale mask, found {:?}", img.color()),
        ));
    }
    let gray = img.into_luma8();
    let (w, h) = gray.dimensions();
    let data = gray.pixels().map(|p| p.0[0] > 127).collect();
    BinaryMask::new(h as usize, w as usize, data)
}

/// Writes a mask as an 8-bit grayscale PNG with values 0/255.
pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let img = GrayImage::from_fn(mask.width as u32, mask.height as u32, |x, y| {
        Luma([if mask.get(y as usize, x as usize) {
            255
        } else {
            0
        }])
    });
    img.save(path).map_err(|e| image_err(path, e))
}

/// Reads a PNG or PPM frame as RGB.
pub fn load_rgb(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| image_err(path, e))?
        .into_rgb8();
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = p.0[c] as f64 / 255.0;
        }
    }
    Image::new(h, w, 3, data)
}

/// Writes an RGB (or gray) image as PNG, quantized to 8 bits.
pub fn save_rgb(img: &Image, path: &Path) -> Result<()> {
    let q = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    let out = image::RgbImage::from_fn(img.width as u32, img.height as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        if img.channels == 1 {
            let v = q(img.get(0, y, x));
            image::Rgb([v, v, v])
        } else {
            image::Rgb([
                q(img.get(0, y, x)),
                q(img.get(1, y, x)),
                q(img.get(2, y, x)),
            ])
        }
    });
    out.save(path).map_err(|e| image_err(path, e))
}
