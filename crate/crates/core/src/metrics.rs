//! RGB images, binary PPM I/O and image-quality metrics.

use std::path::Path;

use crate::tensor::Scalar;
use crate::{Error, Result};

/// Value written to logs in place of an infinite PSNR.
pub const PSNR_CAP: Scalar = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: Scalar = 1.5;
const SSIM_K1: Scalar = 0.01;
const SSIM_K2: Scalar = 0.03;

/// Row-major interleaved RGB in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<Scalar>,
}

impl Image {
    /// Values are clamped into `[0, 1]`; NaN is rejected.
    pub fn new(width: usize, height: usize, data: Vec<Scalar>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension("image dimensions must be positive".into()));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Dimension(format!(
                "{width}x{height} RGB image needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        if data.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("image contains NaN".into()));
        }
        let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, color: [Scalar; 3]) -> Result<Self> {
        Self::new(width, height, color.repeat(width * height))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[Scalar] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [Scalar; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, c: [Scalar; 3]) {
        let i = (y * self.width + x) * 3;
        for ch in 0..3 {
            self.data[i + ch] = c[ch].clamp(0.0, 1.0);
        }
    }

    /// Binary P6, maxval 255, `round(255 * c)`.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|v| (v * 255.0).round() as u8));
        out
    }

    pub fn from_ppm(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::format(path, msg.to_string());
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated PPM header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII PPM header"))?);
        }
        if fields[0] != "P6" {
            return Err(bad("not a binary PPM (P6)"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad number in PPM header"));
        let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(bad("only 8-bit PPM is supported"));
        }
        // exactly one whitespace byte separates header and raster
        pos += 1;
        let n = w * h * 3;
        if bytes.len() < pos + n {
            return Err(bad("truncated PPM raster"));
        }
        let data = bytes[pos..pos + n].iter().map(|&b| b as Scalar / maxval as Scalar).collect();
        Self::new(w, h, data).map_err(|e| bad(&e.to_string()))
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_ppm()).map_err(|e| Error::io(path, e))
    }

    pub fn load_ppm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_ppm(&bytes, path)
    }
}

fn same_dims(a: &Image, b: &Image) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Dimension(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<Scalar> {
    same_dims(a, b)?;
    let sum: Scalar = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data.len() as Scalar)
}

/// `10 log10(1 / MSE)`; infinite for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<Scalar> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { Scalar::INFINITY } else { -10.0 * m.log10() })
}

/// PSNR from a mean squared error, capped for logging.
pub fn psnr_from_mse(m: Scalar) -> Scalar {
    if m <= 0.0 {
        PSNR_CAP
    } else {
        (-10.0 * m.log10()).min(PSNR_CAP)
    }
}

pub(crate) fn gaussian_kernel() -> [Scalar; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as Scalar;
    let mut k: [Scalar; SSIM_WINDOW] =
        std::array::from_fn(|i| (-(i as Scalar - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: Scalar = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable valid-mode Gaussian filter of one channel plane.
fn blur(plane: &[Scalar], w: usize, h: usize, k: &[Scalar; SSIM_WINDOW]) -> Vec<Scalar> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over channels and all fully contained 11x11 Gaussian
/// windows (sigma 1.5, K1 0.01, K2 0.03, dynamic range 1).
pub fn ssim(a: &Image, b: &Image) -> Result<Scalar> {
    same_dims(a, b)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let k = gaussian_kernel();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        let x: Vec<Scalar> = a.data.iter().skip(ch).step_by(3).copied().collect();
        let y: Vec<Scalar> = b.data.iter().skip(ch).step_by(3).copied().collect();
        let xx: Vec<Scalar> = x.iter().map(|v| v * v).collect();
        let yy: Vec<Scalar> = y.iter().map(|v| v * v).collect();
        let xy: Vec<Scalar> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, my) = (blur(&x, w, h, &k), blur(&y, w, h, &k));
        let (sxx, syy, sxy) = (blur(&xx, w, h, &k), blur(&yy, w, h, &k), blur(&xy, w, h, &k));
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as Scalar)
}
