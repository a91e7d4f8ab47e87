//! Dense-grid convolution reference.
//!
//! The kernel is indexed by the offset `tau = center - neighbor`, the same
//! convention flex-convolution uses, so
//! `out(p) = sum_tau K(tau) img(p - tau)`. This is textbook convolution
//! (flipped kernel), not cross-correlation.

use crate::cloud::DenseImage;
use crate::error::{EngineError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseConvOracle {
    kh: usize,
    kw: usize,
    c_in: usize,
    c_out: usize,
    /// `kh x kw x c_in x c_out`; entry `[a][b]` is the weight for
    /// `tau = (a - kh/2, b - kw/2)`.
    kernel: Vec<f64>,
}

impl DenseConvOracle {
    pub fn new(kh: usize, kw: usize, c_in: usize, c_out: usize, kernel: Vec<f64>) -> Result<Self> {
        if kh.is_multiple_of(2) || kw.is_multiple_of(2) {
            return Err(EngineError::shape(format!("kernel {kh}x{kw} must have odd sides")));
        }
        if c_in == 0 || c_out == 0 || kernel.len() != kh * kw * c_in * c_out {
            return Err(EngineError::shape("kernel buffer does not match its declared shape"));
        }
        if kernel.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::non_finite("kernel"));
        }
        Ok(Self {
            kh,
            kw,
            c_in,
            c_out,
            kernel,
        })
    }

    /// Weight for offset `(dr, dc)`, input channel `ci`, output channel `co`.
    pub fn weight(&self, dr: isize, dc: isize, ci: usize, co: usize) -> f64 {
        let a = (dr + (self.kh / 2) as isize) as usize;
        let b = (dc + (self.kw / 2) as isize) as usize;
        self.kernel[((a * self.kw + b) * self.c_in + ci) * self.c_out + co]
    }

    /// Single-channel 3x3 matrix view, rows indexed by `tau_row + 1`.
    pub fn as_3x3(&self) -> Option<[[f64; 3]; 3]> {
        if (self.kh, self.kw, self.c_in, self.c_out) != (3, 3, 1, 1) {
            return None;
        }
        let mut m = [[0.0; 3]; 3];
        for (a, row) in m.iter_mut().enumerate() {
            for (b, v) in row.iter_mut().enumerate() {
                *v = self.kernel[a * 3 + b];
            }
        }
        Some(m)
    }
}

/// Valid-region convolution: the output is `(H - kh + 1) x (W - kw + 1)`,
/// its pixel `(r, c)` centered on input pixel `(r + kh/2, c + kw/2)`.
pub fn dense_conv2d(img: &DenseImage, oracle: &DenseConvOracle) -> Result<DenseImage> {
    if img.channels() != oracle.c_in {
        return Err(EngineError::shape(format!(
            "image has {} channels, kernel expects {}",
            img.channels(),
            oracle.c_in
        )));
    }
    if img.height() < oracle.kh || img.width() < oracle.kw {
        return Err(EngineError::shape(format!(
            "{}x{} image has no valid region for a {}x{} kernel",
            img.height(),
            img.width(),
            oracle.kh,
            oracle.kw
        )));
    }
    let (rh, rw) = ((oracle.kh / 2) as isize, (oracle.kw / 2) as isize);
    let out_h = img.height() - oracle.kh + 1;
    let out_w = img.width() - oracle.kw + 1;
    let mut pixels = Vec::with_capacity(out_h * out_w * oracle.c_out);
    for r in 0..out_h {
        for c in 0..out_w {
            let (pr, pc) = (r as isize + rh, c as isize + rw);
            for co in 0..oracle.c_out {
                let mut acc = 0.0;
                for dr in -rh..=rh {
                    for dc in -rw..=rw {
                        let (sr, sc) = ((pr - dr) as usize, (pc - dc) as usize);
                        for ci in 0..oracle.c_in {
                            acc += oracle.weight(dr, dc, ci, co) * img.at(sr, sc, ci);
                        }
                    }
                }
                pixels.push(acc);
            }
        }
    }
    DenseImage::new(out_h, out_w, oracle.c_out, pixels)
}

/// 3x3 single-channel kernel `K(tau) = <theta, tau> + theta_b`.
pub fn kernel_from_flex(theta: [f64; 2], theta_b: f64) -> DenseConvOracle {
    let mut kernel = Vec::with_capacity(9);
    for dr in -1..=1 {
        for dc in -1..=1 {
            kernel.push(theta[0] * dr as f64 + theta[1] * dc as f64 + theta_b);
        }
    }
    DenseConvOracle::new(3, 3, 1, 1, kernel).expect("3x3 kernel shape is valid")
}
