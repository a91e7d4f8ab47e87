//! Point clouds, dense images and the `flexcloud` text format.
//!
//! File layout (ASCII, whitespace separated):
//!
//! ```text
//! flexcloud v1 <n> <d> <C>
//! <d location reals> <C feature reals>          (n lines)
//! ```
//!
//! The labeled variant uses the header `flexcloud-labeled v1 <n> <d> <C>` and
//! appends one non-negative integer label to each line. Reals are written in
//! Rust's shortest round-trip representation, so a write/read cycle is exact.

use std::io::{BufRead, Write};

use crate::error::{EngineError, Result};
use crate::tensor::Matrix;

/// `n` points with `d`-dimensional locations and `C` feature channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub locations: Matrix,
    pub features: Matrix,
}

impl PointCloud {
    /// Validated constructor.
    pub fn new(locations: Matrix, features: Matrix) -> Result<Self> {
        let cloud = Self {
            locations,
            features,
        };
        validate_cloud(&cloud)?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.locations.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.locations.cols()
    }

    pub fn channels(&self) -> usize {
        self.features.cols()
    }

    /// Sub-cloud made of the given rows, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            locations: self.locations.gather_rows(indices)?,
            features: self.features.gather_rows(indices)?,
        })
    }
}

pub fn validate_cloud(cloud: &PointCloud) -> Result<()> {
    let (n, d) = cloud.locations.shape();
    let (nf, c) = cloud.features.shape();
    if n != nf {
        return Err(EngineError::shape(format!(
            "locations have {n} rows but features have {nf}"
        )));
    }
    if n == 0 {
        return Err(EngineError::empty("point cloud has no points"));
    }
    if d == 0 || c == 0 {
        return Err(EngineError::shape(format!(
            "spatial dimension {d} and channel count {c} must both be positive"
        )));
    }
    if !cloud.locations.is_finite() {
        return Err(EngineError::non_finite("locations contain NaN or Inf"));
    }
    if !cloud.features.is_finite() {
        return Err(EngineError::non_finite("features contain NaN or Inf"));
    }
    Ok(())
}

/// `H x W x C` image stored row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseImage {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl DenseImage {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width * channels {
            return Err(EngineError::shape(format!(
                "{} pixel values for a {height}x{width}x{channels} image",
                pixels.len()
            )));
        }
        if height == 0 || width == 0 || channels == 0 {
            return Err(EngineError::shape(format!(
                "image dimensions {height}x{width}x{channels} must be positive"
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::non_finite("image contains NaN or Inf"));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    /// Single-channel image from a closure of `(row, col)`.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self::new(height, width, 1, pixels)
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

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.pixels[(row * self.width + col) * self.channels + channel]
    }
}

/// Pixels become points in row-major raster order: point `r * W + c` sits at
/// location `(r, c)` and carries that pixel's channels.
pub fn image_to_cloud(img: &DenseImage) -> Result<PointCloud> {
    let n = img.height * img.width;
    let mut locations = Matrix::zeros(n, 2);
    for r in 0..img.height {
        for c in 0..img.width {
            let row = locations.row_mut(r * img.width + c);
            row[0] = r as f64;
            row[1] = c as f64;
        }
    }
    let features = Matrix::from_vec(n, img.channels, img.pixels.clone())?;
    PointCloud::new(locations, features)
}

pub fn write_flexcloud<W: Write>(out: W, cloud: &PointCloud, labels: Option<&[usize]>) -> Result<()> {
    let mut out = std::io::BufWriter::new(out);
    let (n, d, c) = (cloud.len(), cloud.dim(), cloud.channels());
    match labels {
        Some(l) => {
            if l.len() != n {
                return Err(EngineError::shape(format!("{} labels for {n} points", l.len())));
            }
            writeln!(out, "flexcloud-labeled v1 {n} {d} {c}")?;
        }
        None => writeln!(out, "flexcloud v1 {n} {d} {c}")?,
    }
    for i in 0..n {
        let mut first = true;
        for v in cloud.locations.row(i).iter().chain(cloud.features.row(i)) {
            if !first {
                out.write_all(b" ")?;
            }
            first = false;
            write!(out, "{v:?}")?;
        }
        if let Some(l) = labels {
            write!(out, " {}", l[i])?;
        }
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Parses either header variant; labels are returned for the labeled one.
pub fn read_flexcloud<R: BufRead>(input: R) -> Result<(PointCloud, Option<Vec<usize>>)> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| EngineError::config("missing flexcloud header"))??;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    let labeled = match tokens.first().copied() {
        Some("flexcloud") => false,
        Some("flexcloud-labeled") => true,
        _ => return Err(EngineError::config(format!("bad flexcloud header: {header:?}"))),
    };
    if tokens.len() != 5 || tokens[1] != "v1" {
        return Err(EngineError::config(format!("bad flexcloud header: {header:?}")));
    }
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| EngineError::config(format!("bad header field {s:?}")))
    };
    let (n, d, c) = (parse_dim(tokens[2])?, parse_dim(tokens[3])?, parse_dim(tokens[4])?);
    if n == 0 {
        return Err(EngineError::empty("flexcloud file declares zero points"));
    }
    if d == 0 || c == 0 {
        return Err(EngineError::config("flexcloud dimensions must be positive"));
    }
    let width = d + c + usize::from(labeled);
    let mut locations = Matrix::zeros(n, d);
    let mut features = Matrix::zeros(n, c);
    let mut labels = labeled.then(|| Vec::with_capacity(n));
    for i in 0..n {
        let line = lines
            .next()
            .ok_or_else(|| EngineError::config(format!("expected {n} rows, found {i}")))??;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != width {
            return Err(EngineError::config(format!(
                "row {i} has {} fields, expected {width}",
                fields.len()
            )));
        }
        for (k, f) in fields[..d + c].iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| EngineError::config(format!("row {i}: bad real {f:?}")))?;
            if k < d {
                locations.set(i, k, v);
            } else {
                features.set(i, k - d, v);
            }
        }
        if let Some(l) = labels.as_mut() {
            let s = fields[d + c];
            l.push(
                s.parse()
                    .map_err(|_| EngineError::config(format!("row {i}: bad label {s:?}")))?,
            );
        }
    }
    for rest in lines {
        if !rest?.trim().is_empty() {
            return Err(EngineError::config("trailing data after declared rows"));
        }
    }
    Ok((PointCloud::new(locations, features)?, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ErrorKind;

    fn cloud(n: usize, d: usize, c: usize) -> PointCloud {
        PointCloud {
            locations: Matrix::zeros(n, d),
            features: Matrix::zeros(n, c),
        }
    }

    #[test]
    fn minimal_cloud_is_valid() {
        assert!(validate_cloud(&cloud(1, 3, 1)).is_ok());
    }

    #[test]
    fn row_count_disagreement() {
        let err = validate_cloud(&PointCloud {
            locations: Matrix::zeros(4, 3),
            features: Matrix::zeros(5, 2),
        })
        .unwrap_err();
        assert_eq!(err.kind, ErrorKind::ShapeMismatch);
    }

    #[test]
    fn nan_feature_rejected() {
        let mut c = cloud(2, 2, 2);
        c.features.set(1, 0, f64::NAN);
        assert_eq!(validate_cloud(&c).unwrap_err().kind, ErrorKind::NonFinite);
    }

    #[test]
    fn zero_image_layout() {
        let img = DenseImage::from_fn(3, 3, |_, _| 0.0).unwrap();
        let c = image_to_cloud(&img).unwrap();
        assert_eq!(c.len(), 9);
        for r in 0..3 {
            for col in 0..3 {
                assert_eq!(c.locations.row(r * 3 + col), &[r as f64, col as f64]);
            }
        }
        assert!(c.features.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn raster_order() {
        let img = DenseImage::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let c = image_to_cloud(&img).unwrap();
        let locs: Vec<&[f64]> = (0..4).map(|i| c.locations.row(i)).collect();
        assert_eq!(locs, vec![&[0.0, 0.0][..], &[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]]);
        assert_eq!(c.features.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn five_by_four_image() {
        let img = DenseImage::from_fn(5, 4, |r, c| (r + c) as f64).unwrap();
        let c = image_to_cloud(&img).unwrap();
        assert_eq!((c.len(), c.dim()), (20, 2));
        let mut seen: Vec<(u64, u64)> = (0..20)
            .map(|i| (c.locations.get(i, 0).to_bits(), c.locations.get(i, 1).to_bits()))
            .collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 20);
    }

    #[test]
    fn round_trip_labeled() {
        let locs = Matrix::from_rows(&[[0.1, -2.5e-7], [3.0, 1.0 / 3.0]]).unwrap();
        let feats = Matrix::from_rows(&[[1e300], [-0.0]]).unwrap();
        let c = PointCloud::new(locs, feats).unwrap();
        let mut buf = Vec::new();
        write_flexcloud(&mut buf, &c, Some(&[2, 0])).unwrap();
        let (back, labels) = read_flexcloud(&buf[..]).unwrap();
        assert_eq!(back, c);
        assert_eq!(labels, Some(vec![2, 0]));
    }

    #[test]
    fn malformed_headers_rejected() {
        for text in [
            "",
            "flexcloud v2 1 1 1\n0 0\n",
            "pointcloud v1 1 1 1\n0 0\n",
            "flexcloud v1 1 1\n0 0\n",
            "flexcloud v1 x 1 1\n0 0\n",
        ] {
            let err = read_flexcloud(text.as_bytes()).unwrap_err();
            assert_eq!(err.kind, ErrorKind::ConfigInvalid, "{text:?}");
        }
        let err = read_flexcloud("flexcloud v1 0 2 1\n".as_bytes()).unwrap_err();
        assert_eq!(err.kind, ErrorKind::EmptyInput);
    }

    #[test]
    fn short_file_rejected() {
        let err = read_flexcloud("flexcloud v1 2 1 1\n0 1\n".as_bytes()).unwrap_err();
        assert_eq!(err.kind, ErrorKind::ConfigInvalid);
    }
}
