//! Real-valued images in `[0, 1]` and 8-bit binary PGM/PPM (P5/P6) I/O.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major `height x width x channels` image with samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width, channels)?;
        if data.len() != height * width * channels {
            return Err(Error::dimension(
                format!("{} samples", height * width * channels),
                format!("{} samples", data.len()),
            ));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::domain(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        check_dims(height, width, channels)?;
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image by clamping arbitrary samples into `[0, 1]`.
    pub(crate) fn from_clamped(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
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

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    /// Mean over all columns and channels of one row.
    pub fn row_mean(&self, row: usize) -> f64 {
        let stride = self.width * self.channels;
        let slice = &self.data[row * stride..(row + 1) * stride];
        slice.iter().sum::<f64>() / stride as f64
    }

    /// 8-bit quantization used by the PNM writer.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_bytes(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
        Self::new(height, width, channels, data)
    }

    /// Encodes as binary PGM (one channel) or PPM (three channels), maxval 255.
    pub fn to_pnm(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_bytes());
        out
    }

    pub fn from_pnm(bytes: &[u8]) -> Result<Self> {
        decode_pnm(bytes).map_err(|message| Error::ImageFormat {
            path: None,
            message,
        })
    }

    pub fn read_pnm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        decode_pnm(&bytes).map_err(|message| Error::ImageFormat {
            path: Some(path.to_path_buf()),
            message,
        })
    }

    pub fn write_pnm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_pnm())?;
        Ok(())
    }
}

fn check_dims(height: usize, width: usize, channels: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::domain(format!(
            "image dimensions must be positive, got {height}x{width}"
        )));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::domain(format!(
            "images have 1 or 3 channels, got {channels}"
        )));
    }
    Ok(())
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn decode_pnm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0;
    let magic = header_token(bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(format!("unsupported magic {other:?}, expected P5 or P6")),
    };
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(format!("only maxval 255 is supported, got {maxval}"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let expected = width * height * channels;
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() < expected {
        return Err(format!(
            "raster truncated: {} of {expected} bytes",
            raster.len()
        ));
    }
    Image::from_bytes(height, width, channels, &raster[..expected]).map_err(|e| e.to_string())
}

fn header_token(bytes: &[u8], pos: &mut usize) -> std::result::Result<String, String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err("unexpected end of header".into());
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> std::result::Result<usize, String> {
    let token = header_token(bytes, pos)?;
    token
        .parse()
        .map_err(|_| format!("bad {what} {token:?} in header"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_out_of_range_pixels() {
        assert!(matches!(
            Image::new(1, 2, 1, vec![0.5, 1.5]),
            Err(Error::Domain(_))
        ));
        assert!(Image::new(1, 2, 2, vec![0.0; 4]).is_err());
        assert!(Image::new(0, 2, 1, vec![]).is_err());
    }

    #[test]
    fn pgm_header_with_comment() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([0u8, 255]);
        let img = Image::from_pnm(&bytes).unwrap();
        assert_eq!(img.shape(), (1, 2, 1));
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn truncated_raster_is_an_error() {
        let bytes = b"P6\n2 2\n255\n\x00\x01".to_vec();
        let err = Image::from_pnm(&bytes).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn ppm_layout_is_row_major_rgb() {
        let img = Image::new(1, 2, 3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let bytes = img.to_pnm();
        assert!(bytes.starts_with(b"P6\n2 1\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[255, 0, 0, 0, 0, 255]);
    }

    proptest! {
        #[test]
        fn pnm_round_trip_is_exact_on_8bit_values(
            h in 1usize..6, w in 1usize..6, rgb in any::<bool>(), seed in any::<u64>()
        ) {
            let c = if rgb { 3 } else { 1 };
            let bytes: Vec<u8> = (0..h * w * c)
                .map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8)
                .collect();
            let img = Image::from_bytes(h, w, c, &bytes).unwrap();
            let back = Image::from_pnm(&img.to_pnm()).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            prop_assert_eq!(back, img);
        }
    }
}
