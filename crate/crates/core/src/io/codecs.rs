//! Image, mask and depth file formats.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::image::{Image, Raster};

/// Reads a PNG or PPM (8 or 16 bit) into [0, 1] floats.
pub fn read_image(path: &Path) -> Result<Image> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        image::DynamicImage::ImageRgb16(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        other => other
            .into_rgb8()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 255.0)
            .collect(),
    };
    Image::from_data(w, h, data)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit image; the format follows the extension (`png`, `ppm`).
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let buf: RgbImage = ImageBuffer::<Rgb<u8>, _>::from_raw(
        img.width as u32,
        img.height as u32,
        img.data.iter().map(|v| to_u8(*v)).collect(),
    )
    .ok_or_else(|| Error::invalid("image buffer size mismatch"))?;
    buf.save(path)?;
    Ok(())
}

/// Reads a PGM mask, thresholding at 128 into {0, 1}.
pub fn read_mask(path: &Path) -> Result<Raster> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .into_raw()
        .into_iter()
        .map(|v| if v >= 128 { 1.0 } else { 0.0 })
        .collect();
    Raster::from_data(w, h, data)
}

pub fn write_mask(path: &Path, mask: &Raster) -> Result<()> {
    let buf: GrayImage = ImageBuffer::<Luma<u8>, _>::from_raw(
        mask.width as u32,
        mask.height as u32,
        mask.data.iter().map(|v| if *v >= 0.5 { 255 } else { 0 }).collect(),
    )
    .ok_or_else(|| Error::invalid("mask buffer size mismatch"))?;
    buf.save(path)?;
    Ok(())
}

fn pfm_error(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: msg.into(),
    }
}

/// Reads a single-channel PFM (`Pf`). Rows are stored bottom to top.
pub fn read_pfm(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path)?;
    let mut pos = 0;
    let mut token = || -> Option<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token().ok_or_else(|| pfm_error(path, "empty file"))?;
    if magic != "Pf" {
        return Err(pfm_error(
            path,
            format!("expected single-channel 'Pf', found '{magic}'"),
        ));
    }
    let mut num = |what: &str| -> Result<String> { token().ok_or_else(|| pfm_error(path, format!("missing {what}"))) };
    let w: usize = num("width")?.parse().map_err(|_| pfm_error(path, "bad width"))?;
    let h: usize = num("height")?.parse().map_err(|_| pfm_error(path, "bad height"))?;
    let scale: f64 = num("scale")?.parse().map_err(|_| pfm_error(path, "bad scale"))?;
    // Exactly one whitespace byte separates the header from the data.
    let start = pos + 1;
    let need = w * h * 4;
    if bytes.len() < start + need {
        return Err(pfm_error(
            path,
            format!(
                "expected {need} data bytes, found {}",
                bytes.len().saturating_sub(start)
            ),
        ));
    }
    let little = scale < 0.0;
    let mut data = vec![0.0; w * h];
    for (i, chunk) in bytes[start..start + need].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (x, row) = (i % w, i / w);
        data[(h - 1 - row) * w + x] = v as f64;
    }
    Raster::from_data(w, h, data)
}

/// Writes a little-endian single-channel PFM; values are stored as f32.
pub fn write_pfm(path: &Path, raster: &Raster) -> Result<()> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", raster.width, raster.height).into_bytes();
    for row in (0..raster.height).rev() {
        for x in 0..raster.width {
            out.extend_from_slice(&(raster.get(x, row) as f32).to_le_bytes());
        }
    }
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_and_ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::new(5, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = ((i * 37) % 256) as f64 / 255.0;
        }
        for name in ["a.png", "a.ppm"] {
            let p = dir.path().join(name);
            write_image(&p, &img).unwrap();
            assert_eq!(read_image(&p).unwrap(), img);
        }
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Raster::from_data(3, 2, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let p = dir.path().join("m.pgm");
        write_mask(&p, &m).unwrap();
        assert_eq!(read_mask(&p).unwrap(), m);
    }

    #[test]
    fn pfm_round_trip_and_orientation() {
        let dir = tempfile::tempdir().unwrap();
        let r = Raster::from_data(3, 2, vec![1.0, 2.0, 3.0, 4.5, 5.25, 6.0]).unwrap();
        let p = dir.path().join("d.pfm");
        write_pfm(&p, &r).unwrap();
        let bytes = fs::read(&p).unwrap();
        // First stored row is the bottom one.
        let header = b"Pf\n3 2\n-1.0\n".len();
        assert_eq!(f32::from_le_bytes(bytes[header..header + 4].try_into().unwrap()), 4.5);
        assert_eq!(read_pfm(&p).unwrap(), r);
    }

    #[test]
    fn truncated_pfm_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pfm");
        fs::write(&p, b"Pf\n4 4\n-1.0\n\0\0\0\0").unwrap();
        assert!(read_pfm(&p).is_err());
    }
}
