//! Image files: 8-bit grayscale PNG for inspection (`[-1, 1] → [0, 255]`,
//! clamped) and raw `.f32` blobs (`u32` width, `u32` height, then `f32`
//! pixels, all little-endian) for lossless round trips.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

/// Quantization step of the PNG mapping in pixel units.
pub const PNG_STEP: f64 = 2.0 / 255.0;

pub fn to_u8(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

pub fn from_u8(q: u8) -> f64 {
    q as f64 / 127.5 - 1.0
}

pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let (w, h) = img.dims();
    let bytes: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
    let buf = image::GrayImage::from_raw(w as u32, h as u32, bytes).expect("buffer matches dims");
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })
}

pub fn read_png(path: &Path) -> Result<Image> {
    let dynamic = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })?;
    let gray = dynamic.to_luma8();
    let (w, h) = gray.dimensions();
    Image::from_vec(w as usize, h as usize, gray.into_raw().into_iter().map(from_u8).collect())
}

pub fn encode_f32(img: &Image) -> Vec<u8> {
    let (w, h) = img.dims();
    let mut out = Vec::with_capacity(8 + 4 * img.len());
    out.extend((w as u32).to_le_bytes());
    out.extend((h as u32).to_le_bytes());
    for &v in img.data() {
        out.extend((v as f32).to_le_bytes());
    }
    out
}

pub fn decode_f32(bytes: &[u8], path: &Path) -> Result<Image> {
    if bytes.len() < 8 {
        return Err(Error::format(path, "missing .f32 header"));
    }
    let w = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if w.checked_mul(h).and_then(|n| n.checked_mul(4)) != Some(body.len()) {
        return Err(Error::format(
            path,
            format!("{w}×{h} header does not match {} data bytes", body.len()),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Image::from_vec(w, h, data)
}

pub fn write_f32(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode_f32(img)).map_err(|e| Error::io(path, e))
}

pub fn read_f32(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_f32(&bytes, path)
}

/// Reads `.f32` or `.png` by extension.
pub fn read_image(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("f32") => read_f32(path),
        Some("png") => read_png(path),
        _ => Err(Error::format(path, "expected a .f32 or .png file")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints_map_exactly() {
        assert_eq!(to_u8(-1.0), 0);
        assert_eq!(to_u8(1.0), 255);
        assert_eq!(to_u8(3.0), 255);
        assert_eq!(from_u8(0), -1.0);
        assert_eq!(from_u8(255), 1.0);
    }

    #[test]
    fn png_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = Image::from_fn(5, 3, |x, y| (x as f64 - 2.0) * 0.4 + y as f64 * 0.1 - 0.1);
        write_png(&path, &img).unwrap();
        let back = read_png(&path).unwrap();
        assert_eq!(back.dims(), (5, 3));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= PNG_STEP / 2.0 + 1e-12);
        }
    }

    #[test]
    fn f32_round_trip_and_corruption() {
        let img = Image::from_fn(4, 2, |x, y| x as f64 * 0.25 - y as f64);
        let bytes = encode_f32(&img);
        assert_eq!(bytes.len(), 8 + 4 * 8);
        assert_eq!(decode_f32(&bytes, Path::new("m")).unwrap(), img);
        assert!(decode_f32(&bytes[..bytes.len() - 1], Path::new("m")).is_err());
        assert!(decode_f32(&bytes[..4], Path::new("m")).is_err());
    }

    proptest! {
        #[test]
        fn quantization_error_is_at_most_half_a_step(v in -1.0f64..=1.0) {
            prop_assert!((from_u8(to_u8(v)) - v).abs() <= PNG_STEP / 2.0 + 1e-12);
        }

        #[test]
        fn f32_round_trip_matches_f32_precision(vals in proptest::collection::vec(-10.0f64..10.0, 6)) {
            let img = Image::from_vec(3, 2, vals).unwrap();
            let back = decode_f32(&encode_f32(&img), Path::new("m")).unwrap();
            for (a, b) in img.data().iter().zip(back.data()) {
                prop_assert_eq!(*b, *a as f32 as f64);
            }
        }
    }
}
