//! Raster loading. PNG and PPM go through the `image` crate; files with a
//! `.rgb` or `.raw` extension use this crate's raw layout: little-endian
//! `u32` width, little-endian `u32` height, then `width·height` RGB byte
//! triples row by row.

use std::io::Write;
use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};

fn image_error(path: &Path, msg: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

fn is_raw(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("rgb") || e.eq_ignore_ascii_case("raw"))
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    if is_raw(path) {
        return read_raw_rgb(path);
    }
    let img = image::ImageReader::open(path)
        .map_err(|e| image_error(path, e))?
        .with_guessed_format()
        .map_err(|e| image_error(path, e))?
        .decode()
        .map_err(|e| image_error(path, e))?;
    Ok(img.to_rgb8())
}

pub fn read_raw_rgb(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| image_error(path, e))?;
    if bytes.len() < 8 {
        return Err(image_error(path, "raw header truncated"));
    }
    let width = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes"));
    let height = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    let expected = (width as u64) * (height as u64) * 3;
    if (bytes.len() - 8) as u64 != expected {
        return Err(image_error(
            path,
            format!("{width}x{height} raw image needs {expected} pixel bytes, found {}", bytes.len() - 8),
        ));
    }
    RgbImage::from_raw(width, height, bytes[8..].to_vec()).ok_or_else(|| image_error(path, "bad raw image"))
}

pub fn write_raw_rgb(path: &Path, image: &RgbImage) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&image.width().to_le_bytes())?;
    f.write_all(&image.height().to_le_bytes())?;
    f.write_all(image.as_raw())?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn raw_and_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_fn(3, 2, |x, y| Rgb([x as u8 * 50, y as u8 * 90, 7]));
        let raw = dir.path().join("a.rgb");
        write_raw_rgb(&raw, &img).unwrap();
        assert_eq!(load_rgb(&raw).unwrap(), img);
        let png = dir.path().join("a.png");
        img.save(&png).unwrap();
        assert_eq!(load_rgb(&png).unwrap(), img);
        std::fs::write(dir.path().join("bad.raw"), [1, 0, 0, 0, 1, 0, 0, 0, 9]).unwrap();
        let err = load_rgb(&dir.path().join("bad.raw")).unwrap_err();
        assert!(err.to_string().contains("bad.raw"));
    }
}
