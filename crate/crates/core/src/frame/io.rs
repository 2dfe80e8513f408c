//! PNG frames and CSV time series.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use ndarray::Array2;

use crate::error::{invalid, Error, Result};

/// Reads any image as 16-bit luma intensities.
pub fn read_gray(path: &Path) -> Result<Array2<f64>> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let buf = img.into_luma16();
    Ok(Array2::from_shape_fn((h, w), |(r, c)| buf.get_pixel(c as u32, r as u32)[0] as f64))
}

/// Reads a 16-bit grayscale PNG. 8-bit inputs are rejected so that a
/// silent rescale never happens.
pub fn read_gray16(path: &Path) -> Result<Array2<f64>> {
    let img = image::open(path)?;
    match img {
        image::DynamicImage::ImageLuma16(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            Ok(Array2::from_shape_fn((h, w), |(r, c)| buf.get_pixel(c as u32, r as u32)[0] as f64))
        }
        other => Err(Error::Format(format!("{}: expected 16-bit grayscale, found {:?}", path.display(), other.color()))),
    }
}

/// Reads an 8-bit image as three channel grids (R, G, B).
pub fn read_rgb8(path: &Path) -> Result<[Array2<f64>; 3]> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let ch = |k: usize| Array2::from_shape_fn((h, w), |(r, c)| img.get_pixel(c as u32, r as u32)[k] as f64);
    Ok([ch(0), ch(1), ch(2)])
}

fn to_u16(v: f64) -> u16 {
    v.round().clamp(0.0, 65535.0) as u16
}

/// Writes intensities as a 16-bit grayscale PNG, rounding and clamping.
pub fn write_gray16(path: &Path, pixels: &Array2<f64>) -> Result<()> {
    let (h, w) = pixels.dim();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(w as u32, h as u32, |c, r| Luma([to_u16(pixels[(r as usize, c as usize)])]));
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn write_gray8(path: &Path, pixels: &Array2<u8>) -> Result<()> {
    let (h, w) = pixels.dim();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_fn(w as u32, h as u32, |c, r| Luma([pixels[(r as usize, c as usize)]]));
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn write_rgb8(path: &Path, channels: &[Array2<f64>; 3]) -> Result<()> {
    let (h, w) = channels[0].dim();
    let px = |k: usize, r: u32, c: u32| channels[k][(r as usize, c as usize)].round().clamp(0.0, 255.0) as u8;
    let buf: ImageBuffer<image::Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_fn(w as u32, h as u32, |c, r| image::Rgb([px(0, r, c), px(1, r, c), px(2, r, c)]));
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// PNG files in `dir` whose stem parses as a unix timestamp, in time order.
pub fn list_timestamped(dir: &Path, extension: &str) -> Result<Vec<(i64, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(extension) {
            continue;
        }
        if let Some(ts) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<i64>().ok()) {
            out.push((ts, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Rows of numeric columns from a headerless or headed CSV file. A first
/// row that does not parse as numbers is treated as a header.
pub fn read_numeric_csv(path: &Path, columns: usize) -> Result<Vec<Vec<f64>>> {
    let file = File::open(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(BufReader::new(file));
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() < columns {
            return invalid(format!("{}: line {} has {} columns, need {}", path.display(), i + 1, rec.len(), columns));
        }
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().take(columns).map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if i == 0 => continue,
            Err(e) => return invalid(format!("{}: line {}: {e}", path.display(), i + 1)),
        }
    }
    Ok(rows)
}

/// Pyranometer samples as (unix seconds, W/m^2).
pub fn read_pyranometer(path: &Path) -> Result<Vec<(f64, f64)>> {
    Ok(read_numeric_csv(path, 2)?.into_iter().map(|r| (r[0], r[1])).collect())
}

/// Sun position samples as (unix seconds, elevation deg, azimuth deg).
pub fn read_positions(path: &Path) -> Result<Vec<(f64, f64, f64)>> {
    Ok(read_numeric_csv(path, 3)?.into_iter().map(|r| (r[0], r[1], r[2])).collect())
}

/// Writes rows of numbers under a header line.
pub fn write_numeric_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    writeln!(f, "{}", header.join(","))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(f, "{}", line.join(","))?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray16_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.png");
        let img = Array2::from_shape_fn((5, 7), |(r, c)| (r * 1000 + c * 7) as f64);
        write_gray16(&p, &img).unwrap();
        assert_eq!(read_gray16(&p).unwrap(), img);
        assert_eq!(read_gray(&p).unwrap(), img);
    }

    #[test]
    fn csv_with_and_without_header() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        std::fs::write(&a, "unix,ghi\n1,2.5\n2,3.5\n").unwrap();
        assert_eq!(read_pyranometer(&a).unwrap(), vec![(1.0, 2.5), (2.0, 3.5)]);
        let b = dir.path().join("b.csv");
        std::fs::write(&b, "1,10,20\n2,11,21\n").unwrap();
        assert_eq!(read_positions(&b).unwrap().len(), 2);
        std::fs::write(&b, "1,x,20\n2,11,21\n3,q,1\n").unwrap();
        assert!(read_positions(&b).is_err());
    }

    #[test]
    fn timestamped_listing_sorted() {
        let dir = tempfile::tempdir().unwrap();
        for t in [30, 10, 20] {
            write_gray16(&dir.path().join(format!("{t}.png")), &Array2::zeros((2, 2))).unwrap();
        }
        std::fs::write(dir.path().join("notes.png"), b"x").unwrap();
        let l = list_timestamped(dir.path(), "png").unwrap();
        assert_eq!(l.iter().map(|x| x.0).collect::<Vec<_>>(), vec![10, 20, 30]);
    }
}
