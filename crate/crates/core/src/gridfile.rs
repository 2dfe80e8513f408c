//! Flat binary container for named 2-D planes: a short text header
//! followed by little-endian f64 planes in row-major order and an optional
//! byte mask.
//!
//! ```text
//! skyflow-grid 1
//! shape <rows> <cols>
//! plane <name> <unit>
//! ...
//! mask <0|1>
//! end
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{invalid, Error, Result};

const MAGIC: &str = "skyflow-grid 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub name: String,
    pub unit: String,
    pub data: Array2<f64>,
}

impl Plane {
    pub fn new(name: &str, unit: &str, data: Array2<f64>) -> Self {
        Plane {
            name: name.into(),
            unit: unit.into(),
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridFile {
    pub planes: Vec<Plane>,
    pub mask: Option<Array2<bool>>,
}

impl GridFile {
    pub fn plane(&self, name: &str) -> Option<&Array2<f64>> {
        self.planes.iter().find(|p| p.name == name).map(|p| &p.data)
    }

    fn shape(&self) -> Result<(usize, usize)> {
        let shape = self
            .planes
            .first()
            .map(|p| p.data.dim())
            .or(self.mask.as_ref().map(|m| m.dim()))
            .ok_or_else(|| Error::InvalidInput("grid file without planes".into()))?;
        if self.planes.iter().any(|p| p.data.dim() != shape) || self.mask.as_ref().is_some_and(|m| m.dim() != shape) {
            return invalid("planes differ in shape");
        }
        for p in &self.planes {
            if p.name.is_empty() || p.name.contains(char::is_whitespace) || p.unit.contains(char::is_whitespace) {
                return invalid(format!("plane name or unit `{} {}` must be a single token", p.name, p.unit));
            }
        }
        Ok(shape)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let (rows, cols) = self.shape()?;
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "shape {rows} {cols}")?;
        for p in &self.planes {
            let unit = if p.unit.is_empty() { "1" } else { p.unit.as_str() };
            writeln!(w, "plane {} {}", p.name, unit)?;
        }
        writeln!(w, "mask {}", u8::from(self.mask.is_some()))?;
        writeln!(w, "end")?;
        for p in &self.planes {
            for v in p.data.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        if let Some(m) = &self.mask {
            let bytes: Vec<u8> = m.iter().map(|&b| u8::from(b)).collect();
            w.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        let mut next = |r: &mut BufReader<_>| -> Result<String> {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Format("truncated grid header".into()));
            }
            Ok(line.trim_end().to_string())
        };
        if next(&mut r)? != MAGIC {
            return Err(Error::Format("not a skyflow grid file".into()));
        }
        let shape = next(&mut r)?;
        let dims: Vec<usize> = shape
            .strip_prefix("shape ")
            .map(|s| s.split_whitespace().filter_map(|t| t.parse().ok()).collect())
            .unwrap_or_default();
        if dims.len() != 2 {
            return Err(Error::Format(format!("bad shape line `{shape}`")));
        }
        let (rows, cols) = (dims[0], dims[1]);
        let mut names = Vec::new();
        let has_mask;
        loop {
            let l = next(&mut r)?;
            let tok: Vec<&str> = l.split_whitespace().collect();
            match tok.as_slice() {
                ["plane", name, unit] => names.push((name.to_string(), unit.to_string())),
                ["mask", flag] => {
                    has_mask = *flag == "1";
                    break;
                }
                _ => return Err(Error::Format(format!("bad header line `{l}`"))),
            }
        }
        if next(&mut r)? != "end" {
            return Err(Error::Format("missing header terminator".into()));
        }
        let n = rows * cols;
        let mut planes = Vec::with_capacity(names.len());
        let mut buf = vec![0u8; n * 8];
        for (name, unit) in names {
            r.read_exact(&mut buf)?;
            let v: Vec<f64> = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let data = Array2::from_shape_vec((rows, cols), v).map_err(|e| Error::Format(e.to_string()))?;
            planes.push(Plane { name, unit, data });
        }
        let mask = if has_mask {
            let mut m = vec![0u8; n];
            r.read_exact(&mut m)?;
            Some(Array2::from_shape_vec((rows, cols), m.into_iter().map(|b| b != 0).collect()).map_err(|e| Error::Format(e.to_string()))?)
        } else {
            None
        };
        Ok(GridFile { planes, mask })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        GridFile::read_from(&mut std::fs::File::open(path)?)
    }

    /// Long-format CSV with one row per pixel: row, col, then each plane
    /// and the mask when present.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let (rows, cols) = self.shape()?;
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["row".to_string(), "col".to_string()];
        header.extend(self.planes.iter().map(|p| p.name.clone()));
        if self.mask.is_some() {
            header.push("valid".into());
        }
        w.write_record(&header)?;
        for i in 0..rows {
            for j in 0..cols {
                let mut rec = vec![i.to_string(), j.to_string()];
                rec.extend(self.planes.iter().map(|p| format!("{:e}", p.data[(i, j)])));
                if let Some(m) = &self.mask {
                    rec.push(u8::from(m[(i, j)]).to_string());
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
