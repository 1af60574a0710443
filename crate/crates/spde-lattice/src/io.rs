//! File formats: flat binary fields with a fixed little-endian header,
//! CSV dumps for small grids, and CSV report tables.
//!
//! Binary layout: `u32 d`, `u32 n`, `u64 seed`, then the `(n−1)^d`
//! interior values as `f64`, all little-endian, lexicographic order with
//! the last axis fastest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, LatticeField};
use crate::lab::ErrorEstimate;

/// Interior-cell count up to which CSV dumps are considered worthwhile.
pub const CSV_LIMIT: usize = 10_000;

pub fn write_field_binary(path: &Path, field: &LatticeField, seed: u64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(field.grid().dim() as u32).to_le_bytes())?;
    w.write_all(&(field.grid().resolution() as u32).to_le_bytes())?;
    w.write_all(&seed.to_le_bytes())?;
    for v in field.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_field_binary(path: &Path) -> Result<(LatticeField, u64)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)
        .map_err(|_| Error::Format("truncated header".into()))?;
    let d = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)
        .map_err(|_| Error::Format("truncated header".into()))?;
    let n = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b8)
        .map_err(|_| Error::Format("truncated header".into()))?;
    let seed = u64::from_le_bytes(b8);
    let grid = GridSpec::new(d, n)?;
    let mut values = Vec::with_capacity(grid.interior_len());
    for _ in 0..grid.interior_len() {
        r.read_exact(&mut b8)
            .map_err(|_| Error::Format("truncated payload".into()))?;
        values.push(f64::from_le_bytes(b8));
    }
    if r.read(&mut b4)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok((LatticeField::from_values(grid, values)?, seed))
}

/// One row per interior cell: index components, then the value.
pub fn write_field_csv(path: &Path, field: &LatticeField) -> Result<()> {
    let grid = field.grid();
    let mut w = BufWriter::new(File::create(path)?);
    for a in 0..grid.dim() {
        write!(w, "i{a},")?;
    }
    writeln!(w, "value")?;
    let mut pos = 0usize;
    let values = field.values();
    let mut err = None;
    grid.for_each_interior(|idx| {
        if err.is_some() {
            return;
        }
        let row = idx
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(",");
        if let Err(e) = writeln!(w, "{row},{:.17e}", values[pos]) {
            err = Some(e);
        }
        pos += 1;
    });
    if let Some(e) = err {
        return Err(e.into());
    }
    w.flush()?;
    Ok(())
}

pub fn write_estimates_csv(path: &Path, estimates: &[ErrorEstimate]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "n,p,estimate,stderr")?;
    for e in estimates {
        writeln!(w, "{},{},{:.17e},{:.17e}", e.n, e.p, e.estimate, e.stderr)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn binary_roundtrip() {
        let dir = std::env::temp_dir().join("spde-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("field.bin");
        let grid = GridSpec::new(2, 4).unwrap();
        let field =
            LatticeField::from_fn(grid, |i| i[0] as f64 + 0.125 * i[1] as f64 - 3.5);
        write_field_binary(&path, &field, 0xdead_beef).unwrap();
        let expected_len = 4 + 4 + 8 + 8 * grid.interior_len();
        assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, expected_len);
        let (back, seed) = read_field_binary(&path).unwrap();
        assert_eq!(seed, 0xdead_beef);
        assert_eq!(back.grid(), &grid);
        for (a, b) in back.values().iter().zip(field.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 0.0);
        }
    }

    #[test]
    fn binary_rejects_corruption() {
        let dir = std::env::temp_dir().join("spde-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("short.bin");
        std::fs::write(&path, [1u8, 0, 0, 0, 4, 0]).unwrap();
        assert!(matches!(
            read_field_binary(&path),
            Err(Error::Format(_))
        ));
        let grid = GridSpec::new(1, 3).unwrap();
        let field = LatticeField::zeros(grid);
        let path = dir.join("trailing.bin");
        write_field_binary(&path, &field, 7).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_field_binary(&path),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn csv_outputs() {
        let dir = std::env::temp_dir().join("spde-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("field.csv");
        let grid = GridSpec::new(2, 3).unwrap();
        let field = LatticeField::from_fn(grid, |i| (i[0] * 10 + i[1]) as f64);
        write_field_csv(&path, &field).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "i0,i1,value");
        assert_eq!(lines.len(), 1 + grid.interior_len());
        assert!(lines[1].starts_with("1,1,"));

        let path = dir.join("report.csv");
        let est = vec![ErrorEstimate {
            n: 8,
            p: 2.0,
            estimate: 0.5,
            stderr: 0.01,
        }];
        write_estimates_csv(&path, &est).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("n,p,estimate,stderr\n8,2,"));
    }
}
