//! Field serialization.
//!
//! Binary layout, all little-endian: `u64` dimension, then `f64` lower and
//! upper bound per axis, then `u64` cell count per axis, then one `f64` per
//! cell in row-major order (last axis fastest), with NaN outside the mask.

use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{Grid, Region, ScalarField, MAX_DIM};

pub fn write_binary(field: &ScalarField, mut out: impl Write) -> Result<()> {
    let grid = field.grid();
    out.write_all(&(grid.dim() as u64).to_le_bytes())?;
    for k in 0..grid.dim() {
        out.write_all(&grid.lower()[k].to_le_bytes())?;
        out.write_all(&grid.upper()[k].to_le_bytes())?;
    }
    for &n in grid.cells() {
        out.write_all(&(n as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(grid.len() * 8);
    for (i, &v) in field.values().iter().enumerate() {
        let v = if field.region().contains(i) { v } else { f64::NAN };
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_u64(src: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    src.read_exact(&mut b)
        .map_err(|_| Error::Format("truncated header".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(src: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(read_u64(src)?))
}

/// Reads a field written by [`write_binary`]; the mask is the set of
/// non-NaN cells.
pub fn read_binary(mut src: impl Read) -> Result<ScalarField> {
    let dim = read_u64(&mut src)? as usize;
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::Format(format!("dimension {dim}")));
    }
    let mut lower = Vec::with_capacity(dim);
    let mut upper = Vec::with_capacity(dim);
    for _ in 0..dim {
        lower.push(read_f64(&mut src)?);
        upper.push(read_f64(&mut src)?);
    }
    let mut cells = Vec::with_capacity(dim);
    for _ in 0..dim {
        cells.push(read_u64(&mut src)? as usize);
    }
    let grid = Grid::new(lower, upper, cells)?;
    let mut bytes = vec![0u8; grid.len() * 8];
    src.read_exact(&mut bytes)
        .map_err(|_| Error::Format("truncated values".into()))?;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mask: Vec<bool> = values.iter().map(|v| !v.is_nan()).collect();
    let region = Region::from_mask(grid, mask)?;
    let values = values.into_iter().map(|v| if v.is_nan() { 0.0 } else { v }).collect();
    ScalarField::new(Arc::new(region), values)
}

/// CSV with one row per mask cell: integer index columns `i0..`, center
/// coordinates `x0..`, and `value`, all numbers printed with 17 significant
/// digits.
pub fn write_csv(field: &ScalarField, mut out: impl Write) -> Result<()> {
    let grid = field.grid();
    let d = grid.dim();
    let mut header: Vec<String> = (0..d).map(|k| format!("i{k}")).collect();
    header.extend((0..d).map(|k| format!("x{k}")));
    header.push("value".into());
    writeln!(out, "{}", header.join(","))?;
    let mut multi = vec![0; d];
    let mut x = vec![0.0; d];
    for i in field.region().cells() {
        grid.multi_index(i, &mut multi);
        grid.center_into(i, &mut x);
        let mut row: Vec<String> = multi.iter().map(|m| m.to_string()).collect();
        row.extend(x.iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(field.values()[i]));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// [`write_csv`] restricted to the cells whose index along `axis` equals
/// `index`.
pub fn write_slice_csv(field: &ScalarField, axis: usize, index: usize, mut out: impl Write) -> Result<()> {
    let grid = field.grid();
    let d = grid.dim();
    if axis >= d || index >= grid.cells()[axis] {
        return Err(Error::InvalidParameter(format!("no slice {index} along axis {axis}")));
    }
    let mut header: Vec<String> = (0..d).map(|k| format!("i{k}")).collect();
    header.extend((0..d).map(|k| format!("x{k}")));
    header.push("value".into());
    writeln!(out, "{}", header.join(","))?;
    let mut multi = vec![0; d];
    let mut x = vec![0.0; d];
    for i in field.region().cells() {
        grid.multi_index(i, &mut multi);
        if multi[axis] != index {
            continue;
        }
        grid.center_into(i, &mut x);
        let mut row: Vec<String> = multi.iter().map(|m| m.to_string()).collect();
        row.extend(x.iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(field.values()[i]));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Locale-independent formatting with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip_keeps_mask_and_values() {
        let grid = Grid::cube(2, -1.0, 1.0, 9).unwrap();
        let r = Arc::new(Region::ball(grid, vec![0.0, 0.0], 0.8).unwrap());
        let f = ScalarField::from_fn(r.clone(), |x| x[0].exp() - x[1]).unwrap();
        let mut buf = Vec::new();
        write_binary(&f, &mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 2 * 16 + 2 * 8 + 81 * 8);
        let g = read_binary(&buf[..]).unwrap();
        assert_eq!(g.region().mask(), r.mask());
        for i in r.cells() {
            assert_eq!(g.values()[i].to_bits(), f.values()[i].to_bits());
        }
        assert!(read_binary(&buf[..20]).is_err());
    }

    #[test]
    fn csv_numbers_round_trip() {
        let v = 0.1 + 0.2;
        assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        let grid = Grid::cube(1, 0.0, 1.0, 3).unwrap();
        let f = ScalarField::constant(Arc::new(Region::full(grid)), 2.0);
        let mut buf = Vec::new();
        write_csv(&f, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("i0,x0,value\n0,"));
        let plane = Grid::cube(2, 0.0, 1.0, 4).unwrap();
        let g = ScalarField::from_fn(Arc::new(Region::full(plane)), |x| x[0]).unwrap();
        let mut buf = Vec::new();
        write_slice_csv(&g, 1, 2, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().skip(1).all(|l| l.split(',').nth(1) == Some("2")));
        assert!(write_slice_csv(&g, 2, 0, Vec::new()).is_err());
    }
}
