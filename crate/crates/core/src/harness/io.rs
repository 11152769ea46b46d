//! Grid dumps and CSV helpers.
//!
//! Grid dump layout, little-endian: magic `WFG1`, u32 version, u32 `N_x`,
//! u32 `N_ξ`, f64 `x_min, x_max, ξ_min, ξ_max`, f64 time, then `N_x·N_ξ`
//! row-major f64 values (ξ fastest).

use std::io::{self, Read, Write};

use crate::sampling::{GridAxis, GridSpec, WignerField};

pub const GRID_DUMP_MAGIC: &[u8; 4] = b"WFG1";
pub const GRID_DUMP_VERSION: u32 = 1;

pub fn write_grid_dump<W: Write>(mut w: W, field: &WignerField) -> io::Result<()> {
    if field.grid.axes.len() != 2 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "grid dumps hold two-dimensional fields",
        ));
    }
    let (x, xi) = (&field.grid.axes[0], &field.grid.axes[1]);
    w.write_all(GRID_DUMP_MAGIC)?;
    w.write_all(&GRID_DUMP_VERSION.to_le_bytes())?;
    for n in [x.points, xi.points] {
        let n = u32::try_from(n).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "axis too long"))?;
        w.write_all(&n.to_le_bytes())?;
    }
    for v in [x.min, x.max, xi.min, xi.max, field.time] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in &field.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_grid_dump<R: Read>(mut r: R) -> io::Result<WignerField> {
    let bad = |msg: &str| io::Error::new(io::ErrorKind::InvalidData, msg.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != GRID_DUMP_MAGIC {
        return Err(bad("not a grid dump"));
    }
    let mut u = [0u8; 4];
    let mut read_u32 = |r: &mut R| -> io::Result<u32> {
        r.read_exact(&mut u)?;
        Ok(u32::from_le_bytes(u))
    };
    let version = read_u32(&mut r)?;
    if version != GRID_DUMP_VERSION {
        return Err(bad(&format!("unsupported grid dump version {version}")));
    }
    let nx = read_u32(&mut r)? as usize;
    let nxi = read_u32(&mut r)? as usize;
    let mut f = [0u8; 8];
    let mut read_f64 = |r: &mut R| -> io::Result<f64> {
        r.read_exact(&mut f)?;
        Ok(f64::from_le_bytes(f))
    };
    let mut head = [0.0; 5];
    for h in head.iter_mut() {
        *h = read_f64(&mut r)?;
    }
    let len = nx.checked_mul(nxi).ok_or_else(|| bad("grid size overflows"))?;
    let mut values = Vec::with_capacity(len.min(1 << 24));
    for _ in 0..len {
        values.push(read_f64(&mut r)?);
    }
    let grid = GridSpec::new(vec![
        GridAxis::new(head[0], head[1], nx),
        GridAxis::new(head[2], head[3], nxi),
    ]);
    Ok(WignerField {
        grid,
        values,
        time: head[4],
    })
}

/// Sidecar CSV with columns `x,xi,w` for plotting tools.
pub fn write_grid_csv<W: Write>(mut w: W, field: &WignerField) -> io::Result<()> {
    writeln!(w, "x,xi,w")?;
    let xs = field.grid.axes[0].coords();
    let xis = field.grid.axes[1].coords();
    for (i, x) in xs.iter().enumerate() {
        for (j, xi) in xis.iter().enumerate() {
            writeln!(
                w,
                "{},{},{}",
                format_sig(*x),
                format_sig(*xi),
                format_sig(field.values[i * xis.len() + j])
            )?;
        }
    }
    w.flush()
}

/// Formats with 9 significant digits, fixed notation for moderate
/// magnitudes and scientific otherwise (like C's `%.9g`).
pub fn format_sig(v: f64) -> String {
    const DIGITS: i32 = 9;
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..DIGITS).contains(&exp) {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, v))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa.to_string()), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_sig(0.032456), "0.032456");
        assert_eq!(format_sig(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig(100.0), "100");
        assert_eq!(format_sig(-2.5e-7), "-2.5e-07");
        assert_eq!(format_sig(123456789012.0), "1.23456789e+11");
        assert_eq!(format_sig(0.0), "0");
        assert_eq!(format_sig(0.0087309), "0.0087309");
    }

    #[test]
    fn grid_dump_round_trip() {
        let grid = GridSpec::new(vec![GridAxis::new(-1.0, 1.0, 3), GridAxis::new(-2.0, 2.0, 4)]);
        let mut field = WignerField::zeros(grid, 1.5);
        for (k, v) in field.values.iter_mut().enumerate() {
            *v = k as f64 - 0.25;
        }
        let mut buf = Vec::new();
        write_grid_dump(&mut buf, &field).unwrap();
        assert_eq!(buf.len(), 4 + 3 * 4 + 5 * 8 + 12 * 8);
        assert_eq!(&buf[..4], b"WFG1");
        assert_eq!(read_grid_dump(buf.as_slice()).unwrap(), field);
        assert!(read_grid_dump(&buf[..buf.len() - 1]).is_err());
        let mut foreign = buf.clone();
        foreign[0] = b'X';
        assert!(read_grid_dump(foreign.as_slice()).is_err());
    }

    #[test]
    fn sidecar_csv_shape() {
        let grid = GridSpec::new(vec![GridAxis::new(0.0, 1.0, 2), GridAxis::new(0.0, 1.0, 3)]);
        let field = WignerField::zeros(grid, 0.0);
        let mut buf = Vec::new();
        write_grid_csv(&mut buf, &field).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert_eq!(text.lines().nth(2).unwrap(), "0,0.5,0");
    }
}
