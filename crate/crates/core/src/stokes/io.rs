//! Flat little-endian dump of a [`StaggeredField`]: a header of `n`
//! (u64), `h` and the three origin coordinates (f64), then the three face
//! arrays and the cell pressures as f64, each x-fastest.

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::{Grid, StaggeredField};

const MAGIC: &[u8; 8] = b"PLFIELD1";

pub fn write_field<W: Write>(f: &StaggeredField, mut w: W) -> Result<()> {
    let g = &f.grid;
    w.write_all(MAGIC)?;
    w.write_all(&(g.n as u64).to_le_bytes())?;
    for v in [g.h, g.origin[0], g.origin[1], g.origin[2]] {
        w.write_all(&v.to_le_bytes())?;
    }
    for arr in f.u.iter().chain(std::iter::once(&f.p)) {
        let mut buf = Vec::with_capacity(arr.len() * 8);
        for v in arr {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_field<R: Read>(mut r: R) -> Result<StaggeredField> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse("not a field dump".into()));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    if !(2..=4096).contains(&n) {
        return Err(Error::Parse(format!("implausible grid size {n}")));
    }
    let mut hdr = [0.0; 4];
    for v in hdr.iter_mut() {
        r.read_exact(&mut b8)?;
        *v = f64::from_le_bytes(b8);
    }
    let g = Grid { n, h: hdr[0], origin: [hdr[1], hdr[2], hdr[3]] };
    let mut f = StaggeredField::zeros(&g);
    let mut read = |arr: &mut Vec<f64>| -> Result<()> {
        let mut buf = vec![0u8; arr.len() * 8];
        r.read_exact(&mut buf)?;
        for (v, c) in arr.iter_mut().zip(buf.chunks_exact(8)) {
            *v = f64::from_le_bytes(c.try_into().unwrap());
        }
        Ok(())
    };
    for a in 0..3 {
        read(&mut f.u[a])?;
    }
    read(&mut f.p)?;
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let g = Grid::new(3, 0.7);
        let mut f = StaggeredField::zeros(&g);
        for (i, v) in f.u[1].iter_mut().enumerate() {
            *v = (i as f64).sin() * 1e-7;
        }
        f.p[5] = -3.25;
        let mut bytes = Vec::new();
        write_field(&f, &mut bytes).unwrap();
        assert_eq!(bytes.len(), 8 + 8 + 32 + 8 * (3 * 36 + 27));
        let back = read_field(bytes.as_slice()).unwrap();
        assert_eq!(back.grid, g);
        assert_eq!(back.u, f.u);
        assert_eq!(back.p, f.p);
        assert!(read_field(&bytes[..20]).is_err());
    }
}
