//! Versioned binary ensemble snapshots.
//!
//! Layout, little-endian: magic `WFPS`, u32 version, u32 n, f64 ε, u64 M,
//! f64 time, then per packet `q (n)`, `p (n)`, the row-major upper triangle of
//! G, and A, all f64.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use super::SamplingError;
use crate::dynamics::Wavepacket;

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"WFPS";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub dim: usize,
    pub epsilon: f64,
    pub time: f64,
    pub packets: Vec<Wavepacket>,
}

pub fn write_snapshot<W: Write>(mut w: W, snap: &Snapshot) -> Result<(), SamplingError> {
    let n = snap.dim;
    let d = 2 * n;
    w.write_all(&SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    w.write_all(&(n as u32).to_le_bytes())?;
    w.write_all(&snap.epsilon.to_le_bytes())?;
    w.write_all(&(snap.packets.len() as u64).to_le_bytes())?;
    w.write_all(&snap.time.to_le_bytes())?;
    let mut buf = Vec::with_capacity(8 * (d + d * (d + 1) / 2 + 1));
    for wp in &snap.packets {
        if wp.dim() != n {
            return Err(SamplingError::Snapshot(format!(
                "packet dimension {} in an n = {n} snapshot",
                wp.dim()
            )));
        }
        buf.clear();
        let upper = (0..d).flat_map(|i| (i..d).map(move |j| (i, j)));
        wp.q.iter()
            .chain(wp.p.iter())
            .copied()
            .chain(upper.map(|(i, j)| wp.g[(i, j)]))
            .chain(std::iter::once(wp.a))
            .for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], SamplingError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, SamplingError> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<Snapshot, SamplingError> {
    if read_array::<4, _>(&mut r)? != SNAPSHOT_MAGIC {
        return Err(SamplingError::Snapshot("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != SNAPSHOT_VERSION {
        return Err(SamplingError::Snapshot(format!("unsupported version {version}")));
    }
    let n = u32::from_le_bytes(read_array(&mut r)?) as usize;
    if n == 0 {
        return Err(SamplingError::Snapshot("zero dimension".into()));
    }
    let epsilon = read_f64(&mut r)?;
    let m = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let time = read_f64(&mut r)?;
    let d = 2 * n;
    let mut packets = Vec::with_capacity(m.min(1 << 20));
    for _ in 0..m {
        let q: Vec<f64> = (0..n).map(|_| read_f64(&mut r)).collect::<Result<_, _>>()?;
        let p: Vec<f64> = (0..n).map(|_| read_f64(&mut r)).collect::<Result<_, _>>()?;
        let mut g = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let v = read_f64(&mut r)?;
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        let a = read_f64(&mut r)?;
        packets.push(Wavepacket::new(DVector::from_vec(q), DVector::from_vec(p), g, a, time));
    }
    Ok(Snapshot {
        dim: n,
        epsilon,
        time,
        packets,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{make_ensemble, SamplingConfig};
    use super::*;
    use crate::gaussian::GaussianState;
    use crate::params::DissipationParams;

    #[test]
    fn round_trip() {
        let init = GaussianState::new_1d(0.1, 0.2, [[0.3, 0.1], [0.1, 0.4]]).unwrap();
        let params = DissipationParams::closed(1, 0.25).unwrap();
        let ens = make_ensemble(&init, &params, &SamplingConfig::new(17, 3)).unwrap();
        let snap = ens.to_snapshot();
        let mut bytes = Vec::new();
        write_snapshot(&mut bytes, &snap).unwrap();
        assert_eq!(bytes.len(), 4 + 4 + 4 + 8 + 8 + 8 + 17 * 8 * (2 + 3 + 1));
        assert_eq!(read_snapshot(bytes.as_slice()).unwrap(), snap);
    }

    #[test]
    fn truncated_or_foreign_data_rejected() {
        assert!(read_snapshot(&b"WFG1\x01\x00\x00\x00"[..]).is_err());
        let snap = Snapshot {
            dim: 1,
            epsilon: 0.5,
            time: 0.0,
            packets: vec![Wavepacket::new(
                DVector::zeros(1),
                DVector::zeros(1),
                DMatrix::identity(2, 2),
                1.0,
                0.0,
            )],
        };
        let mut bytes = Vec::new();
        write_snapshot(&mut bytes, &snap).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(read_snapshot(bytes.as_slice()), Err(SamplingError::Io(_))));
    }
}
