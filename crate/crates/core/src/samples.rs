//! Sample sets of flattened network (or limit-Gaussian) outputs, plus their
//! on-disk format.
//!
//! Binary layout (little endian), documented here and in the README:
//!   magic  8 bytes  b"NVSAMP01"
//!   dim    u32
//!   n      u64      number of rows
//!   prov   u8       0 = network, 1 = gaussian, 2 = external
//!   idlen  u16      length of the provenance id (0 unless gaussian)
//!   id     idlen bytes, UTF-8
//!   rows   n*dim f64, row-major

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use std::io::{Read, Write};

const MAGIC: &[u8; 8] = b"NVSAMP01";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Network,
    /// Drawn from the Gaussian limit; the id names the kernel it came from.
    Gaussian(String),
    External,
}

impl Provenance {
    fn tag(&self) -> u8 {
        match self {
            Provenance::Network => 0,
            Provenance::Gaussian(_) => 1,
            Provenance::External => 2,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Provenance::Network => "network".into(),
            Provenance::Gaussian(id) => format!("gaussian({id})"),
            Provenance::External => "external".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OutputSampleSet {
    /// N × dim, one draw per row.
    pub rows: DMatrix<f64>,
    pub provenance: Provenance,
}

impl OutputSampleSet {
    pub fn new(rows: DMatrix<f64>, provenance: Provenance) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(Error::Config("sample set must be non-empty".into()));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite sample entry".into()));
        }
        Ok(OutputSampleSet { rows, provenance })
    }

    pub fn n_samples(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        w.write_all(&(self.n_samples() as u64).to_le_bytes())?;
        w.write_all(&[self.provenance.tag()])?;
        let id: &str = match &self.provenance {
            Provenance::Gaussian(id) => id,
            _ => "",
        };
        w.write_all(&(id.len() as u16).to_le_bytes())?;
        w.write_all(id.as_bytes())?;
        let mut buf = Vec::with_capacity(self.dim() * 8);
        for r in 0..self.n_samples() {
            buf.clear();
            for c in 0..self.dim() {
                buf.extend_from_slice(&self.rows[(r, c)].to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Config("not a sample-set file (bad magic)".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let dim = u32::from_le_bytes(b4) as usize;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)?;
        let idlen = u16::from_le_bytes(b2) as usize;
        let mut id = vec![0u8; idlen];
        r.read_exact(&mut id)?;
        let id = String::from_utf8(id)
            .map_err(|_| Error::Config("provenance id is not UTF-8".into()))?;
        let provenance = match tag[0] {
            0 => Provenance::Network,
            1 => Provenance::Gaussian(id),
            2 => Provenance::External,
            t => return Err(Error::Config(format!("unknown provenance tag {t}"))),
        };
        if dim == 0 || n == 0 {
            return Err(Error::Config("empty sample set".into()));
        }
        let mut data = vec![0u8; n * dim * 8];
        r.read_exact(&mut data)?;
        let rows = DMatrix::from_fn(n, dim, |i, j| {
            let off = (i * dim + j) * 8;
            f64::from_le_bytes(data[off..off + 8].try_into().unwrap())
        });
        OutputSampleSet::new(rows, provenance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let rows = DMatrix::from_row_slice(2, 3, &[1.0, -2.5, 3.25, 0.0, 1e-300, 4.0]);
        let set = OutputSampleSet::new(rows, Provenance::Gaussian("layer2".into())).unwrap();
        let mut buf = Vec::new();
        set.write_to(&mut buf).unwrap();
        let back = OutputSampleSet::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.n_samples(), 2);
        assert_eq!(back.dim(), 3);
        assert_eq!(back.provenance, Provenance::Gaussian("layer2".into()));
        assert_eq!(back.rows.as_slice(), set.rows.as_slice());
    }

    #[test]
    fn rejects_garbage() {
        let mut buf = b"NOTSAMPL".to_vec();
        buf.extend_from_slice(&[0u8; 32]);
        assert!(OutputSampleSet::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let rows = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(OutputSampleSet::new(rows, Provenance::External).is_err());
    }
}
