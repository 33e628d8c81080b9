//! `ADAR` embedding files: magic, u32 version, u64 rows, u64 dim, then
//! row-major little-endian f32 values.

use std::io::{Read, Write};

use crate::binio;
use crate::encoder::Table;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ADAR";
pub const EMBEDDING_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl EmbeddingTable {
    /// Narrows a table to 32-bit precision.
    pub fn from_table(t: &Table) -> Self {
        Self {
            rows: t.rows,
            dim: t.cols,
            data: t.data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        if self.data.len() != self.rows * self.dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {}x{} table",
                self.data.len(),
                self.rows,
                self.dim
            )));
        }
        w.write_all(MAGIC)?;
        binio::write_u32(&mut w, EMBEDDING_VERSION)?;
        binio::write_u64(&mut w, self.rows as u64)?;
        binio::write_u64(&mut w, self.dim as u64)?;
        binio::write_f32s(&mut w, self.data.iter().copied())?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        binio::expect_magic(&mut r, MAGIC)?;
        let version = binio::read_u32(&mut r, "version")?;
        if version != EMBEDDING_VERSION {
            return Err(Error::Version {
                found: version,
                expected: EMBEDDING_VERSION,
            });
        }
        let rows = binio::read_u64(&mut r, "row count")? as usize;
        let dim = binio::read_u64(&mut r, "dimension")? as usize;
        let n = rows
            .checked_mul(dim)
            .ok_or_else(|| Error::Format(format!("{rows}x{dim} table overflows")))?;
        let data = binio::read_f32s(&mut r, n, "embedding values")?;
        binio::expect_eof(&mut r)?;
        Ok(Self { rows, dim, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EmbeddingTable {
        EmbeddingTable::from_table(&Table {
            rows: 3,
            cols: 2,
            data: vec![0.1, -2.5, 1e-8, 3.0, 7.25, -0.0],
        })
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let t = sample();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 8 + 8 + 6 * 4);
        assert_eq!(&buf[..4], b"ADAR");
        let back = EmbeddingTable::read_from(&buf[..]).unwrap();
        assert_eq!((back.rows, back.dim), (3, 2));
        let bits = |t: &EmbeddingTable| t.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&t));
        assert_eq!(back.row(1), &[1e-8f32, 3.0]);
    }

    #[test]
    fn truncation_and_version() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        for cut in [2, 10, buf.len() - 1] {
            assert!(matches!(
                EmbeddingTable::read_from(&buf[..cut]),
                Err(Error::Truncated(_))
            ));
        }
        let mut wrong = buf.clone();
        wrong[4] = 2;
        assert!(matches!(
            EmbeddingTable::read_from(&wrong[..]),
            Err(Error::Version {
                found: 2,
                expected: 1
            })
        ));
        let mut trailing = buf;
        trailing.push(0);
        assert!(EmbeddingTable::read_from(&trailing[..]).is_err());
    }
}
