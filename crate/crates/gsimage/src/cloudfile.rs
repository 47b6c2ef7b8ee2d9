//! Full-precision native cloud dump (`.g2cl`).
//!
//! ```text
//! magic "G2CL" | version u8 | parameterization u8 | height u32 | width u32
//! | budget u32 | count u32 | count × 9 f64
//! ```
//!
//! Each record is `x, y, p0, p1, p2, r, g, b, s` where `p*` are the raw
//! covariance parameters of the stored parameterization and `s` is the
//! filter variance. All integers and floats are little-endian.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use gsimage_core::{GaussianCloud, Parameterization};

pub const MAGIC: [u8; 4] = *b"G2CL";
pub const VERSION: u8 = 1;
const HEADER: usize = 22;
const RECORD: usize = 9 * 8;

/// A cloud together with the image size it was fitted to.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudFile {
    pub height: usize,
    pub width: usize,
    pub cloud: GaussianCloud,
}

impl CloudFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let c = &self.cloud;
        let mut out = Vec::with_capacity(HEADER + RECORD * c.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(c.kind().as_byte());
        for v in [self.height, self.width, c.max_budget(), c.len()] {
            out.extend_from_slice(&u32::try_from(v).context("value exceeds u32")?.to_le_bytes());
        }
        for i in 0..c.len() {
            let fields = c.positions()[i]
                .iter()
                .chain(&c.cov_params()[i])
                .chain(&c.colors()[i])
                .chain(std::iter::once(&c.filter_variances()[i]));
            for v in fields {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        ensure!(bytes.len() >= HEADER, "cloud file truncated");
        ensure!(bytes[..4] == MAGIC, "not a cloud file");
        ensure!(bytes[4] == VERSION, "unsupported cloud file version {}", bytes[4]);
        let Some(kind) = Parameterization::from_byte(bytes[5]) else {
            bail!("unknown parameterization tag {}", bytes[5]);
        };
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (height, width, budget, count) = (u32_at(6), u32_at(10), u32_at(14), u32_at(18));
        let expected = count
            .checked_mul(RECORD)
            .and_then(|n| n.checked_add(HEADER))
            .context("cloud file too large")?;
        ensure!(bytes.len() == expected, "cloud file has {} bytes, expected {expected}", bytes.len());

        let mut positions = Vec::with_capacity(count);
        let mut covs = Vec::with_capacity(count);
        let mut colors = Vec::with_capacity(count);
        let mut filters = Vec::with_capacity(count);
        for rec in bytes[HEADER..].chunks_exact(RECORD) {
            let f: Vec<f64> = rec
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            positions.push([f[0], f[1]]);
            covs.push([f[2], f[3], f[4]]);
            colors.push([f[5], f[6], f[7]]);
            filters.push(f[8]);
        }
        let cloud = GaussianCloud::from_parts(kind, budget, positions, covs, colors, filters)?;
        Ok(Self { height, width, cloud })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("parsing {}", path.display()))
    }
}
