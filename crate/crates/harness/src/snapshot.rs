//! Binary snapshot files.
//!
//! All integers and floats are little-endian.
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 6    | magic `HSGSNP`                          |
//! | 6      | 2    | u16 format version (1)                  |
//! | 8      | 4    | u32 dimension `d`                       |
//! | 12     | 4    | u32 flags (bit 0: collision records)    |
//! | 16     | 8    | u64 particle count `N`                  |
//! | 24     | 8    | f64 diameter `eps`                      |
//! | 32     | 8    | f64 time                                |
//! | 40     | 8    | u64 record count `R`                    |
//! | 48     | -    | `N` particles: `d` f64 of x, `d` of v   |
//! | -      | -    | `R` records: f64 time, u64 i, u64 j,    |
//! |        |      | `d` f64 omega, then pre and post        |
//! |        |      | velocities (4 `d` f64)                  |

use bglab_core::dynamics::CollisionRecord;
use bglab_core::sampler::Configuration;
use bglab_core::torus::{ParticleState, VecD};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 6] = b"HSGSNP";
pub const VERSION: u16 = 1;
pub const FLAG_RECORDS: u32 = 1;
const HEADER_LEN: usize = 48;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a snapshot file")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    Version(u16),
    #[error("snapshot has dimension {found}, expected {expected}")]
    Dimension { found: u32, expected: usize },
    #[error("snapshot truncated")]
    Truncated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot<const D: usize> {
    pub config: Configuration<D>,
    pub time: f64,
    pub records: Vec<CollisionRecord<D>>,
}

impl<const D: usize> Snapshot<D> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.config.len();
        let mut b = Vec::with_capacity(HEADER_LEN + n * 16 * D + self.records.len() * (24 + 40 * D));
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&(D as u32).to_le_bytes());
        let flags = if self.records.is_empty() { 0 } else { FLAG_RECORDS };
        b.extend_from_slice(&flags.to_le_bytes());
        b.extend_from_slice(&(n as u64).to_le_bytes());
        b.extend_from_slice(&self.config.eps.to_le_bytes());
        b.extend_from_slice(&self.time.to_le_bytes());
        b.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        let put = |b: &mut Vec<u8>, v: &VecD<D>| {
            for x in v.0 {
                b.extend_from_slice(&x.to_le_bytes());
            }
        };
        for p in &self.config.particles {
            put(&mut b, &p.x);
            put(&mut b, &p.v);
        }
        for r in &self.records {
            b.extend_from_slice(&r.time.to_le_bytes());
            b.extend_from_slice(&(r.pair.0 as u64).to_le_bytes());
            b.extend_from_slice(&(r.pair.1 as u64).to_le_bytes());
            for v in [&r.omega, &r.pre.0, &r.pre.1, &r.post.0, &r.post.1] {
                put(&mut b, v);
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SnapshotError> {
        let mut r = Reader { b: bytes, at: 0 };
        if r.take(6)? != MAGIC {
            return Err(SnapshotError::BadMagic);
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
        if version != VERSION {
            return Err(SnapshotError::Version(version));
        }
        let d = r.u32()?;
        if d as usize != D {
            return Err(SnapshotError::Dimension { found: d, expected: D });
        }
        let _flags = r.u32()?;
        let n = r.u64()? as usize;
        let eps = r.f64()?;
        let time = r.f64()?;
        let nrec = r.u64()? as usize;
        let mut particles = Vec::with_capacity(n.min(bytes.len()));
        for _ in 0..n {
            let x = r.vec::<D>()?;
            let v = r.vec::<D>()?;
            particles.push(ParticleState { x, v });
        }
        let mut records = Vec::with_capacity(nrec.min(bytes.len()));
        for _ in 0..nrec {
            let time = r.f64()?;
            let pair = (r.u64()? as usize, r.u64()? as usize);
            let omega = r.vec::<D>()?;
            let pre = (r.vec::<D>()?, r.vec::<D>()?);
            let post = (r.vec::<D>()?, r.vec::<D>()?);
            records.push(CollisionRecord {
                time,
                pair,
                omega,
                pre,
                post,
            });
        }
        if r.at != bytes.len() {
            return Err(SnapshotError::Truncated);
        }
        Ok(Self {
            config: Configuration::new(particles, eps),
            time,
            records,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), SnapshotError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn read(path: &Path) -> Result<Self, SnapshotError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        let s = self.b.get(self.at..self.at + n).ok_or(SnapshotError::Truncated)?;
        self.at += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, SnapshotError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, SnapshotError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn vec<const D: usize>(&mut self) -> Result<VecD<D>, SnapshotError> {
        let mut v = [0.0; D];
        for x in &mut v {
            *x = self.f64()?;
        }
        Ok(VecD(v))
    }
}
