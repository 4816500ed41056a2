//! Binary checkpoints written at epoch boundaries.
//!
//! Layout (little-endian):
//!
//! ```text
//! "MCRN" | u32 version | u64 config hash | u32 epochs done
//! u32 len + config TOML
//! u32 n_layers + u32 sizes | u32 n + f32 params
//! u64 adam step | f32 first moments | f32 second moments
//! u8 has_bank [u32 k, dim, n_source, n_target | f32 rows]
//! 32-byte rng seed | u64 stream | u128 word position
//! ```
//!
//! Parameters and optimizer moments are kept f32-representable in memory, so
//! they survive the round trip exactly. Bank rows are rebuilt from clustering
//! at the start of every epoch and only stored for inspection.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::encoder::{Adam, Encoder};
use crate::error::{Error, Result};
use crate::memory::CentroidBank;

const MAGIC: &[u8; 4] = b"MCRN";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub config: ExperimentConfig,
    pub epochs_done: usize,
    pub encoder: Encoder,
    pub adam: Adam,
    pub bank: Option<CentroidBank>,
    pub rng: RngState,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f32s(out: &mut Vec<u8>, xs: &[f64]) -> Result<()> {
    put_u32(out, xs.len())?;
    for &x in xs {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated: wanted {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.array()?) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.array()?))
    }

    fn f32s(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()?;
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        put_u32(&mut out, self.epochs_done)?;

        let toml = self.config.to_toml_string();
        put_u32(&mut out, toml.len())?;
        out.extend_from_slice(toml.as_bytes());

        let sizes = self.encoder.sizes();
        put_u32(&mut out, sizes.len())?;
        for &s in sizes {
            put_u32(&mut out, s)?;
        }
        put_f32s(&mut out, self.encoder.params())?;

        out.extend_from_slice(&self.adam.step.to_le_bytes());
        put_f32s(&mut out, &self.adam.first_moment)?;
        put_f32s(&mut out, &self.adam.second_moment)?;

        match &self.bank {
            None => out.push(0),
            Some(bank) => {
                out.push(1);
                put_u32(&mut out, bank.k())?;
                put_u32(&mut out, bank.dim())?;
                put_u32(&mut out, bank.n_classes(crate::Domain::Source))?;
                put_u32(&mut out, bank.n_classes(crate::Domain::Target))?;
                put_f32s(&mut out, bank.rows())?;
            }
        }

        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut c = Cursor { buf, pos: 0 };
        if c.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(c.array()?);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let config_hash = c.u64()?;
        let epochs_done = c.u32()?;

        let toml_len = c.u32()?;
        let toml = std::str::from_utf8(c.take(toml_len)?)
            .map_err(|e| Error::Checkpoint(format!("config text is not UTF-8: {e}")))?;
        let config = ExperimentConfig::from_toml_str(toml)?;
        if config.hash() != config_hash {
            return Err(Error::Checkpoint("embedded config does not match its hash".into()));
        }

        let n_layers = c.u32()?;
        let sizes = (0..n_layers).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        let encoder = Encoder::from_params(&sizes, c.f32s()?)?;

        let step = c.u64()?;
        let first_moment = c.f32s()?;
        let second_moment = c.f32s()?;
        if first_moment.len() != encoder.num_params() || second_moment.len() != encoder.num_params() {
            return Err(Error::Checkpoint("optimizer state does not match encoder".into()));
        }
        let adam = Adam {
            config: config.training.adam,
            first_moment,
            second_moment,
            step,
        };

        let bank = match c.u8()? {
            0 => None,
            1 => {
                let (k, dim, ns, nt) = (c.u32()?, c.u32()?, c.u32()?, c.u32()?);
                Some(CentroidBank::from_rows(k, dim, ns, nt, c.f32s()?)?)
            }
            f => return Err(Error::Checkpoint(format!("bad bank flag {f}"))),
        };

        let rng = RngState {
            seed: c.array()?,
            stream: c.u64()?,
            word_pos: c.u128()?,
        };
        if c.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - c.pos)));
        }
        Ok(Checkpoint {
            config_hash,
            config,
            epochs_done,
            encoder,
            adam,
            bank,
            rng,
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    /// Writes to a sibling temp file and renames, so a crash never leaves a
    /// half-written checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    fn sample() -> Checkpoint {
        let config = ExperimentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let encoder = Encoder::new(&config.encoder_sizes(), &mut rng).unwrap();
        let adam = Adam::new(config.training.adam, encoder.num_params());
        rng.next_u64();
        Checkpoint {
            config_hash: config.hash(),
            config,
            epochs_done: 3,
            encoder,
            adam,
            bank: Some(CentroidBank::from_rows(2, 2, 1, 1, vec![1.0, 0.0, 0.0, 1.0, 0.0, -1.0, -1.0, 0.0]).unwrap()),
            rng: RngState::capture(&rng),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rng_resumes_mid_stream() {
        let mut a = ChaCha8Rng::seed_from_u64(1);
        a.set_stream(9);
        for _ in 0..37 {
            a.next_u32();
        }
        let mut b = RngState::capture(&a).restore();
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn truncated_and_corrupt_files_are_rejected() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Checkpoint(_))), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut hash = bytes;
        hash[8] ^= 1;
        assert!(Checkpoint::from_bytes(&hash).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let ck = sample();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }
}
