//! Head checkpoint:
//!
//! ```text
//! magic "FUSH" | version u32 = 1 | D_a u32 | D_t u32 | d u32 | flags u32
//! | W_a, b_a, W_t, b_t, w_out, b_out as f32
//! ```
//!
//! Little-endian throughout. Flag bit 0 marks a head that L2-normalizes its
//! inputs.

use std::path::Path;

use super::head::FusionHead;
use super::{FusionError, Result};
use crate::io_util::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FUSH";
pub const CHECKPOINT_VERSION: u32 = 1;
const FLAG_NORMALIZE: u32 = 1;
const HEADER_LEN: usize = 24;

impl FusionHead {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.num_params());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [CHECKPOINT_VERSION, self.audio_dim() as u32, self.text_dim() as u32, self.hidden() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let flags = if self.normalize_inputs() { FLAG_NORMALIZE } else { 0 };
        out.extend_from_slice(&flags.to_le_bytes());
        for &p in self.params() {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<FusionHead> {
        let bad = |m: String| FusionError::Checkpoint(m);
        if bytes.len() < HEADER_LEN {
            return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[0..4] != CHECKPOINT_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let version = word(0);
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let (audio_dim, text_dim, hidden, flags) = (word(1) as usize, word(2) as usize, word(3) as usize, word(4));
        if flags & !FLAG_NORMALIZE != 0 {
            return Err(bad(format!("unknown flags {flags:#x}")));
        }
        let expected = FusionHead::zeros(audio_dim, text_dim, hidden)?.num_params();
        let body = &bytes[HEADER_LEN..];
        if body.len() != 4 * expected {
            return Err(bad(format!("expected {} parameter bytes, found {}", 4 * expected, body.len())));
        }
        let params = body
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Ok(FusionHead::from_params(audio_dim, text_dim, hidden, params)?
            .with_normalized_inputs(flags & FLAG_NORMALIZE != 0))
    }
}

pub fn write_checkpoint(head: &FusionHead, path: &Path) -> Result<()> {
    write_atomic(path, &head.to_checkpoint_bytes()).map_err(|source| FusionError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_checkpoint(path: &Path) -> Result<FusionHead> {
    let bytes = std::fs::read(path).map_err(|source| FusionError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    FusionHead::from_checkpoint_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn header_and_round_trip() {
        let head = FusionHead::init(3, 2, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap().with_normalized_inputs(true);
        let bytes = head.to_checkpoint_bytes();
        assert_eq!(&bytes[0..4], b"FUSH");
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &4u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &1u32.to_le_bytes());
        assert_eq!(bytes.len(), 24 + 4 * head.num_params());
        assert_eq!(FusionHead::from_checkpoint_bytes(&bytes).unwrap(), head);
    }

    #[test]
    fn corrupt_checkpoints_rejected() {
        let good = FusionHead::zeros(2, 2, 2).unwrap().to_checkpoint_bytes();
        assert!(FusionHead::from_checkpoint_bytes(&good[..10]).is_err());
        assert!(FusionHead::from_checkpoint_bytes(&good[..good.len() - 4]).is_err());
        let mut b = good.clone();
        b[0] = b'X';
        assert!(FusionHead::from_checkpoint_bytes(&b).is_err());
        let mut b = good.clone();
        b[4] = 9;
        assert!(FusionHead::from_checkpoint_bytes(&b).is_err());
        let mut b = good;
        let n = b.len();
        b[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(FusionHead::from_checkpoint_bytes(&b).is_err());
    }
}
