//! Binary model checkpoint.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic       4 bytes  "MOEP"
//! version     u32      1
//! n_layers    u32
//! n_experts   u32
//! k           u32
//! d_model     u32
//! d_ff        u32
//! vocab_size  u32
//! seed        u64
//! tensors     f32 × parameter_count, row-major, in MoeModel::tensors() order
//! ```

use std::io::{Read, Write};

use super::{ModelConfig, MoeError, MoeModel};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MOEP";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 6 * 4 + 8;

pub fn write_checkpoint<W: Write>(model: &MoeModel, mut sink: W) -> Result<(), MoeError> {
    let cfg = model.config();
    let dims = [cfg.n_layers, cfg.n_experts, cfg.k, cfg.d_model, cfg.d_ff, cfg.vocab_size];
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * model.parameter_count());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for d in dims {
        let d = u32::try_from(d).map_err(|_| MoeError::Checkpoint(format!("dimension {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    buf.extend_from_slice(&cfg.seed.to_le_bytes());
    for (_, tensor) in model.tensors() {
        for &v in tensor {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    sink.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut source: R) -> Result<MoeModel, MoeError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    parse_checkpoint(&bytes)
}

fn corrupt(msg: impl Into<String>) -> MoeError {
    MoeError::Checkpoint(msg.into())
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<MoeModel, MoeError> {
    if bytes.len() < HEADER_LEN {
        return Err(corrupt(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let dim = |i: usize| u32_at(8 + 4 * i) as usize;
    let config = ModelConfig {
        n_layers: dim(0),
        n_experts: dim(1),
        k: dim(2),
        d_model: dim(3),
        d_ff: dim(4),
        vocab_size: dim(5),
        seed: u64::from_le_bytes(bytes[32..40].try_into().expect("8 bytes")),
    };
    config.validate()?;
    let count = config
        .parameter_count()
        .ok_or_else(|| corrupt("parameter count overflows"))?;
    let body = &bytes[HEADER_LEN..];
    // Check the length before allocating anything sized by the header.
    if count.checked_mul(4) != Some(body.len()) {
        return Err(corrupt(format!(
            "expected {count} f32 parameters, found {} bytes of tensor data",
            body.len()
        )));
    }
    let flat: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(MoeError::NonFinite("checkpoint tensors"));
    }
    let mut model = MoeModel::new(config)?.zeros_like();
    model.set_flat(&flat);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> MoeModel {
        MoeModel::new(ModelConfig {
            n_layers: 2,
            n_experts: 3,
            k: 2,
            d_model: 4,
            d_ff: 5,
            vocab_size: 7,
            seed: 42,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_rounds_to_f32() {
        let m = model();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"MOEP");
        assert_eq!(buf.len(), HEADER_LEN + 4 * m.parameter_count());
        let back = parse_checkpoint(&buf).unwrap();
        assert_eq!(back.config(), m.config());
        for (a, b) in back.to_flat().iter().zip(m.to_flat()) {
            assert_eq!(*a, f64::from(b as f32));
        }
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn rejects_corruption() {
        let mut buf = Vec::new();
        write_checkpoint(&model(), &mut buf).unwrap();
        assert!(parse_checkpoint(&buf[..buf.len() - 1]).is_err());
        assert!(parse_checkpoint(&buf[..10]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(parse_checkpoint(&bad).is_err());
        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(parse_checkpoint(&bad).is_err());
        let mut bad = buf.clone();
        // k = 9 > n_experts
        bad[16..20].copy_from_slice(&9u32.to_le_bytes());
        assert!(parse_checkpoint(&bad).is_err());
        let mut bad = buf;
        bad.extend_from_slice(&[0, 0, 0, 0]);
        assert!(parse_checkpoint(&bad).is_err());
    }

    #[test]
    fn huge_header_does_not_allocate() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"MOEP");
        buf.extend_from_slice(&1u32.to_le_bytes());
        for d in [u32::MAX, 8, 2, u32::MAX, u32::MAX, u32::MAX] {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        buf.extend_from_slice(&0u64.to_le_bytes());
        assert!(parse_checkpoint(&buf).is_err());
    }
}
