//! Binary model checkpoints.
//!
//! Layout (little-endian): 8-byte magic, `u8` architecture tag (0 linear,
//! 1 mlp), `u64` input dim, `u64` classes, `u64` hidden width (0 for linear),
//! then every parameter as `f64` bits in `ModelParams::flat` order.

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::{Architecture, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CFOLMDL1";

pub fn write_checkpoint<W: Write>(model: &ModelParams, mut out: W) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    let (tag, hidden) = match model.architecture() {
        Architecture::Linear => (0u8, 0u64),
        Architecture::Mlp { hidden } => (1u8, hidden as u64),
    };
    out.write_all(&[tag])?;
    for v in [model.input_dim() as u64, model.num_classes() as u64, hidden] {
        out.write_all(&v.to_le_bytes())?;
    }
    for v in model.flat() {
        out.write_all(&v.to_bits().to_le_bytes())?;
    }
    Ok(())
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ModelParams> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::InvalidArgument("not a model checkpoint".into()));
    }
    let mut tag = [0u8; 1];
    input.read_exact(&mut tag)?;
    let d = read_u64(&mut input)? as usize;
    let k = read_u64(&mut input)? as usize;
    let hidden = read_u64(&mut input)? as usize;
    let arch = match tag[0] {
        0 => Architecture::Linear,
        1 => Architecture::Mlp { hidden },
        t => return Err(Error::InvalidArgument(format!("unknown architecture tag {t}"))),
    };
    let mut model = ModelParams::zeros(arch, d, k)?;
    let mut values = Vec::with_capacity(model.num_params());
    for _ in 0..model.num_params() {
        values.push(f64::from_bits(read_u64(&mut input)?));
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::CountMismatch(format!("{} trailing bytes in checkpoint", rest.len())));
    }
    model.set_flat(&values)?;
    Ok(model)
}
