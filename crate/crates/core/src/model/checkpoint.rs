//! Binary checkpoints: `RLTKCKPT`, a little-endian `u32` format version, a
//! `u64` byte length and that many bytes of configuration JSON, then every
//! parameter tensor in declared order as row-major little-endian `f64`.

use std::io::{Read, Write};

use super::config::ModelConfig;
use super::params::Parameters;
use super::transformer::Transformer;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RLTKCKPT";
const VERSION: u32 = 1;

pub fn write_checkpoint(model: &Transformer, mut w: impl Write) -> Result<()> {
    let json = serde_json::to_vec(&model.config)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, _, t) in model.params.entries() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Transformer> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Validation("not a checkpoint file".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(Error::Validation(format!("unsupported checkpoint version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8);
    if len > 1 << 24 {
        return Err(Error::Validation(format!("implausible header length {len}")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    let config: ModelConfig = serde_json::from_slice(&json)?;
    config.validate()?;
    let mut params = Parameters::zeros(&config);
    for (_, t) in params.values_mut() {
        for v in t.data_mut() {
            r.read_exact(&mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Validation("trailing bytes after checkpoint".into()));
    }
    Transformer::new(config, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InitScheme;

    #[test]
    fn round_trip_is_exact() {
        let cfg = ModelConfig::regression(3, 9, 6, 4, 2, 5);
        let t = Transformer::init(cfg, 12, InitScheme::Standard).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&t, &mut buf).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let t = Transformer::init(ModelConfig::symbolic(1, 5, 4, 4, 1), 1, InitScheme::MeanFieldCopy).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&t, &mut buf).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_checkpoint(extra.as_slice()).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(bad.as_slice()).is_err());
    }
}
