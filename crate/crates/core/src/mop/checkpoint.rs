use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MopConfig, MopError, MopParams};

pub const CHECKPOINT_FORMAT: &str = "surgassist-mop-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Self-describing JSON container for a layer's configuration and weights.
///
/// Every matrix is stored as `{"rows", "cols", "data"}` with `data` row-major.
/// Floats are written in shortest round-trip form, so save/load is lossless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub format_version: u32,
    pub config: MopConfig,
    pub params: MopParams,
}

impl Checkpoint {
    pub fn new(config: MopConfig, params: MopParams) -> Result<Self, MopError> {
        params.validate(&config)?;
        Ok(Self {
            format: CHECKPOINT_FORMAT.into(),
            format_version: CHECKPOINT_VERSION,
            config,
            params,
        })
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<(), MopError> {
        serde_json::to_writer_pretty(out, self).map_err(|e| MopError::Checkpoint(e.to_string()))
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self, MopError> {
        let ckpt: Checkpoint =
            serde_json::from_reader(input).map_err(|e| MopError::Checkpoint(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(MopError::Checkpoint(format!("unknown format tag {:?}", ckpt.format)));
        }
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(MopError::Checkpoint(format!(
                "unsupported format_version {} (expected {CHECKPOINT_VERSION})",
                ckpt.format_version
            )));
        }
        ckpt.config.validate()?;
        ckpt.params.validate(&ckpt.config)?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MopError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MopError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lossless_round_trip() {
        let cfg = MopConfig::standard(3, 5, 2);
        let params = MopParams::init(&cfg, 8).unwrap();
        let ckpt = Checkpoint::new(cfg, params).unwrap();
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        assert_eq!(Checkpoint::read_from(&buf[..]).unwrap(), ckpt);
    }

    #[test]
    fn rejects_future_version_and_bad_shapes() {
        let cfg = MopConfig::standard(2, 2, 2);
        let ckpt = Checkpoint::new(cfg.clone(), MopParams::init(&cfg, 1).unwrap()).unwrap();
        let mut value = serde_json::to_value(&ckpt).unwrap();
        value["format_version"] = 99.into();
        let err = Checkpoint::read_from(value.to_string().as_bytes()).unwrap_err();
        assert!(err.to_string().contains("format_version"));

        let mut value = serde_json::to_value(&ckpt).unwrap();
        value["config"]["c_out"] = 3.into();
        assert!(Checkpoint::read_from(value.to_string().as_bytes()).is_err());
    }
}
