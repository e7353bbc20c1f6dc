//! JSON checkpoints for crisp networks and their interval radii.
//!
//! Floats are written in shortest round-trip form, so a checkpoint reloads
//! to bitwise-identical parameters.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::inn::DeltaParams;
use crate::models::{Architecture, CrispTrainConfig, ModelParams};
use crate::uq::UqTrainConfig;

pub const CRISP_FORMAT: &str = "inn-sysid/crisp/1";
pub const INTERVAL_FORMAT: &str = "inn-sysid/interval/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrispCheckpoint {
    pub format: String,
    pub dataset: String,
    pub architecture: Architecture,
    pub normalization: Normalization,
    pub seed: u64,
    pub train: CrispTrainConfig,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub params: ModelParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalCheckpoint {
    pub format: String,
    /// SHA-256 of the crisp checkpoint file the radii belong to.
    pub crisp_sha256: String,
    pub variant: String,
    pub train: UqTrainConfig,
    pub best_epoch: usize,
    pub best_val_objective: f64,
    pub delta: DeltaParams,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Pretty JSON plus a trailing newline; creates parent directories.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

impl CrispCheckpoint {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let ck: CrispCheckpoint = read_json(path)?;
        if ck.format != CRISP_FORMAT {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported format {:?}",
                path.display(),
                ck.format
            )));
        }
        ck.params.validate()?;
        if !ck.params.matches(&ck.architecture) {
            return Err(Error::Checkpoint(format!(
                "{}: parameters do not match the stored architecture",
                path.display()
            )));
        }
        Ok(ck)
    }
}

impl IntervalCheckpoint {
    /// Loads the radii and checks them against the crisp checkpoint at
    /// `crisp_path`, both by content hash and by tensor shapes.
    pub fn load(path: impl AsRef<Path>, crisp_path: impl AsRef<Path>, crisp: &CrispCheckpoint) -> Result<Self> {
        let path = path.as_ref();
        let ck: IntervalCheckpoint = read_json(path)?;
        if ck.format != INTERVAL_FORMAT {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported format {:?}",
                path.display(),
                ck.format
            )));
        }
        let hash = sha256_file(crisp_path)?;
        if hash != ck.crisp_sha256 {
            return Err(Error::Checkpoint(format!(
                "{} was trained against crisp checkpoint {}, found {}",
                path.display(),
                ck.crisp_sha256,
                hash
            )));
        }
        ck.delta.check_mirrors(&crisp.params)?;
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::data::RegressorSpec;
    use crate::inn::Trick;
    use crate::models::ModelKind;
    use crate::rng::{seeded, Stream};

    fn crisp() -> CrispCheckpoint {
        let architecture = Architecture {
            kind: ModelKind::Lstm,
            hidden: vec![3],
            activation: Activation::Tanh,
            regressor: RegressorSpec::new(1, 0, 1).unwrap(),
        };
        CrispCheckpoint {
            format: CRISP_FORMAT.into(),
            dataset: "toy".into(),
            params: ModelParams::init(&architecture, &mut seeded(5, Stream::Init)).unwrap(),
            architecture,
            normalization: Normalization::identity(),
            seed: 5,
            train: CrispTrainConfig::default(),
            best_epoch: 3,
            best_val_loss: 0.1 + 0.2,
        }
    }

    #[test]
    fn crisp_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/crisp.json");
        let ck = crisp();
        write_json(&path, &ck).unwrap();
        let back = CrispCheckpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        for (a, b) in back.params.tensors().iter().zip(ck.params.tensors()) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn interval_checkpoint_checks_the_crisp_hash() {
        let dir = tempfile::tempdir().unwrap();
        let crisp_path = dir.path().join("crisp.json");
        let ck = crisp();
        write_json(&crisp_path, &ck).unwrap();
        let iv = IntervalCheckpoint {
            format: INTERVAL_FORMAT.into(),
            crisp_sha256: sha256_file(&crisp_path).unwrap(),
            variant: "ILSTM-2".into(),
            train: UqTrainConfig::default(),
            best_epoch: 0,
            best_val_objective: 1.0,
            delta: DeltaParams::zeros(&ck.params, Trick::Abs),
        };
        let iv_path = dir.path().join("ilstm2.json");
        write_json(&iv_path, &iv).unwrap();
        assert_eq!(IntervalCheckpoint::load(&iv_path, &crisp_path, &ck).unwrap(), iv);

        let mut other = ck.clone();
        other.seed = 6;
        write_json(&crisp_path, &other).unwrap();
        assert!(matches!(
            IntervalCheckpoint::load(&iv_path, &crisp_path, &other),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
