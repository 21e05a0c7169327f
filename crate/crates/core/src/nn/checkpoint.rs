//! Binary checkpoints: magic, little-endian header length, JSON header, then
//! the parameters as little-endian f64.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::NetSpec;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SWHGNET1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub spec: NetSpec,
    pub n_params: usize,
    pub seed: u64,
    /// Model-specific metadata such as normalisation statistics.
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(spec: NetSpec, params: Vec<f64>, seed: u64, extra: serde_json::Value) -> Self {
        Self {
            header: CheckpointHeader {
                spec,
                n_params: params.len(),
                seed,
                extra,
            },
            params,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a network checkpoint".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("eight bytes")) as usize;
        let body = bytes
            .get(16..16 + len)
            .ok_or_else(|| Error::Format("truncated checkpoint header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(body)?;
        let blob = &bytes[16 + len..];
        if blob.len() != 8 * header.n_params {
            return Err(Error::Format(format!(
                "expected {} parameters, found {} bytes",
                header.n_params,
                blob.len()
            )));
        }
        let params = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect();
        Ok(Self { header, params })
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Network;

    #[test]
    fn round_trip_is_byte_identical() {
        let spec = NetSpec::fcnn(5, &[8, 32, 32, 8], 2);
        let params = Network::new(spec.clone()).unwrap().init_params(3);
        let ck = Checkpoint::new(spec, params, 3, serde_json::json!({"mean": [1.0, 2.0]}));
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let h = ck.save(&path).unwrap();
        assert_eq!(h, ck.hash().unwrap());
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn corrupt_input_rejected() {
        assert!(Checkpoint::from_bytes(b"nope").is_err());
        let ck = Checkpoint::new(NetSpec::fcnn(1, &[], 1), vec![1.0, 2.0], 0, serde_json::Value::Null);
        let mut bytes = ck.to_bytes().unwrap();
        bytes.pop();
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
