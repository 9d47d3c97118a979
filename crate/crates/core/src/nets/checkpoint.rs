//! Single-file policy checkpoints.
//!
//! A checkpoint is an uncompressed tar archive holding three members:
//!
//! - `spec.json`: architecture, tickers, environment config and the
//!   observation normalization.
//! - `params.bin`: every array in layout order (learnable, then running
//!   statistics). Each array is written as `u32` name length, UTF-8 name,
//!   `u32` rank, `rank × u32` dims, then little-endian `f32` values.
//! - `meta.json`: seed and training progress.
//!
//! Archive headers carry fixed timestamps and ownership, so identical
//! contents give identical bytes.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::Parameters;
use super::policy::PolicySpec;
use super::tensor::Tensor;
use super::NetError;
use crate::env::EnvConfig;
use crate::features::NormStats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSpec {
    pub policy: PolicySpec,
    pub tickers: Vec<String>,
    pub env: EnvConfig,
    pub obs_norm: NormStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub env_steps: u64,
    pub updates: u64,
    pub algo: String,
    /// Index of the first test-split day in the source dataset.
    pub split_boundary: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: CheckpointSpec,
    pub params: Parameters<f32>,
    pub meta: CheckpointMeta,
}

fn bad(msg: impl Into<String>) -> NetError {
    NetError::Checkpoint(msg.into())
}

/// Serializes arrays in layout order.
pub fn encode_params(params: &Parameters<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    for (name, t) in params.learnable.iter().chain(&params.running) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn read_u32<'a>(
    take: &mut impl FnMut(usize) -> Result<&'a [u8], NetError>,
) -> Result<usize, NetError> {
    Ok(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize)
}

/// Decodes `params.bin` against the layout of `spec`.
pub fn decode_params(spec: &PolicySpec, bytes: &[u8]) -> Result<Parameters<f32>, NetError> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], NetError> {
        let s = bytes
            .get(pos..pos + n)
            .ok_or_else(|| bad("params.bin is truncated"))?;
        pos += n;
        Ok(s)
    };
    let mut params = Parameters::new();
    let learnable = spec.learnable_layout();
    let n_learnable = learnable.len();
    for (i, (name, shape, _)) in learnable
        .into_iter()
        .chain(spec.running_layout())
        .enumerate()
    {
        let len = read_u32(&mut take)?;
        let got =
            String::from_utf8(take(len)?.to_vec()).map_err(|_| bad("array name is not UTF-8"))?;
        if got != name {
            return Err(bad(format!("expected array {name}, found {got}")));
        }
        let rank = read_u32(&mut take)?;
        let dims = (0..rank)
            .map(|_| read_u32(&mut take))
            .collect::<Result<Vec<_>, _>>()?;
        if dims != shape {
            return Err(bad(format!(
                "array {name} has shape {dims:?}, expected {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        let data = take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data);
        if i < n_learnable {
            params.learnable.insert(name, t);
        } else {
            params.running.insert(name, t);
        }
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes after the last array"));
    }
    Ok(params)
}

fn append(builder: &mut tar::Builder<impl Write>, name: &str, data: &[u8]) -> std::io::Result<()> {
    let mut header = tar::Header::new_gnu();
    header.set_size(data.len() as u64);
    header.set_mode(0o644);
    header.set_mtime(0);
    header.set_uid(0);
    header.set_gid(0);
    header.set_entry_type(tar::EntryType::Regular);
    builder.append_data(&mut header, name, data)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, NetError> {
        let mut builder = tar::Builder::new(Vec::new());
        append(
            &mut builder,
            "spec.json",
            &serde_json::to_vec_pretty(&self.spec)?,
        )?;
        append(&mut builder, "params.bin", &encode_params(&self.params))?;
        append(
            &mut builder,
            "meta.json",
            &serde_json::to_vec_pretty(&self.meta)?,
        )?;
        Ok(builder.into_inner()?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NetError> {
        let mut archive = tar::Archive::new(bytes);
        let (mut spec, mut params, mut meta) = (None, None, None);
        for entry in archive.entries()? {
            let mut entry = entry?;
            let name = entry.path()?.to_string_lossy().into_owned();
            let mut data = Vec::new();
            entry.read_to_end(&mut data)?;
            match name.as_str() {
                "spec.json" => spec = Some(data),
                "params.bin" => params = Some(data),
                "meta.json" => meta = Some(data),
                other => return Err(bad(format!("unexpected member {other}"))),
            }
        }
        let spec: CheckpointSpec =
            serde_json::from_slice(&spec.ok_or_else(|| bad("missing spec.json"))?)?;
        spec.policy.validate()?;
        let params = decode_params(
            &spec.policy,
            &params.ok_or_else(|| bad("missing params.bin"))?,
        )?;
        let meta = serde_json::from_slice(&meta.ok_or_else(|| bad("missing meta.json"))?)?;
        Ok(Self { spec, params, meta })
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        let bytes = std::fs::read(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::init::init_params;
    use crate::nets::policy::CnnSpec;

    fn sample() -> Checkpoint {
        let policy = PolicySpec::Cnn(CnnSpec {
            window: 8,
            features: 1 + 2 * 2 + 30,
            n_actions: 2,
            conv1_filters: 2,
            conv2_filters: 3,
            dense: 4,
            ..CnnSpec::default()
        });
        let params = init_params(&policy, 3).unwrap();
        Checkpoint {
            spec: CheckpointSpec {
                tickers: vec!["AAA".into(), "BBB".into()],
                env: EnvConfig::default(),
                obs_norm: NormStats::identity(policy.features()),
                policy,
            },
            params,
            meta: CheckpointMeta {
                seed: 3,
                env_steps: 10,
                updates: 1,
                algo: "ppo".into(),
                split_boundary: Some(100),
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
        assert_eq!(ck.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn params_bin_layout() {
        let ck = sample();
        let bin = encode_params(&ck.params);
        let first = "conv1.weight";
        assert_eq!(
            u32::from_le_bytes(bin[0..4].try_into().unwrap()) as usize,
            first.len()
        );
        assert_eq!(&bin[4..4 + first.len()], first.as_bytes());
        let o = 4 + first.len();
        assert_eq!(u32::from_le_bytes(bin[o..o + 4].try_into().unwrap()), 4);
        let dims: Vec<u32> = (0..4)
            .map(|i| u32::from_le_bytes(bin[o + 4 + 4 * i..o + 8 + 4 * i].try_into().unwrap()))
            .collect();
        assert_eq!(dims, vec![2, 1, 3, 3]);
        let v = f32::from_le_bytes(bin[o + 20..o + 24].try_into().unwrap());
        assert_eq!(v, ck.params.get("conv1.weight").data()[0]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let ck = sample();
        let mut other = ck.spec.policy.clone();
        if let PolicySpec::Cnn(s) = &mut other {
            s.dense = 5;
        }
        let err = decode_params(&other, &encode_params(&ck.params)).unwrap_err();
        assert!(err.to_string().contains("fc.weight"));
    }

    #[test]
    fn truncated_params_rejected() {
        let ck = sample();
        let bin = encode_params(&ck.params);
        assert!(decode_params(&ck.spec.policy, &bin[..bin.len() - 1]).is_err());
    }
}
