//! Run checkpoints: a JSON manifest plus one network file per network.
//!
//! Replay contents and optimizer moments are not saved, so a resumed run is
//! not bitwise-continuous with the original.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::buffer::BufferMeta;
use crate::dsd::{DualVariable, PhiNet};
use crate::env::{EnvId, EnvSpec};
use crate::error::{Error, Result};
use crate::nn::{read_mlp, write_mlp, Mlp};
use crate::sac::{CriticPair, PolicyNet};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "skilllab-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

const NETWORKS: [&str; 6] = ["phi", "policy", "q1", "q2", "q1_target", "q2_target"];

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub epoch: usize,
    pub spec: EnvSpec,
    pub phi: PhiNet<T>,
    pub policy: PolicyNet<T>,
    pub critics: CriticPair<T>,
    pub dual: DualVariable,
    pub log_alpha: f64,
    pub buffer: BufferMeta,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    epoch: usize,
    env: EnvId,
    episode_length: usize,
    obs_dim: usize,
    skill_dim: usize,
    action_dim: usize,
    /// Bit patterns keep the scalars exact regardless of float formatting.
    log_lambda_bits: String,
    epsilon_bits: String,
    log_alpha_bits: String,
    log_lambda: f64,
    log_alpha: f64,
    buffer_capacity: usize,
    buffer_size: usize,
    buffer_cursor: usize,
    #[serde(default)]
    phi_obs_scale_bits: Option<Vec<String>>,
    #[serde(default)]
    policy_obs_scale_bits: Option<Vec<String>>,
    networks: Vec<String>,
}

fn scale_bits<T: Scalar>(scale: &Option<ndarray::Array1<T>>) -> Option<Vec<String>> {
    scale.as_ref().map(|c| c.iter().map(|v| bits(v.to_f64_lossy())).collect())
}

fn unscale_bits(bits: &Option<Vec<String>>) -> Result<Option<Vec<f64>>> {
    bits.as_ref().map(|b| b.iter().map(|s| unbits(s)).collect()).transpose()
}

fn bits(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn unbits(s: &str) -> Result<f64> {
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|_| Error::Version(format!("bad float field {s:?} in manifest")))
}

fn write_net<T: Scalar>(dir: &Path, name: &str, net: &Mlp<T>) -> Result<()> {
    let path = dir.join(format!("{name}.mlp"));
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    write_mlp(net, &mut w)?;
    std::io::Write::flush(&mut w).map_err(|e| Error::io(&path, e))
}

fn read_net<T: Scalar>(dir: &Path, name: &str) -> Result<Mlp<T>> {
    let path = dir.join(format!("{name}.mlp"));
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    read_mlp(&mut BufReader::new(file))
}

pub fn save_checkpoint<T: Scalar>(dir: &Path, ck: &Checkpoint<T>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let c = &ck.critics;
    let nets: [&Mlp<T>; 6] = [&ck.phi.net, &ck.policy.net, &c.q1, &c.q2, &c.q1_target, &c.q2_target];
    for (name, net) in NETWORKS.iter().zip(nets) {
        write_net(dir, name, net)?;
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        epoch: ck.epoch,
        env: ck.spec.env_id,
        episode_length: ck.spec.episode_length,
        obs_dim: ck.policy.obs_dim(),
        skill_dim: ck.policy.skill_dim(),
        action_dim: ck.policy.action_dim(),
        log_lambda_bits: bits(ck.dual.log_lambda),
        epsilon_bits: bits(ck.dual.epsilon),
        log_alpha_bits: bits(ck.log_alpha),
        log_lambda: ck.dual.log_lambda,
        log_alpha: ck.log_alpha,
        buffer_capacity: ck.buffer.capacity,
        buffer_size: ck.buffer.size,
        buffer_cursor: ck.buffer.cursor,
        phi_obs_scale_bits: scale_bits(&ck.phi.obs_scale),
        policy_obs_scale_bits: scale_bits(&ck.policy.obs_scale),
        networks: NETWORKS.iter().map(|n| format!("{n}.mlp")).collect(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Validation(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<Checkpoint<T>> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Version(format!("unreadable checkpoint manifest: {e}")))?;
    if m.format != CHECKPOINT_FORMAT || m.version != CHECKPOINT_VERSION {
        return Err(Error::Version(format!(
            "expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
            m.format, m.version
        )));
    }
    let mut phi = PhiNet::from_mlp(read_net(dir, "phi")?);
    if let Some(c) = unscale_bits(&m.phi_obs_scale_bits)? {
        phi = phi.with_obs_scale(&c)?;
    }
    let mut policy = PolicyNet::from_mlp(read_net(dir, "policy")?, m.obs_dim, m.skill_dim, m.action_dim)?;
    if let Some(c) = unscale_bits(&m.policy_obs_scale_bits)? {
        policy = policy.with_obs_scale(&c)?;
    }
    let critics = CriticPair {
        q1: read_net(dir, "q1")?,
        q2: read_net(dir, "q2")?,
        q1_target: read_net(dir, "q1_target")?,
        q2_target: read_net(dir, "q2_target")?,
    };
    if phi.skill_dim() != m.skill_dim || phi.net.input_dim() != m.obs_dim {
        return Err(Error::Shape("phi network does not match the manifest".into()));
    }
    Ok(Checkpoint {
        epoch: m.epoch,
        spec: EnvSpec {
            env_id: m.env,
            episode_length: m.episode_length,
        },
        phi,
        policy,
        critics,
        dual: DualVariable {
            log_lambda: unbits(&m.log_lambda_bits)?,
            epsilon: unbits(&m.epsilon_bits)?,
        },
        log_alpha: unbits(&m.log_alpha_bits)?,
        buffer: BufferMeta {
            capacity: m.buffer_capacity,
            size: m.buffer_size,
            cursor: m.buffer_cursor,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint<f64> {
        let spec = EnvSpec::new(EnvId::PointMass2D);
        let scale = EnvId::PointMass2D.obs_scale();
        let policy = PolicyNet::new(4, 2, 2, 8, 2, 1).unwrap().with_obs_scale(scale).unwrap();
        let critics = CriticPair::new(8, 8, 2, 2, 3).unwrap();
        let mut dual = DualVariable::default();
        dual.log_lambda = 0.1 + 0.2; // not exactly representable in short decimal
        Checkpoint {
            epoch: 7,
            spec,
            phi: PhiNet::new(4, 2, 8, 2, 4).unwrap().with_obs_scale(scale).unwrap(),
            policy,
            critics,
            dual,
            log_alpha: -1.234567890123,
            buffer: BufferMeta {
                capacity: 100,
                size: 40,
                cursor: 40,
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ck = sample();
        save_checkpoint(dir.path(), &ck).unwrap();
        let back: Checkpoint<f64> = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.dual.log_lambda.to_bits(), ck.dual.log_lambda.to_bits());
    }

    #[test]
    fn save_load_save_is_stable() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        save_checkpoint(a.path(), &sample()).unwrap();
        let back: Checkpoint<f64> = load_checkpoint(a.path()).unwrap();
        save_checkpoint(b.path(), &back).unwrap();
        for f in ["manifest.json", "phi.mlp", "policy.mlp", "q1.mlp", "q2.mlp", "q1_target.mlp", "q2_target.mlp"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn corrupted_header_is_a_version_error() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &sample()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap().replace("\"version\": 1", "\"version\": 9");
        fs::write(&path, text).unwrap();
        assert!(matches!(load_checkpoint::<f64>(dir.path()), Err(Error::Version(_))));
        fs::write(&path, "garbage").unwrap();
        assert!(matches!(load_checkpoint::<f64>(dir.path()), Err(Error::Version(_))));
    }
}
