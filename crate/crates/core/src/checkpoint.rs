//! Policy checkpoints: a manifest naming the five modules with their layer
//! shapes, width and bits, then every parameter as little-endian `f32` in
//! manifest order (per module, per layer: weights row-major out × in, then
//! bias). Loading widens back to `f64`, so a loaded policy carries
//! `f32`-rounded parameters.

use std::path::Path;

use crate::error::{Error, Result};
use crate::game::FovMode;
use crate::manifest::Manifest;
use crate::nn::{Activation, Dense, Matrix, Mlp};
use crate::pin::{PinPolicy, PolicyConfig, MODULE_NAMES};

const FORMAT: &str = "perimeter-checkpoint";
const VERSION: u32 = 1;

/// Extra facts stored with a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub fov: FovMode,
    pub iteration: u64,
}

fn shapes_text(net: &Mlp) -> String {
    net.shapes()
        .iter()
        .map(|(i, o)| format!("{i}x{o}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_shapes(text: &str, path: &Path) -> Result<Vec<(usize, usize)>> {
    text.split(',')
        .map(|s| {
            let (i, o) = s
                .trim()
                .split_once('x')
                .ok_or_else(|| Error::format(path, format!("bad layer shape `{s}`")))?;
            let i = i.parse().map_err(|_| Error::format(path, format!("bad layer shape `{s}`")))?;
            let o = o.parse().map_err(|_| Error::format(path, format!("bad layer shape `{s}`")))?;
            Ok((i, o))
        })
        .collect()
}

pub fn save(policy: &PinPolicy, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let cfg = policy.config();
    let mut m = Manifest::new();
    m.set("format", FORMAT);
    m.set("version", VERSION);
    m.set("width", cfg.width);
    m.set("bits", cfg.bits);
    m.set("activation", cfg.activation.name());
    m.set("fov", meta.fov);
    m.set("iteration", meta.iteration);
    m.set("modules", MODULE_NAMES.join(","));
    for (name, net) in MODULE_NAMES.iter().zip(policy.modules()) {
        m.set(&format!("module.{name}"), shapes_text(net));
    }
    m.set("param_count", policy.param_count());
    m.set("dtype", "f32le");

    let mut blob = Vec::with_capacity(policy.param_count() * 4);
    for s in policy.param_slices() {
        for &v in s {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    m.write_with_blob(path, &blob)
}

pub fn load(path: &Path) -> Result<(PinPolicy, CheckpointMeta)> {
    let (m, blob) = Manifest::read_with_blob(path, "checkpoint")?;
    if m.require("format", path)? != FORMAT {
        return Err(Error::format(path, "not a policy checkpoint"));
    }
    let version: u32 = m.parse("version", path)?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let names: Vec<&str> = m.require("modules", path)?.split(',').collect();
    if names != MODULE_NAMES {
        return Err(Error::format(path, "unexpected module list"));
    }
    let activation = Activation::from_name(m.require("activation", path)?)
        .ok_or_else(|| Error::format(path, "unknown activation"))?;
    let count: usize = m.parse("param_count", path)?;
    if blob.len() != count * 4 {
        return Err(Error::format(
            path,
            format!("expected {} parameter bytes, found {}", count * 4, blob.len()),
        ));
    }
    let mut values = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    let mut take = |n: usize| -> Result<Vec<f64>> {
        let v: Vec<f64> = values.by_ref().take(n).collect();
        if v.len() == n {
            Ok(v)
        } else {
            Err(Error::format(path, "parameter blob shorter than the shapes"))
        }
    };

    let mut nets = Vec::with_capacity(5);
    for name in MODULE_NAMES {
        let shapes = parse_shapes(m.require(&format!("module.{name}"), path)?, path)?;
        let mut layers = Vec::with_capacity(shapes.len());
        for (i, o) in shapes {
            let weight = Matrix::from_vec(o, i, take(i * o)?);
            let bias = take(o)?;
            layers.push(Dense { weight, bias });
        }
        nets.push(Mlp::from_layers(layers, activation).map_err(|e| Error::format(path, e.to_string()))?);
    }
    let nets: [Mlp; 5] = nets.try_into().expect("five modules");

    let hidden = nets[0].shapes().first().map_or(0, |s| s.1);
    let config = PolicyConfig {
        width: m.parse("width", path)?,
        bits: m.parse("bits", path)?,
        hidden,
        feature: nets[1].output_dim(),
        decoded: nets[3].output_dim(),
        perception_layers: nets[0].layers().len(),
        module_layers: nets[2].layers().len(),
        activation,
    };
    let policy = PinPolicy::from_modules(config, nets).map_err(|e| Error::format(path, e.to_string()))?;
    let meta = CheckpointMeta {
        fov: m.parse("fov", path)?,
        iteration: m.parse("iteration", path)?,
    };
    Ok((policy, meta))
}

/// Round every parameter through `f32`, matching what [`load`] returns.
pub fn round_to_f32(policy: &mut PinPolicy) {
    for s in policy.param_slices_mut() {
        for v in s {
            *v = *v as f32 as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_through_f32() {
        let cfg = PolicyConfig {
            width: 2,
            hidden: 12,
            feature: 6,
            decoded: 5,
            ..PolicyConfig::default()
        };
        let mut p = PinPolicy::new(cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        let meta = CheckpointMeta {
            fov: FovMode::Half180,
            iteration: 42,
        };
        save(&p, &meta, &path).unwrap();
        let (q, meta2) = load(&path).unwrap();
        round_to_f32(&mut p);
        assert_eq!(p, q);
        assert_eq!(meta, meta2);
    }

    #[test]
    fn truncated_blob_is_format_error() {
        let mut p = PinPolicy::new(PolicyConfig { hidden: 4, feature: 4, decoded: 4, ..PolicyConfig::default() }, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        round_to_f32(&mut p);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        save(&p, &CheckpointMeta { fov: FovMode::Full360, iteration: 0 }, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load(&path), Err(Error::Format { .. })));
    }
}
