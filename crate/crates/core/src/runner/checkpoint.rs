//! Actor checkpoints in the same two-file convention as datasets:
//! `<base>.manifest.json` describes the architecture, `<base>.bin` holds
//! every parameter tensor flattened to little-endian f64 in
//! [`Mlp::parameters`] order. Loading validates the manifest against the
//! binary length and fails without producing a partial network.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::io::{bin_path, manifest_path};
use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::mlp::{Activation, Hooks, Mlp, OutputTransform};

#[derive(Debug, Serialize, Deserialize)]
struct ActorManifest {
    kind: String,
    env_name: String,
    dims: Vec<usize>,
    activation: String,
    output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dropout: Option<f64>,
    layer_norm: bool,
    spectral_norm: bool,
    param_count: usize,
    endianness: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spectral_u: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spectral_v: Option<Vec<f64>>,
}

/// Write `<base>.manifest.json` and `<base>.bin`.
pub fn save_actor(net: &Mlp, env: EnvKind, base: &Path) -> Result<()> {
    let (spectral_u, spectral_v) = match net.spectral_state() {
        Some((u, v)) => (Some(u.to_vec()), Some(v.to_vec())),
        None => (None, None),
    };
    let hooks = net.hooks();
    let manifest = ActorManifest {
        kind: "actor".to_string(),
        env_name: env.name().to_string(),
        dims: net.dims(),
        activation: match net.activation() {
            Activation::Relu => "relu".to_string(),
            Activation::Tanh => "tanh".to_string(),
        },
        output: match net.output_transform() {
            OutputTransform::Identity => "identity".to_string(),
            OutputTransform::TanhBounded(_) => "tanh_bounded".to_string(),
        },
        output_bound: match net.output_transform() {
            OutputTransform::Identity => None,
            OutputTransform::TanhBounded(b) => Some(b),
        },
        dropout: hooks.dropout,
        layer_norm: hooks.layer_norm,
        spectral_norm: hooks.spectral_norm,
        param_count: net.num_params(),
        endianness: "little".to_string(),
        spectral_u,
        spectral_v,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(manifest_path(base), json)?;

    let mut bytes = Vec::with_capacity(net.num_params() * 8);
    for t in net.parameters() {
        for v in &t.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(bin_path(base), bytes)?;
    Ok(())
}

/// Read a checkpoint written by [`save_actor`]. Any inconsistency rejects
/// the whole file.
pub fn load_actor(base: &Path) -> Result<(Mlp, EnvKind)> {
    let mpath = manifest_path(base);
    let mtext = fs::read_to_string(&mpath)?;
    let manifest: ActorManifest = serde_json::from_str(&mtext).map_err(|e| Error::Parse {
        context: mpath.display().to_string(),
        message: e.to_string(),
    })?;
    let schema = |message: String| Error::Schema { path: mpath.display().to_string(), message };
    if manifest.kind != "actor" {
        return Err(schema(format!("kind is '{}', expected 'actor'", manifest.kind)));
    }
    if manifest.endianness != "little" {
        return Err(schema(format!("unsupported endianness '{}'", manifest.endianness)));
    }
    let env = EnvKind::parse(&manifest.env_name)
        .map_err(|_| schema(format!("unknown env_name '{}'", manifest.env_name)))?;
    if manifest.dims.first() != Some(&env.obs_dim())
        || manifest.dims.last() != Some(&env.act_dim())
    {
        return Err(schema(format!(
            "dims {:?} do not map {}-dim observations to {}-dim actions",
            manifest.dims,
            env.obs_dim(),
            env.act_dim()
        )));
    }
    let activation = match manifest.activation.as_str() {
        "relu" => Activation::Relu,
        "tanh" => Activation::Tanh,
        other => return Err(schema(format!("unknown activation '{other}'"))),
    };
    let output = match (manifest.output.as_str(), manifest.output_bound) {
        ("identity", None) => OutputTransform::Identity,
        ("identity", Some(_)) => {
            return Err(schema("identity output must not carry a bound".into()))
        }
        ("tanh_bounded", Some(b)) if b.is_finite() && b > 0.0 => OutputTransform::TanhBounded(b),
        ("tanh_bounded", b) => {
            return Err(schema(format!("tanh_bounded needs a positive bound, got {b:?}")))
        }
        (other, _) => return Err(schema(format!("unknown output transform '{other}'"))),
    };
    if let OutputTransform::TanhBounded(b) = output {
        if b != env.act_bound() {
            return Err(schema(format!(
                "action bound {} does not match {} bound {}",
                b,
                env.name(),
                env.act_bound()
            )));
        }
    }
    let hooks = Hooks {
        dropout: manifest.dropout,
        layer_norm: manifest.layer_norm,
        spectral_norm: manifest.spectral_norm,
    };

    // The init rng is immediately overwritten by the stored parameters.
    let mut init = stream(0, "checkpoint-load");
    let mut net = Mlp::new(&manifest.dims, activation, output, hooks, &mut init)?;
    if net.num_params() != manifest.param_count {
        return Err(schema(format!(
            "param_count {} does not match dims {:?} ({} parameters)",
            manifest.param_count,
            manifest.dims,
            net.num_params()
        )));
    }

    let bpath = bin_path(base);
    let bytes = fs::read(&bpath)?;
    let expected = manifest.param_count * 8;
    if bytes.len() != expected {
        return Err(Error::Parse {
            context: bpath.display().to_string(),
            message: format!(
                "expected {} bytes ({} f64 values), found {}",
                expected,
                manifest.param_count,
                bytes.len()
            ),
        });
    }
    let mut offset = 0;
    for t in net.parameters_mut() {
        for v in t.data.iter_mut() {
            let mut buf = [0u8; 8];
            buf.copy_from_slice(&bytes[offset..offset + 8]);
            *v = f64::from_le_bytes(buf);
            offset += 8;
        }
    }
    match (manifest.spectral_norm, manifest.spectral_u, manifest.spectral_v) {
        (true, Some(u), Some(v)) => net.set_spectral_state(u, v)?,
        (true, _, _) => {
            return Err(schema("spectral network is missing its power iteration state".into()))
        }
        (false, None, None) => {}
        (false, _, _) => {
            return Err(schema("spectral state on a non-spectral network".into()))
        }
    }
    Ok((net, env))
}
