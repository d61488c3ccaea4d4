//! Two-file dataset serialization.
//!
//! `<base>.manifest.json` describes the payload (env, dims, quality, seed,
//! count, endianness); `<base>.bin` holds the records: per transition,
//! obs_dim + act_dim + 1 + obs_dim little-endian f64 values followed by one
//! done byte (0 or 1). Loading validates the manifest against the named
//! environment and the binary length against the declared count, and fails
//! without producing a partial dataset.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataQuality, OfflineDataset, SplitTag, Transition};
use crate::envs::EnvKind;
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    env_name: String,
    obs_dim: usize,
    act_dim: usize,
    quality: DataQuality,
    seed: u64,
    count: usize,
    endianness: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<SplitTag>,
}

pub fn manifest_path(base: &Path) -> PathBuf {
    let mut p = base.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}

pub fn bin_path(base: &Path) -> PathBuf {
    let mut p = base.as_os_str().to_owned();
    p.push(".bin");
    PathBuf::from(p)
}

fn record_bytes(obs_dim: usize, act_dim: usize) -> usize {
    (2 * obs_dim + act_dim + 1) * 8 + 1
}

/// Write `<base>.manifest.json` and `<base>.bin`.
pub fn save(ds: &OfflineDataset, base: &Path) -> Result<()> {
    let manifest = Manifest {
        env_name: ds.env.name().to_string(),
        obs_dim: ds.env.obs_dim(),
        act_dim: ds.env.act_dim(),
        quality: ds.quality,
        seed: ds.generator_seed,
        count: ds.len(),
        endianness: "little".to_string(),
        split: ds.split,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(manifest_path(base), json)?;

    let file = fs::File::create(bin_path(base))?;
    let mut w = BufWriter::new(file);
    for t in ds.transitions() {
        for v in t.s.iter().chain(&t.a).chain(std::iter::once(&t.r)).chain(&t.s_next) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&[u8::from(t.done)])?;
    }
    w.flush()?;
    Ok(())
}

/// Read a dataset written by [`save`]. Any inconsistency (malformed JSON,
/// unknown env or quality, dimension mismatch, wrong byte count, invalid
/// done flag, non-finite float) rejects the whole file.
pub fn load(base: &Path) -> Result<OfflineDataset> {
    let mpath = manifest_path(base);
    let mtext = fs::read_to_string(&mpath)?;
    let manifest: Manifest = serde_json::from_str(&mtext).map_err(|e| Error::Parse {
        context: mpath.display().to_string(),
        message: e.to_string(),
    })?;
    let env = EnvKind::parse(&manifest.env_name).map_err(|_| Error::Schema {
        path: mpath.display().to_string(),
        message: format!("unknown env_name '{}'", manifest.env_name),
    })?;
    if manifest.obs_dim != env.obs_dim() || manifest.act_dim != env.act_dim() {
        return Err(Error::Schema {
            path: mpath.display().to_string(),
            message: format!(
                "manifest declares obs_dim={}, act_dim={}, but {} has obs_dim={}, act_dim={}",
                manifest.obs_dim,
                manifest.act_dim,
                env.name(),
                env.obs_dim(),
                env.act_dim()
            ),
        });
    }
    if manifest.endianness != "little" {
        return Err(Error::Schema {
            path: mpath.display().to_string(),
            message: format!("unsupported endianness '{}'", manifest.endianness),
        });
    }
    if manifest.count == 0 {
        return Err(Error::Schema {
            path: mpath.display().to_string(),
            message: "count must be at least 1".into(),
        });
    }

    let bpath = bin_path(base);
    let bytes = fs::read(&bpath)?;
    let rec = record_bytes(manifest.obs_dim, manifest.act_dim);
    let expected = manifest.count * rec;
    if bytes.len() != expected {
        return Err(Error::Parse {
            context: bpath.display().to_string(),
            message: format!(
                "expected {} bytes ({} records of {} bytes), found {}",
                expected,
                manifest.count,
                rec,
                bytes.len()
            ),
        });
    }
    let mut transitions = Vec::with_capacity(manifest.count);
    let mut cursor = &bytes[..];
    let read_f64s = |n: usize, cursor: &mut &[u8]| -> Vec<f64> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut buf = [0u8; 8];
            cursor.read_exact(&mut buf).expect("length checked above");
            out.push(f64::from_le_bytes(buf));
        }
        out
    };
    for i in 0..manifest.count {
        let s = read_f64s(manifest.obs_dim, &mut cursor);
        let a = read_f64s(manifest.act_dim, &mut cursor);
        let r = read_f64s(1, &mut cursor)[0];
        let s_next = read_f64s(manifest.obs_dim, &mut cursor);
        let mut done_byte = [0u8; 1];
        cursor.read_exact(&mut done_byte).expect("length checked above");
        let done = match done_byte[0] {
            0 => false,
            1 => true,
            other => {
                return Err(Error::Parse {
                    context: bpath.display().to_string(),
                    message: format!("record {i}: done flag byte is {other}, expected 0 or 1"),
                })
            }
        };
        let finite = r.is_finite()
            && s.iter().all(|v| v.is_finite())
            && a.iter().all(|v| v.is_finite())
            && s_next.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Schema {
                path: bpath.display().to_string(),
                message: format!("record {i} contains a non-finite value"),
            });
        }
        transitions.push(Transition { s, a, r, s_next, done });
    }
    OfflineDataset::from_transitions(
        transitions,
        env,
        manifest.quality,
        manifest.seed,
        manifest.split,
    )
}
