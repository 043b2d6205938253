//! Binary checkpoint format for training state.
//!
//! A checkpoint is a flat container of named blobs:
//!
//! ```text
//! magic "WSPK" | version u32 | blob count u32
//! per blob: name_len u32 | name (utf-8) | dtype u8 | payload_len u32 | payload
//! ```
//!
//! All integers are little-endian. `dtype` is 0 for f32 arrays, 1 for u64
//! arrays, 2 for raw bytes. The stored blobs are the model parameters
//! (`param/{name}`), optimizer moments (`adam/m/{name}`, `adam/v/{name}`),
//! and run metadata (`meta/...`), including the full training config as TOML
//! plus its SHA-256 digest. The digest covers every config field except
//! `epochs`, so a resumed run may extend training but not alter the recipe.
//! Files are written atomically (temp file + rename).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::adam::Adam;
use super::{TrainConfig, TrainError};
use crate::layers::Model;
use crate::objective::ProjectionHead;

pub const CKPT_MAGIC: [u8; 4] = *b"WSPK";
pub const CKPT_VERSION: u32 = 1;

/// Parsed checkpoint contents.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// Completed epochs.
    pub epoch: u64,
    /// Completed optimizer steps.
    pub step: u64,
    pub seed: u64,
    pub n_class: u64,
    /// Input `[channels, height, width]`.
    pub input_shape: [u64; 3],
    pub config_sha256: [u8; 32],
    pub config_toml: String,
    pub params: BTreeMap<String, Vec<f32>>,
    pub adam_m: BTreeMap<String, Vec<f32>>,
    pub adam_v: BTreeMap<String, Vec<f32>>,
}

/// SHA-256 of the resume-invariant part of a config (all fields except
/// `epochs`).
pub fn config_digest(cfg: &TrainConfig) -> Result<[u8; 32], TrainError> {
    let mut canonical = cfg.clone();
    canonical.epochs = 0;
    let text = toml::to_string(&canonical)
        .map_err(|e| TrainError::Config(format!("config not serializable: {e}")))?;
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    Ok(hasher.finalize().into())
}

enum Blob<'a> {
    F32(&'a [f32]),
    U64(&'a [u64]),
    Bytes(&'a [u8]),
}

fn push_blob(buf: &mut Vec<u8>, name: &str, blob: Blob<'_>) {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    match blob {
        Blob::F32(data) => {
            buf.push(0);
            buf.extend_from_slice(&(4 * data.len() as u32).to_le_bytes());
            for x in data {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        Blob::U64(data) => {
            buf.push(1);
            buf.extend_from_slice(&(8 * data.len() as u32).to_le_bytes());
            for x in data {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        Blob::Bytes(data) => {
            buf.push(2);
            buf.extend_from_slice(&(data.len() as u32).to_le_bytes());
            buf.extend_from_slice(data);
        }
    }
}

/// Captures the full training state into a [`Checkpoint`].
pub fn snapshot(
    model: &Model<f32>,
    head: &ProjectionHead<f32>,
    adam: &Adam<f32>,
    epoch: u64,
    seed: u64,
    config: &TrainConfig,
) -> Result<Checkpoint, TrainError> {
    let config_toml = toml::to_string(config)
        .map_err(|e| TrainError::Config(format!("config not serializable: {e}")))?;
    let mut params = BTreeMap::new();
    for e in model.param_entries() {
        params.insert(e.name.clone(), model.param_slice(&e).to_vec());
    }
    params.insert("head.weight".into(), head.weight.clone());
    params.insert("head.bias".into(), head.bias.clone());
    let mut adam_m = BTreeMap::new();
    let mut adam_v = BTreeMap::new();
    for (i, name) in adam.names.iter().enumerate() {
        adam_m.insert(name.clone(), adam.m[i].clone());
        adam_v.insert(name.clone(), adam.v[i].clone());
    }
    let [c, h, w] = model.input_shape;
    Ok(Checkpoint {
        epoch,
        step: adam.t,
        seed,
        n_class: model.n_class as u64,
        input_shape: [c as u64, h as u64, w as u64],
        config_sha256: config_digest(config)?,
        config_toml,
        params,
        adam_m,
        adam_v,
    })
}

/// Serializes and writes a checkpoint atomically.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), TrainError> {
    let mut blobs: Vec<(String, Blob<'_>)> = Vec::new();
    for (name, data) in &ckpt.params {
        blobs.push((format!("param/{name}"), Blob::F32(data)));
    }
    for (name, data) in &ckpt.adam_m {
        blobs.push((format!("adam/m/{name}"), Blob::F32(data)));
    }
    for (name, data) in &ckpt.adam_v {
        blobs.push((format!("adam/v/{name}"), Blob::F32(data)));
    }
    let meta_scalars = [
        ("meta/epoch", [ckpt.epoch]),
        ("meta/step", [ckpt.step]),
        ("meta/seed", [ckpt.seed]),
        ("meta/n_class", [ckpt.n_class]),
    ];
    for (name, value) in &meta_scalars {
        blobs.push((name.to_string(), Blob::U64(value)));
    }
    blobs.push(("meta/input_shape".into(), Blob::U64(&ckpt.input_shape)));
    blobs.push(("meta/config_sha256".into(), Blob::Bytes(&ckpt.config_sha256)));
    blobs.push((
        "meta/config_toml".into(),
        Blob::Bytes(ckpt.config_toml.as_bytes()),
    ));

    let mut buf = Vec::new();
    buf.extend_from_slice(&CKPT_MAGIC);
    buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
    for (name, blob) in blobs {
        push_blob(&mut buf, &name, blob);
    }

    let io_err = |source: std::io::Error| TrainError::Io {
        path: path.to_path_buf(),
        source,
    };
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(io_err)?;
        f.write_all(&buf).map_err(io_err)?;
        f.sync_all().map_err(io_err)?;
    }
    fs::rename(&tmp, path).map_err(io_err)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        if self.pos + n > self.buf.len() {
            return Err(TrainError::Checkpoint(format!(
                "truncated checkpoint: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8, TrainError> {
        Ok(self.take(1)?[0])
    }
}

enum OwnedBlob {
    F32(Vec<f32>),
    U64(Vec<u64>),
    Bytes(Vec<u8>),
}

fn want_f32(
    map: &mut BTreeMap<String, OwnedBlob>,
    name: &str,
) -> Result<Vec<f32>, TrainError> {
    match map.remove(name) {
        Some(OwnedBlob::F32(v)) => Ok(v),
        Some(_) => Err(TrainError::Checkpoint(format!(
            "blob {name} has the wrong dtype (expected f32)"
        ))),
        None => Err(TrainError::Checkpoint(format!("missing blob {name}"))),
    }
}

fn want_u64s(
    map: &mut BTreeMap<String, OwnedBlob>,
    name: &str,
    len: usize,
) -> Result<Vec<u64>, TrainError> {
    match map.remove(name) {
        Some(OwnedBlob::U64(v)) if v.len() == len => Ok(v),
        Some(OwnedBlob::U64(v)) => Err(TrainError::Checkpoint(format!(
            "blob {name} has {} values, expected {len}",
            v.len()
        ))),
        Some(_) => Err(TrainError::Checkpoint(format!(
            "blob {name} has the wrong dtype (expected u64)"
        ))),
        None => Err(TrainError::Checkpoint(format!("missing blob {name}"))),
    }
}

fn want_bytes(
    map: &mut BTreeMap<String, OwnedBlob>,
    name: &str,
) -> Result<Vec<u8>, TrainError> {
    match map.remove(name) {
        Some(OwnedBlob::Bytes(v)) => Ok(v),
        Some(_) => Err(TrainError::Checkpoint(format!(
            "blob {name} has the wrong dtype (expected bytes)"
        ))),
        None => Err(TrainError::Checkpoint(format!("missing blob {name}"))),
    }
}

/// Reads and validates a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let buf = fs::read(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4)? != CKPT_MAGIC {
        return Err(TrainError::Checkpoint(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != CKPT_VERSION {
        return Err(TrainError::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CKPT_VERSION})"
        )));
    }
    let count = r.u32()? as usize;
    let mut map = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| TrainError::Checkpoint("blob name is not utf-8".into()))?;
        let dtype = r.u8()?;
        let payload_len = r.u32()? as usize;
        let payload = r.take(payload_len)?;
        let blob = match dtype {
            0 => {
                if payload_len % 4 != 0 {
                    return Err(TrainError::Checkpoint(format!(
                        "f32 blob {name} has odd byte length {payload_len}"
                    )));
                }
                OwnedBlob::F32(
                    payload
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            1 => {
                if payload_len % 8 != 0 {
                    return Err(TrainError::Checkpoint(format!(
                        "u64 blob {name} has odd byte length {payload_len}"
                    )));
                }
                OwnedBlob::U64(
                    payload
                        .chunks_exact(8)
                        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            2 => OwnedBlob::Bytes(payload.to_vec()),
            other => {
                return Err(TrainError::Checkpoint(format!(
                    "blob {name} has unknown dtype {other}"
                )))
            }
        };
        if map.insert(name.clone(), blob).is_some() {
            return Err(TrainError::Checkpoint(format!("duplicate blob {name}")));
        }
    }
    if r.pos != buf.len() {
        return Err(TrainError::Checkpoint(format!(
            "{} trailing bytes after the last blob",
            buf.len() - r.pos
        )));
    }

    let mut params = BTreeMap::new();
    let mut adam_m = BTreeMap::new();
    let mut adam_v = BTreeMap::new();
    let names: Vec<String> = map.keys().cloned().collect();
    for name in names {
        if let Some(rest) = name.strip_prefix("param/") {
            let rest = rest.to_string();
            params.insert(rest, want_f32(&mut map, &name)?);
        } else if let Some(rest) = name.strip_prefix("adam/m/") {
            let rest = rest.to_string();
            adam_m.insert(rest, want_f32(&mut map, &name)?);
        } else if let Some(rest) = name.strip_prefix("adam/v/") {
            let rest = rest.to_string();
            adam_v.insert(rest, want_f32(&mut map, &name)?);
        }
    }
    let epoch = want_u64s(&mut map, "meta/epoch", 1)?[0];
    let step = want_u64s(&mut map, "meta/step", 1)?[0];
    let seed = want_u64s(&mut map, "meta/seed", 1)?[0];
    let n_class = want_u64s(&mut map, "meta/n_class", 1)?[0];
    let shape = want_u64s(&mut map, "meta/input_shape", 3)?;
    let digest = want_bytes(&mut map, "meta/config_sha256")?;
    let digest: [u8; 32] = digest
        .try_into()
        .map_err(|_| TrainError::Checkpoint("config digest is not 32 bytes".into()))?;
    let config_toml = String::from_utf8(want_bytes(&mut map, "meta/config_toml")?)
        .map_err(|_| TrainError::Checkpoint("embedded config is not utf-8".into()))?;
    if params.is_empty() {
        return Err(TrainError::Checkpoint("checkpoint holds no parameters".into()));
    }
    Ok(Checkpoint {
        epoch,
        step,
        seed,
        n_class,
        input_shape: [shape[0], shape[1], shape[2]],
        config_sha256: digest,
        config_toml,
        params,
        adam_m,
        adam_v,
    })
}

fn copy_named(dst: &mut [f32], src: &BTreeMap<String, Vec<f32>>, name: &str, what: &str) -> Result<(), TrainError> {
    let v = src
        .get(name)
        .ok_or_else(|| TrainError::Checkpoint(format!("checkpoint lacks {what} {name}")))?;
    if v.len() != dst.len() {
        return Err(TrainError::Checkpoint(format!(
            "{what} {name} holds {} values but the model wants {}",
            v.len(),
            dst.len()
        )));
    }
    dst.copy_from_slice(v);
    Ok(())
}

/// Restores parameters and optimizer state from a checkpoint into freshly
/// built `model`/`head`/`adam` of matching architecture.
pub fn restore_into(
    ckpt: &Checkpoint,
    model: &mut Model<f32>,
    head: &mut ProjectionHead<f32>,
    adam: &mut Adam<f32>,
) -> Result<(), TrainError> {
    if ckpt.n_class != model.n_class as u64 {
        return Err(TrainError::Checkpoint(format!(
            "checkpoint was trained with {} classes, model has {}",
            ckpt.n_class, model.n_class
        )));
    }
    for e in model.param_entries() {
        copy_named(model.param_slice_mut(&e), &ckpt.params, &e.name, "parameter")?;
    }
    copy_named(&mut head.weight, &ckpt.params, "head.weight", "parameter")?;
    copy_named(&mut head.bias, &ckpt.params, "head.bias", "parameter")?;
    for (i, name) in adam.names.clone().iter().enumerate() {
        copy_named(&mut adam.m[i], &ckpt.adam_m, name, "adam moment")?;
        copy_named(&mut adam.v[i], &ckpt.adam_v, name, "adam moment")?;
    }
    adam.t = ckpt.step;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::tests::tiny_config;

    fn build_state(
        cfg: &TrainConfig,
    ) -> (Model<f32>, ProjectionHead<f32>, Adam<f32>) {
        let model = crate::layers::build_model(&cfg.model, [2, 4, 6], 2, cfg.seed).unwrap();
        let tap_len = model.layers[model.tap_layer.unwrap()].out_shape.len();
        let head = ProjectionHead::new(tap_len, cfg.loss.projection_dim, cfg.seed).unwrap();
        let mut shapes: Vec<(String, usize)> = model
            .param_entries()
            .iter()
            .map(|e| (e.name.clone(), e.len))
            .collect();
        shapes.push(("head.weight".into(), head.weight.len()));
        shapes.push(("head.bias".into(), head.bias.len()));
        let adam = Adam::new(&shapes, 0.9, 0.999, 1e-8);
        (model, head, adam)
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let cfg = tiny_config();
        let (model, head, mut adam) = build_state(&cfg);
        adam.t = 17;
        adam.m[0][0] = 0.25;
        adam.v[2][1] = 1.5;
        let ckpt = snapshot(&model, &head, &adam, 3, cfg.seed, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.wspk");
        save_checkpoint(&path, &ckpt).unwrap();

        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.epoch, 3);
        assert_eq!(loaded.step, 17);
        assert_eq!(loaded.n_class, 2);
        assert_eq!(loaded.input_shape, [2, 4, 6]);
        assert_eq!(loaded.config_sha256, ckpt.config_sha256);

        let (mut model2, mut head2, mut adam2) = build_state(&cfg);
        // Scramble, then restore.
        for e in model2.param_entries() {
            for p in model2.param_slice_mut(&e) {
                *p = -9.0;
            }
        }
        restore_into(&loaded, &mut model2, &mut head2, &mut adam2).unwrap();
        for e in model.param_entries() {
            assert_eq!(model.param_slice(&e), model2.param_slice(&e), "{}", e.name);
        }
        assert_eq!(head.weight, head2.weight);
        assert_eq!(adam2.t, 17);
        assert_eq!(adam2.m[0][0], 0.25);
        assert_eq!(adam2.v[2][1], 1.5);
    }

    #[test]
    fn digest_ignores_epochs_only() {
        let cfg = tiny_config();
        let mut more = cfg.clone();
        more.epochs += 5;
        assert_eq!(config_digest(&cfg).unwrap(), config_digest(&more).unwrap());
        let mut other = cfg.clone();
        other.learning_rate = 0.123;
        assert_ne!(config_digest(&cfg).unwrap(), config_digest(&other).unwrap());
    }

    #[test]
    fn bad_magic_and_truncation_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.wspk");
        std::fs::write(&path, b"NOPE0000").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");

        let cfg = tiny_config();
        let (model, head, adam) = build_state(&cfg);
        let ckpt = snapshot(&model, &head, &adam, 0, cfg.seed, &cfg).unwrap();
        let good = dir.path().join("good.wspk");
        save_checkpoint(&good, &ckpt).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        let cut = dir.path().join("cut.wspk");
        std::fs::write(&cut, &bytes[..bytes.len() - 7]).unwrap();
        let err = load_checkpoint(&cut).unwrap_err();
        assert!(matches!(err, TrainError::Checkpoint(_)), "{err}");
    }

    #[test]
    fn restore_rejects_mismatched_shapes() {
        let cfg = tiny_config();
        let (model, head, adam) = build_state(&cfg);
        let mut ckpt = snapshot(&model, &head, &adam, 0, cfg.seed, &cfg).unwrap();
        let first = ckpt.params.keys().next().unwrap().clone();
        ckpt.params.get_mut(&first).unwrap().push(0.0);
        let (mut m2, mut h2, mut a2) = build_state(&cfg);
        let err = restore_into(&ckpt, &mut m2, &mut h2, &mut a2).unwrap_err();
        assert!(err.to_string().contains(&first), "{err}");
    }
}
