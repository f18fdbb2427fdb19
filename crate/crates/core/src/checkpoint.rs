//! Checkpoint format.
//!
//! Layout: the ASCII magic `EAGPS1`, a length-prefixed UTF-8 text record
//! holding the configuration (key=value lines, including the data dimensions
//! and the optimizer step), a record count, then one record per tensor:
//! `{u64 name length, name bytes, u64 rows, u64 cols, rows*cols f64 values}`,
//! all integers and floats little-endian. Parameter values are stored under
//! their own names; Adam moments under `adam_m.<name>` / `adam_v.<name>`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::config::HyperConfig;
use crate::data::SequenceSet;
use crate::error::{Error, Result};
use crate::model::{init_params, Model, Wiring};
use crate::tensor::Tensor2;

pub const MAGIC: &[u8; 6] = b"EAGPS1";

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn write_record<W: Write>(w: &mut W, name: &str, t: &Tensor2) -> Result<()> {
    write_u64(w, name.len() as u64)?;
    w.write_all(name.as_bytes())?;
    write_u64(w, t.rows as u64)?;
    write_u64(w, t.cols as u64)?;
    for v in &t.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_record<R: Read>(r: &mut R) -> Result<(String, Tensor2)> {
    let name_len = read_u64(r)? as usize;
    let mut name_bytes = vec![0u8; name_len];
    r.read_exact(&mut name_bytes)?;
    let name = String::from_utf8(name_bytes)
        .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?;
    let rows = read_u64(r)? as usize;
    let cols = read_u64(r)? as usize;
    let mut data = vec![0.0f64; rows * cols];
    let mut buf = [0u8; 8];
    for v in &mut data {
        r.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    Ok((name, Tensor2::from_vec(rows, cols, data)))
}

/// Serialize a model. The leading text record carries the hyper config plus
/// `m`, `n`, `max_len`, and `step`.
pub fn save(model: &Model, path: &Path) -> Result<()> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MAGIC);
    let cfg_text = format!(
        "{}m={}\nmax_len={}\nn={}\nstep={}\n",
        model.wiring.cfg.to_kv_text(),
        model.wiring.m,
        model.wiring.max_len,
        model.wiring.n,
        model.step,
    );
    write_u64(&mut out, cfg_text.len() as u64)?;
    out.extend_from_slice(cfg_text.as_bytes());

    let names = model.params.names();
    write_u64(&mut out, 3 * names.len() as u64)?;
    for name in names {
        let p = model.params.param(&name);
        write_record(&mut out, &name, &p.value)?;
        write_record(&mut out, &format!("adam_m.{name}"), &p.adam_m)?;
        write_record(&mut out, &format!("adam_v.{name}"), &p.adam_v)?;
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub struct CheckpointData {
    pub cfg: HyperConfig,
    pub m: usize,
    pub n: usize,
    pub max_len: usize,
    pub step: u64,
    pub tensors: BTreeMap<String, Tensor2>,
}

/// Read a checkpoint file back into its raw parts.
pub fn load(path: &Path) -> Result<CheckpointData> {
    let bytes = std::fs::read(path)?;
    let mut r = bytes.as_slice();
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let cfg_len = read_u64(&mut r)? as usize;
    let mut cfg_bytes = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_bytes)?;
    let cfg_text = String::from_utf8(cfg_bytes)
        .map_err(|_| Error::Checkpoint("config record is not UTF-8".into()))?;

    let mut cfg = HyperConfig::default();
    let (mut m, mut n, mut max_len, mut step) = (None, None, None, None);
    for line in cfg_text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("bad config line {line:?}")))?;
        let parse_usize = || -> Result<usize> {
            value.parse().map_err(|_| Error::Checkpoint(format!("bad value for {key}")))
        };
        match key {
            "m" => m = Some(parse_usize()?),
            "n" => n = Some(parse_usize()?),
            "max_len" => max_len = Some(parse_usize()?),
            "step" => {
                step = Some(
                    value
                        .parse::<u64>()
                        .map_err(|_| Error::Checkpoint("bad value for step".into()))?,
                )
            }
            _ => cfg
                .apply_kv(key, value)
                .map_err(|e| Error::Checkpoint(format!("config: {e}")))?,
        }
    }
    let missing = |what: &str| Error::Checkpoint(format!("missing {what} in config record"));
    let (m, n, max_len, step) = (
        m.ok_or_else(|| missing("m"))?,
        n.ok_or_else(|| missing("n"))?,
        max_len.ok_or_else(|| missing("max_len"))?,
        step.ok_or_else(|| missing("step"))?,
    );

    let count = read_u64(&mut r)? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let (name, t) = read_record(&mut r)?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate record {name}")));
        }
    }
    if !r.is_empty() {
        return Err(Error::Checkpoint("trailing bytes after records".into()));
    }
    Ok(CheckpointData { cfg, m, n, max_len, step, tensors })
}

/// Rebuild a model from a checkpoint and the dataset it was trained on.
/// Dimensions and every tensor shape are validated against the stored
/// config.
pub fn restore(path: &Path, set: &SequenceSet) -> Result<Model> {
    let data = load(path)?;
    if set.m_items != data.m || set.n_users != data.n {
        return Err(Error::Checkpoint(format!(
            "dataset has {} items / {} users, checkpoint expects {} / {}",
            set.m_items, set.n_users, data.m, data.n
        )));
    }
    if set.max_len() > data.max_len {
        return Err(Error::Checkpoint(format!(
            "dataset sequences up to {} exceed checkpoint max_len {}",
            set.max_len(),
            data.max_len
        )));
    }
    let mut wiring = Wiring::build(data.cfg.clone(), set)?;
    wiring.max_len = data.max_len;
    let mut params = init_params(&wiring.cfg, wiring.m, wiring.n, wiring.max_len);

    let mut consumed = 0usize;
    for name in params.names() {
        let expected = {
            let t = &params.param(&name).value;
            (t.rows, t.cols)
        };
        for prefix in ["", "adam_m.", "adam_v."] {
            let key = format!("{prefix}{name}");
            let stored = data
                .tensors
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing record {key}")))?;
            if (stored.rows, stored.cols) != expected {
                return Err(Error::Checkpoint(format!(
                    "record {key} is {}x{}, expected {}x{}",
                    stored.rows, stored.cols, expected.0, expected.1
                )));
            }
            let p = params.param_mut(&name);
            match prefix {
                "" => p.value = stored.clone(),
                "adam_m." => p.adam_m = stored.clone(),
                _ => p.adam_v = stored.clone(),
            }
            consumed += 1;
        }
    }
    if consumed != data.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} records, model expects {consumed}",
            data.tensors.len()
        )));
    }
    Ok(Model { wiring, params, step: data.step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{HyperConfig, LossMode, Variant};
    use crate::data::{build_sequences, split_train_test, synth_dataset};
    use crate::model::make_training_examples;
    use crate::trainer::train;

    fn small_setup() -> (crate::data::SequenceSet, HyperConfig) {
        let log = synth_dataset(6, 15, 5, 0.1, 4).unwrap();
        let mut set = build_sequences(&log, 3, 1, crate::data::DEFAULT_WINDOW_SECONDS).unwrap();
        split_train_test(&mut set, 0.8, 4).unwrap();
        let mut cfg = HyperConfig::default();
        cfg.d = 8;
        cfg.d1 = 8;
        cfg.alpha = 4;
        cfg.beta = 2;
        cfg.lr = 0.01;
        cfg.variant = Variant::EaGps;
        (set, cfg)
    }

    #[test]
    fn save_restore_roundtrip_preserves_everything() {
        let (set, cfg) = small_setup();
        let mut model = Model::new(cfg, &set).unwrap();
        let examples = make_training_examples(&model.wiring.enc_seqs, LossMode::LastItem);
        train(&mut model, &examples, 3).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.eagps");
        save(&model, &path).unwrap();
        let restored = restore(&path, &set).unwrap();

        assert_eq!(restored.step, model.step);
        assert_eq!(restored.wiring.cfg, model.wiring.cfg);
        for name in model.params.names() {
            assert_eq!(
                restored.params.param(&name).value.data,
                model.params.param(&name).value.data,
                "{name} value"
            );
            assert_eq!(
                restored.params.param(&name).adam_m.data,
                model.params.param(&name).adam_m.data,
                "{name} adam_m"
            );
        }
    }

    /// Training N epochs straight equals training k epochs, checkpointing,
    /// restoring, and training the rest.
    #[test]
    fn resume_continues_bitwise() {
        let (set, cfg) = small_setup();
        let mut straight = Model::new(cfg.clone(), &set).unwrap();
        let examples = make_training_examples(&straight.wiring.enc_seqs, LossMode::LastItem);
        train(&mut straight, &examples, 6).unwrap();

        let mut first = Model::new(cfg, &set).unwrap();
        train(&mut first, &examples, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.eagps");
        save(&first, &path).unwrap();
        let mut resumed = restore(&path, &set).unwrap();
        train(&mut resumed, &examples, 3).unwrap();

        assert_eq!(resumed.step, straight.step);
        for name in straight.params.names() {
            assert_eq!(
                resumed.params.param(&name).value.data,
                straight.params.param(&name).value.data,
                "{name}"
            );
        }
    }

    #[test]
    fn corrupt_magic_and_shape_mismatch_are_rejected() {
        let (set, cfg) = small_setup();
        let model = Model::new(cfg, &set).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.eagps");
        save(&model, &path).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        let bad = dir.path().join("bad.eagps");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(load(&bad), Err(Error::Checkpoint(_))));

        // Restoring against a dataset with different dimensions fails.
        let log = synth_dataset(3, 25, 5, 0.0, 9).unwrap();
        let mut other =
            build_sequences(&log, 3, 1, crate::data::DEFAULT_WINDOW_SECONDS).unwrap();
        split_train_test(&mut other, 0.5, 1).unwrap();
        assert!(matches!(restore(&path, &other), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn checkpoint_bytes_are_deterministic() {
        let (set, cfg) = small_setup();
        let write_once = || {
            let mut model = Model::new(cfg.clone(), &set).unwrap();
            let examples =
                make_training_examples(&model.wiring.enc_seqs, LossMode::LastItem);
            train(&mut model, &examples, 2).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("model.eagps");
            save(&model, &path).unwrap();
            std::fs::read(&path).unwrap()
        };
        assert_eq!(write_once(), write_once());
    }
}
