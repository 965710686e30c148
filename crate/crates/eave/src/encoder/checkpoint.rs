use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::config::EaveConfig;
use super::params::EaveModel;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"EAVECKPT";
const VERSION: u32 = 1;

/// Writes a checkpoint: magic, version, canonical config JSON, then every
/// named parameter tensor (name, shape, row-major little-endian f32).
pub fn save_model(path: &Path, model: &EaveModel<f32>) -> Result<()> {
    let f = File::create(path)?;
    let mut w = BufWriter::new(f);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    let config_json = serde_json::to_vec(&model.config)?;
    w.write_u32::<LittleEndian>(config_json.len() as u32)?;
    w.write_all(&config_json)?;

    let mut entries: Vec<(String, &Tensor<f32>)> = Vec::new();
    model.visit_params(&mut |name, t| entries.push((name, t)));
    w.write_u32::<LittleEndian>(entries.len() as u32)?;
    for (name, t) in entries {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LittleEndian>(t.shape().len() as u32)?;
        for &d in t.shape() {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for &v in t.data() {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<EaveModel<f32>> {
    let bad = |detail: &str| Error::Checkpoint {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    let f = File::open(path)?;
    let mut r = BufReader::new(f);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| bad("file too short for magic"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let cfg_len = r.read_u32::<LittleEndian>()? as usize;
    let mut cfg_bytes = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_bytes)
        .map_err(|_| bad("truncated config"))?;
    let config: EaveConfig = serde_json::from_slice(&cfg_bytes)?;

    // Build a skeleton with the right shapes, then overwrite every tensor.
    let mut model = EaveModel::init(config, 0)?;
    let count = r.read_u32::<LittleEndian>()? as usize;
    let expected = model.param_names();
    if count != expected.len() {
        return Err(bad(&format!(
            "expected {} parameters, found {count}",
            expected.len()
        )));
    }
    let mut loaded: Vec<(String, Tensor<f32>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.read_u32::<LittleEndian>()? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)
            .map_err(|_| bad("truncated parameter name"))?;
        let name = String::from_utf8(name_bytes).map_err(|_| bad("parameter name not utf-8"))?;
        let rank = r.read_u32::<LittleEndian>()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0f32; numel];
        for v in data.iter_mut() {
            *v = r
                .read_f32::<LittleEndian>()
                .map_err(|_| bad("truncated tensor data"))?;
        }
        loaded.push((name, Tensor::new(data, &shape)?));
    }

    let mut idx = 0;
    let mut failure: Option<Error> = None;
    model.visit_params_mut(&mut |name, t| {
        if failure.is_some() {
            return;
        }
        let (got_name, got) = &loaded[idx];
        if *got_name != name {
            failure = Some(Error::Checkpoint {
                path: path.to_path_buf(),
                detail: format!("parameter order mismatch: expected {name}, found {got_name}"),
            });
            return;
        }
        if got.shape() != t.shape() {
            failure = Some(Error::Checkpoint {
                path: path.to_path_buf(),
                detail: format!(
                    "parameter {name}: shape {:?} does not match expected {:?}",
                    got.shape(),
                    t.shape()
                ),
            });
            return;
        }
        t.data_mut().copy_from_slice(got.data());
        idx += 1;
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::super::config::tests::tiny_config;
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn checkpoint_round_trip_is_bit_identical() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.eave");
        let model = EaveModel::init(tiny_config(), 42).unwrap();
        save_model(&path, &model).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.config, model.config);
        let a = model.flatten();
        let b = loaded.flatten();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("junk.eave");
        std::fs::write(&path, b"NOTACKPT0000").unwrap();
        let err = load_model(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
    }
}
