//! Weight file serialization.
//!
//! Layout (all integers little-endian):
//!   magic "DSRCNNWT" (8 bytes), format version u32,
//!   config block (five u32 block channels, five u32 conv counts,
//!   u32 iterations, u32 kernel side, f64 dropout ratio, u32 input channels,
//!   u64 seed), u32 array count, then per array: u32 name length, name bytes,
//!   four u64 dims, f64 values. Arrays appear in the model's canonical
//!   parameter order, so save is byte-deterministic.

use crate::error::{Error, Result};
use crate::model::{build_model, Model, ModelConfig, BLOCK_COUNT};
use crate::seeded_rng;
use crate::tensor::{Shape, Tensor};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"DSRCNNWT";
const VERSION: u32 = 1;

pub fn save_weights(model: &Model, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    write_config(&mut w, &model.config)?;

    let mut arrays: Vec<(String, Tensor)> = Vec::new();
    model.for_each_param(&mut |name, t| arrays.push((name.to_string(), t.clone())));
    w.write_all(&(arrays.len() as u32).to_le_bytes())?;
    for (name, tensor) in arrays {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        let s = tensor.shape();
        for dim in [s.batch, s.channels, s.height, s.width] {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Load a self-describing weight file.
pub fn load_weights(path: &Path) -> Result<Model> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::WeightFormat("file too short for header".into()))?;
    if &magic != MAGIC {
        return Err(Error::WeightFormat("bad magic bytes".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::WeightFormat(format!(
            "unsupported format version {version}"
        )));
    }
    let config = read_config(&mut r)?;
    config
        .validate()
        .map_err(|e| Error::WeightFormat(format!("embedded config invalid: {e}")))?;

    // Build the skeleton, then overwrite every parameter from the file,
    // checking each record against the canonical name/shape sequence.
    let mut model = build_model(&config, &mut seeded_rng(config.seed))?;
    let mut expected: Vec<(String, Shape)> = Vec::new();
    model.for_each_param(&mut |name, t| expected.push((name.to_string(), t.shape())));

    let count = read_u32(&mut r)? as usize;
    if count != expected.len() {
        return Err(Error::WeightFormat(format!(
            "file holds {count} arrays but the embedded config requires {}",
            expected.len()
        )));
    }

    let mut arrays = Vec::with_capacity(count);
    for (name, shape) in &expected {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)
            .map_err(|_| Error::WeightFormat(format!("truncated while reading `{name}`")))?;
        let file_name = String::from_utf8(name_bytes)
            .map_err(|_| Error::WeightFormat("array name is not utf-8".into()))?;
        if &file_name != name {
            return Err(Error::WeightFormat(format!(
                "array order mismatch: expected `{name}`, found `{file_name}`"
            )));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = read_u64(&mut r)? as usize;
        }
        let file_shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        if file_shape != *shape {
            return Err(Error::WeightFormat(format!(
                "array `{name}` has shape {file_shape}, expected {shape}"
            )));
        }
        let mut data = vec![0.0f64; file_shape.count()];
        for v in &mut data {
            *v = read_f64(&mut r)
                .map_err(|_| Error::WeightFormat(format!("truncated while reading `{name}`")))?;
        }
        arrays.push(Tensor::from_vec(file_shape, data)?);
    }

    let mut iter = arrays.into_iter();
    model.for_each_param_mut(&mut |_, t| {
        *t = iter.next().expect("record count checked above");
    });
    Ok(model)
}

/// Load a weight file that must match `expected`; a differing embedded config
/// is rejected with a diagnostic naming the first offending block.
pub fn load_weights_expecting(path: &Path, expected: &ModelConfig) -> Result<Model> {
    let model = load_weights(path)?;
    let found = &model.config;
    for m in 0..BLOCK_COUNT {
        if found.block_channels[m] != expected.block_channels[m] {
            return Err(Error::WeightFormat(format!(
                "block {} holds {} channels in the file but the current config expects {}",
                m + 1,
                found.block_channels[m],
                expected.block_channels[m]
            )));
        }
        if found.convs_per_block[m] != expected.convs_per_block[m] {
            return Err(Error::WeightFormat(format!(
                "block {} holds {} conv layers in the file but the current config expects {}",
                m + 1,
                found.convs_per_block[m],
                expected.convs_per_block[m]
            )));
        }
    }
    if found.rcl_iterations != expected.rcl_iterations
        || found.kernel_side != expected.kernel_side
        || found.input_channels != expected.input_channels
    {
        return Err(Error::WeightFormat(format!(
            "file config (iterations {}, kernel {}, input channels {}) does not match \
             the current config (iterations {}, kernel {}, input channels {})",
            found.rcl_iterations,
            found.kernel_side,
            found.input_channels,
            expected.rcl_iterations,
            expected.kernel_side,
            expected.input_channels
        )));
    }
    Ok(model)
}

fn write_config(w: &mut impl Write, config: &ModelConfig) -> Result<()> {
    for &c in &config.block_channels {
        w.write_all(&(c as u32).to_le_bytes())?;
    }
    for &c in &config.convs_per_block {
        w.write_all(&(c as u32).to_le_bytes())?;
    }
    w.write_all(&(config.rcl_iterations as u32).to_le_bytes())?;
    w.write_all(&(config.kernel_side as u32).to_le_bytes())?;
    w.write_all(&config.dropout_ratio.to_le_bytes())?;
    w.write_all(&(config.input_channels as u32).to_le_bytes())?;
    w.write_all(&config.seed.to_le_bytes())?;
    Ok(())
}

fn read_config(r: &mut impl Read) -> Result<ModelConfig> {
    let mut block_channels = [0usize; BLOCK_COUNT];
    for c in &mut block_channels {
        *c = read_u32(r)? as usize;
    }
    let mut convs_per_block = [0usize; BLOCK_COUNT];
    for c in &mut convs_per_block {
        *c = read_u32(r)? as usize;
    }
    Ok(ModelConfig {
        block_channels,
        convs_per_block,
        rcl_iterations: read_u32(r)? as usize,
        kernel_side: read_u32(r)? as usize,
        dropout_ratio: read_f64(r)?,
        input_channels: read_u32(r)? as usize,
        seed: read_u64(r)?,
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::Mode;
    use crate::tensor::Shape;
    use rand::Rng as _;

    fn toy_config() -> ModelConfig {
        ModelConfig {
            block_channels: [2, 2, 3, 3, 3],
            convs_per_block: [1, 1, 1, 1, 1],
            ..ModelConfig::default()
        }
    }

    fn random_image(seed: u64) -> Tensor {
        let mut rng = seeded_rng(seed);
        Tensor::from_vec(
            Shape::new(1, 3, 16, 16),
            (0..3 * 256).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_forward_outputs_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.weights");
        let model = build_model(&toy_config(), &mut seeded_rng(5)).unwrap();
        save_weights(&model, &path).unwrap();
        let loaded = load_weights(&path).unwrap();

        let image = random_image(6);
        let a = model.forward(&image, Mode::Infer, &mut seeded_rng(0)).unwrap();
        let b = loaded.forward(&image, Mode::Infer, &mut seeded_rng(0)).unwrap();
        assert_eq!(a.fused_map, b.fused_map);
        for (x, y) in a.side_maps.iter().zip(&b.side_maps) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn save_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let model = build_model(&toy_config(), &mut seeded_rng(9)).unwrap();
        let p1 = dir.path().join("a.weights");
        let p2 = dir.path().join("b.weights");
        save_weights(&model, &p1).unwrap();
        save_weights(&model, &p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.weights");
        let model = build_model(&toy_config(), &mut seeded_rng(5)).unwrap();
        save_weights(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = dir.path().join("cut.weights");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_weights(&cut).is_err());
    }

    #[test]
    fn garbage_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.weights");
        std::fs::write(&path, b"NOTAMODELFILE---").unwrap();
        let err = load_weights(&path).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn config_mismatch_names_the_offending_block() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.weights");
        let model = build_model(&toy_config(), &mut seeded_rng(5)).unwrap();
        save_weights(&model, &path).unwrap();

        let mut other = toy_config();
        other.block_channels[2] = 4;
        let err = load_weights_expecting(&path, &other).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("block 3"), "message was: {msg}");

        assert!(load_weights_expecting(&path, &toy_config()).is_ok());
    }
}
