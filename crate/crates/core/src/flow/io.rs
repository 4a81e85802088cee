//! Flow model files: a self-describing header (dimensions, hidden sizes,
//! block orderings, build seed) followed by every parameter as a
//! little-endian 64-bit float. Loading rebuilds the masks from the stored
//! seed and restores bit-identical evaluation.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::model::FlowModel;
use crate::nn::LossModel;

const MAGIC: &[u8; 8] = b"VSPSFLW1";
const VERSION: u32 = 1;

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn save_flow(model: &FlowModel, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    write_u32(&mut w, VERSION)?;
    write_u32(&mut w, model.response_dim() as u32)?;
    write_u32(&mut w, model.feature_dim() as u32)?;
    write_u32(&mut w, model.n_blocks() as u32)?;
    write_u32(&mut w, model.hidden_sizes().len() as u32)?;
    for &h in model.hidden_sizes() {
        write_u32(&mut w, h as u32)?;
    }
    write_u64(&mut w, model.seed())?;
    for block in model.blocks() {
        for &rank in block.ordering() {
            write_u32(&mut w, rank as u32)?;
        }
    }
    let params = model.params();
    write_u64(&mut w, params.len() as u64)?;
    for v in params {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_flow(path: &Path) -> Result<FlowModel> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::ModelFile(format!("{}: not a flow model file", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::ModelFile(format!("unsupported model file version {version}")));
    }
    let d = read_u32(&mut r)? as usize;
    let p = read_u32(&mut r)? as usize;
    let n_blocks = read_u32(&mut r)? as usize;
    let n_hidden = read_u32(&mut r)? as usize;
    let mut hidden = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden.push(read_u32(&mut r)? as usize);
    }
    let seed = read_u64(&mut r)?;

    let mut model = FlowModel::new(d, p, &hidden, n_blocks, seed)?;
    for block in model.blocks() {
        for &expected in block.ordering() {
            let stored = read_u32(&mut r)? as usize;
            if stored != expected {
                return Err(Error::ModelFile(
                    "stored block ordering does not match the rebuilt model".into(),
                ));
            }
        }
    }
    let n_params = read_u64(&mut r)? as usize;
    if n_params != model.param_count() {
        return Err(Error::ModelFile(format!(
            "file has {} parameters, architecture needs {}",
            n_params,
            model.param_count()
        )));
    }
    let mut params = vec![0.0; n_params];
    let mut buf = [0u8; 8];
    for v in params.iter_mut() {
        r.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    model.set_params(&params)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::nn::TrainConfig;
    use crate::rng::{rng_from_seed, standard_normal_vector};

    #[test]
    fn save_load_restores_bit_identical_evaluation() {
        // Nudge the model off its init point so the file carries trained-like params.
        let mut rng = rng_from_seed(100);
        let mut y = Matrix::zeros(32, 2);
        for b in 0..32 {
            y.row_mut(b).copy_from_slice(&standard_normal_vector(&mut rng, 2));
        }
        let x = Matrix::zeros(32, 1);
        let mut model = FlowModel::new(2, 1, &[8, 8], 3, 7).unwrap();
        let cfg = TrainConfig {
            batch_size: 16,
            max_epochs: 3,
            patience: 3,
            ..TrainConfig::default()
        };
        crate::nn::train(&mut model, &x, &y, &x, &y, &cfg).unwrap();

        let dir = std::env::temp_dir().join("vsps_flow_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.vspsflow");
        save_flow(&model, &path).unwrap();
        let loaded = load_flow(&path).unwrap();
        assert_eq!(model.params(), loaded.params());
        for probe in 0..10 {
            let y = standard_normal_vector(&mut rng, 2);
            let xv = standard_normal_vector(&mut rng, 1);
            let (za, la) = model.forward(&y, &xv).unwrap();
            let (zb, lb) = loaded.forward(&y, &xv).unwrap();
            assert_eq!(za, zb, "probe {probe}");
            assert_eq!(la, lb);
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn garbage_file_is_rejected() {
        let dir = std::env::temp_dir().join("vsps_flow_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("garbage.vspsflow");
        std::fs::write(&path, b"not a model").unwrap();
        assert!(load_flow(&path).is_err());
        std::fs::remove_file(&path).ok();
    }
}
