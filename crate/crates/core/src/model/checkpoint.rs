//! Checkpoint serialization.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic "LUDM" | version u16 | config | normalization | tensor table
//! ```
//!
//! The config section writes every field in a fixed order; normalization is
//! a presence flag plus per-band f64 (mean, std) pairs; the tensor table is
//! a u32 count followed by (name, dims[4] as u32, f32 payload) entries in
//! sorted name order, covering parameters and batch-norm running statistics
//! (suffixes `.running_mean` / `.running_var`). Identical model state
//! always serializes to identical bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::tensor::Tensor4;

use super::{build_model, Model, ModelConfig, ModelError};

const MAGIC: &[u8; 4] = b"LUDM";
const VERSION: u16 = 1;

fn write_usize_u32<W: Write>(w: &mut W, v: usize, what: &str) -> Result<(), ModelError> {
    let v = u32::try_from(v).map_err(|_| ModelError::Format(format!("{what} exceeds u32")))?;
    w.write_u32::<LittleEndian>(v)?;
    Ok(())
}

fn write_config<W: Write>(w: &mut W, cfg: &ModelConfig) -> Result<(), ModelError> {
    write_usize_u32(w, cfg.in_channels, "in_channels")?;
    write_usize_u32(w, cfg.num_classes, "num_classes")?;
    write_usize_u32(w, cfg.num_stages, "num_stages")?;
    w.write_u16::<LittleEndian>(cfg.branch_widths.len() as u16)?;
    for &width in &cfg.branch_widths {
        write_usize_u32(w, width, "branch width")?;
    }
    write_usize_u32(w, cfg.blocks_per_branch, "blocks_per_branch")?;
    write_usize_u32(w, cfg.stem_downsample, "stem_downsample")?;
    write_usize_u32(w, cfg.stage1_fusion_stride, "stage1_fusion_stride")?;
    write_usize_u32(w, cfg.other_fusion_stride, "other_fusion_stride")?;
    w.write_u16::<LittleEndian>(cfg.dilated_stages.len() as u16)?;
    for &stage in &cfg.dilated_stages {
        write_usize_u32(w, stage, "dilated stage")?;
    }
    write_usize_u32(w, cfg.dilation, "dilation")?;
    w.write_u8(cfg.ocr_enabled as u8)?;
    write_usize_u32(w, cfg.ocr_key_channels, "ocr_key_channels")?;
    w.write_f64::<LittleEndian>(cfg.aux_loss_weight)?;
    w.write_u64::<LittleEndian>(cfg.seed)?;
    Ok(())
}

fn read_config<R: Read>(r: &mut R) -> Result<ModelConfig, ModelError> {
    let in_channels = r.read_u32::<LittleEndian>()? as usize;
    let num_classes = r.read_u32::<LittleEndian>()? as usize;
    let num_stages = r.read_u32::<LittleEndian>()? as usize;
    let n_widths = r.read_u16::<LittleEndian>()? as usize;
    let mut branch_widths = Vec::with_capacity(n_widths.min(16));
    for _ in 0..n_widths {
        branch_widths.push(r.read_u32::<LittleEndian>()? as usize);
    }
    let blocks_per_branch = r.read_u32::<LittleEndian>()? as usize;
    let stem_downsample = r.read_u32::<LittleEndian>()? as usize;
    let stage1_fusion_stride = r.read_u32::<LittleEndian>()? as usize;
    let other_fusion_stride = r.read_u32::<LittleEndian>()? as usize;
    let n_dilated = r.read_u16::<LittleEndian>()? as usize;
    let mut dilated_stages = Vec::with_capacity(n_dilated.min(8));
    for _ in 0..n_dilated {
        dilated_stages.push(r.read_u32::<LittleEndian>()? as usize);
    }
    let dilation = r.read_u32::<LittleEndian>()? as usize;
    let ocr_enabled = match r.read_u8()? {
        0 => false,
        1 => true,
        v => return Err(ModelError::Format(format!("bad ocr flag {v}"))),
    };
    let ocr_key_channels = r.read_u32::<LittleEndian>()? as usize;
    let aux_loss_weight = r.read_f64::<LittleEndian>()?;
    let seed = r.read_u64::<LittleEndian>()?;
    Ok(ModelConfig {
        in_channels,
        num_classes,
        num_stages,
        branch_widths,
        blocks_per_branch,
        stem_downsample,
        stage1_fusion_stride,
        other_fusion_stride,
        dilated_stages,
        dilation,
        ocr_enabled,
        ocr_key_channels,
        aux_loss_weight,
        seed,
    })
}

fn write_tensor<W: Write>(w: &mut W, name: &str, t: &Tensor4) -> Result<(), ModelError> {
    let bytes = name.as_bytes();
    let len = u16::try_from(bytes.len())
        .map_err(|_| ModelError::Format(format!("tensor name too long: {name}")))?;
    w.write_u16::<LittleEndian>(len)?;
    w.write_all(bytes)?;
    for d in t.dims() {
        write_usize_u32(w, d, "tensor dim")?;
    }
    for &v in t.values() {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    Ok(())
}

fn read_tensor<R: Read>(r: &mut R) -> Result<(String, Tensor4), ModelError> {
    let len = r.read_u16::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    let name = String::from_utf8(buf)
        .map_err(|_| ModelError::Format("tensor name is not UTF-8".into()))?;
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        *d = r.read_u32::<LittleEndian>()? as usize;
    }
    let count: usize = dims.iter().product();
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        data.push(r.read_f32::<LittleEndian>()? as f64);
    }
    let tensor = Tensor4::new(dims, data)
        .map_err(|e| ModelError::Format(format!("tensor {name}: {e}")))?;
    Ok((name, tensor))
}

impl Model {
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<(), ModelError> {
        w.write_all(MAGIC)?;
        w.write_u16::<LittleEndian>(VERSION)?;
        write_config(&mut w, &self.config)?;
        match &self.norm {
            Some(stats) => {
                w.write_u8(1)?;
                w.write_u16::<LittleEndian>(stats.len() as u16)?;
                for &(mean, std) in stats {
                    w.write_f64::<LittleEndian>(mean)?;
                    w.write_f64::<LittleEndian>(std)?;
                }
            }
            None => w.write_u8(0)?,
        }

        let mut table: BTreeMap<String, Tensor4> = self.params.clone();
        for (name, stats) in &self.running {
            let c = stats.mean.len();
            table.insert(
                format!("{name}.running_mean"),
                Tensor4::new([1, c, 1, 1], stats.mean.clone())?,
            );
            table.insert(
                format!("{name}.running_var"),
                Tensor4::new([1, c, 1, 1], stats.var.clone())?,
            );
        }
        write_usize_u32(&mut w, table.len(), "tensor count")?;
        for (name, tensor) in &table {
            write_tensor(&mut w, name, tensor)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model, ModelError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ModelError::Format(format!(
                "bad magic {magic:?}, expected \"LUDM\""
            )));
        }
        let version = r.read_u16::<LittleEndian>()?;
        if version != VERSION {
            return Err(ModelError::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let config = read_config(&mut r)?;
        let mut model = build_model(config)?;

        match r.read_u8()? {
            0 => {}
            1 => {
                let n = r.read_u16::<LittleEndian>()? as usize;
                let mut stats = Vec::with_capacity(n);
                for _ in 0..n {
                    let mean = r.read_f64::<LittleEndian>()?;
                    let std = r.read_f64::<LittleEndian>()?;
                    stats.push((mean, std));
                }
                model.set_normalization(stats)?;
            }
            v => return Err(ModelError::Format(format!("bad normalization flag {v}"))),
        }

        let count = r.read_u32::<LittleEndian>()? as usize;
        let mut filled_params = 0usize;
        let mut filled_running = 0usize;
        for _ in 0..count {
            let (name, tensor) = read_tensor(&mut r)?;
            if let Some(bn) = name.strip_suffix(".running_mean") {
                let stats = model.running.get_mut(bn).ok_or_else(|| {
                    ModelError::Format(format!("unexpected running stats {name}"))
                })?;
                if tensor.len() != stats.mean.len() {
                    return Err(ModelError::Format(format!("wrong length for {name}")));
                }
                stats.mean.copy_from_slice(tensor.values());
                filled_running += 1;
            } else if let Some(bn) = name.strip_suffix(".running_var") {
                let stats = model.running.get_mut(bn).ok_or_else(|| {
                    ModelError::Format(format!("unexpected running stats {name}"))
                })?;
                if tensor.len() != stats.var.len() {
                    return Err(ModelError::Format(format!("wrong length for {name}")));
                }
                stats.var.copy_from_slice(tensor.values());
                filled_running += 1;
            } else {
                let param = model.params.get_mut(&name).ok_or_else(|| {
                    ModelError::Format(format!("unexpected parameter {name}"))
                })?;
                if param.dims() != tensor.dims() {
                    return Err(ModelError::Format(format!(
                        "parameter {name}: stored dims {:?} vs expected {:?}",
                        tensor.dims(),
                        param.dims()
                    )));
                }
                *param = tensor;
                filled_params += 1;
            }
        }
        if filled_params != model.params.len() || filled_running != 2 * model.running.len() {
            return Err(ModelError::Format(format!(
                "checkpoint covers {filled_params} of {} parameters and {filled_running} of {} \
                 running-stat vectors",
                model.params.len(),
                2 * model.running.len()
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model, ModelError> {
        Model::read_checkpoint(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;
    use crate::raster::LabelMask;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn trained_toy_model() -> Model {
        let cfg = ModelConfig {
            stem_downsample: 1,
            branch_widths: vec![2, 3],
            blocks_per_branch: 1,
            ocr_key_channels: 2,
            seed: 9,
            ..ModelConfig::default()
        };
        let mut model = build_model(cfg).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let batch = Tensor4::from_fn([1, 5, 12, 12], |_, _, _, _| rng.gen_range(-1.0..1.0));
        let mut mask = LabelMask::filled(12, 12, 0);
        for v in mask.data.iter_mut() {
            *v = if rng.gen_bool(0.5) { 1 } else { 0 };
        }
        model.train_step(&batch, &[mask], 0.05, 0.9).unwrap();
        model.set_normalization(vec![(0.4, 0.1); 5]).unwrap();
        model
    }

    #[test]
    fn round_trip_preserves_state() {
        let model = trained_toy_model();
        let mut bytes = Vec::new();
        model.write_checkpoint(&mut bytes).unwrap();
        let loaded = Model::read_checkpoint(bytes.as_slice()).unwrap();

        assert_eq!(loaded.config, model.config);
        assert_eq!(loaded.normalization(), model.normalization());
        assert_eq!(loaded.params.keys().collect::<Vec<_>>(), model.params.keys().collect::<Vec<_>>());
        // Values survive up to the deliberate f32 quantization.
        for (name, t) in &model.params {
            for (a, b) in t.values().iter().zip(loaded.params[name].values()) {
                assert_eq!(*a as f32, *b as f32, "{name}");
                assert_eq!(*b, (*b as f32) as f64, "{name} not f32-clean");
            }
        }
        for (name, stats) in &model.running {
            let got = &loaded.running[name];
            for (a, b) in stats.mean.iter().zip(&got.mean) {
                assert_eq!(*a as f32, *b as f32, "{name} mean");
            }
            for (a, b) in stats.var.iter().zip(&got.var) {
                assert_eq!(*a as f32, *b as f32, "{name} var");
            }
        }
    }

    #[test]
    fn serialization_is_byte_deterministic() {
        let model = trained_toy_model();
        let mut a = Vec::new();
        let mut b = Vec::new();
        model.write_checkpoint(&mut a).unwrap();
        model.write_checkpoint(&mut b).unwrap();
        assert_eq!(a, b);

        // Save -> load -> save is a fixpoint once values are f32-clean.
        let loaded = Model::read_checkpoint(a.as_slice()).unwrap();
        let mut c = Vec::new();
        loaded.write_checkpoint(&mut c).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn loaded_model_predicts_identically() {
        let model = trained_toy_model();
        let mut bytes = Vec::new();
        model.write_checkpoint(&mut bytes).unwrap();
        let loaded = Model::read_checkpoint(bytes.as_slice()).unwrap();

        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let batch = Tensor4::from_fn([1, 5, 12, 12], |_, _, _, _| rng.gen_range(-1.0..1.0));
        // Quantize the reference model's state like the checkpoint does so
        // both sides run from identical weights.
        let mut quantized = model.clone();
        for t in quantized.params.values_mut() {
            for v in t.values_mut() {
                *v = (*v as f32) as f64;
            }
        }
        for s in quantized.running.values_mut() {
            for v in s.mean.iter_mut() {
                *v = (*v as f32) as f64;
            }
            for v in s.var.iter_mut() {
                *v = (*v as f32) as f64;
            }
        }
        let (m1, _) = quantized.forward(&batch).unwrap();
        let (m2, _) = loaded.forward(&batch).unwrap();
        assert_eq!(m1.values(), m2.values());
    }

    #[test]
    fn bad_magic_rejected() {
        let model = trained_toy_model();
        let mut bytes = Vec::new();
        model.write_checkpoint(&mut bytes).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            Model::read_checkpoint(bytes.as_slice()),
            Err(ModelError::Format(_))
        ));
    }

    #[test]
    fn truncated_file_rejected() {
        let model = trained_toy_model();
        let mut bytes = Vec::new();
        model.write_checkpoint(&mut bytes).unwrap();
        bytes.truncate(bytes.len() / 2);
        assert!(Model::read_checkpoint(bytes.as_slice()).is_err());
    }

    #[test]
    fn path_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ludm");
        let model = trained_toy_model();
        model.save(&path).unwrap();
        let loaded = Model::load(&path).unwrap();
        assert_eq!(loaded.config, model.config);
    }
}
