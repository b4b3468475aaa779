//! Model bundles: a directory with `manifest.json` and one raw array file per
//! matrix (`f64`, little-endian, row-major).

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::bilevel::ReKoModel;
use crate::config::FedConfig;
use crate::reservoir::{Activation, ReservoirBank};
use crate::{Error, Result};

pub const FORMAT_VERSION: &str = "koopres-bundle/1";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: String,
    pub n_features: usize,
    pub reservoir_size: usize,
    pub lifted_dim: usize,
    pub param_count: usize,
    pub alpha: f64,
    pub rho_res: f64,
    pub reservoir_activation: Activation,
    pub readout_activation: Activation,
    pub reservoir_seed: u64,
    pub rounds_completed: usize,
    /// Training configuration; `workers` is recorded as 0 because it never
    /// changes results.
    pub config: FedConfig,
    pub arrays: Vec<ArrayEntry>,
}

/// A trained model together with the reservoir it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub bank: ReservoirBank,
    pub model: ReKoModel,
    pub config: FedConfig,
    pub rounds_completed: usize,
}

fn write_array(dir: &Path, file: &str, data: impl Iterator<Item = f64>) -> Result<()> {
    let bytes: Vec<u8> = data.flat_map(f64::to_le_bytes).collect();
    let path = dir.join(file);
    fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

fn read_array(dir: &Path, entry: &ArrayEntry) -> Result<Vec<f64>> {
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let expected = entry.shape.iter().product::<usize>() * 8;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "{} bytes, manifest shape {:?} needs {expected}",
                bytes.len(),
                entry.shape
            ),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

impl ModelBundle {
    pub fn manifest(&self) -> Manifest {
        let m = &self.model;
        let entry = |name: &str, shape: Vec<usize>| ArrayEntry {
            name: name.into(),
            file: format!("{name}.bin"),
            shape,
        };
        let dims = |a: &Array2<f64>| vec![a.nrows(), a.ncols()];
        Manifest {
            format_version: FORMAT_VERSION.into(),
            n_features: m.n_features(),
            reservoir_size: self.bank.size(),
            lifted_dim: m.lifted_dim(),
            param_count: m.param_count(),
            alpha: self.bank.alpha,
            rho_res: self.bank.rho_res,
            reservoir_activation: self.bank.activation,
            readout_activation: m.readout,
            reservoir_seed: self.bank.seed,
            rounds_completed: self.rounds_completed,
            config: FedConfig {
                workers: 0,
                ..self.config.clone()
            },
            arrays: vec![
                entry("W_in", dims(&self.bank.w_in)),
                entry("W_res", dims(&self.bank.w_res)),
                entry("b_res", vec![self.bank.b_res.len()]),
                entry("W", dims(&m.w)),
                entry("K", dims(&m.k)),
                entry("V", dims(&m.v)),
            ],
        }
    }

    /// Writes into `dir`, creating it if needed.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = self.manifest();
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let path = dir.join(MANIFEST);
        fs::write(&path, text).map_err(|e| Error::io(path, e))?;
        let row_major = |a: &Array2<f64>| a.iter().copied().collect::<Vec<_>>();
        write_array(dir, "W_in.bin", row_major(&self.bank.w_in).into_iter())?;
        write_array(dir, "W_res.bin", row_major(&self.bank.w_res).into_iter())?;
        write_array(dir, "b_res.bin", self.bank.b_res.iter().copied())?;
        write_array(dir, "W.bin", row_major(&self.model.w).into_iter())?;
        write_array(dir, "K.bin", row_major(&self.model.k).into_iter())?;
        write_array(dir, "V.bin", row_major(&self.model.v).into_iter())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::format(
                &path,
                format!("unsupported format version `{}`", manifest.format_version),
            ));
        }
        let (n, d, m) = (
            manifest.n_features,
            manifest.reservoir_size,
            manifest.lifted_dim,
        );
        let expected: [(&str, Vec<usize>); 6] = [
            ("W_in", vec![d, n]),
            ("W_res", vec![d, d]),
            ("b_res", vec![d]),
            ("W", vec![m, d]),
            ("K", vec![m, m]),
            ("V", vec![m, n]),
        ];
        let mut arrays = Vec::with_capacity(6);
        for (name, shape) in expected {
            let entry = manifest
                .arrays
                .iter()
                .find(|a| a.name == name)
                .ok_or_else(|| {
                    Error::format(&path, format!("array `{name}` missing from manifest"))
                })?;
            if entry.shape != shape {
                return Err(Error::format(
                    &path,
                    format!(
                        "array `{name}` has shape {:?}, expected {shape:?}",
                        entry.shape
                    ),
                ));
            }
            arrays.push((shape, read_array(dir, entry)?));
        }
        let mut it = arrays.into_iter();
        let mut matrix = || {
            let (shape, data) = it.next().expect("six arrays");
            match shape[..] {
                [r, c] => Array2::from_shape_vec((r, c), data).expect("length checked"),
                [r] => Array2::from_shape_vec((r, 1), data).expect("length checked"),
                _ => unreachable!(),
            }
        };
        let w_in = matrix();
        let w_res = matrix();
        let b_res: Array1<f64> = matrix().column(0).to_owned();
        let (w, k, v) = (matrix(), matrix(), matrix());
        let bank = ReservoirBank {
            w_in,
            w_res,
            b_res,
            alpha: manifest.alpha,
            rho_res: manifest.rho_res,
            activation: manifest.reservoir_activation,
            seed: manifest.reservoir_seed,
        };
        let model = ReKoModel {
            w,
            k,
            v,
            readout: manifest.readout_activation,
        };
        Ok(ModelBundle {
            bank,
            model,
            config: manifest.config,
            rounds_completed: manifest.rounds_completed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reservoir::ReservoirParams;

    fn sample() -> ModelBundle {
        let params = ReservoirParams {
            d: 6,
            ..ReservoirParams::default()
        };
        ModelBundle {
            bank: ReservoirBank::init(2, &params, 5).unwrap(),
            model: ReKoModel::init(2, 6, 4, Activation::Identity, 0.99, 5).unwrap(),
            config: FedConfig::default(),
            rounds_completed: 3,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let b = sample();
        b.save(dir.path()).unwrap();
        let back = ModelBundle::load(dir.path()).unwrap();
        assert_eq!(back, b);

        let other = tempfile::tempdir().unwrap();
        back.save(other.path()).unwrap();
        for f in [
            "manifest.json",
            "W_in.bin",
            "W_res.bin",
            "b_res.bin",
            "W.bin",
            "K.bin",
            "V.bin",
        ] {
            assert_eq!(
                fs::read(dir.path().join(f)).unwrap(),
                fs::read(other.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn byte_length_must_match_shape() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        fs::write(dir.path().join("K.bin"), [0u8; 12]).unwrap();
        let err = ModelBundle::load(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn missing_bundle_is_a_usage_error() {
        let err = ModelBundle::load("/nonexistent/bundle").unwrap_err();
        assert!(err.is_usage());
    }

    #[test]
    fn raw_layout_is_row_major_le() {
        let dir = tempfile::tempdir().unwrap();
        let b = sample();
        b.save(dir.path()).unwrap();
        let bytes = fs::read(dir.path().join("W.bin")).unwrap();
        let second = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
        assert_eq!(second, b.model.w[[0, 1]]);
    }
}
