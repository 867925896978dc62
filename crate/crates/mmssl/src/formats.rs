//! JSON file formats: datasets and checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use mmssl_core::datagen::{Dataset, MultimodalSample};
use mmssl_core::model::{ModelParams, ModelShape};
use mmssl_core::numeric::{Matrix, Pca};
use mmssl_core::reconstruct::{PcaSubspace, ReconstructionMode};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct SampleRecord {
    id: usize,
    label: Option<usize>,
    x: Vec<Option<Vec<f64>>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetFile {
    version: u32,
    #[serde(rename = "C")]
    num_classes: usize,
    #[serde(rename = "M")]
    num_modalities: usize,
    dims: Vec<usize>,
    samples: Vec<SampleRecord>,
}

pub fn dataset_to_json(data: &Dataset) -> String {
    let file = DatasetFile {
        version: FORMAT_VERSION,
        num_classes: data.num_classes(),
        num_modalities: data.num_modalities(),
        dims: data.dims().to_vec(),
        samples: data
            .samples()
            .iter()
            .map(|s| SampleRecord { id: s.id, label: s.label, x: s.inputs.clone() })
            .collect(),
    };
    serde_json::to_string(&file).expect("dataset serializes")
}

pub fn dataset_from_json(text: &str) -> CliResult<Dataset> {
    let file: DatasetFile =
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("dataset schema: {e}")))?;
    if file.version != FORMAT_VERSION {
        return Err(CliError::Usage(format!("unsupported dataset version {}", file.version)));
    }
    if file.dims.len() != file.num_modalities {
        return Err(CliError::Usage(format!("dataset declares M = {} but {} dims", file.num_modalities, file.dims.len())));
    }
    let samples = file
        .samples
        .into_iter()
        .map(|r| MultimodalSample { id: r.id, inputs: r.x, label: r.label })
        .collect();
    Ok(Dataset::new(samples, file.num_classes, file.dims)?)
}

pub fn read_dataset(path: &Path) -> CliResult<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    dataset_from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::write(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| CliError::write(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::write(path, e))
}

/// `data.json` → `data.test.json`.
pub fn test_split_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.test.json"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

impl From<&Matrix> for TensorRecord {
    fn from(m: &Matrix) -> Self {
        Self { shape: [m.rows(), m.cols()], values: m.data().to_vec() }
    }
}

impl TensorRecord {
    fn to_matrix(&self, name: &str) -> CliResult<Matrix> {
        Matrix::from_vec(self.shape[0], self.shape[1], self.values.clone())
            .map_err(|e| CliError::Usage(format!("tensor {name}: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub model: ModelShape,
    pub mode: ReconstructionMode,
    pub subspaces_fitted_on: Vec<usize>,
    pub experiment: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: CheckpointConfig,
    pub tensors: BTreeMap<String, TensorRecord>,
}

impl Checkpoint {
    pub fn new(
        experiment: &ExperimentConfig,
        params: &ModelParams,
        subspaces: &[PcaSubspace],
        mode: ReconstructionMode,
        tau: &[f64],
    ) -> Self {
        let mut tensors: BTreeMap<String, TensorRecord> =
            params.named_tensors().into_iter().map(|(n, t)| (n, t.into())).collect();
        for s in subspaces {
            let m = s.modality;
            tensors.insert(format!("subspace.{m}.mean"), (&Matrix::row_vector(s.mean())).into());
            tensors.insert(format!("subspace.{m}.components"), s.components().into());
            tensors.insert(
                format!("subspace.{m}.singular_values"),
                (&Matrix::row_vector(&s.pca.singular_values)).into(),
            );
        }
        tensors.insert("thresholds.tau".into(), (&Matrix::row_vector(tau)).into());
        Self {
            version: FORMAT_VERSION,
            config: CheckpointConfig {
                model: params.shape.clone(),
                mode,
                subspaces_fitted_on: subspaces.iter().map(|s| s.fitted_on).collect(),
                experiment: experiment.clone(),
            },
            tensors,
        }
    }

    pub fn params(&self) -> CliResult<ModelParams> {
        let shape = self.config.model.clone();
        let names: Vec<String> = ModelParams::zeros(shape.clone()).named_tensors().into_iter().map(|(n, _)| n).collect();
        let tensors = names
            .into_iter()
            .map(|n| {
                let t = self.tensors.get(&n).ok_or_else(|| CliError::Usage(format!("checkpoint lacks tensor {n}")))?;
                Ok((n.clone(), t.to_matrix(&n)?))
            })
            .collect::<CliResult<Vec<_>>>()?;
        Ok(ModelParams::from_named_tensors(shape, &tensors)?)
    }

    pub fn subspaces(&self) -> CliResult<Vec<PcaSubspace>> {
        self.config
            .subspaces_fitted_on
            .iter()
            .enumerate()
            .map(|(m, &fitted_on)| {
                let get = |part: &str| {
                    let name = format!("subspace.{m}.{part}");
                    self.tensors
                        .get(&name)
                        .ok_or_else(|| CliError::Usage(format!("checkpoint lacks tensor {name}")))
                        .and_then(|t| t.to_matrix(&name))
                };
                let pca = Pca {
                    mean: get("mean")?.into_data(),
                    components: get("components")?,
                    singular_values: get("singular_values")?.into_data(),
                };
                Ok(PcaSubspace { modality: m, pca, fitted_on })
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("checkpoint schema: {e}")))?;
        if c.version != FORMAT_VERSION {
            return Err(CliError::Usage(format!("unsupported checkpoint version {}", c.version)));
        }
        Ok(c)
    }
}
