//! JSON artifacts: models, predictors, masks, datasets and reports.
//!
//! Tensors are stored as base64 of little-endian `f32` values in row-major
//! order. Every document carries `format_version`, the `seed` of the run that
//! produced it and a `config_echo` of the settings used. Writes go to a
//! temporary file in the target directory and are renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dynamic::{Predictor, PredictorSet, PREDICTOR_ACTIVATION};
use crate::error::{Error, Result};
use crate::model::{MaskSchedule, ModelConfig, ModelParams, PatchMask};
use crate::numerics::{Matrix, Scalar, RNG_ALGORITHM};
use crate::training::{Batch, ToyDatasetSpec};

pub const FORMAT_VERSION: u64 = 1;

/// Metadata embedded in every written document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_echo: Value,
}

impl Provenance {
    pub fn new(seed: u64, config_echo: Value) -> Self {
        Self { seed, config_echo }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorData {
    /// `[rows, cols]`
    pub shape: [usize; 2],
    pub data: String,
}

pub fn encode_tensor<T: Scalar>(m: &Matrix<T>) -> TensorData {
    let mut bytes = Vec::with_capacity(m.data().len() * 4);
    for v in m.data() {
        bytes.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
    TensorData {
        shape: [m.rows(), m.cols()],
        data: BASE64.encode(bytes),
    }
}

pub fn decode_tensor<T: Scalar>(name: &str, t: &TensorData) -> Result<Matrix<T>> {
    let bytes = BASE64
        .decode(t.data.as_bytes())
        .map_err(|e| Error::Format(format!("tensor {name}: corrupt base64 ({e})")))?;
    let expected = t.shape[0] * t.shape[1] * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "tensor {name}: {} bytes for shape {:?}, expected {expected}",
            bytes.len(),
            t.shape
        )));
    }
    let values: Vec<T> = bytes
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format(format!("tensor {name}: non-finite value")));
    }
    Matrix::from_vec(t.shape[0], t.shape[1], values)
}

/// Shared layout of model and predictor files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorFile<C> {
    pub format_version: u64,
    pub kind: String,
    pub seed: u64,
    pub rng_algorithm: String,
    pub config: C,
    pub config_echo: Value,
    pub tensors: BTreeMap<String, TensorData>,
}

pub const MODEL_KIND: &str = "model";
pub const PREDICTOR_KIND: &str = "predictors";
pub const MASKS_KIND: &str = "masks";
pub const DATASET_KIND: &str = "dataset";

fn check_kind(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::Format(format!(
            "expected a {expected} file, found kind {found:?}"
        )));
    }
    Ok(())
}

fn take_tensors<T: Scalar>(
    mut tensors: BTreeMap<String, TensorData>,
    expected: Vec<(String, (usize, usize))>,
) -> Result<BTreeMap<String, Matrix<T>>> {
    let mut out = BTreeMap::new();
    for (name, shape) in expected {
        let t = tensors
            .remove(&name)
            .ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
        if (t.shape[0], t.shape[1]) != shape {
            return Err(Error::Format(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                t.shape, shape
            )));
        }
        out.insert(name.clone(), decode_tensor(&name, &t)?);
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Format(format!("unexpected tensor {extra}")));
    }
    Ok(out)
}

pub fn model_to_file<T: Scalar>(
    params: &ModelParams<T>,
    provenance: &Provenance,
) -> TensorFile<ModelConfig> {
    TensorFile {
        format_version: FORMAT_VERSION,
        kind: MODEL_KIND.into(),
        seed: provenance.seed,
        rng_algorithm: RNG_ALGORITHM.into(),
        config: params.config.clone(),
        config_echo: provenance.config_echo.clone(),
        tensors: params
            .tensors()
            .into_iter()
            .map(|(n, m)| (n, encode_tensor(m)))
            .collect(),
    }
}

pub fn model_from_file<T: Scalar>(file: TensorFile<ModelConfig>) -> Result<ModelParams<T>> {
    check_kind(&file.kind, MODEL_KIND)?;
    file.config.validate()?;
    let mut params = ModelParams::<T>::zeros(&file.config);
    let expected: Vec<(String, (usize, usize))> = params
        .tensors()
        .into_iter()
        .map(|(n, m)| (n, m.shape()))
        .collect();
    let mut loaded = take_tensors::<T>(file.tensors, expected)?;
    for (name, slot) in params.tensors_mut() {
        *slot = loaded
            .remove(&name)
            .expect("every expected tensor was loaded");
    }
    params.validate()?;
    Ok(params)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorFileConfig {
    pub layers: usize,
    pub dim: usize,
    pub group: usize,
    pub activation: String,
}

pub fn predictors_to_file<T: Scalar>(
    set: &PredictorSet<T>,
    provenance: &Provenance,
) -> TensorFile<PredictorFileConfig> {
    TensorFile {
        format_version: FORMAT_VERSION,
        kind: PREDICTOR_KIND.into(),
        seed: provenance.seed,
        rng_algorithm: RNG_ALGORITHM.into(),
        config: PredictorFileConfig {
            layers: set.predictors.len(),
            dim: set.dim,
            group: set.predictors.first().map_or(1, |p| p.group),
            activation: PREDICTOR_ACTIVATION.into(),
        },
        config_echo: provenance.config_echo.clone(),
        tensors: set
            .tensors()
            .into_iter()
            .map(|(n, m)| (n, encode_tensor(&m)))
            .collect(),
    }
}

pub fn predictors_from_file<T: Scalar>(
    file: TensorFile<PredictorFileConfig>,
) -> Result<PredictorSet<T>> {
    check_kind(&file.kind, PREDICTOR_KIND)?;
    let c = &file.config;
    if c.activation != PREDICTOR_ACTIVATION {
        return Err(Error::Format(format!(
            "unsupported predictor activation {:?}",
            c.activation
        )));
    }
    let template = Predictor::<T>::zeros(c.dim, c.group)?;
    let mut expected = Vec::new();
    for l in 1..=c.layers {
        expected.push((format!("pred.{l}.W"), (template.pooled_dim(), 1)));
        expected.push((format!("pred.{l}.b"), (1, 1)));
    }
    let mut loaded = take_tensors::<T>(file.tensors, expected)?;
    let predictors = (1..=c.layers)
        .map(|l| Predictor {
            group: c.group,
            weights: loaded.remove(&format!("pred.{l}.W")).expect("loaded"),
            bias: loaded
                .remove(&format!("pred.{l}.b"))
                .expect("loaded")
                .get(0, 0),
        })
        .collect();
    Ok(PredictorSet {
        dim: c.dim,
        predictors,
    })
}

/// Mask document. The loader also accepts a bare JSON array of bitstrings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskFile {
    pub format_version: u64,
    pub kind: String,
    pub seed: u64,
    pub config_echo: Value,
    pub patches: usize,
    pub masks: Vec<String>,
}

pub fn masks_to_file(schedule: &MaskSchedule, provenance: &Provenance) -> MaskFile {
    MaskFile {
        format_version: FORMAT_VERSION,
        kind: MASKS_KIND.into(),
        seed: provenance.seed,
        config_echo: provenance.config_echo.clone(),
        patches: schedule.masks().first().map_or(0, PatchMask::len),
        masks: schedule
            .masks()
            .iter()
            .map(PatchMask::to_bitstring)
            .collect(),
    }
}

/// Parses either a mask document or a bare bitstring array into a validated schedule.
pub fn masks_from_value(value: Value) -> Result<MaskSchedule> {
    let strings: Vec<String> = match value {
        Value::Array(_) => serde_json::from_value(value)?,
        other => {
            check_version(&other)?;
            let file: MaskFile = serde_json::from_value(other)?;
            check_kind(&file.kind, MASKS_KIND)?;
            if file.masks.iter().any(|m| m.len() != file.patches) {
                return Err(Error::InvalidMask(format!(
                    "every mask must have {} bits",
                    file.patches
                )));
            }
            file.masks
        }
    };
    let masks = strings
        .iter()
        .map(|s| PatchMask::parse_bitstring(s))
        .collect::<Result<Vec<_>>>()?;
    let n = masks
        .first()
        .map(PatchMask::len)
        .ok_or_else(|| Error::InvalidMask("mask file lists no layers".into()))?;
    MaskSchedule::new(masks, n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub format_version: u64,
    pub kind: String,
    pub seed: u64,
    pub config_echo: Value,
    /// Generator settings when the data is synthetic.
    pub spec: Option<ToyDatasetSpec>,
    pub num_classes: usize,
    pub samples: usize,
    pub tokens: usize,
    pub token_dim: usize,
    pub labels: Vec<usize>,
    /// All samples stacked: `(samples · tokens) × token_dim`.
    pub inputs: TensorData,
}

pub fn dataset_to_file<T: Scalar>(
    batch: &Batch<T>,
    spec: Option<&ToyDatasetSpec>,
    provenance: &Provenance,
) -> Result<DatasetFile> {
    let (tokens, token_dim) = batch.sample_shape().ok_or(Error::Empty("dataset"))?;
    let mut stacked = Vec::with_capacity(batch.len() * tokens * token_dim);
    for x in &batch.inputs {
        stacked.extend_from_slice(x.data());
    }
    let stacked = Matrix::from_vec(batch.len() * tokens, token_dim, stacked)?;
    Ok(DatasetFile {
        format_version: FORMAT_VERSION,
        kind: DATASET_KIND.into(),
        seed: provenance.seed,
        config_echo: provenance.config_echo.clone(),
        spec: spec.cloned(),
        num_classes: batch.num_classes,
        samples: batch.len(),
        tokens,
        token_dim,
        labels: batch.labels.clone(),
        inputs: encode_tensor(&stacked),
    })
}

pub fn dataset_from_file<T: Scalar>(file: DatasetFile) -> Result<Batch<T>> {
    check_kind(&file.kind, DATASET_KIND)?;
    if file.samples == 0 {
        return Err(Error::Empty("dataset"));
    }
    if file.labels.len() != file.samples {
        return Err(Error::Format(format!(
            "{} labels for {} samples",
            file.labels.len(),
            file.samples
        )));
    }
    if file.inputs.shape != [file.samples * file.tokens, file.token_dim] {
        return Err(Error::Format(format!(
            "input block has shape {:?}, expected [{}, {}]",
            file.inputs.shape,
            file.samples * file.tokens,
            file.token_dim
        )));
    }
    let stacked: Matrix<T> = decode_tensor("inputs", &file.inputs)?;
    let per = file.tokens * file.token_dim;
    let inputs = stacked
        .data()
        .chunks(per)
        .map(|c| Matrix::from_vec(file.tokens, file.token_dim, c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Batch::new(inputs, file.labels, file.num_classes)
}

/// Adds `format_version`, `seed` and `config_echo` to a report body.
pub fn report_document<S: Serialize>(
    kind: &str,
    body: &S,
    provenance: &Provenance,
) -> Result<Value> {
    let mut doc = serde_json::Map::new();
    doc.insert("format_version".into(), FORMAT_VERSION.into());
    doc.insert("kind".into(), kind.into());
    doc.insert("seed".into(), provenance.seed.into());
    doc.insert("config_echo".into(), provenance.config_echo.clone());
    doc.insert("report".into(), serde_json::to_value(body)?);
    Ok(Value::Object(doc))
}

/// Rejects documents without a supported `format_version`.
pub fn check_version(doc: &Value) -> Result<()> {
    match doc.get("format_version").and_then(Value::as_u64) {
        Some(FORMAT_VERSION) => Ok(()),
        Some(found) => Err(Error::Version {
            found,
            expected: FORMAT_VERSION,
        }),
        None => Err(Error::Format("missing format_version".into())),
    }
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        Error::Json(j) => Error::Format(format!("{}: {j}", path.display())),
        other => other,
    })
}

/// Reads a JSON document and checks its version before any typed parsing.
pub fn read_document(path: &Path) -> Result<Value> {
    with_path(
        path,
        (|| {
            let text = fs::read_to_string(path)?;
            let doc: Value = serde_json::from_str(&text)?;
            Ok(doc)
        })(),
    )
}

fn read_versioned<D: DeserializeOwned>(path: &Path) -> Result<D> {
    with_path(
        path,
        (|| {
            let doc = read_document(path)?;
            check_version(&doc)?;
            Ok(serde_json::from_value(doc)?)
        })(),
    )
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    with_path(
        path,
        (|| {
            let dir = match path.parent() {
                Some(p) if !p.as_os_str().is_empty() => p,
                _ => Path::new("."),
            };
            let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
            tmp.write_all(bytes)?;
            tmp.as_file().sync_all()?;
            tmp.persist(path).map_err(|e| e.error)?;
            Ok(())
        })(),
    )
}

/// Pretty JSON with a trailing newline.
pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn save_model<T: Scalar>(
    path: &Path,
    params: &ModelParams<T>,
    provenance: &Provenance,
) -> Result<()> {
    write_json(path, &model_to_file(params, provenance))
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<ModelParams<T>> {
    with_path(path, read_versioned(path).and_then(model_from_file))
}

pub fn save_predictors<T: Scalar>(
    path: &Path,
    set: &PredictorSet<T>,
    provenance: &Provenance,
) -> Result<()> {
    write_json(path, &predictors_to_file(set, provenance))
}

pub fn load_predictors<T: Scalar>(path: &Path) -> Result<PredictorSet<T>> {
    with_path(path, read_versioned(path).and_then(predictors_from_file))
}

pub fn save_masks(path: &Path, schedule: &MaskSchedule, provenance: &Provenance) -> Result<()> {
    write_json(path, &masks_to_file(schedule, provenance))
}

pub fn load_masks(path: &Path) -> Result<MaskSchedule> {
    with_path(path, read_document(path).and_then(masks_from_value))
}

pub fn save_dataset<T: Scalar>(
    path: &Path,
    batch: &Batch<T>,
    spec: Option<&ToyDatasetSpec>,
    provenance: &Provenance,
) -> Result<()> {
    write_json(path, &dataset_to_file(batch, spec, provenance)?)
}

pub fn load_dataset<T: Scalar>(path: &Path) -> Result<Batch<T>> {
    with_path(path, read_versioned(path).and_then(dataset_from_file))
}

/// Reads a versioned document of any kind, returning it untyped.
pub fn load_report(path: &Path) -> Result<Value> {
    read_versioned(path)
}
