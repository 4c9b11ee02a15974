use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use crate::error::{Error, Result};

/// Named tensors plus string metadata, as stored in a safetensors file.
#[derive(Debug, Default)]
pub struct TensorArchive {
    pub tensors: BTreeMap<String, Tensor>,
    pub metadata: BTreeMap<String, String>,
}

fn ckpt_err(path: &Path, reason: impl ToString) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn tensor_bytes(t: &Tensor) -> Result<(Dtype, Vec<u8>)> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F64 => (
            Dtype::F64,
            flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
        _ => (
            Dtype::F32,
            flat.to_dtype(DType::F32)?
                .to_vec1::<f32>()?
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect(),
        ),
    })
}

/// Writes `archive` to `path`. `F64` tensors are kept as is; everything else is stored as `F32`.
pub fn write_tensors(path: &Path, archive: &TensorArchive) -> Result<()> {
    let mut encoded = Vec::with_capacity(archive.tensors.len());
    for (name, t) in &archive.tensors {
        let (dtype, bytes) = tensor_bytes(t)?;
        encoded.push((name.clone(), dtype, t.dims().to_vec(), bytes));
    }
    let views = encoded
        .iter()
        .map(|(name, dtype, shape, bytes)| {
            TensorView::new(*dtype, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| ckpt_err(path, e))
        })
        .collect::<Result<Vec<_>>>()?;
    let metadata: HashMap<String, String> = archive.metadata.clone().into_iter().collect();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    safetensors::serialize_to_file(views, Some(metadata), path).map_err(|e| ckpt_err(path, e))
}

/// Reads every tensor of a safetensors file onto `device`, keeping its stored precision.
pub fn read_tensors(path: &Path, device: &Device) -> Result<TensorArchive> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, meta) = SafeTensors::read_metadata(&bytes).map_err(|e| ckpt_err(path, e))?;
    let metadata = meta
        .metadata()
        .clone()
        .map(|m| m.into_iter().collect())
        .unwrap_or_default();
    let st = SafeTensors::deserialize(&bytes).map_err(|e| ckpt_err(path, e))?;
    let mut tensors = BTreeMap::new();
    for (name, view) in st.tensors() {
        let shape = view.shape().to_vec();
        let data = view.data();
        let t = match view.dtype() {
            Dtype::F32 => {
                let v: Vec<f32> = data
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Tensor::from_vec(v, shape, device)?
            }
            Dtype::F64 => {
                let v: Vec<f64> = data
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Tensor::from_vec(v, shape, device)?
            }
            other => return Err(ckpt_err(path, format!("unsupported dtype {other:?} for {name}"))),
        };
        tensors.insert(name, t);
    }
    Ok(TensorArchive { tensors, metadata })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_values_and_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/a.safetensors");
        let mut archive = TensorArchive::default();
        let a = Tensor::new(&[[1.5f32, -2.0], [0.25, 8.0]], &Device::Cpu).unwrap();
        let b = Tensor::new(&[1e-300f64, 3.0], &Device::Cpu).unwrap();
        archive.tensors.insert("a".into(), a.clone());
        archive.tensors.insert("b".into(), b.clone());
        archive.metadata.insert("k".into(), "v".into());
        write_tensors(&path, &archive).unwrap();
        let back = read_tensors(&path, &Device::Cpu).unwrap();
        assert_eq!(back.metadata["k"], "v");
        assert_eq!(back.tensors["a"].to_vec2::<f32>().unwrap(), a.to_vec2::<f32>().unwrap());
        assert_eq!(back.tensors["b"].to_vec1::<f64>().unwrap(), b.to_vec1::<f64>().unwrap());
    }

    #[test]
    fn garbage_file_is_a_checkpoint_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.safetensors");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(read_tensors(&path, &Device::Cpu), Err(Error::Checkpoint { .. })));
    }
}
