//! Checkpoint format: `<stem>.json` manifest (layer names, shapes, dtype)
//! plus `<stem>.bin`, a flat little-endian blob of parameter values in
//! manifest order. Round-trips are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NnError, ParamSet};
use crate::tensor::Tensor;

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    entries: Vec<ManifestEntry>,
}

pub fn save(params: &ParamSet, stem: &Path) -> Result<(), NnError> {
    let manifest = Manifest {
        format: "restoreib-checkpoint-v1".to_string(),
        entries: params
            .entries
            .iter()
            .map(|(name, t)| ManifestEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: "f64".to_string(),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| NnError::Checkpoint(e.to_string()))?;
    if let Some(parent) = stem.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(stem.with_extension("json"), json)?;

    let total: usize = params.entries.iter().map(|(_, t)| t.numel()).sum();
    let mut blob = Vec::with_capacity(total * 8);
    for (_, t) in &params.entries {
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(stem.with_extension("bin"), blob)?;
    Ok(())
}

pub fn load(stem: &Path) -> Result<ParamSet, NnError> {
    let json = fs::read_to_string(stem.with_extension("json"))?;
    let manifest: Manifest =
        serde_json::from_str(&json).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    if manifest.format != "restoreib-checkpoint-v1" {
        return Err(NnError::Checkpoint(format!("unknown format {}", manifest.format)));
    }
    let blob = fs::read(stem.with_extension("bin"))?;
    let expected: usize = manifest
        .entries
        .iter()
        .map(|e| e.shape.iter().product::<usize>())
        .sum();
    if blob.len() != expected * 8 {
        return Err(NnError::Checkpoint(format!(
            "blob has {} bytes, manifest expects {}",
            blob.len(),
            expected * 8
        )));
    }
    let mut entries = Vec::with_capacity(manifest.entries.len());
    let mut offset = 0usize;
    for e in &manifest.entries {
        if e.dtype != "f64" {
            return Err(NnError::Checkpoint(format!("unsupported dtype {}", e.dtype)));
        }
        let numel: usize = e.shape.iter().product();
        let data: Vec<f64> = (0..numel)
            .map(|i| {
                let b = &blob[(offset + i) * 8..(offset + i + 1) * 8];
                f64::from_le_bytes(b.try_into().expect("8 bytes"))
            })
            .collect();
        offset += numel;
        entries.push((
            e.name.clone(),
            Tensor::new(e.shape.clone(), data).map_err(NnError::Tensor)?,
        ));
    }
    Ok(ParamSet { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_unet, GeneratorConfig, ParamSet};

    #[test]
    fn roundtrip_is_bit_exact() {
        let graph = build_unet(&GeneratorConfig::unet(2, 4)).unwrap();
        let params = ParamSet::init(&graph, 42);
        let dir = std::env::temp_dir().join("restoreib-ckpt-test");
        let stem = dir.join("model");
        save(&params, &stem).unwrap();
        let loaded = load(&stem).unwrap();
        assert_eq!(params.entries.len(), loaded.entries.len());
        for ((na, ta), (nb, tb)) in params.entries.iter().zip(loaded.entries.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
            for (a, b) in ta.data().iter().zip(tb.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn corrupt_blob_is_rejected() {
        let graph = build_unet(&GeneratorConfig::unet(1, 2)).unwrap();
        let params = ParamSet::init(&graph, 0);
        let dir = std::env::temp_dir().join("restoreib-ckpt-corrupt");
        let stem = dir.join("model");
        save(&params, &stem).unwrap();
        let bin = stem.with_extension("bin");
        let mut blob = std::fs::read(&bin).unwrap();
        blob.truncate(blob.len() - 8);
        std::fs::write(&bin, blob).unwrap();
        assert!(matches!(load(&stem), Err(NnError::Checkpoint(_))));
        std::fs::remove_dir_all(&dir).ok();
    }
}
