//! Parameter blobs: little-endian `f32` values back to back, described by a
//! JSON header listing each tensor's name, shape and byte offset.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NnError, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamHeader {
    pub dtype: String,
    pub total_bytes: usize,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode_params<F: Real>(store: &ParamStore<F>) -> (ParamHeader, Vec<u8>) {
    let mut blob = Vec::with_capacity(store.count() * 4);
    let mut tensors = Vec::with_capacity(store.len());
    for (name, t) in store.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: blob.len(),
        });
        for v in t.data() {
            blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let header = ParamHeader {
        dtype: "f32-le".into(),
        total_bytes: blob.len(),
        tensors,
    };
    (header, blob)
}

pub fn decode_params<F: Real>(header: &ParamHeader, blob: &[u8]) -> Result<ParamStore<F>, NnError> {
    if header.dtype != "f32-le" {
        return Err(NnError::Format(format!("unsupported dtype {}", header.dtype)));
    }
    if blob.len() != header.total_bytes {
        return Err(NnError::Format(format!(
            "blob has {} bytes, header declares {}",
            blob.len(),
            header.total_bytes
        )));
    }
    let mut store = ParamStore::new();
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let end = e.offset + 4 * n;
        if end > blob.len() {
            return Err(NnError::Format(format!("tensor {} runs past the blob", e.name)));
        }
        let data = blob[e.offset..end]
            .chunks_exact(4)
            .map(|c| F::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        store.add(e.name.clone(), Tensor::new(&e.shape, data)?);
    }
    Ok(store)
}

pub fn save_params<F: Real>(store: &ParamStore<F>, header_path: &Path, blob_path: &Path) -> Result<(), NnError> {
    let (header, blob) = encode_params(store);
    fs::write(header_path, serde_json::to_vec_pretty(&header)?)?;
    fs::write(blob_path, blob)?;
    Ok(())
}

pub fn load_params<F: Real>(header_path: &Path, blob_path: &Path) -> Result<ParamStore<F>, NnError> {
    let header: ParamHeader = serde_json::from_slice(&fs::read(header_path)?)?;
    let blob = fs::read(blob_path)?;
    decode_params(&header, &blob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_lossless_for_f32(values in prop::collection::vec(-1e6f32..1e6, 1..40), split in 0usize..40) {
            let split = split.min(values.len());
            let mut store = ParamStore::<f32>::new();
            store.add("a", Tensor::new(&[split], values[..split].to_vec()).unwrap());
            store.add("b.weight", Tensor::new(&[1, values.len() - split], values[split..].to_vec()).unwrap());
            let (header, blob) = encode_params(&store);
            let back: ParamStore<f32> = decode_params(&header, &blob).unwrap();
            prop_assert_eq!(back, store);
        }
    }

    #[test]
    fn offsets_and_truncation() {
        let mut store = ParamStore::<f32>::new();
        store.add("x", Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        store.add("y", Tensor::new(&[3], vec![5.0, 6.0, 7.0]).unwrap());
        let (header, blob) = encode_params(&store);
        assert_eq!(header.tensors[1].offset, 16);
        assert_eq!(blob.len(), 28);
        assert_eq!(&blob[16..20], &5.0f32.to_le_bytes());
        assert!(decode_params::<f32>(&header, &blob[..20]).is_err());
    }
}
