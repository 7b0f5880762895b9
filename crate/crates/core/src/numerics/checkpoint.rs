//! `CSICKPT1` parameter container: magic, a little-endian `u64` header
//! length, the JSON header, then every tensor's `f64` data (little-endian) in
//! header order.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NumericsError, ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"CSICKPT1";

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    params: Vec<ParamEntry>,
    config: serde_json::Value,
}

pub fn encode(store: &ParamStore, config: &serde_json::Value) -> Result<Vec<u8>, NumericsError> {
    let header = Header {
        params: store
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        config: config.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| NumericsError::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + store.numel() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in store.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(ParamStore, serde_json::Value), NumericsError> {
    let bad = |m: &str| NumericsError::Checkpoint(m.to_string());
    let mut rd = bytes;
    let mut magic = [0u8; 8];
    rd.read_exact(&mut magic)
        .map_err(|_| bad("truncated magic"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic; not a CSICKPT1 file"));
    }
    let mut len = [0u8; 8];
    rd.read_exact(&mut len)
        .map_err(|_| bad("truncated header length"))?;
    let len = u64::from_le_bytes(len) as usize;
    if rd.len() < len {
        return Err(bad("truncated header"));
    }
    let header: Header =
        serde_json::from_slice(&rd[..len]).map_err(|e| NumericsError::Checkpoint(e.to_string()))?;
    rd = &rd[len..];
    let mut store = ParamStore::new();
    for entry in header.params {
        let numel: usize = entry.shape.iter().product();
        if rd.len() < numel * 8 {
            return Err(bad("truncated tensor data"));
        }
        let data = rd[..numel * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        rd = &rd[numel * 8..];
        store.insert(&entry.name, Tensor::new(entry.shape, data)?)?;
    }
    if !rd.is_empty() {
        return Err(bad("trailing bytes after tensor data"));
    }
    Ok((store, header.config))
}

pub fn save(
    path: &Path,
    store: &ParamStore,
    config: &serde_json::Value,
) -> Result<(), NumericsError> {
    let bytes = encode(store, config)?;
    std::fs::write(path, bytes).map_err(|e| NumericsError::Io(path.display().to_string(), e))
}

pub fn load(path: &Path) -> Result<(ParamStore, serde_json::Value), NumericsError> {
    let bytes =
        std::fs::read(path).map_err(|e| NumericsError::Io(path.display().to_string(), e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_starts_with_magic_and_header_length() {
        let mut store = ParamStore::new();
        store.insert("b", Tensor::vector(vec![1.5, -2.0])).unwrap();
        store.insert("a", Tensor::scalar(0.25)).unwrap();
        let cfg = serde_json::json!({"hidden_dim": 4});
        let bytes = encode(&store, &cfg).unwrap();
        assert_eq!(&bytes[..8], b"CSICKPT1");
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + hlen]).unwrap();
        assert_eq!(header["params"][0]["name"], "a");
        assert_eq!(header["params"][1]["shape"], serde_json::json!([2]));
        assert_eq!(header["config"]["hidden_dim"], 4);
        assert_eq!(&bytes[16 + hlen..16 + hlen + 8], &0.25f64.to_le_bytes());
        assert_eq!(bytes.len(), 16 + hlen + 3 * 8);

        let (back, cfg_back) = decode(&bytes).unwrap();
        assert_eq!(back, store);
        assert_eq!(cfg_back, cfg);
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(decode(b"NOTACKPT").is_err());
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let bytes = encode(&store, &serde_json::Value::Null).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
    }
}
