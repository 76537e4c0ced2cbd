//! Binary tensor container.
//!
//! Layout: `DYCKTF1\n`, a u32 entry count, then per entry a u32 name length,
//! the UTF-8 name, u32 rows, u32 cols and the payload. Tensors store row-major
//! f64 little-endian; entries named `*.mask` store row-major bits, LSB first.

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::pruning::PruneMask;
use std::collections::BTreeMap;
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"DYCKTF1\n";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Matrix)>,
    pub masks: Vec<(String, PruneMask)>,
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| fmt_err(format!("{what} {n} exceeds u32")))
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams) -> Self {
        Checkpoint {
            tensors: params.named_tensors().into_iter().map(|(n, t)| (n, t.clone())).collect(),
            masks: Vec::new(),
        }
    }

    pub fn into_params(self, config: ModelConfig) -> Result<ModelParams> {
        let map: BTreeMap<String, Matrix> = self.tensors.into_iter().collect();
        ModelParams::from_named(config, map)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = MAGIC.to_vec();
        out.extend(u32_of(self.tensors.len() + self.masks.len(), "entry count")?.to_le_bytes());
        let header = |out: &mut Vec<u8>, name: &str, r: usize, c: usize| -> Result<()> {
            out.extend(u32_of(name.len(), "name length")?.to_le_bytes());
            out.extend(name.as_bytes());
            out.extend(u32_of(r, "rows")?.to_le_bytes());
            out.extend(u32_of(c, "cols")?.to_le_bytes());
            Ok(())
        };
        for (name, t) in &self.tensors {
            if name.ends_with(".mask") {
                return Err(fmt_err(format!("tensor name {name:?} uses the mask suffix")));
            }
            header(&mut out, name, t.rows(), t.cols())?;
            for v in t.data() {
                out.extend(v.to_le_bytes());
            }
        }
        for (name, m) in &self.masks {
            let full = format!("{name}.mask");
            header(&mut out, &full, m.rows(), m.cols())?;
            let mut bytes = vec![0u8; m.bits().len().div_ceil(8)];
            for (i, &b) in m.bits().iter().enumerate() {
                if b {
                    bytes[i / 8] |= 1 << (i % 8);
                }
            }
            out.extend(bytes);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| fmt_err("truncated checkpoint"))?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        if take(8)? != MAGIC {
            return Err(fmt_err("bad magic"));
        }
        let read_u32 = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes")) as usize;
        let count = read_u32(take(4)?);
        let mut ck = Checkpoint::default();
        for _ in 0..count {
            let nlen = read_u32(take(4)?);
            let name = std::str::from_utf8(take(nlen)?).map_err(|e| fmt_err(e.to_string()))?.to_string();
            let rows = read_u32(take(4)?);
            let cols = read_u32(take(4)?);
            let n = rows.checked_mul(cols).ok_or_else(|| fmt_err("shape overflow"))?;
            if let Some(base) = name.strip_suffix(".mask") {
                let raw = take(n.div_ceil(8))?;
                let bits = (0..n).map(|i| raw[i / 8] >> (i % 8) & 1 == 1).collect();
                ck.masks.push((base.to_string(), PruneMask::from_bits(rows, cols, bits)?));
            } else {
                let raw = take(n.checked_mul(8).ok_or_else(|| fmt_err("shape overflow"))?)?;
                let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
                ck.tensors.push((name, Matrix::from_vec(rows, cols, data)?));
            }
        }
        if pos != bytes.len() {
            return Err(fmt_err("trailing bytes after checkpoint"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Writes the tensors and a JSON sidecar (`<path>.json`) holding the model
/// config and any extra provenance.
pub fn save_model(params: &ModelParams, path: &Path, provenance: Option<serde_json::Value>) -> Result<()> {
    Checkpoint::from_params(params).save(path)?;
    let mut side = serde_json::json!({ "model": params.config });
    if let Some(p) = provenance {
        side["provenance"] = p;
    }
    let text = serde_json::to_string_pretty(&side).map_err(|e| fmt_err(e.to_string()))?;
    std::fs::write(sidecar_path(path), text + "\n")?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let text = std::fs::read_to_string(sidecar_path(path))?;
    let side: serde_json::Value = serde_json::from_str(&text).map_err(|e| fmt_err(e.to_string()))?;
    let config: ModelConfig =
        serde_json::from_value(side["model"].clone()).map_err(|e| fmt_err(format!("sidecar model config: {e}")))?;
    Checkpoint::load(path)?.into_params(config)
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    s.into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn roundtrip_is_bit_exact() {
        let cfg = ModelConfig { dim: 6, attn_dim: 3, ffn_width: 4, ..Default::default() };
        let mut p = ModelParams::init(&cfg, &mut Rng::seed(11)).unwrap();
        p.layers[0].wv[(0, 0)] = f64::MIN_POSITIVE / 3.0;
        p.layers[1].wq[(1, 2)] = -0.0;
        let mut ck = Checkpoint::from_params(&p);
        let mask = PruneMask::from_bits(3, 5, (0..15).map(|i| i % 3 == 0).collect()).unwrap();
        ck.masks.push(("layer0.wq".into(), mask));
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.masks, ck.masks);
        for ((na, a), (nb, b)) in ck.tensors.iter().zip(&back.tensors) {
            assert_eq!(na, nb);
            let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(back.into_params(cfg).unwrap(), p);
    }

    #[test]
    fn header_layout() {
        let ck = Checkpoint { tensors: vec![("a".into(), Matrix::filled(1, 2, 1.5))], masks: vec![] };
        let b = ck.to_bytes().unwrap();
        assert_eq!(&b[..8], MAGIC);
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(&b[12..16], &1u32.to_le_bytes());
        assert_eq!(b[16], b'a');
        assert_eq!(&b[17..21], &1u32.to_le_bytes());
        assert_eq!(&b[21..25], &2u32.to_le_bytes());
        assert_eq!(&b[25..33], &1.5f64.to_le_bytes());
        assert_eq!(b.len(), 41);
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        assert!(matches!(Checkpoint::from_bytes(b"DYCKTF2\n\0\0\0\0"), Err(Error::Format(_))));
        let ck = Checkpoint { tensors: vec![("a".into(), Matrix::filled(2, 2, 1.0))], masks: vec![] };
        let b = ck.to_bytes().unwrap();
        assert!(matches!(Checkpoint::from_bytes(&b[..b.len() - 1]), Err(Error::Format(_))));
    }

    #[test]
    fn model_files_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let cfg = ModelConfig { dim: 5, attn_dim: 5, ffn_width: 5, ..Default::default() };
        let p = ModelParams::init(&cfg, &mut Rng::seed(12)).unwrap();
        save_model(&p, &path, Some(serde_json::json!({"kind": "random"}))).unwrap();
        assert_eq!(load_model(&path).unwrap(), p);
    }
}
