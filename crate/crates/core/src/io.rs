//! On-disk formats.
//!
//! Weight container (`.grfn`), all integers little-endian:
//!
//! ```text
//! "GRFN"  u32 version (= 1)
//! repeated until end of file:
//!   u32 name_len, name (UTF-8), u32 rows, u32 cols, rows*cols f32 row-major
//! ```
//!
//! Vectors are stored as `1 × n`. Tensor names: `embed`, `unembed` (absent
//! when tied), and `layers.{i}.{norm,w1,b1,wg,bg,w2,b2}`. Model shape lives in
//! a JSON sidecar with the same stem and a `.json` extension.
//!
//! Token files hold one sequence per non-empty line as whitespace-separated
//! integers; `#` starts a comment.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GriffinError, Result};
use crate::ffn::{ActivationKind, FFBlock, Gate};
use crate::linalg::{Matrix, Vector};
use crate::sim::model::{Layer, ToyModel};

pub const MAGIC: &[u8; 4] = b"GRFN";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn from_matrix(name: impl Into<String>, m: &Matrix<f32>) -> Self {
        Self {
            name: name.into(),
            rows: m.rows(),
            cols: m.cols(),
            data: m.as_slice().to_vec(),
        }
    }

    pub fn from_vector(name: impl Into<String>, v: &Vector<f32>) -> Self {
        Self {
            name: name.into(),
            rows: 1,
            cols: v.len(),
            data: v.as_slice().to_vec(),
        }
    }
}

fn dim_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| GriffinError::invalid(format!("{what} {n} does not fit in u32")))
}

pub fn encode_container(tensors: &[Tensor]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for t in tensors {
        if t.data.len() != t.rows * t.cols {
            return Err(GriffinError::shape("tensor payload", t.rows * t.cols, t.data.len()));
        }
        out.extend_from_slice(&dim_u32(t.name.len(), "tensor name length")?.to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&dim_u32(t.rows, "tensor rows")?.to_le_bytes());
        out.extend_from_slice(&dim_u32(t.cols, "tensor cols")?.to_le_bytes());
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(GriffinError::Format {
                offset: self.pos,
                message: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_container(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(GriffinError::Format {
            offset: 0,
            message: "missing GRFN magic".into(),
        });
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(GriffinError::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let mut out: Vec<Tensor> = Vec::new();
    while cur.pos < bytes.len() {
        let start = cur.pos;
        let name_len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "tensor name")?)
            .map_err(|_| GriffinError::Format {
                offset: start + 4,
                message: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        if out.iter().any(|t| t.name == name) {
            return Err(GriffinError::Format {
                offset: start,
                message: format!("duplicate tensor '{name}'"),
            });
        }
        let rows = cur.u32("rows")? as usize;
        let cols = cur.u32("cols")? as usize;
        let count = rows.checked_mul(cols).and_then(|n| n.checked_mul(4));
        let payload_at = cur.pos;
        let payload = match count {
            Some(n) => cur.take(n, "tensor payload")?,
            None => {
                return Err(GriffinError::Format {
                    offset: payload_at,
                    message: format!("tensor '{name}' size {rows}x{cols} overflows"),
                })
            }
        };
        let mut data = Vec::with_capacity(rows * cols);
        for (i, c) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if !v.is_finite() {
                return Err(GriffinError::Format {
                    offset: payload_at + 4 * i,
                    message: format!("non-finite value in tensor '{name}'"),
                });
            }
            data.push(v);
        }
        out.push(Tensor { name, rows, cols, data });
    }
    Ok(out)
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| GriffinError::Io(e.error))?;
    Ok(())
}

pub fn write_container(path: &Path, tensors: &[Tensor]) -> Result<()> {
    write_atomic(path, &encode_container(tensors)?)
}

pub fn read_container(path: &Path) -> Result<Vec<Tensor>> {
    decode_container(&fs::read(path)?)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub d_ff: usize,
    pub activation: ActivationKind,
    pub glu: bool,
}

/// JSON sidecar describing a container's model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub format: String,
    pub version: u32,
    pub vocab: usize,
    pub dim: usize,
    pub tied_embeddings: bool,
    pub layers: Vec<LayerConfig>,
}

impl ModelConfig {
    pub fn of(model: &ToyModel<f32>) -> Self {
        Self {
            format: "grfn".into(),
            version: VERSION,
            vocab: model.vocab(),
            dim: model.dim(),
            tied_embeddings: model.is_tied(),
            layers: model
                .layers()
                .iter()
                .map(|l| LayerConfig {
                    d_ff: l.block.d_ff(),
                    activation: l.block.activation(),
                    glu: l.block.is_glu(),
                })
                .collect(),
        }
    }
}

pub fn sidecar_path(container: &Path) -> PathBuf {
    container.with_extension("json")
}

pub fn model_tensors(model: &ToyModel<f32>) -> Vec<Tensor> {
    let mut out = vec![Tensor::from_matrix("embed", model.embed())];
    if !model.is_tied() {
        out.push(Tensor::from_matrix("unembed", model.unembed()));
    }
    for (i, l) in model.layers().iter().enumerate() {
        let b = &l.block;
        out.push(Tensor::from_vector(format!("layers.{i}.norm"), &l.norm));
        out.push(Tensor::from_matrix(format!("layers.{i}.w1"), b.w1()));
        out.push(Tensor::from_vector(format!("layers.{i}.b1"), b.b1()));
        if let Some(g) = b.gate() {
            out.push(Tensor::from_matrix(format!("layers.{i}.wg"), &g.wg));
            out.push(Tensor::from_vector(format!("layers.{i}.bg"), &g.bg));
        }
        out.push(Tensor::from_matrix(format!("layers.{i}.w2"), b.w2()));
        out.push(Tensor::from_vector(format!("layers.{i}.b2"), b.b2()));
    }
    out
}

/// Writes the container at `path` and its sidecar next to it.
pub fn save_model(path: &Path, model: &ToyModel<f32>) -> Result<()> {
    write_container(path, &model_tensors(model))?;
    let json = serde_json::to_string_pretty(&ModelConfig::of(model))? + "\n";
    write_atomic(&sidecar_path(path), json.as_bytes())
}

pub fn load_model(path: &Path) -> Result<ToyModel<f32>> {
    let bytes = fs::read(path)?;
    let cfg: ModelConfig = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    model_from_parts(&cfg, decode_container(&bytes)?, bytes.len())
}

/// Builds a model from decoded tensors; `end` is the container length, used
/// as the error offset for missing tensors.
pub fn model_from_parts(cfg: &ModelConfig, tensors: Vec<Tensor>, end: usize) -> Result<ToyModel<f32>> {
    if cfg.format != "grfn" || cfg.version != VERSION {
        return Err(GriffinError::Format {
            offset: 0,
            message: format!("sidecar describes {} v{}, expected grfn v{VERSION}", cfg.format, cfg.version),
        });
    }
    let mut map: HashMap<String, Tensor> = tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
    let mut take = |name: String, rows: usize, cols: usize| -> Result<Vec<f32>> {
        let t = map.remove(&name).ok_or_else(|| GriffinError::Format {
            offset: end,
            message: format!("missing tensor '{name}'"),
        })?;
        if (t.rows, t.cols) != (rows, cols) {
            return Err(GriffinError::Format {
                offset: end,
                message: format!("tensor '{name}' is {}x{}, sidecar implies {rows}x{cols}", t.rows, t.cols),
            });
        }
        Ok(t.data)
    };
    let (v, d) = (cfg.vocab, cfg.dim);
    let embed = Matrix::new(v, d, take("embed".into(), v, d)?)?;
    let unembed = if cfg.tied_embeddings {
        None
    } else {
        Some(Matrix::new(v, d, take("unembed".into(), v, d)?)?)
    };
    let mut layers = Vec::with_capacity(cfg.layers.len());
    for (i, lc) in cfg.layers.iter().enumerate() {
        let f = lc.d_ff;
        let norm = Vector::new(take(format!("layers.{i}.norm"), 1, d)?)?;
        let w1 = Matrix::new(f, d, take(format!("layers.{i}.w1"), f, d)?)?;
        let b1 = Vector::new(take(format!("layers.{i}.b1"), 1, f)?)?;
        let gate = if lc.glu {
            Some(Gate {
                wg: Matrix::new(f, d, take(format!("layers.{i}.wg"), f, d)?)?,
                bg: Vector::new(take(format!("layers.{i}.bg"), 1, f)?)?,
            })
        } else {
            None
        };
        let w2 = Matrix::new(d, f, take(format!("layers.{i}.w2"), d, f)?)?;
        let b2 = Vector::new(take(format!("layers.{i}.b2"), 1, d)?)?;
        layers.push(Layer {
            norm,
            block: FFBlock::new(w1, b1, gate, w2, b2, lc.activation)?,
        });
    }
    if let Some(name) = map.keys().min() {
        return Err(GriffinError::Format {
            offset: end,
            message: format!("unexpected tensor '{name}'"),
        });
    }
    ToyModel::new(embed, unembed, layers)
}

pub fn parse_tokens(text: &str) -> Result<Vec<Vec<u32>>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("");
        let seq = body
            .split_whitespace()
            .map(|w| {
                w.parse::<u32>().map_err(|_| GriffinError::Parse {
                    line: i + 1,
                    message: format!("'{w}' is not a token id"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if !seq.is_empty() {
            out.push(seq);
        }
    }
    Ok(out)
}

pub fn read_tokens(path: &Path) -> Result<Vec<Vec<u32>>> {
    parse_tokens(&fs::read_to_string(path)?)
}

pub fn format_tokens(seqs: &[Vec<u32>]) -> String {
    let mut out = String::new();
    for s in seqs {
        let line: Vec<String> = s.iter().map(|t| t.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_tokens(path: &Path, seqs: &[Vec<u32>]) -> Result<()> {
    write_atomic(path, format_tokens(seqs).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::planted::{generate_planted_model, PlantedDims, PlantedSpec};

    fn tensor(name: &str, rows: usize, cols: usize) -> Tensor {
        Tensor {
            name: name.into(),
            rows,
            cols,
            data: (0..rows * cols).map(|i| i as f32 * 0.5 - 1.0).collect(),
        }
    }

    #[test]
    fn container_round_trip() {
        let ts = vec![tensor("a", 2, 3), tensor("layers.0.b1", 1, 4), tensor("empty", 0, 5)];
        let bytes = encode_container(&ts).unwrap();
        assert_eq!(&bytes[..4], b"GRFN");
        assert_eq!(decode_container(&bytes).unwrap(), ts);
        assert_eq!(decode_container(&encode_container(&[]).unwrap()).unwrap(), vec![]);
    }

    #[test]
    fn container_errors_report_offsets() {
        let bytes = encode_container(&[tensor("w", 2, 2)]).unwrap();
        let offset = |b: &[u8]| match decode_container(b) {
            Err(GriffinError::Format { offset, .. }) => offset,
            other => panic!("expected format error, got {other:?}"),
        };
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(offset(&bad), 0);
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert_eq!(offset(&bad), 4);
        // header 8 + name len 4 + name 1 + dims 8 = 21; payload is 16 bytes
        assert_eq!(offset(&bytes[..30]), 21);
        assert_eq!(offset(&bytes[..10]), 8);
        let mut bad = bytes.clone();
        bad[25..29].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(offset(&bad), 25);
        let twice = encode_container(&[tensor("w", 1, 1), tensor("w", 1, 1)]).unwrap();
        assert_eq!(offset(&twice), 8 + 4 + 1 + 8 + 4);
        assert!(decode_container(&bytes[..3]).unwrap_err().is_data_format());
    }

    #[test]
    fn model_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.grfn");
        let spec = PlantedSpec {
            clusters: 2,
            experts_per_cluster: 4,
            dominance: 10.0,
            rng_seed: 1,
        };
        let (model, _) = generate_planted_model::<f32>(&spec, &PlantedDims::new(16, 12, 16, 2)).unwrap();
        save_model(&path, &model).unwrap();
        assert!(dir.path().join("m.json").exists());
        assert_eq!(load_model(&path).unwrap(), model);

        let tied = ToyModel::new(model.embed().clone(), None, model.layers().to_vec()).unwrap();
        save_model(&path, &tied).unwrap();
        let back = load_model(&path).unwrap();
        assert!(back.is_tied());
        assert_eq!(back, tied);
    }

    #[test]
    fn missing_tensor_is_a_format_error() {
        let spec = PlantedSpec {
            clusters: 2,
            experts_per_cluster: 4,
            dominance: 10.0,
            rng_seed: 1,
        };
        let (model, _) = generate_planted_model::<f32>(&spec, &PlantedDims::new(16, 12, 16, 1)).unwrap();
        let cfg = ModelConfig::of(&model);
        let mut ts = model_tensors(&model);
        ts.retain(|t| t.name != "layers.0.w2");
        let err = model_from_parts(&cfg, ts, 99).unwrap_err();
        assert!(matches!(err, GriffinError::Format { offset: 99, .. }));
        let mut ts = model_tensors(&model);
        ts.push(tensor("extra", 1, 1));
        assert!(model_from_parts(&cfg, ts, 0).unwrap_err().is_data_format());
    }

    #[test]
    fn token_files() {
        let text = "1 2 3\n\n# comment\n4 5 # trailing\n  6\n";
        assert_eq!(parse_tokens(text).unwrap(), vec![vec![1, 2, 3], vec![4, 5], vec![6]]);
        match parse_tokens("1 2\n3 x 4\n") {
            Err(GriffinError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_tokens("-1").is_err());
        let seqs = vec![vec![7, 8], vec![9]];
        assert_eq!(parse_tokens(&format_tokens(&seqs)).unwrap(), seqs);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
