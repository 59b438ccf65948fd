//! Self-contained model files: one JSON manifest line, then raw little-endian
//! f32 tensors in manifest order.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::Adam;
use super::{Model, ModelConfig, NnError};
use crate::embed::{EmbeddingTable, Vocabulary};

pub const CHECKPOINT_FORMAT: &str = "vaf-ckpt/1";

/// A trained classifier with everything needed to predict: weights, label
/// names, embeddings, and the optimizer state for resuming.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub optimizer: Option<Adam>,
    pub iteration: usize,
    pub dataset_fingerprint: String,
    pub taxonomy_fingerprint: String,
    pub labels: Vec<String>,
    pub embedding: EmbeddingTable,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct OptimizerEntry {
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    t: u64,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingEntry {
    dim: usize,
    oov_seed: u64,
    words: Vec<String>,
    counts: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    config: ModelConfig,
    iteration: usize,
    dataset_fingerprint: String,
    taxonomy_fingerprint: String,
    labels: Vec<String>,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerEntry>,
    embedding: EmbeddingEntry,
}

fn bad(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

struct Payload {
    floats: Vec<f32>,
    cursor: usize,
}

impl Payload {
    fn next(&mut self, n: usize) -> Result<Vec<f32>, NnError> {
        let end = self.cursor + n;
        if end > self.floats.len() {
            return Err(bad("payload truncated"));
        }
        let v = self.floats[self.cursor..end].to_vec();
        self.cursor = end;
        Ok(v)
    }
}

fn write_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), NnError> {
    if ckpt.labels.len() != ckpt.model.config.num_classes {
        return Err(bad("label count does not match the model"));
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        config: ckpt.model.config.clone(),
        iteration: ckpt.iteration,
        dataset_fingerprint: ckpt.dataset_fingerprint.clone(),
        taxonomy_fingerprint: ckpt.taxonomy_fingerprint.clone(),
        labels: ckpt.labels.clone(),
        tensors: ckpt
            .model
            .params
            .iter()
            .scan(0usize, |off, t| {
                let e = TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    offset: *off,
                };
                *off += 4 * t.len();
                Some(e)
            })
            .collect(),
        optimizer: ckpt.optimizer.as_ref().map(|a| OptimizerEntry {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            t: a.t,
        }),
        embedding: EmbeddingEntry {
            dim: ckpt.embedding.dim(),
            oov_seed: ckpt.embedding.oov_seed(),
            words: ckpt.embedding.vocab().words().to_vec(),
            counts: ckpt.embedding.vocab().counts().to_vec(),
        },
    };
    let mut buf = serde_json::to_vec(&manifest).map_err(|e| bad(e.to_string()))?;
    buf.push(b'\n');
    for t in &ckpt.model.params {
        write_f32s(&mut buf, &t.data);
    }
    if let Some(a) = &ckpt.optimizer {
        for v in a.m.iter().chain(&a.v) {
            write_f32s(&mut buf, v);
        }
    }
    write_f32s(&mut buf, ckpt.embedding.data());
    let mut f = std::fs::File::create(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    f.write_all(&buf).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, NnError> {
    let f = std::fs::File::open(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    let mut r = BufReader::new(f);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| bad(e.to_string()))?;
    let manifest: Manifest = serde_json::from_str(line.trim_end())
        .map_err(|e| bad(format!("manifest: {e}")))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(bad(format!("unsupported format {:?}", manifest.format)));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(|e| bad(e.to_string()))?;
    if payload.len() % 4 != 0 {
        return Err(bad("payload is not a whole number of f32 values"));
    }
    let floats: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut payload = Payload { floats, cursor: 0 };
    let mut next = |n: usize| payload.next(n);

    let mut model = Model::<f32>::new(manifest.config.clone())?;
    if model.params.len() != manifest.tensors.len() {
        return Err(bad("tensor list does not match the configuration"));
    }
    let mut offset = 0;
    for (t, e) in model.params.iter_mut().zip(&manifest.tensors) {
        if t.name != e.name || t.shape != e.shape || e.offset != offset {
            return Err(bad(format!("tensor {} {:?} does not match {} {:?}", e.name, e.shape, t.name, t.shape)));
        }
        t.data = next(t.len())?;
        offset += 4 * t.len();
    }
    let optimizer = match &manifest.optimizer {
        None => None,
        Some(o) => {
            let mut a = Adam::new(&model.params, o.lr);
            a.beta1 = o.beta1;
            a.beta2 = o.beta2;
            a.eps = o.eps;
            a.t = o.t;
            for i in 0..a.m.len() {
                a.m[i] = next(model.params[i].len())?;
            }
            for i in 0..a.v.len() {
                a.v[i] = next(model.params[i].len())?;
            }
            Some(a)
        }
    };
    let e = &manifest.embedding;
    if e.words.len() != e.counts.len() {
        return Err(bad("embedding vocabulary is inconsistent"));
    }
    let data = next(e.words.len() * e.dim)?;
    if payload.cursor != payload.floats.len() {
        return Err(bad("trailing bytes after the payload"));
    }
    let counts: HashMap<String, u64> = e.words.iter().cloned().zip(e.counts.iter().copied()).collect();
    let vocab = Vocabulary::from_counts(counts, e.words.len());
    if vocab.words() != e.words.as_slice() {
        return Err(bad("embedding vocabulary is not in canonical order"));
    }
    if manifest.labels.len() != manifest.config.num_classes {
        return Err(bad("label count does not match the model"));
    }
    Ok(Checkpoint {
        model,
        optimizer,
        iteration: manifest.iteration,
        dataset_fingerprint: manifest.dataset_fingerprint,
        taxonomy_fingerprint: manifest.taxonomy_fingerprint,
        labels: manifest.labels,
        embedding: EmbeddingTable::new(vocab, e.dim, data, e.oov_seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::AspectKind;
    use crate::nn::{Backbone, Fusion, Mat, Sample};

    fn checkpoint(backbone: Backbone, fusion: Fusion) -> Checkpoint {
        let mut cfg = ModelConfig::new(AspectKind::AttackVector, 3, 5);
        cfg.backbone = backbone;
        cfg.fusion = fusion;
        cfg.filters = 4;
        cfg.lstm_cells = 3;
        let model = Model::<f32>::new(cfg).unwrap();
        let mut adam = Adam::new(&model.params, 0.001);
        adam.t = 7;
        adam.m[0][0] = 0.25;
        adam.v[1][0] = 1.5;
        let mut counts = HashMap::new();
        counts.insert("overflow".to_string(), 3);
        counts.insert("buffer".to_string(), 3);
        counts.insert("via".to_string(), 9);
        let vocab = Vocabulary::from_counts(counts, 10);
        let data = (0..15).map(|i| i as f32 * 0.1 - 0.7).collect();
        Checkpoint {
            model,
            optimizer: Some(adam),
            iteration: 64,
            dataset_fingerprint: "00ff".into(),
            taxonomy_fingerprint: "abcd".into(),
            labels: vec!["a".into(), "b".into(), "Others".into()],
            embedding: EmbeddingTable::new(vocab, 5, data, 99),
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        for (b, f) in [(Backbone::Cnn2, Fusion::Late), (Backbone::Bilstm2Attn, Fusion::Early)] {
            let c = checkpoint(b, f);
            let p = dir.path().join("m.ckpt");
            save_checkpoint(&c, &p).unwrap();
            let back = load_checkpoint(&p).unwrap();
            assert_eq!(back.model.params, c.model.params);
            assert_eq!(back.model.config, c.model.config);
            assert_eq!(back.optimizer, c.optimizer);
            assert_eq!(back.embedding, c.embedding);
            assert_eq!(back.labels, c.labels);
            assert_eq!(back.iteration, 64);
            let slots = c.model.config.slots();
            let s = Sample {
                segments: vec![Mat::from_vec(2, 5, (0..10).map(|i| i as f32 / 10.0).collect()); slots],
                label: 0,
            };
            let a = c.model.predict_proba(&[&s]).unwrap();
            let z = back.model.predict_proba(&[&s]).unwrap();
            assert_eq!(a, z);
            // Resaving yields the same bytes.
            let p2 = dir.path().join("m2.ckpt");
            save_checkpoint(&back, &p2).unwrap();
            assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let c = checkpoint(Backbone::Cnn1, Fusion::Early);
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&c, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(NnError::Checkpoint(_))));
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 4]);
        std::fs::write(&p, &extra).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(NnError::Checkpoint(_))));
        std::fs::write(&p, b"{\"format\":\"other\"}\n").unwrap();
        assert!(load_checkpoint(&p).is_err());
        assert!(load_checkpoint(&dir.path().join("missing")).is_err());
    }
}
