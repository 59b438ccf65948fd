//! Input encoding, Adam, the training loop and missing-aspect prediction.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Model, Sample};
use super::{Fusion, Mat, ModelConfig, NnError, Tensor};
use crate::dataset::{render_input, render_segments, AspectDataset, InputAspect, LabeledInstance};
use crate::embed::EmbeddingTable;
use crate::eval::{confusion, weighted_prf};
use crate::extract::{AspectKind, AspectSet};

/// Looks up the first `max_len` tokens.
pub fn embed_tokens(tokens: &[String], table: &EmbeddingTable, max_len: usize) -> Mat<f32> {
    let d = table.dim();
    let n = tokens.len().min(max_len);
    let mut m = Mat::zeros(n, d);
    for (t, tok) in tokens[..n].iter().enumerate() {
        table.lookup_into(tok, m.row_mut(t));
    }
    m
}

/// The `max_len × d` input matrix: lookups in order, truncated at the tail,
/// zero rows after the last token. Models consume only the
/// [`embed_tokens`] prefix; the zero rows are what they mask.
pub fn embed_sequence(tokens: &[String], table: &EmbeddingTable, max_len: usize) -> Mat<f32> {
    let d = table.dim();
    let mut m = Mat::zeros(max_len, d);
    let prefix = embed_tokens(tokens, table, max_len);
    m.data[..prefix.data.len()].copy_from_slice(&prefix.data);
    m
}

/// Turns an instance into the model's input. The random source only matters
/// for i-ar, where it fixes the aspect permutation.
pub fn encode_instance<R: Rng + ?Sized>(
    instance: &LabeledInstance,
    config: &ModelConfig,
    table: &EmbeddingTable,
    rng: &mut R,
) -> Result<Sample<f32>, NnError> {
    if table.dim() != config.embed_dim {
        return Err(NnError::Shape(format!(
            "embedding dim {} != model dim {}",
            table.dim(),
            config.embed_dim
        )));
    }
    let segments = match config.fusion {
        Fusion::Early => vec![embed_tokens(
            &render_input(instance, config.input_format, rng),
            table,
            config.max_len,
        )],
        Fusion::Late => render_segments(instance)
            .into_iter()
            .map(|(_, toks)| embed_tokens(&toks, table, config.max_len))
            .collect(),
    };
    Ok(Sample {
        segments,
        label: instance.target_label,
    })
}

/// Encodes every instance. Each instance draws from its own stream seeded by
/// `seed` and its CVE id, so subsets encode identically to the full set.
pub fn encode_dataset(
    dataset: &AspectDataset,
    config: &ModelConfig,
    table: &EmbeddingTable,
    seed: u64,
) -> Result<Vec<Sample<f32>>, NnError> {
    dataset
        .instances
        .iter()
        .map(|inst| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ crate::fnv64(inst.cve_id.as_bytes()));
            encode_instance(inst, config, table, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub t: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(params: &[Tensor<f32>], lr: f32) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor<f32>], grads: &[Vec<f32>]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p.data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f32,
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: 128,
            iterations: 256,
            lr: 0.001,
            eval_every: 8,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss per iteration.
    pub losses: Vec<f32>,
    /// (iteration, validation weighted F1), starting with the initialization.
    pub validation: Vec<(usize, f64)>,
    pub best_iteration: usize,
    pub best_score: f64,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f32> {
        self.losses.last().copied()
    }
}

/// Argmax class per sample, lowest index on ties.
pub fn evaluate_model(model: &Model<f32>, samples: &[Sample<f32>]) -> Result<Vec<usize>, NnError> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(256) {
        let refs: Vec<&Sample<f32>> = chunk.iter().collect();
        for p in model.predict_proba(&refs)? {
            out.push(argmax(&p));
        }
    }
    Ok(out)
}

fn argmax(p: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn validation_f1(model: &Model<f32>, val: &[Sample<f32>]) -> Result<f64, NnError> {
    let pred = evaluate_model(model, val)?;
    let truth: Vec<usize> = val.iter().map(|s| s.label).collect();
    let m = confusion(&truth, &pred, model.config.num_classes).map_err(|e| NnError::Input(e.to_string()))?;
    Ok(weighted_prf(&m).f1)
}

/// Mini-batch Adam over reshuffled passes of `train`. Weighted F1 on `val`
/// is measured at initialization and every `eval_every` iterations, and the
/// best iterate is left in `model` (the final one when `val` is empty).
pub fn train(
    model: &mut Model<f32>,
    train: &[Sample<f32>],
    val: &[Sample<f32>],
    opts: &TrainOptions,
) -> Result<(TrainReport, Adam), NnError> {
    if train.is_empty() {
        return Err(NnError::Input("empty training set".into()));
    }
    if opts.batch_size == 0 || opts.eval_every == 0 {
        return Err(NnError::Argument("batch size and evaluation interval must be positive".into()));
    }
    let mut adam = Adam::new(&model.params, opts.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut report = TrainReport {
        losses: Vec::with_capacity(opts.iterations),
        validation: Vec::new(),
        best_iteration: 0,
        best_score: f64::NEG_INFINITY,
    };
    let mut best = model.params.clone();
    if !val.is_empty() {
        let s = validation_f1(model, val)?;
        report.validation.push((0, s));
        report.best_score = s;
    }
    let batch = opts.batch_size.min(train.len());
    for it in 1..=opts.iterations {
        let mut idx = Vec::with_capacity(batch);
        while idx.len() < batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let take = (batch - idx.len()).min(order.len() - cursor);
            idx.extend_from_slice(&order[cursor..cursor + take]);
            cursor += take;
        }
        let refs: Vec<&Sample<f32>> = idx.iter().map(|&i| &train[i]).collect();
        let (loss, grads) = model.loss_and_grad(&refs).map_err(|e| match e {
            NnError::NonFinite(what) => NnError::Diverged { what, iteration: it },
            e => e,
        })?;
        if !loss.is_finite() {
            return Err(NnError::Diverged {
                what: "loss".into(),
                iteration: it,
            });
        }
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(NnError::Diverged {
                what: "gradient".into(),
                iteration: it,
            });
        }
        adam.step(&mut model.params, &grads);
        report.losses.push(loss);
        if !val.is_empty() && (it % opts.eval_every == 0 || it == opts.iterations) {
            let s = validation_f1(model, val)?;
            report.validation.push((it, s));
            if s > report.best_score {
                report.best_score = s;
                report.best_iteration = it;
                best.clone_from(&model.params);
            }
        }
    }
    if val.is_empty() {
        report.best_iteration = opts.iterations;
        report.best_score = f64::NAN;
    } else {
        model.params = best;
    }
    Ok((report, adam))
}

/// Class prediction for the `target` aspect of a partially extracted CVE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub cve_id: String,
    pub target_kind: AspectKind,
    pub label: String,
    pub label_index: usize,
    pub probabilities: Vec<(String, f64)>,
}

/// Predicts the class of `config.target_kind` from the other aspects present
/// in `set`. Fails when none of them is present.
pub fn predict_missing(
    model: &Model<f32>,
    labels: &[String],
    table: &EmbeddingTable,
    set: &AspectSet,
) -> Result<Prediction, NnError> {
    let target = model.config.target_kind;
    let mut inputs: Vec<InputAspect> = set
        .spans()
        .filter(|s| s.kind != target)
        .map(|s| InputAspect {
            kind: s.kind,
            text: s.text.clone(),
            start: s.start,
            end: s.end,
        })
        .collect();
    if inputs.is_empty() {
        return Err(NnError::Input(format!(
            "{}: no known aspects to predict {target} from",
            set.cve_id
        )));
    }
    inputs.sort_by_key(|a| (a.start, a.kind.ordinal()));
    if labels.len() != model.config.num_classes {
        return Err(NnError::Shape(format!(
            "{} labels for {} classes",
            labels.len(),
            model.config.num_classes
        )));
    }
    let mut excised: Vec<(usize, usize)> = set.get(target).map(|s| (s.start, s.end)).into_iter().collect();
    excised.sort_unstable();
    let inst = LabeledInstance {
        cve_id: set.cve_id.clone(),
        target_kind: target,
        target_label: 0,
        target_text: String::new(),
        inputs,
        description: set.description.clone(),
        excised,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ crate::fnv64(set.cve_id.as_bytes()));
    let sample = encode_instance(&inst, &model.config, table, &mut rng)?;
    let probs = model.predict_proba(&[&sample])?.remove(0);
    let k = argmax(&probs);
    Ok(Prediction {
        cve_id: set.cve_id.clone(),
        target_kind: target,
        label: labels[k].clone(),
        label_index: k,
        probabilities: labels.iter().cloned().zip(probs.iter().map(|&p| f64::from(p))).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Backbone;

    fn toy(classes: usize, n: usize, d: usize, seed: u64) -> Vec<Sample<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = i % classes;
                let len = rng.gen_range(2..6);
                let mut m = Mat::<f32>::zeros(len, d);
                for v in &mut m.data {
                    *v = rng.gen_range(-0.3..0.3);
                }
                // Class signal on one coordinate of one row.
                m.row_mut(0)[label] += 1.0;
                Sample {
                    segments: vec![m],
                    label,
                }
            })
            .collect()
    }

    fn small_config(backbone: Backbone) -> ModelConfig {
        let mut c = ModelConfig::new(AspectKind::VulnerabilityType, 3, 6);
        c.backbone = backbone;
        c.filters = 8;
        c.lstm_cells = 6;
        c
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![Tensor::<f32>::zeros("w", &[2])];
        let mut adam = Adam::new(&p, 0.1);
        adam.step(&mut p, &[vec![3.0, -0.5]]);
        assert!((p[0].data[0] + 0.1).abs() < 1e-6);
        assert!((p[0].data[1] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn adam_oracles() {
        let mut p = vec![Tensor::<f32>::zeros("w", &[1])];
        p[0].data[0] = 2.0;
        let mut adam = Adam::new(&p, 0.001);
        adam.step(&mut p, &[vec![0.0]]);
        assert_eq!(p[0].data[0], 2.0);
        let mut adam = Adam::new(&p, 0.001);
        adam.step(&mut p, &[vec![0.5]]);
        assert!((p[0].data[0] - 1.999).abs() < 1e-6);
        let before = p[0].data[0];
        adam.step(&mut p, &[vec![0.5]]);
        assert!(p[0].data[0] < before);
        assert_eq!(adam.t, 2);
    }

    #[test]
    fn sequence_padding_contract() {
        let mut counts = std::collections::HashMap::new();
        counts.insert("heap".to_string(), 2);
        let vocab = crate::embed::Vocabulary::from_counts(counts, 10);
        let table = EmbeddingTable::new(vocab, 3, vec![0.5, -1.0, 2.0], 7);
        let toks = vec!["heap".to_string(), "Heap".to_string()];
        let m = embed_sequence(&toks, &table, 4);
        assert_eq!((m.rows, m.cols), (4, 3));
        assert_eq!(m.row(0), &[0.5, -1.0, 2.0]);
        assert_eq!(m.row(1), &[0.5, -1.0, 2.0]);
        assert_eq!(m.row(2), &[0.0; 3]);
        assert_eq!(m.row(3), &[0.0; 3]);
        assert!(embed_sequence(&[], &table, 2).data.iter().all(|v| *v == 0.0));
        assert_eq!(embed_sequence(&toks, &table, 1).rows, 1);
        assert_eq!(embed_tokens(&toks, &table, 1).rows, 1);
    }

    #[test]
    fn zero_classifier_gives_uniform_and_label_zero() {
        let cfg = ModelConfig::new(AspectKind::AttackerType, 4, 4);
        let mut model = Model::<f32>::new(cfg).unwrap();
        for t in &mut model.params {
            if t.name.starts_with("classifier") {
                t.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let table = EmbeddingTable::random(4, 3);
        let labels: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let mut set = AspectSet::empty("CVE-2", "SQL injection in Foo");
        set.insert(crate::extract::AspectSpan {
            kind: AspectKind::VulnerabilityType,
            start: 0,
            end: 13,
            text: "SQL injection".into(),
        })
        .unwrap();
        let p = predict_missing(&model, &labels, &table, &set).unwrap();
        assert_eq!(p.label_index, 0);
        assert!(p.probabilities.iter().all(|(_, v)| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn overfits_one_batch() {
        for b in [Backbone::Cnn1, Backbone::Bilstm1] {
            let data = toy(3, 12, 6, 4);
            let mut model = Model::<f32>::new(small_config(b)).unwrap();
            let opts = TrainOptions {
                batch_size: 12,
                iterations: 300,
                lr: 0.01,
                ..TrainOptions::default()
            };
            let (report, _) = train(&mut model, &data, &[], &opts).unwrap();
            assert!(report.final_loss().unwrap() < 0.01, "{b}: {:?}", report.final_loss());
        }
    }

    #[test]
    fn training_is_deterministic_and_keeps_best() {
        let data = toy(3, 40, 6, 5);
        let val = toy(3, 15, 6, 6);
        let opts = TrainOptions {
            batch_size: 8,
            iterations: 24,
            ..TrainOptions::default()
        };
        let run = || {
            let mut m = Model::<f32>::new(small_config(Backbone::Cnn1)).unwrap();
            let (r, _) = train(&mut m, &data, &val, &opts).unwrap();
            (m.params, r)
        };
        let (p1, r1) = run();
        let (p2, r2) = run();
        assert_eq!(p1, p2);
        assert_eq!(r1, r2);
        let best = r1.validation.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r1.best_score, best);
        assert_eq!(r1.validation.len(), 4);
    }

    #[test]
    fn zero_iterations_keep_initialization() {
        let data = toy(3, 10, 6, 1);
        let mut m = Model::<f32>::new(small_config(Backbone::Cnn2)).unwrap();
        let init = m.params.clone();
        let opts = TrainOptions {
            iterations: 0,
            ..TrainOptions::default()
        };
        let (r, adam) = train(&mut m, &data, &data, &opts).unwrap();
        assert_eq!(m.params, init);
        assert_eq!(r.best_iteration, 0);
        assert_eq!(adam.t, 0);
    }

    #[test]
    fn divergence_is_an_error() {
        let data = toy(3, 10, 6, 1);
        let mut m = Model::<f32>::new(small_config(Backbone::Cnn1)).unwrap();
        m.params[0].data[0] = f32::NAN;
        let err = train(&mut m, &data, &[], &TrainOptions::default()).unwrap_err();
        assert!(matches!(err, NnError::Diverged { iteration: 1, .. }));
        assert!(matches!(
            train(&mut m, &[], &[], &TrainOptions::default()),
            Err(NnError::Input(_))
        ));
    }

    #[test]
    fn predict_needs_known_aspects() {
        let cfg = ModelConfig::new(AspectKind::VulnerabilityType, 2, 4);
        let model = Model::<f32>::new(cfg).unwrap();
        let table = EmbeddingTable::random(4, 1);
        let labels = vec!["A".to_string(), "B".to_string()];
        let set = AspectSet::empty("CVE-1", "nothing here");
        assert!(matches!(predict_missing(&model, &labels, &table, &set), Err(NnError::Input(_))));
        let mut set = AspectSet::empty("CVE-1", "in Foo 1.2 allows remote attackers");
        set.insert(crate::extract::AspectSpan {
            kind: AspectKind::AffectedProduct,
            start: 3,
            end: 10,
            text: "Foo 1.2".into(),
        })
        .unwrap();
        let p = predict_missing(&model, &labels, &table, &set).unwrap();
        let total: f64 = p.probabilities.iter().map(|x| x.1).sum();
        assert!((total - 1.0).abs() < 1e-5);
        assert_eq!(p.label, labels[p.label_index]);
    }
}
