//! Finite-difference verification of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Backbone, Fusion, Mat, Model, ModelConfig, NnError, Sample};
use crate::extract::AspectKind;

pub const EPSILON: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;
/// Differences below this are treated as agreement (both sides are noise).
const ABS_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub backbone: Backbone,
    pub fusion: Fusion,
    /// Kink-free instances that were fully checked.
    pub instances: usize,
    /// Instances skipped because a perturbation crossed a ReLU or pooling kink.
    pub rejected: usize,
    pub parameters_checked: usize,
    pub max_relative_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self, min_instances: usize) -> bool {
        self.instances >= min_instances && self.max_relative_error < TOLERANCE
    }
}

/// Tiny configuration: d = 4, 3 classes, 2 filters or 2 cells.
pub fn tiny_config(backbone: Backbone, fusion: Fusion, seed: u64) -> ModelConfig {
    let mut c = ModelConfig::new(AspectKind::VulnerabilityType, 3, 4);
    c.backbone = backbone;
    c.fusion = fusion;
    c.filters = 2;
    c.lstm_cells = 2;
    c.seed = seed;
    c
}

/// A random sample with up to 3 rows per slot; `allow_empty` permits empty slots.
pub fn random_sample<R: Rng>(rng: &mut R, slots: usize, d: usize, classes: usize, allow_empty: bool) -> Sample<f64> {
    let segments = (0..slots)
        .map(|_| {
            let n = rng.gen_range(usize::from(!allow_empty)..4);
            Mat::from_vec(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        })
        .collect();
    Sample {
        segments,
        label: rng.gen_range(0..classes),
    }
}

/// Compares every parameter's analytic gradient with central differences in
/// f64 on random two-sample batches until `instances` kink-free batches have
/// been checked (or `max_attempts` is reached). A batch is kink-free when no
/// perturbation changes any ReLU sign or pooling argmax.
pub fn check_gradients(
    backbone: Backbone,
    fusion: Fusion,
    instances: usize,
    max_attempts: usize,
    seed: u64,
) -> Result<GradCheckReport, NnError> {
    let mut report = GradCheckReport {
        backbone,
        fusion,
        instances: 0,
        rejected: 0,
        parameters_checked: 0,
        max_relative_error: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 0..max_attempts as u64 {
        if report.instances >= instances {
            break;
        }
        let mut model = Model::<f64>::new(tiny_config(backbone, fusion, seed.wrapping_add(attempt)))?;
        // Larger weights so that ReLU and pooling paths are exercised.
        for t in &mut model.params {
            for v in &mut t.data {
                *v *= 5.0;
            }
        }
        let slots = model.config.slots();
        let samples: Vec<Sample<f64>> = (0..2)
            .map(|i| random_sample(&mut rng, slots, 4, 3, fusion == Fusion::Late && i == 1))
            .collect();
        let batch: Vec<&Sample<f64>> = samples.iter().collect();
        let (_, grads) = model.loss_and_grad(&batch)?;
        let sig = model.kink_signature(&batch)?;
        let mut stable = true;
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        'outer: for (p, gp) in grads.iter().enumerate() {
            for (i, &ana) in gp.iter().enumerate() {
                let orig = model.params[p].data[i];
                model.params[p].data[i] = orig + EPSILON;
                let lp = model.loss(&batch)?;
                let sp = model.kink_signature(&batch)?;
                model.params[p].data[i] = orig - EPSILON;
                let lm = model.loss(&batch)?;
                let sm = model.kink_signature(&batch)?;
                model.params[p].data[i] = orig;
                if sp != sig || sm != sig {
                    stable = false;
                    break 'outer;
                }
                let num = (lp - lm) / (2.0 * EPSILON);
                let diff = (num - ana).abs();
                if diff > ABS_FLOOR {
                    worst = worst.max(diff / num.abs().max(ana.abs()));
                }
                checked += 1;
            }
        }
        if stable {
            report.instances += 1;
            report.parameters_checked += checked;
            report.max_relative_error = report.max_relative_error.max(worst);
        } else {
            report.rejected += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(b: Backbone) {
        for f in [Fusion::Early, Fusion::Late] {
            let r = check_gradients(b, f, 3, 600, 11).unwrap();
            assert!(r.passed(3), "{r:?}");
        }
    }

    #[test]
    fn gradients_cnn1() {
        check(Backbone::Cnn1);
    }

    #[test]
    fn gradients_cnn2() {
        check(Backbone::Cnn2);
    }

    #[test]
    fn gradients_bilstm() {
        check(Backbone::Bilstm1);
        check(Backbone::Bilstm2);
    }

    #[test]
    fn gradients_bilstm_attention() {
        check(Backbone::Bilstm1Attn);
        check(Backbone::Bilstm2Attn);
    }

    #[test]
    fn perfect_prediction_has_zero_classifier_bias_gradient() {
        let mut model = Model::<f64>::new(tiny_config(Backbone::Cnn1, Fusion::Early, 1)).unwrap();
        let b = model.params.iter().position(|t| t.name == "classifier.b").unwrap();
        model.params[b].data = vec![100.0, 0.0, 0.0];
        let s = Sample {
            segments: vec![Mat::from_vec(1, 4, vec![0.1; 4])],
            label: 0,
        };
        let (loss, g) = model.loss_and_grad(&[&s]).unwrap();
        assert!(loss < 1e-12);
        assert!(g[b].iter().all(|v| v.abs() < 1e-12));
    }
}
