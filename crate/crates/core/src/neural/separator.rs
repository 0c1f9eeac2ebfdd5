//! The separation model: one encoder feeding two decoders, plus the
//! width solver that hits a requested parameter budget.

use crate::error::{check_dims, Error, Result};

use super::network::{Activation, DenseNetwork};

/// Per-dimension input standardization statistics learned from the
/// training mixtures.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn fit(samples: impl Iterator<Item = Vec<f64>> + Clone, dim: usize) -> Self {
        let mut mean = vec![0.0; dim];
        let mut count = 0usize;
        for s in samples.clone() {
            for (m, v) in mean.iter_mut().zip(&s) {
                *m += v;
            }
            count += 1;
        }
        for m in mean.iter_mut() {
            *m /= count.max(1) as f64;
        }
        let mut var = vec![0.0; dim];
        for s in samples {
            for ((v, m), x) in var.iter_mut().zip(&mean).zip(&s) {
                let d = x - m;
                *v += d * d;
            }
        }
        let std = var
            .into_iter()
            .map(|v| (v / count.max(1) as f64).sqrt().max(1e-8))
            .collect();
        Standardization { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// Encoder plus two decoders; the encoder's output splits into two
/// latent halves, each routed to its own decoder.
#[derive(Debug, Clone)]
pub struct SeparatorModel {
    pub encoder: DenseNetwork,
    pub decoder_1: DenseNetwork,
    pub decoder_2: DenseNetwork,
    pub latent_dim: usize,
    pub input_dim: usize,
    pub standardization: Option<Standardization>,
}

impl SeparatorModel {
    pub fn total_parameter_count(&self) -> usize {
        self.encoder.parameter_count()
            + self.decoder_1.parameter_count()
            + self.decoder_2.parameter_count()
    }

    /// Separate a compressed mixture into two compressed estimates. The
    /// input must already be standardized if the model carries stats
    /// (training and inference both go through `separate`).
    pub fn separate(&self, y_mixed: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dims(self.input_dim, y_mixed.len())?;
        let x = match &self.standardization {
            Some(s) => s.apply(y_mixed),
            None => y_mixed.to_vec(),
        };
        let z = self.encoder.forward(&x)?;
        let (z1, z2) = z.split_at(self.latent_dim);
        let out1 = self.decoder_1.forward(z1)?;
        let out2 = self.decoder_2.forward(z2)?;
        Ok((out1, out2))
    }

    /// A stable digest of the full parameter vector, for frozen-model
    /// checks and run reproducibility.
    pub fn parameter_digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for net in [&self.encoder, &self.decoder_1, &self.decoder_2] {
            for &p in net.params() {
                hasher.update((p as f32).to_bits().to_le_bytes());
            }
        }
        format!("{:x}", hasher.finalize())
    }
}

/// Shapes for one uniform-width network.
fn uniform_shapes(input: usize, output: usize, hidden_layers: usize, width: usize) -> Vec<(usize, usize)> {
    let mut shapes = Vec::with_capacity(hidden_layers + 1);
    let mut prev = input;
    for _ in 0..hidden_layers {
        shapes.push((prev, width));
        prev = width;
    }
    shapes.push((prev, output));
    shapes
}

fn shape_cost(shapes: &[(usize, usize)]) -> usize {
    shapes.iter().map(|&(i, o)| i * o + o).sum()
}

/// The separator's layer plan: encoder and decoder shapes sharing one
/// hidden width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeparatorPlan {
    pub encoder_shapes: Vec<(usize, usize)>,
    pub decoder_shapes: Vec<(usize, usize)>,
    pub hidden_width: usize,
    pub total_parameters: usize,
}

pub const ENCODER_HIDDEN_LAYERS: usize = 3;
pub const DECODER_HIDDEN_LAYERS: usize = 2;

fn separator_cost(input_dim: usize, latent_dim: usize, width: usize) -> usize {
    let enc = shape_cost(&uniform_shapes(
        input_dim,
        2 * latent_dim,
        ENCODER_HIDDEN_LAYERS,
        width,
    ));
    let dec = shape_cost(&uniform_shapes(
        latent_dim,
        input_dim,
        DECODER_HIDDEN_LAYERS,
        width,
    ));
    enc + 2 * dec
}

/// Solve the uniform hidden width so the three-network total lands within
/// +-5% of the budget. Deterministic in its inputs.
pub fn build_to_budget(input_dim: usize, latent_dim: usize, budget: usize) -> Result<SeparatorPlan> {
    if input_dim == 0 || latent_dim == 0 {
        return Err(Error::parameter("dimensions must be positive"));
    }
    let minimum = separator_cost(input_dim, latent_dim, 1);
    if budget < minimum {
        return Err(Error::Planning(format!(
            "budget {budget} below the minimum {minimum} for input {input_dim}, latent {latent_dim}"
        )));
    }
    // Cost is monotone increasing in the width; binary search the
    // smallest width meeting the budget, then pick the closer neighbor.
    let mut lo = 1usize;
    let mut hi = 1usize;
    while separator_cost(input_dim, latent_dim, hi) < budget {
        hi *= 2;
    }
    while lo < hi {
        let mid = (lo + hi) / 2;
        if separator_cost(input_dim, latent_dim, mid) < budget {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    let above = lo;
    let below = lo.saturating_sub(1).max(1);
    let cost_above = separator_cost(input_dim, latent_dim, above);
    let cost_below = separator_cost(input_dim, latent_dim, below);
    let width = if budget.abs_diff(cost_below) <= budget.abs_diff(cost_above) {
        below
    } else {
        above
    };
    let total = separator_cost(input_dim, latent_dim, width);
    let lo_band = (0.95 * budget as f64) as usize;
    let hi_band = (1.05 * budget as f64) as usize;
    if total < lo_band || total > hi_band {
        return Err(Error::Planning(format!(
            "closest width {width} gives {total} parameters, outside 5% of {budget}"
        )));
    }
    Ok(SeparatorPlan {
        encoder_shapes: uniform_shapes(input_dim, 2 * latent_dim, ENCODER_HIDDEN_LAYERS, width),
        decoder_shapes: uniform_shapes(latent_dim, input_dim, DECODER_HIDDEN_LAYERS, width),
        hidden_width: width,
        total_parameters: total,
    })
}

/// Instantiate the plan with seeded weights; rectifier hidden layers,
/// identity outputs.
pub fn build_separator(
    plan: &SeparatorPlan,
    input_dim: usize,
    latent_dim: usize,
    seed: u64,
) -> SeparatorModel {
    let enc_acts: Vec<Activation> = (0..plan.encoder_shapes.len())
        .map(|l| {
            if l + 1 == plan.encoder_shapes.len() {
                Activation::Identity
            } else {
                Activation::Relu
            }
        })
        .collect();
    let dec_acts: Vec<Activation> = (0..plan.decoder_shapes.len())
        .map(|l| {
            if l + 1 == plan.decoder_shapes.len() {
                Activation::Identity
            } else {
                Activation::Relu
            }
        })
        .collect();
    SeparatorModel {
        encoder: DenseNetwork::seeded(plan.encoder_shapes.clone(), enc_acts, seed),
        decoder_1: DenseNetwork::seeded(plan.decoder_shapes.clone(), dec_acts.clone(), seed ^ 0x9e3779b97f4a7c15),
        decoder_2: DenseNetwork::seeded(plan.decoder_shapes.clone(), dec_acts, seed ^ 0x517cc1b727220a95),
        latent_dim,
        input_dim,
        standardization: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_separates_to_zeros() {
        let plan = build_to_budget(8, 4, 2000).unwrap();
        let mut model = build_separator(&plan, 8, 4, 1);
        for net in [&mut model.encoder, &mut model.decoder_1, &mut model.decoder_2] {
            let n = net.parameter_count();
            net.set_params(vec![0.0; n]);
        }
        let (a, b) = model.separate(&vec![1.0; 8]).unwrap();
        assert!(a.iter().all(|&v| v == 0.0));
        assert!(b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn swapping_decoders_and_latent_halves_swaps_outputs() {
        let plan = build_to_budget(8, 4, 2000).unwrap();
        let model = build_separator(&plan, 8, 4, 42);
        let y = vec![0.3; 8];
        let (a, b) = model.separate(&y).unwrap();
        // Manually route each latent half through the opposite decoder.
        let z = model.encoder.forward(&y).unwrap();
        let (z1, z2) = z.split_at(4);
        let swapped_a = model.decoder_2.forward(z2).unwrap();
        let swapped_b = model.decoder_1.forward(z1).unwrap();
        assert_eq!(a, swapped_b);
        assert_eq!(b, swapped_a);
    }

    #[test]
    fn budget_solver_lands_in_band() {
        for &(d, budget) in &[(392usize, 1_000_000usize), (392, 400_000), (196, 1_000_000)] {
            let plan = build_to_budget(d, 64, budget).unwrap();
            let total = plan.total_parameters as f64;
            assert!(total >= 0.95 * budget as f64 && total <= 1.05 * budget as f64);
        }
    }

    #[test]
    fn budget_solver_matches_hand_computed_plan() {
        // input 8, latent 4, width 10:
        // encoder 8->10->10->10->8: (80+10)+(100+10)+(100+10)+(80+8) = 398
        // decoder 4->10->10->8: (40+10)+(100+10)+(80+8) = 248
        // total = 398 + 2*248 = 894
        assert_eq!(separator_cost(8, 4, 10), 894);
        let plan = build_to_budget(8, 4, 894).unwrap();
        assert_eq!(plan.hidden_width, 10);
        assert_eq!(plan.total_parameters, 894);
    }

    #[test]
    fn infeasible_budget_is_rejected() {
        assert!(matches!(build_to_budget(392, 64, 10), Err(Error::Planning(_))));
    }

    #[test]
    fn standardization_whitens_per_dimension() {
        let samples = vec![vec![1.0, 10.0], vec![3.0, 20.0], vec![5.0, 30.0]];
        let stats = Standardization::fit(samples.iter().cloned(), 2);
        assert_eq!(stats.mean, vec![3.0, 20.0]);
        let z = stats.apply(&[3.0, 20.0]);
        assert!(z.iter().all(|&v| v.abs() <= 1e-12));
    }
}
