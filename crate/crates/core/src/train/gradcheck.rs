//! Central finite-difference check of the analytic loss gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{item_loss_and_grads, Result};
use crate::density::{density_loss, make_ground_truth, AnnotationSet};
use crate::model::{forward, param_group, ModelConfig, ModelParams};
use crate::tensor::Tensor;

/// Denominator floor for the relative error of near-zero gradients.
pub const REL_FLOOR: f64 = 1e-7;

/// Relative gap between one-sided slopes that marks a kink.
pub const KINK_RATIO: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub group: String,
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckEntry {
    pub fn rel_error(&self) -> f64 {
        (self.analytic - self.numeric).abs()
            / self.analytic.abs().max(self.numeric.abs()).max(REL_FLOOR)
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    /// Candidates passed over because a kink lay within the step.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(GradCheckEntry::rel_error).fold(0.0, f64::max)
    }

    /// Worst entry per group, in parameter order.
    pub fn by_group(&self) -> Vec<&GradCheckEntry> {
        let mut out: Vec<&GradCheckEntry> = Vec::new();
        for e in &self.entries {
            match out.iter_mut().find(|w| w.group == e.group) {
                Some(w) if e.rel_error() > w.rel_error() => *w = e,
                Some(_) => {}
                None => out.push(e),
            }
        }
        out
    }
}

/// Checks the first tensor of every parameter group on a random video of
/// `len` frames, comparing the `samples` largest-gradient entries of each.
pub fn grad_check(
    cfg: &ModelConfig,
    len: usize,
    seed: u64,
    samples: usize,
    h: f64,
) -> Result<GradCheckReport> {
    let params = ModelParams::init(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let x = Tensor::new(
        vec![len, cfg.d0],
        (0..len * cfg.d0).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .map_err(crate::model::ModelError::from)?;
    let mut intervals = Vec::new();
    let mut s = rng.random_range(0..3.min(len));
    while s < len {
        let e = (s + rng.random_range(2..8)).min(len - 1);
        intervals.push([s, e]);
        s = e + 1 + rng.random_range(0..3);
    }
    let gt = make_ground_truth(&AnnotationSet::new(intervals), len)?;

    let (_, grads) = item_loss_and_grads(&params, cfg, &x, &gt, None, None)?;
    let loss_of = |p: &ModelParams| -> Result<f64> {
        let d = forward(&x, p, cfg, None)?;
        Ok(density_loss(&d, &gt, None)?)
    };

    let base = loss_of(&params)?;
    let mut entries = Vec::new();
    let mut skipped = 0;
    let mut seen = Vec::<String>::new();
    for ((name, _), g) in params.iter().zip(&grads) {
        let group = param_group(name);
        if seen.contains(&group) {
            continue;
        }
        seen.push(group.clone());
        let mut order: Vec<usize> = (0..g.len()).collect();
        order.sort_by(|&a, &b| g.data()[b].abs().total_cmp(&g.data()[a].abs()));
        let mut taken = 0;
        for i in order {
            if taken == samples {
                break;
            }
            let eval_at = |delta: f64| -> Result<f64> {
                let mut q = params.clone();
                q.get_mut(name).expect("own name").data_mut()[i] += delta;
                loss_of(&q)
            };
            let (lp, lm) = (eval_at(h)?, eval_at(-h)?);
            let (up, down) = ((lp - base) / h, (base - lm) / h);
            // One-sided slopes that disagree mean a ReLU kink lies within
            // the step, where central differences are meaningless.
            if (up - down).abs() > KINK_RATIO * up.abs().max(down.abs()) {
                skipped += 1;
                continue;
            }
            taken += 1;
            entries.push(GradCheckEntry {
                group: group.clone(),
                tensor: name.to_string(),
                index: i,
                analytic: g.data()[i],
                numeric: (lp - lm) / (2.0 * h),
            });
        }
    }
    Ok(GradCheckReport { entries, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_model_passes() {
        let cfg = ModelConfig {
            d0: 4,
            d_model: 8,
            num_blocks: 2,
            heads: 2,
            decoder_heads: 2,
            conv2d_out_channels: 3,
            ffn_dim: 8,
            max_len: 32,
            ..ModelConfig::default()
        };
        let r = grad_check(&cfg, 12, 3, 4, 1e-5).unwrap();
        let groups = ModelParams::init(&cfg, 0).unwrap().groups().len();
        assert_eq!(r.by_group().len(), groups);
        assert!(r.max_rel_error() < 1e-4, "{:?}", r.by_group());
    }
}
