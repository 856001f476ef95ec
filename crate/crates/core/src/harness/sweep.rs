use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::runner::Simulation;
use crate::bv::EnsembleView;
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::nn::{ArchSpec, Layer, LossKind, ModelState};

/// Bias and variance of one trained ensemble.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub seed: u64,
    pub width: usize,
    pub param_count: usize,
    pub mean_bias: f64,
    pub mean_variance: f64,
}

/// Per-width medians over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub width: usize,
    pub param_count: usize,
    pub median_bias: f64,
    pub median_variance: f64,
}

/// Mean cross-entropy bias and variance of `members` over `probe`.
pub fn ensemble_bv(members: &[ModelState], probe: &LabeledSet) -> Result<(f64, f64)> {
    if probe.is_empty() {
        return Err(Error::Empty("probe set"));
    }
    let e = EnsembleView::new(members)?;
    let per: Vec<(f64, f64)> = (0..probe.len())
        .into_par_iter()
        .map(|i| {
            let x = &probe.features()[i];
            Ok((
                e.bias(x, &probe.target(i), LossKind::CrossEntropy)?,
                e.variance(x, LossKind::CrossEntropy)?,
            ))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    Ok((per.iter().map(|p| p.0).sum::<f64>() / n, per.iter().map(|p| p.1).sum::<f64>() / n))
}

/// One-hidden-layer MLP of the given width over `input_shape`.
pub fn mlp_of_width(input_shape: &[usize], classes: usize, width: usize) -> ArchSpec {
    let inputs = input_shape.iter().product();
    let mut arch = ArchSpec::mlp(inputs, &[width], classes);
    if input_shape.len() > 1 {
        arch.input_shape = input_shape.to_vec();
        arch.layers.insert(0, Layer::Flatten);
    }
    arch
}

/// Trains the configured protocol once per (seed, width) with a
/// one-hidden-layer MLP and measures the final round's client ensemble on
/// the test set.
pub fn bv_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let seeds = if cfg.sweep.seeds.is_empty() {
        vec![cfg.master_seed]
    } else {
        cfg.sweep.seeds.clone()
    };
    let mut rows = Vec::with_capacity(seeds.len() * cfg.sweep.widths.len());
    for &seed in &seeds {
        for &width in &cfg.sweep.widths {
            let mut variant = cfg.clone();
            variant.master_seed = seed;
            variant.model = mlp_of_width(&cfg.model.input_shape, cfg.model.class_count, width);
            let mut sim = Simulation::new(&variant)?;
            for _ in 0..variant.protocol.rounds {
                sim.step(&mut ())?;
            }
            let (mean_bias, mean_variance) = ensemble_bv(&sim.last_ensemble(), &sim.test)?;
            log::info!("seed {seed} width {width}: bias {mean_bias:.5} variance {mean_variance:.5}");
            rows.push(SweepRow {
                seed,
                width,
                param_count: variant.model.param_count(),
                mean_bias,
                mean_variance,
            });
        }
    }
    Ok(rows)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Per-width medians, one row per width in first-seen order.
pub fn bv_table(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut widths: Vec<(usize, usize)> = Vec::new();
    for r in rows {
        if !widths.iter().any(|(w, _)| *w == r.width) {
            widths.push((r.width, r.param_count));
        }
    }
    widths
        .into_iter()
        .map(|(width, param_count)| {
            let of = |f: fn(&SweepRow) -> f64| median(rows.iter().filter(|r| r.width == width).map(f).collect());
            SweepSummary {
                width,
                param_count,
                median_bias: of(|r| r.mean_bias),
                median_variance: of(|r| r.mean_variance),
            }
        })
        .collect()
}
