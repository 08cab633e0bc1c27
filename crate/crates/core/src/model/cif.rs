//! Firing plans for the continuous integrate-and-fire predictor.
//!
//! Token `l` integrates the slice `[lo_l, hi_l)` of cumulative frame weight.
//! In training the weights are first rescaled to sum to `target_len ·
//! threshold`, so exactly `target_len` tokens come out. At inference every
//! full threshold crossing fires, and the leftover fires one more token when
//! it reaches `tail · threshold`.

use crate::numerics::FireInterval;

/// Slack on threshold comparisons, so an accumulator that lands on the
/// threshold up to rounding still fires.
pub const FIRE_EPS: f64 = 1e-9;

pub fn training_intervals(target_len: usize, threshold: f64) -> Vec<FireInterval> {
    (0..target_len)
        .map(|l| FireInterval {
            lo: l as f64 * threshold,
            hi: if l + 1 == target_len {
                f64::INFINITY
            } else {
                (l + 1) as f64 * threshold
            },
        })
        .collect()
}

pub fn inference_intervals(weights: &[f64], threshold: f64, tail: f64) -> Vec<FireInterval> {
    let total: f64 = weights.iter().sum();
    let full = ((total + FIRE_EPS) / threshold).floor().max(0.0) as usize;
    let mut out: Vec<FireInterval> = (0..full)
        .map(|l| FireInterval {
            lo: l as f64 * threshold,
            hi: (l + 1) as f64 * threshold,
        })
        .collect();
    let rest = total - full as f64 * threshold;
    if rest + FIRE_EPS >= tail * threshold && rest > 0.0 {
        out.push(FireInterval {
            lo: full as f64 * threshold,
            hi: f64::INFINITY,
        });
    }
    out
}

/// Frame index at which each token fires (the last frame for the tail).
pub fn fire_frames(weights: &[f64], intervals: &[FireInterval]) -> Vec<usize> {
    let mut cum = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cum.push(acc);
    }
    let last = weights.len().saturating_sub(1);
    intervals
        .iter()
        .map(|iv| {
            if iv.hi.is_infinite() {
                last
            } else {
                cum.iter().position(|&c| c + FIRE_EPS >= iv.hi).unwrap_or(last)
            }
        })
        .collect()
}
