//! Input featurizations for the four model variants.
//!
//! - Plain / Augment: centered coordinates in generation order.
//! - Invariant: 10 quantiles of the sorted pairwise distances, radius of
//!   gyration, mean and standard deviation of point norms.
//! - Equivariant: per-point (norm, angle to the principal axis) pairs sorted
//!   by norm, followed by the Invariant block. The principal axis rotates with
//!   the cloud, so the angles are invariant at readout.

use std::cmp::Ordering;

use super::geometry::{centered, distance, norm, radius_of_gyration, Point};
use super::Variant;

pub const DISTANCE_QUANTILES: usize = 10;
pub const INVARIANT_DIM: usize = DISTANCE_QUANTILES + 3;

pub fn input_dim(variant: Variant, points_per_cloud: usize) -> usize {
    match variant {
        Variant::Plain | Variant::Augment => 2 * points_per_cloud,
        Variant::Invariant => INVARIANT_DIM,
        Variant::Equivariant => 2 * points_per_cloud + INVARIANT_DIM,
    }
}

pub fn featurize(variant: Variant, cloud: &[Point]) -> Vec<f64> {
    match variant {
        Variant::Plain | Variant::Augment => centered(cloud).into_iter().flatten().collect(),
        Variant::Invariant => invariant_block(cloud),
        Variant::Equivariant => {
            let mut out = principal_frame_pairs(cloud);
            out.extend(invariant_block(cloud));
            out
        }
    }
}

/// Linear-interpolated quantile of sorted data at level `t` in [0, 1].
fn quantile_sorted(sorted: &[f64], t: f64) -> f64 {
    match sorted.len() {
        0 => 0.0,
        1 => sorted[0],
        n => {
            let pos = t * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = pos - lo as f64;
            sorted[lo] + frac * (sorted[hi] - sorted[lo])
        }
    }
}

pub fn invariant_block(cloud: &[Point]) -> Vec<f64> {
    let mut dists = Vec::with_capacity(cloud.len() * cloud.len().saturating_sub(1) / 2);
    for i in 0..cloud.len() {
        for j in i + 1..cloud.len() {
            dists.push(distance(cloud[i], cloud[j]));
        }
    }
    dists.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = (0..DISTANCE_QUANTILES)
        .map(|m| quantile_sorted(&dists, m as f64 / (DISTANCE_QUANTILES - 1) as f64))
        .collect();
    let norms: Vec<f64> = centered(cloud).into_iter().map(norm).collect();
    let n = norms.len().max(1) as f64;
    let mean = norms.iter().sum::<f64>() / n;
    let var = norms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    out.push(radius_of_gyration(cloud));
    out.push(mean);
    out.push(var.sqrt());
    out
}

/// Unit principal axis of the centered cloud, or `None` when the second
/// moment is isotropic (including the all-points-identical case).
pub fn principal_axis(centered: &[Point]) -> Option<Point> {
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in centered {
        sxx += p[0] * p[0];
        syy += p[1] * p[1];
        sxy += p[0] * p[1];
    }
    let trace = sxx + syy;
    let gap = (sxx - syy).hypot(2.0 * sxy);
    if trace <= 0.0 || gap <= 1e-12 * trace {
        return None;
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    Some([theta.cos(), theta.sin()])
}

fn principal_frame_pairs(cloud: &[Point]) -> Vec<f64> {
    let q = centered(cloud);
    // Degenerate clouds fall back to the x axis.
    let mut axis = principal_axis(&q).unwrap_or([1.0, 0.0]);
    let anchor = q
        .iter()
        .copied()
        .enumerate()
        .max_by(|(i, a), (j, b)| norm(*a).total_cmp(&norm(*b)).then(j.cmp(i)))
        .map(|(_, p)| p);
    if let Some(p) = anchor {
        if p[0] * axis[0] + p[1] * axis[1] < 0.0 {
            axis = [-axis[0], -axis[1]];
        }
    }
    let mut pairs: Vec<(f64, f64)> = q
        .iter()
        .map(|p| {
            let along = p[0] * axis[0] + p[1] * axis[1];
            let across = axis[0] * p[1] - axis[1] * p[0];
            (norm(*p), across.atan2(along))
        })
        .collect();
    pairs.sort_by(|a, b| match a.0.total_cmp(&b.0) {
        Ordering::Equal => a.1.total_cmp(&b.1),
        o => o,
    });
    pairs.into_iter().flat_map(|(r, a)| [r, a]).collect()
}
