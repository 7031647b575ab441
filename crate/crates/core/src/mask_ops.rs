//! Fusion of per-frame segmentations and overlap/distance metrics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::BinaryMask;

/// How per-frame masks are combined into one representative mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionStrategy {
    /// Intersection: voxels present in every mask.
    Olp,
    /// Strict majority: voxels present in more than half of the masks.
    Avg,
    /// Union: voxels present in any mask.
    Lc,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 3] = [FusionStrategy::Avg, FusionStrategy::Olp, FusionStrategy::Lc];

    pub fn name(&self) -> &'static str {
        match self {
            FusionStrategy::Olp => "olp",
            FusionStrategy::Avg => "avg",
            FusionStrategy::Lc => "lc",
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "olp" => Ok(FusionStrategy::Olp),
            "avg" => Ok(FusionStrategy::Avg),
            "lc" => Ok(FusionStrategy::Lc),
            _ => Err(Error::Argument(format!(
                "unknown fusion strategy `{s}` (expected olp, avg or lc)"
            ))),
        }
    }
}

pub fn fuse(masks: &[BinaryMask], strategy: FusionStrategy) -> Result<BinaryMask> {
    let first = masks
        .first()
        .ok_or_else(|| Error::Argument("fusion needs at least one mask".into()))?;
    for (k, m) in masks.iter().enumerate().skip(1) {
        first.grid().ensure_matches(&m.grid(), &format!("mask {k}"))?;
    }
    let n = masks.len();
    let data = (0..first.dims().len())
        .map(|i| {
            let votes = masks.iter().filter(|m| m.data()[i]).count();
            match strategy {
                FusionStrategy::Olp => votes == n,
                // votes / n > 1/2 without floating point
                FusionStrategy::Avg => 2 * votes > n,
                FusionStrategy::Lc => votes > 0,
            }
        })
        .collect();
    Ok(first.with_data(data))
}

/// Dice similarity `2|A∩B| / (|A| + |B|)`; two empty masks score 1.0.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.grid().ensure_matches(&b.grid(), "dice")?;
    let (mut both, mut total) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        both += usize::from(x && y);
        total += usize::from(x) + usize::from(y);
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / total as f64)
}

/// Symmetric Hausdorff distance in millimetres between voxel centres.
pub fn hausdorff(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.grid().ensure_matches(&b.grid(), "hausdorff")?;
    if a.is_empty() {
        return Err(Error::UndefinedDistance("first"));
    }
    if b.is_empty() {
        return Err(Error::UndefinedDistance("second"));
    }
    Ok(directed_sq(a, b).max(directed_sq(b, a)).sqrt())
}

/// Squared directed distance `max_{x∈from} min_{y∈to} |x - y|²`.
///
/// Voxels of `from` that lie inside `to` contribute zero. For the rest, the
/// nearest voxel of `to` always has a 6-connected background neighbour (a step
/// toward the query point strictly shortens the distance), so only the
/// boundary of `to` is searched.
fn directed_sq(from: &BinaryMask, to: &BinaryMask) -> f64 {
    let dims = from.dims();
    let sp = from.spacing();
    let targets: Vec<(i64, i64, i64)> = to
        .boundary_indices()
        .into_iter()
        .map(|i| {
            let (z, y, x) = dims.coords(i);
            (z as i64, y as i64, x as i64)
        })
        .collect();
    let outside: Vec<usize> = from.indices().filter(|&i| !to.data()[i]).collect();

    let nearest = |&i: &usize| -> f64 {
        let (z, y, x) = dims.coords(i);
        let (z, y, x) = (z as i64, y as i64, x as i64);
        targets
            .iter()
            .map(|&(tz, ty, tx)| {
                let dz = (z - tz) as f64 * sp.dz;
                let dy = (y - ty) as f64 * sp.dy;
                let dx = (x - tx) as f64 * sp.dx;
                dz * dz + dy * dy + dx * dx
            })
            .fold(f64::INFINITY, f64::min)
    };

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        outside.par_iter().map(nearest).reduce(|| 0.0, f64::max)
    }
    #[cfg(not(feature = "parallel"))]
    {
        outside.iter().map(nearest).fold(0.0, f64::max)
    }
}
