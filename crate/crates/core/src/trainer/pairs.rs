use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenegen::DatasetSample;

/// How input views are grouped into pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairPolicy {
    /// Consecutive inputs in rig order.
    Adjacent,
    /// The pairs declared by the sample.
    GridNeighbors,
    /// The `k` candidate pairs whose midpoint is closest to the target
    /// centre; candidates are the declared pairs, or all pairs if none are
    /// declared.
    NearestK(usize),
}

impl Default for PairPolicy {
    fn default() -> Self {
        PairPolicy::NearestK(4)
    }
}

impl FromStr for PairPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adjacent" => Ok(PairPolicy::Adjacent),
            "grid" | "grid_neighbors" => Ok(PairPolicy::GridNeighbors),
            "nearest" => Ok(PairPolicy::default()),
            _ => match s.strip_prefix("nearest:").map(str::parse::<usize>) {
                Some(Ok(k)) if k > 0 => Ok(PairPolicy::NearestK(k)),
                _ => Err(Error::Config(format!(
                    "unknown pair policy `{s}` (adjacent, grid, nearest:K)"
                ))),
            },
        }
    }
}

impl fmt::Display for PairPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PairPolicy::Adjacent => write!(f, "adjacent"),
            PairPolicy::GridNeighbors => write!(f, "grid"),
            PairPolicy::NearestK(k) => write!(f, "nearest:{k}"),
        }
    }
}

/// Input-index pairs for `sample` under `policy`.
pub fn build_pairs(sample: &DatasetSample, policy: PairPolicy) -> Result<Vec<(usize, usize)>> {
    let n = sample.inputs.len();
    if n < 2 {
        return Err(Error::Config(format!("pairing needs at least 2 inputs, sample has {n}")));
    }
    match policy {
        PairPolicy::Adjacent => Ok((0..n - 1).map(|i| (i, i + 1)).collect()),
        PairPolicy::GridNeighbors => {
            if sample.edges.is_empty() {
                return Err(Error::Config("sample declares no neighbour pairs".into()));
            }
            Ok(sample.edges.clone())
        }
        PairPolicy::NearestK(k) => {
            let candidates: Vec<(usize, usize)> = if sample.edges.is_empty() {
                (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect()
            } else {
                sample.edges.clone()
            };
            let t = sample.target.camera.center();
            let mut scored: Vec<(f64, (usize, usize))> = candidates
                .into_iter()
                .map(|(a, b)| {
                    let mid = (sample.inputs[a].camera.center() + sample.inputs[b].camera.center()) / 2.0;
                    ((mid - t).norm(), (a, b))
                })
                .collect();
            scored.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            Ok(scored.into_iter().take(k).map(|(_, p)| p).collect())
        }
    }
}
