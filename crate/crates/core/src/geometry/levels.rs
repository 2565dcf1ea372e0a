use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How depth levels are distributed between the near and far bounds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    /// Uniform in `1/depth` (uniform disparity).
    #[default]
    InverseDepth,
    Linear,
}

impl std::str::FromStr for Spacing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inverse" | "inverse_depth" | "inverse-depth" => Ok(Spacing::InverseDepth),
            "linear" => Ok(Spacing::Linear),
            other => Err(Error::Config(format!("unknown depth spacing `{other}`"))),
        }
    }
}

/// Strictly increasing list of sweep depths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthLevels {
    values: Vec<f64>,
}

impl DepthLevels {
    pub fn new(dmin: f64, dmax: f64, count: usize, spacing: Spacing) -> Result<Self> {
        if !(dmin > 0.0 && dmin < dmax && dmax.is_finite()) {
            return Err(Error::InvalidRange { dmin, dmax });
        }
        if count < 2 {
            return Err(Error::TooFewLevels(count));
        }
        let last = (count - 1) as f64;
        let mut values: Vec<f64> = (0..count)
            .map(|k| {
                let k = k as f64;
                match spacing {
                    Spacing::InverseDepth => {
                        1.0 / (1.0 / dmin + k * (1.0 / dmax - 1.0 / dmin) / last)
                    }
                    Spacing::Linear => dmin + k * (dmax - dmin) / last,
                }
            })
            .collect();
        values[0] = dmin;
        values[count - 1] = dmax;
        DepthLevels::from_values(values)
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::TooFewLevels(values.len()));
        }
        if values[0] <= 0.0 || values.windows(2).any(|w| !(w[1] > w[0])) || !values[values.len() - 1].is_finite() {
            return Err(Error::InvalidRange {
                dmin: values[0],
                dmax: values[values.len() - 1],
            });
        }
        Ok(DepthLevels { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dmin(&self) -> f64 {
        self.values[0]
    }

    pub fn dmax(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Index of the level closest to `depth` in inverse depth.
    pub fn nearest_index(&self, depth: f64) -> usize {
        let inv = 1.0 / depth;
        let mut best = 0;
        let mut best_err = f64::INFINITY;
        for (i, v) in self.values.iter().enumerate() {
            let err = (1.0 / v - inv).abs();
            if err < best_err {
                best = i;
                best_err = err;
            }
        }
        best
    }
}

impl std::ops::Index<usize> for DepthLevels {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_depth_endpoints() {
        let l = DepthLevels::new(1.0, 100.0, 2, Spacing::InverseDepth).unwrap();
        assert_eq!(l.values(), &[1.0, 100.0]);
    }

    #[test]
    fn inverse_depth_midpoint() {
        // mid inverse depth = (1 + 0.01) / 2 = 0.505
        let l = DepthLevels::new(1.0, 100.0, 3, Spacing::InverseDepth).unwrap();
        assert_eq!(l[0], 1.0);
        assert!((l[1] - 1.0 / 0.505).abs() < 1e-12);
        assert!((l[1] - 1.980_198_019_801_98).abs() < 1e-12);
        assert_eq!(l[2], 100.0);
    }

    #[test]
    fn linear_spacing() {
        let l = DepthLevels::new(2.0, 10.0, 5, Spacing::Linear).unwrap();
        assert_eq!(l.values(), &[2.0, 4.0, 6.0, 8.0, 10.0]);
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(matches!(
            DepthLevels::new(5.0, 5.0, 4, Spacing::Linear),
            Err(Error::InvalidRange { .. })
        ));
        assert!(matches!(
            DepthLevels::new(6.0, 5.0, 4, Spacing::Linear),
            Err(Error::InvalidRange { .. })
        ));
        assert!(matches!(
            DepthLevels::new(0.0, 5.0, 4, Spacing::Linear),
            Err(Error::InvalidRange { .. })
        ));
        assert!(matches!(
            DepthLevels::new(1.0, 5.0, 1, Spacing::Linear),
            Err(Error::TooFewLevels(1))
        ));
    }

    #[test]
    fn levels_are_strictly_increasing() {
        for d in [2usize, 3, 16, 64] {
            for s in [Spacing::InverseDepth, Spacing::Linear] {
                let l = DepthLevels::new(0.7, 33.0, d, s).unwrap();
                assert!(l.values().windows(2).all(|w| w[1] > w[0]));
                assert_eq!(l.dmin(), 0.7);
                assert_eq!(l.dmax(), 33.0);
            }
        }
    }
}
