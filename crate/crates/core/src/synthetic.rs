//! First-order test system `y_c(k) = 0.9 y_c(k−1) + 0.1 u(k)` driven by a
//! random step input, observed through additive uniform noise on `[−w, w]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::SeriesDataset;
use crate::error::{Error, Result};
use crate::rng::{seeded, Stream};

fn default_samples() -> usize {
    2000
}

fn default_half_width() -> f64 {
    0.05
}

fn default_hold() -> (usize, usize) {
    (5, 25)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Half-width `w` of the output noise.
    #[serde(default = "default_half_width")]
    pub noise_half_width: f64,
    /// Inclusive range of step lengths of the input signal.
    #[serde(default = "default_hold")]
    pub hold: (usize, usize),
    #[serde(default)]
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            samples: default_samples(),
            noise_half_width: default_half_width(),
            hold: default_hold(),
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// Width of the central band holding `coverage` of the noise mass.
    pub fn noise_band(&self, coverage: f64) -> f64 {
        2.0 * self.noise_half_width * coverage
    }
}

/// Returns the noisy series and the noise-free output.
pub fn generate(config: &SyntheticConfig) -> Result<(SeriesDataset, Vec<f64>)> {
    if config.samples < 2 {
        return Err(Error::InvalidArgument("synthetic series needs at least two samples".into()));
    }
    if !(config.noise_half_width.is_finite() && config.noise_half_width >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise half-width must be finite and nonnegative, got {}",
            config.noise_half_width
        )));
    }
    let (min_hold, max_hold) = config.hold;
    if min_hold == 0 || min_hold > max_hold {
        return Err(Error::InvalidArgument(format!("invalid step length range {:?}", config.hold)));
    }
    let mut rng = seeded(config.seed, Stream::Data);
    let n = config.samples;
    let mut u = Vec::with_capacity(n);
    while u.len() < n {
        let level: f64 = rng.gen_range(-1.0..1.0);
        let len = rng.gen_range(min_hold..=max_hold);
        u.extend(std::iter::repeat_n(level, len.min(n - u.len())));
    }
    let mut clean = vec![0.0; n];
    for k in 1..n {
        clean[k] = 0.9 * clean[k - 1] + 0.1 * u[k];
    }
    let w = config.noise_half_width;
    let y = clean
        .iter()
        .map(|c| if w > 0.0 { c + rng.gen_range(-w..=w) } else { *c })
        .collect();
    Ok((SeriesDataset::new("synthetic", u, y)?, clean))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_stays_inside_its_band() {
        let cfg = SyntheticConfig {
            samples: 500,
            noise_half_width: 0.1,
            ..Default::default()
        };
        let (ds, clean) = generate(&cfg).unwrap();
        assert!(ds.y.iter().zip(&clean).all(|(y, c)| (y - c).abs() <= 0.1));
        assert!((cfg.noise_band(0.9) - 0.18).abs() < 1e-15);
    }

    #[test]
    fn clean_output_follows_the_recursion() {
        let (ds, clean) = generate(&SyntheticConfig::default()).unwrap();
        for k in 1..ds.len() {
            assert_eq!(clean[k], 0.9 * clean[k - 1] + 0.1 * ds.u[k]);
        }
    }

    #[test]
    fn same_seed_same_series() {
        let cfg = SyntheticConfig {
            seed: 4,
            ..Default::default()
        };
        assert_eq!(generate(&cfg).unwrap().0.y, generate(&cfg).unwrap().0.y);
    }
}
