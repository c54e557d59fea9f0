use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, HiddenLabels, Sample};
use crate::error::{PdaError, Result};
use crate::numerics::norm;

/// Radius of the sphere that holds the class means.
pub const MEAN_RADIUS: f64 = 5.0;

fn default_std() -> f64 {
    1.0
}

/// Gaussian-cluster benchmark with a rotated and translated target domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub k_s: usize,
    pub k_t: usize,
    pub d_x: usize,
    pub source_per_class: usize,
    pub target_per_class: usize,
    #[serde(default = "default_std")]
    pub cluster_std: f64,
    /// Rotation of the first two coordinates, radians in `[0, 2pi)`.
    #[serde(default)]
    pub rotation_angle: f64,
    /// Added after the rotation. Empty means no translation.
    #[serde(default)]
    pub translation: Vec<f64>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k_s == 0 || self.k_t == 0 || self.k_t > self.k_s {
            return Err(PdaError::Config(format!(
                "need 1 <= k_t <= k_s, got k_t={} k_s={}",
                self.k_t, self.k_s
            )));
        }
        if self.d_x < 2 {
            return Err(PdaError::Config("d_x must be at least 2".into()));
        }
        if !(self.cluster_std > 0.0 && self.cluster_std.is_finite()) {
            return Err(PdaError::Config("cluster_std must be positive".into()));
        }
        if !(0.0..std::f64::consts::TAU).contains(&self.rotation_angle) {
            return Err(PdaError::Config(
                "rotation_angle must lie in [0, 2pi)".into(),
            ));
        }
        if !self.translation.is_empty() && self.translation.len() != self.d_x {
            return Err(PdaError::Config(format!(
                "translation has {} entries, expected {}",
                self.translation.len(),
                self.d_x
            )));
        }
        if self.translation.iter().any(|t| !t.is_finite()) {
            return Err(PdaError::Config("translation must be finite".into()));
        }
        Ok(())
    }
}

/// Rounds to the 9 significant digits used by the feature file format.
pub fn quantize(x: f64) -> f64 {
    format!("{x:.8e}").parse().expect("formatted float parses")
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Draws `(source, target)`. Target classes are `0..k_t`.
///
/// Features are quantized to file precision so that writing and re-reading a
/// generated set is lossless.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let means: Vec<Vec<f64>> = (0..spec.k_s)
        .map(|_| loop {
            let dir = gaussian(&mut rng, spec.d_x);
            let n = norm(&dir);
            if n > 1e-6 {
                break dir.iter().map(|x| MEAN_RADIUS * x / n).collect();
            }
        })
        .collect();

    let mut source = Vec::with_capacity(spec.k_s * spec.source_per_class);
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..spec.source_per_class {
            let noise = gaussian(&mut rng, spec.d_x);
            let features = mean
                .iter()
                .zip(&noise)
                .map(|(m, e)| quantize(m + spec.cluster_std * e))
                .collect();
            source.push(Sample {
                features,
                label: Some(class),
            });
        }
    }

    let (sin, cos) = spec.rotation_angle.sin_cos();
    let mut target = Vec::with_capacity(spec.k_t * spec.target_per_class);
    let mut hidden = Vec::with_capacity(target.capacity());
    for (class, mean) in means.iter().enumerate().take(spec.k_t) {
        for _ in 0..spec.target_per_class {
            let noise = gaussian(&mut rng, spec.d_x);
            let mut x: Vec<f64> = mean
                .iter()
                .zip(&noise)
                .map(|(m, e)| m + spec.cluster_std * e)
                .collect();
            let (a, b) = (x[0], x[1]);
            x[0] = cos * a - sin * b;
            x[1] = sin * a + cos * b;
            for (xi, t) in x.iter_mut().zip(&spec.translation) {
                *xi += t;
            }
            target.push(x.into_iter().map(quantize).collect());
            hidden.push(class);
        }
    }

    let source = Dataset::source(source, spec.d_x, spec.k_s)?;
    let target = Dataset::target(target, spec.d_x, spec.k_s, Some(HiddenLabels::new(hidden)))?;
    Ok((source, target))
}
