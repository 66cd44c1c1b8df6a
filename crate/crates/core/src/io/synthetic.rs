//! Synthetic dictionaries: a regular parameter grid pushed through a
//! forward model that is linear in the normalized parameters over a bank of
//! damped sinusoids.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::format::{DictionaryReader, DictionaryWriter, Dtype};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_ROWS: u64 = 1 << 32;

/// Stream id reserved for drawing sampled grid points.
const SAMPLING_STREAM: u64 = u64::MAX;

/// A regular grid `min, …, max` with `count` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    #[serde(default)]
    pub name: Option<String>,
    pub min: f64,
    pub max: f64,
    pub count: u64,
}

impl ParamRange {
    pub fn new(min: f64, max: f64, count: u64) -> Self {
        Self { name: None, min, max, count }
    }

    pub fn value(&self, idx: u64) -> f64 {
        if self.count <= 1 {
            self.min
        } else {
            self.min + (self.max - self.min) * idx as f64 / (self.count - 1) as f64
        }
    }

    pub fn normalized(&self, t: f64) -> f64 {
        if self.max > self.min {
            (t - self.min) / (self.max - self.min)
        } else {
            0.0
        }
    }
}

/// Recipe for a synthetic dictionary, usually read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Signal length.
    pub m: usize,
    pub params: Vec<ParamRange>,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dtype: Dtype,
    /// Draw this many grid points uniformly at random (with replacement)
    /// instead of enumerating the grid; used to make query sets.
    #[serde(default)]
    pub sample: Option<u64>,
    #[serde(default = "default_max_rows")]
    pub max_rows: u64,
}

fn default_max_rows() -> u64 {
    DEFAULT_MAX_ROWS
}

impl SyntheticSpec {
    pub fn grid(m: usize, params: Vec<ParamRange>) -> Self {
        Self { m, params, noise_sd: 0.0, seed: 0, dtype: Dtype::F32, sample: None, max_rows: DEFAULT_MAX_ROWS }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("synthetic spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidArgument("signal length must be at least 2".into()));
        }
        if self.params.is_empty() {
            return Err(Error::InvalidArgument("at least one parameter range is required".into()));
        }
        for (j, p) in self.params.iter().enumerate() {
            if p.count == 0 {
                return Err(Error::InvalidArgument(format!("parameter {j}: grid count must be at least 1")));
            }
            if !(p.min.is_finite() && p.max.is_finite()) || p.max < p.min {
                return Err(Error::InvalidArgument(format!("parameter {j}: invalid range")));
            }
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::InvalidArgument("noise_sd must be non-negative".into()));
        }
        let rows = self.rows()?;
        if rows > self.max_rows {
            return Err(Error::InvalidArgument(format!("{rows} rows exceed the cap of {}", self.max_rows)));
        }
        Ok(())
    }

    pub fn grid_size(&self) -> Result<u64> {
        self.params
            .iter()
            .try_fold(1u64, |acc, p| acc.checked_mul(p.count))
            .ok_or_else(|| Error::InvalidArgument("grid size overflows u64".into()))
    }

    /// Rows the spec produces.
    pub fn rows(&self) -> Result<u64> {
        match self.sample {
            Some(n) => Ok(n),
            None => self.grid_size(),
        }
    }

    /// Parameters of grid point `index`, last parameter varying fastest.
    pub fn grid_point(&self, mut index: u64) -> Vec<f64> {
        let mut out = vec![0.0; self.params.len()];
        for (j, p) in self.params.iter().enumerate().rev() {
            out[j] = p.value(index % p.count);
            index /= p.count;
        }
        out
    }

    /// Noiseless signal of parameter vector `t`.
    pub fn signal(&self, t: &[f64]) -> Vec<f64> {
        let basis = basis(self.m, self.params.len());
        let mut y = vec![0.0; self.m];
        for ((phi, p), tj) in basis.iter().zip(&self.params).zip(t) {
            let w = p.normalized(*tj);
            y.iter_mut().zip(phi).for_each(|(yi, f)| *yi += w * f);
        }
        y
    }
}

/// Unit-norm damped sinusoids `exp(−r_j·τ)·cos(2π·f_j·τ + 0.7·j)` on `M`
/// samples of `τ ∈ [0, 1]`.
pub fn basis(m: usize, l: usize) -> Vec<Vec<f64>> {
    (0..l)
        .map(|j| {
            let (freq, decay, phase) = (1.0 + 1.5 * j as f64, 1.0 + j as f64, 0.7 * j as f64);
            let mut phi: Vec<f64> = (0..m)
                .map(|s| {
                    let tau = s as f64 / (m - 1) as f64;
                    (-decay * tau).exp() * (2.0 * PI * freq * tau + phase).cos()
                })
                .collect();
            let norm = phi.iter().map(|v| v * v).sum::<f64>().sqrt();
            phi.iter_mut().for_each(|v| *v /= norm);
            phi
        })
        .collect()
}

/// Writes the dictionary described by `spec` to `path`, one row at a time.
pub fn generate_synthetic(spec: &SyntheticSpec, path: impl AsRef<Path>) -> Result<DictionaryReader> {
    spec.validate()?;
    let rows = spec.rows()?;
    let grid = spec.grid_size()?;
    let basis = basis(spec.m, spec.params.len());
    let mut writer = DictionaryWriter::create(path.as_ref(), rows, spec.m, spec.params.len(), spec.dtype)?;
    let mut picker = ChaCha8Rng::seed_from_u64(spec.seed);
    picker.set_stream(SAMPLING_STREAM);
    let mut y = vec![0.0; spec.m];
    for row in 0..rows {
        let index = if spec.sample.is_some() { picker.random_range(0..grid) } else { row };
        let t = spec.grid_point(index);
        y.iter_mut().for_each(|v| *v = 0.0);
        for ((phi, p), tj) in basis.iter().zip(&spec.params).zip(&t) {
            let w = p.normalized(*tj);
            y.iter_mut().zip(phi).for_each(|(yi, f)| *yi += w * f);
        }
        if spec.noise_sd > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(row);
            for v in y.iter_mut() {
                *v += spec.noise_sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
        writer.push(&y, &t)?;
    }
    writer.finish()?;
    DictionaryReader::open(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_lexicographic() {
        let spec = SyntheticSpec::grid(8, vec![ParamRange::new(0.0, 2.0, 3), ParamRange::new(10.0, 13.0, 4)]);
        assert_eq!(spec.rows().unwrap(), 12);
        assert_eq!(spec.grid_point(0), vec![0.0, 10.0]);
        assert_eq!(spec.grid_point(1), vec![0.0, 11.0]);
        assert_eq!(spec.grid_point(4), vec![1.0, 10.0]);
        assert_eq!(spec.grid_point(11), vec![2.0, 13.0]);
    }

    #[test]
    fn basis_is_unit_norm_and_independent() {
        let b = basis(32, 3);
        for phi in &b {
            assert!((phi.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let g = nalgebra::DMatrix::from_fn(3, 3, |i, j| b[i].iter().zip(&b[j]).map(|(x, y)| x * y).sum::<f64>());
        assert!(g.determinant() > 1e-3);
    }

    #[test]
    fn overflow_and_cap() {
        let mut spec = SyntheticSpec::grid(4, vec![ParamRange::new(0.0, 1.0, u64::MAX), ParamRange::new(0.0, 1.0, 3)]);
        assert!(spec.validate().is_err());
        spec.params = vec![ParamRange::new(0.0, 1.0, 100)];
        spec.max_rows = 50;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn toml_spec() {
        let spec = SyntheticSpec::from_toml(
            "m = 16\nnoise_sd = 0.01\nseed = 3\ndtype = \"f64\"\n[[params]]\nmin = 0.0\nmax = 1.0\ncount = 5\n",
        )
        .unwrap();
        assert_eq!(spec.m, 16);
        assert_eq!(spec.dtype, Dtype::F64);
        assert!(SyntheticSpec::from_toml("m = 16\nbogus = 1\n[[params]]\nmin = 0.0\nmax = 1.0\ncount = 5\n").is_err());
    }
}
