//! Run configuration: a flat dotted-key text file plus command overrides.
//!
//! The whole experiment is determined by one `RunConfig`: grid and
//! potential parameters, scale-grid policy, Monte Carlo budgets, replica
//! count, root seed, mesh ladder, and output directory.  Configs parse
//! from TOML with dotted keys (`scale.ratio = 1.3`), round-trip through
//! serialisation losslessly, and validate every constraint of the
//! underlying modules at parse time so a bad run dies before it starts.
//! Individual keys can be overridden from the command line with
//! `key.path=value` strings.

use crate::covariance::{CovarianceSpec, ScaleGrid};
use crate::potential::PotentialParams;
use crate::torus::TorusGrid;
use crate::{LvError, Result};

use serde::{Deserialize, Serialize};

/// Scale-grid policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScaleConfig {
    /// Smallest knot; `None` resolves to `min(eps^2, 0.01)`, small enough
    /// that the drift increment frozen below it is negligible.
    pub t_min: Option<f64>,
    /// Geometric knot ratio in `(1, 2]`.
    pub ratio: f64,
    /// Knots stop once `theta_t = e^{-m^2 t / 2}` falls below this.
    pub theta_cutoff: f64,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        ScaleConfig { t_min: None, ratio: 1.3, theta_cutoff: 0.05 }
    }
}

/// Monte Carlo budget of the drift estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftConfig {
    /// Inner samples per drift estimate.
    pub m_samples: usize,
}

impl Default for DriftConfig {
    fn default() -> Self {
        DriftConfig { m_samples: 256 }
    }
}

/// Picard iteration policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardConfig {
    /// Hard cap on sweeps.
    pub max_iterations: usize,
    /// Convergence threshold on the sup change between
    /// common-noise sweeps; `None` calibrates it from the measured
    /// drift noise, sweep by sweep.
    pub tolerance: Option<f64>,
    /// Under-relaxation factor in `(0, 1]`; `1` is the pure Picard update.
    pub damping: f64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        PicardConfig { max_iterations: 12, tolerance: None, damping: 0.5 }
    }
}

/// Complete description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Grid side `n = 1/eps`, a power of two.
    pub n: usize,
    /// Mass `m >= 1` of the free field.
    pub mass: f64,
    /// Coupling strength `beta` in `(0, 8 pi)`.
    pub beta: f64,
    /// Coupling constant `lambda >= 0`.
    pub lambda: f64,
    /// Scale-grid policy.
    pub scale: ScaleConfig,
    /// Drift estimator budget.
    pub drift: DriftConfig,
    /// Picard iteration policy.
    pub picard: PicardConfig,
    /// Independent replicas per ensemble.
    pub replicas: usize,
    /// Root seed all keyed streams derive from.
    pub seed: u64,
    /// Grid sides of the shared-mode mesh ladder.
    pub eps_ladder: Vec<usize>,
    /// Output directory for data files and the manifest.
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n: 16,
            mass: 1.0,
            beta: 2.0 * std::f64::consts::PI,
            lambda: 1.0,
            scale: ScaleConfig::default(),
            drift: DriftConfig::default(),
            picard: PicardConfig::default(),
            replicas: 64,
            seed: 1,
            eps_ladder: vec![16, 32, 64],
            out_dir: "out".into(),
        }
    }
}

impl RunConfig {
    /// Parses and validates a TOML config string.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| LvError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads, parses, and validates a config file.
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LvError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Canonical serialisation; parsing it back yields an equal config.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Applies one `key.path=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, value) = spec.split_once('=').ok_or_else(|| {
            LvError::Config(format!("override '{spec}' is not of the form key=value"))
        })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(LvError::Config(format!("override '{spec}' has an empty key")));
        }
        // Parse the override as a one-line TOML document; retry with the
        // value quoted so bare strings work for string-typed keys.
        let parsed: toml::Value = format!("{key} = {value}")
            .parse()
            .or_else(|_| format!("{key} = \"{value}\"").parse())
            .map_err(|e| LvError::Config(format!("override '{spec}': {e}")))?;
        let mut tree = toml::Value::try_from(&*self).expect("config converts to TOML");
        merge(&mut tree, &parsed);
        let next: RunConfig = tree
            .try_into()
            .map_err(|e: toml::de::Error| LvError::Config(format!("override '{spec}': {e}")))?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    /// Smallest scale knot after resolving the automatic policy.
    pub fn resolved_t_min(&self, n: usize) -> f64 {
        match self.scale.t_min {
            Some(t) => t,
            None => {
                let eps = 1.0 / n as f64;
                (eps * eps).min(0.01)
            }
        }
    }

    /// Scale grid for grid side `n` under this config.
    pub fn scale_grid(&self, n: usize) -> Result<ScaleGrid> {
        ScaleGrid::geometric(
            self.resolved_t_min(n),
            self.scale.ratio,
            self.mass,
            self.scale.theta_cutoff,
        )
    }

    /// Potential parameters under this config.
    pub fn potential(&self) -> Result<PotentialParams> {
        PotentialParams::new(self.beta, self.lambda)
    }

    /// Checks every constraint of the underlying modules.
    pub fn validate(&self) -> Result<()> {
        let named = |name: &'static str, r: Result<()>| -> Result<()> {
            r.map_err(|e| LvError::Config(format!("{name}: {e}")))
        };
        named("n", TorusGrid::new(self.n).map(|_| ()))?;
        named("beta/lambda", PotentialParams::new(self.beta, self.lambda).map(|_| ()))?;
        named(
            "mass",
            CovarianceSpec::new(TorusGrid::new(self.n)?, self.mass).map(|_| ()),
        )?;
        named("scale", self.scale_grid(self.n).map(|_| ()))?;
        for &side in &self.eps_ladder {
            named("eps_ladder", TorusGrid::new(side).map(|_| ()))?;
            named("eps_ladder scale", self.scale_grid(side).map(|_| ()))?;
        }
        if self.replicas == 0 {
            return Err(LvError::Config("replicas: must be at least 1".into()));
        }
        if self.drift.m_samples < 2 {
            return Err(LvError::Config("drift.m_samples: must be at least 2".into()));
        }
        if self.picard.max_iterations == 0 {
            return Err(LvError::Config("picard.max_iterations: must be at least 1".into()));
        }
        if let Some(tol) = self.picard.tolerance {
            if !(tol >= 0.0) || !tol.is_finite() {
                return Err(LvError::Config("picard.tolerance: must be >= 0".into()));
            }
        }
        if !(self.picard.damping > 0.0 && self.picard.damping <= 1.0) {
            return Err(LvError::Config("picard.damping: must be in (0, 1]".into()));
        }
        if self.out_dir.is_empty() {
            return Err(LvError::Config("out_dir: must not be empty".into()));
        }
        Ok(())
    }
}

/// Deep merge of `patch` into `base` for TOML tables.
fn merge(base: &mut toml::Value, patch: &toml::Value) {
    match (base, patch) {
        (toml::Value::Table(b), toml::Value::Table(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}
