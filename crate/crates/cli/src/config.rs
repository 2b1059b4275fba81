//! Experiment configuration: one TOML file, validated up front and hashed
//! for provenance.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use perfolab_core::covering::{default_k_max, CoveringParams};
use perfolab_core::point_process::{DomainSpec, RadiusFamily, RadiusLaw};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DomainConfig {
    Cube { half_width: f64 },
    Ball { radius: f64 },
}

impl DomainConfig {
    pub fn spec(&self) -> DomainSpec {
        match *self {
            DomainConfig::Cube { half_width } => DomainSpec::Cube { half_width },
            DomainConfig::Ball { radius } => DomainSpec::Ball { radius },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum LawConfig {
    Pareto { min_scale: f64, alpha: f64 },
    Constant { rho0: f64 },
    Uniform { a: f64, b: f64 },
}

impl LawConfig {
    pub fn law(&self, beta: f64) -> RadiusLaw {
        let family = match *self {
            LawConfig::Pareto { min_scale, alpha } => RadiusFamily::Pareto { min_scale, alpha },
            LawConfig::Constant { rho0 } => RadiusFamily::Constant { rho0 },
            LawConfig::Uniform { a, b } => RadiusFamily::Uniform { a, b },
        };
        RadiusLaw { family, beta }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoveringConfig {
    pub delta: f64,
    pub theta: f64,
    pub lambda_max: f64,
    /// Highest size class; derived from δ and d when absent.
    pub k_max: Option<i32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    /// Uniform points for the pointwise set-algebra identities.
    pub identity_samples: usize,
    /// Points per covering ball for the cell-to-hole volume ratio.
    pub samples_per_ball: usize,
    /// Points per θ²-ball for the extension constants.
    pub extension_samples: usize,
    /// Points for the extension mean and bound checks.
    pub extension_check_samples: usize,
    /// Random smooth sources per extension run.
    pub sources: usize,
    /// Hand-built three-level clusters per extension fixture.
    pub nested_clusters: usize,
}

/// Parameters of the flow runs. Holes are drawn with their own intensity,
/// law and covering dilation, since the geometry defaults produce
/// coverings that swallow the whole box at PDE scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeConfig {
    pub lambda: f64,
    pub law: LawConfig,
    pub theta: f64,
    pub epsilons: Vec<f64>,
    /// Cells per axis for the Stokes and Brinkman solves.
    pub n: usize,
    /// Cells per axis for the divergence solves.
    pub bogovskii_n: usize,
    pub q: f64,
    /// Friction override; the strange term `6πλ⟨ρ⟩` when absent.
    pub mu: Option<f64>,
    /// Shell width `r_ε` per entry of `epsilons`; `ε/4` when absent, that is
    /// `r_n = 2^{−n−2}` for `ε = 2^{−n}`.
    pub shells: Option<Vec<f64>>,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRange {
    pub start: u64,
    /// Exclusive.
    pub end: u64,
}

impl SeedRange {
    pub fn parse(s: &str) -> Result<SeedRange> {
        let (a, b) = s.split_once("..").with_context(|| format!("seed range {s:?} is not of the form a..b"))?;
        let start = a.trim().parse().with_context(|| format!("seed range start {a:?}"))?;
        let end = b.trim().parse().with_context(|| format!("seed range end {b:?}"))?;
        if end <= start {
            bail!("seed range {s:?} is empty");
        }
        Ok(SeedRange { start, end })
    }

    pub fn seeds(&self) -> Vec<u64> {
        (self.start..self.end).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: usize,
    pub domain: DomainConfig,
    pub lambda: f64,
    pub law: LawConfig,
    pub beta: f64,
    pub epsilons: Vec<f64>,
    pub covering: CoveringConfig,
    pub budgets: BudgetConfig,
    /// Cells per axis for the grid capacity check.
    pub capacity_n: usize,
    pub pde: PdeConfig,
    pub seeds: SeedRange,
    pub out: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            d: 3,
            domain: DomainConfig::Cube { half_width: 0.5 },
            lambda: 40.0,
            law: LawConfig::Pareto { min_scale: 1.0, alpha: 2.5 },
            beta: 0.4,
            epsilons: vec![0.2, 0.1, 0.05],
            covering: CoveringConfig { delta: 0.05, theta: 1.2, lambda_max: 1e3, k_max: None },
            budgets: BudgetConfig {
                identity_samples: 100_000,
                samples_per_ball: 4_000,
                extension_samples: 4_000,
                extension_check_samples: 100_000,
                sources: 20,
                nested_clusters: 4,
            },
            capacity_n: 64,
            pde: PdeConfig {
                lambda: 1.0,
                law: LawConfig::Constant { rho0: 1.0 },
                theta: 1.1,
                epsilons: vec![0.25, 0.125],
                n: 96,
                bogovskii_n: 64,
                q: 4.0,
                mu: None,
                shells: None,
                tol: 1e-8,
                max_iter: 100_000,
            },
            seeds: SeedRange { start: 1, end: 11 },
            out: "out".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).context("parsing configuration")?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Hex SHA-256 of the canonical serialization, first 16 digits.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn covering_params(&self) -> CoveringParams {
        let c = &self.covering;
        CoveringParams {
            delta: c.delta,
            theta: c.theta,
            lambda_max: c.lambda_max,
            k_max: c.k_max.unwrap_or_else(|| default_k_max(self.d, c.delta)),
        }
    }

    pub fn pde_covering_params(&self) -> CoveringParams {
        CoveringParams { theta: self.pde.theta, ..self.covering_params() }
    }

    pub fn radius_law(&self) -> RadiusLaw {
        self.law.law(self.beta)
    }

    pub fn pde_law(&self) -> RadiusLaw {
        self.pde.law.law(self.beta)
    }

    /// `r_ε` for the `i`-th PDE epsilon.
    pub fn shell(&self, i: usize) -> f64 {
        match &self.pde.shells {
            Some(s) => s[i],
            None => self.pde.epsilons[i] / 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d != 3 {
            bail!("only d = 3 is supported, got d = {}", self.d);
        }
        self.domain.spec().validate()?;
        self.radius_law().validate(self.d)?;
        self.pde_law().validate(self.d)?;
        self.covering_params().validate()?;
        self.pde_covering_params().validate()?;
        for (name, v) in [("lambda", self.lambda), ("pde.lambda", self.pde.lambda)] {
            if !(v >= 0.0 && v.is_finite()) {
                bail!("{name} must be finite and non-negative, got {v}");
            }
        }
        for (name, eps) in [("epsilons", &self.epsilons), ("pde.epsilons", &self.pde.epsilons)] {
            if eps.is_empty() {
                bail!("{name} is empty");
            }
            if let Some(e) = eps.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
                bail!("{name} entries must lie in (0, 1), got {e}");
            }
        }
        let p = &self.pde;
        if p.n < 8 || p.bogovskii_n < 8 {
            bail!("grids need at least 8 cells per axis");
        }
        if !(p.q > self.d as f64) {
            bail!("q must exceed d, got {}", p.q);
        }
        if let Some(mu) = p.mu {
            if !(mu >= 0.0) {
                bail!("mu must be non-negative, got {mu}");
            }
        }
        if let Some(s) = &p.shells {
            if s.len() != p.epsilons.len() || s.iter().any(|v| !(*v >= 0.0 && *v < 0.5)) {
                bail!("pde.shells needs one width in [0, 0.5) per epsilon");
            }
        }
        if !(p.tol > 0.0) || p.max_iter == 0 {
            bail!("solver tolerance and iteration cap must be positive");
        }
        if self.capacity_n < 32 {
            bail!("capacity_n must be at least 32");
        }
        if self.budgets.sources == 0 {
            bail!("budgets.sources must be positive");
        }
        if self.seeds.end <= self.seeds.start {
            bail!("seed range is empty");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.pde.n = 64;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = ExperimentConfig::default();
        c.pde.q = 3.0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.epsilons = vec![1.5];
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_toml("d = 3\nbogus = 1").is_err());
    }

    #[test]
    fn seed_ranges() {
        assert_eq!(SeedRange::parse("3..6").unwrap().seeds(), vec![3, 4, 5]);
        assert!(SeedRange::parse("5..5").is_err());
        assert!(SeedRange::parse("5").is_err());
    }

    #[test]
    fn shell_schedule_halves() {
        let c = ExperimentConfig::default();
        assert_eq!(c.shell(0), 0.0625);
        assert_eq!(c.shell(1), 0.03125);
    }
}
