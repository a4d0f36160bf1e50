//! Run configuration. Every default lives here and is written back into
//! each output sidecar, so a run can be repeated from its own metadata.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use cumulant_core::models::{biprime_bit_layout, BiprimeParams, DipoleChainParams, DEFAULT_SWEEP_TIME, DEFAULT_XI};
use cumulant_core::solvers::{IntegratorConfig, Method};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Chain,
    Biprime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSection {
    pub n: usize,
    pub d_over_lambda: f64,
    pub gamma: f64,
    pub eta_over_gamma: f64,
    /// Transition frequency in the simulation frame; 0 is the resonant
    /// rotating frame.
    pub omega0: f64,
    /// `Γ·T`.
    pub t_total: f64,
    /// `Γ·t₁`, drive switch-off.
    pub t_off: f64,
}

impl Default for ChainSection {
    fn default() -> Self {
        let p = DipoleChainParams::default();
        Self {
            n: p.n,
            d_over_lambda: p.d_over_lambda,
            gamma: p.gamma,
            eta_over_gamma: p.eta_over_gamma,
            omega0: p.omega0,
            t_total: p.t_total,
            t_off: p.t_off,
        }
    }
}

impl ChainSection {
    pub fn params(&self) -> DipoleChainParams {
        DipoleChainParams {
            n: self.n,
            d_over_lambda: self.d_over_lambda,
            gamma: self.gamma,
            eta_over_gamma: self.eta_over_gamma,
            omega0: self.omega0,
            t_total: self.t_total,
            t_off: self.t_off,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiprimeSection {
    pub omega: u64,
    /// Bit widths; filled from the minimal layout when absent.
    pub k: Option<usize>,
    pub l: Option<usize>,
    pub xi: f64,
    pub t_total: f64,
    pub hbar_omega: f64,
}

impl Default for BiprimeSection {
    fn default() -> Self {
        Self { omega: 21, k: None, l: None, xi: DEFAULT_XI, t_total: DEFAULT_SWEEP_TIME, hbar_omega: 1.0 }
    }
}

impl BiprimeSection {
    pub fn params(&self) -> Result<BiprimeParams> {
        let (k, l) = match (self.k, self.l) {
            (Some(k), Some(l)) => (k, l),
            (None, None) => {
                let layout = biprime_bit_layout(self.omega)?;
                (layout.k, layout.l)
            }
            _ => bail!("biprime.k and biprime.l must be given together"),
        };
        Ok(BiprimeParams { omega: self.omega, k, l, xi: self.xi, t_total: self.t_total, hbar_omega: self.hbar_omega })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSection {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Largest step in physical time; unbounded when absent.
    pub max_step: Option<f64>,
    pub max_steps: usize,
    pub divergence_bound: f64,
    pub method: String,
    pub conjugate_reduction: bool,
}

impl IntegratorSection {
    fn from_core(c: &IntegratorConfig) -> Self {
        Self {
            rel_tol: c.rel_tol,
            abs_tol: c.abs_tol,
            max_step: c.max_step.is_finite().then_some(c.max_step),
            max_steps: c.max_steps,
            divergence_bound: c.divergence_bound,
            method: c.method.to_string(),
            conjugate_reduction: c.conjugate_reduction,
        }
    }

    pub fn to_core(&self) -> Result<IntegratorConfig> {
        let method: Method = self.method.parse().map_err(anyhow::Error::msg)?;
        let cfg = IntegratorConfig {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            max_step: self.max_step.unwrap_or(f64::INFINITY),
            max_steps: self.max_steps,
            divergence_bound: self.divergence_bound,
            method,
            conjugate_reduction: self.conjugate_reduction,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Default for IntegratorSection {
    fn default() -> Self {
        Self::from_core(&IntegratorConfig::default())
    }
}

/// Settings of the exact reference solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReferenceSection(pub IntegratorSection);

impl Default for ReferenceSection {
    fn default() -> Self {
        Self(IntegratorSection::from_core(&IntegratorConfig::reference()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    DOverLambda,
    EtaOverGamma,
}

impl SweepAxis {
    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::DOverLambda => "d_over_lambda",
            SweepAxis::EtaOverGamma => "eta_over_gamma",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    /// Cumulant orders to integrate.
    pub orders: Vec<usize>,
    /// Also run the exact reference solver.
    pub exact: bool,
    /// Grid intervals; the grid has `m + 1` points.
    pub m: usize,
    /// Worker threads for orders and sweep cells (0 = all cores).
    pub workers: usize,
    pub output: PathBuf,
    /// Derivation cache; `<output>/cache` when absent.
    pub cache_dir: Option<PathBuf>,
    pub chain: ChainSection,
    pub biprime: BiprimeSection,
    pub integrator: IntegratorSection,
    pub reference: ReferenceSection,
    pub sweep: Option<SweepSection>,
    /// Run record written into sidecars; ignored on input.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provenance: Option<toml::Table>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Chain,
            orders: vec![1, 2],
            exact: true,
            m: 1000,
            workers: 0,
            output: PathBuf::from("out"),
            cache_dir: None,
            chain: ChainSection::default(),
            biprime: BiprimeSection::default(),
            integrator: IntegratorSection::default(),
            reference: ReferenceSection::default(),
            sweep: None,
            provenance: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text)?;
        cfg.provenance = None;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn n_sites(&self) -> Result<usize> {
        Ok(match self.model {
            ModelKind::Chain => self.chain.n,
            ModelKind::Biprime => self.biprime.params()?.n_qubits(),
        })
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.output.join("cache"))
    }

    /// Fills defaulted model values so the written config is complete.
    pub fn resolve(&mut self) -> Result<()> {
        if self.model == ModelKind::Biprime {
            let p = self.biprime.params()?;
            self.biprime.k = Some(p.k);
            self.biprime.l = Some(p.l);
        }
        self.orders.sort_unstable();
        self.orders.dedup();
        Ok(())
    }

    /// Checks everything a run depends on, with messages that name the key.
    pub fn validate(&self) -> Result<()> {
        match self.model {
            ModelKind::Chain => self.chain.params().validate().context("[chain]")?,
            ModelKind::Biprime => self.biprime.params()?.validate().context("[biprime]")?,
        }
        let n = self.n_sites()?;
        if self.orders.is_empty() && !self.exact {
            bail!("nothing to run: `orders` is empty and `exact` is false");
        }
        if let Some(&bad) = self.orders.iter().find(|&&o| o == 0 || o > n) {
            bail!("order {bad} outside 1..={n} for a {n}-site system");
        }
        if self.m == 0 {
            bail!("`m` must be at least 1");
        }
        self.integrator.to_core().context("[integrator]")?;
        self.reference.0.to_core().context("[reference]")?;
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                bail!("[sweep] values must not be empty");
            }
            if self.model != ModelKind::Chain {
                bail!("[sweep] is only defined for the chain model");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.m, 1000);
        assert_eq!(cfg.chain.t_off, 5.0);
        assert_eq!(cfg.biprime.xi, DEFAULT_XI);
        assert_eq!(cfg.reference.0.rel_tol, 1e-12);
        cfg.validate().unwrap();
    }

    #[test]
    fn round_trip_through_toml() {
        let mut cfg = RunConfig { model: ModelKind::Biprime, orders: vec![3, 1, 2], ..Default::default() };
        cfg.sweep = None;
        cfg.resolve().unwrap();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.biprime.k, Some(2));
    }

    #[test]
    fn provenance_is_ignored() {
        let mut cfg = RunConfig::default();
        cfg.provenance = Some(toml::Table::from_iter([("status".to_string(), toml::Value::from("completed"))]));
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, RunConfig::default());
    }

    #[test]
    fn actionable_errors() {
        let bad = RunConfig { orders: vec![7], ..Default::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("order 7"));
        let err = RunConfig::from_toml("[chain]\nspacing = 1.0\n").unwrap_err();
        assert!(format!("{err:#}").contains("spacing"));
        let bad = RunConfig { sweep: Some(SweepSection { axis: SweepAxis::DOverLambda, values: vec![] }), ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
