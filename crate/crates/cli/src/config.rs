//! TOML run configuration and its validation.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use frd::elliptic::{generator_from_text, Generator, MultiIndexSet};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub l: usize,
    pub n: u32,
    pub d: usize,
    pub m: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { l: 3, n: 2, d: 2, m: 1 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum IndexSpec {
    /// `"first_order"` or `"next_nearest"`.
    Named(String),
    Explicit(Vec<Vec<u32>>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub indices: IndexSpec,
    /// `"laplacian"`, `"random"` or `"file"`.
    pub kind: String,
    pub omega0: f64,
    pub big_omega0: f64,
    /// Generator document for `kind = "file"`.
    pub file: Option<PathBuf>,
    /// Size of the random ensemble used to estimate `K`.
    pub ensemble: usize,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self {
            indices: IndexSpec::Named("first_order".into()),
            kind: "laplacian".into(),
            omega0: 0.5,
            big_omega0: 2.0,
            file: None,
            ensemble: 3,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecompositionConfig {
    /// `"base"`, `"improved"` or `"final"`.
    pub kind: String,
    pub n: u32,
    pub n_tilde: Option<u32>,
    /// Estimated from the ensemble when absent.
    pub k_const: Option<f64>,
    /// Previously exported decomposition to check the rebuilt one against.
    pub file: Option<PathBuf>,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        Self { kind: "base".into(), n: 1, n_tilde: None, k_const: None, file: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub count: usize,
    pub scale: usize,
    pub probes: usize,
    pub gradient_pairs: usize,
    pub write_batch: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { count: 2000, scale: 1, probes: 20, gradient_pairs: 16, write_batch: true }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenormConfig {
    pub k: usize,
    pub n_bar: Option<u32>,
    pub samples: usize,
    pub block_sides: Vec<usize>,
    pub whittle_matrices: usize,
}

impl Default for RenormConfig {
    fn default() -> Self {
        Self { k: 1, n_bar: None, samples: 4000, block_sides: Vec::new(), whittle_matrices: 30 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub n_values: Vec<u32>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { n_values: vec![2, 3, 4] }
    }
}

/// Tolerances of the asserted checks; every one is multiplied by `--tol-scale`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub identity: f64,
    pub range: f64,
    pub tail: f64,
    pub symbol: f64,
    pub slope: f64,
    pub z_score: f64,
    pub uniform_ratio: f64,
    pub route: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { identity: 1e-10, range: 1e-9, tail: 1e-10, symbol: 1e-12, slope: 0.2, z_score: 5.0, uniform_ratio: 1.5, route: 1e-10 }
    }
}

impl Tolerances {
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            identity: self.identity * s,
            range: self.range * s,
            tail: self.tail * s,
            symbol: self.symbol * s,
            slope: self.slope * s,
            z_score: self.z_score * s,
            uniform_ratio: self.uniform_ratio * s,
            route: self.route * s,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub operator: OperatorConfig,
    pub decomposition: DecompositionConfig,
    pub sampling: SamplingConfig,
    pub renorm: RenormConfig,
    pub sweep: SweepConfig,
    pub tolerances: Tolerances,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(cfg)
    }

    /// First violated constraint, if any.
    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        if g.l < 3 || g.l.is_multiple_of(2) {
            bail!("geometry.l must be an odd integer >= 3, got {}", g.l);
        }
        if g.n < 1 {
            bail!("geometry.n must be at least 1");
        }
        if g.d < 1 {
            bail!("geometry.d must be at least 1");
        }
        if g.m < 1 {
            bail!("geometry.m must be at least 1");
        }
        let op = &self.operator;
        if !(op.omega0 > 0.0 && op.omega0 <= op.big_omega0) {
            bail!("operator.omega0 must satisfy 0 < omega0 <= big_omega0, got {} and {}", op.omega0, op.big_omega0);
        }
        match op.kind.as_str() {
            "laplacian" | "random" => {}
            "file" if op.file.is_some() => {}
            "file" => bail!("operator.file is required when operator.kind = \"file\""),
            other => bail!("operator.kind must be laplacian, random or file, got {other:?}"),
        }
        if op.ensemble == 0 {
            bail!("operator.ensemble must be at least 1");
        }
        if let IndexSpec::Named(name) = &op.indices {
            if name != "first_order" && name != "next_nearest" {
                bail!("operator.indices must be first_order, next_nearest or a list, got {name:?}");
            }
            if name == "next_nearest" && g.d < 2 {
                bail!("operator.indices = next_nearest needs geometry.d >= 2");
            }
        }
        let dc = &self.decomposition;
        match dc.kind.as_str() {
            "base" => {}
            "improved" => {
                if dc.n == 0 {
                    bail!("decomposition.n must be at least 1 for kind improved");
                }
            }
            "final" => {
                let nt = dc.n_tilde.unwrap_or(0);
                if dc.n == 0 || nt <= dc.n {
                    bail!("decomposition.n_tilde must exceed decomposition.n >= 1 for kind final (n = {}, n_tilde = {nt})", dc.n);
                }
                if let Some(k) = dc.k_const {
                    if !(k > 0.0 && k.is_finite()) {
                        bail!("decomposition.k_const must be positive, got {k}");
                    }
                }
            }
            other => bail!("decomposition.kind must be base, improved or final, got {other:?}"),
        }
        let s = &self.sampling;
        if s.scale == 0 || s.scale > g.n as usize + 1 {
            bail!("sampling.scale must lie in 1..={}, got {}", g.n + 1, s.scale);
        }
        if s.count < 2 {
            bail!("sampling.count must be at least 2");
        }
        let r = &self.renorm;
        if r.k == 0 || r.k > g.n as usize {
            bail!("renorm.k must lie in 1..={}, got {}", g.n, r.k);
        }
        if let Some(nb) = r.n_bar {
            if (nb as usize) < r.k || nb > g.n {
                bail!("renorm.n_bar must satisfy k <= n_bar <= N, got {nb}");
            }
        }
        if self.sweep.n_values.is_empty() || self.sweep.n_values.contains(&0) {
            bail!("sweep.n_values must be a non-empty list of positive levels");
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("identity", t.identity),
            ("range", t.range),
            ("tail", t.tail),
            ("symbol", t.symbol),
            ("slope", t.slope),
            ("z_score", t.z_score),
            ("uniform_ratio", t.uniform_ratio),
            ("route", t.route),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                bail!("tolerances.{name} must be positive, got {v}");
            }
        }
        Ok(())
    }

    pub fn index_set(&self) -> Result<MultiIndexSet> {
        Ok(match &self.operator.indices {
            IndexSpec::Named(n) if n == "first_order" => MultiIndexSet::first_order(self.geometry.d),
            IndexSpec::Named(_) => MultiIndexSet::next_nearest(self.geometry.d),
            IndexSpec::Explicit(v) => MultiIndexSet::new(self.geometry.d, v.clone())?,
        })
    }

    /// The generator under study and the ensemble used for `K` (which includes it).
    pub fn generators(&self) -> Result<(Generator, Vec<Generator>)> {
        let set = self.index_set()?;
        let op = &self.operator;
        let m = self.geometry.m;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let a = match op.kind.as_str() {
            "laplacian" => Generator::laplacian(&set, m, op.omega0, op.big_omega0)?,
            "random" => Generator::random(&set, m, op.omega0, op.big_omega0, &mut rng)?,
            _ => {
                let path = op.file.as_ref().expect("validated");
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                generator_from_text(&text)?
            }
        };
        let mut ensemble = vec![a.clone()];
        while ensemble.len() < op.ensemble {
            ensemble.push(Generator::random(a.set(), m, a.omega0(), a.big_omega0(), &mut rng)?);
        }
        ensemble.push(frd::frd_improved::reference_generator(&a)?);
        Ok((a, ensemble))
    }
}
