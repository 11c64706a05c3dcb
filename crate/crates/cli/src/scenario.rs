//! The scenario file: one JSON document describing the cone data, the
//! geometry and bundle of the flow runs, the perturbation path and every
//! tolerance used along the way.
//!
//! Exact quantities (Chern vectors, region vertices, sample classes) are
//! written as integers or as strings such as `"3/2"` or `"0.25"`, and parsed
//! into exact rationals. Every section after `region` has documented
//! defaults, so a cone-only scenario needs just the first four keys.

use std::fmt;
use std::path::Path;

use hymwall::cone::{Region, SlopeDatum, ThetaClass};
use hymwall::flow::{FlowParams, PathKind};
use hymwall::lattice::{BundleSpec, MetricPerturbation};
use hymwall::scalar::parse_rational;
use hymwall::slice::SliceConfig;
use hymwall::Rat;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::CliError;

/// An exact rational read from an integer or a string.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Q(pub Rat);

impl Serialize for Q {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.to_string())
    }
}

impl<'de> Deserialize<'de> for Q {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct QVisitor;
        impl Visitor<'_> for QVisitor {
            type Value = Q;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an integer or a rational string such as \"3/2\" or \"0.25\"")
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Q, E> {
                Ok(Q(Rat::from_integer(v.into())))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Q, E> {
                Ok(Q(Rat::from_integer(v.into())))
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Q, E> {
                Err(E::custom(format!("floating-point literal {v} is ambiguous; write it as a string such as \"{v}\"")))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Q, E> {
                parse_rational(v).map(Q).ok_or_else(|| E::custom(format!("cannot parse {v:?} as a rational")))
            }
        }
        d.deserialize_any(QVisitor)
    }
}

/// A Chern vector and rank, optionally tagged with the splitting components
/// whose sum it is.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSpec {
    pub c1: Vec<Q>,
    pub rank: u32,
    /// Projector tag: indices of the splitting components spanning the
    /// subobject. Required for the pairing check and the filtration match.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl CandidateSpec {
    pub fn datum(&self) -> Result<SlopeDatum<Rat>, CliError> {
        SlopeDatum::new(self.c1.iter().map(|q| q.0.clone()).collect(), self.rank).map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub vertices: Vec<Vec<Q>>,
}

/// Lattice size and flat Kähler moduli of the torus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    pub n: usize,
    pub t1: f64,
    pub t2: f64,
}

/// The perturbations `ε_k = decay^k · base`, `k = 0, …, count − 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonPath {
    pub kind: PathKind,
    pub base: MetricPerturbation,
    pub decay: f64,
    pub count: usize,
}

impl EpsilonPath {
    pub fn point(&self, k: usize) -> MetricPerturbation {
        self.base.scaled(self.decay.powi(k as i32))
    }
}

/// Starting slice coordinate: `amplitude` on the first harmonic basis
/// vector of `End` entry `entry`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StartSpec {
    pub entry: [usize; 2],
    pub amplitude: f64,
}

impl Default for StartSpec {
    fn default() -> Self {
        Self { entry: [0, 1], amplitude: 0.0 }
    }
}

/// Post-processing of individual runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSpec {
    /// Number of trailing log-velocities averaged into `ξ`.
    pub destabilizer_window: usize,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self { destabilizer_window: 5 }
    }
}

/// Thresholds of the `verify` table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyTolerances {
    /// Largest allowed increase of `‖ν‖` between trajectory rows.
    pub monotone_slack: f64,
    /// Orbit-identity tolerance.
    pub orbit_tol: f64,
    /// Band for the Donaldson decrease ratio.
    pub ratio_band: [f64; 2],
    /// Fraction of steps whose ratio must lie in the band.
    pub ratio_fraction: f64,
    /// The decrease law is checked on runs with `‖ε‖_{C⁰}` at most this.
    pub ratio_eps_max: f64,
    /// Required `hym_residual` of converged stable-side runs.
    pub hym_tol: f64,
    /// Relative tolerance of the slope pairing identity.
    pub pairing_rel: f64,
    /// Largest ratio between the Lipschitz quotients of the observables.
    pub lipschitz_spread: f64,
}

impl Default for VerifyTolerances {
    fn default() -> Self {
        Self {
            monotone_slack: 1e-8,
            orbit_tol: 1e-6,
            ratio_band: [0.9, 1.1],
            ratio_fraction: 0.95,
            ratio_eps_max: 0.01,
            hym_tol: 1e-5,
            pairing_rel: 1e-4,
            lipschitz_spread: 3.0,
        }
    }
}

fn default_seed() -> u64 {
    7
}

/// A complete scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub ambient_dim: usize,
    pub total: CandidateSpec,
    pub candidates: Vec<CandidateSpec>,
    pub region: RegionSpec,
    /// Classes classified in the cone report.
    #[serde(default)]
    pub thetas: Vec<Vec<Q>>,
    /// Additional classes drawn from the region with the scenario seed.
    #[serde(default)]
    pub random_thetas: usize,
    /// Seed of the random classes and of the eigen-solver start vectors
    /// (it replaces `slice.seed`).
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub geometry: Option<GeometrySpec>,
    #[serde(default)]
    pub bundle: Option<BundleSpec>,
    #[serde(default)]
    pub epsilon_path: Option<EpsilonPath>,
    #[serde(default)]
    pub start: StartSpec,
    #[serde(default)]
    pub flow: FlowParams,
    #[serde(default)]
    pub slice: SliceConfig,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default)]
    pub verify: VerifyTolerances,
}

/// The cone part of a scenario in exact form.
pub struct ConeInput {
    pub total: SlopeDatum<Rat>,
    pub candidates: Vec<SlopeDatum<Rat>>,
    pub region: Region<Rat>,
    pub thetas: Vec<ThetaClass<Rat>>,
}

/// Everything a flow run needs.
pub struct FlowInput<'a> {
    pub geometry: &'a GeometrySpec,
    pub bundle: &'a BundleSpec,
    pub path: &'a EpsilonPath,
}

impl Scenario {
    /// Reads and validates a scenario file. Schema errors carry the field
    /// path together with the line and column.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read scenario {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            CliError::Config(format!(
                "scenario schema: field `{}` at line {}, column {}: {inner}",
                e.path(),
                inner.line(),
                inner.column()
            ))
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Cross-field checks that the schema alone cannot express.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |m: String| Err(CliError::Config(m));
        let d = self.ambient_dim;
        if d == 0 {
            return cfg("ambient_dim must be positive".into());
        }
        if self.total.c1.len() != d {
            return cfg(format!("total.c1 has {} entries, ambient_dim is {d}", self.total.c1.len()));
        }
        if self.candidates.is_empty() {
            return cfg("candidates: the candidate list is empty".into());
        }
        for (i, c) in self.candidates.iter().enumerate() {
            if c.c1.len() != d {
                return cfg(format!("candidates[{i}].c1 has {} entries, ambient_dim is {d}", c.c1.len()));
            }
            if c.rank == 0 || c.rank >= self.total.rank {
                return cfg(format!("candidates[{i}].rank = {} must lie strictly between 0 and {}", c.rank, self.total.rank));
            }
        }
        if self.region.vertices.is_empty() {
            return cfg("region.vertices is empty".into());
        }
        for (i, v) in self.region.vertices.iter().enumerate() {
            if v.len() != d {
                return cfg(format!("region.vertices[{i}] has {} entries, ambient_dim is {d}", v.len()));
            }
        }
        for (i, t) in self.thetas.iter().enumerate() {
            if t.len() != d {
                return cfg(format!("thetas[{i}] has {} entries, ambient_dim is {d}", t.len()));
            }
        }
        if let Some(b) = &self.bundle {
            BundleSpec::new(b.fluxes.clone(), b.extensions.clone()).map_err(|e| CliError::Config(format!("bundle: {e}")))?;
            if d != 2 {
                return cfg(format!("a bundle on the torus needs ambient_dim 2, found {d}"));
            }
            let r = b.rank();
            if self.total.rank as usize != r {
                return cfg(format!("total.rank = {} differs from the bundle rank {r}", self.total.rank));
            }
            let total_c1 = flux_class(b, &(0..r).collect::<Vec<_>>());
            if total_c1 != self.total.c1.iter().map(|q| q.0.clone()).collect::<Vec<_>>() {
                return cfg("total.c1 differs from the flux sum of the bundle".into());
            }
            for (i, c) in self.candidates.iter().enumerate() {
                let Some(tag) = &c.components else { continue };
                let mut sorted = tag.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != tag.len() || tag.iter().any(|&k| k >= r) {
                    return cfg(format!("candidates[{i}].components {tag:?} must be distinct indices below {r}"));
                }
                if tag.len() != c.rank as usize {
                    return cfg(format!("candidates[{i}].components has {} entries, rank is {}", tag.len(), c.rank));
                }
                if flux_class(b, tag) != c.c1.iter().map(|q| q.0.clone()).collect::<Vec<_>>() {
                    return cfg(format!("candidates[{i}].c1 differs from the flux sum of components {tag:?}"));
                }
            }
        } else if self.candidates.iter().any(|c| c.components.is_some()) {
            return cfg("candidate components need a bundle to refer to".into());
        }
        if let Some(p) = &self.epsilon_path {
            let has_class = p.base.moduli != [0.0, 0.0];
            let has_exact = p.base.exact.iter().any(|m| m.amplitude != 0.0);
            let ok = match p.kind {
                PathKind::Exact => has_exact && !has_class,
                PathKind::Moduli => has_class && !has_exact,
                PathKind::Mixed => has_class && has_exact,
            };
            if !ok && p.count > 0 {
                return cfg(format!("epsilon_path.base does not match kind {:?}", p.kind));
            }
            if !(p.decay > 0.0 && p.decay < 1.0) {
                return cfg(format!("epsilon_path.decay = {} must lie in (0, 1)", p.decay));
            }
        }
        if self.analysis.destabilizer_window == 0 {
            return cfg("analysis.destabilizer_window must be positive".into());
        }
        Ok(())
    }

    pub fn cone_input(&self) -> Result<ConeInput, CliError> {
        let conv = |v: &[Q]| v.iter().map(|q| q.0.clone()).collect::<Vec<_>>();
        let region = Region::new(self.region.vertices.iter().map(|v| ThetaClass::new(conv(v))).collect())
            .map_err(|e| CliError::Config(format!("region: {e}")))?;
        let candidates = self.candidates.iter().map(CandidateSpec::datum).collect::<Result<Vec<_>, _>>()?;
        Ok(ConeInput {
            total: self.total.datum()?,
            candidates,
            region,
            thetas: self.thetas.iter().map(|t| ThetaClass::new(conv(t))).collect(),
        })
    }

    pub fn flow_input(&self) -> Result<FlowInput<'_>, CliError> {
        let missing = |k: &str| CliError::Config(format!("the flow needs `{k}` in the scenario"));
        Ok(FlowInput {
            geometry: self.geometry.as_ref().ok_or_else(|| missing("geometry"))?,
            bundle: self.bundle.as_ref().ok_or_else(|| missing("bundle"))?,
            path: self.epsilon_path.as_ref().ok_or_else(|| missing("epsilon_path"))?,
        })
    }

    /// Slice configuration with the scenario seed applied.
    pub fn slice_config(&self) -> SliceConfig {
        SliceConfig { seed: self.seed, ..self.slice.clone() }
    }
}

/// First Chern class, in class coordinates `(t₁, t₂)`, of the sum of the
/// given splitting components: `(Σ m₂, Σ m₁)`.
pub fn flux_class(bundle: &BundleSpec, components: &[usize]) -> Vec<Rat> {
    let (m1, m2) = components.iter().fold((0i64, 0i64), |(a, b), &k| (a + bundle.fluxes[k][0], b + bundle.fluxes[k][1]));
    vec![Rat::from_integer(m2.into()), Rat::from_integer(m1.into())]
}
