//! Experiment specifications in TOML.

use std::path::Path;

use kahler_flow_core::flow::StepControl;
use kahler_flow_core::geometry::{make_sphere_model, GeometryDescriptor, ModelGeometry, PotentialField};
use kahler_flow_core::rng::KeyedRng;
use kahler_flow_core::sphere::mode_index;
use kahler_flow_core::toric::{degree_for_resolution, Polygon};
use serde::{Deserialize, Serialize};

use crate::error::{KflowError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioId {
    KeStability,
    SolitonStability,
    SolitonInvariantSeed,
    GaugeNecessity,
    UniquenessRestart,
    IdentitySuite,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 6] = [
        ScenarioId::KeStability,
        ScenarioId::SolitonStability,
        ScenarioId::SolitonInvariantSeed,
        ScenarioId::GaugeNecessity,
        ScenarioId::UniquenessRestart,
        ScenarioId::IdentitySuite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioId::KeStability => "ke-stability",
            ScenarioId::SolitonStability => "soliton-stability",
            ScenarioId::SolitonInvariantSeed => "soliton-invariant-seed",
            ScenarioId::GaugeNecessity => "gauge-necessity",
            ScenarioId::UniquenessRestart => "uniqueness-restart",
            ScenarioId::IdentitySuite => "identity-suite",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|id| id.name() == s)
            .ok_or_else(|| KflowError::Config(format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolygonName {
    Square,
    Blowup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeometrySpec {
    Sphere {
        degree: usize,
    },
    Toric {
        #[serde(default)]
        polygon: Option<PolygonName>,
        #[serde(default)]
        vertices: Option<Vec<[f64; 2]>>,
        resolution: usize,
    },
}

impl GeometrySpec {
    pub fn descriptor(&self) -> Result<GeometryDescriptor> {
        match self {
            GeometrySpec::Sphere { degree } => Ok(GeometryDescriptor::Sphere { degree: *degree }),
            GeometrySpec::Toric { polygon, vertices, resolution } => {
                let vertices = match (polygon, vertices) {
                    (Some(PolygonName::Square), None) => Polygon::square().vertices,
                    (Some(PolygonName::Blowup), None) => Polygon::blowup_cp2().vertices,
                    (None, Some(v)) => Polygon::new(v)?.vertices,
                    _ => return Err(KflowError::Config("toric geometry needs exactly one of `polygon`, `vertices`".into())),
                };
                Ok(GeometryDescriptor::Toric { vertices, resolution: *resolution, degree: degree_for_resolution(*resolution) })
            }
        }
    }

    pub fn build(&self) -> Result<ModelGeometry> {
        Ok(self.descriptor()?.build()?)
    }

    /// Same model at twice the resolution.
    pub fn refined(&self) -> Self {
        match self {
            GeometrySpec::Sphere { degree } => GeometrySpec::Sphere { degree: 2 * degree },
            GeometrySpec::Toric { polygon, vertices, resolution } => {
                GeometrySpec::Toric { polygon: polygon.clone(), vertices: vertices.clone(), resolution: 2 * resolution }
            }
        }
    }
}

/// One seed component; `amplitude` is its RMS `(V⁻¹∫f²)^{1/2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedMode {
    #[serde(default)]
    pub l: Option<usize>,
    #[serde(default)]
    pub m: Option<i64>,
    /// Basis index, for models without harmonic labels.
    #[serde(default)]
    pub index: Option<usize>,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSeed {
    pub seed: u64,
    /// Number of leading non-constant basis functions used.
    pub count: usize,
    /// RMS of the whole seed.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    #[serde(default)]
    pub modes: Vec<SeedMode>,
    #[serde(default)]
    pub random: Option<RandomSeed>,
}

impl SeedSpec {
    pub fn potential(&self, geom: &ModelGeometry) -> Result<PotentialField> {
        let scale = geom.volume.sqrt();
        let mut f = PotentialField::zero(geom);
        for m in &self.modes {
            let k = match (m.l, m.m, m.index, geom.is_sphere()) {
                (Some(l), Some(mm), None, true) if mm.unsigned_abs() as usize <= l => mode_index(l, mm),
                (None, None, Some(i), _) => i,
                _ => return Err(KflowError::Config("seed mode needs `l` and `m` (sphere) or `index`".into())),
            };
            if k == 0 || k >= geom.basis_count() {
                return Err(KflowError::Config(format!("seed basis index {k} is constant or out of range")));
            }
            f.coeffs[k] += scale * m.amplitude;
        }
        if let Some(r) = &self.random {
            if r.count + 1 > geom.basis_count() {
                return Err(KflowError::Config("random seed count exceeds the basis".into()));
            }
            let mut rng = KeyedRng::new(r.seed, "seed-potential");
            let mut g = PotentialField::zero(geom);
            for k in 1..=r.count {
                g.coeffs[k] = rng.normal();
            }
            let norm = g.l2_norm();
            if norm > 0.0 {
                f = f.add(&g.scaled(scale * r.amplitude / norm));
            }
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    #[serde(default = "defaults::eps0")]
    pub eps0: f64,
    #[serde(default = "defaults::n")]
    pub n: usize,
    pub horizon: f64,
    #[serde(default = "defaults::cadence")]
    pub cadence: f64,
    #[serde(default = "defaults::k")]
    pub k: usize,
    #[serde(default)]
    pub rtol: Option<f64>,
    #[serde(default)]
    pub atol: Option<f64>,
    #[serde(default)]
    pub max_step: Option<f64>,
    /// Gauge-fix every `gauge_every`-th recorded state.
    #[serde(default = "defaults::gauge_every")]
    pub gauge_every: usize,
}

impl FlowSpec {
    pub fn control(&self) -> StepControl {
        let mut c = StepControl::default();
        if let Some(v) = self.rtol {
            c.rtol = v;
        }
        if let Some(v) = self.atol {
            c.atol = v;
        }
        if let Some(v) = self.max_step {
            c.max_step = v;
        }
        c
    }
}

mod defaults {
    pub fn eps0() -> f64 {
        1e-2
    }
    pub fn n() -> usize {
        10
    }
    pub fn cadence() -> f64 {
        0.05
    }
    pub fn k() -> usize {
        1
    }
    pub fn gauge_every() -> usize {
        1
    }
    pub fn samples() -> usize {
        100
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSpec {
    #[serde(default = "defaults::samples")]
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub scenario: ScenarioId,
    pub geometry: GeometrySpec,
    #[serde(default)]
    pub seed: SeedSpec,
    pub flow: FlowSpec,
    #[serde(default)]
    pub suite: Option<SuiteSpec>,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| KflowError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| KflowError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(KflowError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let f = &self.flow;
        if !(f.horizon >= 0.0 && f.cadence > 0.0 && f.eps0 > 0.0) {
            return Err(KflowError::Config("flow horizon, cadence and eps0 must be positive".into()));
        }
        if f.k == 0 || f.k > kahler_flow_core::functionals::K_MAX {
            return Err(KflowError::Config(format!("flow.k must lie in 1..={}", kahler_flow_core::functionals::K_MAX)));
        }
        self.geometry.descriptor()?;
        Ok(())
    }

    /// Built-in specification of a named scenario.
    pub fn preset(id: ScenarioId) -> Self {
        let mixture = |amp: f64| SeedSpec {
            modes: [(1, 0), (2, 1), (3, -2)]
                .iter()
                .map(|&(l, m)| SeedMode { l: Some(l), m: Some(m), index: None, amplitude: amp })
                .collect(),
            random: None,
        };
        let flow = |horizon: f64| FlowSpec {
            eps0: 1e-2,
            n: 10,
            horizon,
            cadence: 0.05,
            k: 1,
            rtol: None,
            atol: None,
            max_step: None,
            gauge_every: 1,
        };
        let sphere = GeometrySpec::Sphere { degree: 16 };
        let blowup = GeometrySpec::Toric { polygon: Some(PolygonName::Blowup), vertices: None, resolution: 32 };
        let (geometry, seed, flow, suite) = match id {
            ScenarioId::KeStability | ScenarioId::GaugeNecessity => (sphere, mixture(1e-2), flow(6.0), None),
            ScenarioId::UniquenessRestart => (sphere, mixture(1e-2), flow(8.0), None),
            ScenarioId::SolitonInvariantSeed => (
                blowup,
                SeedSpec { modes: Vec::new(), random: Some(RandomSeed { seed: 17, count: 9, amplitude: 1e-2 }) },
                FlowSpec { gauge_every: 4, ..flow(6.0) },
                None,
            ),
            ScenarioId::SolitonStability => (
                GeometrySpec::Toric { polygon: Some(PolygonName::Blowup), vertices: None, resolution: 64 },
                SeedSpec { modes: Vec::new(), random: Some(RandomSeed { seed: 17, count: 9, amplitude: 1e-2 }) },
                FlowSpec { gauge_every: 4, ..flow(6.0) },
                None,
            ),
            ScenarioId::IdentitySuite => {
                (GeometrySpec::Sphere { degree: 16 }, SeedSpec::default(), flow(0.0), Some(SuiteSpec { samples: 100, seed: 1 }))
            }
        };
        Self { schema_version: SCHEMA_VERSION, scenario: id, geometry, seed, flow, suite }
    }
}

/// Sphere model shortcut used by the command line.
pub fn sphere_geometry(degree: usize) -> Result<ModelGeometry> {
    Ok(make_sphere_model(degree)?)
}
