//! Versioned TOML problem definitions.

use crate::error::{Error, Result};
use crate::families::{DiscountedReward, RewardMap, ScheduledDynamics, StageMap};
use crate::linalg::{from_rows, to_rows};
use crate::model::{ControlSystem, Process, Schedule, StateDomain};
use crate::sets::ConvexSet;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    Riccati,
    BruteForceQp,
    BruteForceNlp,
    #[default]
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDef {
    pub format: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub notes: String,
    pub state_dim: usize,
    pub control_dim: usize,
    /// Weight `β` in `φ_t = β^t · reward`.
    #[serde(default = "unit")]
    pub discount: f64,
    #[serde(default)]
    pub oracle: OracleKind,
    pub initial_state: Vec<f64>,
    pub dynamics: DynamicsDef,
    pub reward: RewardDef,
    #[serde(default)]
    pub state_domain: StateDomainDef,
    #[serde(default)]
    pub control_sets: SetScheduleDef,
    pub reference: ReferenceDef,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsDef {
    /// Maps for `t = 0, 1, …`; later stages use `tail`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<StageMapDef>,
    pub tail: StageMapDef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StageMapDef {
    Linear { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
    PowerGrowth { alpha: f64 },
    QuadraticInput { a: Vec<Vec<f64>>, w: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RewardDef {
    Zero,
    Constant {
        value: f64,
    },
    Quadratic {
        q: Vec<Vec<f64>>,
        r: Vec<Vec<f64>>,
    },
    Linear {
        c: Vec<f64>,
        d: Vec<f64>,
        #[serde(default)]
        offset: f64,
    },
    LogControl,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StateDomainDef {
    #[default]
    AllSpace,
    OpenBox { lower: Vec<f64>, upper: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetScheduleDef {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<SetDef>,
    pub tail: SetDef,
}

impl Default for SetScheduleDef {
    fn default() -> Self {
        SetScheduleDef { stages: Vec::new(), tail: SetDef::AllSpace }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SetDef {
    AllSpace,
    Box { lower: Vec<f64>, upper: Vec<f64> },
    HalfSpaces { a: Vec<Vec<f64>>, b: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceDef {
    /// `x_0..x_N`; simulated from `initial_state` when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<Vec<f64>>>,
    /// `u_0..u_{N−1}`.
    pub controls: Vec<Vec<f64>>,
}

struct Ctx<'a> {
    path: &'a str,
}

impl Ctx<'_> {
    fn err(&self, field: &str, message: impl Into<String>) -> Error {
        Error::Schema {
            path: self.path.to_string(),
            message: format!("field `{field}`: {}", message.into()),
        }
    }

    fn matrix(&self, field: &str, rows: &[Vec<f64>], shape: (usize, usize)) -> Result<DMatrix<f64>> {
        if rows.len() != shape.0 {
            return Err(self.err(field, format!("expected {} rows, found {}", shape.0, rows.len())));
        }
        let m = from_rows(rows, shape.1).ok_or_else(|| self.err(field, format!("every row needs {} entries", shape.1)))?;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(self.err(field, "entries must be finite"));
        }
        Ok(m)
    }

    fn vector(&self, field: &str, v: &[f64], len: usize, finite: bool) -> Result<DVector<f64>> {
        if v.len() != len {
            return Err(self.err(field, format!("expected {len} entries, found {}", v.len())));
        }
        if finite && v.iter().any(|x| !x.is_finite()) {
            return Err(self.err(field, "entries must be finite"));
        }
        if v.iter().any(|x| x.is_nan()) {
            return Err(self.err(field, "entries must not be NaN"));
        }
        Ok(DVector::from_column_slice(v))
    }
}

impl ProblemDef {
    pub fn from_toml_str(text: &str, path: &str) -> Result<Self> {
        let def: ProblemDef = toml::from_str(text).map_err(|e| Error::Schema {
            path: path.to_string(),
            message: e.to_string().trim_end().to_string(),
        })?;
        if def.format != FORMAT_VERSION {
            return Err(Error::Schema {
                path: path.to_string(),
                message: format!("field `format`: unsupported version {} (expected {FORMAT_VERSION})", def.format),
            });
        }
        Ok(def)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Schema {
            path: self.name.clone(),
            message: format!("cannot serialize: {e}"),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    /// Builds the system and reference process, validating every field.
    pub fn build(&self, path: &str) -> Result<(ControlSystem, Process)> {
        let cx = Ctx { path };
        let (n, m) = (self.state_dim, self.control_dim);
        if n == 0 || m == 0 {
            return Err(cx.err("state_dim", "dimensions must be positive"));
        }
        if !(self.discount.is_finite() && self.discount > 0.0) {
            return Err(cx.err("discount", "must be a positive finite number"));
        }
        let map = |i: Option<usize>, d: &StageMapDef| -> Result<StageMap> {
            let field = match i {
                Some(i) => format!("dynamics.stages[{i}]"),
                None => "dynamics.tail".to_string(),
            };
            Ok(match d {
                StageMapDef::Linear { a, b } => StageMap::Linear {
                    a: cx.matrix(&format!("{field}.a"), a, (n, n))?,
                    b: cx.matrix(&format!("{field}.b"), b, (n, m))?,
                },
                StageMapDef::PowerGrowth { alpha } => {
                    if n != 1 || m != 1 {
                        return Err(cx.err(&field, "power-growth needs state_dim = control_dim = 1"));
                    }
                    if !alpha.is_finite() {
                        return Err(cx.err(&format!("{field}.alpha"), "must be finite"));
                    }
                    StageMap::PowerGrowth { alpha: *alpha }
                }
                StageMapDef::QuadraticInput { a, w } => StageMap::QuadraticInput {
                    a: cx.matrix(&format!("{field}.a"), a, (n, n))?,
                    w: cx.vector(&format!("{field}.w"), w, n, true)?,
                },
            })
        };
        let dynamics = ScheduledDynamics {
            stages: self
                .dynamics
                .stages
                .iter()
                .enumerate()
                .map(|(i, d)| map(Some(i), d))
                .collect::<Result<_>>()?,
            tail: map(None, &self.dynamics.tail)?,
        };
        let base = match &self.reward {
            RewardDef::Zero => RewardMap::Zero,
            RewardDef::Constant { value } => RewardMap::Constant { value: *value },
            RewardDef::Quadratic { q, r } => RewardMap::Quadratic {
                q: cx.matrix("reward.q", q, (n, n))?,
                r: cx.matrix("reward.r", r, (m, m))?,
            },
            RewardDef::Linear { c, d, offset } => RewardMap::Linear {
                c: cx.vector("reward.c", c, n, true)?,
                d: cx.vector("reward.d", d, m, true)?,
                offset: *offset,
            },
            RewardDef::LogControl => RewardMap::LogControl,
        };
        let reward = DiscountedReward { base, discount: self.discount };
        let set = |field: &str, s: &SetDef| -> Result<ConvexSet> {
            match s {
                SetDef::AllSpace => Ok(ConvexSet::AllSpace { dim: m }),
                SetDef::Box { lower, upper } => ConvexSet::new_box(
                    cx.vector(&format!("{field}.lower"), lower, m, false)?,
                    cx.vector(&format!("{field}.upper"), upper, m, false)?,
                )
                .map_err(|e| cx.err(field, e.to_string())),
                SetDef::HalfSpaces { a, b } => {
                    let rows = a.len();
                    ConvexSet::new_half_spaces(cx.matrix(&format!("{field}.a"), a, (rows, m))?, cx.vector(&format!("{field}.b"), b, rows, true)?)
                        .map_err(|e| cx.err(field, e.to_string()))
                }
            }
        };
        let sets = Schedule {
            stages: self
                .control_sets
                .stages
                .iter()
                .enumerate()
                .map(|(i, s)| set(&format!("control_sets.stages[{i}]"), s))
                .collect::<Result<_>>()?,
            tail: set("control_sets.tail", &self.control_sets.tail)?,
        };
        let domain = match &self.state_domain {
            StateDomainDef::AllSpace => StateDomain::AllSpace,
            StateDomainDef::OpenBox { lower, upper } => {
                let lo = cx.vector("state_domain.lower", lower, n, false)?;
                let hi = cx.vector("state_domain.upper", upper, n, false)?;
                if (0..n).any(|i| lo[i] >= hi[i]) {
                    return Err(cx.err("state_domain", "empty open box"));
                }
                StateDomain::OpenBox { lower: lo, upper: hi }
            }
        };
        let system = ControlSystem::new(n, m, Arc::new(dynamics), Arc::new(reward))?
            .with_control_sets(sets)?
            .with_state_domains(Schedule::constant(domain))?;

        let sigma = cx.vector("initial_state", &self.initial_state, n, true)?;
        let controls: Vec<DVector<f64>> = self
            .reference
            .controls
            .iter()
            .enumerate()
            .map(|(t, u)| cx.vector(&format!("reference.controls[{t}]"), u, m, true))
            .collect::<Result<_>>()?;
        if controls.is_empty() {
            return Err(cx.err("reference.controls", "at least one control is required"));
        }
        let process = match &self.reference.states {
            None => crate::model::simulate(&system, &sigma, &controls, controls.len() - 1)?,
            Some(states) => {
                let states: Vec<DVector<f64>> = states
                    .iter()
                    .enumerate()
                    .map(|(t, x)| cx.vector(&format!("reference.states[{t}]"), x, n, true))
                    .collect::<Result<_>>()?;
                if states.first() != Some(&sigma) {
                    return Err(cx.err("reference.states[0]", "must equal initial_state"));
                }
                let p = Process::from_parts(states, controls).map_err(|e| cx.err("reference", e.to_string()))?;
                for t in 0..p.len() {
                    let next = system.step(t, &p.states[t], &p.controls[t]);
                    let residual = (&p.states[t + 1] - &next).norm();
                    if !(residual <= crate::horizon::FEASIBILITY_TOL * (1.0 + next.norm())) {
                        return Err(Error::InfeasibleReference { t, residual });
                    }
                    if !system.control_set(t).contains(&p.controls[t]) {
                        return Err(cx.err(&format!("reference.controls[{t}]"), "outside the control set"));
                    }
                    if !system.state_domain(t).contains(&p.states[t]) {
                        return Err(cx.err(&format!("reference.states[{t}]"), "outside the state domain"));
                    }
                }
                p
            }
        };
        Ok((system, process))
    }
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    to_rows(m)
}

pub(crate) fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().cloned().collect()
}
