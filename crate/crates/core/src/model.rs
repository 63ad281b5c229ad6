//! Platoon parameters, controller taxonomy and the canonical spacing-error model.
//!
//! Every supported controller reduces to one second-order error recurrence
//! between adjacent vehicles,
//!
//! ```text
//! z_n'' + a1 z_n' + a0 z_n = b1 z_{n-1}' + b0 z_{n-1}
//! ```
//!
//! so downstream analysis only ever sees an [`ErrorModel`].

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Parameter tuple shared by every vehicle of a homogeneous platoon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct PlatoonParams {
    /// Number of vehicles.
    pub n: u64,
    /// Vehicle mass, kg.
    pub m: f64,
    /// Position gain, N/m.
    pub k: f64,
    /// Velocity gain, N·s/m.
    pub c: f64,
    /// Time headway, s.
    pub h: f64,
    /// Gain on headway fluctuations.
    pub ch: f64,
    /// Desired platoon speed, m/s.
    pub vd: f64,
    /// Nominal time headway, s.
    pub h0: f64,
    /// Additional velocity gain w.r.t. the leader, N·s/m.
    pub ca: f64,
    /// Additional velocity gain w.r.t. the virtual mass, N·s/m. Validated, unused by any model.
    pub cd: f64,
}

#[derive(Deserialize)]
struct RawParams {
    n: u64,
    m: f64,
    k: f64,
    c: f64,
    h: f64,
    ch: f64,
    vd: f64,
    h0: f64,
    ca: f64,
    cd: f64,
}

impl TryFrom<RawParams> for PlatoonParams {
    type Error = ModelError;

    fn try_from(r: RawParams) -> Result<Self, ModelError> {
        PlatoonParams::new(r.n, r.m, r.k, r.c, r.h, r.ch, r.vd, r.h0, r.ca, r.cd)
    }
}

/// One conjunct of the validity predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Conjunct {
    Mass,
    PositionGain,
    VelocityGain,
    Headway,
    HeadwayGain,
    DesiredSpeed,
    NominalHeadway,
    LeaderGain,
    VirtualMassGain,
    VehicleCount,
}

impl Conjunct {
    pub const ALL: [Conjunct; 10] = [
        Conjunct::Mass,
        Conjunct::PositionGain,
        Conjunct::VelocityGain,
        Conjunct::Headway,
        Conjunct::HeadwayGain,
        Conjunct::DesiredSpeed,
        Conjunct::NominalHeadway,
        Conjunct::LeaderGain,
        Conjunct::VirtualMassGain,
        Conjunct::VehicleCount,
    ];

    /// The inequality as written in reports, e.g. `0 < h`.
    pub fn as_str(self) -> &'static str {
        match self {
            Conjunct::Mass => "0 < m",
            Conjunct::PositionGain => "0 < k",
            Conjunct::VelocityGain => "0 < c",
            Conjunct::Headway => "0 < h",
            Conjunct::HeadwayGain => "0 < ch",
            Conjunct::DesiredSpeed => "0 < vd",
            Conjunct::NominalHeadway => "0 < h0",
            Conjunct::LeaderGain => "0 < ca",
            Conjunct::VirtualMassGain => "0 < cd",
            Conjunct::VehicleCount => "1 < n",
        }
    }
}

impl fmt::Display for Conjunct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{0} violated")]
    Invalid(Conjunct),
    #[error("parameter {name} is not finite ({value})")]
    NonFinite { name: &'static str, value: f64 },
    #[error("no dynamic model for autonomous bidirectional var_time_headway")]
    Unsupported,
}

impl PlatoonParams {
    /// Builds a parameter tuple, rejecting NaN and infinite fields.
    ///
    /// Positivity is *not* checked here; that is [`PlatoonParams::validate`]'s job.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: u64,
        m: f64,
        k: f64,
        c: f64,
        h: f64,
        ch: f64,
        vd: f64,
        h0: f64,
        ca: f64,
        cd: f64,
    ) -> Result<Self, ModelError> {
        let p = PlatoonParams { n, m, k, c, h, ch, vd, h0, ca, cd };
        for (name, value) in p.real_fields() {
            if !value.is_finite() {
                return Err(ModelError::NonFinite { name, value });
            }
        }
        Ok(p)
    }

    fn real_fields(&self) -> [(&'static str, f64); 9] {
        [
            ("m", self.m),
            ("k", self.k),
            ("c", self.c),
            ("h", self.h),
            ("ch", self.ch),
            ("vd", self.vd),
            ("h0", self.h0),
            ("ca", self.ca),
            ("cd", self.cd),
        ]
    }

    /// Returns the first failed conjunct in the order `m, k, c, h, ch, vd, h0, ca, cd, n`.
    pub fn first_violation(&self) -> Option<Conjunct> {
        Conjunct::ALL.into_iter().find(|&cj| !self.holds(cj))
    }

    pub fn holds(&self, conjunct: Conjunct) -> bool {
        match conjunct {
            Conjunct::Mass => 0.0 < self.m,
            Conjunct::PositionGain => 0.0 < self.k,
            Conjunct::VelocityGain => 0.0 < self.c,
            Conjunct::Headway => 0.0 < self.h,
            Conjunct::HeadwayGain => 0.0 < self.ch,
            Conjunct::DesiredSpeed => 0.0 < self.vd,
            Conjunct::NominalHeadway => 0.0 < self.h0,
            Conjunct::LeaderGain => 0.0 < self.ca,
            Conjunct::VirtualMassGain => 0.0 < self.cd,
            Conjunct::VehicleCount => 1 < self.n,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self.first_violation() {
            Some(cj) => Err(ModelError::Invalid(cj)),
            None => Ok(()),
        }
    }
}

/// The validity predicate: every gain, mass, speed and headway strictly positive, and `n > 1`.
#[inline]
pub fn is_valid_platoon(p: &PlatoonParams) -> bool {
    0.0 < p.m
        && 0.0 < p.k
        && 0.0 < p.c
        && 0.0 < p.h
        && 0.0 < p.ch
        && 0.0 < p.vd
        && 0.0 < p.h0
        && 0.0 < p.ca
        && 0.0 < p.cd
        && 1 < p.n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerType {
    Autonomous,
    NonAutonomous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Configuration {
    Unidirectional,
    Bidirectional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    ConstantSpacing,
    VariableSpacing,
    VarTimeHeadway,
}

/// The six dynamic models a controller can select.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    UniCs,
    UniVs,
    UniVth,
    BiCs,
    BiVs,
    /// Non-autonomous, leader's current velocity communicated.
    Clcv,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] =
        [ModelKind::UniCs, ModelKind::UniVs, ModelKind::UniVth, ModelKind::BiCs, ModelKind::BiVs, ModelKind::Clcv];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::UniCs => "control_uni_cs",
            ModelKind::UniVs => "control_uni_vs",
            ModelKind::UniVth => "control_uni_vth",
            ModelKind::BiCs => "control_bi_cs",
            ModelKind::BiVs => "control_bi_vs",
            ModelKind::Clcv => "control_clcv",
        }
    }

    /// A canonical controller triple selecting this model.
    pub fn triple(self) -> (ControllerType, Configuration, Strategy) {
        use Configuration::*;
        use ControllerType::*;
        use Strategy::*;
        match self {
            ModelKind::UniCs => (Autonomous, Unidirectional, ConstantSpacing),
            ModelKind::UniVs => (Autonomous, Unidirectional, VariableSpacing),
            ModelKind::UniVth => (Autonomous, Unidirectional, VarTimeHeadway),
            ModelKind::BiCs => (Autonomous, Bidirectional, ConstantSpacing),
            ModelKind::BiVs => (Autonomous, Bidirectional, VariableSpacing),
            ModelKind::Clcv => (NonAutonomous, Unidirectional, ConstantSpacing),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Controller tuple: taxonomy plus parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerSpec {
    pub controller_type: ControllerType,
    pub configuration: Configuration,
    pub strategy: Strategy,
    pub params: PlatoonParams,
}

impl ControllerSpec {
    pub fn of(kind: ModelKind, params: PlatoonParams) -> Self {
        let (controller_type, configuration, strategy) = kind.triple();
        ControllerSpec { controller_type, configuration, strategy, params }
    }

    /// Selects the dynamic model. Non-autonomous controllers always map to
    /// [`ModelKind::Clcv`] whatever their configuration and strategy.
    pub fn kind(&self) -> Result<ModelKind, ModelError> {
        model_kind(self.controller_type, self.configuration, self.strategy)
    }
}

pub fn model_kind(ct: ControllerType, cf: Configuration, st: Strategy) -> Result<ModelKind, ModelError> {
    use Configuration::*;
    use Strategy::*;
    match (ct, cf, st) {
        (ControllerType::NonAutonomous, _, _) => Ok(ModelKind::Clcv),
        (_, Unidirectional, ConstantSpacing) => Ok(ModelKind::UniCs),
        (_, Unidirectional, VariableSpacing) => Ok(ModelKind::UniVs),
        (_, Unidirectional, VarTimeHeadway) => Ok(ModelKind::UniVth),
        (_, Bidirectional, ConstantSpacing) => Ok(ModelKind::BiCs),
        (_, Bidirectional, VariableSpacing) => Ok(ModelKind::BiVs),
        (_, Bidirectional, VarTimeHeadway) => Err(ModelError::Unsupported),
    }
}

/// Coefficients of `z_n'' + a1 z_n' + a0 z_n = b1 z_{n-1}' + b0 z_{n-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    pub a0: f64,
    pub a1: f64,
    pub b0: f64,
    pub b1: f64,
}

impl ErrorModel {
    /// Coefficients for `kind` without checking validity. Invalid parameters
    /// (e.g. `m = 0`) yield non-finite or non-positive coefficients.
    #[inline]
    pub fn coefficients(kind: ModelKind, p: &PlatoonParams) -> ErrorModel {
        let PlatoonParams { m, k, c, h, ch, vd, h0, ca, .. } = *p;
        let (a0, a1, b0, b1) = match kind {
            ModelKind::UniCs => (k / m, c / m, k / m, c / m),
            ModelKind::UniVs => (k / m, (c + k * h) / m, k / m, c / m),
            ModelKind::UniVth => (k / m, (c + k * h0 + k * ch * vd) / m, k / m, (c + k * ch * vd) / m),
            ModelKind::BiCs => (2.0 * k / m, 2.0 * c / m, k / m, c / m),
            ModelKind::BiVs => (2.0 * k / m, (2.0 * c + k * h) / m, k / m, c / m),
            ModelKind::Clcv => (k / m, (c + ca) / m, k / m, c / m),
        };
        ErrorModel { a0, a1, b0, b1 }
    }
}

/// Validates the platoon and returns its error model.
pub fn error_model(spec: &ControllerSpec) -> Result<ErrorModel, ModelError> {
    spec.params.validate()?;
    let kind = spec.kind()?;
    Ok(ErrorModel::coefficients(kind, &spec.params))
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// n=10, m=1000, k=2000, c=400, h=1, ch=1, vd=25, h0=1, ca=50, cd=50.
    pub fn reference() -> PlatoonParams {
        PlatoonParams::new(10, 1000.0, 2000.0, 400.0, 1.0, 1.0, 25.0, 1.0, 50.0, 50.0).unwrap()
    }
}
