//! The closed PEG type system: operation and argument types, required
//! roles, edge legality and the Autoprotocol instruction mapping.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Role;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OntologyError {
    #[error("unknown operation type `{0}`")]
    UnknownOperationType(String),
    #[error("unknown argument type `{0}`")]
    UnknownArgumentType(String),
    #[error("coverage of an empty operation list is undefined")]
    EmptyOperationList,
}

/// Lab operation types a predicate node can be grounded to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperationType {
    Transfer,
    TemperatureTreatment,
    General,
    Mix,
    Spin,
    Create,
    Destroy,
    Remove,
    Measure,
    Wash,
    Time,
    Seal,
    Convert,
}

/// Types an argument node can be grounded to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArgumentType {
    Reagent,
    Measurement,
    Setting,
    Location,
    Modifier,
    Device,
    Method,
    Seal,
}

impl OperationType {
    pub const ALL: [OperationType; 13] = [
        OperationType::Transfer,
        OperationType::TemperatureTreatment,
        OperationType::General,
        OperationType::Mix,
        OperationType::Spin,
        OperationType::Create,
        OperationType::Destroy,
        OperationType::Remove,
        OperationType::Measure,
        OperationType::Wash,
        OperationType::Time,
        OperationType::Seal,
        OperationType::Convert,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OperationType::Transfer => "transfer",
            OperationType::TemperatureTreatment => "temperature-treatment",
            OperationType::General => "general",
            OperationType::Mix => "mix",
            OperationType::Spin => "spin",
            OperationType::Create => "create",
            OperationType::Destroy => "destroy",
            OperationType::Remove => "remove",
            OperationType::Measure => "measure",
            OperationType::Wash => "wash",
            OperationType::Time => "time",
            OperationType::Seal => "seal",
            OperationType::Convert => "convert",
        }
    }

    /// Short description of what the core roles mean for this operation.
    pub fn core_role_semantics(self) -> &'static str {
        match self {
            OperationType::Spin => "ARG0 spun; solid phase ARG1, liquid phase ARG2",
            OperationType::Convert => "ARG0 becomes ARG1",
            OperationType::Seal => "ARG0 sealed by ARG1",
            OperationType::Create => "ARG* created",
            OperationType::General => "-",
            OperationType::Destroy => "ARG* discarded",
            OperationType::Measure => "ARG* measured",
            OperationType::Mix => "ARG* mixed",
            OperationType::Remove => "ARG0 taken out of ARG1",
            OperationType::TemperatureTreatment => "ARG* heated or cooled",
            OperationType::Time => "wait after acting on ARG0",
            OperationType::Transfer => "ARG* moved to site",
            OperationType::Wash => "ARG0 washed with ARG1",
        }
    }
}

impl ArgumentType {
    pub const ALL: [ArgumentType; 8] = [
        ArgumentType::Reagent,
        ArgumentType::Measurement,
        ArgumentType::Setting,
        ArgumentType::Location,
        ArgumentType::Modifier,
        ArgumentType::Device,
        ArgumentType::Method,
        ArgumentType::Seal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArgumentType::Reagent => "reagent",
            ArgumentType::Measurement => "measurement",
            ArgumentType::Setting => "setting",
            ArgumentType::Location => "location",
            ArgumentType::Modifier => "modifier",
            ArgumentType::Device => "device",
            ArgumentType::Method => "method",
            ArgumentType::Seal => "seal",
        }
    }

    /// Physical objects: reagent, device, seal and location.
    pub fn is_object(self) -> bool {
        matches!(self, ArgumentType::Reagent | ArgumentType::Device | ArgumentType::Seal | ArgumentType::Location)
    }
}

impl fmt::Display for OperationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for ArgumentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OperationType {
    type Err = OntologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OperationType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| OntologyError::UnknownOperationType(s.to_string()))
    }
}

impl FromStr for ArgumentType {
    type Err = OntologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ArgumentType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| OntologyError::UnknownArgumentType(s.to_string()))
    }
}

/// The type a node is grounded to. Serializes as `{"operation": "mix"}`
/// or `{"argument": "reagent"}`; the wrapper disambiguates `seal`, which
/// names both an operation and an argument type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grounding {
    Operation(OperationType),
    Argument(ArgumentType),
}

impl Grounding {
    pub fn is_operation(self) -> bool {
        matches!(self, Grounding::Operation(_))
    }

    pub fn operation(self) -> Option<OperationType> {
        match self {
            Grounding::Operation(op) => Some(op),
            Grounding::Argument(_) => None,
        }
    }

    pub fn argument(self) -> Option<ArgumentType> {
        match self {
            Grounding::Argument(arg) => Some(arg),
            Grounding::Operation(_) => None,
        }
    }

    pub fn is_object(self) -> bool {
        self.argument().is_some_and(ArgumentType::is_object)
    }

    pub fn type_name(self) -> &'static str {
        match self {
            Grounding::Operation(op) => op.as_str(),
            Grounding::Argument(arg) => arg.as_str(),
        }
    }
}

impl fmt::Display for Grounding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Grounding::Operation(op) => write!(f, "{op} operation"),
            Grounding::Argument(arg) => write!(f, "{arg}"),
        }
    }
}

/// Outcome of an edge legality check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Legality {
    pub legal: bool,
    /// Legal only under the relaxed setting/measure/usage targets.
    pub relaxed: bool,
    /// Name of the rule that decided the outcome.
    pub rule: &'static str,
    pub message: String,
}

impl Legality {
    fn ok(rule: &'static str) -> Self {
        Legality { legal: true, relaxed: false, rule, message: String::new() }
    }

    fn relaxed(rule: &'static str, message: String) -> Self {
        Legality { legal: true, relaxed: true, rule, message }
    }

    fn reject(rule: &'static str, message: String) -> Self {
        Legality { legal: false, relaxed: false, rule, message }
    }
}

/// Checks an `(source, role, target)` triple, with the source being the
/// dependent (argument, modifier, earlier operation) and the target the
/// head it attaches to.
pub fn edge_legal(source: Grounding, role: Role, target: Grounding) -> Legality {
    use Grounding::{Argument, Operation};

    match role {
        Role::Arg0 | Role::Arg1 | Role::Arg2 => {
            let Operation(op) = target else {
                return Legality::reject("core-target", format!("{role} must attach to an operation, not {target}"));
            };
            if op == OperationType::Seal && role == Role::Arg1 {
                return if source == Argument(ArgumentType::Seal) {
                    Legality::ok("seal-arg1")
                } else {
                    Legality::reject("seal-arg1", format!("ARG1 of seal must be seal entity, got {source}"))
                };
            }
            if source.is_object() {
                Legality::ok("core-source")
            } else {
                Legality::reject(
                    "core-source",
                    format!("{role} source must be an object (reagent, device, seal, location), got {source}"),
                )
            }
        }
        Role::Site => {
            if !target.is_operation() {
                Legality::reject("site-target", format!("site must attach to an operation, not {target}"))
            } else if !source.is_object() {
                Legality::reject("site-source", format!("site source must be an object, got {source}"))
            } else {
                Legality::ok("site")
            }
        }
        Role::Succ => {
            if source.is_operation() && target.is_operation() {
                Legality::ok("succ")
            } else {
                Legality::reject("succ", format!("succ must join two operations, got {source} -> {target}"))
            }
        }
        Role::CoRef | Role::LocatedAt | Role::PartOf => {
            if source.is_object() && target.is_object() {
                Legality::ok("object-object")
            } else {
                Legality::reject("object-object", format!("{role} must join two objects, got {source} -> {target}"))
            }
        }
        Role::Measure | Role::Setting => {
            let expected = if role == Role::Measure { ArgumentType::Measurement } else { ArgumentType::Setting };
            if source != Argument(expected) {
                return Legality::reject("value-source", format!("{role} source must be {expected}, got {source}"));
            }
            if target.is_object() {
                Legality::ok("value-target")
            } else if target.is_operation() {
                Legality::relaxed("relaxed-target", format!("{role} attached to {target} instead of an object"))
            } else {
                Legality::reject("value-target", format!("{role} target must be an object, got {target}"))
            }
        }
        Role::Usage => {
            if !(source == Argument(ArgumentType::Method) || source.is_object()) {
                return Legality::reject(
                    "usage-source",
                    format!("usage source must be a method or object, got {source}"),
                );
            }
            if target.is_operation() {
                Legality::ok("usage-target")
            } else if target.is_object() {
                Legality::relaxed("relaxed-target", format!("usage attached to {target} instead of an operation"))
            } else {
                Legality::reject("usage-target", format!("usage target must be an operation, got {target}"))
            }
        }
        Role::Modifier => {
            if source != Argument(ArgumentType::Modifier) {
                return Legality::reject(
                    "modifier-source",
                    format!("modifier source must be a modifier, got {source}"),
                );
            }
            if target.is_object() || target.is_operation() || target == Argument(ArgumentType::Measurement) {
                Legality::ok("modifier-target")
            } else {
                Legality::reject(
                    "modifier-target",
                    format!("modifier must attach to an object, operation or measurement, got {target}"),
                )
            }
        }
    }
}

/// Roles an operation must have before it can be executed.
pub fn required_roles(op: OperationType) -> &'static [Role] {
    match op {
        OperationType::Transfer => &[Role::Arg0, Role::Site],
        OperationType::Convert => &[Role::Arg0, Role::Arg1],
        _ => &[Role::Arg0],
    }
}

/// Autoprotocol instructions an operation type maps to, empty when there is
/// no counterpart.
pub fn ap_instructions(op: OperationType) -> &'static [&'static str] {
    match op {
        OperationType::Spin => &["Spin"],
        OperationType::Convert => &[],
        OperationType::Seal => &["Seal", "Cover"],
        OperationType::Create => &["Oligosynthesize", "Provision"],
        OperationType::General => &[],
        OperationType::Destroy => &[],
        OperationType::Measure => &[
            "Absorbance",
            "Fluorescence",
            "Luminescence",
            "IlluminaSeq",
            "SangerSeq",
            "MeasureConcentration",
            "MeasureMass",
            "MeasureVolume",
            "CountCells",
            "Spectrophotometry",
            "FlowCytometry",
            "FlowAnalyze",
            "ImagePlate",
        ],
        OperationType::Mix => &["Agitate"],
        OperationType::Remove => &["Unseal", "Uncover"],
        OperationType::TemperatureTreatment => &["Thermocycle", "Incubate", "FlashFreeze"],
        OperationType::Transfer => {
            &["AcousticTransfer", "MagneticTransfer", "Dispense", "Provision", "LiquidHandle", "Autopick"]
        }
        OperationType::Wash => &[],
        OperationType::Time => &[],
    }
}

/// Fraction of operations that are not `general`.
pub fn coverage_fraction(ops: &[OperationType]) -> Result<f64, OntologyError> {
    if ops.is_empty() {
        return Err(OntologyError::EmptyOperationList);
    }
    let known = ops.iter().filter(|op| **op != OperationType::General).count();
    Ok(known as f64 / ops.len() as f64)
}

/// For each threshold, the fraction of protocols whose coverage is at
/// least that threshold.
pub fn coverage_curve(per_protocol: &[f64], thresholds: &[f64]) -> Vec<(f64, f64)> {
    thresholds
        .iter()
        .map(|&y| {
            let share = if per_protocol.is_empty() {
                0.0
            } else {
                per_protocol.iter().filter(|&&c| c >= y).count() as f64 / per_protocol.len() as f64
            };
            (y, share)
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct OperationEntry {
    pub name: &'static str,
    pub required_roles: Vec<Role>,
    pub semantics: &'static str,
    pub autoprotocol: &'static [&'static str],
}

#[derive(Debug, Serialize)]
pub struct RoleEntry {
    pub name: Role,
    pub category: &'static str,
    pub sources: &'static str,
    pub targets: &'static str,
}

/// Dump of the compiled-in tables, for the UI and the `export-ontology`
/// subcommand.
#[derive(Debug, Serialize)]
pub struct OntologyExport {
    pub operation_types: Vec<OperationEntry>,
    pub argument_types: Vec<&'static str>,
    pub object_types: Vec<&'static str>,
    pub roles: Vec<RoleEntry>,
}

pub fn export() -> OntologyExport {
    let roles = Role::ALL
        .into_iter()
        .map(|role| {
            let (sources, targets) = match role {
                Role::Arg0 | Role::Arg1 | Role::Arg2 => ("object (ARG1 of seal: seal)", "operation"),
                Role::Site => ("object", "operation"),
                Role::CoRef | Role::LocatedAt | Role::PartOf => ("object", "object"),
                Role::Measure => ("measurement", "object (relaxed: operation)"),
                Role::Setting => ("setting", "object (relaxed: operation)"),
                Role::Usage => ("method, object", "operation (relaxed: object)"),
                Role::Modifier => ("modifier", "object, operation, measurement"),
                Role::Succ => ("operation", "operation"),
            };
            RoleEntry { name: role, category: role.category().as_str(), sources, targets }
        })
        .collect();
    OntologyExport {
        operation_types: OperationType::ALL
            .into_iter()
            .map(|op| OperationEntry {
                name: op.as_str(),
                required_roles: required_roles(op).to_vec(),
                semantics: op.core_role_semantics(),
                autoprotocol: ap_instructions(op),
            })
            .collect(),
        argument_types: ArgumentType::ALL.into_iter().map(ArgumentType::as_str).collect(),
        object_types: ArgumentType::ALL.into_iter().filter(|a| a.is_object()).map(ArgumentType::as_str).collect(),
        roles,
    }
}
