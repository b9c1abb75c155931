//! Lowering of validated PEGs to ordered Autoprotocol-style instructions.
//!
//! Each mapped operation becomes one instruction named after the first
//! Autoprotocol counterpart of its type. Values attached through `setting`
//! and `measure` become parameters; vague modifiers and required values
//! that the protocol never states become holes for a human to fill.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{PegGraph, Role};
use crate::ontology::{ap_instructions, ArgumentType, Grounding, OperationType};
use crate::validator::{self, Diagnostic};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LoweringError {
    #[error("graph has {} validation error(s)", .0.len())]
    Invalid(Vec<Diagnostic>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HoleReason {
    VagueModifier,
    MissingSetting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hole {
    pub instruction: usize,
    pub parameter: String,
    pub reason: HoleReason,
    /// The modifier node behind a vague-modifier hole; absent for missing
    /// settings.
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameter {
    Value {
        text: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        parsed: Option<Quantity>,
        source: String,
    },
    Hole {
        reason: HoleReason,
        #[serde(skip_serializing_if = "Option::is_none")]
        source: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRef {
    pub node: String,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApInstruction {
    pub order_index: usize,
    pub name: String,
    /// Other Autoprotocol instructions the operation type maps to.
    pub alt: Vec<String>,
    pub op_node: String,
    pub op_type: OperationType,
    pub operands: BTreeMap<String, Vec<EntityRef>>,
    pub parameters: BTreeMap<String, Parameter>,
}

impl ApInstruction {
    pub fn is_mapped(&self) -> bool {
        !self.name.starts_with("unmapped:")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Program {
    pub document: String,
    pub instructions: Vec<ApInstruction>,
    pub holes: Vec<Hole>,
}

/// Values an instruction must carry before it can run.
fn required_parameters(op: OperationType) -> &'static [&'static str] {
    match op {
        OperationType::TemperatureTreatment => &["temperature", "duration"],
        OperationType::Spin => &["speed", "duration"],
        OperationType::Mix => &["speed"],
        _ => &[],
    }
}

/// The instruction an operation lowers to. Where the mapping offers a
/// general-purpose instruction next to specialised ones (plain incubation
/// versus thermocycling, pipetting versus acoustic transfer) the general one
/// is chosen; otherwise the first listed.
fn preferred_instruction(op: OperationType, mapped: &'static [&'static str]) -> Option<&'static str> {
    let general = match op {
        OperationType::TemperatureTreatment => Some("Incubate"),
        OperationType::Transfer => Some("LiquidHandle"),
        _ => None,
    };
    general.filter(|g| mapped.contains(g)).or_else(|| mapped.first().copied())
}

/// Parses `<number>[ ]<unit>`, e.g. `30 minutes`, `4 µl`, `16°C`.
pub fn parse_quantity(text: &str) -> Option<Quantity> {
    let t = text.trim();
    let split = t
        .char_indices()
        .find(|(_, c)| !(c.is_ascii_digit() || *c == '.' || *c == ','))
        .map(|(i, _)| i)
        .unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    if num.is_empty() {
        return None;
    }
    let value: f64 = num.replace(',', "").parse().ok()?;
    let unit = unit.trim();
    if unit.is_empty() || unit.chars().any(char::is_whitespace) && !unit.starts_with('x') {
        return None;
    }
    Some(Quantity { value, unit: unit.to_string() })
}

/// Parameter name suggested by a value's unit or wording.
fn classify(text: &str) -> Option<&'static str> {
    let lower = text.to_lowercase();
    let words = ["overnight", "room temperature", "on ice"];
    match words.iter().find(|w| lower.contains(*w)) {
        Some(&"overnight") => return Some("duration"),
        Some(_) => return Some("temperature"),
        None => {}
    }
    let unit = parse_quantity(text)?.unit.to_lowercase();
    let unit = unit.as_str();
    let time: &[&str] = &[
        "s", "sec", "secs", "second", "seconds", "min", "mins", "minute", "minutes", "h", "hr", "hrs", "hour", "hours",
        "day", "days",
    ];
    let temperature: &[&str] = &["°c", "ºc", "c", "°f", "k", "degrees"];
    let speed: &[&str] = &["rpm", "xg", "x g", "×g", "× g"];
    let volume: &[&str] = &["l", "ml", "µl", "μl", "ul", "nl"];
    let mass: &[&str] = &["g", "kg", "mg", "µg", "μg", "ug", "ng", "pg"];
    let concentration: &[&str] = &["m", "mm", "µm", "μm", "um", "nm", "%", "mg/ml", "x"];
    [
        (time, "duration"),
        (temperature, "temperature"),
        (speed, "speed"),
        (volume, "volume"),
        (mass, "mass"),
        (concentration, "concentration"),
    ]
    .into_iter()
    .find(|(units, _)| units.contains(&unit))
    .map(|(_, name)| name)
}

fn insert_unique(params: &mut BTreeMap<String, Parameter>, name: &str, value: Parameter) -> String {
    let mut key = name.to_string();
    let mut n = 2;
    while params.contains_key(&key) {
        key = format!("{name}_{n}");
        n += 1;
    }
    params.insert(key.clone(), value);
    key
}

/// Compiles a graph that passes validation into a program.
pub fn lower(g: &PegGraph) -> Result<Program, LoweringError> {
    let errors: Vec<Diagnostic> = validator::validate(g).into_iter().filter(Diagnostic::is_error).collect();
    if !errors.is_empty() {
        return Err(LoweringError::Invalid(errors));
    }
    let doc_order = |ids: &mut Vec<String>| ids.sort_by_key(|id| g.document().order_key(&g.node(id).unwrap().mention));
    let fillers = |head: &str, role: Role| {
        let mut v: Vec<String> =
            g.edges().iter().filter(|e| e.target == head && e.role == role).map(|e| e.source.clone()).collect();
        doc_order(&mut v);
        v
    };
    let entity = |id: &str| EntityRef {
        node: id.to_string(),
        surface: g.mention_of(id).map(|m| m.surface.clone()).unwrap_or_default(),
    };

    let mut instructions = Vec::new();
    let mut holes = Vec::new();
    for (order_index, op_id) in g.succ_order().into_iter().enumerate() {
        let op = g.grounding(&op_id).and_then(Grounding::operation).expect("succ order holds operations");
        let mapped = ap_instructions(op);
        let chosen = preferred_instruction(op, mapped);
        let name = chosen.map(str::to_string).unwrap_or_else(|| format!("unmapped:{op}"));

        let mut operands: BTreeMap<String, Vec<EntityRef>> = BTreeMap::new();
        for (role, key) in
            [(Role::Arg0, "ARG0"), (Role::Arg1, "ARG1"), (Role::Arg2, "ARG2"), (Role::Site, "destination")]
        {
            let ents: Vec<EntityRef> = fillers(&op_id, role).iter().map(|id| entity(id)).collect();
            if !ents.is_empty() {
                operands.insert(key.to_string(), ents);
            }
        }

        let mut parameters = BTreeMap::new();
        // Values on the operation itself, then values on its object operands.
        let mut heads = vec![op_id.clone()];
        for role in [Role::Arg0, Role::Arg1, Role::Arg2, Role::Site] {
            heads.extend(fillers(&op_id, role));
        }
        for head in &heads {
            for role in [Role::Setting, Role::Measure] {
                for value_node in fillers(head, role) {
                    let text = g.mention_of(&value_node).map(|m| m.surface.clone()).unwrap_or_default();
                    let pname = classify(&text).unwrap_or(role.as_str());
                    insert_unique(
                        &mut parameters,
                        pname,
                        Parameter::Value { parsed: parse_quantity(&text), text, source: value_node },
                    );
                }
            }
        }

        if !mapped.is_empty() {
            let mut unfilled: Vec<&str> =
                required_parameters(op).iter().copied().filter(|p| !parameters.contains_key(*p)).collect();
            for modifier in fillers(&op_id, Role::Modifier) {
                let is_modifier = g.grounding(&modifier) == Some(Grounding::Argument(ArgumentType::Modifier));
                if !is_modifier {
                    continue;
                }
                let pname = if unfilled.is_empty() { "modifier" } else { unfilled.remove(0) };
                let key = insert_unique(
                    &mut parameters,
                    pname,
                    Parameter::Hole { reason: HoleReason::VagueModifier, source: Some(modifier.clone()) },
                );
                holes.push(Hole {
                    instruction: order_index,
                    parameter: key,
                    reason: HoleReason::VagueModifier,
                    source: Some(modifier),
                });
            }
            for pname in unfilled {
                parameters
                    .insert(pname.to_string(), Parameter::Hole { reason: HoleReason::MissingSetting, source: None });
                holes.push(Hole {
                    instruction: order_index,
                    parameter: pname.to_string(),
                    reason: HoleReason::MissingSetting,
                    source: None,
                });
            }
        }

        instructions.push(ApInstruction {
            order_index,
            name,
            alt: mapped.iter().filter(|m| Some(**m) != chosen).map(|s| s.to_string()).collect(),
            op_node: op_id,
            op_type: op,
            operands,
            parameters,
        });
    }
    Ok(Program { document: g.document().id().to_string(), instructions, holes })
}

/// Canonical JSON bytes: keys sorted, instructions in order, trailing newline.
pub fn emit_json(program: &Program) -> Vec<u8> {
    let mut text = crate::corpus::canonical_json(program);
    text.push('\n');
    text.into_bytes()
}
