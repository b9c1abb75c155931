//! Command-driven annotation engine.
//!
//! Annotators ground mentions, link arguments to operations and execute
//! operations one at a time. The session tracks the state of every lab
//! entity, rejects commands the ontology forbids and records the execution
//! order as a `succ` chain. A session is a pure function of its command
//! log, so logs are the persistent form of a session.
//!
//! Log grammar, one command per line, `#` starts a comment:
//!
//! ```text
//! ground <mention-id> <type>
//! link <head-id> <role> <dependent-id>
//! exec <operation-id>
//! coref <mention-id> <antecedent-id>
//! undo | lint | show
//! ```
//!
//! Nodes created by `ground` take the id of their mention.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::mem;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{build_graph, Document, Edge, MentionKind, Node, PegGraph, Role};
use crate::ontology::{edge_legal, required_roles, ArgumentType, Grounding, OperationType};
use crate::validator::{self, Diagnostic, LintReport, Locus};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("empty command")]
    Empty,
    #[error("unknown command `{0}`")]
    UnknownVerb(String),
    #[error("`{verb}` expects {expected} argument(s), got {got}")]
    Arity { verb: String, expected: usize, got: usize },
    #[error("unknown mention `{0}`")]
    UnknownMention(String),
    #[error("`{name}` is not a valid {kind} type")]
    UnknownType { name: String, kind: MentionKind },
    #[error(transparent)]
    UnknownRole(#[from] crate::graph::UnknownRole),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    Ground { mention: String, grounding: Grounding },
    Link { head: String, role: Role, dependent: String },
    Exec { op: String },
    Coref { mention: String, antecedent: String },
    Undo,
    Lint,
    Show,
}

impl Command {
    /// Parses one log line. The document is needed to resolve `seal`,
    /// which names both an operation and an argument type.
    pub fn parse(line: &str, doc: &Document) -> Result<Command, ParseError> {
        let words: Vec<&str> = line.split_whitespace().collect();
        let (&verb, args) = words.split_first().ok_or(ParseError::Empty)?;
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(ParseError::Arity { verb: verb.to_string(), expected: n, got: args.len() })
            }
        };
        match verb {
            "ground" => {
                arity(2)?;
                let mention = doc.mention(args[0]).ok_or_else(|| ParseError::UnknownMention(args[0].to_string()))?;
                let grounding = parse_grounding(args[1], mention.kind)?;
                Ok(Command::Ground { mention: args[0].to_string(), grounding })
            }
            "link" => {
                arity(3)?;
                Ok(Command::Link { head: args[0].to_string(), role: args[1].parse()?, dependent: args[2].to_string() })
            }
            "exec" => {
                arity(1)?;
                Ok(Command::Exec { op: args[0].to_string() })
            }
            "coref" => {
                arity(2)?;
                Ok(Command::Coref { mention: args[0].to_string(), antecedent: args[1].to_string() })
            }
            "undo" => arity(0).map(|_| Command::Undo),
            "lint" => arity(0).map(|_| Command::Lint),
            "show" => arity(0).map(|_| Command::Show),
            other => Err(ParseError::UnknownVerb(other.to_string())),
        }
    }

    /// Whether the command can change the session.
    pub fn is_mutating(&self) -> bool {
        !matches!(self, Command::Lint | Command::Show)
    }
}

pub fn parse_grounding(name: &str, kind: MentionKind) -> Result<Grounding, ParseError> {
    let unknown = || ParseError::UnknownType { name: name.to_string(), kind };
    match kind {
        MentionKind::Operation => name.parse().map(Grounding::Operation).map_err(|_| unknown()),
        MentionKind::Argument => name.parse().map(Grounding::Argument).map_err(|_| unknown()),
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Command::Ground { mention, grounding } => write!(f, "ground {mention} {}", grounding.type_name()),
            Command::Link { head, role, dependent } => write!(f, "link {head} {role} {dependent}"),
            Command::Exec { op } => write!(f, "exec {op}"),
            Command::Coref { mention, antecedent } => write!(f, "coref {mention} {antecedent}"),
            Command::Undo => f.write_str("undo"),
            Command::Lint => f.write_str("lint"),
            Command::Show => f.write_str("show"),
        }
    }
}

/// Tracked state of one argument entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityState {
    pub exists: bool,
    pub destroyed: bool,
    pub sealed: bool,
    pub location: Option<String>,
    pub contents: BTreeSet<String>,
    /// Entities this one has been mixed with.
    pub mixed_with: BTreeSet<String>,
    /// Set by `convert`: the entity this one became.
    pub converted_to: Option<String>,
}

impl Default for EntityState {
    fn default() -> Self {
        EntityState {
            exists: true,
            destroyed: false,
            sealed: false,
            location: None,
            contents: BTreeSet::new(),
            mixed_with: BTreeSet::new(),
            converted_to: None,
        }
    }
}

/// World state: one entry per grounded argument node.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabState {
    pub entities: BTreeMap<String, EntityState>,
}

impl LabState {
    pub fn get(&self, id: &str) -> Option<&EntityState> {
        self.entities.get(id)
    }

    pub fn is_destroyed(&self, id: &str) -> bool {
        self.entities.get(id).is_some_and(|e| e.destroyed)
    }

    /// Whether `inner` is `outer` or lies (transitively) inside it.
    pub fn is_within(&self, inner: &str, outer: &str) -> bool {
        let mut cur = Some(inner.to_string());
        let mut steps = 0;
        while let Some(c) = cur {
            if c == outer {
                return true;
            }
            steps += 1;
            if steps > self.entities.len() {
                return false;
            }
            cur = self.entities.get(&c).and_then(|e| e.location.clone());
        }
        false
    }

    /// All entities transitively inside `id`.
    pub fn transitive_contents(&self, id: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut stack = vec![id.to_string()];
        while let Some(c) = stack.pop() {
            for child in self.entities.get(&c).map(|e| &e.contents).into_iter().flatten() {
                if out.insert(child.clone()) {
                    stack.push(child.clone());
                }
            }
        }
        out
    }

    fn entity(&mut self, id: &str) -> &mut EntityState {
        self.entities.entry(id.to_string()).or_default()
    }

    fn detach(&mut self, id: &str) {
        if let Some(parent) = self.entity(id).location.take() {
            self.entity(&parent).contents.remove(id);
        }
    }

    fn place(&mut self, id: &str, site: &str) {
        self.detach(id);
        self.entity(id).location = Some(site.to_string());
        self.entity(site).contents.insert(id.to_string());
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
struct Draft {
    state: LabState,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    exec_order: Vec<String>,
}

impl Draft {
    fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    fn is_executed(&self, op: &str) -> bool {
        self.exec_order.iter().any(|o| o == op)
    }

    /// Dependents attached to `head` through `role`.
    fn fillers(&self, head: &str, role: Role) -> Vec<String> {
        self.edges.iter().filter(|e| e.target == head && e.role == role).map(|e| e.source.clone()).collect()
    }
}

/// Result of issuing one command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    /// The command was applied (or, for queries, answered).
    pub accepted: bool,
    /// The command changed the session and was appended to the log.
    pub changed: bool,
    pub diagnostics: Vec<Diagnostic>,
    /// Text produced by `show`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lint: Option<LintReport>,
}

impl Outcome {
    fn rejected(diagnostic: Diagnostic) -> Self {
        Outcome { accepted: false, changed: false, diagnostics: vec![diagnostic], output: None, lint: None }
    }

    fn applied(diagnostics: Vec<Diagnostic>) -> Self {
        Outcome { accepted: true, changed: true, diagnostics, output: None, lint: None }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FinalizeError {
    #[error("operations not executed: {}", .0.join(", "))]
    Unexecuted(Vec<String>),
    #[error("draft fails validation with {} error(s)", .0.len())]
    Invalid(Vec<Diagnostic>),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("replay stopped at command {index}: {}", .diagnostics.iter().map(|d| d.message.as_str()).collect::<Vec<_>>().join("; "))]
pub struct ReplayError {
    pub index: usize,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone)]
pub struct Finalized {
    pub graph: PegGraph,
    pub lint: LintReport,
}

/// One annotation session over a document.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    document: Arc<Document>,
    log: Vec<Command>,
    draft: Draft,
    history: Vec<Draft>,
}

const VERBS: [&str; 7] = ["ground", "link", "exec", "coref", "undo", "lint", "show"];

impl Session {
    pub fn new(document: impl Into<Arc<Document>>) -> Self {
        Session { document: document.into(), log: Vec::new(), draft: Draft::default(), history: Vec::new() }
    }

    pub fn document(&self) -> &Document {
        &self.document
    }

    pub fn log(&self) -> &[Command] {
        &self.log
    }

    /// The log in its line-oriented file form.
    pub fn log_text(&self) -> String {
        self.log.iter().map(|c| format!("{c}\n")).collect()
    }

    pub fn state(&self) -> &LabState {
        &self.draft.state
    }

    pub fn exec_order(&self) -> &[String] {
        &self.draft.exec_order
    }

    pub fn is_executed(&self, op: &str) -> bool {
        self.draft.is_executed(op)
    }

    /// The graph built so far.
    pub fn draft(&self) -> PegGraph {
        build_graph(self.document.clone(), self.draft.nodes.clone(), self.draft.edges.clone())
            .expect("simulator drafts are structurally valid")
    }

    /// Canonical JSON of the mutable session contents (graph, state and
    /// execution order), used to compare sessions byte for byte.
    pub fn fingerprint(&self) -> String {
        serde_json::to_string(&self.draft).expect("draft serializes")
    }

    pub fn issue_line(&mut self, line: &str) -> Result<Outcome, ParseError> {
        let cmd = Command::parse(line, &self.document)?;
        Ok(self.issue(cmd))
    }

    pub fn issue(&mut self, cmd: Command) -> Outcome {
        match &cmd {
            Command::Lint => {
                let report = validator::lint(&self.draft());
                return Outcome {
                    accepted: true,
                    changed: false,
                    diagnostics: vec![],
                    output: None,
                    lint: Some(report),
                };
            }
            Command::Show => {
                return Outcome {
                    accepted: true,
                    changed: false,
                    diagnostics: vec![],
                    output: Some(self.render_state()),
                    lint: None,
                };
            }
            Command::Undo => {
                return match self.history.pop() {
                    Some(prev) => {
                        self.draft = prev;
                        self.log.push(cmd);
                        Outcome::applied(vec![])
                    }
                    None => Outcome::rejected(Diagnostic::error("nothing-to-undo", Locus::Document, "nothing to undo")),
                };
            }
            _ => {}
        }
        let mut next = self.draft.clone();
        let result = match &cmd {
            Command::Ground { mention, grounding } => self.ground(&mut next, mention, *grounding),
            Command::Link { head, role, dependent } => self.check_link(head, *role, dependent).inspect(|_| {
                next.edges.push(Edge::new(dependent.clone(), *role, head.clone()));
            }),
            Command::Coref { mention, antecedent } => self.check_link(antecedent, Role::CoRef, mention).inspect(|_| {
                next.edges.push(Edge::new(mention.clone(), Role::CoRef, antecedent.clone()));
            }),
            Command::Exec { op } => self.exec(&mut next, op),
            Command::Undo | Command::Lint | Command::Show => unreachable!(),
        };
        match result {
            Ok(diags) => {
                self.history.push(mem::replace(&mut self.draft, next));
                self.log.push(cmd);
                Outcome::applied(diags)
            }
            Err(diags) => Outcome { accepted: false, changed: false, diagnostics: diags, output: None, lint: None },
        }
    }

    fn ground(
        &self,
        next: &mut Draft,
        mention_id: &str,
        grounding: Grounding,
    ) -> Result<Vec<Diagnostic>, Vec<Diagnostic>> {
        let locus = Locus::Mention(mention_id.to_string());
        let Some(mention) = self.document.mention(mention_id) else {
            return Err(vec![Diagnostic::error("unknown-mention", locus, format!("unknown mention `{mention_id}`"))]);
        };
        if self.draft.nodes.iter().any(|n| n.mention == mention_id) {
            return Err(vec![Diagnostic::error(
                "already-grounded",
                locus,
                format!("`{mention_id}` is already grounded"),
            )]);
        }
        let expected = if grounding.is_operation() { MentionKind::Operation } else { MentionKind::Argument };
        if mention.kind != expected {
            return Err(vec![Diagnostic::error(
                "kind-mismatch",
                locus,
                format!("`{}` is an {} mention and cannot be a {grounding}", mention.surface, mention.kind),
            )]);
        }
        next.nodes.push(Node::new(mention_id, mention_id, grounding));
        if !grounding.is_operation() {
            next.state.entities.insert(mention_id.to_string(), EntityState::default());
        }
        Ok(vec![])
    }

    /// Checks a prospective `(dependent, role, head)` edge. Returns the
    /// warnings to attach on success.
    fn check_link(&self, head: &str, role: Role, dependent: &str) -> Result<Vec<Diagnostic>, Vec<Diagnostic>> {
        let edge = Edge::new(dependent, role, head);
        let locus = Locus::Edge(edge.clone());
        let err = |code: &str, msg: String| Err(vec![Diagnostic::error(code, locus.clone(), msg)]);
        let (Some(h), Some(d)) = (self.draft.node(head), self.draft.node(dependent)) else {
            let missing = if self.draft.node(head).is_none() { head } else { dependent };
            return err("unknown-node", format!("`{missing}` has not been grounded"));
        };
        if role == Role::Succ {
            return err("succ-reserved", "succ edges follow execution order and cannot be linked".into());
        }
        if head == dependent {
            return err("self-link", format!("`{head}` cannot be linked to itself"));
        }
        if h.grounding.is_operation() && self.draft.is_executed(head) {
            return err("executed-operation", format!("`{head}` has already been executed"));
        }
        for id in [head, dependent] {
            if self.draft.state.is_destroyed(id) {
                return err("destroyed-entity", format!("`{id}` has been destroyed"));
            }
        }
        if self.draft.edges.contains(&edge) {
            return err("duplicate-edge", format!("{edge} already exists"));
        }
        let verdict = edge_legal(d.grounding, role, h.grounding);
        if !verdict.legal {
            return err("illegal-edge", verdict.message);
        }
        if verdict.relaxed {
            return Ok(vec![Diagnostic::warning("relaxed-target", locus, verdict.message)]);
        }
        Ok(vec![])
    }

    fn exec_blockers(&self, op_id: &str) -> Result<OperationType, Vec<Diagnostic>> {
        let locus = Locus::Node(op_id.to_string());
        let Some(node) = self.draft.node(op_id) else {
            return Err(vec![Diagnostic::error("unknown-node", locus, format!("`{op_id}` has not been grounded"))]);
        };
        let Some(op) = node.grounding.operation() else {
            return Err(vec![Diagnostic::error("not-an-operation", locus, format!("`{op_id}` is not an operation"))]);
        };
        if self.draft.is_executed(op_id) {
            return Err(vec![Diagnostic::error(
                "executed-operation",
                locus,
                format!("`{op_id}` has already been executed"),
            )]);
        }
        let missing: Vec<Role> =
            required_roles(op).iter().copied().filter(|r| self.draft.fillers(op_id, *r).is_empty()).collect();
        if !missing.is_empty() {
            let list = missing.iter().map(|r| r.as_str()).collect::<Vec<_>>().join(", ");
            return Err(vec![Diagnostic::warning(
                "missing-argument",
                locus,
                format!("missing argument: {op} `{op_id}` needs {list}"),
            )]);
        }
        for e in self.draft.edges.iter().filter(|e| e.target == op_id) {
            if self.draft.state.is_destroyed(&e.source) {
                return Err(vec![Diagnostic::error(
                    "destroyed-entity",
                    locus,
                    format!("`{}` has been destroyed", e.source),
                )]);
            }
        }
        Ok(op)
    }

    fn exec(&self, next: &mut Draft, op_id: &str) -> Result<Vec<Diagnostic>, Vec<Diagnostic>> {
        let op = self.exec_blockers(op_id)?;
        let locus = Locus::Node(op_id.to_string());
        let doc = &self.document;
        let sorted = |mut v: Vec<String>| {
            v.sort_by_key(|id| doc.order_key(id));
            v
        };
        let core: Vec<String> =
            sorted([Role::Arg0, Role::Arg1, Role::Arg2].into_iter().flat_map(|r| next.fillers(op_id, r)).collect());
        let arg0 = sorted(next.fillers(op_id, Role::Arg0));
        let arg1 = sorted(next.fillers(op_id, Role::Arg1));
        let sites = sorted(next.fillers(op_id, Role::Site));
        let mut warnings = Vec::new();
        let state = &mut next.state;

        match op {
            OperationType::Transfer => {
                let site = &sites[0];
                for mover in &core {
                    if state.is_within(site, mover) {
                        return Err(vec![Diagnostic::error(
                            "containment-cycle",
                            locus,
                            format!("cannot move `{mover}` into `{site}`, which it contains"),
                        )]);
                    }
                }
                if state.get(site).is_some_and(|s| s.sealed) {
                    warnings.push(Diagnostic::warning(
                        "sealed-site",
                        locus.clone(),
                        format!("transfer into sealed `{site}`"),
                    ));
                }
                for mover in &core {
                    state.place(mover, site);
                }
            }
            OperationType::Destroy => {
                for id in &core {
                    state.detach(id);
                    let children: Vec<String> = mem::take(&mut state.entity(id).contents).into_iter().collect();
                    for child in children {
                        state.entity(&child).location = None;
                    }
                    let e = state.entity(id);
                    e.destroyed = true;
                    e.exists = false;
                }
            }
            OperationType::Create => {
                for id in &core {
                    state.entity(id).exists = true;
                }
            }
            OperationType::Seal => {
                for id in &arg0 {
                    state.entity(id).sealed = true;
                }
            }
            OperationType::Remove => {
                let is_seal = |id: &str| {
                    self.draft.node(id).map(|n| n.grounding) == Some(Grounding::Argument(ArgumentType::Seal))
                };
                for item in &arg0 {
                    if arg1.is_empty() {
                        state.detach(item);
                    }
                    for from in &arg1 {
                        if state.get(item).and_then(|e| e.location.as_deref()) == Some(from.as_str()) {
                            state.detach(item);
                        }
                        state.entity(from).contents.remove(item);
                        if is_seal(item) {
                            state.entity(from).sealed = false;
                        } else if is_seal(from) {
                            state.entity(item).sealed = false;
                        }
                    }
                }
            }
            OperationType::Mix => {
                let mut groups: Vec<BTreeSet<String>> = Vec::new();
                // Contents of a container that is mixed are mixed together.
                for id in &core {
                    let contents = state.transitive_contents(id);
                    if !contents.is_empty() {
                        groups.push(contents);
                    }
                }
                // Arguments sharing a location are mixed with each other.
                let mut by_location: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
                for id in &core {
                    if let Some(loc) = state.get(id).and_then(|e| e.location.clone()) {
                        by_location.entry(loc).or_default().insert(id.clone());
                    }
                }
                groups.extend(by_location.into_values().filter(|g| g.len() > 1));
                for group in groups {
                    for id in &group {
                        let others = group.iter().filter(|o| *o != id).cloned();
                        state.entity(id).mixed_with.extend(others);
                    }
                }
            }
            OperationType::Convert => {
                if let (Some(from), Some(to)) = (arg0.first(), arg1.first()) {
                    state.entity(from).converted_to = Some(to.clone());
                }
            }
            OperationType::TemperatureTreatment
            | OperationType::Time
            | OperationType::Measure
            | OperationType::Wash
            | OperationType::Spin
            | OperationType::General => {}
        }

        if let Some(prev) = next.exec_order.last() {
            next.edges.push(Edge::new(prev.clone(), Role::Succ, op_id));
        }
        next.exec_order.push(op_id.to_string());
        Ok(warnings)
    }

    /// Compiles the session into a graph once every operation has been
    /// executed. The result carries no validation errors.
    pub fn finalize(&self) -> Result<Finalized, FinalizeError> {
        let unexecuted: Vec<String> = self
            .draft
            .nodes
            .iter()
            .filter(|n| n.grounding.is_operation() && !self.draft.is_executed(&n.id))
            .map(|n| n.id.clone())
            .collect();
        if !unexecuted.is_empty() {
            return Err(FinalizeError::Unexecuted(unexecuted));
        }
        let graph = self.draft();
        let errors: Vec<Diagnostic> = validator::validate(&graph).into_iter().filter(Diagnostic::is_error).collect();
        if !errors.is_empty() {
            return Err(FinalizeError::Invalid(errors));
        }
        let lint = validator::lint(&graph);
        Ok(Finalized { graph, lint })
    }

    /// Legal completions of a partially typed command, as full lines.
    pub fn autocomplete(&self, prefix: &str) -> Vec<String> {
        let trailing_space = prefix.is_empty() || prefix.ends_with(char::is_whitespace);
        let mut words: Vec<&str> = prefix.split_whitespace().collect();
        let partial = if trailing_space { "" } else { words.pop().unwrap_or("") };
        let lines: Vec<String> = match words.as_slice() {
            [] => VERBS.iter().filter(|v| self.verb_available(v)).map(|v| v.to_string()).collect(),
            ["ground"] => self.rank(
                self.document
                    .mentions()
                    .iter()
                    .filter(|m| self.draft.node(&m.id).is_none())
                    .map(|m| (m.id.clone(), format!("ground {}", m.id)))
                    .collect(),
            ),
            ["ground", mention] => match self.document.mention(mention) {
                Some(m) if self.draft.node(mention).is_none() => {
                    let mut names: Vec<&str> = match m.kind {
                        MentionKind::Operation => OperationType::ALL.iter().map(|t| t.as_str()).collect(),
                        MentionKind::Argument => ArgumentType::ALL.iter().map(|t| t.as_str()).collect(),
                    };
                    if let Some(hint) = m.hint {
                        names.retain(|n| *n != hint.type_name());
                        names.insert(0, hint.type_name());
                    }
                    names.into_iter().map(|n| format!("ground {mention} {n}")).collect()
                }
                _ => vec![],
            },
            ["link"] => {
                let heads = self
                    .draft
                    .nodes
                    .iter()
                    .filter(|h| Role::ALL.iter().any(|r| !self.link_candidates(&h.id, *r).is_empty()))
                    .map(|h| (h.id.clone(), format!("link {}", h.id)))
                    .collect();
                self.rank(heads)
            }
            ["link", head] => Role::ALL
                .into_iter()
                .filter(|r| !self.link_candidates(head, *r).is_empty())
                .map(|r| format!("link {head} {r}"))
                .collect(),
            ["link", head, role] => match role.parse::<Role>() {
                Ok(r) => self.link_candidates(head, r).into_iter().map(|d| format!("link {head} {r} {d}")).collect(),
                Err(_) => vec![],
            },
            ["exec"] => {
                let ops = self
                    .draft
                    .nodes
                    .iter()
                    .filter(|n| n.grounding.is_operation() && self.exec_blockers(&n.id).is_ok())
                    .map(|n| (n.id.clone(), format!("exec {}", n.id)))
                    .collect();
                self.rank(ops)
            }
            ["coref"] => {
                let args = self
                    .draft
                    .nodes
                    .iter()
                    .filter(|n| !self.coref_candidates(&n.id).is_empty())
                    .map(|n| (n.id.clone(), format!("coref {}", n.id)))
                    .collect();
                self.rank(args)
            }
            ["coref", mention] => {
                self.coref_candidates(mention).into_iter().map(|a| format!("coref {mention} {a}")).collect()
            }
            _ => vec![],
        };
        let typed_prefix =
            if words.is_empty() { partial.to_string() } else { format!("{} {partial}", words.join(" ")) };
        lines.into_iter().filter(|l| l.starts_with(&typed_prefix)).collect()
    }

    fn verb_available(&self, verb: &str) -> bool {
        match verb {
            "undo" => !self.history.is_empty(),
            "ground" => self.document.mentions().iter().any(|m| self.draft.node(&m.id).is_none()),
            "exec" => !self.autocomplete("exec ").is_empty(),
            "link" => !self.autocomplete("link ").is_empty(),
            "coref" => !self.autocomplete("coref ").is_empty(),
            _ => true,
        }
    }

    fn rank(&self, mut items: Vec<(String, String)>) -> Vec<String> {
        items.sort_by_key(|(id, _)| self.document.order_key(id));
        items.into_iter().map(|(_, line)| line).collect()
    }

    /// Dependents that can legally fill `role` on `head`, in document order.
    pub fn link_candidates(&self, head: &str, role: Role) -> Vec<String> {
        if role == Role::CoRef {
            return vec![];
        }
        let items = self
            .draft
            .nodes
            .iter()
            .filter(|d| self.check_link(head, role, &d.id).is_ok())
            .map(|d| (d.id.clone(), d.id.clone()))
            .collect();
        self.rank(items)
    }

    fn coref_candidates(&self, mention: &str) -> Vec<String> {
        let items = self
            .draft
            .nodes
            .iter()
            .filter(|a| self.check_link(&a.id, Role::CoRef, mention).is_ok())
            .map(|a| (a.id.clone(), a.id.clone()))
            .collect();
        self.rank(items)
    }

    /// Plain-text view of the tracked entities.
    pub fn render_state(&self) -> String {
        let mut out = String::new();
        let mut ids: Vec<&String> = self.draft.state.entities.keys().collect();
        ids.sort_by_key(|id| self.document.order_key(id));
        for id in ids {
            let e = &self.draft.state.entities[id];
            let surface = self.document.mention(id).map(|m| m.surface.as_str()).unwrap_or(id);
            let mut flags = Vec::new();
            if e.destroyed {
                flags.push("destroyed".to_string());
            }
            if e.sealed {
                flags.push("sealed".to_string());
            }
            if let Some(loc) = &e.location {
                flags.push(format!("in {loc}"));
            }
            if !e.contents.is_empty() {
                flags.push(format!("holds {}", e.contents.iter().cloned().collect::<Vec<_>>().join(",")));
            }
            if !e.mixed_with.is_empty() {
                flags.push(format!("mixed with {}", e.mixed_with.iter().cloned().collect::<Vec<_>>().join(",")));
            }
            if let Some(to) = &e.converted_to {
                flags.push(format!("became {to}"));
            }
            out.push_str(&format!(
                "{id} \"{surface}\": {}\n",
                if flags.is_empty() { "-".into() } else { flags.join("; ") }
            ));
        }
        if !self.draft.exec_order.is_empty() {
            out.push_str(&format!("executed: {}\n", self.draft.exec_order.join(" -> ")));
        }
        out
    }
}

/// Re-issues every command of a log on a fresh session. Stops at the
/// first command that is rejected.
pub fn replay(document: impl Into<Arc<Document>>, log: &[Command]) -> Result<Session, ReplayError> {
    let mut session = Session::new(document);
    for (index, cmd) in log.iter().enumerate() {
        let outcome = session.issue(cmd.clone());
        if !outcome.accepted {
            return Err(ReplayError { index, diagnostics: outcome.diagnostics });
        }
    }
    Ok(session)
}

/// Parses a log file (one command per line, `#` comments) and replays it.
/// The reported index counts commands, not lines.
pub fn replay_script(document: impl Into<Arc<Document>>, script: &str) -> Result<Session, ReplayError> {
    let document = document.into();
    let mut commands = Vec::new();
    for line in script_lines(script) {
        match Command::parse(line, &document) {
            Ok(c) => commands.push(c),
            Err(e) => {
                return Err(ReplayError {
                    index: commands.len(),
                    diagnostics: vec![Diagnostic::error("parse", Locus::Command(commands.len()), e.to_string())],
                })
            }
        }
    }
    replay(document, &commands)
}

/// Non-empty, comment-stripped lines of a log file.
pub fn script_lines(script: &str) -> impl Iterator<Item = &str> {
    script.lines().map(|l| l.split('#').next().unwrap_or("").trim()).filter(|l| !l.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Mention, Span};

    /// "Chill the vial on ice. Add buffer to the vial. Discard the tube."
    fn doc() -> Document {
        let text = "Chill the vial on ice. Add buffer to the vial. Discard the tube. Cap the vial with lid.";
        let words = [
            ("O1", "Chill", MentionKind::Operation),
            ("A1", "vial", MentionKind::Argument),
            ("A2", "ice", MentionKind::Argument),
            ("O2", "Add", MentionKind::Operation),
            ("A3", "buffer", MentionKind::Argument),
            ("A4", "vial", MentionKind::Argument),
            ("O3", "Discard", MentionKind::Operation),
            ("A5", "tube", MentionKind::Argument),
            ("O4", "Cap", MentionKind::Operation),
            ("A6", "vial", MentionKind::Argument),
            ("A7", "lid", MentionKind::Argument),
        ];
        let mut mentions = Vec::new();
        let mut from = 0;
        for (id, w, kind) in words {
            let byte = text[from..].find(w).unwrap() + from;
            let start = text[..byte].chars().count();
            mentions.push(Mention {
                id: id.into(),
                span: Span::new(start, start + w.chars().count()),
                surface: w.into(),
                kind,
                hint: None,
            });
            from = byte + w.len();
        }
        Document::new(
            "chill",
            text,
            vec![Span::new(0, 22), Span::new(23, 46), Span::new(47, 64), Span::new(65, 87)],
            mentions,
        )
        .unwrap()
    }

    fn run(s: &mut Session, line: &str) -> Outcome {
        s.issue_line(line).unwrap()
    }

    #[test]
    fn exec_without_arg0_warns_missing_argument() {
        let mut s = Session::new(doc());
        assert!(run(&mut s, "ground O1 temperature-treatment").accepted);
        let out = run(&mut s, "exec O1");
        assert!(!out.accepted);
        assert_eq!(out.diagnostics[0].code, "missing-argument");
        assert!(out.diagnostics[0].message.contains("missing argument"));
        assert!(s.exec_order().is_empty());
    }

    #[test]
    fn link_then_exec_finalizes_and_chains() {
        let mut s = Session::new(doc());
        for l in ["ground O1 temperature-treatment", "ground A1 location", "link O1 ARG0 A1", "exec O1"] {
            assert!(run(&mut s, l).accepted, "{l}");
        }
        let vial_before = s.state().get("A1").cloned();
        for l in ["ground O2 transfer", "ground A3 reagent", "link O2 ARG0 A3", "link O2 site A1", "exec O2"] {
            assert!(run(&mut s, l).accepted, "{l}");
        }
        assert_eq!(vial_before.unwrap().location, None);
        assert!(s.draft().contains_edge(&Edge::new("O1", Role::Succ, "O2")));
        assert_eq!(s.state().get("A3").unwrap().location.as_deref(), Some("A1"));
        assert!(s.state().get("A1").unwrap().contents.contains("A3"));
    }

    #[test]
    fn undo_restores_previous_session() {
        let mut s = Session::new(doc());
        run(&mut s, "ground O1 temperature-treatment");
        run(&mut s, "ground A1 location");
        let before = s.fingerprint();
        assert!(run(&mut s, "link O1 ARG0 A1").changed);
        assert_ne!(s.fingerprint(), before);
        assert!(run(&mut s, "undo").accepted);
        assert_eq!(s.fingerprint(), before);
    }

    #[test]
    fn illegal_link_is_rejected_with_rule() {
        let mut s = Session::new(doc());
        run(&mut s, "ground O4 seal");
        run(&mut s, "ground A6 location");
        run(&mut s, "ground A3 reagent");
        let out = run(&mut s, "link O4 ARG1 A3");
        assert!(!out.accepted);
        assert!(out.diagnostics[0].message.contains("ARG1 of seal must be seal entity"));
        assert!(run(&mut s, "link O4 succ A6").diagnostics[0].code == "succ-reserved");
    }

    #[test]
    fn destroyed_entities_cannot_be_referenced() {
        let mut s = Session::new(doc());
        for l in ["ground O3 destroy", "ground A5 location", "link O3 ARG0 A5", "exec O3", "ground O1 mix"] {
            assert!(run(&mut s, l).accepted, "{l}");
        }
        let st = s.state().get("A5").unwrap();
        assert!(st.destroyed && st.location.is_none() && st.contents.is_empty());
        let out = run(&mut s, "link O1 ARG0 A5");
        assert_eq!(out.diagnostics[0].code, "destroyed-entity");
        assert!(s.autocomplete("link O1 ARG0 ").is_empty());
    }

    #[test]
    fn exec_twice_is_an_error() {
        let mut s = Session::new(doc());
        for l in ["ground O1 mix", "ground A1 location", "link O1 ARG0 A1", "exec O1"] {
            run(&mut s, l);
        }
        let out = run(&mut s, "exec O1");
        assert_eq!(out.diagnostics[0].code, "executed-operation");
    }

    #[test]
    fn seal_and_unseal() {
        let mut s = Session::new(doc());
        for l in
            ["ground O4 seal", "ground A6 location", "ground A7 seal", "link O4 ARG0 A6", "link O4 ARG1 A7", "exec O4"]
        {
            assert!(run(&mut s, l).accepted, "{l}");
        }
        assert!(s.state().get("A6").unwrap().sealed);
        for l in ["ground O1 remove", "link O1 ARG0 A7", "link O1 ARG1 A6", "exec O1"] {
            assert!(run(&mut s, l).accepted, "{l}");
        }
        assert!(!s.state().get("A6").unwrap().sealed);
    }

    #[test]
    fn transfer_into_sealed_container_warns() {
        let mut s = Session::new(doc());
        for l in [
            "ground O4 seal",
            "ground A6 location",
            "link O4 ARG0 A6",
            "exec O4",
            "ground O2 transfer",
            "ground A3 reagent",
            "link O2 ARG0 A3",
            "link O2 site A6",
        ] {
            assert!(run(&mut s, l).accepted, "{l}");
        }
        let out = run(&mut s, "exec O2");
        assert!(out.accepted);
        assert_eq!(out.diagnostics[0].code, "sealed-site");
    }

    #[test]
    fn containers_move_with_their_contents() {
        let mut s = Session::new(doc());
        for l in [
            "ground O2 transfer",
            "ground A3 reagent",
            "ground A1 location",
            "link O2 ARG0 A3",
            "link O2 site A1",
            "exec O2",
            "ground O1 transfer",
            "ground A2 location",
            "link O1 ARG0 A1",
            "link O1 site A2",
            "exec O1",
        ] {
            assert!(run(&mut s, l).accepted, "{l}");
        }
        assert!(s.state().is_within("A3", "A2"));
        assert_eq!(s.state().transitive_contents("A2"), ["A1", "A3"].iter().map(|x| x.to_string()).collect());
        // Moving the ice into the vial it now holds would close a loop.
        for l in ["ground O3 transfer", "link O3 ARG0 A2", "link O3 site A1"] {
            assert!(run(&mut s, l).accepted, "{l}");
        }
        assert_eq!(run(&mut s, "exec O3").diagnostics[0].code, "containment-cycle");
    }

    #[test]
    fn autocomplete_filters_by_legality() {
        let mut s = Session::new(doc());
        assert_eq!(s.autocomplete("ground ").len(), 11);
        assert_eq!(s.autocomplete("ground O")[0], "ground O1");
        run(&mut s, "ground O1 temperature-treatment");
        run(&mut s, "ground A1 location");
        run(&mut s, "ground A2 location");
        run(&mut s, "ground A3 reagent");
        run(&mut s, "ground A7 seal");
        run(&mut s, "ground O4 mix");
        assert!(s.autocomplete("exec ").is_empty());
        let cands = s.autocomplete("link O1 ARG0 ");
        assert_eq!(cands, vec!["link O1 ARG0 A1", "link O1 ARG0 A2", "link O1 ARG0 A3", "link O1 ARG0 A7"]);
        run(&mut s, "link O4 ARG0 A3");
        assert_eq!(s.autocomplete("exec "), vec!["exec O4"]);
        assert!(s.autocomplete("").contains(&"undo".to_string()));
    }

    #[test]
    fn replay_reproduces_session() {
        let mut s = Session::new(doc());
        for l in ["ground O1 mix", "ground A1 location", "link O1 ARG0 A1", "undo", "link O1 ARG0 A1", "exec O1"] {
            assert!(run(&mut s, l).accepted);
        }
        let r = replay_script(Arc::new(doc()), &s.log_text()).unwrap();
        assert_eq!(r, s);
        let err = replay_script(Arc::new(doc()), "exec O1\n").unwrap_err();
        assert_eq!(err.index, 0);
    }

    #[test]
    fn parse_errors() {
        let d = doc();
        assert!(matches!(Command::parse("fly O1", &d), Err(ParseError::UnknownVerb(_))));
        assert!(matches!(Command::parse("ground O1", &d), Err(ParseError::Arity { .. })));
        assert!(matches!(Command::parse("ground O1 reagent", &d), Err(ParseError::UnknownType { .. })));
        assert!(matches!(Command::parse("link O1 ARG3 A1", &d), Err(ParseError::UnknownRole(_))));
        assert_eq!(
            Command::parse("ground A7 seal", &d).unwrap(),
            Command::Ground { mention: "A7".into(), grounding: Grounding::Argument(ArgumentType::Seal) }
        );
        assert_eq!(
            Command::parse("ground O4 seal", &d).unwrap(),
            Command::Ground { mention: "O4".into(), grounding: Grounding::Operation(OperationType::Seal) }
        );
    }

    #[test]
    fn empty_session_finalizes_to_empty_graph() {
        let d = Document::new("e", "", vec![], vec![]).unwrap();
        let f = Session::new(d).finalize().unwrap();
        assert!(f.graph.nodes().is_empty());
    }

    #[test]
    fn finalize_lists_unexecuted() {
        let mut s = Session::new(doc());
        run(&mut s, "ground O1 mix");
        assert_eq!(s.finalize().unwrap_err(), FinalizeError::Unexecuted(vec!["O1".into()]));
    }
}
