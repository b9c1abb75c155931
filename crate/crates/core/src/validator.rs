//! Ontology validation of whole graphs and the connectivity linter.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::graph::{Edge, PegGraph, Role};
use crate::ontology::{edge_legal, required_roles};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

/// Where a diagnostic applies.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Locus {
    Node(String),
    Edge(Edge),
    Mention(String),
    /// The command at this position of a session log.
    Command(usize),
    Document,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: String,
    pub locus: Locus,
    pub message: String,
}

impl Diagnostic {
    pub fn error(code: impl Into<String>, locus: Locus, message: impl Into<String>) -> Self {
        Diagnostic { severity: Severity::Error, code: code.into(), locus, message: message.into() }
    }

    pub fn warning(code: impl Into<String>, locus: Locus, message: impl Into<String>) -> Self {
        Diagnostic { severity: Severity::Warning, code: code.into(), locus, message: message.into() }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{sev}[{}]: {}", self.code, self.message)
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(Diagnostic::is_error)
}

/// Checks every edge against the ontology and every operation for its
/// required roles. Relaxed-target edges are reported as warnings.
pub fn validate(g: &PegGraph) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for e in g.edges() {
        let (Some(s), Some(t)) = (g.grounding(&e.source), g.grounding(&e.target)) else {
            continue;
        };
        if e.role == Role::Succ {
            if !(s.is_operation() && t.is_operation()) {
                out.push(Diagnostic::error(
                    "succ-non-operation",
                    Locus::Edge(e.clone()),
                    format!("succ edge {e} must join two operations"),
                ));
            }
            continue;
        }
        let verdict = edge_legal(s, e.role, t);
        if !verdict.legal {
            out.push(Diagnostic::error("illegal-edge", Locus::Edge(e.clone()), verdict.message));
        } else if verdict.relaxed {
            out.push(Diagnostic::warning("relaxed-target", Locus::Edge(e.clone()), verdict.message));
        }
    }
    for op_node in g.operations() {
        let op = op_node.grounding.operation().expect("operation node");
        for role in missing_roles(g, &op_node.id, required_roles(op)) {
            out.push(Diagnostic::error(
                "missing-role",
                Locus::Node(op_node.id.clone()),
                format!("missing required {role} on {op}"),
            ));
        }
    }
    out
}

pub(crate) fn missing_roles(g: &PegGraph, op: &str, required: &[Role]) -> Vec<Role> {
    required.iter().copied().filter(|role| !g.edges().iter().any(|e| e.target == op && e.role == *role)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintReport {
    pub component_count: usize,
    pub isolated_mentions: Vec<String>,
    /// `component_count + isolated_mentions.len()`; lower is better.
    pub score: usize,
}

/// Connected components of the undirected projection (all edges, `succ`
/// included) plus mentions that back no node or an unconnected node.
pub fn lint(g: &PegGraph) -> LintReport {
    let ids: Vec<&str> = g.nodes().iter().map(|n| n.id.as_str()).collect();
    let pos: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for e in g.edges() {
        let (a, b) = (pos[e.source.as_str()], pos[e.target.as_str()]);
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
        }
    }
    let component_count = (0..ids.len()).map(|i| find(&mut parent, i)).collect::<BTreeSet<_>>().len();

    let degrees = g.degrees();
    let backing: HashMap<&str, &str> = g.nodes().iter().map(|n| (n.mention.as_str(), n.id.as_str())).collect();
    let isolated_mentions: Vec<String> = g
        .document()
        .mentions()
        .iter()
        .filter(|m| match backing.get(m.id.as_str()) {
            None => true,
            Some(node) => degrees[node] == 0,
        })
        .map(|m| m.id.clone())
        .collect();

    LintReport { component_count, score: component_count + isolated_mentions.len(), isolated_mentions }
}

/// Operation nodes without any core-role edge.
pub fn semantic_underspecified_ops(g: &PegGraph) -> Vec<String> {
    g.operations()
        .filter(|op| !g.edges().iter().any(|e| e.role.is_core() && (e.target == op.id || e.source == op.id)))
        .map(|op| op.id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, Document, Mention, MentionKind, Node, Span};
    use crate::ontology::{ArgumentType, Grounding, OperationType};

    fn doc(words: &[(&str, MentionKind)]) -> Document {
        let text = words.iter().map(|(w, _)| *w).collect::<Vec<_>>().join(" ");
        let mut mentions = Vec::new();
        let mut at = 0;
        for (i, (w, k)) in words.iter().enumerate() {
            let len = w.chars().count();
            mentions.push(Mention {
                id: format!("T{i}"),
                span: Span::new(at, at + len),
                surface: w.to_string(),
                kind: *k,
                hint: None,
            });
            at += len + 1;
        }
        let len = text.chars().count();
        Document::new("d", text, vec![Span::new(0, len)], mentions).unwrap()
    }

    #[test]
    fn transfer_without_site_is_reported() {
        let d = doc(&[("add", MentionKind::Operation), ("cells", MentionKind::Argument)]);
        let g = build_graph(
            d,
            vec![
                Node::new("add", "T0", Grounding::Operation(OperationType::Transfer)),
                Node::new("cells", "T1", Grounding::Argument(ArgumentType::Reagent)),
            ],
            vec![Edge::new("cells", Role::Arg0, "add")],
        )
        .unwrap();
        let d = validate(&g);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].message, "missing required site on transfer");
        assert_eq!(d[0].locus, Locus::Node("add".into()));
    }

    #[test]
    fn succ_between_arguments_is_an_error() {
        let d = doc(&[("cells", MentionKind::Argument), ("ice", MentionKind::Argument)]);
        let g = build_graph(
            d,
            vec![
                Node::new("cells", "T0", Grounding::Argument(ArgumentType::Reagent)),
                Node::new("ice", "T1", Grounding::Argument(ArgumentType::Location)),
            ],
            vec![Edge::new("cells", Role::Succ, "ice")],
        )
        .unwrap();
        let d = validate(&g);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].code, "succ-non-operation");
    }

    #[test]
    fn lint_counts_components_and_unused_mentions() {
        let d = doc(&[
            ("mix", MentionKind::Operation),
            ("cells", MentionKind::Argument),
            ("spin", MentionKind::Operation),
            ("tube", MentionKind::Argument),
            ("ice", MentionKind::Argument),
        ]);
        let g = build_graph(
            d,
            vec![
                Node::new("mix", "T0", Grounding::Operation(OperationType::Mix)),
                Node::new("cells", "T1", Grounding::Argument(ArgumentType::Reagent)),
                Node::new("spin", "T2", Grounding::Operation(OperationType::Spin)),
                Node::new("tube", "T3", Grounding::Argument(ArgumentType::Location)),
            ],
            vec![Edge::new("cells", Role::Arg0, "mix"), Edge::new("tube", Role::Arg0, "spin")],
        )
        .unwrap();
        let r = lint(&g);
        assert_eq!(r.component_count, 2);
        assert_eq!(r.isolated_mentions, vec!["T4"]);
        assert_eq!(r.score, 3);
    }

    #[test]
    fn empty_graph_lints_clean() {
        let g = PegGraph::empty(Document::new("e", "", vec![], vec![]).unwrap());
        let r = lint(&g);
        assert_eq!((r.component_count, r.score), (0, 0));
        assert!(semantic_underspecified_ops(&g).is_empty());
        assert!(validate(&g).is_empty());
    }
}
