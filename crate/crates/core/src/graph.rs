//! Documents, mentions and the validated PEG graph.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::Grounding;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("span [{start}, {end}) is empty or reversed")]
    EmptySpan { start: usize, end: usize },
    #[error("span [{start}, {end}) exceeds text length {len}")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },
    #[error("sentence spans overlap or are out of order at sentence {index}")]
    SentenceOrder { index: usize },
    #[error("duplicate mention id `{0}`")]
    DuplicateMention(String),
    #[error("mention `{id}` surface {surface:?} does not match text {actual:?}")]
    SurfaceMismatch { id: String, surface: String, actual: String },
    #[error("mention `{0}` does not lie inside exactly one sentence")]
    MentionOutsideSentence(String),
    #[error("node `{node}` references unknown mention `{mention}`")]
    UnknownMention { node: String, mention: String },
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("mention `{mention}` backs more than one node (`{first}`, `{second}`)")]
    MentionReused { mention: String, first: String, second: String },
    #[error("node `{node}` grounded as {grounding} but its mention is an {kind} mention")]
    KindMismatch { node: String, grounding: Grounding, kind: MentionKind },
    #[error("edge ({source_id}, {role}, {target}) references unknown node `{missing}`")]
    DanglingEdge { source_id: String, role: Role, target: String, missing: String },
    #[error("duplicate edge ({source_id}, {role}, {target})")]
    DuplicateEdge { source_id: String, role: Role, target: String },
    #[error("succ cycle through {}", .0.join(" -> "))]
    SuccCycle(Vec<String>),
}

/// Half-open `[start, end)` offsets counted in Unicode scalar values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

impl From<(usize, usize)> for Span {
    fn from((start, end): (usize, usize)) -> Self {
        Span { start, end }
    }
}

impl From<Span> for (usize, usize) {
    fn from(s: Span) -> Self {
        (s.start, s.end)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

/// Slices `text` by scalar-value offsets. Returns `None` when out of range.
pub fn char_slice(text: &str, span: Span) -> Option<&str> {
    if span.start > span.end {
        return None;
    }
    let mut indices = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
    let start = indices.nth(span.start)?;
    let end = if span.end == span.start { start } else { indices.nth(span.end - span.start - 1)? };
    Some(&text[start..end])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MentionKind {
    Operation,
    Argument,
}

impl fmt::Display for MentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MentionKind::Operation => "operation",
            MentionKind::Argument => "argument",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub id: String,
    pub span: Span,
    pub surface: String,
    pub kind: MentionKind,
    /// Suggested grounding carried over from pre-population.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hint: Option<Grounding>,
}

#[derive(Deserialize)]
struct DocumentRepr {
    id: String,
    text: String,
    sentences: Vec<Span>,
    mentions: Vec<Mention>,
}

/// A protocol text with its sentence segmentation and typed mentions.
/// Immutable once constructed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DocumentRepr")]
pub struct Document {
    id: String,
    text: String,
    sentences: Vec<Span>,
    mentions: Vec<Mention>,
    #[serde(skip)]
    mention_index: HashMap<String, usize>,
    #[serde(skip)]
    mention_sentence: Vec<usize>,
}

impl TryFrom<DocumentRepr> for Document {
    type Error = GraphError;

    fn try_from(r: DocumentRepr) -> Result<Self, Self::Error> {
        Document::new(r.id, r.text, r.sentences, r.mentions)
    }
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        sentences: Vec<Span>,
        mentions: Vec<Mention>,
    ) -> Result<Self, GraphError> {
        let text = text.into();
        let len = text.chars().count();
        for (i, s) in sentences.iter().enumerate() {
            check_span(*s, len)?;
            if i > 0 && sentences[i - 1].end > s.start {
                return Err(GraphError::SentenceOrder { index: i });
            }
        }
        let mut mention_index = HashMap::with_capacity(mentions.len());
        let mut mention_sentence = Vec::with_capacity(mentions.len());
        for (i, m) in mentions.iter().enumerate() {
            check_span(m.span, len)?;
            if mention_index.insert(m.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateMention(m.id.clone()));
            }
            let actual = char_slice(&text, m.span).unwrap_or_default();
            if actual != m.surface {
                return Err(GraphError::SurfaceMismatch {
                    id: m.id.clone(),
                    surface: m.surface.clone(),
                    actual: actual.to_string(),
                });
            }
            let sentence = sentences
                .iter()
                .position(|s| s.contains(&m.span))
                .ok_or_else(|| GraphError::MentionOutsideSentence(m.id.clone()))?;
            mention_sentence.push(sentence);
        }
        Ok(Document { id: id.into(), text, sentences, mentions, mention_index, mention_sentence })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn sentences(&self) -> &[Span] {
        &self.sentences
    }

    pub fn mentions(&self) -> &[Mention] {
        &self.mentions
    }

    pub fn mention(&self, id: &str) -> Option<&Mention> {
        self.mention_index.get(id).map(|&i| &self.mentions[i])
    }

    /// Index of the sentence containing the mention.
    pub fn sentence_of(&self, mention_id: &str) -> Option<usize> {
        self.mention_index.get(mention_id).map(|&i| self.mention_sentence[i])
    }

    /// Position key for document-order sorting: (start, end, id).
    pub fn order_key(&self, mention_id: &str) -> (usize, usize, String) {
        match self.mention(mention_id) {
            Some(m) => (m.span.start, m.span.end, m.id.clone()),
            None => (usize::MAX, usize::MAX, mention_id.to_string()),
        }
    }
}

fn check_span(span: Span, len: usize) -> Result<(), GraphError> {
    if span.start >= span.end {
        return Err(GraphError::EmptySpan { start: span.start, end: span.end });
    }
    if span.end > len {
        return Err(GraphError::SpanOutOfBounds { start: span.start, end: span.end, len });
    }
    Ok(())
}

/// Edge labels: three core roles, eight non-core roles and `succ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "ARG0")]
    Arg0,
    #[serde(rename = "ARG1")]
    Arg1,
    #[serde(rename = "ARG2")]
    Arg2,
    #[serde(rename = "site")]
    Site,
    #[serde(rename = "setting")]
    Setting,
    #[serde(rename = "usage")]
    Usage,
    #[serde(rename = "co-ref")]
    CoRef,
    #[serde(rename = "located-at")]
    LocatedAt,
    #[serde(rename = "measure")]
    Measure,
    #[serde(rename = "modifier")]
    Modifier,
    #[serde(rename = "part-of")]
    PartOf,
    #[serde(rename = "succ")]
    Succ,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RoleCategory {
    Core,
    NonCore,
    Temporal,
}

impl RoleCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            RoleCategory::Core => "core",
            RoleCategory::NonCore => "non-core",
            RoleCategory::Temporal => "temporal",
        }
    }
}

impl Role {
    pub const ALL: [Role; 12] = [
        Role::Arg0,
        Role::Arg1,
        Role::Arg2,
        Role::Site,
        Role::Setting,
        Role::Usage,
        Role::CoRef,
        Role::LocatedAt,
        Role::Measure,
        Role::Modifier,
        Role::PartOf,
        Role::Succ,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Arg0 => "ARG0",
            Role::Arg1 => "ARG1",
            Role::Arg2 => "ARG2",
            Role::Site => "site",
            Role::Setting => "setting",
            Role::Usage => "usage",
            Role::CoRef => "co-ref",
            Role::LocatedAt => "located-at",
            Role::Measure => "measure",
            Role::Modifier => "modifier",
            Role::PartOf => "part-of",
            Role::Succ => "succ",
        }
    }

    pub fn category(self) -> RoleCategory {
        match self {
            Role::Arg0 | Role::Arg1 | Role::Arg2 => RoleCategory::Core,
            Role::Succ => RoleCategory::Temporal,
            _ => RoleCategory::NonCore,
        }
    }

    pub fn is_core(self) -> bool {
        self.category() == RoleCategory::Core
    }

    /// Roles through which an argument can be reused across operations.
    pub fn is_reentrant_role(self) -> bool {
        self.is_core() || self == Role::Site
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown role `{0}`")]
pub struct UnknownRole(pub String);

impl FromStr for Role {
    type Err = UnknownRole;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL.into_iter().find(|r| r.as_str() == s).ok_or_else(|| UnknownRole(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub mention: String,
    pub grounding: Grounding,
}

impl Node {
    pub fn new(id: impl Into<String>, mention: impl Into<String>, grounding: Grounding) -> Self {
        Node { id: id.into(), mention: mention.into(), grounding }
    }
}

/// A labeled edge from a dependent `source` to its head `target`. For
/// `succ` the source is the earlier operation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub source: String,
    pub role: Role,
    pub target: String,
}

impl Edge {
    pub fn new(source: impl Into<String>, role: Role, target: impl Into<String>) -> Self {
        Edge { source: source.into(), role, target: target.into() }
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.source, self.role, self.target)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Locality {
    Intra,
    Inter,
}

/// A structurally valid PEG over a document. Immutable after construction.
#[derive(Debug, Clone)]
pub struct PegGraph {
    document: Arc<Document>,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    node_index: HashMap<String, usize>,
}

/// Validates nodes and edges against the document and assembles a graph.
/// The `succ` subgraph must be acyclic.
pub fn build_graph(
    document: impl Into<Arc<Document>>,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
) -> Result<PegGraph, GraphError> {
    let document = document.into();
    let mut node_index = HashMap::with_capacity(nodes.len());
    let mut by_mention: HashMap<&str, &str> = HashMap::new();
    for (i, n) in nodes.iter().enumerate() {
        let mention = document
            .mention(&n.mention)
            .ok_or_else(|| GraphError::UnknownMention { node: n.id.clone(), mention: n.mention.clone() })?;
        let expected = if n.grounding.is_operation() { MentionKind::Operation } else { MentionKind::Argument };
        if mention.kind != expected {
            return Err(GraphError::KindMismatch { node: n.id.clone(), grounding: n.grounding, kind: mention.kind });
        }
        if node_index.insert(n.id.clone(), i).is_some() {
            return Err(GraphError::DuplicateNode(n.id.clone()));
        }
        if let Some(first) = by_mention.insert(&n.mention, &n.id) {
            return Err(GraphError::MentionReused {
                mention: n.mention.clone(),
                first: first.to_string(),
                second: n.id.clone(),
            });
        }
    }

    let mut seen = HashSet::with_capacity(edges.len());
    for e in &edges {
        for end in [&e.source, &e.target] {
            if !node_index.contains_key(end) {
                return Err(GraphError::DanglingEdge {
                    source_id: e.source.clone(),
                    role: e.role,
                    target: e.target.clone(),
                    missing: end.clone(),
                });
            }
        }
        if !seen.insert(e) {
            return Err(GraphError::DuplicateEdge {
                source_id: e.source.clone(),
                role: e.role,
                target: e.target.clone(),
            });
        }
    }

    let graph = PegGraph { document, nodes, edges, node_index };
    if let Some(cycle) = graph.find_succ_cycle() {
        return Err(GraphError::SuccCycle(cycle));
    }
    Ok(graph)
}

/// Partition of argument nodes into co-reference classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorefClasses {
    classes: Vec<BTreeSet<String>>,
    class_of: HashMap<String, usize>,
}

impl CorefClasses {
    /// Classes sorted by their smallest member.
    pub fn classes(&self) -> &[BTreeSet<String>] {
        &self.classes
    }

    pub fn class_of(&self, node: &str) -> Option<&BTreeSet<String>> {
        self.class_of.get(node).map(|&i| &self.classes[i])
    }

    pub fn same_class(&self, a: &str, b: &str) -> bool {
        match (self.class_of.get(a), self.class_of.get(b)) {
            (Some(x), Some(y)) => x == y,
            _ => a == b,
        }
    }
}

impl PegGraph {
    pub fn empty(document: impl Into<Arc<Document>>) -> Self {
        PegGraph { document: document.into(), nodes: Vec::new(), edges: Vec::new(), node_index: HashMap::new() }
    }

    pub fn document(&self) -> &Document {
        &self.document
    }

    pub fn document_arc(&self) -> &Arc<Document> {
        &self.document
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.node_index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn mention_of(&self, node_id: &str) -> Option<&Mention> {
        self.node(node_id).and_then(|n| self.document.mention(&n.mention))
    }

    pub fn grounding(&self, node_id: &str) -> Option<Grounding> {
        self.node(node_id).map(|n| n.grounding)
    }

    pub fn operations(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.grounding.is_operation())
    }

    pub fn arguments(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| !n.grounding.is_operation())
    }

    pub fn contains_edge(&self, edge: &Edge) -> bool {
        self.edges.contains(edge)
    }

    /// Node ids sorted by the document position of their mentions.
    pub fn nodes_in_document_order(&self) -> Vec<&Node> {
        let mut nodes: Vec<&Node> = self.nodes.iter().collect();
        nodes.sort_by_key(|n| self.document.order_key(&n.mention));
        nodes
    }

    fn succ_adjacency(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for e in self.edges.iter().filter(|e| e.role == Role::Succ) {
            adj.entry(e.source.as_str()).or_default().push(e.target.as_str());
        }
        adj
    }

    fn find_succ_cycle(&self) -> Option<Vec<String>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Open,
            Done,
        }
        let adj = self.succ_adjacency();
        let mut marks: HashMap<&str, Mark> = HashMap::new();
        for &start in adj.keys() {
            if marks.contains_key(start) {
                continue;
            }
            // Iterative DFS keeping the current path for cycle reporting.
            let mut path: Vec<&str> = vec![start];
            let mut cursors: Vec<usize> = vec![0];
            marks.insert(start, Mark::Open);
            while let Some(&node) = path.last() {
                let cursor = cursors.last_mut().unwrap();
                let next = adj.get(node).and_then(|v| v.get(*cursor)).copied();
                *cursor += 1;
                match next {
                    Some(n) => match marks.get(n) {
                        Some(Mark::Open) => {
                            let from = path.iter().position(|&p| p == n).unwrap();
                            let mut cycle: Vec<String> = path[from..].iter().map(|s| s.to_string()).collect();
                            cycle.push(n.to_string());
                            return Some(cycle);
                        }
                        Some(Mark::Done) => {}
                        None => {
                            marks.insert(n, Mark::Open);
                            path.push(n);
                            cursors.push(0);
                        }
                    },
                    None => {
                        marks.insert(node, Mark::Done);
                        path.pop();
                        cursors.pop();
                    }
                }
            }
        }
        None
    }

    /// Topological order of the operations under `succ`, ties broken by
    /// document order.
    pub fn succ_order(&self) -> Vec<String> {
        let ops: Vec<&Node> =
            self.nodes_in_document_order().into_iter().filter(|n| n.grounding.is_operation()).collect();
        let rank: HashMap<&str, usize> = ops.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
        let mut indegree: HashMap<&str, usize> = ops.iter().map(|n| (n.id.as_str(), 0)).collect();
        let adj = self.succ_adjacency();
        for targets in adj.values() {
            for t in targets {
                if let Some(d) = indegree.get_mut(t) {
                    *d += 1;
                }
            }
        }
        let mut ready: BTreeSet<(usize, &str)> =
            indegree.iter().filter(|(_, d)| **d == 0).map(|(id, _)| (rank[id], *id)).collect();
        let mut order = Vec::with_capacity(ops.len());
        while let Some(first) = ready.pop_first() {
            order.push(first.1.to_string());
            for t in adj.get(first.1).into_iter().flatten() {
                if let Some(d) = indegree.get_mut(t) {
                    *d -= 1;
                    if *d == 0 {
                        ready.insert((rank[t], t));
                    }
                }
            }
        }
        order
    }

    /// Whether operation `a` is ordered before `b` by the transitive
    /// closure of `succ`.
    pub fn precedes(&self, a: &str, b: &str) -> bool {
        let adj = self.succ_adjacency();
        let mut stack = vec![a];
        let mut seen = HashSet::new();
        while let Some(n) = stack.pop() {
            for &t in adj.get(n).into_iter().flatten() {
                if t == b {
                    return true;
                }
                if seen.insert(t) {
                    stack.push(t);
                }
            }
        }
        false
    }

    /// Argument nodes that fill a core or `site` role in at least two edges.
    pub fn reentrant_nodes(&self) -> BTreeSet<String> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for e in self.edges.iter().filter(|e| e.role.is_reentrant_role()) {
            if self.grounding(&e.source).is_some_and(|g| !g.is_operation()) {
                *counts.entry(e.source.as_str()).or_default() += 1;
            }
        }
        counts.into_iter().filter(|(_, c)| *c >= 2).map(|(id, _)| id.to_string()).collect()
    }

    fn sentence_of_node(&self, node_id: &str) -> Option<usize> {
        self.node(node_id).and_then(|n| self.document.sentence_of(&n.mention))
    }

    /// `Intra` iff both endpoint mentions lie in the same sentence.
    pub fn edge_locality(&self, edge: &Edge) -> Locality {
        self.node_locality(&edge.source, &edge.target)
    }

    pub fn node_locality(&self, a: &str, b: &str) -> Locality {
        match (self.sentence_of_node(a), self.sentence_of_node(b)) {
            (Some(x), Some(y)) if x == y => Locality::Intra,
            _ => Locality::Inter,
        }
    }

    /// Locality where either endpoint may be replaced by any member of its
    /// co-reference class.
    pub fn edge_locality_with(&self, edge: &Edge, coref: &CorefClasses) -> Locality {
        let sentences = |id: &str| -> BTreeSet<usize> {
            match coref.class_of(id) {
                Some(class) => class.iter().filter_map(|m| self.sentence_of_node(m)).collect(),
                None => self.sentence_of_node(id).into_iter().collect(),
            }
        };
        let a = sentences(&edge.source);
        let b = sentences(&edge.target);
        if a.intersection(&b).next().is_some() {
            Locality::Intra
        } else {
            Locality::Inter
        }
    }

    /// Union-find over `co-ref` edges between argument nodes.
    pub fn coref_closure(&self) -> CorefClasses {
        let args: Vec<&str> = self.arguments().map(|n| n.id.as_str()).collect();
        let pos: HashMap<&str, usize> = args.iter().enumerate().map(|(i, a)| (*a, i)).collect();
        let mut parent: Vec<usize> = (0..args.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for e in self.edges.iter().filter(|e| e.role == Role::CoRef) {
            if let (Some(&a), Some(&b)) = (pos.get(e.source.as_str()), pos.get(e.target.as_str())) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let mut groups: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
        for (i, a) in args.iter().enumerate() {
            let root = find(&mut parent, i);
            groups.entry(root).or_default().insert(a.to_string());
        }
        let mut classes: Vec<BTreeSet<String>> = groups.into_values().collect();
        classes.sort();
        let class_of = classes.iter().enumerate().flat_map(|(i, c)| c.iter().map(move |m| (m.clone(), i))).collect();
        CorefClasses { classes, class_of }
    }

    /// Degree (in + out) of every node over all edges.
    pub fn degrees(&self) -> HashMap<&str, usize> {
        let mut deg: HashMap<&str, usize> = self.nodes.iter().map(|n| (n.id.as_str(), 0)).collect();
        for e in &self.edges {
            *deg.get_mut(e.source.as_str()).unwrap() += 1;
            *deg.get_mut(e.target.as_str()).unwrap() += 1;
        }
        deg
    }
}
