//! Corpus I/O: the PEG JSON file format, BRAT import of sentence-level
//! annotations, and corpus statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::graph::{
    build_graph, Document, Edge, GraphError, Locality, Mention, MentionKind, Node, PegGraph, Role, Span,
};
use crate::ontology::{coverage_curve, coverage_fraction, ArgumentType, Grounding, OperationType};
use crate::validator::semantic_underspecified_ops;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported format_version {found} (expected {FORMAT_VERSION})")]
    Version { found: u64 },
    #[error("unknown role `{0}`")]
    UnknownRole(String),
    #[error("node `{node}`: {message}")]
    BadGrounding { node: String, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{file}:{line}: {message}")]
    Brat { file: String, line: usize, message: String },
    #[error("{file}: annotation `{id}` refers to unknown annotation `{missing}`")]
    OrphanId { file: String, id: String, missing: String },
    #[error("{file}: annotation `{id}` offsets [{start}, {end}) give {actual:?}, annotation says {expected:?}")]
    OffsetMismatch { file: String, id: String, start: usize, end: usize, expected: String, actual: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

/// Pretty-printed JSON with object keys sorted at every depth. Two equal
/// values always serialize to the same bytes.
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> String {
    fn sort(v: Value) -> Value {
        match v {
            Value::Object(map) => {
                let mut entries: Vec<(String, Value)> = map.into_iter().collect();
                entries.sort_by(|a, b| a.0.cmp(&b.0));
                Value::Object(entries.into_iter().map(|(k, v)| (k, sort(v))).collect::<Map<_, _>>())
            }
            Value::Array(items) => Value::Array(items.into_iter().map(sort).collect()),
            other => other,
        }
    }
    let value = serde_json::to_value(value).expect("serializable value");
    serde_json::to_string_pretty(&sort(value)).expect("JSON value serializes")
}

#[derive(Serialize)]
struct PegFileOut<'a> {
    format_version: u32,
    document: &'a Document,
    nodes: Vec<&'a Node>,
    edges: Vec<&'a Edge>,
}

#[derive(Deserialize)]
struct PegFileIn {
    format_version: u64,
    document: Document,
    #[serde(default)]
    nodes: Vec<RawNode>,
    #[serde(default)]
    edges: Vec<RawEdge>,
}

#[derive(Deserialize)]
struct RawNode {
    id: String,
    mention: String,
    grounding: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct RawEdge {
    source: String,
    role: String,
    target: String,
}

fn parse_grounding(node: &str, raw: &BTreeMap<String, String>) -> Result<Grounding, CorpusError> {
    let bad = |message: String| CorpusError::BadGrounding { node: node.to_string(), message };
    let mut it = raw.iter();
    let (Some((kind, name)), None) = (it.next(), it.next()) else {
        return Err(bad("grounding must have exactly one of `operation` or `argument`".into()));
    };
    match kind.as_str() {
        "operation" => name.parse().map(Grounding::Operation).map_err(|e| bad(format!("{e}"))),
        "argument" => name.parse().map(Grounding::Argument).map_err(|e| bad(format!("{e}"))),
        other => Err(bad(format!("unknown grounding kind `{other}`"))),
    }
}

/// Parses a PEG file and validates it structurally.
pub fn load_peg(json: &str) -> Result<PegGraph, CorpusError> {
    let probe: Value = serde_json::from_str(json)?;
    match probe.get("format_version").and_then(Value::as_u64) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(found) => return Err(CorpusError::Version { found }),
        None => return Err(CorpusError::Version { found: 0 }),
    }
    let file: PegFileIn = serde_json::from_value(probe)?;
    debug_assert_eq!(file.format_version, FORMAT_VERSION as u64);
    let nodes = file
        .nodes
        .iter()
        .map(|n| Ok(Node::new(n.id.clone(), n.mention.clone(), parse_grounding(&n.id, &n.grounding)?)))
        .collect::<Result<Vec<_>, CorpusError>>()?;
    let edges = file
        .edges
        .into_iter()
        .map(|e| {
            let role: Role = e.role.parse().map_err(|_| CorpusError::UnknownRole(e.role.clone()))?;
            Ok(Edge::new(e.source, role, e.target))
        })
        .collect::<Result<Vec<_>, CorpusError>>()?;
    Ok(build_graph(file.document, nodes, edges)?)
}

/// Canonical serialization: nodes in document order, edges sorted by source
/// position, role and target position. `load_peg(save_peg(g))` reproduces
/// `g` and a second save is byte-identical.
pub fn save_peg(g: &PegGraph) -> String {
    let doc = g.document();
    let key = |id: &str| g.node(id).map(|n| doc.order_key(&n.mention)).unwrap_or_else(|| doc.order_key(id));
    let mut edges: Vec<&Edge> = g.edges().iter().collect();
    edges.sort_by_key(|e| (key(&e.source), e.role, key(&e.target)));
    let out = PegFileOut { format_version: FORMAT_VERSION, document: doc, nodes: g.nodes_in_document_order(), edges };
    let mut text = canonical_json(&out);
    text.push('\n');
    text
}

pub fn read_peg(path: &Path) -> Result<PegGraph, CorpusError> {
    load_peg(&fs::read_to_string(path).map_err(io_err(path))?)
}

pub fn write_peg(path: &Path, g: &PegGraph) -> Result<(), CorpusError> {
    fs::write(path, save_peg(g)).map_err(io_err(path))
}

/// Reads the document from either a PEG file or a document file.
pub fn load_document(json: &str) -> Result<Document, CorpusError> {
    #[derive(Deserialize)]
    struct WithDocument {
        document: Document,
    }
    let v: Value = serde_json::from_str(json)?;
    if v.get("document").is_some() {
        Ok(serde_json::from_value::<WithDocument>(v)?.document)
    } else {
        Ok(serde_json::from_value::<Document>(v)?)
    }
}

/// Every `*.peg.json` file in a directory, sorted by file name.
pub fn read_peg_dir(dir: &Path) -> Result<Vec<(PathBuf, PegGraph)>, CorpusError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".peg.json"))
        .collect();
    paths.sort();
    paths.into_iter().map(|p| read_peg(&p).map(|g| (p, g))).collect()
}

// ---------------------------------------------------------------------------
// BRAT import

/// What a WLP label becomes on import.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelationMapping {
    Role(Role),
    Legacy,
}

#[derive(Debug, Clone)]
pub struct LabelMap {
    pub entities: BTreeMap<String, Grounding>,
    pub relations: BTreeMap<String, RelationMapping>,
}

const DEFAULT_LABEL_MAP: &str = include_str!("../data/wlp_labels.tsv");

impl LabelMap {
    pub fn parse(tsv: &str) -> Result<Self, CorpusError> {
        let err = |line: usize, message: String| CorpusError::Brat { file: "label map".into(), line, message };
        let mut entities = BTreeMap::new();
        let mut relations = BTreeMap::new();
        for (i, line) in tsv.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [kind, label, target] = cols[..] else {
                return Err(err(line_no, format!("expected 3 tab-separated columns, found {}", cols.len())));
            };
            match kind {
                "entity" => {
                    let grounding = match target.split_once(':') {
                        Some(("operation", t)) => {
                            t.parse().map(Grounding::Operation).map_err(|e| err(line_no, format!("{e}")))?
                        }
                        Some(("argument", t)) => {
                            t.parse().map(Grounding::Argument).map_err(|e| err(line_no, format!("{e}")))?
                        }
                        _ => return Err(err(line_no, format!("bad entity target `{target}`"))),
                    };
                    entities.insert(label.to_string(), grounding);
                }
                "relation" => {
                    let mapping = if target == "legacy" {
                        RelationMapping::Legacy
                    } else {
                        RelationMapping::Role(
                            target.parse().map_err(|_| err(line_no, format!("unknown role `{target}`")))?,
                        )
                    };
                    relations.insert(label.to_string(), mapping);
                }
                other => return Err(err(line_no, format!("unknown row kind `{other}`"))),
            }
        }
        Ok(LabelMap { entities, relations })
    }

    fn relation(&self, label: &str) -> RelationMapping {
        self.relations.get(label).copied().unwrap_or(RelationMapping::Legacy)
    }
}

impl Default for LabelMap {
    fn default() -> Self {
        LabelMap::parse(DEFAULT_LABEL_MAP).expect("bundled label map parses")
    }
}

/// A relation from the source annotation, kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WlpRelation {
    pub id: String,
    pub label: String,
    pub arg1: String,
    pub arg2: String,
    /// The PEG role the label maps to; `None` for legacy labels.
    pub role: Option<Role>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportedDocument {
    pub format_version: u32,
    pub document: Document,
    pub wlp_relations: Vec<WlpRelation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ImportedDocument {
    pub fn to_json(&self) -> String {
        let mut text = canonical_json(self);
        text.push('\n');
        text
    }

    /// A starting graph for annotation: every mention with a known type
    /// becomes a node, and every relation with a PEG role between two such
    /// nodes becomes an edge. Nothing is checked against the ontology.
    pub fn to_peg(&self) -> Result<PegGraph, CorpusError> {
        let nodes: Vec<Node> = self
            .document
            .mentions()
            .iter()
            .filter_map(|m| m.hint.map(|h| Node::new(m.id.clone(), m.id.clone(), h)))
            .collect();
        let grounding: HashMap<&str, Grounding> = nodes.iter().map(|n| (n.id.as_str(), n.grounding)).collect();
        let mut seen = BTreeSet::new();
        let mut edges = Vec::new();
        for r in &self.wlp_relations {
            let Some(role) = r.role else { continue };
            let (Some(&g1), Some(&g2)) = (grounding.get(r.arg1.as_str()), grounding.get(r.arg2.as_str())) else {
                continue;
            };
            let (source, target) = orient(role, (&r.arg1, g1), (&r.arg2, g2));
            if source == target {
                continue;
            }
            let edge = Edge::new(source, role, target);
            if seen.insert((edge.source.clone(), edge.role, edge.target.clone())) {
                edges.push(edge);
            }
        }
        Ok(build_graph(self.document.clone(), nodes, edges)?)
    }
}

/// PEG edges run from the dependent to the head. An operation endpoint is
/// always the head; for value roles the value is the dependent; otherwise
/// `Arg1` depends on `Arg2`.
fn orient<'a>(role: Role, a: (&'a str, Grounding), b: (&'a str, Grounding)) -> (&'a str, &'a str) {
    let value_type = match role {
        Role::Measure => Some(ArgumentType::Measurement),
        Role::Setting => Some(ArgumentType::Setting),
        Role::Modifier => Some(ArgumentType::Modifier),
        Role::Usage => Some(ArgumentType::Method),
        _ => None,
    };
    match (a.1.is_operation(), b.1.is_operation()) {
        (true, false) => return (b.0, a.0),
        (false, true) => return (a.0, b.0),
        _ => {}
    }
    if let Some(t) = value_type {
        if b.1.argument() == Some(t) && a.1.argument() != Some(t) {
            return (b.0, a.0);
        }
    }
    (a.0, b.0)
}

struct TextBound {
    label: String,
    span: Span,
    surface: String,
}

/// Imports one BRAT document. `name` is used as the document id and in
/// error messages. Sentences are the non-blank lines of the text.
pub fn import_brat(name: &str, text: &str, ann: &str, map: &LabelMap) -> Result<ImportedDocument, CorpusError> {
    let ann_file = format!("{name}.ann");
    let brat_err = |line: usize, message: String| CorpusError::Brat { file: ann_file.clone(), line, message };

    // Sentences: each line's extent with surrounding whitespace trimmed.
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0;
    for i in 0..=chars.len() {
        if i == chars.len() || chars[i] == '\n' {
            let mut s = start;
            let mut e = i;
            while s < e && chars[s].is_whitespace() {
                s += 1;
            }
            while e > s && chars[e - 1].is_whitespace() {
                e -= 1;
            }
            if s < e {
                sentences.push(Span::new(s, e));
            }
            start = i + 1;
        }
    }

    let mut bounds: BTreeMap<String, TextBound> = BTreeMap::new();
    let mut bound_order: Vec<String> = Vec::new();
    // (event id, trigger id, [(label, argument id)], line)
    type Event = (String, String, Vec<(String, String)>, usize);
    let mut events: Vec<Event> = Vec::new();
    let mut relations: Vec<(String, String, String, String, usize)> = Vec::new();

    for (i, line) in ann.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.splitn(3, '\t');
        let id = cols.next().unwrap_or_default().to_string();
        let body = cols.next().ok_or_else(|| brat_err(line_no, "missing annotation body".into()))?;
        match id.chars().next() {
            Some('T') => {
                let surface =
                    cols.next().ok_or_else(|| brat_err(line_no, "text-bound annotation without text".into()))?;
                let (label, offsets) =
                    body.split_once(' ').ok_or_else(|| brat_err(line_no, format!("malformed text-bound `{body}`")))?;
                // Discontinuous spans are widened to their overall extent.
                let mut lo = usize::MAX;
                let mut hi = 0;
                for frag in offsets.split(';') {
                    let (a, b) = frag
                        .trim()
                        .split_once(' ')
                        .ok_or_else(|| brat_err(line_no, format!("malformed offsets `{offsets}`")))?;
                    let a: usize = a.parse().map_err(|_| brat_err(line_no, format!("bad offset `{a}`")))?;
                    let b: usize = b.parse().map_err(|_| brat_err(line_no, format!("bad offset `{b}`")))?;
                    lo = lo.min(a);
                    hi = hi.max(b);
                }
                if lo >= hi || hi > chars.len() {
                    return Err(CorpusError::OffsetMismatch {
                        file: ann_file.clone(),
                        id,
                        start: lo,
                        end: hi,
                        expected: surface.to_string(),
                        actual: String::new(),
                    });
                }
                let actual: String = chars[lo..hi].iter().collect();
                let is_discontinuous = offsets.contains(';');
                if !is_discontinuous && actual != surface {
                    return Err(CorpusError::OffsetMismatch {
                        file: ann_file.clone(),
                        id,
                        start: lo,
                        end: hi,
                        expected: surface.to_string(),
                        actual,
                    });
                }
                bound_order.push(id.clone());
                bounds.insert(id, TextBound { label: label.to_string(), span: Span::new(lo, hi), surface: actual });
            }
            Some('E') => {
                let mut parts = body.split_whitespace();
                let trigger = parts.next().ok_or_else(|| brat_err(line_no, "event without trigger".into()))?;
                let (_, trigger_id) = trigger
                    .split_once(':')
                    .ok_or_else(|| brat_err(line_no, format!("malformed trigger `{trigger}`")))?;
                let mut args = Vec::new();
                for p in parts {
                    let (label, target) = p
                        .split_once(':')
                        .ok_or_else(|| brat_err(line_no, format!("malformed event argument `{p}`")))?;
                    let label = label.trim_end_matches(|c: char| c.is_ascii_digit());
                    args.push((label.to_string(), target.to_string()));
                }
                events.push((id, trigger_id.to_string(), args, line_no));
            }
            Some('R') => {
                let parts: Vec<&str> = body.split_whitespace().collect();
                let [label, a1, a2] = parts[..] else {
                    return Err(brat_err(line_no, format!("malformed relation `{body}`")));
                };
                let arg = |s: &str| s.split_once(':').map(|(_, id)| id.to_string());
                let (Some(a1), Some(a2)) = (arg(a1), arg(a2)) else {
                    return Err(brat_err(line_no, format!("malformed relation arguments `{body}`")));
                };
                relations.push((id, label.to_string(), a1, a2, line_no));
            }
            // Notes, attributes, normalizations and equivalences carry no
            // structure we import.
            Some('#' | 'A' | 'M' | 'N' | '*') => {}
            _ => return Err(brat_err(line_no, format!("unrecognized annotation id `{id}`"))),
        }
    }

    let triggers: HashMap<&str, &str> = events.iter().map(|(id, t, _, _)| (id.as_str(), t.as_str())).collect();
    let resolve = |owner: &str, id: &str| -> Result<String, CorpusError> {
        let resolved = triggers.get(id).copied().unwrap_or(id);
        if bounds.contains_key(resolved) {
            Ok(resolved.to_string())
        } else {
            Err(CorpusError::OrphanId { file: ann_file.clone(), id: owner.to_string(), missing: id.to_string() })
        }
    };

    let mut wlp_relations = Vec::new();
    for (id, trigger, args, _) in &events {
        let head = resolve(id, trigger)?;
        for (k, (label, target)) in args.iter().enumerate() {
            let dep = resolve(id, target)?;
            wlp_relations.push(WlpRelation {
                id: format!("{id}.{}", k + 1),
                label: label.clone(),
                role: role_of(map, label),
                arg1: head.clone(),
                arg2: dep,
            });
        }
    }
    for (id, label, a1, a2, _) in &relations {
        wlp_relations.push(WlpRelation {
            id: id.clone(),
            label: label.clone(),
            role: role_of(map, label),
            arg1: resolve(id, a1)?,
            arg2: resolve(id, a2)?,
        });
    }

    let mut warnings = Vec::new();
    let mut mentions = Vec::new();
    for id in &bound_order {
        let tb = &bounds[id];
        let hint = map.entities.get(&tb.label).copied();
        if hint.is_none() {
            warnings.push(format!("{id}: unmapped entity label `{}` imported as an untyped argument", tb.label));
        }
        let kind = match hint {
            Some(Grounding::Operation(_)) => MentionKind::Operation,
            _ => MentionKind::Argument,
        };
        mentions.push(Mention { id: id.clone(), span: tb.span, surface: tb.surface.clone(), kind, hint });
    }
    mentions.sort_by(|a, b| (a.span.start, a.span.end, &a.id).cmp(&(b.span.start, b.span.end, &b.id)));
    for r in &wlp_relations {
        if r.role.is_none() && !map.relations.contains_key(&r.label) {
            warnings.push(format!("{}: unmapped relation label `{}` kept as legacy", r.id, r.label));
        }
    }

    let document = Document::new(name, text, sentences, mentions)?;
    Ok(ImportedDocument { format_version: FORMAT_VERSION, document, wlp_relations, warnings })
}

fn role_of(map: &LabelMap, label: &str) -> Option<Role> {
    match map.relation(label) {
        RelationMapping::Role(r) => Some(r),
        RelationMapping::Legacy => None,
    }
}

/// Imports every `<name>.ann` with a sibling `<name>.txt`, sorted by name.
pub fn import_brat_dir(dir: &Path, map: &LabelMap) -> Result<Vec<ImportedDocument>, CorpusError> {
    let mut anns: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ann"))
        .collect();
    anns.sort();
    let mut out = Vec::new();
    for ann_path in anns {
        let txt_path = ann_path.with_extension("txt");
        if !txt_path.exists() {
            continue;
        }
        let name = ann_path.file_stem().unwrap_or_default().to_string_lossy().to_string();
        let text = fs::read_to_string(&txt_path).map_err(io_err(&txt_path))?;
        let ann = fs::read_to_string(&ann_path).map_err(io_err(&ann_path))?;
        out.push(import_brat(&name, &text, &ann, map)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Statistics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleRow {
    pub role: Role,
    pub intra: usize,
    pub inter: usize,
    pub total: usize,
    /// Edges whose source is a reentrant node; only for core and `site`.
    pub reentrancies: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subtotal {
    pub intra: usize,
    pub inter: usize,
    pub total: usize,
    /// Share of all edges, in percent.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeCount {
    pub name: String,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub sentences: usize,
    pub words: usize,
    /// How `words` was counted.
    pub tokenization: String,
    pub roles: Vec<RoleRow>,
    pub core: Subtotal,
    pub non_core: Subtotal,
    pub temporal: Subtotal,
    pub all: Subtotal,
    pub reentrancies: usize,
    pub operation_types: Vec<TypeCount>,
    pub argument_types: Vec<TypeCount>,
    pub operations: usize,
    pub arguments: usize,
    /// Non-`succ` edges touching an operation, per operation.
    pub avg_args_per_op: f64,
    pub ops_without_core_args: usize,
    /// Per document, the share of operations whose type maps to Autoprotocol.
    pub coverage: Vec<(String, f64)>,
    /// Share of documents whose coverage meets each threshold.
    pub coverage_curve: Vec<(f64, f64)>,
}

pub const ROLE_TABLE_ORDER: [Role; 12] = [
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

pub const COVERAGE_THRESHOLDS: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

/// Whitespace-separated tokens inside sentence spans.
fn word_count(doc: &Document) -> usize {
    let chars: Vec<char> = doc.text().chars().collect();
    doc.sentences().iter().map(|s| chars[s.start..s.end].iter().collect::<String>().split_whitespace().count()).sum()
}

/// Locality used for corpus statistics: endpoints are widened to their
/// co-reference classes, except for `co-ref` edges themselves.
pub fn stats_locality(g: &PegGraph, e: &Edge, classes: &crate::graph::CorefClasses) -> Locality {
    if e.role == Role::CoRef {
        g.edge_locality(e)
    } else {
        g.edge_locality_with(e, classes)
    }
}

pub fn corpus_stats(graphs: &[PegGraph]) -> CorpusStats {
    let mut rows: BTreeMap<Role, (usize, usize, usize)> = BTreeMap::new();
    let mut op_counts: BTreeMap<OperationType, usize> = BTreeMap::new();
    let mut arg_counts: BTreeMap<ArgumentType, usize> = BTreeMap::new();
    let mut sentences = 0;
    let mut words = 0;
    let mut op_edges = 0;
    let mut ops_without_core_args = 0;
    let mut coverage = Vec::new();

    for g in graphs {
        sentences += g.document().sentences().len();
        words += word_count(g.document());
        let classes = g.coref_closure();
        let reentrant = g.reentrant_nodes();
        for e in g.edges() {
            let row = rows.entry(e.role).or_default();
            match stats_locality(g, e, &classes) {
                Locality::Intra => row.0 += 1,
                Locality::Inter => row.1 += 1,
            }
            if e.role.is_reentrant_role() && reentrant.contains(&e.source) {
                row.2 += 1;
            }
            let touches_op = [&e.source, &e.target].iter().any(|id| g.grounding(id).is_some_and(|g| g.is_operation()));
            if e.role != Role::Succ && touches_op {
                op_edges += 1;
            }
        }
        let mut types = Vec::new();
        for n in g.nodes() {
            match n.grounding {
                Grounding::Operation(t) => {
                    *op_counts.entry(t).or_default() += 1;
                    types.push(t);
                }
                Grounding::Argument(t) => *arg_counts.entry(t).or_default() += 1,
            }
        }
        ops_without_core_args += semantic_underspecified_ops(g).len();
        if let Ok(f) = coverage_fraction(&types) {
            coverage.push((g.document().id().to_string(), f));
        }
    }

    let fractions: Vec<f64> = coverage.iter().map(|(_, f)| *f).collect();
    let total_edges: usize = rows.values().map(|r| r.0 + r.1).sum();
    let role_rows: Vec<RoleRow> = ROLE_TABLE_ORDER
        .iter()
        .map(|&role| {
            let (intra, inter, re) = rows.get(&role).copied().unwrap_or_default();
            RoleRow { role, intra, inter, total: intra + inter, reentrancies: role.is_reentrant_role().then_some(re) }
        })
        .collect();
    let subtotal = |pred: &dyn Fn(Role) -> bool| {
        let (intra, inter) =
            role_rows.iter().filter(|r| pred(r.role)).fold((0, 0), |(a, b), r| (a + r.intra, b + r.inter));
        Subtotal { intra, inter, total: intra + inter, percent: percent(intra + inter, total_edges) }
    };
    let operations: usize = op_counts.values().sum();
    let arguments: usize = arg_counts.values().sum();

    CorpusStats {
        documents: graphs.len(),
        sentences,
        words,
        tokenization: "whitespace-separated tokens within sentence spans".into(),
        core: subtotal(&|r| r.is_core()),
        non_core: subtotal(&|r| !r.is_core() && r != Role::Succ),
        temporal: subtotal(&|r| r == Role::Succ),
        all: subtotal(&|_| true),
        reentrancies: role_rows.iter().filter_map(|r| r.reentrancies).sum(),
        roles: role_rows,
        operation_types: OperationType::ALL
            .iter()
            .map(|t| {
                let c = op_counts.get(t).copied().unwrap_or(0);
                TypeCount { name: t.to_string(), count: c, percent: percent(c, operations) }
            })
            .collect(),
        argument_types: ArgumentType::ALL
            .iter()
            .map(|t| {
                let c = arg_counts.get(t).copied().unwrap_or(0);
                TypeCount { name: t.to_string(), count: c, percent: percent(c, arguments) }
            })
            .collect(),
        operations,
        arguments,
        avg_args_per_op: if operations == 0 { 0.0 } else { op_edges as f64 / operations as f64 },
        ops_without_core_args,
        coverage_curve: coverage_curve(&fractions, &COVERAGE_THRESHOLDS),
        coverage,
    }
}

impl CorpusStats {
    pub fn role_row(&self, role: Role) -> Option<&RoleRow> {
        self.roles.iter().find(|r| r.role == role)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let per_sentence = if self.sentences == 0 { 0.0 } else { self.words as f64 / self.sentences as f64 };
        let per_doc = if self.documents == 0 { 0.0 } else { self.sentences as f64 / self.documents as f64 };
        let _ = writeln!(s, "documents {}  sentences {}  words {}", self.documents, self.sentences, self.words);
        let _ =
            writeln!(s, "words/sentence {per_sentence:.2}  sentences/document {per_doc:.2}  ({})", self.tokenization);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<12} {:>7} {:>7} {:>7} {:>7}", "role", "intra", "inter", "total", "reent.");
        for r in &self.roles {
            let re = r.reentrancies.map(|n| n.to_string()).unwrap_or_else(|| "-".into());
            let _ = writeln!(s, "{:<12} {:>7} {:>7} {:>7} {:>7}", r.role.as_str(), r.intra, r.inter, r.total, re);
        }
        for (name, t) in
            [("core", &self.core), ("non-core", &self.non_core), ("temporal", &self.temporal), ("all", &self.all)]
        {
            let _ = writeln!(s, "{:<12} {:>7} {:>7} {:>7} {:>6.1}%", name, t.intra, t.inter, t.total, t.percent);
        }
        let _ = writeln!(s, "reentrancies {}", self.reentrancies);
        let _ = writeln!(s);
        for (title, rows) in [("operation type", &self.operation_types), ("argument type", &self.argument_types)] {
            let _ = writeln!(s, "{title:<22} {:>7} {:>7}", "count", "%");
            for t in rows {
                let _ = writeln!(s, "{:<22} {:>7} {:>6.1}%", t.name, t.count, t.percent);
            }
            let _ = writeln!(s);
        }
        let _ = writeln!(s, "operations {}  arguments {}", self.operations, self.arguments);
        let _ = writeln!(
            s,
            "avg args/op {:.2}  ops without core args {}",
            self.avg_args_per_op, self.ops_without_core_args
        );
        let _ = writeln!(s);
        let _ = writeln!(s, "coverage threshold  share of protocols");
        for (t, share) in &self.coverage_curve {
            let _ = writeln!(s, "{:>17.0}%  {:>6.1}%", t * 100.0, share * 100.0);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_json_sorts_keys_recursively() {
        let v = serde_json::json!({"b": 1, "a": {"z": [{"y": 1, "x": 2}], "c": null}});
        let s = canonical_json(&v);
        let a = s.find("\"a\"").unwrap();
        let b = s.find("\"b\"").unwrap();
        assert!(a < b);
        assert!(s.find("\"c\"").unwrap() < s.find("\"z\"").unwrap());
        assert!(s.find("\"x\"").unwrap() < s.find("\"y\"").unwrap());
    }

    #[test]
    fn bundled_label_map_parses() {
        let m = LabelMap::default();
        assert_eq!(m.entities["Action"], Grounding::Operation(OperationType::General));
        assert_eq!(m.entities["Time"], Grounding::Argument(ArgumentType::Setting));
        assert_eq!(m.relation("Acts-on"), RelationMapping::Role(Role::Arg0));
        assert_eq!(m.relation("Count"), RelationMapping::Legacy);
        assert_eq!(m.relation("Never-Seen"), RelationMapping::Legacy);
    }

    const TXT: &str = "Add 5 ml buffer to the tube.\nMix gently.\n";

    #[test]
    fn brat_import_maps_labels_and_events() {
        let ann = "T1\tAction 0 3\tAdd\nT2\tAmount 4 8\t5 ml\nT3\tReagent 9 15\tbuffer\nT4\tLocation 23 27\ttube\n\
                   T5\tAction 29 32\tMix\nT6\tModifier 33 39\tgently\n\
                   E1\tAction:T1 Acts-on:T3 Site:T4\nE2\tAction:T5 Acts-on:E1\nR1\tMeasure Arg1:T3 Arg2:T2\nR2\tMod-Link Arg1:T5 Arg2:T6\n";
        let doc = import_brat("p1", TXT, ann, &LabelMap::default()).unwrap();
        assert_eq!(doc.document.sentences().len(), 2);
        assert_eq!(doc.document.mentions().len(), 6);
        assert!(doc.warnings.is_empty());
        let e2 = doc.wlp_relations.iter().find(|r| r.id == "E2.1").unwrap();
        assert_eq!((e2.arg1.as_str(), e2.arg2.as_str()), ("T5", "T1"));

        let g = doc.to_peg().unwrap();
        assert_eq!(g.nodes().len(), 6);
        assert!(g.contains_edge(&Edge::new("T3", Role::Arg0, "T1")));
        assert!(g.contains_edge(&Edge::new("T4", Role::Site, "T1")));
        assert!(g.contains_edge(&Edge::new("T2", Role::Measure, "T3")));
        assert!(g.contains_edge(&Edge::new("T6", Role::Modifier, "T5")));
        // Operation-to-operation ARG0 keeps the operation as head.
        assert!(
            g.contains_edge(&Edge::new("T5", Role::Arg0, "T1")) || g.contains_edge(&Edge::new("T1", Role::Arg0, "T5"))
        );
    }

    #[test]
    fn brat_offset_mismatch_names_the_annotation() {
        let ann = "T1\tAction 0 3\tAdd\nT2\tReagent 9 15\tbuffe\n";
        let err = import_brat("p1", TXT, ann, &LabelMap::default()).unwrap_err();
        match err {
            CorpusError::OffsetMismatch { id, start, end, .. } => assert_eq!((id.as_str(), start, end), ("T2", 9, 15)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn brat_orphan_reference_is_reported() {
        let ann = "T1\tAction 0 3\tAdd\nE1\tAction:T1 Acts-on:T9\n";
        let err = import_brat("p1", TXT, ann, &LabelMap::default()).unwrap_err();
        assert!(matches!(err, CorpusError::OrphanId { ref missing, .. } if missing == "T9"), "{err}");
    }

    #[test]
    fn unmapped_labels_warn() {
        let ann = "T1\tAction 0 3\tAdd\nT2\tMystery 9 15\tbuffer\nR1\tStrange Arg1:T1 Arg2:T2\n";
        let doc = import_brat("p1", TXT, ann, &LabelMap::default()).unwrap();
        assert_eq!(doc.warnings.len(), 2);
        assert_eq!(doc.document.mention("T2").unwrap().hint, None);
        assert_eq!(doc.to_peg().unwrap().nodes().len(), 1);
    }

    #[test]
    fn peg_version_and_role_errors() {
        let doc = r#"{"id":"d","text":"Mix it.","sentences":[[0,7]],"mentions":[
            {"id":"T1","span":[0,3],"surface":"Mix","kind":"operation"},
            {"id":"T2","span":[4,6],"surface":"it","kind":"argument"}]}"#;
        let v2 = format!(r#"{{"format_version":2,"document":{doc},"nodes":[],"edges":[]}}"#);
        assert!(matches!(load_peg(&v2), Err(CorpusError::Version { found: 2 })));
        let bad_role = format!(
            r#"{{"format_version":1,"document":{doc},
              "nodes":[{{"id":"T1","mention":"T1","grounding":{{"operation":"mix"}}}},
                       {{"id":"T2","mention":"T2","grounding":{{"argument":"reagent"}}}}],
              "edges":[{{"source":"T2","role":"ARG7","target":"T1"}}]}}"#
        );
        assert!(matches!(load_peg(&bad_role), Err(CorpusError::UnknownRole(r)) if r == "ARG7"));
        let ok = bad_role.replace("ARG7", "ARG0");
        let g = load_peg(&ok).unwrap();
        let saved = save_peg(&g);
        assert_eq!(save_peg(&load_peg(&saved).unwrap()), saved);
    }
}
