//! Shared helpers for the integration tests: fixture loading, an exact
//! alignment oracle that shares no code with the library scorer, and
//! seeded generators for random graphs and random simulator sessions.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::PathBuf;

use pegkit::corpus::{load_document, read_peg};
use pegkit::simulator::{Command, Session};
use pegkit::{
    build_graph, ArgumentType, Document, Edge, Grounding, Mention, MentionKind, Node, OperationType, PegGraph, Role,
    Span,
};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// `fig1` or `fig3`.
pub fn gold(name: &str) -> PegGraph {
    read_peg(&fixture_path(&format!("{name}.peg.json"))).unwrap()
}

pub fn document(name: &str) -> Document {
    load_document(&fixture_text(&format!("{name}.doc.json"))).unwrap()
}

/// Rebuilds `g` with a different edge list.
pub fn with_edges(g: &PegGraph, edges: Vec<Edge>) -> PegGraph {
    build_graph(g.document().clone(), g.nodes().to_vec(), edges).unwrap()
}

pub fn without_edge(g: &PegGraph, drop: &Edge) -> PegGraph {
    with_edges(g, g.edges().iter().filter(|e| *e != drop).cloned().collect())
}

// ---------------------------------------------------------------------------
// Exact alignment oracle

/// A graph as labelled nodes and labelled relations, derived directly from
/// the public graph accessors.
#[derive(Debug, Clone, Default)]
pub struct OracleGraph {
    pub labels: Vec<Vec<String>>,
    pub relations: Vec<(usize, String, usize)>,
}

impl OracleGraph {
    pub fn triple_count(&self) -> usize {
        self.labels.iter().map(Vec::len).sum::<usize>() + self.relations.len()
    }

    fn build(g: &PegGraph, keep: &BTreeSet<String>, edges: &[&Edge], surface: bool) -> Self {
        let mut keep = keep.clone();
        for e in edges {
            keep.insert(e.source.clone());
            keep.insert(e.target.clone());
        }
        let mut index = HashMap::new();
        let mut out = OracleGraph::default();
        for n in g.nodes().iter().filter(|n| keep.contains(&n.id)) {
            index.insert(n.id.clone(), out.labels.len());
            let kind = if n.grounding.is_operation() { "operation" } else { "argument" };
            let mut labels = vec![format!("instance:{kind}:{}", n.grounding.type_name())];
            if surface {
                let text = &g.document().mention(&n.mention).unwrap().surface;
                labels.push(format!("surface:{}", text.to_lowercase()));
            }
            out.labels.push(labels);
        }
        out.relations = edges.iter().map(|e| (index[&e.source], e.role.to_string(), index[&e.target])).collect();
        out
    }

    pub fn full(g: &PegGraph) -> Self {
        let all: BTreeSet<String> = g.nodes().iter().map(|n| n.id.clone()).collect();
        let edges: Vec<&Edge> = g.edges().iter().collect();
        Self::build(g, &all, &edges, true)
    }

    pub fn arguments(g: &PegGraph) -> Self {
        let args = g.nodes().iter().filter(|n| !n.grounding.is_operation()).map(|n| n.id.clone()).collect();
        Self::build(g, &args, &[], true)
    }

    pub fn predicates(g: &PegGraph) -> Self {
        let ops = g.nodes().iter().filter(|n| n.grounding.is_operation()).map(|n| n.id.clone()).collect();
        Self::build(g, &ops, &[], true)
    }

    pub fn core_roles(g: &PegGraph) -> Self {
        let core = [Role::Arg0, Role::Arg1, Role::Arg2];
        let edges: Vec<&Edge> = g.edges().iter().filter(|e| core.contains(&e.role)).collect();
        Self::build(g, &BTreeSet::new(), &edges, false)
    }

    /// Arguments filling a core or `site` role at least twice, with all of
    /// their core and `site` edges.
    pub fn reentrancies(g: &PegGraph) -> Self {
        let roles = [Role::Arg0, Role::Arg1, Role::Arg2, Role::Site];
        let mut count: HashMap<&str, usize> = HashMap::new();
        for e in g.edges().iter().filter(|e| roles.contains(&e.role)) {
            let src = g.nodes().iter().find(|n| n.id == e.source).unwrap();
            if !src.grounding.is_operation() {
                *count.entry(e.source.as_str()).or_default() += 1;
            }
        }
        let reentrant: BTreeSet<String> =
            count.into_iter().filter(|(_, c)| *c >= 2).map(|(id, _)| id.to_string()).collect();
        let edges: Vec<&Edge> = g
            .edges()
            .iter()
            .filter(|e| roles.contains(&e.role) && (reentrant.contains(&e.source) || reentrant.contains(&e.target)))
            .collect();
        Self::build(g, &reentrant, &edges, false)
    }
}

fn unary(a: &[String], b: &[String]) -> usize {
    a.iter().filter(|l| b.contains(l)).count()
}

fn score(gold: &OracleGraph, pred: &OracleGraph, map: &[Option<usize>]) -> usize {
    let pred_rel: HashSet<(usize, &str, usize)> = pred.relations.iter().map(|(a, r, b)| (*a, r.as_str(), *b)).collect();
    let u: usize = map.iter().enumerate().filter_map(|(i, j)| j.map(|j| unary(&gold.labels[i], &pred.labels[j]))).sum();
    let r = gold
        .relations
        .iter()
        .filter(|(a, role, b)| match (map[*a], map[*b]) {
            (Some(x), Some(y)) => pred_rel.contains(&(x, role.as_str(), y)),
            _ => false,
        })
        .count();
    u + r
}

/// Maximum matched triples by plain enumeration of every partial injective
/// map. Only usable on tiny graphs; used to check [`best_match`].
pub fn brute_force_match(gold: &OracleGraph, pred: &OracleGraph) -> usize {
    fn go(
        k: usize,
        gold: &OracleGraph,
        pred: &OracleGraph,
        map: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        best: &mut usize,
    ) {
        if k == gold.labels.len() {
            *best = (*best).max(score(gold, pred, map));
            return;
        }
        map[k] = None;
        go(k + 1, gold, pred, map, used, best);
        for j in 0..pred.labels.len() {
            if !used[j] {
                used[j] = true;
                map[k] = Some(j);
                go(k + 1, gold, pred, map, used, best);
                used[j] = false;
            }
        }
        map[k] = None;
    }
    let mut best = 0;
    go(0, gold, pred, &mut vec![None; gold.labels.len()], &mut vec![false; pred.labels.len()], &mut best);
    best
}

/// Maximum matched triples over all partial injective maps, by exhaustive
/// branch-and-bound. Exact: a branch is cut only when an upper bound on
/// everything it could still reach is no better than the best so far.
pub fn best_match(gold: &OracleGraph, pred: &OracleGraph) -> usize {
    let n = gold.labels.len();
    let m = pred.labels.len();
    let u: Vec<Vec<usize>> =
        (0..n).map(|i| (0..m).map(|j| unary(&gold.labels[i], &pred.labels[j])).collect()).collect();

    // Visit high-degree gold nodes first so relations resolve early.
    let mut degree = vec![0usize; n];
    for (a, _, b) in &gold.relations {
        degree[*a] += 1;
        degree[*b] += 1;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(degree[i]), i));
    let mut position = vec![0; n];
    for (k, &i) in order.iter().enumerate() {
        position[i] = k;
    }
    let mut resolves: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (r, (a, _, b)) in gold.relations.iter().enumerate() {
        resolves[position[*a].max(position[*b])].push(r);
    }
    let max_unary: Vec<usize> = order.iter().map(|&i| u[i].iter().copied().max().unwrap_or(0)).collect();
    let mut suffix = vec![0; n + 1];
    for k in (0..n).rev() {
        suffix[k] = suffix[k + 1] + max_unary[k];
    }

    let roles: Vec<String> = gold
        .relations
        .iter()
        .chain(&pred.relations)
        .map(|(_, r, _)| r.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let role_index: HashMap<&str, usize> = roles.iter().enumerate().map(|(i, r)| (r.as_str(), i)).collect();
    let mut pred_per_role = vec![0usize; roles.len()];
    for (_, r, _) in &pred.relations {
        pred_per_role[role_index[r.as_str()]] += 1;
    }
    let mut open_per_role = vec![0usize; roles.len()];
    for (_, r, _) in &gold.relations {
        open_per_role[role_index[r.as_str()]] += 1;
    }
    let pred_rel: HashSet<(usize, &str, usize)> = pred.relations.iter().map(|(a, r, b)| (*a, r.as_str(), *b)).collect();

    struct Search<'a> {
        n: usize,
        m: usize,
        order: &'a [usize],
        u: &'a [Vec<usize>],
        suffix: &'a [usize],
        resolves: &'a [Vec<usize>],
        gold: &'a OracleGraph,
        role_index: &'a HashMap<&'a str, usize>,
        pred_rel: &'a HashSet<(usize, &'a str, usize)>,
        pred_per_role: &'a [usize],
        map: Vec<Option<usize>>,
        used: Vec<bool>,
        matched_per_role: Vec<usize>,
        open_per_role: Vec<usize>,
        best: usize,
    }

    impl Search<'_> {
        fn bound(&self, k: usize, score: usize) -> usize {
            let rel: usize = (0..self.open_per_role.len())
                .map(|r| self.open_per_role[r].min(self.pred_per_role[r] - self.matched_per_role[r]))
                .sum();
            score + self.suffix[k] + rel
        }

        fn go(&mut self, k: usize, score: usize) {
            if k == self.n {
                self.best = self.best.max(score);
                return;
            }
            if self.bound(k, score) <= self.best {
                return;
            }
            let i = self.order[k];
            let mut candidates: Vec<Option<usize>> = (0..self.m).filter(|&j| !self.used[j]).map(Some).collect();
            candidates.sort_by_key(|j| std::cmp::Reverse(self.u[i][j.unwrap()]));
            candidates.push(None);
            for cand in candidates {
                self.map[i] = cand;
                if let Some(j) = cand {
                    self.used[j] = true;
                }
                let mut gained = cand.map_or(0, |j| self.u[i][j]);
                let mut touched = Vec::new();
                for &r in &self.resolves[k] {
                    let (a, role, b) = &self.gold.relations[r];
                    let ri = self.role_index[role.as_str()];
                    self.open_per_role[ri] -= 1;
                    let hit = matches!((self.map[*a], self.map[*b]), (Some(x), Some(y)) if self.pred_rel.contains(&(x, role.as_str(), y)));
                    if hit {
                        gained += 1;
                        self.matched_per_role[ri] += 1;
                    }
                    touched.push((ri, hit));
                }
                self.go(k + 1, score + gained);
                for (ri, hit) in touched {
                    self.open_per_role[ri] += 1;
                    if hit {
                        self.matched_per_role[ri] -= 1;
                    }
                }
                if let Some(j) = cand {
                    self.used[j] = false;
                }
                self.map[i] = None;
            }
        }
    }

    let mut s = Search {
        n,
        m,
        order: &order,
        u: &u,
        suffix: &suffix,
        resolves: &resolves,
        gold,
        role_index: &role_index,
        pred_rel: &pred_rel,
        pred_per_role: &pred_per_role,
        map: vec![None; n],
        used: vec![false; m],
        matched_per_role: vec![0; roles.len()],
        open_per_role,
        best: 0,
    };
    s.go(0, 0);
    s.best
}

/// F1 from matched counts, with two empty sets scoring 1.
pub fn oracle_f1(gold: &OracleGraph, pred: &OracleGraph) -> f64 {
    let (g, p) = (gold.triple_count(), pred.triple_count());
    if g == 0 && p == 0 {
        return 1.0;
    }
    let matched = best_match(gold, pred) as f64;
    let precision = if p == 0 { 0.0 } else { matched / p as f64 };
    let recall = if g == 0 { 0.0 } else { matched / g as f64 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

// ---------------------------------------------------------------------------
// Random graphs

const OP_WORDS: [&str; 4] = ["add", "mix", "spin", "incubate"];
const ARG_WORDS: [&str; 5] = ["tube", "buffer", "cells", "ice", "gently"];
const OP_TYPES: [OperationType; 4] =
    [OperationType::Transfer, OperationType::Mix, OperationType::Spin, OperationType::TemperatureTreatment];
const ARG_TYPES: [ArgumentType; 3] = [ArgumentType::Reagent, ArgumentType::Location, ArgumentType::Modifier];
const EDGE_ROLES: [Role; 6] = [Role::Arg0, Role::Arg1, Role::Site, Role::Modifier, Role::CoRef, Role::Succ];

/// A document whose mentions are exactly its words, split into sentences
/// after the given word counts.
pub fn word_document(id: &str, words: &[(String, MentionKind)], ids: &[String], breaks: &[usize]) -> Document {
    let text = words.iter().map(|(w, _)| w.as_str()).collect::<Vec<_>>().join(" ");
    let mut mentions = Vec::new();
    let mut starts = Vec::new();
    let mut at = 0;
    for (k, (w, kind)) in words.iter().enumerate() {
        let len = w.chars().count();
        starts.push((at, at + len));
        mentions.push(Mention {
            id: ids[k].clone(),
            span: Span::new(at, at + len),
            surface: w.clone(),
            kind: *kind,
            hint: None,
        });
        at += len + 1;
    }
    let mut sentences = Vec::new();
    let mut first = 0;
    for &end in breaks.iter().chain(std::iter::once(&words.len())) {
        if end > first {
            sentences.push(Span::new(starts[first].0, starts[end - 1].1));
            first = end;
        }
    }
    Document::new(id, text, sentences, mentions).unwrap()
}

fn random_words(rng: &mut impl Rng, n: usize) -> Vec<(String, MentionKind)> {
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.4) {
                (OP_WORDS.choose(rng).unwrap().to_string(), MentionKind::Operation)
            } else {
                (ARG_WORDS.choose(rng).unwrap().to_string(), MentionKind::Argument)
            }
        })
        .collect()
}

fn random_grounding(rng: &mut impl Rng, kind: MentionKind) -> Grounding {
    match kind {
        MentionKind::Operation => Grounding::Operation(*OP_TYPES.choose(rng).unwrap()),
        MentionKind::Argument => Grounding::Argument(*ARG_TYPES.choose(rng).unwrap()),
    }
}

/// Adds up to `count` random structurally valid edges (succ only forward
/// between operations, so it stays acyclic).
fn add_random_edges(
    rng: &mut impl Rng,
    nodes: &[Node],
    position: &HashMap<String, usize>,
    edges: &mut Vec<Edge>,
    count: usize,
) {
    if nodes.len() < 2 {
        return;
    }
    for _ in 0..count {
        let s = nodes.choose(rng).unwrap();
        let t = nodes.choose(rng).unwrap();
        if s.id == t.id {
            continue;
        }
        let role = *EDGE_ROLES.choose(rng).unwrap();
        if role == Role::Succ
            && !(s.grounding.is_operation() && t.grounding.is_operation() && position[&s.id] < position[&t.id])
        {
            continue;
        }
        let e = Edge::new(s.id.clone(), role, t.id.clone());
        if !edges.contains(&e) {
            edges.push(e);
        }
    }
}

/// A random gold graph of 1–`max_nodes` nodes and a perturbed prediction
/// over a lightly edited copy of the text with unrelated node ids.
pub fn random_pair(rng: &mut impl Rng, max_nodes: usize) -> (PegGraph, PegGraph) {
    let n = rng.gen_range(1..=max_nodes);
    let words = random_words(rng, n);
    let breaks: Vec<usize> = (1..n).filter(|_| rng.gen_bool(0.3)).collect();
    let gold_ids: Vec<String> = (0..n).map(|k| format!("T{}", k + 1)).collect();
    let gold_doc = word_document("gold", &words, &gold_ids, &breaks);
    let gold_nodes: Vec<Node> =
        (0..n).map(|k| Node::new(&gold_ids[k], &gold_ids[k], random_grounding(rng, words[k].1))).collect();
    let gold_pos: HashMap<String, usize> = gold_ids.iter().cloned().enumerate().map(|(k, id)| (id, k)).collect();
    let mut gold_edges = Vec::new();
    let count = rng.gen_range(0..=n + 3);
    add_random_edges(rng, &gold_nodes, &gold_pos, &mut gold_edges, count);
    let gold = build_graph(gold_doc, gold_nodes.clone(), gold_edges.clone()).unwrap();

    // Prediction: some words swapped, ids shuffled, nodes dropped or
    // regrounded, edges dropped and added.
    let pred_words: Vec<(String, MentionKind)> = words
        .iter()
        .map(|(w, kind)| {
            if rng.gen_bool(0.15) {
                let pool: &[&str] = if *kind == MentionKind::Operation { &OP_WORDS } else { &ARG_WORDS };
                (pool.choose(rng).unwrap().to_string(), *kind)
            } else {
                (w.clone(), *kind)
            }
        })
        .collect();
    let mut labels: Vec<usize> = (1..=n).collect();
    labels.shuffle(rng);
    let pred_ids: Vec<String> = labels.iter().map(|k| format!("P{k}")).collect();
    let rename: HashMap<String, String> = gold_ids.iter().cloned().zip(pred_ids.iter().cloned()).collect();
    let pred_doc = word_document("pred", &pred_words, &pred_ids, &breaks);
    let kept: Vec<usize> = (0..n).filter(|_| !rng.gen_bool(0.1)).collect();
    let pred_nodes: Vec<Node> = kept
        .iter()
        .map(|&k| {
            let grounding = if rng.gen_bool(0.2) { random_grounding(rng, words[k].1) } else { gold_nodes[k].grounding };
            Node::new(&pred_ids[k], &pred_ids[k], grounding)
        })
        .collect();
    let alive: HashSet<&str> = pred_nodes.iter().map(|n| n.id.as_str()).collect();
    let pred_pos: HashMap<String, usize> = pred_ids.iter().cloned().enumerate().map(|(k, id)| (id, k)).collect();
    let mut pred_edges: Vec<Edge> = gold_edges
        .iter()
        .map(|e| Edge::new(rename[&e.source].clone(), e.role, rename[&e.target].clone()))
        .filter(|e| alive.contains(e.source.as_str()) && alive.contains(e.target.as_str()))
        .filter(|e| {
            // A regrounded node may no longer be an operation.
            e.role != Role::Succ
                || pred_nodes
                    .iter()
                    .filter(|n| n.id == e.source || n.id == e.target)
                    .all(|n| n.grounding.is_operation())
        })
        .filter(|_| !rng.gen_bool(0.2))
        .collect();
    let extra = rng.gen_range(0..=2);
    add_random_edges(rng, &pred_nodes, &pred_pos, &mut pred_edges, extra);
    let pred = build_graph(pred_doc, pred_nodes, pred_edges).unwrap();
    (gold, pred)
}

// ---------------------------------------------------------------------------
// Random simulator sessions

/// A random protocol document for simulation: 3–10 words with hints.
pub fn random_session_document(rng: &mut impl Rng, id: &str) -> Document {
    let n = rng.gen_range(3..=10);
    let words = random_words(rng, n);
    let breaks: Vec<usize> = (1..n).filter(|_| rng.gen_bool(0.3)).collect();
    let ids: Vec<String> = (0..n)
        .map(|k| if words[k].1 == MentionKind::Operation { format!("O{}", k + 1) } else { format!("A{}", k + 1) })
        .collect();
    word_document(id, &words, &ids, &breaks)
}

/// A command drawn uniformly from every verb, mention, type and role,
/// mostly ill-formed for the current state.
pub fn random_raw_command(rng: &mut impl Rng, doc: &Document) -> Command {
    let ids: Vec<&str> = doc.mentions().iter().map(|m| m.id.as_str()).collect();
    let id = |rng: &mut _| ids.choose(rng).unwrap().to_string();
    match rng.gen_range(0..5) {
        0 => {
            let grounding = if rng.gen_bool(0.5) {
                Grounding::Operation(*OperationType::ALL.choose(rng).unwrap())
            } else {
                Grounding::Argument(*ArgumentType::ALL.choose(rng).unwrap())
            };
            Command::Ground { mention: id(rng), grounding }
        }
        1 => Command::Link { head: id(rng), role: *Role::ALL.choose(rng).unwrap(), dependent: id(rng) },
        2 => Command::Exec { op: id(rng) },
        3 => Command::Coref { mention: id(rng), antecedent: id(rng) },
        _ => Command::Undo,
    }
}

/// A command assembled by walking autocomplete suggestions.
pub fn random_completed_command(rng: &mut impl Rng, session: &Session) -> Option<Command> {
    let mut prefix = String::new();
    for _ in 0..4 {
        let options = session.autocomplete(&prefix);
        let pick = options.choose(rng)?.clone();
        if let Ok(cmd) = Command::parse(&pick, session.document()) {
            return Some(cmd);
        }
        prefix = format!("{pick} ");
    }
    None
}

/// Runs a random session: a mix of suggested and arbitrary commands, then
/// an attempt to finish by filling required roles and executing every
/// operation. Returns the session.
pub fn random_session(rng: &mut impl Rng, doc: Document) -> Session {
    let mut session = Session::new(doc);
    let steps = rng.gen_range(5..40);
    for _ in 0..steps {
        let cmd = if rng.gen_bool(0.7) {
            random_completed_command(rng, &session)
        } else {
            Some(random_raw_command(rng, session.document()))
        };
        if let Some(cmd) = cmd {
            session.issue(cmd);
        }
    }
    // Finish: execute whatever can be executed, linking the first legal
    // filler of any missing required role.
    for _ in 0..session.document().mentions().len() {
        let pending: Vec<String> =
            session.draft().operations().filter(|n| !session.is_executed(&n.id)).map(|n| n.id.clone()).collect();
        if pending.is_empty() {
            break;
        }
        for op in pending {
            let op_type = session.draft().grounding(&op).and_then(|g| g.operation()).unwrap();
            for &role in pegkit::ontology::required_roles(op_type) {
                if session.draft().edges().iter().any(|e| e.target == op && e.role == role) {
                    continue;
                }
                if let Some(dep) = session.link_candidates(&op, role).first().cloned() {
                    session.issue(Command::Link { head: op.clone(), role, dependent: dep });
                }
            }
            session.issue(Command::Exec { op });
        }
    }
    session
}
