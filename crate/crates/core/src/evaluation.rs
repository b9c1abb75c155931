//! Smatch scoring of PEGs and its fine-grained decompositions.
//!
//! A graph is flattened into triples: one `instance` triple per node
//! (its grounding), one `surface` triple per node (lower-cased mention
//! text) and one relation triple per edge. Smatch is the best F1 over
//! injective node alignments, found by restarted hill-climbing.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::graph::{Locality, PegGraph, Role, RoleCategory, Span};
use crate::ontology::Grounding;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvaluationError {
    #[error("gold document `{gold}` and predicted document `{pred}` differ")]
    DocumentMismatch { gold: String, pred: String },
}

/// Triples of a graph, with nodes referred to by index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TripleSet {
    pub node_ids: Vec<String>,
    pub spans: Vec<Span>,
    pub instances: Vec<(usize, Grounding)>,
    pub surfaces: Vec<(usize, String)>,
    pub relations: Vec<(usize, Role, usize)>,
}

impl TripleSet {
    pub fn from_graph(g: &PegGraph) -> Self {
        Self::subgraph(g, |_| true, |_| true, true)
    }

    /// Triples of the nodes accepted by `keep_node` and the edges accepted
    /// by `keep_edge` (whose endpoints are kept as well).
    pub fn subgraph(
        g: &PegGraph,
        keep_node: impl Fn(&str) -> bool,
        keep_edge: impl Fn(&crate::graph::Edge) -> bool,
        with_surface: bool,
    ) -> Self {
        let edges: Vec<_> = g.edges().iter().filter(|e| keep_edge(e)).collect();
        let mut kept: HashSet<&str> = g.nodes().iter().map(|n| n.id.as_str()).filter(|id| keep_node(id)).collect();
        for e in &edges {
            kept.insert(&e.source);
            kept.insert(&e.target);
        }
        let mut out = TripleSet::default();
        let mut index = HashMap::new();
        for n in g.nodes_in_document_order() {
            if !kept.contains(n.id.as_str()) {
                continue;
            }
            let i = out.node_ids.len();
            index.insert(n.id.as_str(), i);
            out.node_ids.push(n.id.clone());
            let mention = g.mention_of(&n.id).expect("node mention resolves");
            out.spans.push(mention.span);
            out.instances.push((i, n.grounding));
            if with_surface {
                out.surfaces.push((i, mention.surface.to_lowercase()));
            }
        }
        out.relations = edges.iter().map(|e| (index[e.source.as_str()], e.role, index[e.target.as_str()])).collect();
        out
    }

    pub fn len(&self) -> usize {
        self.instances.len() + self.surfaces.len() + self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: usize,
    pub gold_total: usize,
    pub pred_total: usize,
}

impl Prf {
    /// Scores with the convention that two empty sets agree perfectly.
    pub fn from_counts(matched: usize, gold_total: usize, pred_total: usize) -> Self {
        Self::from_split_counts(matched, pred_total, matched, gold_total)
    }

    /// Precision and recall with separate numerators, for bucketed scores
    /// where a match may fall in different buckets on each side.
    pub fn from_split_counts(pred_correct: usize, pred_total: usize, gold_correct: usize, gold_total: usize) -> Self {
        let (precision, recall) = if gold_total == 0 && pred_total == 0 {
            (1.0, 1.0)
        } else {
            (ratio(pred_correct, pred_total), ratio(gold_correct, gold_total))
        };
        Prf { precision, recall, f1: f1(precision, recall), matched: gold_correct, gold_total, pred_total }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmatchOptions {
    pub restarts: usize,
    pub seed: u64,
    /// Seed the first restart with nodes whose spans and types coincide.
    pub span_anchor: bool,
}

impl Default for SmatchOptions {
    fn default() -> Self {
        SmatchOptions { restarts: 4, seed: 0, span_anchor: true }
    }
}

/// Best alignment found: gold node id to predicted node id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Alignment {
    pub pairs: Vec<(String, String)>,
    pub matched_triples: usize,
}

struct Scorer<'a> {
    gold: &'a TripleSet,
    pred: &'a TripleSet,
    unary: Vec<Vec<usize>>,
    incident: Vec<Vec<usize>>,
    pred_relations: HashSet<(usize, Role, usize)>,
}

impl<'a> Scorer<'a> {
    fn new(gold: &'a TripleSet, pred: &'a TripleSet) -> Self {
        let n = gold.node_ids.len();
        let m = pred.node_ids.len();
        let mut unary = vec![vec![0usize; m]; n];
        let mut pred_inst: HashMap<usize, Vec<Grounding>> = HashMap::new();
        for (p, t) in &pred.instances {
            pred_inst.entry(*p).or_default().push(*t);
        }
        let mut pred_surf: HashMap<usize, Vec<&str>> = HashMap::new();
        for (p, s) in &pred.surfaces {
            pred_surf.entry(*p).or_default().push(s);
        }
        for (g, t) in &gold.instances {
            for (p, row) in pred_inst.iter() {
                unary[*g][*p] += row.iter().filter(|x| *x == t).count();
            }
        }
        for (g, s) in &gold.surfaces {
            for (p, row) in pred_surf.iter() {
                unary[*g][*p] += row.iter().filter(|x| **x == s.as_str()).count();
            }
        }
        let mut incident = vec![Vec::new(); n];
        for (i, (s, _, t)) in gold.relations.iter().enumerate() {
            incident[*s].push(i);
            if t != s {
                incident[*t].push(i);
            }
        }
        Scorer { gold, pred, unary, incident, pred_relations: pred.relations.iter().copied().collect() }
    }

    fn relation_hit(&self, rel: usize, map: &[Option<usize>]) -> usize {
        let (s, r, t) = self.gold.relations[rel];
        match (map[s], map[t]) {
            (Some(ps), Some(pt)) => usize::from(self.pred_relations.contains(&(ps, r, pt))),
            _ => 0,
        }
    }

    fn total(&self, map: &[Option<usize>]) -> usize {
        let unary: usize = map.iter().enumerate().filter_map(|(g, p)| p.map(|p| self.unary[g][p])).sum();
        let rel: usize = (0..self.gold.relations.len()).map(|i| self.relation_hit(i, map)).sum();
        unary + rel
    }

    /// Score contribution of the given gold nodes and their relations.
    fn local(&self, map: &[Option<usize>], nodes: &[usize]) -> usize {
        let mut score = 0;
        let mut seen: Vec<usize> = Vec::new();
        for &g in nodes {
            if let Some(p) = map[g] {
                score += self.unary[g][p];
            }
            for &rel in &self.incident[g] {
                if !seen.contains(&rel) {
                    seen.push(rel);
                    score += self.relation_hit(rel, map);
                }
            }
        }
        score
    }

    fn climb(&self, map: &mut [Option<usize>]) {
        let m = self.pred.node_ids.len();
        let n = map.len();
        loop {
            let mut used = vec![false; m];
            for p in map.iter().flatten() {
                used[*p] = true;
            }
            let mut best: Option<(isize, Move)> = None;
            let mut consider = |delta: isize, mv: Move| {
                if delta > 0 && best.as_ref().is_none_or(|(d, _)| delta > *d) {
                    best = Some((delta, mv));
                }
            };
            for g in 0..n {
                let before = self.local(map, &[g]) as isize;
                let old = map[g];
                for (p, _) in used.iter().enumerate().filter(|(_, u)| !**u) {
                    map[g] = Some(p);
                    consider(self.local(map, &[g]) as isize - before, Move::Reassign(g, Some(p)));
                }
                if old.is_some() {
                    map[g] = None;
                    consider(self.local(map, &[g]) as isize - before, Move::Reassign(g, None));
                }
                map[g] = old;
            }
            for a in 0..n {
                for b in (a + 1)..n {
                    if map[a] == map[b] {
                        continue;
                    }
                    let before = self.local(map, &[a, b]) as isize;
                    map.swap(a, b);
                    let after = self.local(map, &[a, b]) as isize;
                    map.swap(a, b);
                    consider(after - before, Move::Swap(a, b));
                }
            }
            match best {
                Some((_, Move::Reassign(g, p))) => map[g] = p,
                Some((_, Move::Swap(a, b))) => map.swap(a, b),
                None => return,
            }
        }
    }

    fn anchored_start(&self) -> Vec<Option<usize>> {
        let n = self.gold.node_ids.len();
        let mut map = vec![None; n];
        let mut used = vec![false; self.pred.node_ids.len()];
        let inst = |set: &TripleSet, i: usize| set.instances.iter().find(|(x, _)| *x == i).map(|(_, t)| *t);
        let surf = |set: &TripleSet, i: usize| set.surfaces.iter().find(|(x, _)| *x == i).map(|(_, s)| s.clone());
        let passes: [&dyn Fn(usize, usize) -> bool; 2] =
            [&|g, p| self.gold.spans[g] == self.pred.spans[p] && inst(self.gold, g) == inst(self.pred, p), &|g, p| {
                inst(self.gold, g) == inst(self.pred, p) && surf(self.gold, g) == surf(self.pred, p)
            }];
        for pass in passes {
            for (g, slot) in map.iter_mut().enumerate().take(n) {
                if slot.is_some() {
                    continue;
                }
                if let Some(p) = (0..used.len()).find(|&p| !used[p] && pass(g, p)) {
                    *slot = Some(p);
                    used[p] = true;
                }
            }
        }
        map
    }

    fn random_start(&self, rng: &mut ChaCha8Rng) -> Vec<Option<usize>> {
        let n = self.gold.node_ids.len();
        let m = self.pred.node_ids.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut used = vec![false; m];
        let mut map = vec![None; n];
        for g in order {
            let candidates: Vec<usize> = (0..m).filter(|&p| !used[p] && self.unary[g][p] > 0).collect();
            if candidates.is_empty() {
                continue;
            }
            let p = candidates[rng.gen_range(0..candidates.len())];
            map[g] = Some(p);
            used[p] = true;
        }
        map
    }
}

#[derive(Clone, Copy)]
enum Move {
    Reassign(usize, Option<usize>),
    Swap(usize, usize),
}

/// Smatch between two triple sets.
pub fn smatch_triples(gold: &TripleSet, pred: &TripleSet, opts: SmatchOptions) -> (Prf, Alignment) {
    let scorer = Scorer::new(gold, pred);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best_map: Vec<Option<usize>> = vec![None; gold.node_ids.len()];
    let mut best = 0;
    for restart in 0..opts.restarts.max(1) {
        let mut map =
            if restart == 0 && opts.span_anchor { scorer.anchored_start() } else { scorer.random_start(&mut rng) };
        scorer.climb(&mut map);
        let score = scorer.total(&map);
        if score > best || restart == 0 {
            best = score;
            best_map = map;
        }
        if best == gold.len().min(pred.len()) {
            break;
        }
    }
    let pairs = best_map
        .iter()
        .enumerate()
        .filter_map(|(g, p)| p.map(|p| (gold.node_ids[g].clone(), pred.node_ids[p].clone())))
        .collect();
    (Prf::from_counts(best, gold.len(), pred.len()), Alignment { pairs, matched_triples: best })
}

pub fn smatch(gold: &PegGraph, pred: &PegGraph, opts: SmatchOptions) -> (Prf, Alignment) {
    smatch_triples(&TripleSet::from_graph(gold), &TripleSet::from_graph(pred), opts)
}

/// Triples for argument identification: instance and surface triples of
/// argument nodes.
pub fn argument_triples(g: &PegGraph) -> TripleSet {
    TripleSet::subgraph(g, |id| g.grounding(id).is_some_and(|t| !t.is_operation()), |_| false, true)
}

pub fn predicate_triples(g: &PegGraph) -> TripleSet {
    TripleSet::subgraph(g, |id| g.grounding(id).is_some_and(Grounding::is_operation), |_| false, true)
}

/// Core-role relation triples plus the instance triples of their endpoints.
pub fn core_role_triples(g: &PegGraph) -> TripleSet {
    TripleSet::subgraph(g, |_| false, |e| e.role.is_core(), false)
}

/// Reentrant nodes with their incident core and `site` edges, as relation
/// and instance triples.
pub fn reentrancy_triples(g: &PegGraph) -> TripleSet {
    let reentrant: BTreeSet<String> = g.reentrant_nodes();
    TripleSet::subgraph(
        g,
        |id| reentrant.contains(id),
        |e| e.role.is_reentrant_role() && (reentrant.contains(&e.source) || reentrant.contains(&e.target)),
        false,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationRow {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub pred: usize,
    pub correct: usize,
}

impl RelationRow {
    fn new(label: &str, prf: Prf, correct: usize) -> Self {
        RelationRow {
            label: label.to_string(),
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
            gold: prf.gold_total,
            pred: prf.pred_total,
            correct,
        }
    }
}

/// Span-exact relation scores by role, plus the intra/inter-sentence split
/// of core roles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationReport {
    pub rows: Vec<RelationRow>,
    pub split: Vec<RelationRow>,
}

impl RelationReport {
    pub fn row(&self, label: &str) -> Option<&RelationRow> {
        self.rows.iter().chain(&self.split).find(|r| r.label == label)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<20} {:>7} {:>7} {:>7} {:>7}", "Relation", "P", "R", "F1", "# gold");
        for r in self.rows.iter().chain(std::iter::once(&RelationRow::separator())).chain(&self.split) {
            if r.label.is_empty() {
                let _ = writeln!(out, "{}", "-".repeat(52));
                continue;
            }
            let _ = writeln!(
                out,
                "{:<20} {:>7.2} {:>7.2} {:>7.2} {:>7}",
                r.label,
                100.0 * r.precision,
                100.0 * r.recall,
                100.0 * r.f1,
                r.gold
            );
        }
        out
    }
}

impl RelationRow {
    fn separator() -> Self {
        RelationRow { label: String::new(), precision: 0.0, recall: 0.0, f1: 0.0, gold: 0, pred: 0, correct: 0 }
    }
}

fn same_document(gold: &PegGraph, pred: &PegGraph) -> Result<(), EvaluationError> {
    let (a, b) = (gold.document(), pred.document());
    if a.id() != b.id() || a.text() != b.text() {
        return Err(EvaluationError::DocumentMismatch { gold: a.id().to_string(), pred: b.id().to_string() });
    }
    Ok(())
}

type SpanEdge = (Span, Role, Span);

fn span_edges(g: &PegGraph) -> Vec<(SpanEdge, Locality)> {
    let coref = g.coref_closure();
    g.edges()
        .iter()
        .map(|e| {
            let key = (
                g.mention_of(&e.source).expect("mention").span,
                e.role,
                g.mention_of(&e.target).expect("mention").span,
            );
            let locality = if e.role == Role::CoRef { g.edge_locality(e) } else { g.edge_locality_with(e, &coref) };
            (key, locality)
        })
        .collect()
}

/// Scores predicted relations against gold ones. An edge is correct when
/// its role and both endpoint spans match a gold edge exactly.
pub fn relation_prf(gold: &PegGraph, pred: &PegGraph) -> Result<RelationReport, EvaluationError> {
    same_document(gold, pred)?;
    let gold_edges = span_edges(gold);
    let pred_edges = span_edges(pred);
    let gold_keys: HashSet<SpanEdge> = gold_edges.iter().map(|(k, _)| *k).collect();
    let pred_keys: HashSet<SpanEdge> = pred_edges.iter().map(|(k, _)| *k).collect();

    let count = |filter: &dyn Fn(Role) -> bool| {
        let g = gold_keys.iter().filter(|k| filter(k.1)).count();
        let p = pred_keys.iter().filter(|k| filter(k.1)).count();
        let c = pred_keys.iter().filter(|k| filter(k.1) && gold_keys.contains(k)).count();
        (c, g, p)
    };
    let row = |label: &str, filter: &dyn Fn(Role) -> bool| {
        let (c, g, p) = count(filter);
        RelationRow::new(label, Prf::from_counts(c, g, p), c)
    };

    let mut rows = vec![row("Core (all)", &|r| r.category() == RoleCategory::Core)];
    for r in [Role::Arg0, Role::Arg1, Role::Arg2] {
        rows.push(row(r.as_str(), &|x| x == r));
    }
    rows.push(row("Non-core (all)", &|r| r.category() == RoleCategory::NonCore));
    for r in [
        Role::Site,
        Role::Setting,
        Role::Usage,
        Role::CoRef,
        Role::Measure,
        Role::Modifier,
        Role::LocatedAt,
        Role::PartOf,
    ] {
        rows.push(row(r.as_str(), &|x| x == r));
    }
    rows.push(row("Temporal ordering", &|r| r == Role::Succ));

    let split = [(Locality::Intra, "Intra-sentence"), (Locality::Inter, "Inter-sentence")]
        .into_iter()
        .map(|(loc, label)| {
            let g: Vec<_> = gold_edges.iter().filter(|(k, l)| k.1.is_core() && *l == loc).collect();
            let p: Vec<_> = pred_edges.iter().filter(|(k, l)| k.1.is_core() && *l == loc).collect();
            let gold_correct = g.iter().filter(|(k, _)| pred_keys.contains(k)).count();
            let pred_correct = p.iter().filter(|(k, _)| gold_keys.contains(k)).count();
            RelationRow::new(label, Prf::from_split_counts(pred_correct, p.len(), gold_correct, g.len()), gold_correct)
        })
        .collect();
    Ok(RelationReport { rows, split })
}

/// Smatch plus the four agreement sub-metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub smatch: Prf,
    pub argument_identification: Prf,
    pub predicate_identification: Prf,
    pub core_roles: Prf,
    pub reentrancies: Prf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relations: Option<RelationReport>,
}

impl ScoreReport {
    pub fn metrics(&self) -> [(&'static str, Prf); 5] {
        [
            ("Smatch", self.smatch),
            ("Argument identification", self.argument_identification),
            ("Predicate identification", self.predicate_identification),
            ("Core roles", self.core_roles),
            ("Re-entrancies", self.reentrancies),
        ]
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<26} {:>7} {:>7} {:>7}", "Metric", "P", "R", "F1");
        for (name, m) in self.metrics() {
            let _ = writeln!(
                out,
                "{:<26} {:>7.2} {:>7.2} {:>7.2}",
                name,
                100.0 * m.precision,
                100.0 * m.recall,
                100.0 * m.f1
            );
        }
        if let Some(rel) = &self.relations {
            out.push('\n');
            out.push_str(&rel.to_table());
        }
        out
    }
}

pub fn decompose(gold: &PegGraph, pred: &PegGraph, opts: SmatchOptions) -> ScoreReport {
    let run = |f: fn(&PegGraph) -> TripleSet| smatch_triples(&f(gold), &f(pred), opts).0;
    ScoreReport {
        smatch: smatch(gold, pred, opts).0,
        argument_identification: run(argument_triples),
        predicate_identification: run(predicate_triples),
        core_roles: run(core_role_triples),
        reentrancies: run(reentrancy_triples),
        relations: None,
    }
}
