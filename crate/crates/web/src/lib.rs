//! Browser bindings for pegkit.
//!
//! Everything crosses the JavaScript boundary as JSON strings, so the same
//! functions are exercised natively by the tests. The page in `www/` uses
//! three operations: annotating a document command by command (with
//! autocompletion and a live SVG drawing of the draft), scoring one PEG
//! against another, and lowering a PEG to an instruction program.

use std::collections::HashMap;
use std::fmt::Write as _;

use pegkit::corpus::{canonical_json, load_document, load_peg, save_peg};
use pegkit::evaluation::{decompose, SmatchOptions};
use pegkit::lowering::{lower, LoweringError};
use pegkit::simulator::Session;
use pegkit::validator::lint;
use pegkit::{PegGraph, Role};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const EXAMPLES: [(&str, &str, &str); 2] = [
    ("fig1", include_str!("../../core/fixtures/fig1.peg.json"), include_str!("../../core/fixtures/fig1.log")),
    ("protocol-512", include_str!("../../core/fixtures/fig3.peg.json"), include_str!("../../core/fixtures/fig3.log")),
];

fn to_json(v: &Value) -> String {
    canonical_json(v)
}

fn error_json(msg: impl std::fmt::Display) -> String {
    to_json(&json!({ "error": msg.to_string() }))
}

/// Ids of the bundled example protocols.
#[wasm_bindgen]
pub fn example_ids() -> String {
    to_json(&json!(EXAMPLES.iter().map(|(id, ..)| *id).collect::<Vec<_>>()))
}

/// A bundled example as `{peg, script}`: the gold PEG file and a command
/// log that rebuilds it.
#[wasm_bindgen]
pub fn example(id: &str) -> String {
    match EXAMPLES.iter().find(|(name, ..)| *name == id) {
        Some((_, peg, script)) => to_json(&json!({ "peg": peg, "script": script })),
        None => error_json(format!("unknown example `{id}`")),
    }
}

/// An annotation session in the browser.
#[wasm_bindgen]
pub struct Annotator {
    session: Session,
}

impl Annotator {
    /// Native counterpart of the constructor.
    pub fn open(document_json: &str) -> Result<Annotator, String> {
        let doc = load_document(document_json).map_err(|e| e.to_string())?;
        Ok(Annotator { session: Session::new(doc) })
    }
}

#[wasm_bindgen]
impl Annotator {
    /// Starts a session over a document file, or over the document of a
    /// PEG file.
    #[wasm_bindgen(constructor)]
    pub fn new(document_json: &str) -> Result<Annotator, JsError> {
        Annotator::open(document_json).map_err(|e| JsError::new(&e))
    }

    /// Issues one command line and returns the outcome with the new revision.
    pub fn issue(&mut self, line: &str) -> String {
        match self.session.issue_line(line) {
            Ok(outcome) => {
                let mut v = json!(outcome);
                v["revision"] = json!(self.session.log().len());
                to_json(&v)
            }
            Err(e) => error_json(e),
        }
    }

    /// Completions for a partially typed command.
    pub fn complete(&self, prefix: &str) -> String {
        to_json(&json!(self.session.autocomplete(prefix)))
    }

    /// Tracked entity state and execution order.
    pub fn state(&self) -> String {
        to_json(&json!({
            "revision": self.session.log().len(),
            "exec_order": self.session.exec_order(),
            "entities": self.session.state().entities,
            "lint": lint(&self.session.draft()),
        }))
    }

    /// The accepted command log, one command per line.
    pub fn log(&self) -> String {
        self.session.log_text()
    }

    /// The draft graph as a PEG file.
    pub fn peg(&self) -> String {
        save_peg(&self.session.draft())
    }

    /// The finalized PEG file, or the reason the session cannot finish yet.
    pub fn finalize(&self) -> String {
        match self.session.finalize() {
            Ok(done) => to_json(&json!({ "peg": save_peg(&done.graph), "lint": done.lint })),
            Err(e) => error_json(e),
        }
    }

    /// The draft drawn as SVG.
    pub fn svg(&self) -> String {
        render_svg(&self.session.draft())
    }
}

/// Smatch and its decomposition for a predicted PEG file against a gold one.
#[wasm_bindgen]
pub fn score(gold_json: &str, pred_json: &str) -> String {
    let (gold, pred) = match (load_peg(gold_json), load_peg(pred_json)) {
        (Ok(g), Ok(p)) => (g, p),
        (Err(e), _) => return error_json(format!("gold: {e}")),
        (_, Err(e)) => return error_json(format!("prediction: {e}")),
    };
    let report = decompose(&gold, &pred, SmatchOptions::default());
    to_json(&json!({ "report": report, "table": report.to_table() }))
}

/// The instruction program for a PEG file.
#[wasm_bindgen]
pub fn lower_peg(peg_json: &str) -> String {
    let g = match load_peg(peg_json) {
        Ok(g) => g,
        Err(e) => return error_json(e),
    };
    match lower(&g) {
        Ok(program) => to_json(&json!(program)),
        Err(LoweringError::Invalid(diags)) => {
            to_json(&json!({ "error": "graph does not validate", "diagnostics": diags }))
        }
    }
}

/// Draws a PEG file as SVG.
#[wasm_bindgen]
pub fn peg_svg(peg_json: &str) -> Result<String, JsError> {
    let g = load_peg(peg_json).map_err(|e| JsError::new(&e.to_string()))?;
    Ok(render_svg(&g))
}

const COL: f64 = 120.0;
const OP_Y: f64 = 70.0;
const ARG_Y: f64 = 230.0;
const BOX_W: f64 = 108.0;
const BOX_H: f64 = 40.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn truncate(s: &str, n: usize) -> String {
    if s.chars().count() <= n {
        s.to_string()
    } else {
        let mut t: String = s.chars().take(n - 1).collect();
        t.push('…');
        t
    }
}

/// Two-row layout: operations on top, arguments below, each row in
/// document order. `succ` edges arc above the operation row; every other
/// edge runs from the argument up to its head.
pub fn render_svg(g: &PegGraph) -> String {
    let doc = g.document();
    let order = |id: &str| doc.mentions().iter().position(|m| m.id == id).unwrap_or(usize::MAX);
    let mut ops: Vec<_> = g.nodes().iter().filter(|n| n.grounding.is_operation()).collect();
    let mut args: Vec<_> = g.nodes().iter().filter(|n| !n.grounding.is_operation()).collect();
    ops.sort_by_key(|n| order(&n.id));
    args.sort_by_key(|n| order(&n.id));

    let mut pos: HashMap<&str, (f64, f64)> = HashMap::new();
    for (i, n) in ops.iter().enumerate() {
        pos.insert(&n.id, (20.0 + i as f64 * COL, OP_Y));
    }
    for (i, n) in args.iter().enumerate() {
        pos.insert(&n.id, (20.0 + i as f64 * COL, ARG_Y));
    }
    let width = 40.0 + ops.len().max(args.len()).max(1) as f64 * COL;
    let height = ARG_Y + BOX_H + 30.0;

    let mut out = String::new();
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    out.push_str(
        r##"<defs><marker id="arrow" viewBox="0 0 10 10" refX="9" refY="5" markerWidth="7" markerHeight="7" orient="auto-start-reverse"><path d="M0,0 L10,5 L0,10 z" fill="#555"/></marker></defs>"##,
    );

    for e in g.edges() {
        let (Some(&(sx, sy)), Some(&(tx, ty))) = (pos.get(e.source.as_str()), pos.get(e.target.as_str())) else {
            continue;
        };
        let (color, dash) = match e.role {
            Role::Succ => ("#999", r#" stroke-dasharray="4 3""#),
            r if r.is_core() => ("#1f5fa8", ""),
            _ => ("#b5651d", ""),
        };
        let (path, lx, ly) = if e.role == Role::Succ {
            let (x1, x2, y) = (sx + BOX_W / 2.0, tx + BOX_W / 2.0, sy);
            let lift = 22.0 + (x2 - x1).abs() / 12.0;
            (format!("M{x1},{y} C{x1},{y0} {x2},{y0} {x2},{y}", y0 = y - lift), (x1 + x2) / 2.0, y - lift * 0.75)
        } else if (sy - ty).abs() < 1.0 {
            // Argument to argument (co-ref, part-of): arc below the row.
            let (x1, x2, y) = (sx + BOX_W / 2.0, tx + BOX_W / 2.0, sy + BOX_H);
            let drop = 18.0 + (x2 - x1).abs() / 14.0;
            (format!("M{x1},{y} C{x1},{y1} {x2},{y1} {x2},{y}", y1 = y + drop), (x1 + x2) / 2.0, y + drop * 0.75)
        } else {
            let (x1, y1, x2, y2) = (sx + BOX_W / 2.0, sy, tx + BOX_W / 2.0, ty + BOX_H);
            (format!("M{x1},{y1} L{x2},{y2}"), (x1 + x2) / 2.0, (y1 + y2) / 2.0)
        };
        let _ = write!(
            out,
            r#"<path d="{path}" fill="none" stroke="{color}" stroke-width="1.3"{dash} marker-end="url(#arrow)"><title>{}</title></path>"#,
            escape(&e.to_string())
        );
        let _ = write!(
            out,
            r#"<text x="{lx:.1}" y="{ly:.1}" fill="{color}" text-anchor="middle" paint-order="stroke" stroke="white" stroke-width="3">{}</text>"#,
            e.role.as_str()
        );
    }

    for n in ops.iter().chain(args.iter()) {
        let (x, y) = pos[n.id.as_str()];
        let fill = if n.grounding.is_operation() { "#e8f0fb" } else { "#fdf3e7" };
        let surface = doc.mention(&n.mention).map(|m| m.surface.as_str()).unwrap_or("");
        let _ = write!(
            out,
            r##"<g class="node" data-id="{id}"><rect x="{x}" y="{y}" width="{BOX_W}" height="{BOX_H}" rx="6" fill="{fill}" stroke="#555"/><text x="{cx}" y="{ty1}" text-anchor="middle" font-weight="bold">{label}</text><text x="{cx}" y="{ty2}" text-anchor="middle" fill="#444">{kind}</text><title>{id}: {full}</title></g>"##,
            id = escape(&n.id),
            cx = x + BOX_W / 2.0,
            ty1 = y + 16.0,
            ty2 = y + 31.0,
            label = escape(&truncate(surface, 16)),
            kind = n.grounding.type_name(),
            full = escape(surface),
        );
    }
    out.push_str("</svg>");
    out
}
