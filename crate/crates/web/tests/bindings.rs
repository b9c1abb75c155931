//! The JSON-string API used by the browser page, exercised natively.

use pegkit_web::{example, example_ids, lower_peg, peg_svg, score, Annotator};
use serde_json::Value;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

fn bundled(id: &str) -> (String, String) {
    let v = parse(&example(id));
    (v["peg"].as_str().unwrap().to_string(), v["script"].as_str().unwrap().to_string())
}

#[test]
fn examples_are_bundled() {
    assert_eq!(parse(&example_ids()), serde_json::json!(["fig1", "protocol-512"]));
    assert!(parse(&example("nope"))["error"].is_string());
}

#[test]
fn annotating_an_example_reproduces_its_gold_graph() {
    for id in ["fig1", "protocol-512"] {
        let (gold, script) = bundled(id);
        let mut a = Annotator::open(&gold).unwrap();
        for (i, line) in pegkit::simulator::script_lines(&script).enumerate() {
            let out = parse(&a.issue(line));
            assert_eq!(out["accepted"], true, "{id} {line}: {out}");
            assert_eq!(out["revision"], i + 1);
        }
        let done = parse(&a.finalize());
        let peg = done["peg"].as_str().unwrap();
        let report = parse(&score(&gold, peg));
        assert_eq!(report["report"]["smatch"]["f1"], 1.0, "{id}");
        assert_eq!(parse(&a.state())["lint"]["component_count"], 1, "{id}");
    }
}

#[test]
fn completions_and_errors_are_json() {
    let (gold, _) = bundled("fig1");
    let mut a = Annotator::open(&gold).unwrap();
    let completions = parse(&a.complete("ground O1 "));
    assert_eq!(completions.as_array().unwrap().len(), 13);
    assert!(parse(&a.issue("frobnicate"))["error"].is_string());
    assert_eq!(parse(&a.issue("link O1 ARG0 A1"))["accepted"], false);
    assert_eq!(parse(&a.issue("ground O1 transfer"))["accepted"], true);
    assert!(parse(&a.finalize())["error"].as_str().unwrap().contains("O1"));
    assert!(Annotator::open("{}").is_err());
}

#[test]
fn lowering_returns_the_program_or_diagnostics() {
    let (gold, _) = bundled("fig1");
    let program = parse(&lower_peg(&gold));
    let names: Vec<&str> =
        program["instructions"].as_array().unwrap().iter().map(|i| i["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["LiquidHandle", "Agitate", "Incubate"]);
    assert_eq!(program["holes"].as_array().unwrap().len(), 2);

    let mut broken = parse(&gold);
    broken["edges"].as_array_mut().unwrap().retain(|e| e["role"] != "site");
    let out = parse(&lower_peg(&broken.to_string()));
    assert!(!out["diagnostics"].as_array().unwrap().is_empty());
}

#[test]
fn svg_draws_every_node_and_edge() {
    let (gold, _) = bundled("protocol-512");
    let svg = peg_svg(&gold).unwrap();
    let g = pegkit::corpus::load_peg(&gold).unwrap();
    assert!(svg.starts_with("<svg") && svg.ends_with("</svg>"));
    assert_eq!(svg.matches("<g class=\"node\"").count(), g.nodes().len());
    assert_eq!(svg.matches("marker-end=").count(), g.edges().len());
    // Surfaces are escaped and the markup is well formed enough to count tags.
    assert_eq!(svg.matches("<text").count(), svg.matches("</text>").count());
}

#[test]
fn draft_drawing_grows_with_the_session() {
    let (gold, _) = bundled("fig1");
    let mut a = Annotator::open(&gold).unwrap();
    let empty = a.svg();
    assert_eq!(empty.matches("<g class=\"node\"").count(), 0);
    a.issue("ground O1 transfer");
    a.issue("ground A1 reagent");
    a.issue("link O1 ARG0 A1");
    let svg = a.svg();
    assert_eq!(svg.matches("<g class=\"node\"").count(), 2);
    assert!(svg.contains(">ARG0</text>"));
    assert!(parse(&a.peg())["edges"].as_array().unwrap().len() == 1);
    assert_eq!(a.log().lines().count(), 3);
}
