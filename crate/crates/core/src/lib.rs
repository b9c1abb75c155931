//! Process execution graphs (PEGs) for wet-lab protocols.
//!
//! A PEG is a document-level, directed, labeled graph whose nodes are
//! anchored on text spans of a protocol. Operation nodes are grounded to
//! one of 13 operation types and argument nodes to one of 8 argument
//! types; edges carry core roles (`ARG0`..`ARG2`), non-core roles, or the
//! temporal `succ` label.
//!
//! The crate is organized as:
//!
//! - [`graph`]: documents, mentions, nodes, edges and the validated [`PegGraph`].
//! - [`ontology`]: the closed type system and edge legality rules.
//! - [`validator`]: whole-graph validation and the connectivity linter.
//! - [`simulator`]: the command-driven annotation engine that compiles
//!   sessions into PEGs.
//! - [`evaluation`]: Smatch alignment and its fine-grained decompositions.
//! - [`lowering`]: compilation of PEGs to Autoprotocol-style instructions.
//! - [`corpus`]: PEG files, BRAT import and corpus statistics.

pub mod corpus;
pub mod evaluation;
pub mod graph;
pub mod lowering;
pub mod ontology;
pub mod simulator;
pub mod validator;

pub use graph::{build_graph, Document, Edge, GraphError, Locality, Mention, MentionKind, Node, PegGraph, Role, Span};
pub use ontology::{ArgumentType, Grounding, OperationType};
