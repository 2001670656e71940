use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::ExtractedGraph;
use crate::error::{Error, Result};

const MIN_SIZE: f64 = 0.2;
const MAX_SIZE: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphFormat {
    Dot,
    Json,
}

impl FromStr for GraphFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dot" => Ok(GraphFormat::Dot),
            "json" => Ok(GraphFormat::Json),
            other => Err(Error::InvalidArgument(format!("unknown graph format `{other}` (expected dot or json)"))),
        }
    }
}

/// Node sizes min-max scaled into `[0.2, 2.0]`; equal importances all map to
/// the midpoint.
pub fn node_sizes(importance: &[f64]) -> Vec<f64> {
    let lo = importance.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = importance.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    importance
        .iter()
        .map(|&v| {
            if hi > lo {
                MIN_SIZE + (v - lo) / (hi - lo) * (MAX_SIZE - MIN_SIZE)
            } else {
                0.5 * (MIN_SIZE + MAX_SIZE)
            }
        })
        .collect()
}

/// Undirected DOT graph. Every unordered node pair gets an edge carrying its
/// `distance`; node `size` tracks importance and `pos` is pinned when a layout
/// is present.
pub fn graph_to_dot(graph: &ExtractedGraph) -> Result<String> {
    graph.validate()?;
    let sizes = node_sizes(&graph.node_importance);
    let mut s = String::new();
    let _ = writeln!(s, "graph activity_{} {{", graph.class_id);
    for (i, (imp, size)) in graph.node_importance.iter().zip(&sizes).enumerate() {
        let _ = write!(s, "  n{i} [importance={imp:.6}, size={size:.6}");
        if let Some(p) = &graph.positions {
            let _ = write!(s, ", pos=\"{:.6},{:.6}!\"", p[i][0], p[i][1]);
        }
        s.push_str("];\n");
    }
    let n = graph.num_nodes();
    for i in 0..n {
        for j in i + 1..n {
            let _ = writeln!(s, "  n{i} -- n{j} [distance={:.6}];", graph.edge_weights[i][j]);
        }
    }
    s.push_str("}\n");
    Ok(s)
}

pub fn graph_to_json(graph: &ExtractedGraph) -> Result<String> {
    graph.validate()?;
    Ok(serde_json::to_string_pretty(graph)?)
}

pub fn graph_from_json(text: &str) -> Result<ExtractedGraph> {
    let g: ExtractedGraph = serde_json::from_str(text)?;
    g.validate()?;
    Ok(g)
}

pub fn export_graph(graph: &ExtractedGraph, format: GraphFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        GraphFormat::Dot => graph_to_dot(graph)?,
        GraphFormat::Json => graph_to_json(graph)?,
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn import_graph_json(path: impl AsRef<Path>) -> Result<ExtractedGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    graph_from_json(&text)
}
