//! Granger networks as DOT.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use varorder_core::analysis::GrangerEdge;

use crate::error::{CliError, Result};

/// Display label and position of one series.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub label: String,
    pub x: f64,
    pub y: f64,
}

/// Read a `name,label,x,y` table keyed by series name.
pub fn read_regions(path: &Path) -> Result<BTreeMap<String, Region>> {
    let bytes = std::fs::read(path).map_err(CliError::io(path))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
    let bad = |msg: String| CliError::Usage(format!("{}: {msg}", path.display()));
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != ["name", "label", "x", "y"] {
        return Err(bad("expected header name,label,x,y".into()));
    }
    let mut out = BTreeMap::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let coord = |c: usize| {
            rec[c]
                .parse::<f64>()
                .map_err(|_| bad(format!("data row {}, column {}: non-numeric value '{}'", r + 1, header[c], &rec[c])))
        };
        let region = Region {
            label: rec[1].to_string(),
            x: coord(2)?,
            y: coord(3)?,
        };
        out.insert(rec[0].to_string(), region);
    }
    Ok(out)
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Directed graph with one node per series and one edge per (lag, source,
/// target) whose credible interval excludes zero.
pub fn granger_dot(names: &[String], edges: &[GrangerEdge], regions: Option<&BTreeMap<String, Region>>) -> String {
    let mut out = String::from("digraph granger {\n  node [shape=ellipse];\n");
    for (i, name) in names.iter().enumerate() {
        let mut attrs = Vec::new();
        match regions.and_then(|r| r.get(name)) {
            Some(reg) => {
                attrs.push(format!("label={}", quote(&reg.label)));
                attrs.push(format!("pos=\"{},{}!\"", reg.x, reg.y));
            }
            None => attrs.push(format!("label={}", quote(name))),
        }
        let _ = writeln!(out, "  n{} [{}];", i + 1, attrs.join(", "));
    }
    let max_w = edges.iter().map(|e| e.weight).fold(0.0, f64::max);
    for e in edges {
        let width = if max_w > 0.0 { 0.5 + 3.5 * e.weight / max_w } else { 1.0 };
        let _ = writeln!(
            out,
            "  n{} -> n{} [label=\"lag {}\", weight={:.6}, penwidth={:.3}, color=\"{}\"];",
            e.from,
            e.to,
            e.lag,
            e.weight,
            width,
            if e.mean >= 0.0 { "firebrick" } else { "steelblue" }
        );
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge(from: usize, to: usize, mean: f64) -> GrangerEdge {
        GrangerEdge {
            lag: 1,
            from,
            to,
            weight: mean.abs(),
            mean,
            ci_lo: mean - 0.1,
            ci_hi: mean + 0.1,
        }
    }

    #[test]
    fn dot_lists_nodes_and_edges() {
        let names = vec!["a".to_string(), "b".to_string()];
        let dot = granger_dot(&names, &[edge(1, 2, 0.5), edge(2, 2, -0.3)], None);
        assert!(dot.contains("n1 [label=\"a\"]"));
        assert!(dot.contains("n1 -> n2"));
        assert!(dot.contains("n2 -> n2"));
        assert_eq!(dot.matches("->").count(), 2);
    }

    #[test]
    fn regions_supply_labels_and_positions() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        std::fs::write(&p, "name,label,x,y\na,Frontal,1.5,2\n").unwrap();
        let regions = read_regions(&p).unwrap();
        let dot = granger_dot(&["a".to_string(), "b".to_string()], &[], Some(&regions));
        assert!(dot.contains("label=\"Frontal\", pos=\"1.5,2!\""));
        assert!(dot.contains("n2 [label=\"b\"]"));
    }
}
