use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use crate::model::{Artifact, ArtifactTree};

use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Markdown,
    Dot,
    CsvLinks,
}

impl FromStr for ExportFormat {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(Self::Markdown),
            "dot" => Ok(Self::Dot),
            "csv-links" | "csv" => Ok(Self::CsvLinks),
            other => Err(PipelineError::Config(format!(
                "unknown export format {other:?} (expected markdown, dot or csv-links)"
            ))),
        }
    }
}

pub fn export(tree: &ArtifactTree, format: ExportFormat) -> Vec<u8> {
    match format {
        ExportFormat::Markdown => markdown(tree),
        ExportFormat::Dot => dot(tree),
        ExportFormat::CsvLinks => csv_links(tree),
    }
    .into_bytes()
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Headings from the top layer down. Each artifact is written once, under the first
/// parent that reaches it; artifacts no parent reaches are appended at their own depth.
fn markdown(tree: &ArtifactTree) -> String {
    let top = tree.layers.len().saturating_sub(1);
    let mut children: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for l in &tree.links {
        children.entry(l.parent_id.as_str()).or_default().push(l.child_id.as_str());
    }
    let by_id: BTreeMap<&str, &Artifact> = tree.artifacts().map(|a| (a.id.as_str(), a)).collect();
    let mut out = format!("# {}\n\n", one_line(&tree.project_name));
    let mut written: BTreeSet<&str> = BTreeSet::new();

    fn write_node<'t>(
        out: &mut String,
        a: &'t Artifact,
        top: usize,
        by_id: &BTreeMap<&str, &'t Artifact>,
        children: &BTreeMap<&str, Vec<&'t str>>,
        written: &mut BTreeSet<&'t str>,
    ) {
        if !written.insert(a.id.as_str()) {
            return;
        }
        let level = (top - a.layer_index + 2).min(6);
        let _ = writeln!(
            out,
            "{} {} ({})\n\n<a id=\"{}\"></a>\n",
            "#".repeat(level),
            one_line(&a.title),
            a.artifact_type,
            a.id
        );
        if let Some(path) = &a.source_path {
            let _ = writeln!(out, "Source: `{path}`\n");
        }
        let _ = writeln!(out, "{}\n", a.body.trim());
        let kids: Vec<&&str> = children.get(a.id.as_str()).map(|k| k.iter().collect()).unwrap_or_default();
        if !kids.is_empty() {
            for k in &kids {
                if let Some(c) = by_id.get(**k) {
                    let _ = writeln!(out, "- [{}](#{})", one_line(&c.title), c.id);
                }
            }
            out.push('\n');
        }
        for k in kids {
            if let Some(c) = by_id.get(*k) {
                write_node(out, c, top, by_id, children, written);
            }
        }
    }

    for layer in tree.layers.iter().rev() {
        for a in &layer.artifacts {
            write_node(&mut out, a, top, &by_id, &children, &mut written);
        }
    }
    out
}

fn dot_escape(s: &str) -> String {
    one_line(s).replace('\\', "\\\\").replace('"', "\\\"")
}

fn dot(tree: &ArtifactTree) -> String {
    let mut out = format!("digraph \"{}\" {{\n  rankdir=TB;\n  node [shape=box];\n", dot_escape(&tree.project_name));
    for layer in tree.layers.iter().rev() {
        let _ = writeln!(out, "  subgraph layer_{} {{\n    rank=same;", layer.index);
        for a in &layer.artifacts {
            let _ = writeln!(
                out,
                "    \"{}\" [label=\"{}\\n({})\"];",
                a.id,
                dot_escape(&a.title),
                dot_escape(&a.artifact_type)
            );
        }
        out.push_str("  }\n");
    }
    for l in &tree.links {
        let _ = writeln!(out, "  \"{}\" -> \"{}\" [label=\"{:.3}\"];", l.parent_id, l.child_id, l.score);
    }
    out.push_str("}\n");
    out
}

fn csv_links(tree: &ArtifactTree) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record(["parent", "child", "score"]);
    for l in &tree.links {
        let _ = w.write_record([l.parent_id.as_str(), l.child_id.as_str(), &format!("{:.6}", l.score)]);
    }
    String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
}
