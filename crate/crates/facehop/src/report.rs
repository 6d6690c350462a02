//! Human-readable tables and JSON-lines records.

use std::fmt::Write;

use facehop_core::classify::Variant;
use facehop_core::features::BASE_NAMES;
use facehop_core::params::ParameterReport;
use facehop_core::saab::{NodeKind, Selection};
use facehop_core::FaceHop;
use serde::{Deserialize, Serialize};

use crate::pipeline::Repetition;

/// Accuracy of one classifier over all repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub classifier: String,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation (0 for a single repetition).
    pub std: f64,
}

impl AccuracyRow {
    pub fn new(classifier: impl Into<String>, accuracies: Vec<f64>) -> Self {
        let n = accuracies.len() as f64;
        let mean = accuracies.iter().sum::<f64>() / n;
        let std = (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self { classifier: classifier.into(), accuracies, mean, std }
    }
}

/// Eight base rows followed by the ensemble row.
pub fn accuracy_rows(reps: &[Repetition], variant: Variant) -> Vec<AccuracyRow> {
    let mut rows: Vec<AccuracyRow> = BASE_NAMES
        .iter()
        .enumerate()
        .map(|(b, name)| AccuracyRow::new(*name, reps.iter().map(|r| r.scores.base[b].accuracy).collect()))
        .collect();
    rows.push(AccuracyRow::new(
        format!("ensemble ({})", variant.name()),
        reps.iter().map(|r| r.scores.ensemble.accuracy).collect(),
    ));
    rows
}

/// Accuracies in percent with two decimals.
pub fn table(rows: &[AccuracyRow]) -> String {
    let reps = rows.first().map_or(0, |r| r.accuracies.len());
    let width = rows.iter().map(|r| r.classifier.len()).max().unwrap_or(10).max(10);
    let mut out = String::new();
    write!(out, "{:<width$}", "classifier").unwrap();
    for i in 0..reps {
        write!(out, " {:>7}", format!("rep{}", i + 1)).unwrap();
    }
    writeln!(out, " {:>7} {:>7}", "mean", "std").unwrap();
    for r in rows {
        write!(out, "{:<width$}", r.classifier).unwrap();
        for a in &r.accuracies {
            write!(out, " {:>7.2}", 100.0 * a).unwrap();
        }
        writeln!(out, " {:>7.2} {:>7.2}", 100.0 * r.mean, 100.0 * r.std).unwrap();
    }
    out
}

/// One JSON object per row.
pub fn jsonl(rows: &[AccuracyRow]) -> String {
    rows.iter().map(|r| serde_json::to_string(r).expect("row serializes") + "\n").collect()
}

pub fn parameters(report: &ParameterReport) -> String {
    let mut out = String::new();
    for item in &report.items {
        writeln!(out, "  {:<16} {:<22} {:<26} {:>8}", item.section.name(), item.name, item.formula, item.count).unwrap();
    }
    writeln!(out, "  {:<16} {:<22} {:<26} {:>8}", "total", "", "", report.total).unwrap();
    out
}

fn count_line(model: &FaceHop) -> String {
    let counts = model.tree.counts();
    let mut out = String::new();
    for (h, c) in counts.iter().enumerate() {
        write!(out, "  hop{}: intermediate {:>4}  leaf {:>4}  discard {:>5}", h + 1, c[0], c[1], c[2]).unwrap();
        if let Selection::FixedCounts { keep, discard } = model.config.hop.selection[h] {
            let kept = c[0] + c[1];
            let status = if kept == keep && c[2] == discard { "matches" } else { "differs from" };
            write!(out, "  ({status} configured {keep}/{discard})").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Node counts, energy check, feature dims and both parameter totals.
pub fn model_summary(model: &FaceHop) -> String {
    let mut out = String::from("node counts\n");
    out += &count_line(model);
    let sums = model.tree.depth_energy_sums();
    writeln!(out, "energy per depth (incl. mass stopped above): {:.9} {:.9} {:.9}", sums[0], sums[1], sums[2]).unwrap();
    out += "feature dims\n";
    for (name, m) in BASE_NAMES.iter().zip(&model.ensemble.base) {
        writeln!(out, "  {name:<22} {}", m.n_features()).unwrap();
    }
    for v in [Variant::FaceHopI, Variant::FaceHopII] {
        let marker = if v == model.ensemble.variant { " (trained)" } else { "" };
        writeln!(out, "parameters, {}{marker}", v.name()).unwrap();
        out += &parameters(&model.parameter_report(v));
    }
    out
}

/// Indented node tree. Discarded nodes are summarized per unit unless
/// `all` is set.
pub fn node_tree(model: &FaceHop, all: bool) -> String {
    let nodes = model.tree.nodes();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    let mut roots = Vec::new();
    for (i, n) in nodes.iter().enumerate() {
        match n.parent {
            Some(p) => children[p as usize].push(i),
            None => roots.push(i),
        }
    }
    let mut out = String::new();
    fn walk(i: usize, depth: usize, nodes: &[facehop_core::hoptree::Node], ch: &[Vec<usize>], all: bool, out: &mut String) {
        let n = &nodes[i];
        let kind = match n.kind {
            NodeKind::Intermediate => "intermediate",
            NodeKind::Leaf => "leaf",
            NodeKind::Discard => "discard",
        };
        writeln!(out, "{}hop{} u{} c{:<2} {:<12} {:.6e}", "  ".repeat(depth), n.hop, n.unit, n.channel, kind, n.energy).unwrap();
        list(&ch[i], depth + 1, nodes, ch, all, out);
    }
    fn list(ids: &[usize], depth: usize, nodes: &[facehop_core::hoptree::Node], ch: &[Vec<usize>], all: bool, out: &mut String) {
        let mut dropped = 0;
        let mut mass = 0.0;
        for &c in ids {
            if all || nodes[c].kind != NodeKind::Discard {
                walk(c, depth, nodes, ch, all, out);
            } else {
                dropped += 1;
                mass += nodes[c].energy;
            }
        }
        if dropped > 0 {
            writeln!(out, "{}[{dropped} discarded, energy {mass:.6e}]", "  ".repeat(depth)).unwrap();
        }
    }
    list(&roots, 0, nodes, &children, all, &mut out);
    out
}
