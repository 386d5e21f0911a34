//! One-pass-evaluation metrics: success plot / AUC, precision / P@20,
//! attribute-sliced reporting, and a small SVG plot writer.
//!
//! Threshold conventions, fixed so golden files stay stable: the success
//! curve uses strict `IoU > t` at interior thresholds; the endpoint buckets
//! are inclusive (t = 0 passes every frame, t = 1 counts IoU >= 1 so a
//! perfect track scores exactly 1). Precision uses `distance <= t`. Success
//! thresholds are 0..1 step 0.05 (21 points), precision 0..50 px step 1 (51).

use crate::bbox::{iou, BBox};
use crate::error::{contract_err, Result};
use std::io::Write;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct EvalCurve {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
    /// Mean of the curve values.
    pub auc: f64,
    /// Precision at 20 px; `None` for success curves.
    pub p20: Option<f64>,
}

fn check_lengths(pred: &[BBox], gt: &[BBox]) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return contract_err(format!(
            "curve wants equal non-empty box lists, got {} vs {}",
            pred.len(),
            gt.len()
        ));
    }
    Ok(())
}

pub fn success_curve(pred: &[BBox], gt: &[BBox]) -> Result<EvalCurve> {
    check_lengths(pred, gt)?;
    let ious: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| iou(p, g)).collect();
    let thresholds: Vec<f64> = (0..=20).map(|i| i as f64 * 0.05).collect();
    let n = ious.len() as f64;
    let last = thresholds.len() - 1;
    let values: Vec<f64> = thresholds
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            if i == 0 {
                1.0
            } else if i == last {
                ious.iter().filter(|&&v| v >= t).count() as f64 / n
            } else {
                ious.iter().filter(|&&v| v > t).count() as f64 / n
            }
        })
        .collect();
    let auc = values.iter().sum::<f64>() / values.len() as f64;
    Ok(EvalCurve { thresholds, values, auc, p20: None })
}

pub fn precision_curve(pred: &[BBox], gt: &[BBox]) -> Result<EvalCurve> {
    check_lengths(pred, gt)?;
    let dists: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| p.center_distance(g)).collect();
    let thresholds: Vec<f64> = (0..=50).map(|i| i as f64).collect();
    let n = dists.len() as f64;
    let values: Vec<f64> = thresholds
        .iter()
        .map(|&t| dists.iter().filter(|&&d| d <= t).count() as f64 / n)
        .collect();
    let auc = values.iter().sum::<f64>() / values.len() as f64;
    let p20 = values[20];
    Ok(EvalCurve { thresholds, values, auc, p20: Some(p20) })
}

pub const KNOWN_TAGS: [&str; 6] = ["FM", "BC", "DEF", "OCC", "SV", "IV"];

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeRow {
    pub tag: String,
    pub mean_auc: f64,
    pub sequences: usize,
}

/// Mean success AUC per attribute over sequences carrying that tag; tags
/// outside the known vocabulary aggregate under "other".
pub fn attribute_report(per_sequence: &[(String, f64, Vec<String>)]) -> Vec<AttributeRow> {
    let mut rows = Vec::new();
    for tag in KNOWN_TAGS {
        let aucs: Vec<f64> = per_sequence
            .iter()
            .filter(|(_, _, tags)| tags.iter().any(|t| t == tag))
            .map(|(_, auc, _)| *auc)
            .collect();
        if !aucs.is_empty() {
            rows.push(AttributeRow {
                tag: tag.to_string(),
                mean_auc: aucs.iter().sum::<f64>() / aucs.len() as f64,
                sequences: aucs.len(),
            });
        }
    }
    let other: Vec<f64> = per_sequence
        .iter()
        .filter(|(_, _, tags)| tags.iter().any(|t| !KNOWN_TAGS.contains(&t.as_str())))
        .map(|(_, auc, _)| *auc)
        .collect();
    if !other.is_empty() {
        rows.push(AttributeRow {
            tag: "other".to_string(),
            mean_auc: other.iter().sum::<f64>() / other.len() as f64,
            sequences: other.len(),
        });
    }
    rows
}

pub fn write_report_csv(
    path: &Path,
    success: &EvalCurve,
    precision: &EvalCurve,
    attributes: &[AttributeRow],
) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "metric,value")?;
    writeln!(f, "success_auc,{}", success.auc)?;
    writeln!(f, "precision_p20,{}", precision.p20.unwrap_or(0.0))?;
    for row in attributes {
        writeln!(f, "attr_{},{}", row.tag, row.mean_auc)?;
    }
    Ok(())
}

/// Minimal two-panel SVG: success curve left, precision curve right.
pub fn write_plot_svg(path: &Path, success: &EvalCurve, precision: &EvalCurve) -> Result<()> {
    let (pw, ph, margin) = (420.0f64, 320.0f64, 40.0f64);
    let panel = |curve: &EvalCurve, x_off: f64, title: &str, x_max: f64| -> String {
        let mut pts = String::new();
        for (t, v) in curve.thresholds.iter().zip(&curve.values) {
            let x = x_off + margin + (t / x_max) * (pw - 2.0 * margin);
            let y = ph - margin - v * (ph - 2.0 * margin);
            pts.push_str(&format!("{x:.1},{y:.1} "));
        }
        let mut s = String::new();
        s.push_str(&format!(
            r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#888"/>"##,
            x_off + margin,
            margin,
            pw - 2.0 * margin,
            ph - 2.0 * margin
        ));
        s.push_str(&format!(
            r##"<polyline points="{pts}" fill="none" stroke="#2060c0" stroke-width="2"/>"##
        ));
        s.push_str(&format!(
            r##"<text x="{}" y="20" font-size="14" text-anchor="middle">{title}</text>"##,
            x_off + pw / 2.0
        ));
        s
    };
    let mut svg = String::from(r#"<svg xmlns="http://www.w3.org/2000/svg" width="840" height="320">"#);
    svg.push_str(&panel(success, 0.0, &format!("Success (AUC {:.3})", success.auc), 1.0));
    svg.push_str(&panel(
        precision,
        pw,
        &format!("Precision (P@20 {:.3})", precision.p20.unwrap_or(0.0)),
        50.0,
    ));
    svg.push_str("</svg>");
    std::fs::write(path, svg)?;
    Ok(())
}
