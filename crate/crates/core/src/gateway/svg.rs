//! Heatmap-style rendering of an explanation artifact: one column per method,
//! one row per attribute, cell shade proportional to normalized relevance.

use std::fmt::Write;

use crate::explain::ExplanationArtifact;

const ROW_H: usize = 18;
const LABEL_W: usize = 170;
const COL_W: usize = 110;
const HEADER_H: usize = 44;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Positive relevance is drawn red, negative blue, flagged cells outlined.
pub fn render(artifact: &ExplanationArtifact) -> String {
    let rows = artifact.attribute_names.len();
    let width = LABEL_W + COL_W * artifact.maps.len() + 10;
    let height = HEADER_H + ROW_H * rows + 10;
    let mut out = String::new();
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="monospace" font-size="11">"#
    );
    let _ = write!(
        out,
        r#"<text x="4" y="14">{} p_fund={:.3} H={:.3} {:?}</text>"#,
        escape(&artifact.customer_id),
        artifact.decision.p_fund,
        artifact.entropy,
        artifact.routing.route
    );
    for (c, map) in artifact.maps.iter().enumerate() {
        let x = LABEL_W + c * COL_W;
        let _ = write!(out, r#"<text x="{}" y="{}">{}</text>"#, x + 4, HEADER_H - 6, map.method.tag());
    }
    for (r, name) in artifact.attribute_names.iter().enumerate() {
        let y = HEADER_H + r * ROW_H;
        let _ = write!(out, r#"<text x="4" y="{}">{}</text>"#, y + ROW_H - 5, escape(name));
        for (c, map) in artifact.maps.iter().enumerate() {
            let x = LABEL_W + c * COL_W;
            let n = map.normalized.get(r).copied().unwrap_or(0.0).clamp(0.0, 1.0);
            let shade = (255.0 * (1.0 - n)).round() as u8;
            let fill = if map.attribute_relevances.get(r).copied().unwrap_or(0.0) >= 0.0 {
                format!("rgb(255,{shade},{shade})")
            } else {
                format!("rgb({shade},{shade},255)")
            };
            let stroke = if map.high_importance.get(r).copied().unwrap_or(false) { "black" } else { "#ddd" };
            let _ = write!(
                out,
                r#"<rect x="{x}" y="{y}" width="{}" height="{}" fill="{fill}" stroke="{stroke}"/>"#,
                COL_W - 4,
                ROW_H - 2
            );
        }
    }
    out.push_str("</svg>");
    out
}
