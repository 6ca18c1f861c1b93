//! Token heatmaps: per-token shading of the difference between a
//! counterfactual and the original attention distribution.

use super::scatter::escape;
use crate::error::{Error, Result};

/// One document prepared for heatmap rendering.
#[derive(Clone, Debug)]
pub struct HeatmapDoc {
    pub id: String,
    pub tokens: Vec<String>,
    /// Counterfactual minus original attention, per token; entries in [-1, 1].
    pub diffs: Vec<f64>,
    pub original_output: f64,
    pub counterfactual_output: f64,
}

/// Renders an HTML fragment. Positive differences shade red, negative blue,
/// intensity proportional to |diff| relative to the document maximum. Token
/// text is escaped but otherwise untouched.
pub fn render_heatmap(doc: &HeatmapDoc) -> Result<String> {
    if doc.tokens.len() != doc.diffs.len() {
        return Err(Error::ShapeMismatch {
            op: "heatmap",
            detail: format!("{} tokens vs {} diffs", doc.tokens.len(), doc.diffs.len()),
        });
    }
    let max = doc.diffs.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let mut html = String::with_capacity(doc.tokens.len() * 80);
    html.push_str(&format!(
        "<div class=\"heatmap\" data-id=\"{}\">\n<p class=\"tokens\">",
        escape(&doc.id)
    ));
    for (token, &diff) in doc.tokens.iter().zip(&doc.diffs) {
        let intensity = if max > 0.0 { diff.abs() / max } else { 0.0 };
        let color = if diff >= 0.0 {
            "214,39,40" // red: counterfactual attends more
        } else {
            "31,119,180" // blue: original attends more
        };
        html.push_str(&format!(
            "<span class=\"tok\" style=\"background-color:rgba({color},{intensity:.4})\">{}</span> ",
            escape(token)
        ));
    }
    html.push_str("</p>\n");
    html.push_str(&format!(
        "<p class=\"outputs\">original output: {:.4} &middot; counterfactual output: {:.4}</p>\n</div>\n",
        doc.original_output, doc.counterfactual_output
    ));
    Ok(html)
}

/// Wraps fragments into a standalone page.
pub fn heatmap_page(title: &str, fragments: &[String]) -> String {
    let mut page = String::new();
    page.push_str("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">\n");
    page.push_str(&format!("<title>{}</title>\n", escape(title)));
    page.push_str(
        "<style>body{font-family:sans-serif;max-width:60em;margin:2em auto;}\
         .tok{padding:1px 2px;border-radius:2px;}\
         .heatmap{margin-bottom:2em;border-bottom:1px solid #ddd;}</style>\n</head>\n<body>\n",
    );
    page.push_str(&format!("<h1>{}</h1>\n", escape(title)));
    for fragment in fragments {
        page.push_str(fragment);
    }
    page.push_str("</body></html>\n");
    page
}

/// Recovers the token sequence from a rendered fragment; the inverse used by
/// the round-trip checks.
pub fn parse_heatmap_tokens(html: &str) -> Vec<String> {
    html.split("<span class=\"tok\"")
        .skip(1)
        .filter_map(|chunk| {
            let start = chunk.find('>')? + 1;
            let end = chunk.find("</span>")?;
            Some(unescape(&chunk[start..end]))
        })
        .collect()
}

fn unescape(text: &str) -> String {
    text.replace("&#39;", "'")
        .replace("&quot;", "\"")
        .replace("&gt;", ">")
        .replace("&lt;", "<")
        .replace("&amp;", "&")
}
