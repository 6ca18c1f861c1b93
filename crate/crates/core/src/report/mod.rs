//! Static report artifacts rendered from audit outputs: SVG density
//! scatters, HTML token heatmaps, an AUC summary table and an artifact
//! manifest. Everything here is a pure function of its inputs, so identical
//! inputs produce byte-identical files.

mod heatmap;
mod scatter;

pub use heatmap::{heatmap_page, parse_heatmap_tokens, render_heatmap, HeatmapDoc};
pub use scatter::{render_scatter, ScatterSpec};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hashes::sha256_file;

/// One model variant's evaluation for the summary table.
#[derive(Clone, Debug, Serialize)]
pub struct SummaryRow {
    pub variant: String,
    pub per_label_auc: Vec<f64>,
    pub macro_auc: f64,
    /// Fingerprint of the test split the numbers were computed on.
    pub test_split_hash: String,
}

/// Renders the variant-by-AUC table as CSV and HTML. All rows must carry the
/// same test-split fingerprint.
pub fn summary_table(rows: &[SummaryRow]) -> Result<(String, String)> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("no summary rows".into()));
    }
    let expected = &rows[0].test_split_hash;
    for row in rows {
        if &row.test_split_hash != expected {
            return Err(Error::VocabMismatch {
                expected: expected.clone(),
                got: row.test_split_hash.clone(),
            });
        }
    }
    let label_count = rows[0].per_label_auc.len();

    let mut csv = String::from("variant");
    for l in 0..label_count {
        csv.push_str(&format!(",auc_label_{l}"));
    }
    csv.push_str(",macro_auc\n");
    for row in rows {
        csv.push_str(&row.variant);
        for auc in &row.per_label_auc {
            csv.push_str(&format!(",{auc}"));
        }
        csv.push_str(&format!(",{}\n", row.macro_auc));
    }

    let mut html = String::from(
        "<table class=\"summary\">\n<thead><tr><th>variant</th>",
    );
    for l in 0..label_count {
        html.push_str(&format!("<th>AUC (label {l})</th>"));
    }
    html.push_str("<th>macro AUC</th></tr></thead>\n<tbody>\n");
    for row in rows {
        html.push_str(&format!("<tr><td>{}</td>", scatter::escape(&row.variant)));
        for auc in &row.per_label_auc {
            html.push_str(&format!("<td>{auc:.4}</td>"));
        }
        html.push_str(&format!("<td>{:.4}</td></tr>\n", row.macro_auc));
    }
    html.push_str("</tbody>\n</table>\n");
    Ok((csv, html))
}

#[derive(Serialize)]
struct Manifest {
    format_version: u32,
    artifacts: BTreeMap<String, String>,
    inputs: BTreeMap<String, String>,
}

/// Writes `manifest.json` listing every artifact and every input file (paths
/// relative to `out_dir`) with content hashes. Returns the manifest path.
pub fn write_manifest(out_dir: &Path, artifacts: &[PathBuf], inputs: &[PathBuf]) -> Result<PathBuf> {
    let relative = |path: &PathBuf| {
        path.strip_prefix(out_dir)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    };
    let hash_all = |paths: &[PathBuf]| -> Result<BTreeMap<String, String>> {
        let mut entries = BTreeMap::new();
        for path in paths {
            entries.insert(relative(path), sha256_file(path)?);
        }
        Ok(entries)
    };
    let manifest = Manifest {
        format_version: 1,
        artifacts: hash_all(artifacts)?,
        inputs: hash_all(inputs)?,
    };
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}
