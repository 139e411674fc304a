//! Cross-lingual analyses: codebook usage per language, k-means, 2-D PCA
//! and report emission.

mod kmeans;
mod linalg;
mod pca;
mod usage;

use std::fmt::Write as _;
use std::path::Path;

pub use kmeans::{kmeans, KMeans};
pub use linalg::symmetric_eigen;
pub use pca::{pca_2d, Pca};
pub use usage::{extract_codebook_usage, LanguageUsage, UsageNorm};

use crate::error::{Error, Result};
use crate::ssl::ValidReport;

const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport {
    pub k: usize,
    pub languages: Vec<String>,
    pub assignments: Vec<usize>,
    pub coords: Vec<[f64; 2]>,
    pub inertia: f64,
    pub explained_ratio: [f64; 2],
}

/// Clusters the full usage vectors, then projects them to two dimensions.
pub fn cluster_languages(usage: &[LanguageUsage], k: usize, seed: u64) -> Result<ClusterReport> {
    let vectors: Vec<Vec<f64>> = usage.iter().map(|u| u.vector.clone()).collect();
    let km = kmeans(&vectors, k, seed)?;
    let pca = pca_2d(&vectors)?;
    Ok(ClusterReport {
        k,
        languages: usage.iter().map(|u| u.language.clone()).collect(),
        assignments: km.assignments,
        coords: pca.coords,
        inertia: km.inertia,
        explained_ratio: pca.explained_ratio,
    })
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Standalone SVG scatter: one labelled point per language, coloured by
/// cluster.
pub fn scatter_svg(report: &ClusterReport) -> String {
    let (w, h, pad) = (640.0, 480.0, 48.0);
    let xs = report.coords.iter().map(|c| c[0]);
    let ys = report.coords.iter().map(|c| c[1]);
    let span = |it: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        if hi - lo > 1e-12 { (lo, hi) } else { (lo - 1.0, hi + 1.0) }
    };
    let (x0, x1) = span(&mut xs.into_iter());
    let (y0, y1) = span(&mut ys.into_iter());
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">PC1 ({:.1}%)</text>"#,
        w / 2.0,
        h - 10.0,
        100.0 * report.explained_ratio[0]
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">PC2 ({:.1}%)</text>"#,
        h / 2.0,
        h / 2.0,
        100.0 * report.explained_ratio[1]
    );
    for ((lang, c), a) in report.languages.iter().zip(&report.coords).zip(&report.assignments) {
        let px = pad + (c[0] - x0) / (x1 - x0) * (w - 2.0 * pad);
        let py = h - pad - (c[1] - y0) / (y1 - y0) * (h - 2.0 * pad);
        let color = PALETTE[a % PALETTE.len()];
        let _ = writeln!(s, r#"<circle cx="{px:.2}" cy="{py:.2}" r="5" fill="{color}" class="cluster-{a}"/>"#);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#, px + 7.0, py - 7.0, xml_escape(lang));
    }
    s.push_str("</svg>\n");
    s
}

/// `language,cluster,pc1,pc2` rows.
pub fn clusters_csv(report: &ClusterReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Data(format!("csv: {e}"));
    w.write_record(["language", "cluster", "pc1", "pc2"]).map_err(err)?;
    for ((lang, c), a) in report.languages.iter().zip(&report.coords).zip(&report.assignments) {
        w.write_record([lang.clone(), a.to_string(), format!("{:.9}", c[0]), format!("{:.9}", c[1])]).map_err(err)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Data(format!("csv: {e}")))?).map_err(|e| Error::Data(e.to_string()))
}

/// Grouped per-language validation losses of a monolingual and a
/// multilingual model: `language,monolingual,multilingual,difference`.
/// Only languages present in both reports are listed.
pub fn loss_comparison_csv(monolingual: &ValidReport, multilingual: &ValidReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Data(format!("csv: {e}"));
    w.write_record(["language", "monolingual", "multilingual", "difference"]).map_err(err)?;
    for m in &multilingual.rows {
        if let Some(o) = monolingual.rows.iter().find(|r| r.language == m.language) {
            w.write_record([m.language.clone(), format!("{:.6}", o.l), format!("{:.6}", m.l), format!("{:.6}", o.l - m.l)])
                .map_err(err)?;
        }
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Data(format!("csv: {e}")))?).map_err(|e| Error::Data(e.to_string()))
}

/// Writes `clusters.svg` and `clusters.csv`, plus `valid_loss.csv` when
/// both loss tables are given.
pub fn emit_report(report: &ClusterReport, losses: Option<(&ValidReport, &ValidReport)>, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    let write = |name: &str, text: String| {
        let p = out.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(format!("writing {}", p.display()), e))
    };
    write("clusters.svg", scatter_svg(report))?;
    write("clusters.csv", clusters_csv(report)?)?;
    if let Some((mono, multi)) = losses {
        write("valid_loss.csv", loss_comparison_csv(mono, multi)?)?;
    }
    Ok(())
}
