//! Two-dimensional PCA of speaker embeddings, scatter export and a cluster
//! separation summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedSet {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<String>,
    /// Fraction of total variance along each component.
    pub explained_variance: [f64; 2],
}

/// Projects mean-centred rows onto the two leading principal directions.
/// Each direction's largest-magnitude loading is made positive.
pub fn pca_2d(embeddings: &[Vec<f64>], labels: &[String]) -> Result<ProjectedSet> {
    let n = embeddings.len();
    if n < 3 {
        return Err(Error::InvalidConfig(format!("PCA needs at least 3 points, got {n}")));
    }
    if labels.len() != n {
        return Err(Error::LengthMismatch(format!(
            "{n} embeddings but {} labels",
            labels.len()
        )));
    }
    let d = embeddings[0].len();
    if d < 2 || embeddings.iter().any(|e| e.len() != d) {
        return Err(Error::LengthMismatch(
            "embeddings must share a dimension of at least 2".into(),
        ));
    }
    let mut mean = vec![0f64; d];
    for e in embeddings {
        for (m, v) in mean.iter_mut().zip(e) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let x = DMatrix::from_fn(n, d, |i, j| embeddings[i][j] - mean[j]);
    if x.iter().all(|v| *v == 0.0) {
        return Err(Error::ZeroVariance);
    }

    let svd = x.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();

    let mut components = Vec::with_capacity(2);
    let mut explained = [0f64; 2];
    for c in 0..2 {
        let Some(&k) = order.get(c) else {
            components.push(vec![0f64; d]);
            continue;
        };
        let mut dir: Vec<f64> = v_t.row(k).iter().copied().collect();
        let lead = dir
            .iter()
            .copied()
            .fold(0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if lead < 0.0 {
            dir.iter_mut().for_each(|v| *v = -*v);
        }
        explained[c] = svd.singular_values[k].powi(2) / total;
        components.push(dir);
    }
    let points = (0..n)
        .map(|i| {
            let row = x.row(i);
            let p = |c: usize| row.iter().zip(&components[c]).map(|(a, b)| a * b).sum::<f64>();
            [p(0), p(1)]
        })
        .collect();
    Ok(ProjectedSet {
        points,
        labels: labels.to_vec(),
        explained_variance: explained,
    })
}

fn color(index: usize, count: usize) -> String {
    let hue = 360.0 * index as f64 / count.max(1) as f64;
    format!("hsl({hue:.1},70%,45%)")
}

/// Writes `<stem>.svg` and `<stem>.tsv` (columns `x`, `y`, `speaker`); returns both paths.
pub fn scatter_export(set: &ProjectedSet, stem: &Path) -> Result<(PathBuf, PathBuf)> {
    let svg_path = stem.with_extension("svg");
    let tsv_path = stem.with_extension("tsv");
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut tsv = String::from("x\ty\tspeaker\n");
    for (p, l) in set.points.iter().zip(&set.labels) {
        writeln!(tsv, "{}\t{}\t{l}", p[0], p[1]).expect("writing to a String");
    }
    std::fs::write(&tsv_path, tsv).map_err(|e| Error::io(&tsv_path, e))?;

    let speakers: Vec<&String> = {
        let mut s: Vec<&String> = set.labels.iter().collect();
        s.sort();
        s.dedup();
        s
    };
    let (w, h, margin, legend) = (640.0, 480.0, 40.0, 140.0);
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in &set.points {
        xmin = xmin.min(p[0]);
        xmax = xmax.max(p[0]);
        ymin = ymin.min(p[1]);
        ymax = ymax.max(p[1]);
    }
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let sx = (w - 2.0 * margin - legend) / span(xmin, xmax);
    let sy = (h - 2.0 * margin) / span(ymin, ymax);

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    )
    .expect("writing to a String");
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).expect("writing to a String");
    writeln!(
        svg,
        r#"<text x="{margin}" y="24" font-family="sans-serif" font-size="13">PC1 {:.1}% / PC2 {:.1}% of variance</text>"#,
        100.0 * set.explained_variance[0],
        100.0 * set.explained_variance[1]
    )
    .expect("writing to a String");
    for (p, l) in set.points.iter().zip(&set.labels) {
        let idx = speakers.binary_search(&l).expect("label listed");
        let cx = margin + (p[0] - xmin) * sx;
        let cy = h - margin - (p[1] - ymin) * sy;
        writeln!(
            svg,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3" fill="{}" fill-opacity="0.8"/>"#,
            color(idx, speakers.len())
        )
        .expect("writing to a String");
    }
    for (i, s) in speakers.iter().enumerate() {
        let y = margin + 16.0 * i as f64;
        let x = w - legend + 10.0;
        writeln!(
            svg,
            r#"<circle cx="{x}" cy="{y}" r="4" fill="{}"/><text x="{}" y="{}" font-family="sans-serif" font-size="11">{s}</text>"#,
            color(i, speakers.len()),
            x + 10.0,
            y + 4.0
        )
        .expect("writing to a String");
    }
    svg.push_str("</svg>\n");
    std::fs::write(&svg_path, svg).map_err(|e| Error::io(&svg_path, e))?;
    Ok((svg_path, tsv_path))
}

/// Reads a data file written by [`scatter_export`].
pub fn read_scatter(path: &Path) -> Result<(Vec<[f64; 2]>, Vec<String>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = |msg: &str| Error::Manifest {
            line: i + 1,
            msg: msg.to_string(),
        };
        let mut parts = line.splitn(3, '\t');
        let mut num = || -> Result<f64> {
            parts
                .next()
                .ok_or_else(|| bad("missing column"))?
                .parse()
                .map_err(|_| bad("not a number"))
        };
        let (x, y) = (num()?, num()?);
        points.push([x, y]);
        labels.push(parts.next().ok_or_else(|| bad("missing speaker"))?.to_string());
    }
    Ok((points, labels))
}

/// Mean distance of points to their own speaker centroid divided by the
/// mean distance from each centroid to the nearest other centroid. Lower
/// values mean tighter, better separated clusters.
pub fn separation_ratio(embeddings: &[Vec<f64>], labels: &[String]) -> Result<f64> {
    if embeddings.len() != labels.len() {
        return Err(Error::LengthMismatch("embeddings and labels differ in length".into()));
    }
    let mut groups: BTreeMap<&str, Vec<&Vec<f64>>> = BTreeMap::new();
    for (e, l) in embeddings.iter().zip(labels) {
        groups.entry(l.as_str()).or_default().push(e);
    }
    if groups.len() < 2 {
        return Err(Error::InvalidConfig("separation needs at least 2 speakers".into()));
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let centroids: Vec<Vec<f64>> = groups
        .values()
        .map(|members| {
            let d = members[0].len();
            (0..d)
                .map(|j| members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64)
                .collect()
        })
        .collect();
    let mut spread = 0f64;
    for (members, c) in groups.values().zip(&centroids) {
        spread += members.iter().map(|m| dist(m, c)).sum::<f64>();
    }
    spread /= embeddings.len() as f64;
    let nearest = centroids
        .iter()
        .enumerate()
        .map(|(i, c)| {
            centroids
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, o)| dist(c, o))
                .fold(f64::MAX, f64::min)
        })
        .sum::<f64>()
        / centroids.len() as f64;
    if nearest == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(spread / nearest)
}
