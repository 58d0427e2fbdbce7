use std::collections::BTreeMap;
use std::fmt::Write as _;

use kodama::{linkage, Method};
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::autodiff::Matrix;
use crate::model::EmbeddingTable;

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, AnalysisError> {
    if u.len() != v.len() {
        return Err(AnalysisError::Contract(format!(
            "cosine of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 || !nu.is_finite() || !nv.is_finite() {
        return Err(AnalysisError::DegenerateVector);
    }
    let c = u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (nu * nv);
    Ok(c.clamp(-1.0, 1.0))
}

/// Symmetric cosine similarity matrix with rows in clustering leaf order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == a)?;
        let j = self.labels.iter().position(|l| l == b)?;
        Some(self.values[i][j])
    }

    pub fn max_asymmetry(&self) -> f64 {
        let n = self.len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.values[i][j] - self.values[j][i]).abs());
            }
        }
        worst
    }

    pub fn max_diagonal_error(&self) -> f64 {
        (0..self.len())
            .map(|i| (self.values[i][i] - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Labels in the header row and first column.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label");
        for l in &self.labels {
            let _ = write!(s, ",{l}");
        }
        s.push('\n');
        for (l, row) in self.labels.iter().zip(&self.values) {
            s.push_str(l);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    /// Standalone heatmap: blue for -1, white for 0, red for 1.
    pub fn to_svg(&self, title: &str) -> String {
        let cell = 14;
        let margin = 8 * self.labels.iter().map(String::len).max().unwrap_or(1) + 10;
        let size = margin + cell * self.len() + 10;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{}" font-family="monospace" font-size="10">"#,
            size + 20
        );
        let _ = writeln!(s, r#"<title>{}</title>"#, escape(title));
        let _ = writeln!(s, r#"<text x="4" y="14">{}</text>"#, escape(title));
        let top = margin + 20;
        for (i, l) in self.labels.iter().enumerate() {
            let y = top + i * cell + cell - 3;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#,
                margin - 4,
                escape(l)
            );
            let x = margin + i * cell + cell - 3;
            let _ = writeln!(
                s,
                r#"<text x="{x}" y="{}" text-anchor="start" transform="rotate(-90 {x} {})">{}</text>"#,
                top - 4,
                top - 4,
                escape(l)
            );
        }
        for (i, row) in self.values.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let _ = writeln!(
                    s,
                    r#"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="{}"><title>{} / {}: {v:.4}</title></rect>"#,
                    margin + j * cell,
                    top + i * cell,
                    color(v),
                    escape(&self.labels[i]),
                    escape(&self.labels[j])
                );
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn color(v: f64) -> String {
    let t = v.clamp(-1.0, 1.0);
    let fade = |x: f64| (255.0 * (1.0 - x.abs())).round() as u8;
    if t >= 0.0 {
        format!("#ff{:02x}{:02x}", fade(t), fade(t))
    } else {
        format!("#{:02x}{:02x}ff", fade(t), fade(t))
    }
}

/// Leaf order of average-linkage clustering on `1 - similarity`.
pub fn leaf_order(similarity: &[Vec<f64>]) -> Vec<usize> {
    let n = similarity.len();
    if n < 2 {
        return (0..n).collect();
    }
    let mut condensed = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            condensed.push((1.0 - similarity[i][j]).max(0.0));
        }
    }
    let dendrogram = linkage(&mut condensed, n, Method::Average);
    let steps = dendrogram.steps();
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![n + steps.len() - 1];
    while let Some(c) = stack.pop() {
        if c < n {
            order.push(c);
        } else {
            let s = &steps[c - n];
            stack.push(s.cluster2);
            stack.push(s.cluster1);
        }
    }
    order
}

/// Pairwise cosine similarities of `rows`, reordered by clustering.
pub fn similarity_matrix(
    labels: Vec<String>,
    rows: &[&[f64]],
) -> Result<SimilarityMatrix, AnalysisError> {
    let n = rows.len();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        values[i][i] = cosine(rows[i], rows[i])?;
        for j in i + 1..n {
            let c = cosine(rows[i], rows[j])?;
            values[i][j] = c;
            values[j][i] = c;
        }
    }
    let order = leaf_order(&values);
    Ok(SimilarityMatrix {
        labels: order.iter().map(|&i| labels[i].clone()).collect(),
        values: order
            .iter()
            .map(|&i| order.iter().map(|&j| values[i][j]).collect())
            .collect(),
    })
}

/// Similarity of one gene's embeddings across the contexts where it is
/// active.
pub fn protein_context_similarity(
    gene: &str,
    table: &EmbeddingTable,
) -> Result<SimilarityMatrix, AnalysisError> {
    let entries = table.contexts_of(gene);
    if entries.len() < 2 {
        return Err(AnalysisError::InsufficientContexts {
            gene: gene.to_string(),
            found: entries.len(),
        });
    }
    let labels = entries.iter().map(|(c, _)| c.to_string()).collect();
    let rows: Vec<&[f64]> = entries.iter().map(|(_, z)| *z).collect();
    similarity_matrix(labels, &rows)
}

/// Similarity of every metagraph node embedding.
pub fn cell_similarity(table: &EmbeddingTable) -> Result<SimilarityMatrix, AnalysisError> {
    let nodes = table.cell_nodes();
    if nodes.len() < 2 {
        return Err(AnalysisError::Contract(format!(
            "cell similarity needs two nodes, found {}",
            nodes.len()
        )));
    }
    let m: &Matrix = table.cell_matrix();
    let rows: Vec<&[f64]> = (0..nodes.len()).map(|i| m.row(i)).collect();
    similarity_matrix(nodes.to_vec(), &rows)
}

/// Context specificity of a gene's embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerScore {
    pub gene: String,
    pub context: String,
    pub contrast: f64,
}

/// `cos(z_g^c, centroid_c) - mean_{c' != c} cos(z_g^c, z_g^{c'})` for every
/// gene active in two or more contexts, ranked descending within each
/// context (ties by gene).
pub fn marker_contrast(table: &EmbeddingTable) -> Result<Vec<MarkerScore>, AnalysisError> {
    let d = table.protein_matrix().cols();
    let mut centroids: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (k, ctx) in table.contexts().iter().enumerate() {
        let rows = table.context_rows(k);
        let mut c = vec![0.0; d];
        for r in rows.clone() {
            for (acc, v) in c.iter_mut().zip(table.row(r)) {
                *acc += v;
            }
        }
        let n = rows.len().max(1) as f64;
        c.iter_mut().for_each(|x| *x /= n);
        centroids.insert(ctx, c);
    }
    let mut out = Vec::new();
    for gene in table.proteins() {
        let entries = table.contexts_of(gene);
        if entries.len() < 2 {
            continue;
        }
        for (i, (ctx, z)) in entries.iter().enumerate() {
            let within = cosine(z, &centroids[ctx])?;
            let mut across = 0.0;
            for (j, (_, other)) in entries.iter().enumerate() {
                if i != j {
                    across += cosine(z, other)?;
                }
            }
            out.push(MarkerScore {
                gene: gene.to_string(),
                context: ctx.to_string(),
                contrast: within - across / (entries.len() - 1) as f64,
            });
        }
    }
    out.sort_by(|a, b| {
        a.context
            .cmp(&b.context)
            .then_with(|| b.contrast.total_cmp(&a.contrast))
            .then_with(|| a.gene.cmp(&b.gene))
    });
    Ok(out)
}

/// `context,rank,gene,contrast`.
pub fn marker_csv(scores: &[MarkerScore]) -> String {
    let mut s = String::from("context,rank,gene,contrast\n");
    let mut rank = 0;
    let mut prev: Option<&str> = None;
    for m in scores {
        if prev != Some(m.context.as_str()) {
            rank = 0;
            prev = Some(&m.context);
        }
        rank += 1;
        let _ = writeln!(s, "{},{rank},{},{}", m.context, m.gene, m.contrast);
    }
    s
}
