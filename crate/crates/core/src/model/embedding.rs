use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;

use super::ModelError;
use crate::autodiff::Matrix;

/// Context-specific protein embeddings and metagraph node embeddings, all
/// of dimension `dim`.
///
/// Protein rows are grouped by context (contexts sorted by id) and sorted
/// by protein name within a context.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    contexts: Vec<String>,
    offsets: Vec<usize>,
    row_protein: Vec<String>,
    proteins: Matrix,
    cell_nodes: Vec<String>,
    cells: Matrix,
}

impl EmbeddingTable {
    /// Builds a table from per-context `(protein, vector)` lists and cell
    /// node vectors. Input order does not matter.
    pub fn from_parts(
        protein_entries: BTreeMap<String, BTreeMap<String, Vec<f64>>>,
        cell_entries: BTreeMap<String, Vec<f64>>,
    ) -> Result<Self, ModelError> {
        let dim = protein_entries
            .values()
            .flat_map(|m| m.values())
            .chain(cell_entries.values())
            .map(Vec::len)
            .next()
            .unwrap_or(0);
        let mut contexts = Vec::new();
        let mut offsets = vec![0];
        let mut row_protein = Vec::new();
        let mut data = Vec::new();
        for (ctx, entries) in protein_entries {
            for (p, v) in entries {
                if v.len() != dim {
                    return Err(ModelError::Mismatch(format!(
                        "embedding for ({ctx}, {p}) has dimension {} (expected {dim})",
                        v.len()
                    )));
                }
                row_protein.push(p);
                data.extend(v);
            }
            contexts.push(ctx);
            offsets.push(row_protein.len());
        }
        let mut cell_nodes = Vec::new();
        let mut cdata = Vec::new();
        for (n, v) in cell_entries {
            if v.len() != dim {
                return Err(ModelError::Mismatch(format!(
                    "cell embedding {n} has dimension {} (expected {dim})",
                    v.len()
                )));
            }
            cell_nodes.push(n);
            cdata.extend(v);
        }
        let proteins = Matrix::from_vec(row_protein.len(), dim, data)?;
        let cells = Matrix::from_vec(cell_nodes.len(), dim, cdata)?;
        Ok(Self {
            contexts,
            offsets,
            row_protein,
            proteins,
            cell_nodes,
            cells,
        })
    }

    /// Direct constructor used by the model, whose stacking already
    /// satisfies the ordering contract.
    pub(crate) fn from_stacked(
        contexts: Vec<String>,
        offsets: Vec<usize>,
        row_protein: Vec<String>,
        proteins: Matrix,
        cell_nodes: Vec<String>,
        cells: Matrix,
    ) -> Self {
        debug_assert_eq!(*offsets.last().unwrap(), proteins.rows());
        Self {
            contexts,
            offsets,
            row_protein,
            proteins,
            cell_nodes,
            cells,
        }
    }

    pub fn dim(&self) -> usize {
        self.proteins.cols().max(self.cells.cols())
    }

    pub fn contexts(&self) -> &[String] {
        &self.contexts
    }

    pub fn context_index(&self, ctx: &str) -> Option<usize> {
        self.contexts.binary_search_by(|c| c.as_str().cmp(ctx)).ok()
    }

    pub fn context_rows(&self, k: usize) -> Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    pub fn n_protein_entries(&self) -> usize {
        self.row_protein.len()
    }

    pub fn row_protein(&self, row: usize) -> &str {
        &self.row_protein[row]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        self.proteins.row(row)
    }

    pub fn protein_matrix(&self) -> &Matrix {
        &self.proteins
    }

    pub fn protein_row(&self, ctx: &str, protein: &str) -> Option<usize> {
        let k = self.context_index(ctx)?;
        let r = self.context_rows(k);
        self.row_protein[r.clone()]
            .binary_search_by(|p| p.as_str().cmp(protein))
            .ok()
            .map(|i| r.start + i)
    }

    pub fn protein(&self, ctx: &str, protein: &str) -> Option<&[f64]> {
        self.protein_row(ctx, protein).map(|r| self.proteins.row(r))
    }

    /// Every context in which `protein` has an embedding, in context order.
    pub fn contexts_of(&self, protein: &str) -> Vec<(&str, &[f64])> {
        (0..self.contexts.len())
            .filter_map(|k| {
                let r = self.context_rows(k);
                self.row_protein[r.clone()]
                    .binary_search_by(|p| p.as_str().cmp(protein))
                    .ok()
                    .map(|i| (self.contexts[k].as_str(), self.proteins.row(r.start + i)))
            })
            .collect()
    }

    /// Distinct protein names across all contexts, sorted.
    pub fn proteins(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.row_protein.iter().map(String::as_str).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn cell_nodes(&self) -> &[String] {
        &self.cell_nodes
    }

    pub fn cell(&self, node: &str) -> Option<&[f64]> {
        self.cell_nodes
            .binary_search_by(|n| n.as_str().cmp(node))
            .ok()
            .map(|i| self.cells.row(i))
    }

    pub fn cell_matrix(&self) -> &Matrix {
        &self.cells
    }

    pub fn is_finite(&self) -> bool {
        self.proteins.is_finite() && self.cells.is_finite()
    }

    /// `context<TAB>protein<TAB>v0 .. v{d-1}` with a header row.
    pub fn protein_tsv(&self) -> String {
        let d = self.proteins.cols();
        let mut s = String::from("context\tprotein");
        for j in 0..d {
            let _ = write!(s, "\tv{j}");
        }
        s.push('\n');
        for k in 0..self.contexts.len() {
            for r in self.context_rows(k) {
                s.push_str(&self.contexts[k]);
                s.push('\t');
                s.push_str(&self.row_protein[r]);
                for v in self.proteins.row(r) {
                    let _ = write!(s, "\t{v}");
                }
                s.push('\n');
            }
        }
        s
    }

    /// `node<TAB>v0 .. v{d-1}` with a header row.
    pub fn cell_tsv(&self) -> String {
        let d = self.cells.cols();
        let mut s = String::from("node");
        for j in 0..d {
            let _ = write!(s, "\tv{j}");
        }
        s.push('\n');
        for (i, n) in self.cell_nodes.iter().enumerate() {
            s.push_str(n);
            for v in self.cells.row(i) {
                let _ = write!(s, "\t{v}");
            }
            s.push('\n');
        }
        s
    }
}

fn parse_row(line: &str, keys: usize, lineno: usize) -> Result<(Vec<&str>, Vec<f64>), ModelError> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() < keys {
        return Err(ModelError::Mismatch(format!(
            "line {lineno}: expected at least {keys} fields"
        )));
    }
    let values = fields[keys..]
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .map_err(|_| ModelError::Mismatch(format!("line {lineno}: bad number {f:?}")))
        })
        .collect::<Result<_, _>>()?;
    Ok((fields[..keys].to_vec(), values))
}

impl EmbeddingTable {
    /// Inverse of [`protein_tsv`](Self::protein_tsv) and
    /// [`cell_tsv`](Self::cell_tsv). Values round-trip exactly.
    pub fn from_tsv(protein: &str, cell: &str) -> Result<Self, ModelError> {
        let mut p: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
        for (i, line) in protein.lines().enumerate().skip(1) {
            if line.is_empty() {
                continue;
            }
            let (keys, v) = parse_row(line, 2, i + 1)?;
            p.entry(keys[0].to_string())
                .or_default()
                .insert(keys[1].to_string(), v);
        }
        let mut c = BTreeMap::new();
        for (i, line) in cell.lines().enumerate().skip(1) {
            if line.is_empty() {
                continue;
            }
            let (keys, v) = parse_row(line, 1, i + 1)?;
            c.insert(keys[0].to_string(), v);
        }
        Self::from_parts(p, c)
    }
}
