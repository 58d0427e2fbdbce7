//! Tab-separated input tables and the on-disk knowledge-graph bundle.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{
    assemble_metagraph, ContextGraph, DegRecord, GlobalPpi, KgError, KnowledgeGraph, LrRecord,
};

pub const BUNDLE_GLOBAL: &str = "global_ppi.tsv";
pub const BUNDLE_ACTIVATED: &str = "activated.tsv";
pub const BUNDLE_CONTEXT_EDGES: &str = "context_edges.tsv";
pub const BUNDLE_METAGRAPH: &str = "metagraph_edges.tsv";
pub const BUNDLE_HIERARCHY: &str = "hierarchy.tsv";

fn tsv_reader<R: Read>(r: R, has_headers: bool) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .comment(Some(b'#'))
        .has_headers(has_headers)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(r)
}

fn parse_err(source: &str, line: u64, message: impl Into<String>) -> KgError {
    KgError::Parse {
        source_name: source.to_string(),
        line,
        message: message.into(),
    }
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn csv_err(source: &str, e: csv::Error) -> KgError {
    let line = e.position().map_or(0, |p| p.line());
    parse_err(source, line, e.to_string())
}

/// Reads headerless rows of exactly `width` fields, skipping a first row
/// equal to `header`.
fn read_plain_rows<R: Read>(
    r: R,
    source: &str,
    width: usize,
    header: &[&str],
) -> Result<Vec<(u64, Vec<String>)>, KgError> {
    let mut out = Vec::new();
    for (k, rec) in tsv_reader(r, false).records().enumerate() {
        let rec = rec.map_err(|e| csv_err(source, e))?;
        let fields: Vec<String> = rec.iter().map(str::to_string).collect();
        if k == 0 && fields.iter().map(String::as_str).eq(header.iter().copied()) {
            continue;
        }
        if fields.len() != width {
            return Err(parse_err(
                source,
                line_of(&rec),
                format!("expected {width} columns, found {}", fields.len()),
            ));
        }
        out.push((line_of(&rec), fields));
    }
    Ok(out)
}

/// Global network as `protein_a<TAB>protein_b`. Returns the network and the
/// number of dropped self-pairs.
pub fn read_global_ppi<R: Read>(r: R, source: &str) -> Result<(GlobalPpi, usize), KgError> {
    let rows = read_plain_rows(r, source, 2, &["protein_a", "protein_b"])?;
    Ok(GlobalPpi::from_pairs(rows.into_iter().map(|(_, mut f)| {
        let b = f.pop().unwrap_or_default();
        let a = f.pop().unwrap_or_default();
        (a, b)
    })))
}

/// Column positions of `names` in a header record.
fn header_columns(
    rdr: &mut csv::Reader<impl Read>,
    source: &str,
    names: &[&str],
) -> Result<Vec<usize>, KgError> {
    let header = rdr.headers().map_err(|e| csv_err(source, e))?.clone();
    names
        .iter()
        .map(|n| {
            header
                .iter()
                .position(|h| h == *n)
                .ok_or_else(|| parse_err(source, 1, format!("missing column `{n}`")))
        })
        .collect()
}

fn field<'a>(rec: &'a csv::StringRecord, col: usize, source: &str) -> Result<&'a str, KgError> {
    rec.get(col)
        .ok_or_else(|| parse_err(source, line_of(rec), format!("missing field {}", col + 1)))
}

fn number(rec: &csv::StringRecord, col: usize, source: &str, name: &str) -> Result<f64, KgError> {
    let raw = field(rec, col, source)?;
    raw.parse::<f64>().map_err(|_| {
        parse_err(
            source,
            line_of(rec),
            format!("{name}: not a number `{raw}`"),
        )
    })
}

/// Differential expression table with header
/// `context gene avg_fc adj_p pct_expressed`.
pub fn read_deg_table<R: Read>(r: R, source: &str) -> Result<Vec<DegRecord>, KgError> {
    let mut rdr = tsv_reader(r, true);
    let cols = header_columns(
        &mut rdr,
        source,
        &["context", "gene", "avg_fc", "adj_p", "pct_expressed"],
    )?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(source, e))?;
        let d = DegRecord {
            context_id: field(&rec, cols[0], source)?.to_string(),
            gene: field(&rec, cols[1], source)?.to_string(),
            avg_fc: number(&rec, cols[2], source, "avg_fc")?,
            adj_p: number(&rec, cols[3], source, "adj_p")?,
            pct_expressed: number(&rec, cols[4], source, "pct_expressed")?,
        };
        d.validate()
            .map_err(|m| parse_err(source, line_of(&rec), m))?;
        out.push(d);
    }
    Ok(out)
}

/// Ligand–receptor table with header
/// `source target ligand receptor aggregate_rank`.
pub fn read_lr_table<R: Read>(r: R, source: &str) -> Result<Vec<LrRecord>, KgError> {
    let mut rdr = tsv_reader(r, true);
    let cols = header_columns(
        &mut rdr,
        source,
        &["source", "target", "ligand", "receptor", "aggregate_rank"],
    )?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(source, e))?;
        let l = LrRecord {
            source: field(&rec, cols[0], source)?.to_string(),
            target: field(&rec, cols[1], source)?.to_string(),
            ligand: field(&rec, cols[2], source)?.to_string(),
            receptor: field(&rec, cols[3], source)?.to_string(),
            aggregate_rank: number(&rec, cols[4], source, "aggregate_rank")?,
        };
        l.validate()
            .map_err(|m| parse_err(source, line_of(&rec), m))?;
        out.push(l);
    }
    Ok(out)
}

/// `subtype<TAB>celltype`; a subtype listed with two parents is an error.
pub fn read_hierarchy<R: Read>(r: R, source: &str) -> Result<BTreeMap<String, String>, KgError> {
    let mut out = BTreeMap::new();
    for (line, f) in read_plain_rows(r, source, 2, &["subtype", "celltype"])? {
        match out.get(&f[0]) {
            Some(p) if p != &f[1] => {
                return Err(parse_err(
                    source,
                    line,
                    format!("subtype {} has two parents ({p}, {})", f[0], f[1]),
                ))
            }
            _ => {
                out.insert(f[0].clone(), f[1].clone());
            }
        }
    }
    Ok(out)
}

/// Opens `path` for one of the readers above, naming the path on failure.
pub fn open(path: &Path) -> Result<fs::File, KgError> {
    fs::File::open(path).map_err(|e| KgError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> KgError {
    KgError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn write_file(path: &Path, body: &str) -> Result<(), KgError> {
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| io_err(path, e))
}

/// Writes the constructed graph as plain TSV files under `dir`.
pub fn write_bundle(dir: &Path, kg: &KnowledgeGraph) -> Result<(), KgError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let g = &kg.global;

    let mut s = String::from("protein_a\tprotein_b\n");
    for &(a, b) in g.edges() {
        s.push_str(&format!("{}\t{}\n", g.name(a), g.name(b)));
    }
    write_file(&dir.join(BUNDLE_GLOBAL), &s)?;

    let mut act = String::from("context\tprotein\n");
    let mut edges = String::from("context\tprotein_a\tprotein_b\n");
    for c in kg.contexts() {
        for &p in c.proteins() {
            act.push_str(&format!("{}\t{}\n", c.context_id, g.name(p)));
        }
        for &(a, b) in c.edges() {
            edges.push_str(&format!(
                "{}\t{}\t{}\n",
                c.context_id,
                g.name(c.proteins()[a]),
                g.name(c.proteins()[b])
            ));
        }
    }
    write_file(&dir.join(BUNDLE_ACTIVATED), &act)?;
    write_file(&dir.join(BUNDLE_CONTEXT_EDGES), &edges)?;

    let m = &kg.metagraph;
    let mut me = String::from("subtype_a\tsubtype_b\n");
    for &(a, b) in m.subtype_edges() {
        me.push_str(&format!("{}\t{}\n", m.subtypes()[a], m.subtypes()[b]));
    }
    write_file(&dir.join(BUNDLE_METAGRAPH), &me)?;

    let mut h = String::from("subtype\tcelltype\n");
    for (s, c) in m.hierarchy() {
        h.push_str(&format!("{s}\t{c}\n"));
    }
    write_file(&dir.join(BUNDLE_HIERARCHY), &h)
}

/// Loads a bundle written by [`write_bundle`].
pub fn read_bundle(dir: &Path) -> Result<KnowledgeGraph, KgError> {
    let path = dir.join(BUNDLE_GLOBAL);
    let (global, _) = read_global_ppi(open(&path)?, &path.display().to_string())?;

    let path = dir.join(BUNDLE_ACTIVATED);
    let name = path.display().to_string();
    let mut members: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (line, f) in read_plain_rows(open(&path)?, &name, 2, &["context", "protein"])? {
        let p = global
            .index_of(&f[1])
            .ok_or_else(|| parse_err(&name, line, format!("unknown protein {}", f[1])))?;
        members.entry(f[0].clone()).or_default().push(p);
    }
    for v in members.values_mut() {
        v.sort_unstable();
        v.dedup();
    }

    let path = dir.join(BUNDLE_CONTEXT_EDGES);
    let name = path.display().to_string();
    let mut edges: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
    for (line, f) in read_plain_rows(
        open(&path)?,
        &name,
        3,
        &["context", "protein_a", "protein_b"],
    )? {
        let nodes = members
            .get(&f[0])
            .ok_or_else(|| parse_err(&name, line, format!("unknown context {}", f[0])))?;
        let local = |p: &str| {
            global
                .index_of(p)
                .and_then(|g| nodes.binary_search(&g).ok())
                .ok_or_else(|| parse_err(&name, line, format!("{p} not activated in {}", f[0])))
        };
        let e = (local(&f[1])?, local(&f[2])?);
        edges.entry(f[0].clone()).or_default().push(e);
    }
    let contexts = members
        .into_iter()
        .map(|(id, nodes)| {
            let e = edges.remove(&id).unwrap_or_default();
            ContextGraph::new(id, nodes, e)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let path = dir.join(BUNDLE_HIERARCHY);
    let hierarchy = read_hierarchy(open(&path)?, &path.display().to_string())?;
    let path = dir.join(BUNDLE_METAGRAPH);
    let name = path.display().to_string();
    let sub_edges: BTreeSet<(String, String)> =
        read_plain_rows(open(&path)?, &name, 2, &["subtype_a", "subtype_b"])?
            .into_iter()
            .map(|(_, f)| (f[0].clone(), f[1].clone()))
            .collect();
    let metagraph = assemble_metagraph(&sub_edges, &hierarchy)?;
    KnowledgeGraph::new(global, contexts, metagraph)
}
