//! Corpus CSV (`gene_id,bin_index,c1..c5,label`, 100 rows per gene) and
//! RPKM table (`gene_id,cell_1,...,cell_C`) readers and writers.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use super::{GeneSample, HmMatrix, Label, NUM_BINS, NUM_HMS};
use crate::error::{Error, Result};

fn parse_err(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

struct Pending {
    gene: String,
    first_line: usize,
    label: Label,
    x: HmMatrix,
    seen: [bool; NUM_BINS],
    rows: usize,
}

impl Pending {
    fn finish(self, source: &str) -> Result<GeneSample> {
        if self.rows != NUM_BINS {
            let missing: Vec<usize> = (0..NUM_BINS).filter(|&b| !self.seen[b]).collect();
            return Err(parse_err(
                source,
                self.first_line,
                format!(
                    "gene `{}` has {} bins, expected {NUM_BINS} (missing {:?})",
                    self.gene, self.rows, missing
                ),
            ));
        }
        Ok(GeneSample {
            gene_id: self.gene,
            x: self.x,
            label: self.label,
            rpkm: None,
        })
    }
}

/// Parses corpus CSV text. `source` names the input in error messages.
pub fn parse_deepchrome_str(text: &str, source: &str) -> Result<Vec<GeneSample>> {
    let mut out = Vec::new();
    let mut done: HashSet<String> = HashSet::new();
    let mut cur: Option<Pending> = None;
    for (idx, raw) in text.split('\n').enumerate() {
        let lineno = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if idx == 0 && fields.get(1).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if fields.len() != NUM_HMS + 3 {
            return Err(parse_err(source, lineno, format!("expected {} fields, got {}", NUM_HMS + 3, fields.len())));
        }
        let gene = fields[0];
        let bin: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(source, lineno, format!("bad bin index `{}`", fields[1])))?;
        if bin >= NUM_BINS {
            return Err(parse_err(source, lineno, format!("bin index {bin} outside 0..{NUM_BINS}")));
        }
        let label = fields[NUM_HMS + 2]
            .parse::<i64>()
            .ok()
            .and_then(Label::from_sign)
            .ok_or_else(|| parse_err(source, lineno, format!("label `{}` is not -1 or 1", fields[NUM_HMS + 2])))?;

        if cur.as_ref().is_some_and(|p| p.gene != gene) {
            let p = cur.take().expect("checked");
            done.insert(p.gene.clone());
            out.push(p.finish(source)?);
        }
        if cur.is_none() {
            if done.contains(gene) {
                return Err(parse_err(source, lineno, format!("rows for gene `{gene}` are not consecutive")));
            }
            cur = Some(Pending {
                gene: gene.to_string(),
                first_line: lineno,
                label,
                x: HmMatrix::zeros(),
                seen: [false; NUM_BINS],
                rows: 0,
            });
        }
        let p = cur.as_mut().expect("set above");
        if p.label != label {
            return Err(parse_err(source, lineno, format!("inconsistent label for gene `{gene}`")));
        }
        if p.seen[bin] {
            return Err(parse_err(source, lineno, format!("duplicate bin {bin} for gene `{gene}`")));
        }
        for hm in 0..NUM_HMS {
            let f = fields[2 + hm];
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(source, lineno, format!("bad count `{f}`")))?;
            if !v.is_finite() || v < 0.0 {
                return Err(parse_err(source, lineno, format!("count {v} must be finite and non-negative")));
            }
            p.x.set(hm, bin, v);
        }
        p.seen[bin] = true;
        p.rows += 1;
    }
    if let Some(p) = cur {
        out.push(p.finish(source)?);
    }
    Ok(out)
}

pub fn parse_deepchrome_csv(path: impl AsRef<Path>) -> Result<Vec<GeneSample>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_deepchrome_str(&text, &path.display().to_string())
}

/// Canonical serialization: no header, LF endings, bins in order, shortest
/// round-trip decimal values.
pub fn write_corpus_string<'a>(samples: impl IntoIterator<Item = &'a GeneSample>) -> String {
    let mut s = String::new();
    for g in samples {
        for bin in 0..NUM_BINS {
            let _ = write!(s, "{},{}", g.gene_id, bin);
            for hm in 0..NUM_HMS {
                let _ = write!(s, ",{}", g.x.get(hm, bin));
            }
            let _ = writeln!(s, ",{}", g.label.sign());
        }
    }
    s
}

pub fn write_corpus_csv<'a>(path: impl AsRef<Path>, samples: impl IntoIterator<Item = &'a GeneSample>) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), write_corpus_string(samples).as_bytes())
}

/// Genes × cells expression table.
#[derive(Debug, Clone, PartialEq)]
pub struct RpkmTable {
    pub cells: Vec<String>,
    pub genes: Vec<String>,
    /// `values[gene][cell]`
    pub values: Vec<Vec<f64>>,
}

impl RpkmTable {
    pub fn cell_column(&self, cell: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[cell]).collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("gene_id");
        for c in &self.cells {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (g, row) in self.genes.iter().zip(&self.values) {
            s.push_str(g);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, source: &str) -> Result<RpkmTable> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Empty("rpkm table"))?;
        let cells: Vec<String> = header.split(',').skip(1).map(|c| c.trim().to_string()).collect();
        if cells.is_empty() {
            return Err(parse_err(source, 1, "header has no cell columns"));
        }
        let mut genes = Vec::new();
        let mut values = Vec::new();
        for (idx, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cells.len() + 1 {
                return Err(parse_err(source, idx + 1, format!("expected {} fields", cells.len() + 1)));
            }
            let row = fields[1..]
                .iter()
                .map(|f| match f.parse::<f64>() {
                    Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
                    _ => Err(parse_err(source, idx + 1, format!("bad rpkm `{f}`"))),
                })
                .collect::<Result<Vec<f64>>>()?;
            genes.push(fields[0].to_string());
            values.push(row);
        }
        Ok(RpkmTable { cells, genes, values })
    }
}

pub fn read_rpkm_table(path: impl AsRef<Path>) -> Result<RpkmTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RpkmTable::parse(&text, &path.display().to_string())
}

pub fn write_rpkm_table(path: impl AsRef<Path>, table: &RpkmTable) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), table.to_csv_string().as_bytes())
}
