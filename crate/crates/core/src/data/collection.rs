use std::fmt::Write as _;
use std::path::Path;

use super::{
    parse_deepchrome_csv, read_rpkm_table, write_corpus_csv, write_rpkm_table, CellCorpus, GeneSample,
    Provenance, RpkmTable, Split,
};
use crate::error::{Error, Result};

pub const RPKM_FILE: &str = "rpkm.csv";
pub const SPLITS_FILE: &str = "splits.csv";

/// A multi-cell collection sharing one gene set and one split assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Collection {
    pub corpora: Vec<CellCorpus>,
}

impl Collection {
    pub fn new(corpora: Vec<CellCorpus>) -> Self {
        Collection { corpora }
    }

    pub fn cell_ids(&self) -> Vec<String> {
        self.corpora.iter().map(|c| c.cell_id.clone()).collect()
    }

    pub fn get(&self, cell: &str) -> Option<&CellCorpus> {
        self.corpora.iter().find(|c| c.cell_id == cell)
    }

    /// Gene ids with their split, in the order of the first cell.
    pub fn gene_splits(&self) -> Vec<(String, Split)> {
        let Some(first) = self.corpora.first() else { return Vec::new() };
        Split::ALL
            .iter()
            .flat_map(|&s| first.split(s).iter().map(move |g| (g.gene_id.clone(), s)))
            .collect()
    }

    /// RPKM of every gene (rows, in [`Self::gene_splits`] order) in every cell.
    pub fn rpkm_table(&self) -> Result<RpkmTable> {
        let genes: Vec<String> = self.gene_splits().into_iter().map(|(g, _)| g).collect();
        let mut values = vec![Vec::with_capacity(self.corpora.len()); genes.len()];
        for c in &self.corpora {
            for (row, g) in values.iter_mut().zip(c.all()) {
                row.push(g.rpkm.ok_or_else(|| Error::config(format!("cell {} lacks rpkm", c.cell_id)))?);
            }
        }
        Ok(RpkmTable {
            cells: self.cell_ids(),
            genes,
            values,
        })
    }

    /// Writes `<cell>.csv` per cell plus `rpkm.csv` and `splits.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for c in &self.corpora {
            write_corpus_csv(dir.join(format!("{}.csv", c.cell_id)), c.all())?;
        }
        write_rpkm_table(dir.join(RPKM_FILE), &self.rpkm_table()?)?;
        let mut s = String::from("gene_id,split\n");
        for (g, split) in self.gene_splits() {
            let _ = writeln!(s, "{g},{}", split.as_str());
        }
        crate::io::write_atomic(&dir.join(SPLITS_FILE), s.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Collection> {
        let table = read_rpkm_table(dir.join(RPKM_FILE))?;
        let splits_path = dir.join(SPLITS_FILE);
        let text = std::fs::read_to_string(&splits_path).map_err(|e| Error::io(&splits_path, e))?;
        let mut split_of = std::collections::HashMap::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            let Some((g, s)) = line.split_once(',') else { continue };
            let s = Split::parse(s.trim()).ok_or_else(|| Error::Parse {
                path: splits_path.display().to_string(),
                line: i + 1,
                message: format!("unknown split `{s}`"),
            })?;
            split_of.insert(g.trim().to_string(), s);
        }
        let row_of: std::collections::HashMap<&str, usize> =
            table.genes.iter().enumerate().map(|(i, g)| (g.as_str(), i)).collect();

        let mut corpora = Vec::new();
        for (ci, cell) in table.cells.iter().enumerate() {
            let samples = parse_deepchrome_csv(dir.join(format!("{cell}.csv")))?;
            let mut corpus = CellCorpus {
                cell_id: cell.clone(),
                train: vec![],
                validation: vec![],
                test: vec![],
                provenance: Provenance::RealFormat,
            };
            for mut g in samples {
                let split = *split_of
                    .get(&g.gene_id)
                    .ok_or_else(|| Error::config(format!("gene {} missing from {SPLITS_FILE}", g.gene_id)))?;
                let row = *row_of
                    .get(g.gene_id.as_str())
                    .ok_or_else(|| Error::config(format!("gene {} missing from {RPKM_FILE}", g.gene_id)))?;
                g.rpkm = Some(table.values[row][ci]);
                push(&mut corpus, split, g);
            }
            corpora.push(corpus);
        }
        let coll = Collection { corpora };
        coll.check_consistent()?;
        Ok(coll)
    }

    /// Gene-id sets (per split) must match across cells.
    pub fn check_consistent(&self) -> Result<()> {
        let Some(first) = self.corpora.first() else { return Ok(()) };
        fn ids(c: &CellCorpus, s: Split) -> Vec<&str> {
            let mut v: Vec<&str> = c.split(s).iter().map(|g| g.gene_id.as_str()).collect();
            v.sort_unstable();
            v
        }
        for c in &self.corpora[1..] {
            for s in Split::ALL {
                if ids(c, s) != ids(first, s) {
                    return Err(Error::config(format!(
                        "cell {} has a different {} gene set than {}",
                        c.cell_id,
                        s.as_str(),
                        first.cell_id
                    )));
                }
            }
        }
        Ok(())
    }
}

fn push(c: &mut CellCorpus, split: Split, g: GeneSample) {
    match split {
        Split::Train => c.train.push(g),
        Split::Validation => c.validation.push(g),
        Split::Test => c.test.push(g),
    }
}
