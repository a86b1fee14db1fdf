use rand::seq::SliceRandom;

use super::Split;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// Largest-remainder rounding of `n * ratio`; leftover units go to the
/// largest fractional parts, lowest index first on ties.
fn counts(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut out = [0usize; 3];
    for (o, e) in out.iter_mut().zip(&exact) {
        *o = e.floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut left = n - out.iter().sum::<usize>();
    for i in order.into_iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

/// Assigns each gene (in input order) to a split after a seeded shuffle.
/// Reusing the same ids and seed for every cell gives identical splits.
pub fn split_genes(gene_ids: &[String], ratios: [f64; 3], seed: u64) -> Result<Vec<Split>> {
    if ratios.iter().any(|r| *r < 0.0 || !r.is_finite()) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let n = gene_ids.len();
    let [ntr, nva, _] = counts(n, ratios);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::rng::rng(seed, 0x5911));
    let mut out = vec![Split::Test; n];
    for (rank, &gene) in order.iter().enumerate() {
        out[gene] = if rank < ntr {
            Split::Train
        } else if rank < ntr + nva {
            Split::Validation
        } else {
            Split::Test
        };
    }
    Ok(out)
}

impl SplitCounts {
    pub fn of(assignment: &[Split]) -> SplitCounts {
        let c = |s| assignment.iter().filter(|&&a| a == s).count();
        SplitCounts {
            train: c(Split::Train),
            validation: c(Split::Validation),
            test: c(Split::Test),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("g{i}")).collect()
    }

    #[test]
    fn equal_thirds() {
        let s = split_genes(&ids(9), [1.0 / 3.0; 3], 1).unwrap();
        assert_eq!(SplitCounts::of(&s), SplitCounts { train: 3, validation: 3, test: 3 });
    }

    #[test]
    fn half_quarter_quarter() {
        let s = split_genes(&ids(8), [0.5, 0.25, 0.25], 1).unwrap();
        assert_eq!(SplitCounts::of(&s), SplitCounts { train: 4, validation: 2, test: 2 });
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = split_genes(&ids(100), [1.0 / 3.0; 3], 5).unwrap();
        assert_eq!(a, split_genes(&ids(100), [1.0 / 3.0; 3], 5).unwrap());
        assert_ne!(a, split_genes(&ids(100), [1.0 / 3.0; 3], 6).unwrap());
    }

    #[test]
    fn uneven_total_is_exhaustive() {
        let s = split_genes(&ids(2000), [1.0 / 3.0; 3], 0).unwrap();
        let c = SplitCounts::of(&s);
        assert_eq!(c.train + c.validation + c.test, 2000);
        assert_eq!((c.train, c.validation, c.test), (667, 667, 666));
    }

    #[test]
    fn bad_ratios_rejected() {
        assert!(split_genes(&ids(3), [0.5, 0.5, 0.5], 0).is_err());
    }
}
