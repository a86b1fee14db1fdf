use super::Label;
use crate::error::{Error, Result};

/// Labels each gene +1 iff its RPKM is strictly above the per-cell median
/// across genes. For even counts the lower of the two middle values is the
/// median.
pub fn binarize_expression(rpkm: &[f64]) -> Result<Vec<Label>> {
    if rpkm.is_empty() {
        return Err(Error::Empty("rpkm vector"));
    }
    if rpkm.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("rpkm values must be finite"));
    }
    let mut sorted = rpkm.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[(sorted.len() - 1) / 2];
    Ok(rpkm
        .iter()
        .map(|&v| if v > median { Label::Positive } else { Label::Negative })
        .collect())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn signs(v: &[f64]) -> Vec<i8> {
        binarize_expression(v).unwrap().into_iter().map(Label::sign).collect()
    }

    #[test]
    fn odd_count() {
        assert_eq!(signs(&[1.0, 2.0, 3.0, 4.0, 5.0]), vec![-1, -1, -1, 1, 1]);
    }

    #[test]
    fn even_count_uses_lower_middle() {
        assert_eq!(signs(&[1.0, 2.0, 3.0, 4.0]), vec![-1, -1, 1, 1]);
    }

    #[test]
    fn all_equal_is_all_negative() {
        assert_eq!(signs(&[2.5; 6]), vec![-1; 6]);
    }

    #[test]
    fn empty_rejected() {
        assert!(binarize_expression(&[]).is_err());
    }

    proptest! {
        #[test]
        fn balanced_and_never_all_positive(v in prop::collection::hash_set(0u32..100_000, 1..200)) {
            let rpkm: Vec<f64> = v.into_iter().map(|x| x as f64 / 7.0).collect();
            let labels = binarize_expression(&rpkm).unwrap();
            let pos = labels.iter().filter(|l| **l == Label::Positive).count() as i64;
            let neg = labels.len() as i64 - pos;
            prop_assert!(neg >= 1);
            prop_assert!((pos - neg).abs() <= 1);
        }
    }
}
