use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, BOS, EOS, PAD, SEP};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flag {
    /// The output is the retrieved utterance verbatim.
    Copied,
    Generated,
}

fn content(tokens: &[TokenId]) -> BTreeSet<TokenId> {
    tokens
        .iter()
        .copied()
        .filter(|&t| !matches!(t, PAD | BOS | EOS | SEP))
        .collect()
}

/// Share of the distinct generated tokens that also occur in the retrieval.
/// Punctuation counts; control tokens do not.
pub fn word_overlap(generated: &[TokenId], retrieved: &[TokenId]) -> Result<f64> {
    let g = content(generated);
    if g.is_empty() {
        return Err(Error::Empty("generated utterance"));
    }
    let r = content(retrieved);
    Ok(g.intersection(&r).count() as f64 / g.len() as f64)
}

/// Replaces `generated` by `retrieved` when their overlap is strictly above
/// `threshold`.
pub fn copy_fix(generated: &[TokenId], retrieved: &[TokenId], threshold: f64) -> Result<(Vec<TokenId>, Flag)> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid("overlap threshold must lie in (0, 1)"));
    }
    if content(retrieved).is_empty() {
        return Ok((generated.to_vec(), Flag::Generated));
    }
    if word_overlap(generated, retrieved)? > threshold {
        Ok((retrieved.to_vec(), Flag::Copied))
    } else {
        Ok((generated.to_vec(), Flag::Generated))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // i=10 love=11 dogs=12 cats=13 too=14
    #[test]
    fn overlap_examples() {
        assert_eq!(word_overlap(&[10, 11, 12], &[10, 11, 12]).unwrap(), 1.0);
        assert_eq!(word_overlap(&[10, 11], &[12, 13]).unwrap(), 0.0);
        let o = word_overlap(&[10, 11, 12], &[10, 11, 13, 14]).unwrap();
        assert!((o - 2.0 / 3.0).abs() < 1e-12);
        assert!(word_overlap(&[], &[10]).is_err());
        assert!(word_overlap(&[EOS, SEP], &[10]).is_err());
    }

    #[test]
    fn overlap_uses_distinct_generated_tokens() {
        assert_eq!(word_overlap(&[10, 10, 10, 11], &[10]).unwrap(), 0.5);
    }

    #[test]
    fn copy_fix_boundaries() {
        let (out, f) = copy_fix(&[10, 11, 12], &[10, 11, 13, 14], 0.6).unwrap();
        assert_eq!((out, f), (vec![10, 11, 13, 14], Flag::Copied));
        // 3 of 5 distinct tokens shared: exactly 0.6 stays generated
        let gen = [10, 11, 12, 15, 16];
        let (out, f) = copy_fix(&gen, &[10, 11, 12, 20], 0.6).unwrap();
        assert_eq!((out, f), (gen.to_vec(), Flag::Generated));
        let (out, f) = copy_fix(&gen, &[], 0.6).unwrap();
        assert_eq!((out, f), (gen.to_vec(), Flag::Generated));
        assert!(copy_fix(&gen, &[10], 1.0).is_err());
    }

    proptest! {
        #[test]
        fn fixed_outputs_avoid_the_open_band(
            gen in prop::collection::vec(5u32..20, 1..10),
            ret in prop::collection::vec(5u32..20, 0..10),
        ) {
            let (out, flag) = copy_fix(&gen, &ret, 0.6).unwrap();
            let o = word_overlap(&out, &ret).unwrap();
            prop_assert!(!(o > 0.6 && o < 1.0));
            match flag {
                Flag::Copied => prop_assert_eq!(&out, &ret),
                Flag::Generated => prop_assert_eq!(&out, &gen),
            }
        }
    }
}
