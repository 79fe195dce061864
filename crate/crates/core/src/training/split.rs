use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One leave-one-subject-out fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub test_id: String,
    pub val_id: String,
    pub train_ids: Vec<String>,
}

/// One fold per participant; the validation participant is the successor of
/// the test participant in sorted order, wrapping around.
pub fn loso_splits<S: AsRef<str>>(participant_ids: &[S]) -> Result<Vec<FoldSplit>> {
    let mut ids: Vec<String> = participant_ids.iter().map(|s| s.as_ref().to_string()).collect();
    ids.sort();
    let before = ids.len();
    ids.dedup();
    if ids.len() != before {
        return Err(Error::Config("participant ids must be unique".into()));
    }
    if ids.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "leave-one-subject-out needs at least 3 participants, got {}",
            ids.len()
        )));
    }
    let n = ids.len();
    Ok((0..n)
        .map(|i| {
            let val = (i + 1) % n;
            FoldSplit {
                test_id: ids[i].clone(),
                val_id: ids[val].clone(),
                train_ids: (0..n).filter(|&j| j != i && j != val).map(|j| ids[j].clone()).collect(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_participants() {
        let f = loso_splits(&["c", "a", "b"]).unwrap();
        let expect = [("a", "b", "c"), ("b", "c", "a"), ("c", "a", "b")];
        for (fold, (t, v, tr)) in f.iter().zip(expect) {
            assert_eq!((fold.test_id.as_str(), fold.val_id.as_str()), (t, v));
            assert_eq!(fold.train_ids, vec![tr.to_string()]);
        }
    }

    #[test]
    fn rejects_small_or_duplicate_sets() {
        assert!(matches!(loso_splits(&["a", "b"]), Err(Error::InsufficientData(_))));
        assert!(matches!(loso_splits(&["a", "b", "a"]), Err(Error::Config(_))));
    }
}
