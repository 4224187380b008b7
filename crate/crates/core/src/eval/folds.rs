use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One leave-one-subject-out split, as indices into the subject table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: usize,
}

/// One fold per subject, in subject order.
pub fn loso_folds(num_subjects: usize) -> Result<Vec<Fold>> {
    if num_subjects < 2 {
        return Err(Error::Protocol(format!(
            "leave-one-subject-out needs at least 2 subjects, found {num_subjects}; \
             use a holdout split of the recording instead"
        )));
    }
    Ok((0..num_subjects)
        .map(|v| Fold {
            train: (0..num_subjects).filter(|&s| s != v).collect(),
            validation: v,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_subjects() {
        let f = loso_folds(2).unwrap();
        assert_eq!(
            f,
            vec![
                Fold {
                    train: vec![1],
                    validation: 0
                },
                Fold {
                    train: vec![0],
                    validation: 1
                },
            ]
        );
    }

    #[test]
    fn single_subject_is_a_protocol_error() {
        let err = loso_folds(1).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
        assert!(err.to_string().contains("holdout"));
    }

    #[test]
    fn twenty_two_subjects() {
        assert_eq!(loso_folds(22).unwrap().len(), 22);
    }
}
