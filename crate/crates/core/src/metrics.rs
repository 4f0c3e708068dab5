//! Session-evaluation metrics.
//!
//! Accuracy is the exact ratio of correct decisions, reported for three
//! partitions of the cumulative evaluation set: `Base` (samples of the
//! base-session classes), `Novel` (samples of any incremental class seen
//! so far), and `Both`. A partition with no samples is reported as
//! absent, not zero. Average accuracy is the mean over the sessions a
//! partition is present in; the performance dropping rate is the first
//! relevant session's accuracy minus the last session's (the `Novel`
//! partition starts at session 1).

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::Real;

/// Which slice of the evaluation samples a metric covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Base,
    Novel,
    Both,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Base, Partition::Novel, Partition::Both];

    pub fn label(self) -> &'static str {
        match self {
            Partition::Base => "base",
            Partition::Novel => "novel",
            Partition::Both => "both",
        }
    }
}

/// Accuracy of `(truth, predicted)` pairs restricted to a partition;
/// `None` when the partition holds no samples.
pub fn accuracy(
    pairs: &[(u32, u32)],
    partition: Partition,
    base_classes: &BTreeSet<u32>,
) -> Option<Real> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for (truth, pred) in pairs {
        let in_partition = match partition {
            Partition::Base => base_classes.contains(truth),
            Partition::Novel => !base_classes.contains(truth),
            Partition::Both => true,
        };
        if in_partition {
            total += 1;
            correct += usize::from(truth == pred);
        }
    }
    (total > 0).then(|| correct as Real / total as Real)
}

/// Mean of the sessions where the partition is present.
pub fn average_accuracy(row: &[Option<Real>]) -> Result<Real> {
    let present: Vec<Real> = row.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(CoreError::invalid("average accuracy over an empty row"));
    }
    Ok(present.iter().sum::<Real>() / present.len() as Real)
}

/// Performance dropping rate: first relevant session minus last session.
/// `Base`/`Both` start at session 0, `Novel` at session 1.
pub fn performance_drop(row: &[Option<Real>], partition: Partition) -> Result<Real> {
    let start = match partition {
        Partition::Base | Partition::Both => 0,
        Partition::Novel => 1,
    };
    if row.len() < 2 {
        return Err(CoreError::invalid("performance drop needs at least two sessions"));
    }
    let first = row
        .get(start)
        .copied()
        .flatten()
        .ok_or_else(|| CoreError::invalid("first relevant session accuracy is absent"))?;
    let last = row
        .last()
        .copied()
        .flatten()
        .ok_or_else(|| CoreError::invalid("final session accuracy is absent"))?;
    Ok(first - last)
}

/// Row-major confusion counts (rows = truth, cols = predicted) in the
/// given class order.
pub fn confusion_matrix(pairs: &[(u32, u32)], class_order: &[u32]) -> Result<Vec<u32>> {
    let index = |c: u32| -> Result<usize> {
        class_order
            .iter()
            .position(|x| *x == c)
            .ok_or_else(|| CoreError::invalid(format_args!("class {c} not in class order")))
    };
    let n = class_order.len();
    let mut m = alloc::vec![0u32; n * n];
    for (truth, pred) in pairs {
        m[index(*truth)? * n + index(*pred)?] += 1;
    }
    Ok(m)
}

/// Per-class prototype storage accounting: `classes * dim` float
/// elements.
pub fn storage_elements(classes: usize, dim: usize) -> u64 {
    classes as u64 * dim as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn base_set(ids: &[u32]) -> BTreeSet<u32> {
        ids.iter().copied().collect()
    }

    #[test]
    fn accuracy_ratios() {
        let pairs = [(0, 0), (0, 1), (1, 1), (2, 2)];
        let base = base_set(&[0, 1]);
        assert_eq!(accuracy(&pairs, Partition::Both, &base), Some(0.75));
        let all_right = [(0, 0), (1, 1)];
        assert_eq!(accuracy(&all_right, Partition::Both, &base), Some(1.0));
    }

    #[test]
    fn novel_partition_absent_at_session_zero() {
        let pairs = [(0, 0), (1, 0)];
        let base = base_set(&[0, 1]);
        assert_eq!(accuracy(&pairs, Partition::Novel, &base), None);
        assert!(accuracy(&pairs, Partition::Base, &base).is_some());
    }

    #[test]
    fn published_metric_rows_reproduce() {
        // Both row
        let both: Vec<Option<Real>> = [99.98, 98.32, 97.69, 95.18, 94.00, 92.73, 90.59, 89.24, 88.28, 87.08]
            .iter()
            .map(|v| Some(*v))
            .collect();
        let aa = average_accuracy(&both).unwrap();
        assert!((aa - 93.31).abs() < 0.005, "AA {aa}");
        let pd = performance_drop(&both, Partition::Both).unwrap();
        assert!((pd - 12.90).abs() < 0.005, "PD {pd}");

        // Novel row: absent at session 0, endpoints 80.39 and 72.86
        let mut novel: Vec<Option<Real>> = vec![None];
        novel.extend([80.39, 75.45, 80.24, 90.58, 79.46, 75.69, 74.30, 73.89, 72.86].map(Some));
        let pd_novel = performance_drop(&novel, Partition::Novel).unwrap();
        assert!((pd_novel - 7.53).abs() < 0.005, "novel PD {pd_novel}");

        // Base row endpoints 99.98 -> 98.71
        let base: Vec<Option<Real>> = [99.98, 99.95, 99.92, 99.26, 98.88, 98.78, 98.72, 98.75, 98.74, 98.71]
            .iter()
            .map(|v| Some(*v))
            .collect();
        let pd_base = performance_drop(&base, Partition::Base).unwrap();
        assert!((pd_base - 1.27).abs() < 0.005, "base PD {pd_base}");
    }

    #[test]
    fn constant_accuracy_gives_zero_drop() {
        let row = vec![Some(0.8), Some(0.8), Some(0.8)];
        assert_eq!(performance_drop(&row, Partition::Both).unwrap(), 0.0);
    }

    #[test]
    fn single_session_drop_is_undefined() {
        let row = vec![Some(0.9)];
        assert!(performance_drop(&row, Partition::Base).is_err());
    }

    #[test]
    fn confusion_matrix_properties() {
        let pairs = [(0, 0), (1, 1), (2, 2)];
        let m = confusion_matrix(&pairs, &[0, 1, 2]).unwrap();
        assert_eq!(m, vec![1, 0, 0, 0, 1, 0, 0, 0, 1]);
        // two-class flip
        let flip = [(5, 6), (6, 5)];
        let m = confusion_matrix(&flip, &[5, 6]).unwrap();
        assert_eq!(m, vec![0, 1, 1, 0]);
        // total equals sample count
        let pairs = [(0, 1), (1, 1), (0, 0), (1, 0), (0, 1)];
        let m = confusion_matrix(&pairs, &[0, 1]).unwrap();
        assert_eq!(m.iter().sum::<u32>(), 5);
        // unknown class rejected
        assert!(confusion_matrix(&[(9, 0)], &[0, 1]).is_err());
    }

    #[test]
    fn storage_formula() {
        assert_eq!(storage_elements(40, 512), 20480);
        assert_eq!(storage_elements(0, 512), 0);
    }
}
