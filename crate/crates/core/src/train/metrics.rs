use crate::error::{Error, Result};

/// `cm[truth][pred]` counts.
pub fn confusion_matrix(pred: &[usize], truth: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    if pred.len() != truth.len() {
        return Err(Error::contract("prediction and label counts differ"));
    }
    if pred.is_empty() {
        return Err(Error::contract("cannot score an empty set"));
    }
    let mut cm = vec![vec![0; classes]; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= classes || t >= classes {
            return Err(Error::Data(format!("class index {} out of range {classes}", p.max(t))));
        }
        cm[t][p] += 1;
    }
    Ok(cm)
}

/// Fraction of correct predictions (OA).
pub fn overall_accuracy(cm: &[Vec<usize>]) -> f64 {
    let total: usize = cm.iter().flatten().sum();
    let correct: usize = (0..cm.len()).map(|i| cm[i][i]).sum();
    correct as f64 / total as f64
}

/// Unweighted mean of per-class recall (ACC), over classes that occur in
/// the ground truth.
pub fn mean_class_accuracy(cm: &[Vec<usize>]) -> f64 {
    let recalls: Vec<f64> = cm
        .iter()
        .enumerate()
        .filter_map(|(i, row)| {
            let support: usize = row.iter().sum();
            (support > 0).then(|| row[i] as f64 / support as f64)
        })
        .collect();
    recalls.iter().sum::<f64>() / recalls.len() as f64
}

/// Mean IoU over `parts` for one shape. A part absent from both prediction
/// and ground truth scores 1. Ground-truth labels outside `parts` are a data
/// error.
pub fn shape_iou(pred: &[usize], truth: &[usize], parts: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::contract("prediction and label counts differ or are zero"));
    }
    if parts.is_empty() {
        return Err(Error::contract("a shape needs at least one part"));
    }
    if let Some(bad) = truth.iter().find(|t| !parts.contains(t)) {
        return Err(Error::Data(format!("label {bad} is outside the part set {parts:?}")));
    }
    let mut sum = 0.0;
    for &part in parts {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&p, &t) in pred.iter().zip(truth) {
            let (a, b) = (p == part, t == part);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        sum += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    }
    Ok(sum / parts.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    #[test]
    fn perfect_predictions() {
        let t = [0, 1, 2, 2];
        let cm = confusion_matrix(&t, &t, 3).unwrap();
        assert_eq!(overall_accuracy(&cm), 1.0);
        assert_eq!(mean_class_accuracy(&cm), 1.0);
        assert_eq!(shape_iou(&t, &t, &[0, 1, 2]).unwrap(), 1.0);
    }

    #[test]
    fn majority_only_predictor() {
        let truth: Vec<usize> = [vec![0; 9], vec![1]].concat();
        let cm = confusion_matrix(&[0; 10], &truth, 2).unwrap();
        assert!((overall_accuracy(&cm) - 0.9).abs() < 1e-15);
        assert!((mean_class_accuracy(&cm) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn half_right_two_part_shape() {
        let truth = [0, 0, 1, 1];
        let pred = [0, 1, 1, 0];
        assert!((shape_iou(&pred, &truth, &[0, 1]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn absent_parts_score_one() {
        assert_eq!(shape_iou(&[2, 2], &[2, 2], &[2, 3, 4]).unwrap(), 1.0);
        assert!(matches!(shape_iou(&[0], &[5], &[0, 1]), Err(Error::Data(_))));
        assert!(confusion_matrix(&[], &[], 2).is_err());
    }

    proptest! {
        #[test]
        fn iou_matches_set_oracle(labels in proptest::collection::vec((0usize..3, 0usize..3), 1..32)) {
            let pred: Vec<usize> = labels.iter().map(|l| l.0).collect();
            let truth: Vec<usize> = labels.iter().map(|l| l.1).collect();
            let mut want = 0.0;
            for part in 0..3 {
                let p: BTreeSet<usize> = (0..pred.len()).filter(|&i| pred[i] == part).collect();
                let t: BTreeSet<usize> = (0..truth.len()).filter(|&i| truth[i] == part).collect();
                let u = p.union(&t).count();
                want += if u == 0 { 1.0 } else { p.intersection(&t).count() as f64 / u as f64 };
            }
            want /= 3.0;
            prop_assert!((shape_iou(&pred, &truth, &[0, 1, 2]).unwrap() - want).abs() <= 1e-12);
        }

        #[test]
        fn iou_ignores_point_order(labels in proptest::collection::vec((0usize..2, 0usize..2), 1..24), rot in 0usize..24) {
            let pred: Vec<usize> = labels.iter().map(|l| l.0).collect();
            let truth: Vec<usize> = labels.iter().map(|l| l.1).collect();
            let k = rot % labels.len();
            let (mut p2, mut t2) = (pred.clone(), truth.clone());
            p2.rotate_left(k);
            t2.rotate_left(k);
            prop_assert_eq!(shape_iou(&pred, &truth, &[0, 1]).unwrap(), shape_iou(&p2, &t2, &[0, 1]).unwrap());
        }

        #[test]
        fn oa_equals_acc_for_balanced_uniform_recall(per in 1usize..6, wrong in 0usize..6) {
            let wrong = wrong.min(per);
            let mut pred = Vec::new();
            let mut truth = Vec::new();
            for c in 0..3 {
                for j in 0..per {
                    truth.push(c);
                    pred.push(if j < wrong { (c + 1) % 3 } else { c });
                }
            }
            let cm = confusion_matrix(&pred, &truth, 3).unwrap();
            prop_assert!((overall_accuracy(&cm) - mean_class_accuracy(&cm)).abs() < 1e-15);
        }
    }
}
