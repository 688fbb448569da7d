//! Classification metrics in percent, plus rank-based AUROC.

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("metric needs at least one sample")]
    Empty,
    #[error("length mismatch: {0} truths vs {1} predictions")]
    Length(usize, usize),
    #[error("AUROC is undefined with a single class present")]
    SingleClass,
    #[error("score {0} is not finite")]
    NonFinite(f64),
}

/// One-vs-rest counts for a positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
}

impl Confusion {
    pub fn of<T: PartialEq>(y_true: &[T], y_pred: &[T], positive: &T) -> Result<Self, MetricError> {
        check(y_true.len(), y_pred.len())?;
        let mut c = Confusion::default();
        for (t, p) in y_true.iter().zip(y_pred) {
            match (t == positive, p == positive) {
                (true, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fp += 1,
            }
        }
        Ok(c)
    }

    /// TP/(TP+FN), or 0 when no positives exist.
    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// TN/(TN+FP), or 0 when no negatives exist.
    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn gmean(&self) -> f64 {
        100.0 * (self.sensitivity() * self.specificity()).sqrt()
    }

    pub fn accuracy(&self) -> f64 {
        100.0 * ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn_)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn check(a: usize, b: usize) -> Result<(), MetricError> {
    if a != b {
        return Err(MetricError::Length(a, b));
    }
    if a == 0 {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Exact-match accuracy in percent.
pub fn accuracy<T: PartialEq>(y_true: &[T], y_pred: &[T]) -> Result<f64, MetricError> {
    check(y_true.len(), y_pred.len())?;
    let hits = y_true.iter().zip(y_pred).filter(|(t, p)| t == p).count();
    Ok(100.0 * hits as f64 / y_true.len() as f64)
}

/// One-vs-rest G-mean of `positive` in percent.
pub fn gmean<T: PartialEq>(y_true: &[T], y_pred: &[T], positive: &T) -> Result<f64, MetricError> {
    Ok(Confusion::of(y_true, y_pred, positive)?.gmean())
}

/// One-vs-rest accuracy of `positive` in percent.
pub fn class_accuracy<T: PartialEq>(y_true: &[T], y_pred: &[T], positive: &T) -> Result<f64, MetricError> {
    Ok(Confusion::of(y_true, y_pred, positive)?.accuracy())
}

/// Area under the ROC curve via the Mann-Whitney rank sum with midranks
/// for ties; equals the probability that a random positive outscores a
/// random negative, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check(scores.len(), labels.len())?;
    if let Some(&s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite(s));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie block i..=j shares their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let np = n_pos as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gmean_hand_example() {
        let mut t = vec![1; 10];
        t.extend(vec![0; 10]);
        let mut p = vec![1; 8];
        p.extend(vec![0; 2]);
        p.extend(vec![0; 7]);
        p.extend(vec![1; 3]);
        let c = Confusion::of(&t, &p, &1).unwrap();
        assert_eq!((c.tp, c.fn_, c.tn, c.fp), (8, 2, 7, 3));
        assert!((gmean(&t, &p, &1).unwrap() - 74.83).abs() < 0.01);
        assert_eq!(gmean(&t, &t, &1).unwrap(), 100.0);
    }

    #[test]
    fn never_predicted_class_has_zero_gmean() {
        assert_eq!(gmean(&[1, 0, 0], &[0, 0, 0], &1).unwrap(), 0.0);
        assert_eq!(gmean::<u8>(&[], &[], &1), Err(MetricError::Empty));
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[true, true, false, false]).unwrap(), 0.25);
        assert_eq!(auroc(&[1.0, 2.0], &[false, true]).unwrap(), 1.0);
        assert_eq!(auroc(&[1.0, 1.0], &[false, true]).unwrap(), 0.5);
        assert_eq!(auroc(&[1.0, 2.0], &[true, true]), Err(MetricError::SingleClass));
    }
}
