use super::{DatasetSplit, Label};
use crate::{Error, Result};

/// Most frequent training label (ties to the smallest id) and its test metric.
pub fn class_majority(split: &DatasetSplit) -> Result<(Label, f64)> {
    if split.train.is_empty() {
        return Err(Error::EmptyDataset("class majority needs a nonempty train split"));
    }
    if split.test.is_empty() {
        return Err(Error::EmptyDataset("class majority needs a nonempty test split"));
    }
    let mut counts = vec![0usize; split.n_labels()];
    for ex in &split.train {
        counts[ex.gold] += 1;
    }
    let majority = counts
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.cmp(b).then(j.cmp(i)))
        .map(|(i, _)| i)
        .expect("nonempty label set");
    let gold: Vec<Label> = split.test.iter().map(|e| e.gold).collect();
    let predicted = vec![majority; gold.len()];
    Ok((majority, split.metric.evaluate(&predicted, &gold, split.n_labels())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LabeledExample, MetricKind, TokenSequence, Vocabulary};

    fn split(train: &[usize], test: &[usize]) -> DatasetSplit {
        let mk = |gs: &[usize]| {
            gs.iter()
                .enumerate()
                .map(|(i, &g)| LabeledExample { id: i, sequence: TokenSequence::new(vec![1]), gold: g })
                .collect()
        };
        DatasetSplit {
            train: mk(train),
            validation: Vec::new(),
            test: mk(test),
            labels: vec!["neg".into(), "pos".into()],
            metric: MetricKind::Accuracy,
            vocab: Vocabulary::new(["x"]),
            seed: 0,
            signal_tokens: Vec::new(),
        }
    }

    #[test]
    fn majority_examples() {
        let s = split(&[1, 1, 1, 1, 1, 1, 0, 0, 0, 0], &[0, 1, 0, 1]);
        assert_eq!(class_majority(&s).unwrap(), (1, 0.5));
        let s = split(&[0, 0], &[0, 0]);
        assert_eq!(class_majority(&s).unwrap(), (0, 1.0));
        let s = split(&[1, 0], &[0, 1]);
        assert_eq!(class_majority(&s).unwrap().0, 0);
        let s = split(&[], &[0]);
        assert!(class_majority(&s).is_err());
    }
}
