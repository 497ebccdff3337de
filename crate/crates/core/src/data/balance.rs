use rand::seq::SliceRandom;
use rand::Rng;
use sa_numerics::RngSeed;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceMode {
    /// Every class cut down to the smallest class count.
    Downsample,
    /// Every class brought to exactly `per_class` samples; short classes are
    /// topped up by drawing with replacement.
    Upsample { per_class: usize },
}

/// Resamples `samples` so each of `num_classes` classes appears equally often.
///
/// The result is shuffled and fully determined by `seed`.
pub fn balance_resample<T: Clone>(
    samples: &[T],
    num_classes: usize,
    class_of: impl Fn(&T) -> usize,
    mode: BalanceMode,
    seed: RngSeed,
) -> Result<Vec<T>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, s) in samples.iter().enumerate() {
        let c = class_of(s);
        if c >= num_classes {
            return Err(CoreError::invalid(format!(
                "class {c} out of range for {num_classes} classes"
            )));
        }
        by_class[c].push(i);
    }
    let histogram: Vec<usize> = by_class.iter().map(Vec::len).collect();
    if histogram.contains(&0) {
        return Err(CoreError::invalid(format!(
            "cannot balance: empty class in histogram {histogram:?}"
        )));
    }
    let target = match mode {
        BalanceMode::Downsample => *histogram.iter().min().unwrap(),
        BalanceMode::Upsample { per_class } => per_class,
    };

    let mut rng = seed.rng();
    let mut picked = Vec::with_capacity(target * num_classes);
    for members in &mut by_class {
        members.shuffle(&mut rng);
        let keep = members.len().min(target);
        picked.extend_from_slice(&members[..keep]);
        for _ in keep..target {
            picked.push(members[rng.gen_range(0..members.len())]);
        }
    }
    picked.shuffle(&mut rng);
    Ok(picked.into_iter().map(|i| samples[i].clone()).collect())
}

pub fn class_histogram<T>(samples: &[T], num_classes: usize, class_of: impl Fn(&T) -> usize) -> Vec<usize> {
    let mut h = vec![0; num_classes];
    for s in samples {
        h[class_of(s)] += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(counts: &[usize]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for i in 0..n {
                out.push((c, i));
            }
        }
        out
    }

    #[test]
    fn downsample_to_minority() {
        let s = labels(&[10, 5]);
        let out = balance_resample(&s, 2, |x| x.0, BalanceMode::Downsample, RngSeed(1)).unwrap();
        assert_eq!(class_histogram(&out, 2, |x| x.0), vec![5, 5]);
    }

    #[test]
    fn balanced_input_is_permuted() {
        let s = labels(&[4, 4, 4]);
        let mut out = balance_resample(&s, 3, |x| x.0, BalanceMode::Downsample, RngSeed(2)).unwrap();
        out.sort();
        assert_eq!(out, s);
    }

    #[test]
    fn upsample_with_replacement() {
        let s = labels(&[3, 3, 1]);
        let out = balance_resample(&s, 3, |x| x.0, BalanceMode::Upsample { per_class: 3 }, RngSeed(3))
            .unwrap();
        assert_eq!(class_histogram(&out, 3, |x| x.0), vec![3, 3, 3]);
        assert!(out.iter().filter(|x| x.0 == 2).all(|x| *x == (2, 0)));
        let again = balance_resample(&s, 3, |x| x.0, BalanceMode::Upsample { per_class: 3 }, RngSeed(3))
            .unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn empty_class_lists_histogram() {
        let s = labels(&[2, 0, 1]);
        let msg = balance_resample(&s, 3, |x| x.0, BalanceMode::Downsample, RngSeed(0))
            .unwrap_err()
            .to_string();
        assert!(msg.contains("[2, 0, 1]"), "{msg}");
    }
}
