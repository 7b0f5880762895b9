/// Area under the ROC curve by a trapezoidal sweep over every distinct score.
/// Returns 0.5 when either class is absent.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return 0.5;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0.0, 0.0);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let (tpr, fpr) = (tp / pos, fp / neg);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    area
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Prng;

    fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut total = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    total += if si > sj {
                        1.0
                    } else if si == sj {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        total / pairs
    }

    #[test]
    fn trapezoid_matches_pairwise_count() {
        let mut prng = Prng::new(21);
        for _ in 0..200 {
            let n = 2 + prng.below(30);
            // Coarse scores so ties are common.
            let scores: Vec<f64> = (0..n).map(|_| (prng.below(6) as f64) / 5.0).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| u8::from(prng.uniform() < 0.4)).collect();
            labels[0] = 1;
            labels[1] = 0;
            let a = roc_auc(&scores, &labels);
            let b = pairwise_auc(&scores, &labels);
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn perfect_and_random_scores() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]), 1.0);
        let mut mean = 0.0;
        for seed in 0..10 {
            let mut prng = Prng::new(seed);
            let n = 2000;
            let scores: Vec<f64> = (0..n).map(|_| prng.uniform()).collect();
            let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
            let auc = roc_auc(&scores, &labels);
            assert!((auc - 0.5).abs() < 0.05, "seed {seed}: {auc}");
            mean += auc / 10.0;
        }
        assert!((mean - 0.5).abs() < 0.05);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }
}
