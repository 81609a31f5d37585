//! Slow, obviously-correct reference implementations used only by tests.

#![allow(dead_code)]

use hwtemporal::imagecore::FeatureMap;

/// Cosine of every valid window of `level` against `template`, computed by
/// gathering each window into a vector.
pub fn naive_ndp(level: &FeatureMap, template: &FeatureMap) -> Vec<f64> {
    let (th, tw, tz) = template.shape();
    let (h, w, z) = level.shape();
    assert_eq!(z, tz);
    let t: Vec<f64> = template.data().iter().map(|v| *v as f64).collect();
    let nt = t.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut out = Vec::new();
    for y in 0..=h - th {
        for x in 0..=w - tw {
            let mut win = Vec::with_capacity(th * tw * z);
            for dy in 0..th {
                for dx in 0..tw {
                    for c in 0..z {
                        win.push(level.get(y + dy, x + dx, c) as f64);
                    }
                }
            }
            let nw = win.iter().map(|v| v * v).sum::<f64>().sqrt();
            let d: f64 = win.iter().zip(&t).map(|(a, b)| a * b).sum();
            out.push(if nw < 1e-12 || nt < 1e-12 { 0.0 } else { d / (nw * nt) });
        }
    }
    out
}

/// AUC by comparing every positive with every negative.
pub fn brute_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut wins, mut n) = (0.0, 0usize);
    for (i, si) in scores.iter().enumerate() {
        if !positive[i] {
            continue;
        }
        for (j, sj) in scores.iter().enumerate() {
            if positive[j] {
                continue;
            }
            n += 1;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / n as f64
}

/// Best accuracy of `score > t` over every threshold that can change a
/// decision: each score, and below the minimum.
pub fn exhaustive_threshold_accuracy(scores: &[f64], same: &[bool]) -> f64 {
    let mut cands: Vec<f64> = scores.to_vec();
    cands.push(f64::NEG_INFINITY);
    cands
        .iter()
        .map(|t| {
            scores
                .iter()
                .zip(same)
                .filter(|(s, l)| (**s > *t) == **l)
                .count() as f64
                / scores.len() as f64
        })
        .fold(0.0, f64::max)
}

/// Cyclic Jacobi eigensolver for a symmetric matrix; eigenvalues descending
/// with matching column eigenvectors.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|i, j| m[*j][*j].total_cmp(&m[*i][*i]));
    let vals = order.iter().map(|i| m[*i][*i]).collect();
    let vecs = order.iter().map(|i| (0..n).map(|k| v[k][*i]).collect()).collect();
    (vals, vecs)
}
