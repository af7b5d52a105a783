//! Brute-force reference implementations shared by integration tests.

#![allow(dead_code)]

use cox_overfit::survival_data::SurvivalDataset;

/// ℓ(β) by the O(N²) double loop.
pub fn naive_loglik(data: &SurvivalDataset, beta: &[f64]) -> f64 {
    let t = data.times();
    let eta: Vec<f64> = data.rows().map(|z| dot(beta, z)).collect();
    (0..data.n())
        .map(|i| {
            let risk: f64 = (0..data.n()).filter(|&j| t[j] >= t[i]).map(|j| eta[j].exp()).sum();
            eta[i] - risk.ln()
        })
        .sum()
}

/// Breslow jumps summed by the O(N²) double loop, evaluated at each sorted time.
pub fn naive_breslow(data: &SurvivalDataset, beta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let t = data.times();
    let eta: Vec<f64> = data.rows().map(|z| dot(beta, z)).collect();
    let mut sorted = t.to_vec();
    sorted.sort_by(f64::total_cmp);
    let values = sorted
        .iter()
        .map(|&s| {
            (0..data.n())
                .filter(|&i| t[i] <= s)
                .map(|i| {
                    let risk: f64 = (0..data.n()).filter(|&j| t[j] >= t[i]).map(|j| eta[j].exp()).sum();
                    1.0 / risk
                })
                .sum()
        })
        .collect();
    (sorted, values)
}

/// Maximiser of the naive likelihood over [-5, 5]^p (p ≤ 2), by successive grid refinement
/// down to a final spacing of 5e-6. Concavity makes the refinement safe.
pub fn grid_argmax(data: &SurvivalDataset) -> Vec<f64> {
    let p = data.p();
    assert!(p <= 2);
    let mut centre = vec![0.0; p];
    let mut half: f64 = 5.0;
    let mut step = 0.05;
    while step >= 1e-6 * 0.999 {
        let k = (half / step).round() as i64;
        let mut best = (f64::NEG_INFINITY, centre.clone());
        let axis: Vec<f64> = (-k..=k).map(|i| i as f64 * step).collect();
        let mut visit = |b: Vec<f64>| {
            let v = naive_loglik(data, &b);
            if v > best.0 {
                best = (v, b);
            }
        };
        if p == 1 {
            for &a in &axis {
                visit(vec![centre[0] + a]);
            }
        } else {
            for &a in &axis {
                for &b in &axis {
                    visit(vec![centre[0] + a, centre[1] + b]);
                }
            }
        }
        centre = best.1;
        half = 4.0 * step;
        step /= 10.0;
    }
    centre
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
