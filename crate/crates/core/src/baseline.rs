//! Constant-velocity least-squares extrapolation, the linear comparator.

use crate::Point;

/// Fits `p(t) = a + b t` to each agent's observed points (t = 0, 1, ...) and
/// extrapolates `pred_len` further steps.
pub fn linear_predict(observed: &[Vec<Point>], pred_len: usize) -> Vec<Vec<Point>> {
    observed.iter().map(|obs| extrapolate(obs, pred_len)).collect()
}

fn extrapolate(obs: &[Point], pred_len: usize) -> Vec<Point> {
    let n = obs.len();
    if n == 0 {
        return vec![[0.0, 0.0]; pred_len];
    }
    if n == 1 {
        return vec![obs[0]; pred_len];
    }
    let nf = n as f64;
    let t_mean = (nf - 1.0) / 2.0;
    let var: f64 = (0..n).map(|t| (t as f64 - t_mean).powi(2)).sum();
    let mut coef = [[0.0; 2]; 2];
    for d in 0..2 {
        let mean = obs.iter().map(|p| p[d]).sum::<f64>() / nf;
        let cov: f64 = obs.iter().enumerate().map(|(t, p)| (t as f64 - t_mean) * (p[d] - mean)).sum();
        let slope = cov / var;
        coef[d] = [mean - slope * t_mean, slope];
    }
    (n..n + pred_len)
        .map(|t| {
            let t = t as f64;
            [coef[0][0] + coef[0][1] * t, coef[1][0] + coef[1][1] * t]
        })
        .collect()
}
