#![allow(dead_code)]

use fdp_cox::survival::{gradient, hessian, norm, Dataset, SurvivalRecord};
use rand::Rng;

/// Random vector with norm at most `radius`.
pub fn random_in_ball<R: Rng>(rng: &mut R, d: usize, radius: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let len = norm(&v).max(1e-12);
    let r = radius * rng.gen::<f64>().powf(1.0 / d as f64);
    v.iter().map(|x| x * r / len).collect()
}

/// Times on (0, 1] (a coarse grid with probability `tie_prob`, so ties occur),
/// events with probability 0.7, covariates in the unit ball.
pub fn random_dataset<R: Rng>(rng: &mut R, n: usize, d: usize, tie_prob: f64) -> Dataset {
    let records = (0..n)
        .map(|_| {
            let t: f64 = if rng.gen_bool(tie_prob) {
                rng.gen_range(1..=20) as f64 / 20.0
            } else {
                1.0 - rng.gen::<f64>()
            };
            SurvivalRecord::new(t, rng.gen_bool(0.7), random_in_ball(rng, d, 1.0)).unwrap()
        })
        .collect();
    Dataset::new(d, records).unwrap()
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let d = b.len();
    for i in 0..d {
        let p = (i..d).max_by(|&x, &y| a[x][i].abs().total_cmp(&a[y][i].abs())).unwrap();
        a.swap(i, p);
        b.swap(i, p);
        for j in i + 1..d {
            let f = a[j][i] / a[i][i];
            for k in i..d {
                a[j][k] -= f * a[i][k];
            }
            b[j] -= f * b[i];
        }
    }
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        x[i] = (b[i] - (i + 1..d).map(|k| a[i][k] * x[k]).sum::<f64>()) / a[i][i];
    }
    x
}

/// Unconstrained maximizer of the partial likelihood by Newton's method.
pub fn newton_mle(data: &Dataset) -> Vec<f64> {
    let mut beta = vec![0.0; data.dimension()];
    for _ in 0..50 {
        let step = solve(hessian(data, &beta).unwrap(), gradient(data, &beta).unwrap());
        for (b, s) in beta.iter_mut().zip(&step) {
            *b += s;
        }
        if norm(&step) < 1e-14 {
            break;
        }
    }
    beta
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Least-squares slope and R² of `y` on `x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    (sxy / sxx, sxy * sxy / (sxx * syy))
}

/// Share of adjacent pairs `(y_i, y_{i+1})` satisfying `ok`.
pub fn adjacent_fraction(y: &[f64], ok: impl Fn(f64, f64) -> bool) -> f64 {
    let pairs = y.len().saturating_sub(1);
    y.windows(2).filter(|w| ok(w[0], w[1])).count() as f64 / pairs as f64
}
