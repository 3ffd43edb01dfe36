//! Independent scalar-loop references used by the oracle and acceptance tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use candle_core::{Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tensor(data: &[f64], shape: &[usize]) -> Tensor {
    Tensor::from_vec(data.to_vec(), shape, &Device::Cpu).unwrap()
}

pub fn flat(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_vec1::<f64>().unwrap()
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_scalar::<f64>().unwrap()
}

/// Random point on each pixel's K-simplex, `(B, K, H, W)` row-major.
pub fn random_masks(r: &mut ChaCha8Rng, b: usize, k: usize, h: usize, w: usize) -> Vec<f64> {
    let plane = h * w;
    let mut out = vec![0.0; b * k * plane];
    for bi in 0..b {
        for p in 0..plane {
            let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            for ki in 0..k {
                out[(bi * k + ki) * plane + p] = raw[ki] / s;
            }
        }
    }
    out
}

pub struct Dims {
    pub b: usize,
    pub k: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn x(&self, bi: usize, ci: usize, p: usize) -> usize {
        (bi * self.c + ci) * self.h * self.w + p
    }
    pub fn m(&self, bi: usize, ki: usize, p: usize) -> usize {
        (bi * self.k + ki) * self.h * self.w + p
    }
    pub fn comp(&self, bi: usize, ki: usize, ci: usize, p: usize) -> usize {
        ((bi * self.k + ki) * self.c + ci) * self.h * self.w + p
    }
    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Negative log of the per-image likelihood written as a product over
/// entries of the slot mixture, averaged over the batch.
pub fn nll_product_form(d: &Dims, x: &[f64], m: &[f64], comp: &[f64], sigma: &[f64]) -> f64 {
    let mut total = 0.0;
    for bi in 0..d.b {
        let mut likelihood = 1.0f64;
        for ci in 0..d.c {
            for p in 0..d.plane() {
                let mut mix = 0.0;
                for ki in 0..d.k {
                    let s = sigma[ki];
                    let e = x[d.x(bi, ci, p)] - comp[d.comp(bi, ki, ci, p)];
                    mix += m[d.m(bi, ki, p)] * (-e * e / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt());
                }
                likelihood *= mix;
            }
        }
        total += -likelihood.ln();
    }
    total / d.b as f64
}

pub fn mw_loop(d: &Dims, x: &[f64], m: &[f64], comp: &[f64]) -> f64 {
    let entries = (d.c * d.plane()) as f64;
    let mut total = 0.0;
    for bi in 0..d.b {
        let mut s = 0.0;
        for ci in 0..d.c {
            for p in 0..d.plane() {
                for ki in 0..d.k {
                    let e = x[d.x(bi, ci, p)] - comp[d.comp(bi, ki, ci, p)];
                    s += m[d.m(bi, ki, p)] * e * e;
                }
            }
        }
        total += s / entries;
    }
    total / d.b as f64
}

pub fn mask_kl_loop(d: &Dims, m: &[f64], r: &[f64]) -> f64 {
    let mut total = 0.0;
    for bi in 0..d.b {
        for ki in 0..d.k {
            for p in 0..d.plane() {
                let (a, b) = (m[d.m(bi, ki, p)], r[d.m(bi, ki, p)]);
                total += a * (a / b).ln();
            }
        }
    }
    total / d.b as f64
}

pub fn mask_mse_loop(d: &Dims, m: &[f64], r: &[f64]) -> f64 {
    let mut total = 0.0;
    for bi in 0..d.b {
        let mut s = 0.0;
        for ki in 0..d.k {
            for p in 0..d.plane() {
                let e = m[d.m(bi, ki, p)] - r[d.m(bi, ki, p)];
                s += e * e;
            }
        }
        total += s / d.plane() as f64;
    }
    total / d.b as f64
}

/// `mean` and `std` laid out `(B, n)`.
pub fn latent_kl_loop(b: usize, n: usize, mean: &[f64], std: &[f64]) -> f64 {
    let mut total = 0.0;
    for bi in 0..b {
        for j in 0..n {
            let (mu, s) = (mean[bi * n + j], std[bi * n + j]);
            total += 0.5 * (mu * mu + s * s - 1.0 - (s * s).ln());
        }
    }
    total / b as f64
}

/// ARI by explicit enumeration of all pixel pairs.
pub fn ari_pairs(pred: &[u32], truth: &[u32], exclude: &[u32]) -> Option<(f64, bool)> {
    let kept: Vec<(u32, u32)> = pred
        .iter()
        .zip(truth)
        .filter(|(_, t)| !exclude.contains(t))
        .map(|(p, t)| (*p, *t))
        .collect();
    if kept.is_empty() {
        return None;
    }
    let (mut both, mut same_pred, mut same_truth, mut total) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..kept.len() {
        for j in i + 1..kept.len() {
            let sp = kept[i].0 == kept[j].0;
            let st = kept[i].1 == kept[j].1;
            both += (sp && st) as u64;
            same_pred += sp as u64;
            same_truth += st as u64;
            total += 1;
        }
    }
    let (both, sp, st, total) = (both as f64, same_pred as f64, same_truth as f64, total as f64);
    let expected = if total > 0.0 { sp * st / total } else { 0.0 };
    let max = 0.5 * (sp + st);
    if max - expected == 0.0 {
        return Some((1.0, true));
    }
    Some(((both - expected) / (max - expected), false))
}

/// Midrank of each value, counted directly.
pub fn midranks_by_counting(v: &[f64]) -> Vec<f64> {
    v.iter()
        .enumerate()
        .map(|(i, x)| {
            let below = v.iter().filter(|y| *y < x).count() as f64;
            let tied = v.iter().enumerate().filter(|(j, y)| *j != i && *y == x).count() as f64;
            1.0 + below + tied / 2.0
        })
        .collect()
}

/// Two-sided signed-rank p-value by enumerating all 2ⁿ sign assignments.
pub fn wilcoxon_enumerated(a: &[f64], b: &[f64]) -> Option<(f64, f64)> {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return None;
    }
    let ranks = midranks_by_counting(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let observed: f64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    let total: f64 = ranks.iter().sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        le += (w <= observed) as u64;
        ge += (w >= observed) as u64;
    }
    let all = (1u64 << n) as f64;
    let p = (2.0 * (le.min(ge) as f64) / all).min(1.0);
    Some((observed.min(total - observed), p))
}

/// Friedman statistic from directly counted midranks.
pub fn friedman_statistic(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len() as f64;
    let k = rows[0].len();
    let mut sums = vec![0.0; k];
    for row in rows {
        for (s, r) in sums.iter_mut().zip(midranks_by_counting(row)) {
            *s += r;
        }
    }
    let kf = k as f64;
    let ss: f64 = sums.iter().map(|s| (s / n - (kf + 1.0) / 2.0).powi(2)).sum();
    12.0 * n / (kf * (kf + 1.0)) * ss
}

fn erfc_by_quadrature(z: f64) -> f64 {
    let steps = 20_000;
    let h = z / steps as f64;
    let f = |t: f64| (-t * t).exp();
    let mut s = f(0.0) + f(z);
    for i in 1..steps {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    1.0 - 2.0 / PI.sqrt() * s * h / 3.0
}

/// Chi-square upper tail by the df-recurrence from the closed forms at df 1 and 2.
pub fn chi_square_sf(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let half = x / 2.0;
    let (mut sf, mut nu, mut gamma) = if df.is_multiple_of(2) {
        ((-half).exp(), 2usize, 1.0f64)
    } else {
        (erfc_by_quadrature(half.sqrt()), 1usize, PI.sqrt())
    };
    // gamma holds Γ(ν/2); advance ν → ν + 2.
    while nu < df {
        let a = nu as f64 / 2.0;
        sf += half.powf(a) * (-half).exp() / (gamma * a);
        gamma *= a;
        nu += 2;
    }
    sf
}
