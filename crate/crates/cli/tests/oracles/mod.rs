//! Reference implementations written from the formulas, sharing no code
//! with the library under test.

#![allow(dead_code)]

/// Step for element `(c, i)` of a `C x plane` scale field, computed one
/// element at a time. `counts` are slice channel counts.
pub fn controller_steps(sigma: &[f32], channels: usize, plane: usize, counts: &[usize], d: f32, k: Option<f32>) -> Vec<f32> {
    let eps: f32 = 1.0 / 1_048_576.0;
    let slices = counts.len();
    let mut out = vec![0.0f32; sigma.len()];
    for c in 0..channels {
        // 1-based slice holding channel c
        let mut n = 0;
        let mut acc = 0;
        while acc <= c {
            acc += counts[n];
            n += 1;
        }
        let (dmin, dmax) = if d == 1.0 {
            (1.0f32, 1.0f32)
        } else if d < 1.0 {
            (d + ((n - 1) as f32 / slices as f32) * (1.0 - d), 1.0)
        } else {
            (1.0, 1.0 + (n as f32 / slices as f32) * (d - 1.0))
        };
        let mut smin = f32::INFINITY;
        let mut smax = f32::NEG_INFINITY;
        for i in 0..plane {
            let s = sigma[c * plane + i];
            if s < smin {
                smin = s;
            }
            if s > smax {
                smax = s;
            }
        }
        for i in 0..plane {
            let s = sigma[c * plane + i];
            let raw = match k {
                None => dmax - ((s - smin) * (dmax - dmin)) / ((smax - smin) + eps),
                Some(k) => {
                    let t = (s - smin) / ((smax - smin) + eps);
                    let g = 1.0 / (1.0 + libm::expf(k * (t - 0.5)));
                    dmin + g * (dmax - dmin)
                }
            };
            let mut v = (raw * 4096.0).round() / 4096.0;
            if v < 1.0 / 4096.0 {
                v = 1.0 / 4096.0;
            }
            if v < dmin {
                v = dmin;
            }
            if v > dmax {
                v = dmax;
            }
            out[c * plane + i] = v;
        }
    }
    out
}

/// `erfc` from the Maclaurin series of `erf` below 3 and a continued
/// fraction above.
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 3.0 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0f64;
        loop {
            n += 1.0;
            term *= -x * x / n;
            let add = term / (2.0 * n + 1.0);
            sum += add;
            if add.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        1.0 - sum * 2.0 / std::f64::consts::PI.sqrt()
    } else {
        // erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
        let mut f = x;
        for i in (1..200).rev() {
            f = x + (i as f64 / 2.0) / f;
        }
        (-x * x).exp() / (std::f64::consts::PI.sqrt() * f)
    }
}

pub fn upper_tail(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Cumulative counts for `-a..=a+1` of a zero-mean Gaussian with bins of
/// width `delta`: one count per symbol plus `floor(Phi * R)` of the rest,
/// evaluated in 100-bit fixed point.
pub fn cdf_counts(sigma: f64, delta: f64, a: i32) -> Vec<u32> {
    const FRAC: u32 = 100;
    let r = (1u128 << 16) - (2 * a as u128 + 1);
    let one = 1u128 << FRAC;
    let mut out = Vec::with_capacity(2 * a as usize + 2);
    out.push(0);
    for j in (-a + 1)..=a {
        let edge = (j as f64 - 0.5) * delta / sigma;
        let body = if edge < 0.0 {
            // floor(Q R), Q truncated
            let q = (upper_tail(-edge) * one as f64) as u128;
            (q * r) >> FRAC
        } else {
            // floor((1 - Q) R) = R - ceil(Q R), Q rounded up so that any
            // positive tail, however small, costs a count
            let t = upper_tail(edge);
            let q = ((t * one as f64).ceil() as u128).max(u128::from(t > 0.0));
            r - (q * r).div_ceil(one)
        };
        out.push((j + a) as u32 + body as u32);
    }
    out.push(1 << 16);
    out
}

/// Least-squares cubic through `(x, y)` by normal equations on centered,
/// scaled `x`. Returns `(coeffs, center, scale)`.
pub fn cubic_fit(x: &[f64], y: &[f64]) -> ([f64; 4], f64, f64) {
    let center = x.iter().sum::<f64>() / x.len() as f64;
    let scale = x.iter().map(|v| (v - center).abs()).fold(0.0, f64::max);
    let mut m = [[0.0f64; 5]; 4];
    for (&xi, &yi) in x.iter().zip(y) {
        let t = (xi - center) / scale;
        let pw = [1.0, t, t * t, t * t * t];
        for r in 0..4 {
            for c in 0..4 {
                m[r][c] += pw[r] * pw[c];
            }
            m[r][4] += pw[r] * yi;
        }
    }
    // Gauss-Jordan with partial pivoting
    for col in 0..4 {
        let piv = (col..4).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
        m.swap(col, piv);
        for r in 0..4 {
            if r != col {
                let f = m[r][col] / m[col][col];
                let pivot_row = m[col];
                for (dst, src) in m[r][col..].iter_mut().zip(&pivot_row[col..]) {
                    *dst -= f * src;
                }
            }
        }
    }
    let coeffs = [m[0][4] / m[0][0], m[1][4] / m[1][1], m[2][4] / m[2][2], m[3][4] / m[3][3]];
    (coeffs, center, scale)
}

fn eval(fit: &([f64; 4], f64, f64), q: f64) -> f64 {
    let t = (q - fit.1) / fit.2;
    fit.0[0] + t * (fit.0[1] + t * (fit.0[2] + t * fit.0[3]))
}

/// BD-rate in percent by trapezoid integration of both log-rate fits.
pub fn bd_rate(reference: &[(f64, f64)], test: &[(f64, f64)]) -> f64 {
    let range = |c: &[(f64, f64)]| {
        c.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)))
    };
    let (a_lo, a_hi) = range(reference);
    let (b_lo, b_hi) = range(test);
    let (lo, hi) = (a_lo.max(b_lo), a_hi.min(b_hi));
    let fit = |c: &[(f64, f64)]| {
        let q: Vec<f64> = c.iter().map(|p| p.1).collect();
        let lr: Vec<f64> = c.iter().map(|p| p.0.ln()).collect();
        cubic_fit(&q, &lr)
    };
    let (fa, fb) = (fit(reference), fit(test));
    let steps = 20_000;
    let h = (hi - lo) / steps as f64;
    let mut integral = 0.0;
    for i in 0..=steps {
        let q = lo + i as f64 * h;
        let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
        integral += w * (eval(&fb, q) - eval(&fa, q));
    }
    ((integral * h / (hi - lo)).exp() - 1.0) * 100.0
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f32], b: &[f32]) -> f64 {
    fn ranks(v: &[f32]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}
