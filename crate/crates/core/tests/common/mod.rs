//! Straight-line reference implementations over plain row vectors.
#![allow(dead_code)]

use rvos_core::ParamStore;

pub type Rows = Vec<Vec<f64>>;

pub fn get<'a>(p: &'a ParamStore<f64>, name: &str) -> (&'a [f64], Vec<usize>) {
    let t = p.by_name(name).unwrap_or_else(|| panic!("missing {name}"));
    (t.data(), t.shape().to_vec())
}

pub fn linear(x: &Rows, p: &ParamStore<f64>, prefix: &str) -> Rows {
    let (w, s) = get(p, &format!("{prefix}.w"));
    let b = p.by_name(&format!("{prefix}.b")).map(|t| t.data().to_vec());
    let (din, dout) = (s[0], s[1]);
    x.iter()
        .map(|row| {
            assert_eq!(row.len(), din);
            (0..dout)
                .map(|o| {
                    let mut acc = b.as_ref().map_or(0.0, |b| b[o]);
                    for i in 0..din {
                        acc += row[i] * w[i * dout + o];
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

pub fn relu(x: &Rows) -> Rows {
    x.iter().map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect()
}

pub fn add(a: &Rows, b: &Rows) -> Rows {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect()).collect()
}

pub fn mlp(x: &Rows, p: &ParamStore<f64>, prefix: &str, layers: usize) -> Rows {
    let mut h = x.clone();
    for l in 0..layers {
        h = linear(&h, p, &format!("{prefix}.l{l}"));
        if l + 1 < layers {
            h = relu(&h);
        }
    }
    h
}

pub fn layer_norm(x: &Rows, p: &ParamStore<f64>, prefix: &str, eps: f64) -> Rows {
    let (gamma, _) = get(p, &format!("{prefix}.gamma"));
    let (beta, _) = get(p, &format!("{prefix}.beta"));
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let m = r.iter().sum::<f64>() / n;
            let v = r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            r.iter().enumerate().map(|(i, x)| (x - m) / (v + eps).sqrt() * gamma[i] + beta[i]).collect()
        })
        .collect()
}

/// Multi-head attention with heads over contiguous channel chunks.
pub fn attention(query: &Rows, key: &Rows, value: &Rows, p: &ParamStore<f64>, prefix: &str, heads: usize) -> Rows {
    let q = linear(query, p, &format!("{prefix}.q"));
    let k = linear(key, p, &format!("{prefix}.k"));
    let v = linear(value, p, &format!("{prefix}.v"));
    let width = q[0].len();
    let d = width / heads;
    let mut out = vec![vec![0.0; width]; q.len()];
    for h in 0..heads {
        let r = h * d..(h + 1) * d;
        for (i, qi) in q.iter().enumerate() {
            let scores: Vec<f64> = k.iter().map(|kj| qi[r.clone()].iter().zip(&kj[r.clone()]).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt()).collect();
            let m = scores.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for (j, vj) in v.iter().enumerate() {
                for c in r.clone() {
                    out[i][c] += e[j] / z * vj[c];
                }
            }
        }
    }
    if p.by_name(&format!("{prefix}.o.w")).is_some() {
        out = linear(&out, p, &format!("{prefix}.o"));
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn sinusoid(pos: f64, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|c| {
            let f = 1.0 / 10000f64.powf((2 * (c / 2)) as f64 / dim as f64);
            if c % 2 == 0 {
                (pos * f).sin()
            } else {
                (pos * f).cos()
            }
        })
        .collect()
}

pub fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

pub fn flat(r: &Rows) -> Vec<f64> {
    r.iter().flatten().copied().collect()
}
