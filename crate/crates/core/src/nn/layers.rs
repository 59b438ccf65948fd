//! Layer primitives on row-major slices, each with its backward pass.

use super::{gemm, NnError, Scalar};

fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

/// Same-padded 1-D convolution over `n` rows of width `d`.
///
/// `w` is `m × (h·d)` with row `j` holding filter `j` laid out offset-major;
/// the result is the `n × m` pre-activation. Rows outside `[0, n)` read as zero.
#[allow(clippy::too_many_arguments)]
pub fn conv1d<S: Scalar>(
    x: &[S],
    n: usize,
    d: usize,
    w: &[S],
    b: &[S],
    h: usize,
    m: usize,
) -> Result<Vec<S>, NnError> {
    if h.is_multiple_of(2) {
        return Err(NnError::Config(format!("window size {h} is even")));
    }
    if x.len() != n * d || w.len() != m * h * d || b.len() != m {
        return Err(NnError::Shape(format!(
            "conv1d: x {} (n={n}, d={d}), w {} (m={m}, h={h}), b {}",
            x.len(),
            w.len(),
            b.len()
        )));
    }
    let mut out = vec![S::zero(); n * m];
    for t in 0..n {
        out[t * m..(t + 1) * m].copy_from_slice(b);
    }
    for_each_shift(n, h, |o, t0, src, rows| {
        gemm(
            rows,
            d,
            m,
            S::one(),
            &x[src * d..],
            (d, 1),
            &w[o * d..],
            (1, h * d),
            S::one(),
            &mut out[t0 * m..],
            (m, 1),
        );
    });
    Ok(out)
}

/// Calls `f(offset, first output row, first source row, rows)` for each kernel tap.
fn for_each_shift(n: usize, h: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
    let p = (h / 2) as isize;
    for o in 0..h {
        let s = o as isize - p;
        let t0 = (-s).max(0);
        let t1 = (n as isize).min(n as isize - s);
        if t0 < t1 {
            f(o, t0 as usize, (t0 + s) as usize, (t1 - t0) as usize);
        }
    }
}

/// Accumulates filter, bias and (optionally) input gradients of [`conv1d`]
/// given the gradient `dz` of its pre-activation.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward<S: Scalar>(
    x: &[S],
    n: usize,
    d: usize,
    w: &[S],
    h: usize,
    m: usize,
    dz: &[S],
    dw: &mut [S],
    db: &mut [S],
    mut dx: Option<&mut [S]>,
) {
    for t in 0..n {
        for (g, &v) in db.iter_mut().zip(&dz[t * m..(t + 1) * m]) {
            *g += v;
        }
    }
    for_each_shift(n, h, |o, t0, src, rows| {
        gemm(
            m,
            rows,
            d,
            S::one(),
            &dz[t0 * m..],
            (1, m),
            &x[src * d..],
            (d, 1),
            S::one(),
            &mut dw[o * d..],
            (h * d, 1),
        );
        if let Some(dx) = dx.as_deref_mut() {
            gemm(
                rows,
                m,
                d,
                S::one(),
                &dz[t0 * m..],
                (m, 1),
                &w[o * d..],
                (h * d, 1),
                S::one(),
                &mut dx[src * d..],
                (d, 1),
            );
        }
    });
}

pub fn relu_in_place<S: Scalar>(x: &mut [S]) {
    for v in x {
        if *v < S::zero() {
            *v = S::zero();
        }
    }
}

/// Column-wise max over rows `[start, start + len)` of an `_ × m` map.
/// Ties go to the earliest row. Returns values and absolute argmax rows.
pub fn max_pool<S: Scalar>(a: &[S], m: usize, start: usize, len: usize) -> (Vec<S>, Vec<usize>) {
    let mut best = vec![S::neg_infinity(); m];
    let mut arg = vec![start; m];
    for t in start..start + len {
        for (j, &v) in a[t * m..(t + 1) * m].iter().enumerate() {
            if v > best[j] {
                best[j] = v;
                arg[j] = t;
            }
        }
    }
    if len == 0 {
        best.iter_mut().for_each(|b| *b = S::zero());
    }
    (best, arg)
}

/// Per-sequence cache of a unidirectional LSTM pass. Rows are indexed by
/// sequence position regardless of direction.
#[derive(Debug, Clone)]
pub struct LstmCache<S> {
    pub n: usize,
    pub hidden: usize,
    pub reverse: bool,
    pub h: Vec<S>,
    pub c: Vec<S>,
    /// Activated gates i, f, g, o per position (`n × 4H`).
    pub gates: Vec<S>,
}

impl<S: Scalar> LstmCache<S> {
    fn order(&self) -> Vec<usize> {
        if self.reverse {
            (0..self.n).rev().collect()
        } else {
            (0..self.n).collect()
        }
    }

    /// Hidden state after the last processed step.
    pub fn last(&self) -> &[S] {
        let hh = self.hidden;
        let t = if self.reverse { 0 } else { self.n - 1 };
        &self.h[t * hh..(t + 1) * hh]
    }
}

/// One LSTM step given the precomputed input projection `xw = W·x` (length 4H).
/// Gate order is i, f, g, o. Returns the activated gates.
pub fn lstm_step<S: Scalar>(
    xw: &[S],
    h_prev: &[S],
    c_prev: &[S],
    u: &[S],
    b: &[S],
    h_out: &mut [S],
    c_out: &mut [S],
) -> Vec<S> {
    let hh = h_prev.len();
    let mut z: Vec<S> = xw.iter().zip(b).map(|(&a, &c)| a + c).collect();
    // z += U·h_prev, U is 4H × H.
    gemm(1, hh, 4 * hh, S::one(), h_prev, (hh, 1), u, (1, hh), S::one(), &mut z, (4 * hh, 1));
    for k in 0..hh {
        let i = sigmoid(z[k]);
        let f = sigmoid(z[hh + k]);
        let g = z[2 * hh + k].tanh();
        let o = sigmoid(z[3 * hh + k]);
        let c = f * c_prev[k] + i * g;
        c_out[k] = c;
        h_out[k] = o * c.tanh();
        z[k] = i;
        z[hh + k] = f;
        z[2 * hh + k] = g;
        z[3 * hh + k] = o;
    }
    z
}

/// Runs an LSTM over `n` rows of width `input`. `w` is `4H × input`,
/// `u` is `4H × H`, `b` has length 4H.
#[allow(clippy::too_many_arguments)]
pub fn lstm_forward<S: Scalar>(
    x: &[S],
    n: usize,
    input: usize,
    w: &[S],
    u: &[S],
    b: &[S],
    hidden: usize,
    reverse: bool,
) -> LstmCache<S> {
    let g4 = 4 * hidden;
    let mut xw = vec![S::zero(); n * g4];
    gemm(n, input, g4, S::one(), x, (input, 1), w, (1, input), S::zero(), &mut xw, (g4, 1));
    let mut cache = LstmCache {
        n,
        hidden,
        reverse,
        h: vec![S::zero(); n * hidden],
        c: vec![S::zero(); n * hidden],
        gates: vec![S::zero(); n * g4],
    };
    let zero = vec![S::zero(); hidden];
    let mut prev: Option<usize> = None;
    for t in cache.order() {
        let (hp, cp) = match prev {
            Some(p) => (
                cache.h[p * hidden..(p + 1) * hidden].to_vec(),
                cache.c[p * hidden..(p + 1) * hidden].to_vec(),
            ),
            None => (zero.clone(), zero.clone()),
        };
        let mut ho = vec![S::zero(); hidden];
        let mut co = vec![S::zero(); hidden];
        let gates = lstm_step(&xw[t * g4..(t + 1) * g4], &hp, &cp, u, b, &mut ho, &mut co);
        cache.h[t * hidden..(t + 1) * hidden].copy_from_slice(&ho);
        cache.c[t * hidden..(t + 1) * hidden].copy_from_slice(&co);
        cache.gates[t * g4..(t + 1) * g4].copy_from_slice(&gates);
        prev = Some(t);
    }
    cache
}

/// Backpropagation through time. `dh` is the external gradient on every
/// hidden state (`n × H`).
#[allow(clippy::too_many_arguments)]
pub fn lstm_backward<S: Scalar>(
    cache: &LstmCache<S>,
    x: &[S],
    input: usize,
    w: &[S],
    u: &[S],
    dh: &[S],
    dw: &mut [S],
    du: &mut [S],
    db: &mut [S],
    dx: Option<&mut [S]>,
) {
    let hh = cache.hidden;
    let g4 = 4 * hh;
    let n = cache.n;
    let order = cache.order();
    let mut dz_all = vec![S::zero(); n * g4];
    // Hidden state fed into each position (zero for the first processed step).
    let mut h_prev_all = vec![S::zero(); n * hh];
    for s in 1..n {
        let (t, p) = (order[s], order[s - 1]);
        h_prev_all[t * hh..(t + 1) * hh].copy_from_slice(&cache.h[p * hh..(p + 1) * hh]);
    }
    let mut dh_next = vec![S::zero(); hh];
    let mut dc_next = vec![S::zero(); hh];
    let one = S::one();
    for s in (0..n).rev() {
        let t = order[s];
        let prev = if s > 0 { Some(order[s - 1]) } else { None };
        let gates = &cache.gates[t * g4..(t + 1) * g4];
        let dz = &mut dz_all[t * g4..(t + 1) * g4];
        for k in 0..hh {
            let (i, f, g, o) = (gates[k], gates[hh + k], gates[2 * hh + k], gates[3 * hh + k]);
            let c = cache.c[t * hh + k];
            let c_prev = prev.map_or(S::zero(), |p| cache.c[p * hh + k]);
            let tc = c.tanh();
            let dhk = dh[t * hh + k] + dh_next[k];
            let d_o = dhk * tc;
            let dc = dc_next[k] + dhk * o * (one - tc * tc);
            dz[k] = dc * g * i * (one - i);
            dz[hh + k] = dc * c_prev * f * (one - f);
            dz[2 * hh + k] = dc * i * (one - g * g);
            dz[3 * hh + k] = d_o * o * (one - o);
            dc_next[k] = dc * f;
        }
        // dh_prev = Uᵀ·dz
        gemm(1, g4, hh, one, dz, (g4, 1), u, (hh, 1), S::zero(), &mut dh_next, (hh, 1));
    }
    for t in 0..n {
        for (acc, &v) in db.iter_mut().zip(&dz_all[t * g4..(t + 1) * g4]) {
            *acc += v;
        }
    }
    gemm(g4, n, hh, one, &dz_all, (1, g4), &h_prev_all, (hh, 1), one, du, (hh, 1));
    gemm(g4, n, input, one, &dz_all, (1, g4), x, (input, 1), one, dw, (input, 1));
    if let Some(dx) = dx {
        gemm(n, g4, input, one, &dz_all, (g4, 1), w, (input, 1), one, dx, (input, 1));
    }
}

/// Additive attention pooling over `n × k` states: `u = tanh(W·h + b)`,
/// `α = softmax(u·q)`, output `Σ α_t h_t`.
#[derive(Debug, Clone)]
pub struct AttentionCache<S> {
    pub u: Vec<S>,
    pub alpha: Vec<S>,
}

#[allow(clippy::too_many_arguments)]
pub fn attention_forward<S: Scalar>(
    hs: &[S],
    n: usize,
    k: usize,
    w: &[S],
    b: &[S],
    q: &[S],
    a: usize,
) -> (Vec<S>, AttentionCache<S>) {
    let mut u = vec![S::zero(); n * a];
    for t in 0..n {
        u[t * a..(t + 1) * a].copy_from_slice(b);
    }
    gemm(n, k, a, S::one(), hs, (k, 1), w, (1, k), S::one(), &mut u, (a, 1));
    u.iter_mut().for_each(|v| *v = v.tanh());
    let scores: Vec<S> = (0..n)
        .map(|t| u[t * a..(t + 1) * a].iter().zip(q).map(|(&x, &y)| x * y).sum())
        .collect();
    let alpha = softmax(&scores);
    let mut out = vec![S::zero(); k];
    for t in 0..n {
        for (o, &h) in out.iter_mut().zip(&hs[t * k..(t + 1) * k]) {
            *o += alpha[t] * h;
        }
    }
    (out, AttentionCache { u, alpha })
}

#[allow(clippy::too_many_arguments)]
pub fn attention_backward<S: Scalar>(
    cache: &AttentionCache<S>,
    hs: &[S],
    n: usize,
    k: usize,
    w: &[S],
    q: &[S],
    a: usize,
    dout: &[S],
    dw: &mut [S],
    db: &mut [S],
    dq: &mut [S],
    dhs: &mut [S],
) {
    let alpha = &cache.alpha;
    let dalpha: Vec<S> = (0..n)
        .map(|t| hs[t * k..(t + 1) * k].iter().zip(dout).map(|(&h, &g)| h * g).sum())
        .collect();
    let dot: S = alpha.iter().zip(&dalpha).map(|(&x, &y)| x * y).sum();
    let mut dzu = vec![S::zero(); n * a];
    for t in 0..n {
        for (dh, &g) in dhs[t * k..(t + 1) * k].iter_mut().zip(dout) {
            *dh += alpha[t] * g;
        }
        let ds = alpha[t] * (dalpha[t] - dot);
        let ut = &cache.u[t * a..(t + 1) * a];
        for j in 0..a {
            dq[j] += ds * ut[j];
            dzu[t * a + j] = ds * q[j] * (S::one() - ut[j] * ut[j]);
            db[j] += dzu[t * a + j];
        }
    }
    gemm(a, n, k, S::one(), &dzu, (1, a), hs, (k, 1), S::one(), dw, (k, 1));
    gemm(n, a, k, S::one(), &dzu, (a, 1), w, (k, 1), S::one(), dhs, (k, 1));
}

/// y (B × out) = x (B × in) · Wᵀ + b, with `w` stored `out × in`.
pub fn dense<S: Scalar>(x: &[S], rows: usize, input: usize, w: &[S], b: &[S], out: usize) -> Vec<S> {
    let mut y = vec![S::zero(); rows * out];
    for r in 0..rows {
        y[r * out..(r + 1) * out].copy_from_slice(b);
    }
    gemm(rows, input, out, S::one(), x, (input, 1), w, (1, input), S::one(), &mut y, (out, 1));
    y
}

#[allow(clippy::too_many_arguments)]
pub fn dense_backward<S: Scalar>(
    x: &[S],
    rows: usize,
    input: usize,
    w: &[S],
    out: usize,
    dy: &[S],
    dw: &mut [S],
    db: &mut [S],
    dx: Option<&mut [S]>,
) {
    for r in 0..rows {
        for (g, &v) in db.iter_mut().zip(&dy[r * out..(r + 1) * out]) {
            *g += v;
        }
    }
    gemm(out, rows, input, S::one(), dy, (1, out), x, (input, 1), S::one(), dw, (input, 1));
    if let Some(dx) = dx {
        gemm(rows, out, input, S::one(), dy, (out, 1), w, (input, 1), S::one(), dx, (input, 1));
    }
}

/// Numerically stable softmax.
pub fn softmax<S: Scalar>(z: &[S]) -> Vec<S> {
    let max = z.iter().copied().fold(S::neg_infinity(), S::max);
    let e: Vec<S> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: S = e.iter().copied().sum();
    e.into_iter().map(|v| v / sum).collect()
}

/// Mean cross-entropy of row-wise probabilities, with probabilities clamped
/// at 1e-12 before the log.
pub fn cross_entropy<S: Scalar>(probs: &[S], classes: usize, labels: &[usize]) -> S {
    if labels.is_empty() {
        return S::zero();
    }
    let floor = S::lit(1e-12);
    let total: S = labels
        .iter()
        .enumerate()
        .map(|(r, &y)| -probs[r * classes + y].max(floor).ln())
        .sum();
    total / S::lit(labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn conv_identity_window_one() {
        // N=2, d=2, h=1, one filter [1, 2].
        let out = conv1d::<f64>(&[1.0, 0.0, 0.0, 1.0], 2, 2, &[1.0, 2.0], &[0.0], 1, 1).unwrap();
        assert_eq!(out, vec![1.0, 2.0]);
    }

    #[test]
    fn conv_window_three_zero_pads() {
        // d=1, filter taps [1, 10, 100] over x = [1, 2, 3].
        let out = conv1d::<f64>(&[1.0, 2.0, 3.0], 3, 1, &[1.0, 10.0, 100.0], &[0.5], 3, 1).unwrap();
        assert_eq!(out, vec![10.0 + 200.0 + 0.5, 1.0 + 20.0 + 300.0 + 0.5, 2.0 + 30.0 + 0.5]);
    }

    #[test]
    fn conv_rejects_even_windows_and_bad_shapes() {
        assert!(matches!(
            conv1d::<f64>(&[1.0], 1, 1, &[1.0, 1.0], &[0.0], 2, 1),
            Err(NnError::Config(_))
        ));
        assert!(matches!(
            conv1d::<f64>(&[1.0], 1, 1, &[1.0], &[0.0, 0.0], 1, 1),
            Err(NnError::Shape(_))
        ));
    }

    #[test]
    fn pooling_takes_first_maximum() {
        let a = [1.0, 5.0, 3.0, 5.0, 3.0, 0.0];
        let (v, arg) = max_pool::<f64>(&a, 2, 0, 3);
        assert_eq!(v, vec![3.0, 5.0]);
        assert_eq!(arg, vec![1, 0]);
        let (v, _) = max_pool::<f64>(&a, 2, 1, 0);
        assert_eq!(v, vec![0.0, 0.0]);
    }

    #[test]
    fn softmax_and_cross_entropy_values() {
        let p = softmax(&[1.0f64, 2.0]);
        assert!(close(p[0], 0.268_941_421, 1e-8));
        assert!(close(p[1], 0.731_058_579, 1e-8));
        let p = softmax(&[1000.0f64, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        assert!(close(cross_entropy(&[0.5f64, 0.5], 2, &[0]), std::f64::consts::LN_2, 1e-12));
        let ce = cross_entropy(&[0.0f64, 1.0], 2, &[0]);
        assert!(close(ce, -(1e-12f64).ln(), 1e-9));
    }

    #[test]
    fn lstm_step_zero_weights() {
        // All weights zero: i = f = o = 0.5, g = 0, so c = 0.5·c_prev.
        let hh = 2;
        let z = vec![0.0f64; 4 * hh];
        let u = vec![0.0f64; 4 * hh * hh];
        let (mut h, mut c) = (vec![0.0; hh], vec![0.0; hh]);
        lstm_step(&z, &[0.3, -0.3], &[1.0, -2.0], &u, &z, &mut h, &mut c);
        assert_eq!(c, vec![0.5, -1.0]);
        assert!(close(h[0], 0.5 * 0.5f64.tanh(), 1e-12));
        assert!(close(h[1], 0.5 * (-1.0f64).tanh(), 1e-12));
    }

    #[test]
    fn attention_with_zero_query_is_uniform() {
        let hs = [1.0f64, 2.0, 3.0, 4.0];
        let (out, cache) = attention_forward(&hs, 2, 2, &[0.1; 4], &[0.0; 2], &[0.0; 2], 2);
        assert_eq!(cache.alpha, vec![0.5, 0.5]);
        assert_eq!(out, vec![2.0, 3.0]);
    }

    fn numeric<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
        let eps = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i] += eps;
                b[i] -= eps;
                (f(&a) - f(&b)) / (2.0 * eps)
            })
            .collect()
    }

    fn assert_grad(analytic: &[f64], numeric: &[f64]) {
        for (a, n) in analytic.iter().zip(numeric) {
            assert!((a - n).abs() <= 1e-6 * a.abs().max(n.abs()).max(1.0), "{a} vs {n}");
        }
    }

    fn seq(len: usize, k: f64) -> Vec<f64> {
        (0..len).map(|i| ((i as f64 + 1.0) * k).sin() * 0.5).collect()
    }

    #[test]
    fn conv_gradients_match_differences() {
        let (n, d, h, m) = (4, 3, 3, 2);
        let x = seq(n * d, 0.7);
        let w = seq(m * h * d, 1.3);
        let b = seq(m, 2.1);
        let r = seq(n * m, 0.4);
        let loss = |x: &[f64], w: &[f64], b: &[f64]| -> f64 {
            conv1d(x, n, d, w, b, h, m).unwrap().iter().zip(&r).map(|(a, c)| a * c).sum()
        };
        let (mut dw, mut db, mut dx) = (vec![0.0; w.len()], vec![0.0; m], vec![0.0; x.len()]);
        conv1d_backward(&x, n, d, &w, h, m, &r, &mut dw, &mut db, Some(&mut dx));
        assert_grad(&dw, &numeric(|w| loss(&x, w, &b), &w));
        assert_grad(&db, &numeric(|b| loss(&x, &w, b), &b));
        assert_grad(&dx, &numeric(|x| loss(x, &w, &b), &x));
    }

    #[test]
    fn lstm_gradients_match_differences() {
        for reverse in [false, true] {
            let (n, inp, hh) = (3, 2, 2);
            let x = seq(n * inp, 0.9);
            let w = seq(4 * hh * inp, 1.7);
            let u = seq(4 * hh * hh, 0.3);
            let b = seq(4 * hh, 2.9);
            let r = seq(n * hh, 1.1);
            let loss = |x: &[f64], w: &[f64], u: &[f64], b: &[f64]| -> f64 {
                let c = lstm_forward(x, n, inp, w, u, b, hh, reverse);
                c.h.iter().zip(&r).map(|(a, c)| a * c).sum()
            };
            let cache = lstm_forward(&x, n, inp, &w, &u, &b, hh, reverse);
            let mut dw = vec![0.0; w.len()];
            let mut du = vec![0.0; u.len()];
            let mut db = vec![0.0; b.len()];
            let mut dx = vec![0.0; x.len()];
            lstm_backward(&cache, &x, inp, &w, &u, &r, &mut dw, &mut du, &mut db, Some(&mut dx));
            assert_grad(&dw, &numeric(|w| loss(&x, w, &u, &b), &w));
            assert_grad(&du, &numeric(|u| loss(&x, &w, u, &b), &u));
            assert_grad(&db, &numeric(|b| loss(&x, &w, &u, b), &b));
            assert_grad(&dx, &numeric(|x| loss(x, &w, &u, &b), &x));
        }
    }

    #[test]
    fn attention_gradients_match_differences() {
        let (n, k, a) = (3, 2, 2);
        let hs = seq(n * k, 0.8);
        let w = seq(a * k, 1.9);
        let b = seq(a, 0.6);
        let q = seq(a, 2.3);
        let r = seq(k, 1.4);
        let loss = |hs: &[f64], w: &[f64], b: &[f64], q: &[f64]| -> f64 {
            let (o, _) = attention_forward(hs, n, k, w, b, q, a);
            o.iter().zip(&r).map(|(x, y)| x * y).sum()
        };
        let (_, cache) = attention_forward(&hs, n, k, &w, &b, &q, a);
        let (mut dw, mut db, mut dq, mut dh) =
            (vec![0.0; w.len()], vec![0.0; a], vec![0.0; a], vec![0.0; hs.len()]);
        attention_backward(&cache, &hs, n, k, &w, &q, a, &r, &mut dw, &mut db, &mut dq, &mut dh);
        assert_grad(&dw, &numeric(|w| loss(&hs, w, &b, &q), &w));
        assert_grad(&db, &numeric(|b| loss(&hs, &w, b, &q), &b));
        assert_grad(&dq, &numeric(|q| loss(&hs, &w, &b, q), &q));
        assert_grad(&dh, &numeric(|h| loss(h, &w, &b, &q), &hs));
    }

    #[test]
    fn dense_gradients_match_differences() {
        let (rows, inp, out) = (2, 3, 2);
        let x = seq(rows * inp, 0.5);
        let w = seq(out * inp, 1.5);
        let b = seq(out, 2.5);
        let r = seq(rows * out, 3.5);
        let loss = |x: &[f64], w: &[f64]| -> f64 {
            dense(x, rows, inp, w, &b, out).iter().zip(&r).map(|(a, c)| a * c).sum()
        };
        let (mut dw, mut db, mut dx) = (vec![0.0; w.len()], vec![0.0; out], vec![0.0; x.len()]);
        dense_backward(&x, rows, inp, &w, out, &r, &mut dw, &mut db, Some(&mut dx));
        assert_grad(&dw, &numeric(|w| loss(&x, w), &w));
        assert_grad(&dx, &numeric(|x| loss(x, &w), &x));
        assert_eq!(db, vec![r[0] + r[2], r[1] + r[3]]);
    }
}
