//! Parameter layout and batched forward/backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{
    attention_backward, attention_forward, conv1d, conv1d_backward, cross_entropy, dense,
    dense_backward, lstm_backward, lstm_forward, max_pool, relu_in_place, softmax,
    AttentionCache, LstmCache,
};
use super::{Fusion, Mat, ModelConfig, NnError, Scalar, Tensor};

const INIT_RANGE: f64 = 0.1;
const SECOND_WINDOW: usize = 3;

/// One encoded input: a token-embedding matrix per backbone slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<S> {
    pub segments: Vec<Mat<S>>,
    pub label: usize,
}

impl<S: Scalar> Sample<S> {
    pub fn cast<T: Scalar>(&self) -> Sample<T> {
        Sample {
            segments: self.segments.iter().map(Mat::cast).collect(),
            label: self.label,
        }
    }
}

#[derive(Debug, Clone)]
struct Conv {
    w: usize,
    b: usize,
    h: usize,
}

#[derive(Debug, Clone)]
struct LstmDir {
    w: usize,
    u: usize,
    b: usize,
    input: usize,
}

#[derive(Debug, Clone)]
struct Attn {
    w: usize,
    b: usize,
    q: usize,
    input: usize,
    dim: usize,
}

#[derive(Debug, Clone)]
struct Dense {
    w: usize,
    b: usize,
    input: usize,
    out: usize,
}

#[derive(Debug, Clone)]
enum Encoder {
    Cnn {
        first: Vec<Conv>,
        /// Second conv per branch (cnn2 only).
        second: Vec<Conv>,
    },
    Lstm {
        layers: Vec<[LstmDir; 2]>,
        attn: Option<Attn>,
    },
}

/// A classifier for one target kind. Parameters are plain named tensors so
/// that optimizers and checkpoints can treat them uniformly.
#[derive(Debug, Clone)]
pub struct Model<S> {
    pub config: ModelConfig,
    pub params: Vec<Tensor<S>>,
    encoders: Vec<Encoder>,
    fuse: Option<Dense>,
    classifier: Dense,
}

struct Builder<S> {
    params: Vec<Tensor<S>>,
}

impl<S: Scalar> Builder<S> {
    fn add(&mut self, name: String, shape: &[usize]) -> usize {
        self.params.push(Tensor::zeros(&name, shape));
        self.params.len() - 1
    }

    fn conv(&mut self, prefix: &str, h: usize, input: usize, out: usize) -> Conv {
        Conv {
            w: self.add(format!("{prefix}.w"), &[out, h * input]),
            b: self.add(format!("{prefix}.b"), &[out]),
            h,
        }
    }

    fn lstm(&mut self, prefix: &str, input: usize, hidden: usize) -> LstmDir {
        LstmDir {
            w: self.add(format!("{prefix}.w"), &[4 * hidden, input]),
            u: self.add(format!("{prefix}.u"), &[4 * hidden, hidden]),
            b: self.add(format!("{prefix}.b"), &[4 * hidden]),
            input,
        }
    }

    fn dense(&mut self, prefix: &str, input: usize, out: usize) -> Dense {
        Dense {
            w: self.add(format!("{prefix}.w"), &[out, input]),
            b: self.add(format!("{prefix}.b"), &[out]),
            input,
            out,
        }
    }
}

/// Cached activations of one batch.
pub struct Forward<S> {
    pub probs: Vec<S>,
    pub rows: usize,
    enc: Vec<EncCache<S>>,
    fused_in: Vec<S>,
    top: Vec<S>,
}

enum EncCache<S> {
    Cnn {
        packed: Vec<S>,
        rows: usize,
        segs: Vec<(usize, usize)>,
        first: Vec<Vec<S>>,
        second: Vec<Vec<S>>,
        /// Pool argmax per branch, per batch row.
        args: Vec<Vec<Vec<usize>>>,
    },
    Lstm(Vec<Option<LstmSample<S>>>),
}

struct LstmSample<S> {
    n: usize,
    /// Input of each layer (layer 0 is the embedding matrix).
    inputs: Vec<Vec<S>>,
    dirs: Vec<[LstmCache<S>; 2]>,
    top: Vec<S>,
    attn: Option<AttentionCache<S>>,
}

fn take<S: Scalar>(grads: &mut [Vec<S>], i: usize) -> Vec<S> {
    std::mem::take(&mut grads[i])
}

impl<S: Scalar> Model<S> {
    /// Builds and initializes a model. Weights are uniform in ±0.1, biases
    /// zero except LSTM forget gates at 1.
    pub fn new(config: ModelConfig) -> Result<Self, NnError> {
        config.validate()?;
        let mut bld = Builder { params: Vec::new() };
        let d = config.embed_dim;
        let f = config.feature_dim();
        let mut encoders = Vec::new();
        for slot in 0..config.slots() {
            let p = if config.fusion == Fusion::Early {
                "enc".to_string()
            } else {
                format!("slot{slot}")
            };
            let enc = if config.backbone.is_cnn() {
                let m = config.filters;
                let first = config
                    .window_sizes
                    .iter()
                    .enumerate()
                    .map(|(j, &h)| bld.conv(&format!("{p}.conv{j}"), h, d, m))
                    .collect();
                let second = if config.backbone == super::Backbone::Cnn2 {
                    (0..config.window_sizes.len())
                        .map(|j| bld.conv(&format!("{p}.conv{j}b"), SECOND_WINDOW, m, m))
                        .collect()
                } else {
                    Vec::new()
                };
                Encoder::Cnn { first, second }
            } else {
                let hh = config.lstm_cells;
                let layers = (0..config.backbone.lstm_layers())
                    .map(|l| {
                        let input = if l == 0 { d } else { 2 * hh };
                        [
                            bld.lstm(&format!("{p}.lstm{l}.fwd"), input, hh),
                            bld.lstm(&format!("{p}.lstm{l}.bwd"), input, hh),
                        ]
                    })
                    .collect();
                let attn = config.backbone.has_attention().then(|| Attn {
                    w: bld.add(format!("{p}.attn.w"), &[2 * hh, 2 * hh]),
                    b: bld.add(format!("{p}.attn.b"), &[2 * hh]),
                    q: bld.add(format!("{p}.attn.q"), &[2 * hh]),
                    input: 2 * hh,
                    dim: 2 * hh,
                });
                Encoder::Lstm { layers, attn }
            };
            encoders.push(enc);
        }
        let fuse = (config.fusion == Fusion::Late)
            .then(|| bld.dense("fuse", f * config.slots(), f));
        let classifier = bld.dense("classifier", f, config.num_classes);

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let r = INIT_RANGE;
        for t in &mut bld.params {
            let is_bias = t.name.ends_with(".b");
            if !is_bias {
                for v in &mut t.data {
                    *v = S::lit(rng.gen_range(-r..r));
                }
            } else if t.name.contains(".lstm") {
                let hh = t.len() / 4;
                for v in &mut t.data[hh..2 * hh] {
                    *v = S::one();
                }
            }
        }
        Ok(Self {
            config,
            params: bld.params,
            encoders,
            fuse,
            classifier,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&self) -> Vec<Vec<S>> {
        self.params.iter().map(|t| vec![S::zero(); t.len()]).collect()
    }

    fn p(&self, i: usize) -> &[S] {
        &self.params[i].data
    }

    fn check_batch(&self, batch: &[&Sample<S>]) -> Result<(), NnError> {
        for s in batch {
            if s.segments.len() != self.encoders.len() {
                return Err(NnError::Shape(format!(
                    "sample has {} segments, model expects {}",
                    s.segments.len(),
                    self.encoders.len()
                )));
            }
            if let Some(m) = s
                .segments
                .iter()
                .find(|m| m.rows > 0 && m.cols != self.config.embed_dim)
            {
                return Err(NnError::Shape(format!(
                    "segment width {} != embedding dim {}",
                    m.cols, self.config.embed_dim
                )));
            }
            if s.label >= self.config.num_classes {
                return Err(NnError::Shape(format!("label {} out of range", s.label)));
            }
        }
        Ok(())
    }

    /// Runs the network on a batch and keeps what backward needs.
    pub fn forward(&self, batch: &[&Sample<S>]) -> Result<Forward<S>, NnError> {
        self.check_batch(batch)?;
        let rows = batch.len();
        let f = self.config.feature_dim();
        let mut feats = Vec::new();
        let mut enc = Vec::new();
        for (slot, e) in self.encoders.iter().enumerate() {
            let inputs: Vec<&Mat<S>> = batch.iter().map(|s| &s.segments[slot]).collect();
            let (x, c) = match e {
                Encoder::Cnn { first, second } => self.cnn_forward(first, second, &inputs)?,
                Encoder::Lstm { layers, attn } => self.lstm_forward(layers, attn.as_ref(), &inputs),
            };
            feats.push(x);
            enc.push(c);
        }
        let (fused_in, top) = match &self.fuse {
            None => (Vec::new(), feats.pop().expect("one slot")),
            Some(l) => {
                let mut cat = Vec::with_capacity(rows * l.input);
                for r in 0..rows {
                    for x in &feats {
                        cat.extend_from_slice(&x[r * f..(r + 1) * f]);
                    }
                }
                let mut z = dense(&cat, rows, l.input, self.p(l.w), self.p(l.b), l.out);
                relu_in_place(&mut z);
                (cat, z)
            }
        };
        let c = &self.classifier;
        let logits = dense(&top, rows, c.input, self.p(c.w), self.p(c.b), c.out);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("logits".into()));
        }
        let mut probs = Vec::with_capacity(logits.len());
        for r in 0..rows {
            probs.extend(softmax(&logits[r * c.out..(r + 1) * c.out]));
        }
        Ok(Forward {
            probs,
            rows,
            enc,
            fused_in,
            top,
        })
    }

    /// Mean cross-entropy of a batch.
    pub fn loss(&self, batch: &[&Sample<S>]) -> Result<S, NnError> {
        let fw = self.forward(batch)?;
        let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
        Ok(cross_entropy(&fw.probs, self.config.num_classes, &labels))
    }

    /// Mean cross-entropy and its gradient for every parameter.
    pub fn loss_and_grad(&self, batch: &[&Sample<S>]) -> Result<(S, Vec<Vec<S>>), NnError> {
        let fw = self.forward(batch)?;
        let m = self.config.num_classes;
        let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
        let loss = cross_entropy(&fw.probs, m, &labels);
        let mut grads = self.zero_grads();
        if batch.is_empty() {
            return Ok((loss, grads));
        }
        let scale = S::one() / S::lit(batch.len() as f64);
        let mut dlogits = fw.probs.clone();
        for (r, &y) in labels.iter().enumerate() {
            dlogits[r * m + y] -= S::one();
        }
        dlogits.iter_mut().for_each(|v| *v *= scale);
        self.backward(&fw, &dlogits, &mut grads);
        Ok((loss, grads))
    }

    /// Accumulates parameter gradients given the logit gradient.
    pub fn backward(&self, fw: &Forward<S>, dlogits: &[S], grads: &mut [Vec<S>]) {
        let rows = fw.rows;
        let f = self.config.feature_dim();
        let c = &self.classifier;
        let mut dtop = vec![S::zero(); rows * c.input];
        {
            let (mut dw, mut db) = (take(grads, c.w), take(grads, c.b));
            dense_backward(&fw.top, rows, c.input, self.p(c.w), c.out, dlogits, &mut dw, &mut db, Some(&mut dtop));
            grads[c.w] = dw;
            grads[c.b] = db;
        }
        let dfeats: Vec<Vec<S>> = match &self.fuse {
            None => vec![dtop],
            Some(l) => {
                for (g, &t) in dtop.iter_mut().zip(&fw.top) {
                    if t <= S::zero() {
                        *g = S::zero();
                    }
                }
                let mut dcat = vec![S::zero(); rows * l.input];
                let (mut dw, mut db) = (take(grads, l.w), take(grads, l.b));
                dense_backward(&fw.fused_in, rows, l.input, self.p(l.w), l.out, &dtop, &mut dw, &mut db, Some(&mut dcat));
                grads[l.w] = dw;
                grads[l.b] = db;
                let slots = self.encoders.len();
                (0..slots)
                    .map(|k| {
                        let mut v = Vec::with_capacity(rows * f);
                        for r in 0..rows {
                            let o = r * l.input + k * f;
                            v.extend_from_slice(&dcat[o..o + f]);
                        }
                        v
                    })
                    .collect()
            }
        };
        for ((e, cache), df) in self.encoders.iter().zip(&fw.enc).zip(&dfeats) {
            match (e, cache) {
                (Encoder::Cnn { first, second }, c @ EncCache::Cnn { .. }) => {
                    self.cnn_backward(first, second, c, df, grads)
                }
                (Encoder::Lstm { layers, attn }, EncCache::Lstm(cs)) => {
                    self.lstm_backward(layers, attn.as_ref(), cs, df, grads)
                }
                _ => unreachable!("cache built by the same encoder"),
            }
        }
    }

    /// Class probabilities, one row per sample.
    pub fn predict_proba(&self, batch: &[&Sample<S>]) -> Result<Vec<Vec<S>>, NnError> {
        let fw = self.forward(batch)?;
        let m = self.config.num_classes;
        Ok(fw.probs.chunks(m).map(<[S]>::to_vec).collect())
    }

    /// Every piecewise-linear decision (ReLU signs, pooling argmax) taken on a
    /// batch. Finite differences are only valid where this does not change.
    pub fn kink_signature(&self, batch: &[&Sample<S>]) -> Result<Vec<usize>, NnError> {
        let fw = self.forward(batch)?;
        let mut sig = Vec::new();
        for c in &fw.enc {
            if let EncCache::Cnn { first, second, args, segs, .. } = c {
                let m = self.config.filters;
                for maps in first.iter().chain(second) {
                    for &(s, n) in segs {
                        sig.extend(maps[s * m..(s + n) * m].iter().map(|&v| usize::from(v > S::zero())));
                    }
                }
                for per_branch in args {
                    for a in per_branch {
                        sig.extend_from_slice(a);
                    }
                }
            }
        }
        if self.fuse.is_some() {
            sig.extend(fw.top.iter().map(|&v| usize::from(v > S::zero())));
        }
        Ok(sig)
    }

    fn cnn_forward(
        &self,
        first: &[Conv],
        second: &[Conv],
        inputs: &[&Mat<S>],
    ) -> Result<(Vec<S>, EncCache<S>), NnError> {
        let d = self.config.embed_dim;
        let m = self.config.filters;
        let f = self.config.feature_dim();
        // Segments are stacked with zero gaps at least as wide as the widest
        // half-window, so one convolution over the stack equals per-segment
        // zero-padded convolutions.
        let gap = first
            .iter()
            .map(|c| c.h / 2)
            .chain(second.iter().map(|c| c.h / 2))
            .max()
            .unwrap_or(0)
            .max(1);
        let mut segs = Vec::with_capacity(inputs.len());
        let mut cur = gap;
        for x in inputs {
            segs.push((cur, x.rows));
            if x.rows > 0 {
                cur += x.rows + gap;
            }
        }
        let rows = cur;
        let mut packed = vec![S::zero(); rows * d];
        for (x, &(s, n)) in inputs.iter().zip(&segs) {
            packed[s * d..(s + n) * d].copy_from_slice(&x.data);
        }
        let mut in_seg = vec![false; rows];
        for &(s, n) in &segs {
            in_seg[s..s + n].iter_mut().for_each(|b| *b = true);
        }
        let mut feats = vec![S::zero(); inputs.len() * f];
        let mut firsts = Vec::new();
        let mut seconds = Vec::new();
        let mut args = Vec::new();
        for (j, c) in first.iter().enumerate() {
            let mut a = conv1d(&packed, rows, d, self.p(c.w), self.p(c.b), c.h, m)?;
            relu_in_place(&mut a);
            let top = if let Some(c2) = second.get(j) {
                for (r, inside) in in_seg.iter().enumerate() {
                    if !inside {
                        a[r * m..(r + 1) * m].iter_mut().for_each(|v| *v = S::zero());
                    }
                }
                let mut a2 = conv1d(&a, rows, m, self.p(c2.w), self.p(c2.b), c2.h, m)?;
                relu_in_place(&mut a2);
                firsts.push(a);
                seconds.push(a2);
                seconds.last().expect("just pushed")
            } else {
                firsts.push(a);
                firsts.last().expect("just pushed")
            };
            let mut branch_args = Vec::with_capacity(inputs.len());
            for (b, &(s, n)) in segs.iter().enumerate() {
                let (v, arg) = max_pool(top, m, s, n);
                feats[b * f + j * m..b * f + (j + 1) * m].copy_from_slice(&v);
                branch_args.push(arg);
            }
            args.push(branch_args);
        }
        Ok((
            feats,
            EncCache::Cnn {
                packed,
                rows,
                segs,
                first: firsts,
                second: seconds,
                args,
            },
        ))
    }

    fn cnn_backward(
        &self,
        first: &[Conv],
        second: &[Conv],
        cache: &EncCache<S>,
        dfeat: &[S],
        grads: &mut [Vec<S>],
    ) {
        let EncCache::Cnn {
            packed,
            rows,
            segs,
            first: a1s,
            second: a2s,
            args,
        } = cache
        else {
            unreachable!()
        };
        let rows = *rows;
        let d = self.config.embed_dim;
        let m = self.config.filters;
        let f = self.config.feature_dim();
        for (j, c) in first.iter().enumerate() {
            let top = if second.is_empty() { &a1s[j] } else { &a2s[j] };
            let mut dz = vec![S::zero(); rows * m];
            for (b, &(_, n)) in segs.iter().enumerate() {
                if n == 0 {
                    continue;
                }
                for col in 0..m {
                    let r = args[j][b][col];
                    if top[r * m + col] > S::zero() {
                        dz[r * m + col] += dfeat[b * f + j * m + col];
                    }
                }
            }
            if let Some(c2) = second.get(j) {
                let mut da1 = vec![S::zero(); rows * m];
                let (mut dw, mut db) = (take(grads, c2.w), take(grads, c2.b));
                conv1d_backward(&a1s[j], rows, m, self.p(c2.w), c2.h, m, &dz, &mut dw, &mut db, Some(&mut da1));
                grads[c2.w] = dw;
                grads[c2.b] = db;
                for (g, &a) in da1.iter_mut().zip(&a1s[j]) {
                    if a <= S::zero() {
                        *g = S::zero();
                    }
                }
                dz = da1;
            }
            let (mut dw, mut db) = (take(grads, c.w), take(grads, c.b));
            conv1d_backward(packed, rows, d, self.p(c.w), c.h, m, &dz, &mut dw, &mut db, None);
            grads[c.w] = dw;
            grads[c.b] = db;
        }
    }

    fn lstm_forward(
        &self,
        layers: &[[LstmDir; 2]],
        attn: Option<&Attn>,
        inputs: &[&Mat<S>],
    ) -> (Vec<S>, EncCache<S>) {
        let f = self.config.feature_dim();
        let hh = self.config.lstm_cells;
        let mut feats = vec![S::zero(); inputs.len() * f];
        let mut caches = Vec::with_capacity(inputs.len());
        for (b, x) in inputs.iter().enumerate() {
            let n = x.rows;
            if n == 0 {
                caches.push(None);
                continue;
            }
            let mut layer_inputs = vec![x.data.clone()];
            let mut dirs = Vec::new();
            for l in layers {
                let inp = layer_inputs.last().expect("input");
                let fw = lstm_forward(inp, n, l[0].input, self.p(l[0].w), self.p(l[0].u), self.p(l[0].b), hh, false);
                let bw = lstm_forward(inp, n, l[1].input, self.p(l[1].w), self.p(l[1].u), self.p(l[1].b), hh, true);
                let mut out = vec![S::zero(); n * 2 * hh];
                for t in 0..n {
                    out[t * 2 * hh..t * 2 * hh + hh].copy_from_slice(&fw.h[t * hh..(t + 1) * hh]);
                    out[t * 2 * hh + hh..(t + 1) * 2 * hh].copy_from_slice(&bw.h[t * hh..(t + 1) * hh]);
                }
                dirs.push([fw, bw]);
                layer_inputs.push(out);
            }
            let top = layer_inputs.pop().expect("top layer output");
            let row = &mut feats[b * f..(b + 1) * f];
            let attn_cache = match attn {
                Some(a) => {
                    let (o, c) = attention_forward(&top, n, a.input, self.p(a.w), self.p(a.b), self.p(a.q), a.dim);
                    row.copy_from_slice(&o);
                    Some(c)
                }
                None => {
                    let last = dirs.last().expect("one layer");
                    row[..hh].copy_from_slice(last[0].last());
                    row[hh..].copy_from_slice(last[1].last());
                    None
                }
            };
            caches.push(Some(LstmSample {
                n,
                inputs: layer_inputs,
                dirs,
                top,
                attn: attn_cache,
            }));
        }
        (feats, EncCache::Lstm(caches))
    }

    fn lstm_backward(
        &self,
        layers: &[[LstmDir; 2]],
        attn: Option<&Attn>,
        caches: &[Option<LstmSample<S>>],
        dfeat: &[S],
        grads: &mut [Vec<S>],
    ) {
        let f = self.config.feature_dim();
        let hh = self.config.lstm_cells;
        for (b, c) in caches.iter().enumerate() {
            let Some(c) = c else { continue };
            let n = c.n;
            let df = &dfeat[b * f..(b + 1) * f];
            let mut dtop = vec![S::zero(); n * 2 * hh];
            match (attn, &c.attn) {
                (Some(a), Some(ac)) => {
                    let (mut dw, mut db, mut dq) = (take(grads, a.w), take(grads, a.b), take(grads, a.q));
                    attention_backward(ac, &c.top, n, a.input, self.p(a.w), self.p(a.q), a.dim, df, &mut dw, &mut db, &mut dq, &mut dtop);
                    grads[a.w] = dw;
                    grads[a.b] = db;
                    grads[a.q] = dq;
                }
                _ => {
                    let last = (n - 1) * 2 * hh;
                    for k in 0..hh {
                        dtop[last + k] += df[k];
                        dtop[hh + k] += df[hh + k];
                    }
                }
            }
            for (li, l) in layers.iter().enumerate().rev() {
                let inp = &c.inputs[li];
                let mut dh = [vec![S::zero(); n * hh], vec![S::zero(); n * hh]];
                for t in 0..n {
                    dh[0][t * hh..(t + 1) * hh].copy_from_slice(&dtop[t * 2 * hh..t * 2 * hh + hh]);
                    dh[1][t * hh..(t + 1) * hh].copy_from_slice(&dtop[t * 2 * hh + hh..(t + 1) * 2 * hh]);
                }
                let mut dx = (li > 0).then(|| vec![S::zero(); n * l[0].input]);
                for ((dir, dhd), cache) in l.iter().zip(&dh).zip(&c.dirs[li]) {
                    let (mut dw, mut du, mut db) = (take(grads, dir.w), take(grads, dir.u), take(grads, dir.b));
                    lstm_backward(cache, inp, dir.input, self.p(dir.w), self.p(dir.u), dhd, &mut dw, &mut du, &mut db, dx.as_deref_mut());
                    grads[dir.w] = dw;
                    grads[dir.u] = du;
                    grads[dir.b] = db;
                }
                if let Some(dx) = dx {
                    dtop = dx;
                }
            }
        }
    }

    /// Copies parameters into a model of another precision.
    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| T::from_f64(v.to_f64().unwrap()).unwrap()).collect(),
                })
                .collect(),
            encoders: self.encoders.clone(),
            fuse: self.fuse.clone(),
            classifier: self.classifier.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::InputFormat;
    use crate::nn::gradcheck::{random_sample, tiny_config as tiny};
    use crate::nn::{Backbone, Fusion};

    #[test]
    fn packed_batch_equals_single_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for b in Backbone::ALL {
            for fusion in [Fusion::Early, Fusion::Late] {
                let model = Model::<f64>::new(tiny(b, fusion, 5)).unwrap();
                let slots = model.config.slots();
                let samples: Vec<Sample<f64>> = (0..4)
                    .map(|_| random_sample(&mut rng, slots, 4, 3, fusion == Fusion::Late))
                    .collect();
                let all: Vec<&Sample<f64>> = samples.iter().collect();
                let joint = model.predict_proba(&all).unwrap();
                for (s, row) in samples.iter().zip(&joint) {
                    let one = model.predict_proba(&[s]).unwrap();
                    for (a, c) in one[0].iter().zip(row) {
                        assert!((a - c).abs() < 1e-12, "{b}/{fusion}");
                    }
                }
            }
        }
    }

    #[test]
    fn empty_late_slot_contributes_zero_features() {
        let model = Model::<f64>::new(tiny(Backbone::Cnn1, Fusion::Late, 2)).unwrap();
        let empty = Sample {
            segments: vec![Mat::zeros(0, 4); 5],
            label: 0,
        };
        let probs = model.predict_proba(&[&empty]).unwrap();
        // All-zero fused input: logits are the classifier bias (zero), so uniform.
        for p in &probs[0] {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors_are_reported() {
        let model = Model::<f64>::new(tiny(Backbone::Cnn1, Fusion::Early, 1)).unwrap();
        let bad = Sample {
            segments: vec![Mat::zeros(2, 3)],
            label: 0,
        };
        assert!(matches!(model.forward(&[&bad]), Err(NnError::Shape(_))));
        let bad = Sample {
            segments: vec![Mat::zeros(2, 4)],
            label: 9,
        };
        assert!(matches!(model.forward(&[&bad]), Err(NnError::Shape(_))));
        let mut c = tiny(Backbone::Cnn1, Fusion::Late, 1);
        c.input_format = InputFormat::Fu;
        assert!(matches!(Model::<f64>::new(c), Err(NnError::Config(_))));
    }

    #[test]
    fn init_is_seeded() {
        let a = Model::<f32>::new(tiny(Backbone::Bilstm1, Fusion::Early, 9)).unwrap();
        let b = Model::<f32>::new(tiny(Backbone::Bilstm1, Fusion::Early, 9)).unwrap();
        let c = Model::<f32>::new(tiny(Backbone::Bilstm1, Fusion::Early, 10)).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
        let fb = a.params.iter().find(|t| t.name == "enc.lstm0.fwd.b").unwrap();
        assert_eq!(&fb.data[2..4], &[1.0, 1.0]);
        assert_eq!(&fb.data[..2], &[0.0, 0.0]);
    }
}
