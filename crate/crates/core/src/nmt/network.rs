//! Parameter layout and hand-written forward/backward passes of the
//! attention encoder-decoder.
//!
//! All parameters live in one flat `Vec<f64>`; every tensor is a row-major
//! window into it. The encoder is a bidirectional GRU, the decoder a GRU fed
//! with the previous target embedding and the attention context, and the
//! attention energy is `v . tanh(W_e h_j + W_d s + b)`.

use crate::util::{sigmoid, softmax_in_place};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Mat {
    pub off: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Mat {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.off..self.off + self.len()
    }

    #[inline]
    pub fn of<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.off..self.off + self.len()]
    }

    #[inline]
    pub fn of_mut<'a>(&self, p: &'a mut [f64]) -> &'a mut [f64] {
        &mut p[self.off..self.off + self.len()]
    }

    #[inline]
    pub fn row<'a>(&self, p: &'a [f64], r: usize) -> &'a [f64] {
        let start = self.off + r * self.cols;
        &p[start..start + self.cols]
    }

    #[inline]
    pub fn row_mut<'a>(&self, p: &'a mut [f64], r: usize) -> &'a mut [f64] {
        let start = self.off + r * self.cols;
        &mut p[start..start + self.cols]
    }
}

/// Gates are stacked update (z), reset (r), candidate (n).
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct GruLayout {
    pub w: Mat,
    pub u: Mat,
    pub b: Mat,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub src_emb: Mat,
    pub fac_emb: Option<Mat>,
    pub enc_fwd: GruLayout,
    pub enc_bwd: GruLayout,
    pub init_w: Mat,
    pub init_b: Mat,
    pub att_we: Mat,
    pub att_wd: Mat,
    pub att_b: Mat,
    pub att_v: Mat,
    pub tgt_emb: Mat,
    pub dec: GruLayout,
    pub out_w: Mat,
    pub out_b: Mat,
    pub total: usize,
    /// (name, tensor) pairs in storage order.
    pub tensors: Vec<(&'static str, Mat, bool)>,
}

#[derive(Default)]
struct Builder {
    off: usize,
    tensors: Vec<(&'static str, Mat, bool)>,
}

impl Builder {
    fn mat(&mut self, name: &'static str, rows: usize, cols: usize, is_bias: bool) -> Mat {
        let m = Mat { off: self.off, rows, cols };
        self.off += rows * cols;
        self.tensors.push((name, m, is_bias));
        m
    }

    fn gru(&mut self, names: [&'static str; 3], input: usize, hidden: usize) -> GruLayout {
        GruLayout {
            w: self.mat(names[0], 3 * hidden, input, false),
            u: self.mat(names[1], 3 * hidden, hidden, false),
            b: self.mat(names[2], 3 * hidden, 1, true),
            hidden,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Dims {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub factor_vocab: usize,
    pub embed: usize,
    pub factor: usize,
    pub hidden: usize,
}

impl Layout {
    pub fn new(d: Dims) -> Self {
        let mut b = Builder::default();
        let h = d.hidden;
        let src_emb = b.mat("src_emb", d.src_vocab, d.embed, false);
        let fac_emb = (d.factor > 0).then(|| b.mat("fac_emb", d.factor_vocab, d.factor, false));
        let enc_in = d.embed + d.factor;
        let enc_fwd = b.gru(["enc_fwd.w", "enc_fwd.u", "enc_fwd.b"], enc_in, h);
        let enc_bwd = b.gru(["enc_bwd.w", "enc_bwd.u", "enc_bwd.b"], enc_in, h);
        let init_w = b.mat("init.w", h, 2 * h, false);
        let init_b = b.mat("init.b", h, 1, true);
        let att_we = b.mat("att.we", h, 2 * h, false);
        let att_wd = b.mat("att.wd", h, h, false);
        let att_b = b.mat("att.b", h, 1, true);
        let att_v = b.mat("att.v", h, 1, false);
        let tgt_emb = b.mat("tgt_emb", d.tgt_vocab, d.embed, false);
        let dec = b.gru(["dec.w", "dec.u", "dec.b"], d.embed + 2 * h, h);
        let out_w = b.mat("out.w", d.tgt_vocab, 3 * h, false);
        let out_b = b.mat("out.b", d.tgt_vocab, 1, true);
        let Builder { off, tensors } = b;
        Layout {
            src_emb,
            fac_emb,
            enc_fwd,
            enc_bwd,
            init_w,
            init_b,
            att_we,
            att_wd,
            att_b,
            att_v,
            tgt_emb,
            dec,
            out_w,
            out_b,
            total: off,
            tensors,
        }
    }
}

/// `out += W x` for row-major `W` with `x.len()` columns.
#[inline]
fn matvec(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o += acc;
    }
}

/// `dx += W^T dy`.
#[inline]
fn matvec_t(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let cols = dx.len();
    for (g, row) in dy.iter().zip(w.chunks_exact(cols)) {
        if *g == 0.0 {
            continue;
        }
        for (d, a) in dx.iter_mut().zip(row) {
            *d += g * a;
        }
    }
}

/// `dW += dy x^T`.
#[inline]
fn outer(dw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (g, row) in dy.iter().zip(dw.chunks_exact_mut(cols)) {
        if *g == 0.0 {
            continue;
        }
        for (d, a) in row.iter_mut().zip(x) {
            *d += g * a;
        }
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[derive(Debug, Clone)]
pub(crate) struct GruStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub n: Vec<f64>,
    pub rh: Vec<f64>,
    pub h: Vec<f64>,
}

fn gru_forward(p: &[f64], g: &GruLayout, x: Vec<f64>, h_prev: &[f64]) -> GruStep {
    let hd = g.hidden;
    let mut pre = g.b.of(p).to_vec();
    matvec(g.w.of(p), &x, &mut pre);
    let u = g.u.of(p);
    matvec(&u[..2 * hd * hd], h_prev, &mut pre[..2 * hd]);
    let z: Vec<f64> = pre[..hd].iter().map(|&a| sigmoid(a)).collect();
    let r: Vec<f64> = pre[hd..2 * hd].iter().map(|&a| sigmoid(a)).collect();
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    matvec(&u[2 * hd * hd..], &rh, &mut pre[2 * hd..]);
    let n: Vec<f64> = pre[2 * hd..].iter().map(|a| a.tanh()).collect();
    let h = (0..hd).map(|i| (1.0 - z[i]) * n[i] + z[i] * h_prev[i]).collect();
    GruStep {
        x,
        h_prev: h_prev.to_vec(),
        z,
        r,
        n,
        rh,
        h,
    }
}

/// Accumulates parameter gradients and returns `(dx, dh_prev)`.
fn gru_backward(p: &[f64], grads: &mut [f64], g: &GruLayout, s: &GruStep, dh: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hd = g.hidden;
    let mut da = vec![0.0; 3 * hd];
    let mut dh_prev = vec![0.0; hd];
    for i in 0..hd {
        let dn = dh[i] * (1.0 - s.z[i]);
        let dz = dh[i] * (s.h_prev[i] - s.n[i]);
        dh_prev[i] = dh[i] * s.z[i];
        da[2 * hd + i] = dn * (1.0 - s.n[i] * s.n[i]);
        da[i] = dz * s.z[i] * (1.0 - s.z[i]);
    }
    let u = g.u.of(p);
    let mut drh = vec![0.0; hd];
    matvec_t(&u[2 * hd * hd..], &da[2 * hd..], &mut drh);
    for i in 0..hd {
        let dr = drh[i] * s.h_prev[i];
        dh_prev[i] += drh[i] * s.r[i];
        da[hd + i] = dr * s.r[i] * (1.0 - s.r[i]);
    }
    outer(g.w.of_mut(grads), &da, &s.x);
    add_into(g.b.of_mut(grads), &da);
    {
        let du = g.u.of_mut(grads);
        let (du_zr, du_n) = du.split_at_mut(2 * hd * hd);
        outer(du_zr, &da[..2 * hd], &s.h_prev);
        outer(du_n, &da[2 * hd..], &s.rh);
    }
    let mut dx = vec![0.0; s.x.len()];
    matvec_t(g.w.of(p), &da, &mut dx);
    matvec_t(&u[..2 * hd * hd], &da[..2 * hd], &mut dh_prev);
    (dx, dh_prev)
}

#[derive(Debug, Clone)]
pub(crate) struct Encoded {
    pub src: Vec<usize>,
    pub factors: Vec<usize>,
    pub fwd: Vec<GruStep>,
    pub bwd: Vec<GruStep>,
    /// `[fwd_j; bwd_j]` per position.
    pub annotations: Vec<Vec<f64>>,
    /// `W_e h_j` per position.
    pub keys: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub s0: Vec<f64>,
}

pub(crate) fn encode(p: &[f64], l: &Layout, src: &[usize], factors: &[usize]) -> Encoded {
    let hd = l.dec.hidden;
    let inputs: Vec<Vec<f64>> = src
        .iter()
        .enumerate()
        .map(|(j, &w)| {
            let mut x = l.src_emb.row(p, w).to_vec();
            if let Some(fe) = &l.fac_emb {
                x.extend_from_slice(fe.row(p, factors[j]));
            }
            x
        })
        .collect();
    let n = src.len();
    let mut fwd = Vec::with_capacity(n);
    let mut h = vec![0.0; hd];
    for x in &inputs {
        let step = gru_forward(p, &l.enc_fwd, x.clone(), &h);
        h = step.h.clone();
        fwd.push(step);
    }
    let mut bwd: Vec<Option<GruStep>> = vec![None; n];
    let mut h = vec![0.0; hd];
    for j in (0..n).rev() {
        let step = gru_forward(p, &l.enc_bwd, inputs[j].clone(), &h);
        h = step.h.clone();
        bwd[j] = Some(step);
    }
    let bwd: Vec<GruStep> = bwd.into_iter().map(Option::unwrap).collect();
    let annotations: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut a = fwd[j].h.clone();
            a.extend_from_slice(&bwd[j].h);
            a
        })
        .collect();
    let keys = annotations
        .iter()
        .map(|a| {
            let mut k = vec![0.0; hd];
            matvec(l.att_we.of(p), a, &mut k);
            k
        })
        .collect();
    let mut mean = vec![0.0; 2 * hd];
    for a in &annotations {
        add_into(&mut mean, a);
    }
    if n > 0 {
        mean.iter_mut().for_each(|m| *m /= n as f64);
    }
    let mut s0 = l.init_b.of(p).to_vec();
    matvec(l.init_w.of(p), &mean, &mut s0);
    s0.iter_mut().for_each(|x| *x = x.tanh());
    Encoded {
        src: src.to_vec(),
        factors: factors.to_vec(),
        fwd,
        bwd,
        annotations,
        keys,
        mean,
        s0,
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DecoderStep {
    pub prev_token: usize,
    pub tanh: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub context: Vec<f64>,
    pub gru: GruStep,
    pub probs: Vec<f64>,
}

impl DecoderStep {
    pub fn state(&self) -> &[f64] {
        &self.gru.h
    }
}

pub(crate) fn decoder_step(p: &[f64], l: &Layout, enc: &Encoded, s_prev: &[f64], prev_token: usize) -> DecoderStep {
    let hd = l.dec.hidden;
    let mut q = l.att_b.of(p).to_vec();
    matvec(l.att_wd.of(p), s_prev, &mut q);
    let v = l.att_v.of(p);
    let mut tanh = Vec::with_capacity(enc.keys.len());
    let mut alpha = Vec::with_capacity(enc.keys.len());
    for k in &enc.keys {
        let t: Vec<f64> = k.iter().zip(&q).map(|(a, b)| (a + b).tanh()).collect();
        alpha.push(t.iter().zip(v).map(|(a, b)| a * b).sum());
        tanh.push(t);
    }
    let mut context = vec![0.0; 2 * hd];
    if !alpha.is_empty() {
        softmax_in_place(&mut alpha);
        for (a, h) in alpha.iter().zip(&enc.annotations) {
            for (c, x) in context.iter_mut().zip(h) {
                *c += a * x;
            }
        }
    }
    let mut x = l.tgt_emb.row(p, prev_token).to_vec();
    x.extend_from_slice(&context);
    let gru = gru_forward(p, &l.dec, x, s_prev);
    let mut o = gru.h.clone();
    o.extend_from_slice(&context);
    let mut probs = l.out_b.of(p).to_vec();
    matvec(l.out_w.of(p), &o, &mut probs);
    softmax_in_place(&mut probs);
    DecoderStep {
        prev_token,
        tanh,
        alpha,
        context,
        gru,
        probs,
    }
}

/// Teacher-forced pass over one example: returns the summed token negative
/// log-likelihood and the per-step caches.
pub(crate) fn forward(p: &[f64], l: &Layout, src: &[usize], factors: &[usize], tgt: &[usize], bos: usize) -> (f64, Encoded, Vec<DecoderStep>) {
    let enc = encode(p, l, src, factors);
    let mut steps: Vec<DecoderStep> = Vec::with_capacity(tgt.len());
    let mut nll = 0.0;
    for (t, &y) in tgt.iter().enumerate() {
        let prev = if t == 0 { bos } else { tgt[t - 1] };
        let s_prev = steps.last().map_or(&enc.s0[..], DecoderStep::state).to_vec();
        let step = decoder_step(p, l, &enc, &s_prev, prev);
        nll -= step.probs[y].max(f64::MIN_POSITIVE).ln();
        steps.push(step);
    }
    (nll, enc, steps)
}

/// Accumulates `scale * d(nll)/d(params)` into `grads`.
pub(crate) fn backward(p: &[f64], grads: &mut [f64], l: &Layout, enc: &Encoded, steps: &[DecoderStep], tgt: &[usize], scale: f64) {
    let hd = l.dec.hidden;
    let n = enc.annotations.len();
    let mut d_ann = vec![vec![0.0; 2 * hd]; n];
    let mut d_keys = vec![vec![0.0; hd]; n];
    let mut ds = vec![0.0; hd];
    let v = l.att_v.of(p).to_vec();

    for t in (0..steps.len()).rev() {
        let st = &steps[t];
        let mut dlogits = st.probs.clone();
        dlogits[tgt[t]] -= 1.0;
        dlogits.iter_mut().for_each(|g| *g *= scale);
        let mut o = st.gru.h.clone();
        o.extend_from_slice(&st.context);
        outer(l.out_w.of_mut(grads), &dlogits, &o);
        add_into(l.out_b.of_mut(grads), &dlogits);
        let mut d_o = vec![0.0; 3 * hd];
        matvec_t(l.out_w.of(p), &dlogits, &mut d_o);
        add_into(&mut ds, &d_o[..hd]);
        let mut dc = d_o[hd..].to_vec();

        let (dx, ds_prev) = gru_backward(p, grads, &l.dec, &st.gru, &ds);
        let e = l.tgt_emb.cols;
        add_into(l.tgt_emb.row_mut(grads, st.prev_token), &dx[..e]);
        add_into(&mut dc, &dx[e..]);
        ds = ds_prev;

        if n > 0 {
            let dalpha: Vec<f64> = enc.annotations.iter().map(|h| h.iter().zip(&dc).map(|(a, b)| a * b).sum()).collect();
            let weighted: f64 = st.alpha.iter().zip(&dalpha).map(|(a, b)| a * b).sum();
            let mut dq = vec![0.0; hd];
            for j in 0..n {
                for (da, c) in d_ann[j].iter_mut().zip(&dc) {
                    *da += st.alpha[j] * c;
                }
                let de = st.alpha[j] * (dalpha[j] - weighted);
                if de == 0.0 {
                    continue;
                }
                let tj = &st.tanh[j];
                let dv = l.att_v.of_mut(grads);
                for i in 0..hd {
                    dv[i] += de * tj[i];
                    let dpre = de * v[i] * (1.0 - tj[i] * tj[i]);
                    d_keys[j][i] += dpre;
                    dq[i] += dpre;
                }
            }
            let s_prev = &st.gru.h_prev;
            outer(l.att_wd.of_mut(grads), &dq, s_prev);
            add_into(l.att_b.of_mut(grads), &dq);
            matvec_t(l.att_wd.of(p), &dq, &mut ds);
        }
    }

    // s0 = tanh(W_init mean + b_init)
    let da: Vec<f64> = ds.iter().zip(&enc.s0).map(|(g, s)| g * (1.0 - s * s)).collect();
    outer(l.init_w.of_mut(grads), &da, &enc.mean);
    add_into(l.init_b.of_mut(grads), &da);
    if n == 0 {
        return;
    }
    let mut dmean = vec![0.0; 2 * hd];
    matvec_t(l.init_w.of(p), &da, &mut dmean);
    for j in 0..n {
        for (a, m) in d_ann[j].iter_mut().zip(&dmean) {
            *a += m / n as f64;
        }
        outer(l.att_we.of_mut(grads), &d_keys[j], &enc.annotations[j]);
        matvec_t(l.att_we.of(p), &d_keys[j], &mut d_ann[j]);
    }

    let e = l.src_emb.cols;
    let scatter = |grads: &mut [f64], j: usize, dx: &[f64]| {
        add_into(l.src_emb.row_mut(grads, enc.src[j]), &dx[..e]);
        if let Some(fe) = &l.fac_emb {
            add_into(fe.row_mut(grads, enc.factors[j]), &dx[e..]);
        }
    };
    let mut carry = vec![0.0; hd];
    for j in (0..n).rev() {
        let mut dh = d_ann[j][..hd].to_vec();
        add_into(&mut dh, &carry);
        let (dx, dprev) = gru_backward(p, grads, &l.enc_fwd, &enc.fwd[j], &dh);
        scatter(grads, j, &dx);
        carry = dprev;
    }
    let mut carry = vec![0.0; hd];
    for j in 0..n {
        let mut dh = d_ann[j][hd..].to_vec();
        add_into(&mut dh, &carry);
        let (dx, dprev) = gru_backward(p, grads, &l.enc_bwd, &enc.bwd[j], &dh);
        scatter(grads, j, &dx);
        carry = dprev;
    }
}
