use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PropagationMatrix;
use crate::error::{Error, Result};

/// Named slice of the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Shared gate, candidate and readout weights stored as one flat vector so
/// the optimizer and gradient checks can treat every entry uniformly.
///
/// Gate weights map the propagated `[input | hidden]` features (width
/// `1 + hidden`) to `hidden`; the readout maps `hidden` to one output per
/// horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    hidden: usize,
    n_out: usize,
    data: Vec<f64>,
}

const NAMES: [&str; 8] = [
    "w_update",
    "b_update",
    "w_reset",
    "b_reset",
    "w_candidate",
    "b_candidate",
    "w_readout",
    "b_readout",
];

impl ModelParams {
    pub fn zeros(hidden: usize, n_out: usize) -> Self {
        let len = Self::param_count(hidden, n_out);
        Self {
            hidden,
            n_out,
            data: vec![0.0; len],
        }
    }

    /// Glorot-uniform weights and zero biases from `seed`.
    pub fn init(hidden: usize, n_out: usize, seed: u64) -> Self {
        let mut params = Self::zeros(hidden, n_out);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in params.layout() {
            if t.shape.len() != 2 {
                continue;
            }
            let bound = (6.0 / (t.shape[0] + t.shape[1]) as f64).sqrt();
            for v in &mut params.data[t.offset..t.offset + t.len()] {
                *v = rng.random_range(-bound..bound);
            }
        }
        params
    }

    pub fn from_flat(hidden: usize, n_out: usize, data: Vec<f64>) -> Result<Self> {
        let want = Self::param_count(hidden, n_out);
        if data.len() != want {
            return Err(Error::Shape(format!(
                "{} parameters for hidden {hidden} / outputs {n_out}, expected {want}",
                data.len()
            )));
        }
        Ok(Self { hidden, n_out, data })
    }

    fn param_count(hidden: usize, n_out: usize) -> usize {
        3 * ((1 + hidden) * hidden + hidden) + hidden * n_out + n_out
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn layout(&self) -> Vec<Tensor> {
        let (h, d, k) = (self.hidden, self.hidden + 1, self.n_out);
        let shapes = [
            vec![d, h],
            vec![h],
            vec![d, h],
            vec![h],
            vec![d, h],
            vec![h],
            vec![h, k],
            vec![k],
        ];
        let mut offset = 0;
        NAMES
            .iter()
            .zip(shapes)
            .map(|(name, shape)| {
                let t = Tensor {
                    name,
                    shape,
                    offset,
                };
                offset += t.len();
                t
            })
            .collect()
    }

    fn split(&self) -> Views<'_> {
        let (h, d, k) = (self.hidden, self.hidden + 1, self.n_out);
        let (w_u, rest) = self.data.split_at(d * h);
        let (b_u, rest) = rest.split_at(h);
        let (w_r, rest) = rest.split_at(d * h);
        let (b_r, rest) = rest.split_at(h);
        let (w_c, rest) = rest.split_at(d * h);
        let (b_c, rest) = rest.split_at(h);
        let (w_o, b_o) = rest.split_at(h * k);
        Views {
            w_u,
            b_u,
            w_r,
            b_r,
            w_c,
            b_c,
            w_o,
            b_o,
        }
    }
}

struct Views<'a> {
    w_u: &'a [f64],
    b_u: &'a [f64],
    w_r: &'a [f64],
    b_r: &'a [f64],
    w_c: &'a [f64],
    b_c: &'a [f64],
    w_o: &'a [f64],
    b_o: &'a [f64],
}

struct GradViews<'a> {
    w_u: &'a mut [f64],
    b_u: &'a mut [f64],
    w_r: &'a mut [f64],
    b_r: &'a mut [f64],
    w_c: &'a mut [f64],
    b_c: &'a mut [f64],
    w_o: &'a mut [f64],
    b_o: &'a mut [f64],
}

fn split_grad(grad: &mut [f64], hidden: usize, n_out: usize) -> GradViews<'_> {
    let (h, d, k) = (hidden, hidden + 1, n_out);
    let (w_u, rest) = grad.split_at_mut(d * h);
    let (b_u, rest) = rest.split_at_mut(h);
    let (w_r, rest) = rest.split_at_mut(d * h);
    let (b_r, rest) = rest.split_at_mut(h);
    let (w_c, rest) = rest.split_at_mut(d * h);
    let (b_c, rest) = rest.split_at_mut(h);
    let (w_o, b_o) = rest.split_at_mut(h * k);
    GradViews {
        w_u,
        b_u,
        w_r,
        b_r,
        w_c,
        b_c,
        w_o,
        b_o,
    }
}

/// One training example: `window` is `[steps, nodes]`, `targets` and `mask`
/// are `[horizons, nodes]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub window: Array2<f64>,
    pub targets: Array2<f64>,
    pub mask: Array2<bool>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out[i, :] = b + input[i, :] * w` for row-major `input: [n, d]`,
/// `w: [d, h]`.
fn affine(input: &[f64], w: &[f64], b: &[f64], d: usize, h: usize, out: &mut [f64]) {
    for (row_in, row_out) in input.chunks_exact(d).zip(out.chunks_exact_mut(h)) {
        row_out.copy_from_slice(b);
        for (k, &x) in row_in.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let wk = &w[k * h..(k + 1) * h];
            for (o, wv) in row_out.iter_mut().zip(wk) {
                *o += x * wv;
            }
        }
    }
}

/// `dw += input^T * da` and `db += sum_rows(da)`.
fn affine_weight_grad(input: &[f64], da: &[f64], d: usize, h: usize, dw: &mut [f64], db: &mut [f64]) {
    for (row_in, row_da) in input.chunks_exact(d).zip(da.chunks_exact(h)) {
        for (b, g) in db.iter_mut().zip(row_da) {
            *b += g;
        }
        for (k, &x) in row_in.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let dwk = &mut dw[k * h..(k + 1) * h];
            for (w, g) in dwk.iter_mut().zip(row_da) {
                *w += x * g;
            }
        }
    }
}

/// `d_input[i, k] (+)= sum_h da[i, h] * w[k, h]`.
fn affine_input_grad(da: &[f64], w: &[f64], d: usize, h: usize, d_input: &mut [f64], accumulate: bool) {
    for (row_da, row_di) in da.chunks_exact(h).zip(d_input.chunks_exact_mut(d)) {
        for (k, di) in row_di.iter_mut().enumerate() {
            let wk = &w[k * h..(k + 1) * h];
            let s: f64 = row_da.iter().zip(wk).map(|(a, b)| a * b).sum();
            if accumulate {
                *di += s;
            } else {
                *di = s;
            }
        }
    }
}

/// Per-call buffers holding the activations of every step.
struct Tape {
    steps: usize,
    n: usize,
    h: usize,
    d: usize,
    hidden: Vec<f64>,
    g: Vec<f64>,
    g_reset: Vec<f64>,
    update: Vec<f64>,
    reset: Vec<f64>,
    cand: Vec<f64>,
    feat: Vec<f64>,
    pre: Vec<f64>,
}

impl Tape {
    fn new(steps: usize, n: usize, h: usize) -> Self {
        let d = h + 1;
        Self {
            steps,
            n,
            h,
            d,
            hidden: vec![0.0; (steps + 1) * n * h],
            g: vec![0.0; steps * n * d],
            g_reset: vec![0.0; steps * n * d],
            update: vec![0.0; steps * n * h],
            reset: vec![0.0; steps * n * h],
            cand: vec![0.0; steps * n * h],
            feat: vec![0.0; n * d],
            pre: vec![0.0; n * h],
        }
    }

    fn nh(&self, t: usize) -> std::ops::Range<usize> {
        let s = self.n * self.h;
        t * s..(t + 1) * s
    }

    fn nd(&self, t: usize) -> std::ops::Range<usize> {
        let s = self.n * self.d;
        t * s..(t + 1) * s
    }
}

/// Runs the recurrence over `window` (`[steps, nodes]`, row-major) and writes
/// node-major outputs `[nodes, n_out]` into `out`.
fn run_forward(params: &ModelParams, prop: &PropagationMatrix, window: &[f64], tape: &mut Tape, out: &mut [f64]) {
    let v = params.split();
    let (n, h, d) = (tape.n, tape.h, tape.d);
    let first = tape.nh(0);
    tape.hidden[first].fill(0.0);
    for t in 0..tape.steps {
        let x = &window[t * n..(t + 1) * n];
        let (prev_range, g_range) = (tape.nh(t), tape.nd(t));

        for i in 0..n {
            tape.feat[i * d] = x[i];
            tape.feat[i * d + 1..(i + 1) * d]
                .copy_from_slice(&tape.hidden[prev_range.start + i * h..prev_range.start + (i + 1) * h]);
        }
        prop.propagate(&tape.feat, d, &mut tape.g[g_range.clone()]);

        affine(&tape.g[g_range.clone()], v.w_u, v.b_u, d, h, &mut tape.pre);
        for (u, a) in tape.update[prev_range.clone()].iter_mut().zip(&tape.pre) {
            *u = sigmoid(*a);
        }
        affine(&tape.g[g_range.clone()], v.w_r, v.b_r, d, h, &mut tape.pre);
        for (r, a) in tape.reset[prev_range.clone()].iter_mut().zip(&tape.pre) {
            *r = sigmoid(*a);
        }

        for i in 0..n {
            tape.feat[i * d] = x[i];
            for k in 0..h {
                let idx = prev_range.start + i * h + k;
                tape.feat[i * d + 1 + k] = tape.reset[idx] * tape.hidden[idx];
            }
        }
        prop.propagate(&tape.feat, d, &mut tape.g_reset[g_range.clone()]);
        affine(&tape.g_reset[g_range], v.w_c, v.b_c, d, h, &mut tape.pre);
        for (c, a) in tape.cand[prev_range.clone()].iter_mut().zip(&tape.pre) {
            *c = a.tanh();
        }

        let next = tape.nh(t + 1);
        for k in 0..n * h {
            let u = tape.update[prev_range.start + k];
            let hp = tape.hidden[prev_range.start + k];
            let c = tape.cand[prev_range.start + k];
            tape.hidden[next.start + k] = u * hp + (1.0 - u) * c;
        }
    }
    let last = &tape.hidden[tape.nh(tape.steps)];
    affine(last, v.w_o, v.b_o, h, params.n_out, out);
}

/// Back-propagates `d_out` (`[nodes, n_out]`) through the recorded tape and
/// accumulates into `grad`.
fn run_backward(params: &ModelParams, prop: &PropagationMatrix, tape: &Tape, d_out: &[f64], grad: &mut [f64]) {
    let v = params.split();
    let gv = split_grad(grad, params.hidden, params.n_out);
    let (n, h, d, k_out) = (tape.n, tape.h, tape.d, params.n_out);

    let last = &tape.hidden[tape.nh(tape.steps)];
    affine_weight_grad(last, d_out, h, k_out, gv.w_o, gv.b_o);
    let mut dh = vec![0.0; n * h];
    affine_input_grad(d_out, v.w_o, h, k_out, &mut dh, false);

    let mut dh_prev = vec![0.0; n * h];
    let mut da_u = vec![0.0; n * h];
    let mut da_r = vec![0.0; n * h];
    let mut da_c = vec![0.0; n * h];
    let mut dg = vec![0.0; n * d];
    let mut df = vec![0.0; n * d];

    for t in (0..tape.steps).rev() {
        let r_nh = tape.nh(t);
        let r_nd = tape.nd(t);
        let hp = &tape.hidden[r_nh.clone()];
        let u = &tape.update[r_nh.clone()];
        let r = &tape.reset[r_nh.clone()];
        let c = &tape.cand[r_nh.clone()];

        for k in 0..n * h {
            let du = dh[k] * (hp[k] - c[k]);
            let dc = dh[k] * (1.0 - u[k]);
            dh_prev[k] = dh[k] * u[k];
            da_u[k] = du * u[k] * (1.0 - u[k]);
            da_c[k] = dc * (1.0 - c[k] * c[k]);
        }

        // candidate branch: a_c = P [x | r*h] W_c + b_c
        affine_weight_grad(&tape.g_reset[r_nd.clone()], &da_c, d, h, gv.w_c, gv.b_c);
        affine_input_grad(&da_c, v.w_c, d, h, &mut dg, false);
        df.fill(0.0);
        prop.propagate_transpose_add(&dg, d, &mut df);
        for i in 0..n {
            for k in 0..h {
                let idx = i * h + k;
                let g = df[i * d + 1 + k];
                da_r[idx] = g * hp[idx] * r[idx] * (1.0 - r[idx]);
                dh_prev[idx] += g * r[idx];
            }
        }

        // gate branch: a_u, a_r = P [x | h] W + b
        let g_t = &tape.g[r_nd];
        affine_weight_grad(g_t, &da_u, d, h, gv.w_u, gv.b_u);
        affine_weight_grad(g_t, &da_r, d, h, gv.w_r, gv.b_r);
        affine_input_grad(&da_u, v.w_u, d, h, &mut dg, false);
        affine_input_grad(&da_r, v.w_r, d, h, &mut dg, true);
        df.fill(0.0);
        prop.propagate_transpose_add(&dg, d, &mut df);
        for i in 0..n {
            for k in 0..h {
                dh_prev[i * h + k] += df[i * d + 1 + k];
            }
        }

        std::mem::swap(&mut dh, &mut dh_prev);
    }
}

fn check_window(params: &ModelParams, prop: &PropagationMatrix, steps: usize, nodes: usize) -> Result<()> {
    if nodes != prop.n() {
        return Err(Error::Shape(format!(
            "window has {nodes} nodes, propagation has {}",
            prop.n()
        )));
    }
    if steps == 0 {
        return Err(Error::Shape("empty input window".into()));
    }
    if params.is_empty() {
        return Err(Error::Shape("empty parameter vector".into()));
    }
    Ok(())
}

/// Predictions `[horizons, nodes]` for one `[steps, nodes]` window.
pub fn forward(params: &ModelParams, prop: &PropagationMatrix, window: &Array2<f64>) -> Result<Array2<f64>> {
    let (steps, n) = window.dim();
    check_window(params, prop, steps, n)?;
    let flat: Vec<f64> = window.iter().copied().collect();
    let mut tape = Tape::new(steps, n, params.hidden);
    let mut out = vec![0.0; n * params.n_out];
    run_forward(params, prop, &flat, &mut tape, &mut out);
    let node_major = Array2::from_shape_vec((n, params.n_out), out).expect("output shape");
    Ok(node_major.t().to_owned())
}

/// Reusable evaluator for many windows of the same shape.
pub(crate) struct Evaluator<'a> {
    params: &'a ModelParams,
    prop: &'a PropagationMatrix,
    tape: Tape,
    out: Vec<f64>,
    d_out: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    pub(crate) fn new(params: &'a ModelParams, prop: &'a PropagationMatrix, steps: usize) -> Self {
        let n = prop.n();
        Self {
            params,
            prop,
            tape: Tape::new(steps, n, params.hidden),
            out: vec![0.0; n * params.n_out],
            d_out: vec![0.0; n * params.n_out],
        }
    }

    /// Node-major predictions `[nodes, n_out]`.
    pub(crate) fn predict(&mut self, window: &[f64]) -> &[f64] {
        run_forward(self.params, self.prop, window, &mut self.tape, &mut self.out);
        &self.out
    }

    /// Adds the unscaled squared-error gradient of one example into `grad`.
    /// `targets` and `mask` are node-major `[nodes, n_out]`. Returns the
    /// summed squared error and the number of unmasked targets.
    pub(crate) fn accumulate(&mut self, window: &[f64], targets: &[f64], mask: &[bool], grad: &mut [f64]) -> (f64, usize) {
        run_forward(self.params, self.prop, window, &mut self.tape, &mut self.out);
        let (mut sse, mut count) = (0.0, 0);
        for k in 0..self.out.len() {
            if mask[k] {
                let e = self.out[k] - targets[k];
                sse += e * e;
                count += 1;
                self.d_out[k] = 2.0 * e;
            } else {
                self.d_out[k] = 0.0;
            }
        }
        if count > 0 {
            run_backward(self.params, self.prop, &self.tape, &self.d_out, grad);
        }
        (sse, count)
    }
}

/// Mean squared error over unmasked targets of `batch` and its gradient with
/// respect to every parameter.
pub fn loss_and_gradients(params: &ModelParams, prop: &PropagationMatrix, batch: &[Sample]) -> Result<(f64, ModelParams)> {
    let Some(first) = batch.first() else {
        return Err(Error::invalid("empty batch"));
    };
    let (steps, n) = first.window.dim();
    check_window(params, prop, steps, n)?;
    let mut ev = Evaluator::new(params, prop, steps);
    let mut grad = ModelParams::zeros(params.hidden, params.n_out);
    let (mut sse, mut count) = (0.0, 0usize);
    for s in batch {
        if s.window.dim() != (steps, n)
            || s.targets.dim() != (params.n_out, n)
            || s.mask.dim() != (params.n_out, n)
        {
            return Err(Error::Shape(format!(
                "sample shapes window {:?} targets {:?} mask {:?}",
                s.window.dim(),
                s.targets.dim(),
                s.mask.dim()
            )));
        }
        let window: Vec<f64> = s.window.iter().copied().collect();
        let targets: Vec<f64> = s.targets.t().iter().copied().collect();
        let mask: Vec<bool> = s.mask.t().iter().copied().collect();
        let (e, c) = ev.accumulate(&window, &targets, &mask, grad.as_mut_slice());
        sse += e;
        count += c;
    }
    if count == 0 {
        return Ok((0.0, ModelParams::zeros(params.hidden, params.n_out)));
    }
    let scale = 1.0 / count as f64;
    for g in grad.as_mut_slice() {
        *g *= scale;
    }
    Ok((sse * scale, grad))
}
