//! Minimal CNN machinery: a static op graph with exact forward/backward.
//!
//! The networks here are small enough that a hand-rolled f64 implementation
//! beats pulling in a framework, and analytic input gradients (the thing the
//! attack needs) fall out of the same backward pass that training uses. Ops
//! are nodes in a DAG evaluated in index order; `Add` nodes reference an
//! earlier node, which is all the skip topology the three extractor
//! architectures need.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// 2D convolution with square kernel, zero padding, stride 1 or 2.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Conv2d {
    pub fn new(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize) -> Self {
        Conv2d {
            in_c,
            out_c,
            k,
            stride,
            pad,
            w: vec![0.0; out_c * in_c * k * k],
            b: vec![0.0; out_c],
        }
    }

    pub fn init_he(&mut self, rng: &mut ChaCha8Rng) {
        let fan_in = (self.in_c * self.k * self.k) as f64;
        let std = (2.0 / fan_in).sqrt();
        for w in &mut self.w {
            *w = std * gaussian(rng);
        }
        // biases start at zero
    }

    fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let (c, h, w) = x.shape();
        debug_assert_eq!(c, self.in_c);
        let (oh, ow) = self.out_dims(h, w);
        let mut y = Tensor::zeros(self.out_c, oh, ow);
        for oc in 0..self.out_c {
            y.plane_mut(oc).fill(self.b[oc]);
        }
        if self.stride == 2 {
            self.forward_s2(x, &mut y);
            return y;
        }
        for oc in 0..self.out_c {
            for ic in 0..self.in_c {
                let xp = x.plane(ic);
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let wv = self.w[((oc * self.in_c + ic) * self.k + ky) * self.k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let yp = y.plane_mut(oc);
                        let ox0 = self.pad.saturating_sub(kx);
                        let ox1 = (w + self.pad - kx).min(ow);
                        if ox1 <= ox0 {
                            continue;
                        }
                        let shift = kx as isize - self.pad as isize;
                        for oy in 0..oh {
                            let iy = (oy + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = &xp[iy as usize * w..iy as usize * w + w];
                            let yrow = &mut yp[oy * ow..oy * ow + ow];
                            let xs = &xrow[(ox0 as isize + shift) as usize
                                ..(ox1 as isize + shift) as usize];
                            for (yv, xv) in yrow[ox0..ox1].iter_mut().zip(xs) {
                                *yv += wv * xv;
                            }
                        }
                    }
                }
            }
        }
        y
    }

    /// Stride-2 kernels read every other column; splitting each row into
    /// even/odd column buffers turns those gathers into contiguous slices.
    fn forward_s2(&self, x: &Tensor, y: &mut Tensor) {
        let (_, h, w) = x.shape();
        let (_, oh, ow) = y.shape();
        for ic in 0..self.in_c {
            let (xe, xo, we, wo) = split_even_odd(x.plane(ic), h, w);
            for oc in 0..self.out_c {
                let yp = y.plane_mut(oc);
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let wv = self.w[((oc * self.in_c + ic) * self.k + ky) * self.k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let Some((ox0, ox1, j0, even)) =
                            s2_range(kx as isize - self.pad as isize, w, ow)
                        else {
                            continue;
                        };
                        let (buf, bw) = if even { (&xe, we) } else { (&xo, wo) };
                        for oy in 0..oh {
                            let iy = (oy * 2 + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let base = iy as usize * bw;
                            let xs = &buf[base + j0..base + j0 + (ox1 - ox0)];
                            let yrow = &mut yp[oy * ow + ox0..oy * ow + ox1];
                            for (yv, xv) in yrow.iter_mut().zip(xs) {
                                *yv += wv * xv;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates input gradient into `dx`; fills `dw`/`db` when given.
    fn backward(
        &self,
        x: &Tensor,
        dy: &Tensor,
        dx: Option<&mut Tensor>,
        grads: Option<(&mut [f64], &mut [f64])>,
    ) {
        let (_, h, w) = x.shape();
        let (_, oh, ow) = dy.shape();
        let s = self.stride;
        if let Some((dw, db)) = grads {
            for oc in 0..self.out_c {
                let dyp = dy.plane(oc);
                db[oc] += dyp.iter().sum::<f64>();
                for ic in 0..self.in_c {
                    let xp = x.plane(ic);
                    if s == 2 {
                        let (xe, xo, we, wo) = split_even_odd(xp, h, w);
                        for ky in 0..self.k {
                            for kx in 0..self.k {
                                let Some((ox0, ox1, j0, even)) =
                                    s2_range(kx as isize - self.pad as isize, w, ow)
                                else {
                                    continue;
                                };
                                let (buf, bw) = if even { (&xe, we) } else { (&xo, wo) };
                                let mut acc = 0.0;
                                for oy in 0..oh {
                                    let iy = (oy * 2 + ky) as isize - self.pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let base = iy as usize * bw;
                                    acc += dot(
                                        &dyp[oy * ow + ox0..oy * ow + ox1],
                                        &buf[base + j0..base + j0 + (ox1 - ox0)],
                                    );
                                }
                                dw[((oc * self.in_c + ic) * self.k + ky) * self.k + kx] += acc;
                            }
                        }
                        continue;
                    }
                    for ky in 0..self.k {
                        for kx in 0..self.k {
                            let shift = kx as isize - self.pad as isize;
                            let ox0 = self.pad.saturating_sub(kx);
                            let ox1 = (w + self.pad - kx).min(ow);
                            if ox1 <= ox0 {
                                continue;
                            }
                            let mut acc = 0.0;
                            for oy in 0..oh {
                                let iy = (oy + ky) as isize - self.pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let xrow = &xp[iy as usize * w..iy as usize * w + w];
                                let dyrow = &dyp[oy * ow..oy * ow + ow];
                                acc += dot(
                                    &dyrow[ox0..ox1],
                                    &xrow[(ox0 as isize + shift) as usize
                                        ..(ox1 as isize + shift) as usize],
                                );
                            }
                            dw[((oc * self.in_c + ic) * self.k + ky) * self.k + kx] += acc;
                        }
                    }
                }
            }
        }
        if let Some(dx) = dx {
            if s == 2 {
                self.backward_dx_s2(dx, dy);
            } else {
                for oc in 0..self.out_c {
                    let dyp = dy.plane(oc);
                    for ic in 0..self.in_c {
                        for ky in 0..self.k {
                            for kx in 0..self.k {
                                let wv =
                                    self.w[((oc * self.in_c + ic) * self.k + ky) * self.k + kx];
                                if wv == 0.0 {
                                    continue;
                                }
                                let dxp = dx.plane_mut(ic);
                                let shift = kx as isize - self.pad as isize;
                                let ox0 = self.pad.saturating_sub(kx);
                                let ox1 = (w + self.pad - kx).min(ow);
                                if ox1 <= ox0 {
                                    continue;
                                }
                                for oy in 0..oh {
                                    let iy = (oy + ky) as isize - self.pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let dxrow = &mut dxp[iy as usize * w..iy as usize * w + w];
                                    let dyrow = &dyp[oy * ow..oy * ow + ow];
                                    let ds = &mut dxrow[(ox0 as isize + shift) as usize
                                        ..(ox1 as isize + shift) as usize];
                                    for (dv, g) in ds.iter_mut().zip(&dyrow[ox0..ox1]) {
                                        *dv += wv * g;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Stride-2 input gradient: accumulate into even/odd column buffers,
    /// then interleave back onto the input grid.
    fn backward_dx_s2(&self, dx: &mut Tensor, dy: &Tensor) {
        let (_, h, w) = dx.shape();
        let (_, oh, ow) = dy.shape();
        let we = w.div_ceil(2);
        let wo = w / 2;
        for ic in 0..self.in_c {
            let mut de = vec![0.0f64; h * we];
            let mut do_ = vec![0.0f64; h * wo];
            for oc in 0..self.out_c {
                let dyp = dy.plane(oc);
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let wv = self.w[((oc * self.in_c + ic) * self.k + ky) * self.k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let Some((ox0, ox1, j0, even)) =
                            s2_range(kx as isize - self.pad as isize, w, ow)
                        else {
                            continue;
                        };
                        let (buf, bw) = if even {
                            (&mut de, we)
                        } else {
                            (&mut do_, wo)
                        };
                        for oy in 0..oh {
                            let iy = (oy * 2 + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let base = iy as usize * bw;
                            let dst = &mut buf[base + j0..base + j0 + (ox1 - ox0)];
                            let src = &dyp[oy * ow + ox0..oy * ow + ox1];
                            for (dv, g) in dst.iter_mut().zip(src) {
                                *dv += wv * g;
                            }
                        }
                    }
                }
            }
            let dxp = dx.plane_mut(ic);
            for y in 0..h {
                let row = &mut dxp[y * w..(y + 1) * w];
                for j in 0..wo {
                    row[2 * j] += de[y * we + j];
                    row[2 * j + 1] += do_[y * wo + j];
                }
                if we > wo {
                    row[w - 1] += de[y * we + we - 1];
                }
            }
        }
    }
}

/// Graph node. `input`/`a`/`b` are indices of earlier nodes.
#[derive(Debug, Clone)]
pub enum Op {
    Input,
    Conv { conv: Conv2d, input: usize },
    LRelu { alpha: f64, input: usize },
    Sigmoid { input: usize },
    AvgPool2 { input: usize },
    Upsample2 { input: usize },
    Add { a: usize, b: usize },
}

/// A feed-forward DAG; node 0 is the input, the last node is the output.
#[derive(Debug, Clone)]
pub struct Graph {
    pub ops: Vec<Op>,
}

/// Per-conv-node parameter gradients, aligned with [`Graph::conv_nodes`].
pub struct ParamGrads {
    pub dw: Vec<Vec<f64>>,
    pub db: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(g: &Graph) -> ParamGrads {
        let mut dw = Vec::new();
        let mut db = Vec::new();
        for idx in g.conv_nodes() {
            if let Op::Conv { conv, .. } = &g.ops[idx] {
                dw.push(vec![0.0; conv.w.len()]);
                db.push(vec![0.0; conv.b.len()]);
            }
        }
        ParamGrads { dw, db }
    }

    pub fn accumulate(&mut self, other: &ParamGrads) {
        for (a, b) in self.dw.iter_mut().zip(&other.dw) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.db.iter_mut().zip(&other.db) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.dw.iter_mut().flatten() {
            *v *= s;
        }
        for v in self.db.iter_mut().flatten() {
            *v *= s;
        }
    }
}

impl Graph {
    pub fn builder() -> GraphBuilder {
        GraphBuilder {
            ops: vec![Op::Input],
        }
    }

    pub fn output_node(&self) -> usize {
        self.ops.len() - 1
    }

    pub fn conv_nodes(&self) -> Vec<usize> {
        self.ops
            .iter()
            .enumerate()
            .filter_map(|(i, op)| matches!(op, Op::Conv { .. }).then_some(i))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.ops
            .iter()
            .map(|op| match op {
                Op::Conv { conv, .. } => conv.w.len() + conv.b.len(),
                _ => 0,
            })
            .sum()
    }

    /// Topology descriptor, independent of weight values. Two architectures
    /// are distinct iff their fingerprints differ.
    pub fn fingerprint(&self) -> String {
        let parts: Vec<String> = self
            .ops
            .iter()
            .map(|op| match op {
                Op::Input => "input".to_string(),
                Op::Conv { conv, input } => format!(
                    "conv({},{},k{},s{},p{})<-{}",
                    conv.in_c, conv.out_c, conv.k, conv.stride, conv.pad, input
                ),
                Op::LRelu { alpha, input } => format!("lrelu({alpha})<-{input}"),
                Op::Sigmoid { input } => format!("sigmoid<-{input}"),
                Op::AvgPool2 { input } => format!("avgpool2<-{input}"),
                Op::Upsample2 { input } => format!("up2<-{input}"),
                Op::Add { a, b } => format!("add<-{a},{b}"),
            })
            .collect();
        parts.join(";")
    }

    pub fn init_weights(&mut self, rng: &mut ChaCha8Rng) {
        for op in &mut self.ops {
            if let Op::Conv { conv, .. } = op {
                conv.init_he(rng);
            }
        }
    }

    pub fn weights_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for op in &self.ops {
            if let Op::Conv { conv, .. } = op {
                out.extend_from_slice(&conv.w);
                out.extend_from_slice(&conv.b);
            }
        }
        out
    }

    pub fn load_weights_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Checkpoint(format!(
                "weight blob has {} values, graph needs {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for op in &mut self.ops {
            if let Op::Conv { conv, .. } = op {
                let nw = conv.w.len();
                conv.w.copy_from_slice(&flat[off..off + nw]);
                off += nw;
                let nb = conv.b.len();
                conv.b.copy_from_slice(&flat[off..off + nb]);
                off += nb;
            }
        }
        Ok(())
    }

    /// Evaluate every node; the returned vector is the activation cache.
    pub fn forward(&self, input: &Tensor) -> Vec<Tensor> {
        let mut acts: Vec<Tensor> = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            let t = match op {
                Op::Input => input.clone(),
                Op::Conv { conv, input } => conv.forward(&acts[*input]),
                Op::LRelu { alpha, input } => {
                    let mut t = acts[*input].clone();
                    for v in t.data_mut() {
                        if *v < 0.0 {
                            *v *= alpha;
                        }
                    }
                    t
                }
                Op::Sigmoid { input } => {
                    let mut t = acts[*input].clone();
                    for v in t.data_mut() {
                        *v = 1.0 / (1.0 + (-*v).exp());
                    }
                    t
                }
                Op::AvgPool2 { input } => {
                    let x = &acts[*input];
                    let (c, h, w) = x.shape();
                    debug_assert!(h % 2 == 0 && w % 2 == 0);
                    let mut y = Tensor::zeros(c, h / 2, w / 2);
                    for ch in 0..c {
                        let xp = x.plane(ch);
                        let yp = y.plane_mut(ch);
                        for oy in 0..h / 2 {
                            for ox in 0..w / 2 {
                                let i = 2 * oy * w + 2 * ox;
                                yp[oy * (w / 2) + ox] =
                                    0.25 * (xp[i] + xp[i + 1] + xp[i + w] + xp[i + w + 1]);
                            }
                        }
                    }
                    y
                }
                Op::Upsample2 { input } => {
                    let x = &acts[*input];
                    let (c, h, w) = x.shape();
                    let mut y = Tensor::zeros(c, h * 2, w * 2);
                    for ch in 0..c {
                        let xp = x.plane(ch);
                        let yp = y.plane_mut(ch);
                        for iy in 0..h {
                            for ix in 0..w {
                                let v = xp[iy * w + ix];
                                let base = 2 * iy * (w * 2) + 2 * ix;
                                yp[base] = v;
                                yp[base + 1] = v;
                                yp[base + w * 2] = v;
                                yp[base + w * 2 + 1] = v;
                            }
                        }
                    }
                    y
                }
                Op::Add { a, b } => {
                    let mut t = acts[*a].clone();
                    for (x, y) in t.data_mut().iter_mut().zip(acts[*b].data()) {
                        *x += y;
                    }
                    t
                }
            };
            acts.push(t);
        }
        acts
    }

    /// Reverse pass from `d_out` (gradient w.r.t. the output node).
    ///
    /// Returns parameter gradients when `want_params`, and the gradient with
    /// respect to the input when `want_input`.
    pub fn backward(
        &self,
        acts: &[Tensor],
        d_out: Tensor,
        want_params: bool,
        want_input: bool,
    ) -> (Option<ParamGrads>, Option<Tensor>) {
        let n = self.ops.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[n - 1] = Some(d_out);
        let mut pg = want_params.then(|| ParamGrads::zeros_like(self));
        let conv_index: std::collections::HashMap<usize, usize> = self
            .conv_nodes()
            .into_iter()
            .enumerate()
            .map(|(slot, node)| (node, slot))
            .collect();

        let add_grad = |grads: &mut Vec<Option<Tensor>>, idx: usize, g: Tensor| {
            match &mut grads[idx] {
                Some(t) => {
                    for (x, y) in t.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                }
                slot @ None => *slot = Some(g),
            }
        };

        for i in (1..n).rev() {
            let Some(dy) = grads[i].take() else { continue };
            match &self.ops[i] {
                Op::Input => unreachable!("input is node 0"),
                Op::Conv { conv, input } => {
                    let x = &acts[*input];
                    // input gradient is skipped only when nothing upstream
                    // needs it (stem conv fed by the input node)
                    let need_dx = *input != 0 || want_input;
                    let mut dx = need_dx.then(|| Tensor::zeros(x.shape().0, x.shape().1, x.shape().2));
                    let slot = conv_index[&i];
                    match (&mut dx, &mut pg) {
                        (Some(dx), Some(pg)) => conv.backward(
                            x,
                            &dy,
                            Some(dx),
                            Some((&mut pg.dw[slot], &mut pg.db[slot])),
                        ),
                        (Some(dx), None) => conv.backward(x, &dy, Some(dx), None),
                        (None, Some(pg)) => conv.backward(
                            x,
                            &dy,
                            None,
                            Some((&mut pg.dw[slot], &mut pg.db[slot])),
                        ),
                        (None, None) => {}
                    }
                    if let Some(dx) = dx {
                        add_grad(&mut grads, *input, dx);
                    }
                }
                Op::LRelu { alpha, input } => {
                    let mut dx = dy;
                    for (g, &x) in dx.data_mut().iter_mut().zip(acts[*input].data()) {
                        if x < 0.0 {
                            *g *= alpha;
                        }
                    }
                    add_grad(&mut grads, *input, dx);
                }
                Op::Sigmoid { input } => {
                    let mut dx = dy;
                    for (g, &y) in dx.data_mut().iter_mut().zip(acts[i].data()) {
                        *g *= y * (1.0 - y);
                    }
                    let _ = input;
                    add_grad(&mut grads, *input, dx);
                }
                Op::AvgPool2 { input } => {
                    let (c, oh, ow) = dy.shape();
                    let mut dx = Tensor::zeros(c, oh * 2, ow * 2);
                    for ch in 0..c {
                        let dyp = dy.plane(ch);
                        let dxp = dx.plane_mut(ch);
                        let w = ow * 2;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let g = 0.25 * dyp[oy * ow + ox];
                                let base = 2 * oy * w + 2 * ox;
                                dxp[base] += g;
                                dxp[base + 1] += g;
                                dxp[base + w] += g;
                                dxp[base + w + 1] += g;
                            }
                        }
                    }
                    add_grad(&mut grads, *input, dx);
                }
                Op::Upsample2 { input } => {
                    let (c, oh, ow) = dy.shape();
                    let (h, w) = (oh / 2, ow / 2);
                    let mut dx = Tensor::zeros(c, h, w);
                    for ch in 0..c {
                        let dyp = dy.plane(ch);
                        let dxp = dx.plane_mut(ch);
                        for iy in 0..h {
                            for ix in 0..w {
                                let base = 2 * iy * ow + 2 * ix;
                                dxp[iy * w + ix] +=
                                    dyp[base] + dyp[base + 1] + dyp[base + ow] + dyp[base + ow + 1];
                            }
                        }
                    }
                    add_grad(&mut grads, *input, dx);
                }
                Op::Add { a, b } => {
                    add_grad(&mut grads, *a, dy.clone());
                    add_grad(&mut grads, *b, dy);
                }
            }
        }
        let input_grad = want_input.then(|| grads[0].take().expect("input reached"));
        (pg, input_grad)
    }
}

pub struct GraphBuilder {
    ops: Vec<Op>,
}

impl GraphBuilder {
    pub fn input(&self) -> usize {
        0
    }

    pub fn conv(&mut self, input: usize, in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize) -> usize {
        self.ops.push(Op::Conv {
            conv: Conv2d::new(in_c, out_c, k, stride, pad),
            input,
        });
        self.ops.len() - 1
    }

    pub fn lrelu(&mut self, input: usize) -> usize {
        self.ops.push(Op::LRelu { alpha: 0.1, input });
        self.ops.len() - 1
    }

    pub fn sigmoid(&mut self, input: usize) -> usize {
        self.ops.push(Op::Sigmoid { input });
        self.ops.len() - 1
    }

    pub fn avgpool2(&mut self, input: usize) -> usize {
        self.ops.push(Op::AvgPool2 { input });
        self.ops.len() - 1
    }

    pub fn upsample2(&mut self, input: usize) -> usize {
        self.ops.push(Op::Upsample2 { input });
        self.ops.len() - 1
    }

    pub fn add(&mut self, a: usize, b: usize) -> usize {
        self.ops.push(Op::Add { a, b });
        self.ops.len() - 1
    }

    pub fn finish(self) -> Graph {
        Graph { ops: self.ops }
    }
}

/// Adam over all conv parameters of a graph.
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m_w: Vec<Vec<f64>>,
    v_w: Vec<Vec<f64>>,
    m_b: Vec<Vec<f64>>,
    v_b: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(graph: &Graph, lr: f64) -> Adam {
        let mut m_w = Vec::new();
        let mut v_w = Vec::new();
        let mut m_b = Vec::new();
        let mut v_b = Vec::new();
        for idx in graph.conv_nodes() {
            if let Op::Conv { conv, .. } = &graph.ops[idx] {
                m_w.push(vec![0.0; conv.w.len()]);
                v_w.push(vec![0.0; conv.w.len()]);
                m_b.push(vec![0.0; conv.b.len()]);
                v_b.push(vec![0.0; conv.b.len()]);
            }
        }
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m_w,
            v_w,
            m_b,
            v_b,
        }
    }

    pub fn step(&mut self, graph: &mut Graph, grads: &ParamGrads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut slot = 0;
        for i in 0..graph.ops.len() {
            if let Op::Conv { conv, .. } = &mut graph.ops[i] {
                update(
                    &mut conv.w,
                    &grads.dw[slot],
                    &mut self.m_w[slot],
                    &mut self.v_w[slot],
                    self.lr,
                    self.beta1,
                    self.beta2,
                    self.eps,
                    bc1,
                    bc2,
                );
                update(
                    &mut conv.b,
                    &grads.db[slot],
                    &mut self.m_b[slot],
                    &mut self.v_b[slot],
                    self.lr,
                    self.beta1,
                    self.beta2,
                    self.eps,
                    bc1,
                    bc2,
                );
                slot += 1;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        p[i] -= lr * mh / (vh.sqrt() + eps);
    }
}

/// Split a row-major plane into even- and odd-column buffers.
fn split_even_odd(xp: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>, usize, usize) {
    let we = w.div_ceil(2);
    let wo = w / 2;
    let mut e = vec![0.0f64; h * we];
    let mut o = vec![0.0f64; h * wo];
    for y in 0..h {
        let row = &xp[y * w..(y + 1) * w];
        let er = &mut e[y * we..(y + 1) * we];
        let orow = &mut o[y * wo..(y + 1) * wo];
        for j in 0..wo {
            er[j] = row[2 * j];
            orow[j] = row[2 * j + 1];
        }
        if we > wo {
            er[we - 1] = row[w - 1];
        }
    }
    (e, o, we, wo)
}

/// For a stride-2 tap offset `t = kx - pad`: the valid output column range
/// `[ox0, ox1)`, the start index into the even/odd buffer, and which buffer
/// the tap reads (input index `2·ox + t`).
fn s2_range(t: isize, w: usize, ow: usize) -> Option<(usize, usize, usize, bool)> {
    let ox0 = if t >= 0 { 0 } else { (-t as usize).div_ceil(2) };
    let ox1_isize = (w as isize - 1 - t) / 2 + 1;
    let ox1 = ox1_isize.clamp(0, ow as isize) as usize;
    if ox1 <= ox0 {
        return None;
    }
    let even = t.rem_euclid(2) == 0;
    let j0 = if even {
        ox0 as isize + t / 2
    } else {
        ox0 as isize + (t - 1) / 2
    };
    debug_assert!(j0 >= 0);
    Some((ox0, ox1, j0 as usize, even))
}

/// Four-lane unrolled dot product; fixed summation order keeps results
/// reproducible while letting the backend vectorize.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Box-Muller standard normal.
pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny_graph(seed: u64) -> Graph {
        let mut b = Graph::builder();
        let x = b.input();
        let c1 = b.conv(x, 2, 4, 3, 1, 1);
        let r1 = b.lrelu(c1);
        let p = b.avgpool2(r1);
        let c2 = b.conv(p, 4, 4, 3, 2, 1);
        let r2 = b.lrelu(c2);
        let u = b.upsample2(r2);
        let c3 = b.conv(u, 4, 4, 1, 1, 0); // 1x1
        let a = b.add(c3, p);
        let c4 = b.conv(a, 4, 3, 3, 1, 1);
        let s = b.sigmoid(c4);
        let _ = s;
        let mut g = b.finish();
        g.init_weights(&mut ChaCha8Rng::seed_from_u64(seed));
        g
    }

    fn rand_tensor(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensor::zeros(c, h, w);
        for v in t.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        t
    }

    /// Scalar probe loss: weighted sum of the output, fixed weights.
    fn probe_loss(g: &Graph, x: &Tensor, probe: &Tensor) -> f64 {
        let acts = g.forward(x);
        acts[g.output_node()]
            .data()
            .iter()
            .zip(probe.data())
            .map(|(a, b)| a * b)
            .sum()
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let g = tiny_graph(3);
        let x = rand_tensor(2, 8, 8, 4);
        let acts = g.forward(&x);
        let out_shape = acts[g.output_node()].shape();
        let probe = rand_tensor(out_shape.0, out_shape.1, out_shape.2, 5);
        let (_, dx) = g.backward(&acts, probe.clone(), false, true);
        let dx = dx.unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = 1e-5;
        for _ in 0..20 {
            let i = rng.gen_range(0..x.data().len());
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (probe_loss(&g, &xp, &probe) - probe_loss(&g, &xm, &probe)) / (2.0 * h);
            let an = dx.data()[i];
            let denom = fd.abs().max(an.abs()).max(1e-8);
            assert!(
                ((fd - an) / denom).abs() < 1e-6,
                "fd={fd} analytic={an}"
            );
        }
    }

    #[test]
    fn weight_gradients_match_finite_differences() {
        let g = tiny_graph(9);
        let x = rand_tensor(2, 8, 8, 10);
        let acts = g.forward(&x);
        let out_shape = acts[g.output_node()].shape();
        let probe = rand_tensor(out_shape.0, out_shape.1, out_shape.2, 11);
        let (pg, _) = g.backward(&acts, probe.clone(), true, false);
        let pg = pg.unwrap();
        let conv_nodes = g.conv_nodes();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = 1e-5;
        for (slot, &node) in conv_nodes.iter().enumerate() {
            for _ in 0..4 {
                let (wi, analytic) = {
                    let Op::Conv { conv, .. } = &g.ops[node] else { unreachable!() };
                    let wi = rng.gen_range(0..conv.w.len());
                    (wi, pg.dw[slot][wi])
                };
                let mut gp = g.clone();
                let mut gm = g.clone();
                if let Op::Conv { conv, .. } = &mut gp.ops[node] {
                    conv.w[wi] += h;
                }
                if let Op::Conv { conv, .. } = &mut gm.ops[node] {
                    conv.w[wi] -= h;
                }
                let fd = (probe_loss(&gp, &x, &probe) - probe_loss(&gm, &x, &probe)) / (2.0 * h);
                let denom = fd.abs().max(analytic.abs()).max(1e-8);
                assert!(
                    ((fd - analytic) / denom).abs() < 1e-6,
                    "node {node} w[{wi}]: fd={fd} analytic={analytic}"
                );
            }
        }
    }

    #[test]
    fn weights_flat_round_trip() {
        let g = tiny_graph(20);
        let flat = g.weights_flat();
        let mut g2 = tiny_graph(21);
        assert_ne!(g2.weights_flat(), flat);
        g2.load_weights_flat(&flat).unwrap();
        assert_eq!(g2.weights_flat(), flat);
        assert!(g2.load_weights_flat(&flat[1..]).is_err());
    }

    #[test]
    fn fingerprint_reflects_topology_not_weights() {
        let a = tiny_graph(1);
        let b = tiny_graph(2);
        assert_eq!(a.fingerprint(), b.fingerprint());
        let mut bld = Graph::builder();
        let x = bld.input();
        bld.conv(x, 2, 4, 3, 1, 1);
        assert_ne!(bld.finish().fingerprint(), a.fingerprint());
    }

    #[test]
    fn forward_is_deterministic() {
        let g = tiny_graph(30);
        let x = rand_tensor(2, 8, 8, 31);
        let a = g.forward(&x);
        let b = g.forward(&x);
        assert_eq!(a[g.output_node()], b[g.output_node()]);
    }
}
