use super::{Grads, ParamId, ParamSet};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    /// `W x (+ b)` with W stored row-major as [out, in].
    Linear { w: ParamId, b: Option<ParamId>, x: Var },
    Row { table: ParamId, row: usize },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Dot(Var, Var),
    Softmax(Var),
    WeightedSum { weights: Var, items: Vec<Var> },
    Mean(Vec<Var>),
    Select { x: Var, indices: Vec<usize> },
    MaskedCe { logits: Var, probs: Vec<f64>, target: usize },
    /// Fused LSTM cell; the node value is `[h ‖ c]`.
    LstmStep {
        w: ParamId,
        b: ParamId,
        x: Var,
        h: Var,
        c: Var,
        /// Activated gates (i, f, g, o) followed by tanh(c).
        cache: Vec<f64>,
    },
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Records one forward pass against a borrowed parameter set.
pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn len(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// A constant input; no gradient flows out of it.
    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.input(vec![0.0; n])
    }

    /// The whole parameter as a flat vector.
    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.params.value(id).to_vec();
        self.push(value, Op::Param(id))
    }

    /// Row `row` of a 2-D table (embedding lookup).
    pub fn row(&mut self, table: ParamId, row: usize) -> Var {
        let value = self.params.get(table).row(row).to_vec();
        self.push(value, Op::Row { table, row })
    }

    pub fn linear(&mut self, w: ParamId, b: Option<ParamId>, x: Var) -> Result<Var> {
        let wp = self.params.get(w);
        let (out, inp) = (wp.rows(), wp.cols());
        let xv = &self.nodes[x.0].value;
        if xv.len() != inp {
            return Err(Error::Shape(format!(
                "{}: expected input of length {inp}, got {}",
                wp.name,
                xv.len()
            )));
        }
        let mut y: Vec<f64> = match b {
            Some(b) => {
                let bv = self.params.value(b);
                if bv.len() != out {
                    return Err(Error::Shape(format!(
                        "{}: bias length {} for {out} outputs",
                        self.params.get(b).name,
                        bv.len()
                    )));
                }
                bv.to_vec()
            }
            None => vec![0.0; out],
        };
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &wp.value[o * inp..(o + 1) * inp];
            *yo += row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(self.push(y, Op::Linear { w, b, x }))
    }

    fn check_same(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (la, lb) = (self.len(a), self.len(b));
        if la != lb {
            return Err(Error::Shape(format!("{what}: lengths {la} and {lb}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "add")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "mul")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).iter().map(|x| x * s).collect();
        self.push(value, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push(value, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        self.push(value, Op::Relu(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut value = Vec::with_capacity(parts.iter().map(|&p| self.len(p)).sum());
        for &p in parts {
            value.extend_from_slice(self.value(p));
        }
        self.push(value, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        if start + len > self.len(x) {
            return Err(Error::Shape(format!(
                "slice {start}..{} of length {}",
                start + len,
                self.len(x)
            )));
        }
        let value = self.value(x)[start..start + len].to_vec();
        Ok(self.push(value, Op::Slice { x, start }))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "dot")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        Ok(self.push(vec![value], Op::Dot(a, b)))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax(self.value(a));
        self.push(value, Op::Softmax(a))
    }

    /// Σ_i weights[i] · items[i].
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        if self.len(weights) != items.len() || items.is_empty() {
            return Err(Error::Shape(format!(
                "weighted_sum: {} weights for {} items",
                self.len(weights),
                items.len()
            )));
        }
        let n = self.len(items[0]);
        let mut value = vec![0.0; n];
        for (i, &item) in items.iter().enumerate() {
            if self.len(item) != n {
                return Err(Error::Shape("weighted_sum: ragged items".into()));
            }
            let w = self.value(weights)[i];
            value.iter_mut().zip(self.value(item)).for_each(|(v, x)| *v += w * x);
        }
        Ok(self.push(
            value,
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
        ))
    }

    /// Element-wise mean; a zero vector of length `n` when `items` is empty.
    pub fn mean(&mut self, items: &[Var], n: usize) -> Result<Var> {
        if items.is_empty() {
            return Ok(self.zeros(n));
        }
        let mut value = vec![0.0; n];
        for &item in items {
            if self.len(item) != n {
                return Err(Error::Shape(format!("mean: item of length {}, want {n}", self.len(item))));
            }
            add_into(&mut value, self.value(item));
        }
        let inv = 1.0 / items.len() as f64;
        value.iter_mut().for_each(|v| *v *= inv);
        Ok(self.push(value, Op::Mean(items.to_vec())))
    }

    pub fn select(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let n = self.len(x);
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::Shape(format!("select index {bad} of length {n}")));
        }
        let value = indices.iter().map(|&i| self.value(x)[i]).collect();
        Ok(self.push(
            value,
            Op::Select {
                x,
                indices: indices.to_vec(),
            },
        ))
    }

    /// −ln softmax(logits | mask)[target]. Masked-out entries get zero gradient.
    pub fn masked_softmax_ce(&mut self, logits: Var, mask: &[bool], target: usize) -> Result<Var> {
        let z = self.value(logits);
        if mask.len() != z.len() {
            return Err(Error::Shape(format!("mask of {} for {} logits", mask.len(), z.len())));
        }
        if mask.iter().filter(|&&m| m).count() < 2 {
            return Err(Error::InvalidArgument("mask must select at least 2 entries".into()));
        }
        if !mask.get(target).copied().unwrap_or(false) {
            return Err(Error::InvalidArgument(format!("target {target} is masked out")));
        }
        let probs = masked_softmax(z, mask);
        let loss = -probs[target].ln();
        Ok(self.push(vec![loss], Op::MaskedCe { logits, probs, target }))
    }

    /// One LSTM step; returns `[h ‖ c]` (length 2·hidden).
    pub fn lstm_step(&mut self, w: ParamId, b: ParamId, x: Var, h: Var, c: Var) -> Result<Var> {
        let wp = self.params.get(w);
        let hidden = self.len(h);
        let inp = self.len(x);
        if wp.rows() != 4 * hidden || wp.cols() != inp + hidden || self.len(c) != hidden {
            return Err(Error::Shape(format!(
                "{}: shape {:?} for input {inp}, hidden {hidden}",
                wp.name, wp.shape
            )));
        }
        let bv = self.params.value(b);
        let xh: Vec<f64> = self.value(x).iter().chain(self.value(h)).copied().collect();
        let cols = inp + hidden;
        let mut cache = vec![0.0; 5 * hidden];
        for r in 0..4 * hidden {
            let row = &wp.value[r * cols..(r + 1) * cols];
            let z = bv[r] + row.iter().zip(&xh).map(|(a, b)| a * b).sum::<f64>();
            cache[r] = if r / hidden == 2 { z.tanh() } else { sigmoid(z) };
        }
        let mut value = vec![0.0; 2 * hidden];
        let c_prev = self.value(c);
        for j in 0..hidden {
            let (i, f, g, o) = (
                cache[j],
                cache[hidden + j],
                cache[2 * hidden + j],
                cache[3 * hidden + j],
            );
            let c_new = f * c_prev[j] + i * g;
            let tc = c_new.tanh();
            cache[4 * hidden + j] = tc;
            value[j] = o * tc;
            value[hidden + j] = c_new;
        }
        Ok(self.push(value, Op::LstmStep { w, b, x, h, c, cache }))
    }

    /// Reverse sweep from a scalar node; returns the parameter gradients.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut grads = Grads::for_params(self.params);
        let mut adj: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(vec![1.0; self.len(loss)]);

        fn acc(adj: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut Vec<f64> {
            adj[v.0].get_or_insert_with(|| vec![0.0; n])
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => add_into(grads.slot(*id, g.len()), &g),
                Op::Row { table, row } => {
                    let p = self.params.get(*table);
                    let cols = p.cols();
                    let slot = grads.slot(*table, p.len());
                    add_into(&mut slot[row * cols..(row + 1) * cols], &g);
                }
                Op::Linear { w, b, x } => {
                    let wp = self.params.get(*w);
                    let (out, inp) = (wp.rows(), wp.cols());
                    let xv = &self.nodes[x.0].value;
                    {
                        let gw = grads.slot(*w, wp.len());
                        for o in 0..out {
                            if g[o] != 0.0 {
                                let row = &mut gw[o * inp..(o + 1) * inp];
                                row.iter_mut().zip(xv).for_each(|(d, xi)| *d += g[o] * xi);
                            }
                        }
                    }
                    if let Some(b) = b {
                        add_into(grads.slot(*b, out), &g);
                    }
                    let gx = acc(&mut adj, *x, inp);
                    for o in 0..out {
                        if g[o] != 0.0 {
                            let row = &wp.value[o * inp..(o + 1) * inp];
                            gx.iter_mut().zip(row).for_each(|(d, wi)| *d += g[o] * wi);
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut adj, *a, g.len()), &g);
                    add_into(acc(&mut adj, *b, g.len()), &g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let ga: Vec<f64> = g.iter().zip(bv).map(|(g, b)| g * b).collect();
                    let gb: Vec<f64> = g.iter().zip(av).map(|(g, a)| g * a).collect();
                    add_into(acc(&mut adj, *a, g.len()), &ga);
                    add_into(acc(&mut adj, *b, g.len()), &gb);
                }
                Op::Scale(a, s) => {
                    let ga = acc(&mut adj, *a, g.len());
                    ga.iter_mut().zip(&g).for_each(|(d, g)| *d += s * g);
                }
                Op::Tanh(a) => {
                    let ga = acc(&mut adj, *a, g.len());
                    for ((d, g), y) in ga.iter_mut().zip(&g).zip(&node.value) {
                        *d += g * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    let ga = acc(&mut adj, *a, g.len());
                    for ((d, g), y) in ga.iter_mut().zip(&g).zip(&node.value) {
                        *d += g * y * (1.0 - y);
                    }
                }
                Op::Relu(a) => {
                    let ga = acc(&mut adj, *a, g.len());
                    for ((d, g), y) in ga.iter_mut().zip(&g).zip(&node.value) {
                        if *y > 0.0 {
                            *d += g;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.len(p);
                        add_into(acc(&mut adj, p, n), &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::Slice { x, start } => {
                    let n = self.len(*x);
                    add_into(&mut acc(&mut adj, *x, n)[*start..*start + g.len()], &g);
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let ga = acc(&mut adj, *a, av.len());
                    ga.iter_mut().zip(bv).for_each(|(d, b)| *d += g[0] * b);
                    let gb = acc(&mut adj, *b, bv.len());
                    gb.iter_mut().zip(av).for_each(|(d, a)| *d += g[0] * a);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                    let ga = acc(&mut adj, *a, y.len());
                    for ((d, g), y) in ga.iter_mut().zip(&g).zip(y) {
                        *d += y * (g - dot);
                    }
                }
                Op::WeightedSum { weights, items } => {
                    let wv = &self.nodes[weights.0].value;
                    let gw: Vec<f64> = items
                        .iter()
                        .map(|&it| g.iter().zip(&self.nodes[it.0].value).map(|(g, x)| g * x).sum())
                        .collect();
                    add_into(acc(&mut adj, *weights, wv.len()), &gw);
                    for (i, &it) in items.iter().enumerate() {
                        let gi = acc(&mut adj, it, g.len());
                        gi.iter_mut().zip(&g).for_each(|(d, g)| *d += wv[i] * g);
                    }
                }
                Op::Mean(items) => {
                    let inv = 1.0 / items.len() as f64;
                    for &it in items {
                        let gi = acc(&mut adj, it, g.len());
                        gi.iter_mut().zip(&g).for_each(|(d, g)| *d += inv * g);
                    }
                }
                Op::Select { x, indices } => {
                    let gx = acc(&mut adj, *x, self.len(*x));
                    for (k, &i) in indices.iter().enumerate() {
                        gx[i] += g[k];
                    }
                }
                Op::MaskedCe { logits, probs, target } => {
                    let gz = acc(&mut adj, *logits, probs.len());
                    for (i, (d, p)) in gz.iter_mut().zip(probs).enumerate() {
                        let y = if i == *target { 1.0 } else { 0.0 };
                        *d += g[0] * (p - y);
                    }
                }
                Op::LstmStep { w, b, x, h, c, cache } => {
                    let hidden = self.len(*h);
                    let inp = self.len(*x);
                    let cols = inp + hidden;
                    let c_prev = &self.nodes[c.0].value;
                    let (dh, dc) = g.split_at(hidden);
                    let mut dz = vec![0.0; 4 * hidden];
                    let mut dc_prev = vec![0.0; hidden];
                    for j in 0..hidden {
                        let (i, f, gg, o, tc) = (
                            cache[j],
                            cache[hidden + j],
                            cache[2 * hidden + j],
                            cache[3 * hidden + j],
                            cache[4 * hidden + j],
                        );
                        let dct = dc[j] + dh[j] * o * (1.0 - tc * tc);
                        dz[j] = dct * gg * i * (1.0 - i);
                        dz[hidden + j] = dct * c_prev[j] * f * (1.0 - f);
                        dz[2 * hidden + j] = dct * i * (1.0 - gg * gg);
                        dz[3 * hidden + j] = dh[j] * tc * o * (1.0 - o);
                        dc_prev[j] = dct * f;
                    }
                    let wp = self.params.get(*w);
                    let xh: Vec<f64> = self.nodes[x.0]
                        .value
                        .iter()
                        .chain(&self.nodes[h.0].value)
                        .copied()
                        .collect();
                    {
                        let gw = grads.slot(*w, wp.len());
                        for r in 0..4 * hidden {
                            if dz[r] != 0.0 {
                                let row = &mut gw[r * cols..(r + 1) * cols];
                                row.iter_mut().zip(&xh).for_each(|(d, v)| *d += dz[r] * v);
                            }
                        }
                    }
                    add_into(grads.slot(*b, 4 * hidden), &dz);
                    let mut dxh = vec![0.0; cols];
                    for r in 0..4 * hidden {
                        if dz[r] != 0.0 {
                            let row = &wp.value[r * cols..(r + 1) * cols];
                            dxh.iter_mut().zip(row).for_each(|(d, wv)| *d += dz[r] * wv);
                        }
                    }
                    add_into(acc(&mut adj, *x, inp), &dxh[..inp]);
                    add_into(acc(&mut adj, *h, hidden), &dxh[inp..]);
                    add_into(acc(&mut adj, *c, hidden), &dc_prev);
                }
            }
        }
        grads
    }
}

/// Numerically stable softmax.
pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax restricted to masked-in entries; masked-out entries are 0.
pub(crate) fn masked_softmax(z: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = z
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z
        .iter()
        .zip(mask)
        .map(|(v, &m)| if m { (v - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
