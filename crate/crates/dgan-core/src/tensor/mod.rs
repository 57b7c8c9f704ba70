//! Dense f64 tensors with tape-based reverse-mode differentiation.
//!
//! The op set is exactly what the model needs, nothing more. Ops are methods
//! on [`Tape`]; they record a backward rule when any input is tracked and
//! degrade to plain evaluation otherwise, so inference uses the same code
//! path with [`Tape::inactive`]. Every op scans its output for NaN/Inf and
//! fails with the op's name, which turns silent numeric blowups into
//! diagnosable errors.

use std::sync::Arc;

use crate::error::{Error, Result};

mod conv;
mod lstm;

pub use lstm::{lstm_cell, LstmParams, LstmState};

/// Immutable tensor value. Cloning is cheap (shared data). `node` ties the
/// value to a position on the tape that produced it, if any.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    node: Option<usize>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expect} values, got {}", data.len()),
            ));
        }
        check_finite("tensor", &data)?;
        Ok(Tensor { shape: shape.to_vec(), data: Arc::new(data), node: None })
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], v: f64) -> Tensor {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: Arc::new(vec![v; len]), node: None }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor { shape: vec![1], data: Arc::new(vec![v]), node: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::shape("item", format!("tensor of shape {:?} is not scalar", self.shape)))
        }
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// The same value with no tape attachment.
    pub fn detach(&self) -> Tensor {
        Tensor { shape: self.shape.clone(), data: Arc::clone(&self.data), node: None }
    }

    /// Mutates the underlying data in place (copy-on-write if shared) and
    /// drops any tape attachment, since the recorded value no longer exists.
    pub fn update(&mut self, f: impl FnOnce(&mut [f64])) {
        f(Arc::make_mut(&mut self.data).as_mut_slice());
        self.node = None;
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let preview: Vec<f64> = self.data.iter().copied().take(4).collect();
        let ellipsis = if self.data.len() > 4 { ", ..." } else { "" };
        write!(
            f,
            "Tensor{:?}{}[{}{}]",
            self.shape,
            if self.node.is_some() { "*" } else { "" },
            preview.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(", "),
            ellipsis
        )
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

/// Backward rule: upstream gradient -> one gradient per input, `None` for
/// inputs that are untracked (their slot is skipped during accumulation).
type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    inputs: Vec<Option<usize>>,
    backward: BackwardFn,
}

/// Records operations for one forward pass. One tape per training step;
/// tapes are not shared across threads.
pub struct Tape {
    nodes: Vec<Node>,
    active: bool,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new(), active: true, consumed: false }
    }

    /// A tape that records nothing; ops evaluate forward only.
    pub fn inactive() -> Tape {
        Tape { nodes: Vec::new(), active: false, consumed: false }
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Registers `t` as a differentiable leaf (a parameter). Gradients can
    /// be queried for the returned tensor after `backward`.
    pub fn leaf(&mut self, t: &Tensor) -> Tensor {
        if !self.active {
            return t.detach();
        }
        let id = self.nodes.len();
        self.nodes.push(Node { inputs: Vec::new(), backward: Box::new(|_| Vec::new()) });
        Tensor { shape: t.shape.clone(), data: Arc::clone(&t.data), node: Some(id) }
    }

    /// Emits an op result, recording a node only when the tape is active and
    /// at least one input is tracked. `backward` is only built when needed.
    fn emit(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: Vec<Option<usize>>,
        backward: impl FnOnce() -> BackwardFn,
    ) -> Tensor {
        let node = if self.active && inputs.iter().any(Option::is_some) {
            let id = self.nodes.len();
            self.nodes.push(Node { inputs, backward: backward() });
            Some(id)
        } else {
            None
        };
        Tensor { shape, data: Arc::new(data), node }
    }

    /// Reverse pass from a scalar loss. Returns per-tensor gradients; the
    /// tape cannot run a second pass (values were produced exactly once).
    pub fn backward(&mut self, loss: &Tensor) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if loss.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", loss.shape),
            ));
        }
        let root = loss.node.ok_or(Error::Untracked)?;
        self.consumed = true;
        let mut slots: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        slots.resize_with(self.nodes.len(), || None);
        slots[root] = Some(vec![1.0]);
        for id in (0..=root).rev() {
            if slots[id].is_none() || self.nodes[id].inputs.is_empty() {
                continue;
            }
            let upstream = slots[id].take().expect("checked above");
            let contribs = (self.nodes[id].backward)(&upstream);
            debug_assert_eq!(contribs.len(), self.nodes[id].inputs.len());
            for (input, contrib) in self.nodes[id].inputs.iter().zip(contribs) {
                let (Some(pid), Some(c)) = (input, contrib) else { continue };
                match &mut slots[*pid] {
                    Some(acc) => {
                        debug_assert_eq!(acc.len(), c.len());
                        for (a, v) in acc.iter_mut().zip(&c) {
                            *a += v;
                        }
                    }
                    slot @ None => *slot = Some(c),
                }
            }
            slots[id] = Some(upstream);
        }
        Ok(Gradients { slots })
    }

    // ----- primitive operations -------------------------------------------

    /// Matrix product of `a` `[m,k]` and `b` `[k,n]`.
    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let ([m, ka], [kb, n]) = (dims2("matmul", a)?, dims2("matmul", b)?);
        if ka != kb {
            return Err(Error::shape(
                "matmul",
                format!("inner dims differ: {:?} x {:?}", a.shape, b.shape),
            ));
        }
        let k = ka;
        let (ad, bd) = (Arc::clone(&a.data), Arc::clone(&b.data));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for l in 0..k {
                let av = ad[i * k + l];
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[l * n..(l + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        check_finite("matmul", &out)?;
        let inputs = vec![a.node, b.node];
        let (a_tracked, b_tracked) = (a.node.is_some(), b.node.is_some());
        Ok(self.emit(vec![m, n], out, inputs, move || {
            Box::new(move |g| {
                let da = a_tracked.then(|| {
                    // dA = G . B^T
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for l in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * bd[l * n + j];
                            }
                            da[i * k + l] = s;
                        }
                    }
                    da
                });
                let db = b_tracked.then(|| {
                    // dB = A^T . G
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for l in 0..k {
                            let av = ad[i * k + l];
                            if av == 0.0 {
                                continue;
                            }
                            let grow = &g[i * n..(i + 1) * n];
                            let drow = &mut db[l * n..(l + 1) * n];
                            for (d, gv) in drow.iter_mut().zip(grow) {
                                *d += av * gv;
                            }
                        }
                    }
                    db
                });
                vec![da, db]
            })
        }))
    }

    /// Matrix-vector product: `m` `[r,c]` times `v` `[c]` giving `[r]`.
    pub fn matvec(&mut self, m: &Tensor, v: &Tensor) -> Result<Tensor> {
        let [_, c] = dims2("matvec", m)?;
        let col = self.reshape(v, &[c, 1])?;
        let prod = self.matmul(m, &col)?;
        let rows = prod.shape[0];
        self.reshape(&prod, &[rows])
    }

    /// Elementwise sum. Shapes must match, or one operand broadcasts: a
    /// scalar, or a shape equal to the other's trailing dims (leading 1s).
    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.zip("add", a, b, |x, y| x + y, |_x, _y, g| (g, g))
    }

    /// Elementwise product, same broadcasting as `add`.
    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.zip("mul", a, b, |x, y| x * y, |x, y, g| (g * y, g * x))
    }

    /// Elementwise difference, same broadcasting as `add`.
    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.zip("sub", a, b, |x, y| x - y, |_x, _y, g| (g, -g))
    }

    fn zip(
        &mut self,
        op: &'static str,
        a: &Tensor,
        b: &Tensor,
        f: impl Fn(f64, f64) -> f64,
        df: impl Fn(f64, f64, f64) -> (f64, f64) + Copy + 'static,
    ) -> Result<Tensor> {
        let shape = broadcast_shape(op, &a.shape, &b.shape)?;
        let out_len: usize = shape.iter().product();
        let (ad, bd) = (Arc::clone(&a.data), Arc::clone(&b.data));
        let (alen, blen) = (ad.len(), bd.len());
        let mut out = Vec::with_capacity(out_len);
        for idx in 0..out_len {
            out.push(f(ad[idx % alen], bd[idx % blen]));
        }
        check_finite(op, &out)?;
        let inputs = vec![a.node, b.node];
        let (a_tracked, b_tracked) = (a.node.is_some(), b.node.is_some());
        Ok(self.emit(shape, out, inputs, move || {
            Box::new(move |g| {
                let mut da = a_tracked.then(|| vec![0.0; alen]);
                let mut db = b_tracked.then(|| vec![0.0; blen]);
                for (idx, &gv) in g.iter().enumerate() {
                    let (ga, gb) = df(ad[idx % alen], bd[idx % blen], gv);
                    if let Some(da) = da.as_mut() {
                        da[idx % alen] += ga;
                    }
                    if let Some(db) = db.as_mut() {
                        db[idx % blen] += gb;
                    }
                }
                vec![da, db]
            })
        }))
    }

    /// `a * mul + add` with scalar constants.
    pub fn affine(&mut self, a: &Tensor, mul: f64, add: f64) -> Result<Tensor> {
        self.map("affine", a, move |x| x * mul + add, move |_x, _y| mul)
    }

    pub fn relu(&mut self, a: &Tensor) -> Result<Tensor> {
        self.map("relu", a, |x| x.max(0.0), |x, _y| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&mut self, a: &Tensor, slope: f64) -> Result<Tensor> {
        self.map(
            "leaky_relu",
            a,
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _y| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn tanh(&mut self, a: &Tensor) -> Result<Tensor> {
        self.map("tanh", a, f64::tanh, |_x, y| 1.0 - y * y)
    }

    pub fn sigmoid(&mut self, a: &Tensor) -> Result<Tensor> {
        self.map("sigmoid", a, |x| 1.0 / (1.0 + (-x).exp()), |_x, y| y * (1.0 - y))
    }

    /// Square root. The derivative denominator is floored at 1e-12 so a
    /// zero-length residual yields a zero (not NaN) gradient.
    pub fn sqrt(&mut self, a: &Tensor) -> Result<Tensor> {
        self.map("sqrt", a, f64::sqrt, |_x, y| 0.5 / y.max(1e-12))
    }

    pub fn ln(&mut self, a: &Tensor) -> Result<Tensor> {
        self.map("ln", a, f64::ln, |x, _y| 1.0 / x)
    }

    pub fn clamp_min(&mut self, a: &Tensor, min: f64) -> Result<Tensor> {
        self.map("clamp_min", a, move |x| x.max(min), move |x, _y| if x > min { 1.0 } else { 0.0 })
    }

    fn map(
        &mut self,
        op: &'static str,
        a: &Tensor,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + Copy + 'static,
    ) -> Result<Tensor> {
        let out: Vec<f64> = a.data.iter().map(|&x| f(x)).collect();
        check_finite(op, &out)?;
        let shape = a.shape.clone();
        let inputs = vec![a.node];
        let xd = Arc::clone(&a.data);
        let yd = Arc::new(out.clone());
        Ok(self.emit(shape, out, inputs, move || {
            Box::new(move |g| {
                let da = g
                    .iter()
                    .zip(xd.iter().zip(yd.iter()))
                    .map(|(&gv, (&x, &y))| gv * df(x, y))
                    .collect();
                vec![Some(da)]
            })
        }))
    }

    /// Softmax over the last dimension, max-subtracted for stability.
    pub fn softmax(&mut self, a: &Tensor) -> Result<Tensor> {
        let last = *a.shape.last().ok_or_else(|| Error::shape("softmax", "rank 0".to_string()))?;
        if last == 0 {
            return Err(Error::shape("softmax", "empty last dimension".to_string()));
        }
        let rows = a.data.len() / last;
        let mut out = vec![0.0; a.data.len()];
        for r in 0..rows {
            let x = &a.data[r * last..(r + 1) * last];
            let o = &mut out[r * last..(r + 1) * last];
            let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (oi, &xi) in o.iter_mut().zip(x) {
                *oi = (xi - m).exp();
                z += *oi;
            }
            for oi in o.iter_mut() {
                *oi /= z;
            }
        }
        check_finite("softmax", &out)?;
        let shape = a.shape.clone();
        let inputs = vec![a.node];
        let yd = Arc::new(out.clone());
        Ok(self.emit(shape, out, inputs, move || {
            Box::new(move |g| {
                let mut da = vec![0.0; yd.len()];
                for r in 0..rows {
                    let y = &yd[r * last..(r + 1) * last];
                    let gr = &g[r * last..(r + 1) * last];
                    let dot: f64 = y.iter().zip(gr).map(|(&yi, &gi)| yi * gi).sum();
                    for ((di, &yi), &gi) in
                        da[r * last..(r + 1) * last].iter_mut().zip(y).zip(gr)
                    {
                        *di = yi * (gi - dot);
                    }
                }
                vec![Some(da)]
            })
        }))
    }

    /// Concatenation along the last dimension; leading dimensions must match.
    pub fn concat(&mut self, parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs".to_string()));
        }
        let rank = parts[0].shape.len();
        if rank == 0 {
            return Err(Error::shape("concat", "rank 0 input".to_string()));
        }
        let lead = &parts[0].shape[..rank - 1];
        let mut lasts = Vec::with_capacity(parts.len());
        for p in parts {
            if p.shape.len() != rank || &p.shape[..rank - 1] != lead {
                return Err(Error::shape(
                    "concat",
                    format!("incompatible shapes {:?} and {:?}", parts[0].shape, p.shape),
                ));
            }
            lasts.push(*p.shape.last().expect("rank >= 1"));
        }
        let rows: usize = lead.iter().product();
        let total: usize = lasts.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&lasts) {
                out.extend_from_slice(&p.data[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let inputs: Vec<Option<usize>> = parts.iter().map(|p| p.node).collect();
        let tracked: Vec<bool> = parts.iter().map(|p| p.node.is_some()).collect();
        let widths = lasts.clone();
        Ok(self.emit(shape, out, inputs, move || {
            Box::new(move |g| {
                let mut grads: Vec<Option<Vec<f64>>> = tracked
                    .iter()
                    .zip(&widths)
                    .map(|(&t, &w)| t.then(|| Vec::with_capacity(rows * w)))
                    .collect();
                for r in 0..rows {
                    let mut off = r * total;
                    for (slot, &w) in grads.iter_mut().zip(&widths) {
                        if let Some(v) = slot.as_mut() {
                            v.extend_from_slice(&g[off..off + w]);
                        }
                        off += w;
                    }
                }
                grads
            })
        }))
    }

    /// Slice `[start, start+len)` of the last dimension.
    pub fn slice_last(&mut self, a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        let rank = a.shape.len();
        if rank == 0 {
            return Err(Error::shape("slice", "rank 0 input".to_string()));
        }
        let last = a.shape[rank - 1];
        if start + len > last {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{} exceeds last dim {last}", start + len),
            ));
        }
        let rows = a.data.len() / last;
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&a.data[r * last + start..r * last + start + len]);
        }
        let mut shape = a.shape.clone();
        shape[rank - 1] = len;
        let inputs = vec![a.node];
        let full = a.data.len();
        Ok(self.emit(shape, out, inputs, move || {
            Box::new(move |g| {
                let mut da = vec![0.0; full];
                for r in 0..rows {
                    da[r * last + start..r * last + start + len]
                        .copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                vec![Some(da)]
            })
        }))
    }

    /// Same data, new shape (no copy).
    pub fn reshape(&mut self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        let expect: usize = shape.iter().product();
        if expect != a.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", a.shape),
            ));
        }
        let node = if self.active && a.node.is_some() {
            let id = self.nodes.len();
            self.nodes.push(Node {
                inputs: vec![a.node],
                backward: Box::new(|g| vec![Some(g.to_vec())]),
            });
            Some(id)
        } else {
            None
        };
        Ok(Tensor { shape: shape.to_vec(), data: Arc::clone(&a.data), node })
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, a: &Tensor) -> Result<Tensor> {
        let s: f64 = a.data.iter().sum();
        check_finite("sum", std::slice::from_ref(&s))?;
        let n = a.data.len();
        let inputs = vec![a.node];
        Ok(self.emit(vec![1], vec![s], inputs, move || {
            Box::new(move |g| vec![Some(vec![g[0]; n])])
        }))
    }

    /// Mean of all elements, as a `[1]` tensor.
    pub fn mean(&mut self, a: &Tensor) -> Result<Tensor> {
        let n = a.data.len().max(1) as f64;
        let s = self.sum(a)?;
        self.affine(&s, 1.0 / n, 0.0)
    }

    /// Dot product of two equal-length vectors, as a `[1]` tensor.
    pub fn dot(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape != b.shape {
            return Err(Error::shape(
                "dot",
                format!("shapes differ: {:?} vs {:?}", a.shape, b.shape),
            ));
        }
        let p = self.mul(a, b)?;
        self.sum(&p)
    }

    /// Stacks 1-D tensors of equal length into a `[n, d]` matrix.
    pub fn stack_rows(&mut self, rows: &[&Tensor]) -> Result<Tensor> {
        if rows.is_empty() {
            return Err(Error::shape("stack_rows", "no inputs".to_string()));
        }
        let d = rows[0].data.len();
        for r in rows {
            if r.shape.len() != 1 || r.data.len() != d {
                return Err(Error::shape(
                    "stack_rows",
                    format!("expected vectors of length {d}, got shape {:?}", r.shape),
                ));
            }
        }
        let n = rows.len();
        let mut out = Vec::with_capacity(n * d);
        for r in rows {
            out.extend_from_slice(&r.data);
        }
        let inputs: Vec<Option<usize>> = rows.iter().map(|r| r.node).collect();
        let tracked: Vec<bool> = rows.iter().map(|r| r.node.is_some()).collect();
        Ok(self.emit(vec![n, d], out, inputs, move || {
            Box::new(move |g| {
                tracked
                    .iter()
                    .enumerate()
                    .map(|(i, &t)| t.then(|| g[i * d..(i + 1) * d].to_vec()))
                    .collect()
            })
        }))
    }
}

/// Per-node gradients produced by one backward pass.
pub struct Gradients {
    slots: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `t`. `None` when `t` is untracked or no
    /// gradient flowed to it.
    pub fn of(&self, t: &Tensor) -> Option<&[f64]> {
        self.slots.get(t.node?)?.as_deref()
    }
}

fn dims2(op: &'static str, t: &Tensor) -> Result<[usize; 2]> {
    match t.shape[..] {
        [a, b] => Ok([a, b]),
        _ => Err(Error::shape(op, format!("expected rank 2, got shape {:?}", t.shape))),
    }
}

/// Result shape for elementwise ops. Equal shapes pass through; otherwise
/// the smaller operand must be a scalar or match the larger's trailing
/// dimensions (leading dimensions of size 1), and it cycles over the output.
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b {
        return Ok(a.to_vec());
    }
    let (big, small) = if a.iter().product::<usize>() >= b.iter().product::<usize>() {
        (a, b)
    } else {
        (b, a)
    };
    let small_len: usize = small.iter().product();
    if small_len == 1 {
        return Ok(big.to_vec());
    }
    let trimmed: &[usize] = {
        let mut s = small;
        while s.first() == Some(&1) {
            s = &s[1..];
        }
        s
    };
    if big.len() >= trimmed.len() && big.ends_with(trimmed) {
        Ok(big.to_vec())
    } else {
        Err(Error::shape(op, format!("shapes {a:?} and {b:?} do not broadcast")))
    }
}
