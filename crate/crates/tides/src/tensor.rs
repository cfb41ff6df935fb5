//! Dense 64-bit tensors with reverse-mode automatic differentiation.
//!
//! A [`Tape`] owns one computation context: tensors are created on it,
//! operations record pullback closures, and a single [`Tape::backward`]
//! call replays the records in reverse to accumulate gradients. The tape
//! is single-use; build a fresh one per training step.
//!
//! ```
//! use tides::tensor::Tape;
//!
//! let tape = Tape::new();
//! let w = tape.var(vec![1.0, 2.0], &[2]);
//! let loss = w.mul(&w).unwrap().sum();
//! tape.backward(&loss).unwrap();
//! assert_eq!(w.grad().unwrap(), vec![2.0, 4.0]);
//! ```

use std::cell::RefCell;
use std::rc::Rc;

use statrs::function::erf::erf;

use crate::error::{Result, TidesError};

/// Additive logit used to block attention positions.
pub const MASK_VALUE: f64 = -1e9;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.3989422804014327;

/// Standard normal CDF.
fn phi(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / SQRT_2))
}

type Pullback = Box<dyn Fn(&[f64]) -> Vec<(usize, Vec<f64>)>>;

struct Node {
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    pullback: Option<Pullback>,
}

struct TapeInner {
    nodes: Vec<Node>,
    consumed: bool,
}

/// One isolated forward/backward context.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Dense row-major tensor registered on a tape.
#[derive(Clone)]
pub struct Tensor {
    id: usize,
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    tape: Rc<RefCell<TapeInner>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                consumed: false,
            })),
        }
    }

    /// Leaf tensor that accumulates gradients.
    pub fn var(&self, data: Vec<f64>, shape: &[usize]) -> Tensor {
        self.leaf(data, shape, true)
    }

    /// Leaf tensor excluded from gradient flow.
    pub fn constant(&self, data: Vec<f64>, shape: &[usize]) -> Tensor {
        self.leaf(data, shape, false)
    }

    fn leaf(&self, data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            requires_grad,
            grad: None,
            pullback: None,
        });
        Tensor {
            id,
            shape: shape.to_vec(),
            data: Rc::new(data),
            tape: Rc::clone(&self.inner),
        }
    }

    /// Reverse sweep from a scalar loss. Consumes the tape: a second call
    /// is a contract error.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if loss.data.len() != 1 {
            return Err(TidesError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape
            )));
        }
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(TidesError::Contract(
                "tape already consumed by a previous backward call".into(),
            ));
        }
        inner.consumed = true;
        let n = inner.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if let Some(pb) = inner.nodes[id].pullback.as_ref() {
                for (pid, contrib) in pb(&g) {
                    if !inner.nodes[pid].requires_grad {
                        continue;
                    }
                    match grads[pid].as_mut() {
                        Some(acc) => {
                            for (a, c) in acc.iter_mut().zip(&contrib) {
                                *a += c;
                            }
                        }
                        None => grads[pid] = Some(contrib),
                    }
                }
            }
            // keep leaf and requested gradients readable after the sweep
            if inner.nodes[id].requires_grad {
                let node = &mut inner.nodes[id];
                match node.grad.as_mut() {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(&g) {
                            *a += c;
                        }
                    }
                    None => node.grad = Some(g),
                }
            } else {
                grads[id] = None;
            }
        }
        Ok(())
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor").field("shape", &self.shape).field("data", &self.data).finish()
    }
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.borrow().nodes[self.id].requires_grad
    }

    /// Accumulated gradient, if backward has reached this tensor.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.tape.borrow().nodes[self.id].grad.clone()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// The tape this tensor is registered on.
    pub fn tape(&self) -> Tape {
        Tape { inner: Rc::clone(&self.tape) }
    }

    fn same_tape(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.tape, &other.tape)
    }

    fn record(&self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, pullback: Pullback) -> Tensor {
        let mut inner = self.tape.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            requires_grad,
            grad: None,
            pullback: if requires_grad { Some(pullback) } else { None },
        });
        Tensor {
            id,
            shape,
            data: Rc::new(data),
            tape: Rc::clone(&self.tape),
        }
    }

    fn check_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if !self.same_tape(other) {
            return Err(TidesError::Contract(format!("{op}: tensors on different tapes")));
        }
        if self.shape != other.shape {
            return Err(TidesError::Shape {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "add")?;
        let data: Vec<f64> = self.data.iter().zip(other.data.iter()).map(|(a, b)| a + b).collect();
        let (ia, ib) = (self.id, other.id);
        Ok(self.record(
            data,
            self.shape.clone(),
            self.requires_grad() || other.requires_grad(),
            Box::new(move |g| vec![(ia, g.to_vec()), (ib, g.to_vec())]),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "sub")?;
        let data: Vec<f64> = self.data.iter().zip(other.data.iter()).map(|(a, b)| a - b).collect();
        let (ia, ib) = (self.id, other.id);
        Ok(self.record(
            data,
            self.shape.clone(),
            self.requires_grad() || other.requires_grad(),
            Box::new(move |g| {
                vec![(ia, g.to_vec()), (ib, g.iter().map(|v| -v).collect())]
            }),
        ))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "mul")?;
        let data: Vec<f64> = self.data.iter().zip(other.data.iter()).map(|(a, b)| a * b).collect();
        let (ia, ib) = (self.id, other.id);
        let (da, db) = (Rc::clone(&self.data), Rc::clone(&other.data));
        Ok(self.record(
            data,
            self.shape.clone(),
            self.requires_grad() || other.requires_grad(),
            Box::new(move |g| {
                vec![
                    (ia, g.iter().zip(db.iter()).map(|(g, b)| g * b).collect()),
                    (ib, g.iter().zip(da.iter()).map(|(g, a)| g * a).collect()),
                ]
            }),
        ))
    }

    pub fn scale(&self, s: f64) -> Tensor {
        let data: Vec<f64> = self.data.iter().map(|v| v * s).collect();
        let ia = self.id;
        self.record(
            data,
            self.shape.clone(),
            self.requires_grad(),
            Box::new(move |g| vec![(ia, g.iter().map(|v| v * s).collect())]),
        )
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        let data: Vec<f64> = self.data.iter().map(|v| v + s).collect();
        let ia = self.id;
        self.record(
            data,
            self.shape.clone(),
            self.requires_grad(),
            Box::new(move |g| vec![(ia, g.to_vec())]),
        )
    }

    /// 2-D matrix product `[m×k]·[k×n] -> [m×n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if !self.same_tape(other) {
            return Err(TidesError::Contract("matmul: tensors on different tapes".into()));
        }
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[0] {
            return Err(TidesError::Shape {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let n = other.shape[1];
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                let drow = &mut data[i * n..(i + 1) * n];
                for j in 0..n {
                    drow[j] += a * brow[j];
                }
            }
        }
        let (ia, ib) = (self.id, other.id);
        let (da, db) = (Rc::clone(&self.data), Rc::clone(&other.data));
        Ok(self.record(
            data,
            vec![m, n],
            self.requires_grad() || other.requires_grad(),
            Box::new(move |g| {
                // dA = G·Bᵀ, dB = Aᵀ·G
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * db[p * n + j];
                        }
                        ga[i * k + p] = s;
                    }
                }
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let a = da[i * k + p];
                        if a == 0.0 {
                            continue;
                        }
                        let grow = &g[i * n..(i + 1) * n];
                        let brow = &mut gb[p * n..(p + 1) * n];
                        for j in 0..n {
                            brow[j] += a * grow[j];
                        }
                    }
                }
                vec![(ia, ga), (ib, gb)]
            }),
        ))
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(TidesError::Shape {
                op: "transpose",
                lhs: self.shape.clone(),
                rhs: vec![],
            });
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = self.data[i * n + j];
            }
        }
        let ia = self.id;
        Ok(self.record(
            data,
            vec![n, m],
            self.requires_grad(),
            Box::new(move |g| {
                let mut gi = vec![0.0; m * n];
                for j in 0..n {
                    for i in 0..m {
                        gi[i * n + j] = g[j * m + i];
                    }
                }
                vec![(ia, gi)]
            }),
        ))
    }

    /// Row-stabilized softmax over the trailing axis.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let n = *self.shape.last().ok_or_else(|| {
            TidesError::Validation("softmax_rows on rank-0 tensor".into())
        })?;
        let rows = self.data.len() / n;
        let mut data = vec![0.0; self.data.len()];
        for r in 0..rows {
            let src = &self.data[r * n..(r + 1) * n];
            let max = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(TidesError::Numeric(
                    "softmax_rows: a row is entirely -inf".into(),
                ));
            }
            let dst = &mut data[r * n..(r + 1) * n];
            let mut sum = 0.0;
            for j in 0..n {
                let e = (src[j] - max).exp();
                dst[j] = e;
                sum += e;
            }
            for v in dst.iter_mut() {
                *v /= sum;
            }
        }
        let ia = self.id;
        let out = Rc::new(data);
        let out_for_grad = Rc::clone(&out);
        let mut inner = self.tape.borrow_mut();
        let id = inner.nodes.len();
        let requires_grad = inner.nodes[self.id].requires_grad;
        inner.nodes.push(Node {
            requires_grad,
            grad: None,
            pullback: if requires_grad {
                Some(Box::new(move |g: &[f64]| {
                    let s = &out_for_grad;
                    let mut gi = vec![0.0; s.len()];
                    let rows = s.len() / n;
                    for r in 0..rows {
                        let sr = &s[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = sr.iter().zip(gr).map(|(s, g)| s * g).sum();
                        for j in 0..n {
                            gi[r * n + j] = sr[j] * (gr[j] - dot);
                        }
                    }
                    vec![(ia, gi)]
                }))
            } else {
                None
            },
        });
        Ok(Tensor {
            id,
            shape: self.shape.clone(),
            data: out,
            tape: Rc::clone(&self.tape),
        })
    }

    /// Per-trailing-slice standardization followed by an affine map.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let d = *self.shape.last().ok_or_else(|| {
            TidesError::Validation("layer_norm on rank-0 tensor".into())
        })?;
        if gain.shape != [d] || bias.shape != [d] {
            return Err(TidesError::Shape {
                op: "layer_norm",
                lhs: self.shape.clone(),
                rhs: gain.shape.clone(),
            });
        }
        if eps <= 0.0 {
            return Err(TidesError::Validation("layer_norm: eps must be > 0".into()));
        }
        let rows = self.data.len() / d;
        let mut data = vec![0.0; self.data.len()];
        let mut normed = vec![0.0; self.data.len()];
        let mut inv_sigma = vec![0.0; rows];
        for r in 0..rows {
            let src = &self.data[r * d..(r + 1) * d];
            let mean = src.iter().sum::<f64>() / d as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_sigma[r] = inv;
            for j in 0..d {
                let y = (src[j] - mean) * inv;
                normed[r * d + j] = y;
                data[r * d + j] = y * gain.data[j] + bias.data[j];
            }
        }
        let (ix, ig, ib) = (self.id, gain.id, bias.id);
        let gain_data = Rc::clone(&gain.data);
        let normed = Rc::new(normed);
        let normed_g = Rc::clone(&normed);
        let req = self.requires_grad() || gain.requires_grad() || bias.requires_grad();
        Ok(self.record(
            data,
            self.shape.clone(),
            req,
            Box::new(move |g| {
                let rows = normed_g.len() / d;
                let mut gx = vec![0.0; normed_g.len()];
                let mut ggain = vec![0.0; d];
                let mut gbias = vec![0.0; d];
                for r in 0..rows {
                    let yr = &normed_g[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    // h = g∘gain; dx = inv_sigma (h - mean(h) - y·mean(h∘y))
                    let h: Vec<f64> = gr.iter().zip(gain_data.iter()).map(|(g, w)| g * w).collect();
                    let mh = h.iter().sum::<f64>() / d as f64;
                    let mhy = h.iter().zip(yr).map(|(h, y)| h * y).sum::<f64>() / d as f64;
                    for j in 0..d {
                        gx[r * d + j] = inv_sigma[r] * (h[j] - mh - yr[j] * mhy);
                        ggain[j] += gr[j] * yr[j];
                        gbias[j] += gr[j];
                    }
                }
                vec![(ix, gx), (ig, ggain), (ib, gbias)]
            }),
        ))
    }

    /// Exact GELU, `x·Φ(x)` with the Gaussian CDF.
    pub fn gelu(&self) -> Tensor {
        let data: Vec<f64> = self.data.iter().map(|&x| x * phi(x)).collect();
        let ia = self.id;
        let da = Rc::clone(&self.data);
        self.record(
            data,
            self.shape.clone(),
            self.requires_grad(),
            Box::new(move |g| {
                let gi = g
                    .iter()
                    .zip(da.iter())
                    .map(|(&g, &x)| {
                        let pdf = INV_SQRT_2PI * (-0.5 * x * x).exp();
                        g * (phi(x) + x * pdf)
                    })
                    .collect();
                vec![(ia, gi)]
            }),
        )
    }

    /// Sum of all entries, as a scalar tensor.
    pub fn sum(&self) -> Tensor {
        let s: f64 = self.data.iter().sum();
        let ia = self.id;
        let len = self.data.len();
        self.record(
            vec![s],
            vec![1],
            self.requires_grad(),
            Box::new(move |g| vec![(ia, vec![g[0]; len])]),
        )
    }

    /// Mean of all entries, as a scalar tensor.
    pub fn mean(&self) -> Tensor {
        self.sum().scale(1.0 / self.data.len() as f64)
    }

    /// Concatenate along axis 0 (rows) or 1 (columns); all inputs 2-D.
    pub fn concat(tensors: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors
            .first()
            .ok_or_else(|| TidesError::Validation("concat of zero tensors".into()))?;
        if axis > 1 || first.shape.len() != 2 {
            return Err(TidesError::Validation(format!(
                "concat supports 2-D tensors on axis 0 or 1, got axis {axis}"
            )));
        }
        let fixed = 1 - axis;
        for t in tensors {
            if t.shape.len() != 2 || t.shape[fixed] != first.shape[fixed] {
                return Err(TidesError::Shape {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: t.shape.clone(),
                });
            }
        }
        let total: usize = tensors.iter().map(|t| t.shape[axis]).sum();
        let (rows, cols) = if axis == 0 {
            (total, first.shape[1])
        } else {
            (first.shape[0], total)
        };
        let mut data = vec![0.0; rows * cols];
        let mut parts: Vec<(usize, usize)> = Vec::with_capacity(tensors.len()); // (id, extent)
        if axis == 0 {
            let mut off = 0;
            for t in tensors {
                data[off..off + t.data.len()].copy_from_slice(&t.data);
                off += t.data.len();
                parts.push((t.id, t.shape[0]));
            }
        } else {
            let mut coff = 0;
            for t in tensors {
                let w = t.shape[1];
                for r in 0..rows {
                    data[r * cols + coff..r * cols + coff + w]
                        .copy_from_slice(&t.data[r * w..(r + 1) * w]);
                }
                coff += w;
                parts.push((t.id, w));
            }
        }
        let req = tensors.iter().any(|t| t.requires_grad());
        Ok(first.record(
            data,
            vec![rows, cols],
            req,
            Box::new(move |g| {
                let mut out = Vec::with_capacity(parts.len());
                if axis == 0 {
                    let mut off = 0;
                    for &(id, h) in &parts {
                        out.push((id, g[off..off + h * cols].to_vec()));
                        off += h * cols;
                    }
                } else {
                    let mut coff = 0;
                    for &(id, w) in &parts {
                        let mut gp = vec![0.0; rows * w];
                        for r in 0..rows {
                            gp[r * w..(r + 1) * w]
                                .copy_from_slice(&g[r * cols + coff..r * cols + coff + w]);
                        }
                        out.push((id, gp));
                        coff += w;
                    }
                }
                out
            }),
        ))
    }

    /// Contiguous row slice of a 2-D tensor.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Tensor> {
        if self.shape.len() != 2 || start + len > self.shape[0] {
            return Err(TidesError::Validation(format!(
                "slice_rows {start}..{} out of bounds for shape {:?}",
                start + len,
                self.shape
            )));
        }
        let cols = self.shape[1];
        let data = self.data[start * cols..(start + len) * cols].to_vec();
        let ia = self.id;
        let full_rows = self.shape[0];
        Ok(self.record(
            data,
            vec![len, cols],
            self.requires_grad(),
            Box::new(move |g| {
                let mut gi = vec![0.0; full_rows * cols];
                gi[start * cols..(start + len) * cols].copy_from_slice(g);
                vec![(ia, gi)]
            }),
        ))
    }

    /// Gather whole rows of a 2-D tensor by index (embedding lookup).
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(TidesError::Validation("gather_rows needs a 2-D tensor".into()));
        }
        let (rows, cols) = (self.shape[0], self.shape[1]);
        for &i in ids {
            if i >= rows {
                return Err(TidesError::Validation(format!(
                    "row index {i} out of range for {rows} rows"
                )));
            }
        }
        let mut data = vec![0.0; ids.len() * cols];
        for (k, &i) in ids.iter().enumerate() {
            data[k * cols..(k + 1) * cols].copy_from_slice(&self.data[i * cols..(i + 1) * cols]);
        }
        let ia = self.id;
        let ids = ids.to_vec();
        Ok(self.record(
            data,
            vec![ids.len(), cols],
            self.requires_grad(),
            Box::new(move |g| {
                let mut gi = vec![0.0; rows * cols];
                for (k, &i) in ids.iter().enumerate() {
                    for j in 0..cols {
                        gi[i * cols + j] += g[k * cols + j];
                    }
                }
                vec![(ia, gi)]
            }),
        ))
    }

    /// View with a different shape over the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(TidesError::Shape {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let ia = self.id;
        Ok(self.record(
            self.data.as_ref().clone(),
            shape.to_vec(),
            self.requires_grad(),
            Box::new(move |g| vec![(ia, g.to_vec())]),
        ))
    }
}
