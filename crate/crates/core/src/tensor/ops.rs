//! Primitive tensor ops. Each op computes its forward result eagerly
//! (64-bit accumulation where values are reduced) and, when any input
//! tracks gradients, records a closure that scatters the output gradient
//! back to the inputs.

use super::{Result, Tensor, TensorError};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_f64(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad_f64(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Dimensions for ops that treat the last axis as the unit of work.
fn last_axis(shape: &[usize], op: &'static str) -> Result<(usize, usize)> {
    match shape.last() {
        Some(&n) if n > 0 => Ok((shape.iter().product::<usize>() / n, n)),
        _ => Err(TensorError::BadShape {
            op,
            expected: "non-empty last axis".into(),
            shape: shape.to_vec(),
        }),
    }
}

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(TensorError::BadShape {
            op,
            expected: "a 2-d tensor".into(),
            shape: s.to_vec(),
        }),
    }
}

impl Tensor {
    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = dims2(self, "matmul")?;
        let (k2, n) = dims2(rhs, "matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let a = self.data();
        let b = rhs.data();
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0f64;
                for p in 0..k {
                    acc += a[i * k + p] as f64 * b[p * n + j] as f64;
                }
                out[i * n + j] = acc as f32;
            }
        }
        drop(a);
        drop(b);

        if !(self.requires_grad() || rhs.requires_grad()) {
            return Ok(Tensor::new_node(vec![m, n], out, false, vec![], None));
        }
        let lhs_h = self.clone();
        let rhs_h = rhs.clone();
        let back = move |g: &[f32]| {
            if lhs_h.requires_grad() {
                let b = rhs_h.data();
                let mut da = vec![0.0f32; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0f64;
                        for j in 0..n {
                            acc += g[i * n + j] as f64 * b[p * n + j] as f64;
                        }
                        da[i * k + p] = acc as f32;
                    }
                }
                drop(b);
                lhs_h.accumulate_grad(&da);
            }
            if rhs_h.requires_grad() {
                let a = lhs_h.data();
                let mut db = vec![0.0f32; k * n];
                for p in 0..k {
                    for j in 0..n {
                        let mut acc = 0.0f64;
                        for i in 0..m {
                            acc += a[i * k + p] as f64 * g[i * n + j] as f64;
                        }
                        db[p * n + j] = acc as f32;
                    }
                }
                drop(a);
                rhs_h.accumulate_grad(&db);
            }
        };
        Ok(Tensor::new_node(
            vec![m, n],
            out,
            true,
            vec![self.clone(), rhs.clone()],
            Some(Box::new(back)),
        ))
    }

    /// Elementwise sum. Also accepts `[m,n] + [n]` or `[m,n] + [1,n]`,
    /// broadcasting the row vector across rows.
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(rhs, "add", |a, b| a + b, BinaryKind::Add)
    }

    /// Elementwise (Hadamard) product, with the same row broadcast as
    /// [`Tensor::add`].
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(rhs, "mul", |a, b| a * b, BinaryKind::Mul)
    }

    fn binary_elementwise(
        &self,
        rhs: &Tensor,
        op: &'static str,
        f: fn(f32, f32) -> f32,
        kind: BinaryKind,
    ) -> Result<Tensor> {
        let broadcast = match (self.shape(), rhs.shape()) {
            (l, r) if l == r => false,
            ([_, n], [n2]) if n == n2 => true,
            ([_, n], [1, n2]) if n == n2 => true,
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op,
                    lhs: self.shape().to_vec(),
                    rhs: rhs.shape().to_vec(),
                })
            }
        };
        let a = self.data();
        let b = rhs.data();
        let out: Vec<f32> = if broadcast {
            let n = b.len();
            a.iter()
                .enumerate()
                .map(|(i, &ai)| f(ai, b[i % n]))
                .collect()
        } else {
            a.iter().zip(b.iter()).map(|(&ai, &bi)| f(ai, bi)).collect()
        };
        drop(a);
        drop(b);

        let shape = self.shape().to_vec();
        if !(self.requires_grad() || rhs.requires_grad()) {
            return Ok(Tensor::new_node(shape, out, false, vec![], None));
        }
        let lhs_h = self.clone();
        let rhs_h = rhs.clone();
        let back = move |g: &[f32]| {
            let n = rhs_h.numel();
            match kind {
                BinaryKind::Add => {
                    if lhs_h.requires_grad() {
                        lhs_h.accumulate_grad(g);
                    }
                    if rhs_h.requires_grad() {
                        if broadcast {
                            let mut db = vec![0.0f64; n];
                            for (i, &gi) in g.iter().enumerate() {
                                db[i % n] += gi as f64;
                            }
                            let db: Vec<f32> = db.into_iter().map(|v| v as f32).collect();
                            rhs_h.accumulate_grad(&db);
                        } else {
                            rhs_h.accumulate_grad(g);
                        }
                    }
                }
                BinaryKind::Mul => {
                    if lhs_h.requires_grad() {
                        let b = rhs_h.data();
                        let da: Vec<f32> = if broadcast {
                            g.iter()
                                .enumerate()
                                .map(|(i, &gi)| gi * b[i % n])
                                .collect()
                        } else {
                            g.iter().zip(b.iter()).map(|(&gi, &bi)| gi * bi).collect()
                        };
                        drop(b);
                        lhs_h.accumulate_grad(&da);
                    }
                    if rhs_h.requires_grad() {
                        let a = lhs_h.data();
                        if broadcast {
                            let mut db = vec![0.0f64; n];
                            for (i, (&gi, &ai)) in g.iter().zip(a.iter()).enumerate() {
                                db[i % n] += gi as f64 * ai as f64;
                            }
                            let db: Vec<f32> = db.into_iter().map(|v| v as f32).collect();
                            drop(a);
                            rhs_h.accumulate_grad(&db);
                        } else {
                            let db: Vec<f32> =
                                g.iter().zip(a.iter()).map(|(&gi, &ai)| gi * ai).collect();
                            drop(a);
                            rhs_h.accumulate_grad(&db);
                        }
                    }
                }
            }
        };
        Ok(Tensor::new_node(
            shape,
            out,
            true,
            vec![self.clone(), rhs.clone()],
            Some(Box::new(back)),
        ))
    }

    /// Multiplication by a compile-time-known constant.
    pub fn scale(&self, c: f32) -> Result<Tensor> {
        let out: Vec<f32> = self.data().iter().map(|&v| v * c).collect();
        let shape = self.shape().to_vec();
        if !self.requires_grad() {
            return Ok(Tensor::new_node(shape, out, false, vec![], None));
        }
        let src = self.clone();
        let back = move |g: &[f32]| {
            let dg: Vec<f32> = g.iter().map(|&gi| gi * c).collect();
            src.accumulate_grad(&dg);
        };
        Ok(Tensor::new_node(
            shape,
            out,
            true,
            vec![self.clone()],
            Some(Box::new(back)),
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&self) -> Result<Tensor> {
        let (rows, n) = last_axis(self.shape(), "softmax_last")?;
        let x = self.data();
        let mut out = vec![0.0f32; x.len()];
        for r in 0..rows {
            let row = &x[r * n..(r + 1) * n];
            let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
            let mut sum = 0.0f64;
            let mut e = vec![0.0f64; n];
            for (j, &v) in row.iter().enumerate() {
                let ev = ((v as f64) - m).exp();
                e[j] = ev;
                sum += ev;
            }
            for j in 0..n {
                out[r * n + j] = (e[j] / sum) as f32;
            }
        }
        drop(x);

        let shape = self.shape().to_vec();
        if !self.requires_grad() {
            return Ok(Tensor::new_node(shape, out, false, vec![], None));
        }
        let y_saved = out.clone();
        let src = self.clone();
        let back = move |g: &[f32]| {
            let mut dx = vec![0.0f32; g.len()];
            for r in 0..rows {
                let mut dot = 0.0f64;
                for j in 0..n {
                    let idx = r * n + j;
                    dot += g[idx] as f64 * y_saved[idx] as f64;
                }
                for j in 0..n {
                    let idx = r * n + j;
                    dx[idx] = (y_saved[idx] as f64 * (g[idx] as f64 - dot)) as f32;
                }
            }
            src.accumulate_grad(&dx);
        };
        Ok(Tensor::new_node(
            shape,
            out,
            true,
            vec![self.clone()],
            Some(Box::new(back)),
        ))
    }

    /// Normalizes the last axis to zero mean and unit variance
    /// (no learned affine; compose with `mul`/`add` for one).
    pub fn layer_norm_last(&self, eps: f32) -> Result<Tensor> {
        let (rows, n) = last_axis(self.shape(), "layer_norm_last")?;
        let x = self.data();
        let mut out = vec![0.0f32; x.len()];
        let mut inv_std = vec![0.0f64; rows];
        for r in 0..rows {
            let row = &x[r * n..(r + 1) * n];
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
            let var = row
                .iter()
                .map(|&v| {
                    let d = v as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / n as f64;
            let is = 1.0 / (var + eps as f64).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                out[r * n + j] = ((row[j] as f64 - mean) * is) as f32;
            }
        }
        drop(x);

        let shape = self.shape().to_vec();
        if !self.requires_grad() {
            return Ok(Tensor::new_node(shape, out, false, vec![], None));
        }
        let y_saved = out.clone();
        let src = self.clone();
        let back = move |g: &[f32]| {
            let mut dx = vec![0.0f32; g.len()];
            for r in 0..rows {
                let mut g_mean = 0.0f64;
                let mut gy_mean = 0.0f64;
                for j in 0..n {
                    let idx = r * n + j;
                    g_mean += g[idx] as f64;
                    gy_mean += g[idx] as f64 * y_saved[idx] as f64;
                }
                g_mean /= n as f64;
                gy_mean /= n as f64;
                for j in 0..n {
                    let idx = r * n + j;
                    dx[idx] = (inv_std[r]
                        * (g[idx] as f64 - g_mean - y_saved[idx] as f64 * gy_mean))
                        as f32;
                }
            }
            src.accumulate_grad(&dx);
        };
        Ok(Tensor::new_node(
            shape,
            out,
            true,
            vec![self.clone()],
            Some(Box::new(back)),
        ))
    }

    /// GELU activation (tanh approximation).
    pub fn gelu(&self) -> Result<Tensor> {
        let x = self.to_vec();
        let out: Vec<f32> = x.iter().map(|&v| gelu_f64(v as f64) as f32).collect();
        let shape = self.shape().to_vec();
        if !self.requires_grad() {
            return Ok(Tensor::new_node(shape, out, false, vec![], None));
        }
        let src = self.clone();
        let back = move |g: &[f32]| {
            let dg: Vec<f32> = g
                .iter()
                .zip(x.iter())
                .map(|(&gi, &xi)| (gi as f64 * gelu_grad_f64(xi as f64)) as f32)
                .collect();
            src.accumulate_grad(&dg);
        };
        Ok(Tensor::new_node(
            shape,
            out,
            true,
            vec![self.clone()],
            Some(Box::new(back)),
        ))
    }

    /// Row gather: `self` is a `[rows, d]` table, output is `[ids.len(), d]`.
    /// The backward pass scatter-adds into the table gradient.
    pub fn lookup(&self, ids: &[u32]) -> Result<Tensor> {
        let (rows, d) = dims2(self, "lookup")?;
        for &id in ids {
            if id as usize >= rows {
                return Err(TensorError::IdOutOfRange { id, rows });
            }
        }
        let table = self.data();
        let mut out = vec![0.0f32; ids.len() * d];
        for (i, &id) in ids.iter().enumerate() {
            out[i * d..(i + 1) * d].copy_from_slice(&table[id as usize * d..(id as usize + 1) * d]);
        }
        drop(table);

        let shape = vec![ids.len(), d];
        if !self.requires_grad() {
            return Ok(Tensor::new_node(shape, out, false, vec![], None));
        }
        let src = self.clone();
        let ids_saved = ids.to_vec();
        let back = move |g: &[f32]| {
            let mut dt = vec![0.0f32; rows * d];
            for (i, &id) in ids_saved.iter().enumerate() {
                for j in 0..d {
                    dt[id as usize * d + j] += g[i * d + j];
                }
            }
            src.accumulate_grad(&dt);
        };
        Ok(Tensor::new_node(
            shape,
            out,
            true,
            vec![self.clone()],
            Some(Box::new(back)),
        ))
    }

    /// Concatenates 2-d tensors along `axis` (0: stack rows, 1: widen).
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        if parts.is_empty() || axis > 1 {
            return Err(TensorError::BadShape {
                op: "concat",
                expected: "at least one part and axis in {0,1}".into(),
                shape: vec![axis],
            });
        }
        let (m0, n0) = dims2(parts[0], "concat")?;
        let mut cat_dim = 0usize;
        for p in parts {
            let (m, n) = dims2(p, "concat")?;
            let (fixed_ok, along) = if axis == 0 { (n == n0, m) } else { (m == m0, n) };
            if !fixed_ok {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: parts[0].shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            cat_dim += along;
        }
        let (out_m, out_n) = if axis == 0 { (cat_dim, n0) } else { (m0, cat_dim) };
        let mut out = vec![0.0f32; out_m * out_n];
        let mut offset = 0usize;
        for p in parts {
            let (m, n) = dims2(p, "concat")?;
            let d = p.data();
            if axis == 0 {
                out[offset * out_n..(offset + m) * out_n].copy_from_slice(&d);
                offset += m;
            } else {
                for i in 0..m {
                    out[i * out_n + offset..i * out_n + offset + n]
                        .copy_from_slice(&d[i * n..(i + 1) * n]);
                }
                offset += n;
            }
        }

        let rec = parts.iter().any(|p| p.requires_grad());
        if !rec {
            return Ok(Tensor::new_node(vec![out_m, out_n], out, false, vec![], None));
        }
        let handles: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
        let handles_b = handles.clone();
        let back = move |g: &[f32]| {
            let mut offset = 0usize;
            for p in &handles_b {
                let (m, n) = (p.shape()[0], p.shape()[1]);
                if p.requires_grad() {
                    let mut dp = vec![0.0f32; m * n];
                    if axis == 0 {
                        dp.copy_from_slice(&g[offset * out_n..(offset + m) * out_n]);
                    } else {
                        for i in 0..m {
                            dp[i * n..(i + 1) * n].copy_from_slice(
                                &g[i * out_n + offset..i * out_n + offset + n],
                            );
                        }
                    }
                    p.accumulate_grad(&dp);
                }
                offset += if axis == 0 { m } else { n };
            }
        };
        Ok(Tensor::new_node(
            vec![out_m, out_n],
            out,
            true,
            handles,
            Some(Box::new(back)),
        ))
    }

    /// Contiguous 2-d slice along `axis`, keeping `[start, start+len)`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let (m, n) = dims2(self, "slice")?;
        let bound = if axis == 0 { m } else { n };
        if axis > 1 || start + len > bound || len == 0 {
            return Err(TensorError::BadShape {
                op: "slice",
                expected: format!("axis<=1 and [{start}, {}) within {bound}", start + len),
                shape: self.shape().to_vec(),
            });
        }
        let d = self.data();
        let (out_m, out_n) = if axis == 0 { (len, n) } else { (m, len) };
        let mut out = vec![0.0f32; out_m * out_n];
        if axis == 0 {
            out.copy_from_slice(&d[start * n..(start + len) * n]);
        } else {
            for i in 0..m {
                out[i * len..(i + 1) * len].copy_from_slice(&d[i * n + start..i * n + start + len]);
            }
        }
        drop(d);

        if !self.requires_grad() {
            return Ok(Tensor::new_node(vec![out_m, out_n], out, false, vec![], None));
        }
        let src = self.clone();
        let back = move |g: &[f32]| {
            let mut dx = vec![0.0f32; m * n];
            if axis == 0 {
                dx[start * n..(start + len) * n].copy_from_slice(g);
            } else {
                for i in 0..m {
                    dx[i * n + start..i * n + start + len]
                        .copy_from_slice(&g[i * len..(i + 1) * len]);
                }
            }
            src.accumulate_grad(&dx);
        };
        Ok(Tensor::new_node(
            vec![out_m, out_n],
            out,
            true,
            vec![self.clone()],
            Some(Box::new(back)),
        ))
    }

    /// 2-d transpose.
    pub fn transpose2(&self) -> Result<Tensor> {
        let (m, n) = dims2(self, "transpose2")?;
        let d = self.data();
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        drop(d);

        if !self.requires_grad() {
            return Ok(Tensor::new_node(vec![n, m], out, false, vec![], None));
        }
        let src = self.clone();
        let back = move |g: &[f32]| {
            let mut dx = vec![0.0f32; m * n];
            for j in 0..n {
                for i in 0..m {
                    dx[i * n + j] = g[j * m + i];
                }
            }
            src.accumulate_grad(&dx);
        };
        Ok(Tensor::new_node(
            vec![n, m],
            out,
            true,
            vec![self.clone()],
            Some(Box::new(back)),
        ))
    }

    /// Mean over all elements, as a scalar.
    pub fn mean_all(&self) -> Result<Tensor> {
        let count = self.numel();
        if count == 0 {
            return Err(TensorError::BadShape {
                op: "mean_all",
                expected: "a non-empty tensor".into(),
                shape: self.shape().to_vec(),
            });
        }
        let sum: f64 = self.data().iter().map(|&v| v as f64).sum();
        let out = vec![(sum / count as f64) as f32];
        if !self.requires_grad() {
            return Ok(Tensor::new_node(vec![], out, false, vec![], None));
        }
        let src = self.clone();
        let back = move |g: &[f32]| {
            let each = g[0] / count as f32;
            src.accumulate_grad(&vec![each; count]);
        };
        Ok(Tensor::new_node(
            vec![],
            out,
            true,
            vec![self.clone()],
            Some(Box::new(back)),
        ))
    }

    /// Mean cross-entropy between logit rows and integer targets, as a
    /// scalar. `weights`, when given, reweights rows (e.g. zero to mask
    /// padding); the mean divides by the weight total.
    pub fn cross_entropy_with_logits(
        &self,
        targets: &[u32],
        weights: Option<&[f32]>,
    ) -> Result<Tensor> {
        let (rows, v) = dims2(self, "cross_entropy_with_logits")?;
        if targets.len() != rows || weights.is_some_and(|w| w.len() != rows) {
            return Err(TensorError::BadShape {
                op: "cross_entropy_with_logits",
                expected: format!("{rows} targets/weights for {rows} logit rows"),
                shape: vec![targets.len()],
            });
        }
        for &t in targets {
            if t as usize >= v {
                return Err(TensorError::IdOutOfRange { id: t, rows: v });
            }
        }
        let w_total: f64 = match weights {
            Some(w) => w.iter().map(|&x| x as f64).sum(),
            None => rows as f64,
        };
        if !(w_total > 0.0) {
            return Err(TensorError::NonFinite {
                what: "cross-entropy weight total (must be positive)".into(),
            });
        }

        let x = self.data();
        let mut probs = vec![0.0f32; rows * v];
        let mut loss = 0.0f64;
        for r in 0..rows {
            let row = &x[r * v..(r + 1) * v];
            let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
            let mut sum = 0.0f64;
            for &val in row {
                sum += ((val as f64) - m).exp();
            }
            let lse = m + sum.ln();
            let w = weights.map_or(1.0, |w| w[r] as f64);
            loss += w * (lse - row[targets[r] as usize] as f64);
            for j in 0..v {
                probs[r * v + j] = (((row[j] as f64) - lse).exp()) as f32;
            }
        }
        drop(x);
        let out = vec![(loss / w_total) as f32];

        if !self.requires_grad() {
            return Ok(Tensor::new_node(vec![], out, false, vec![], None));
        }
        let src = self.clone();
        let targets_saved = targets.to_vec();
        let weights_saved = weights.map(|w| w.to_vec());
        let back = move |g: &[f32]| {
            let mut dx = vec![0.0f32; rows * v];
            for r in 0..rows {
                let w = weights_saved.as_ref().map_or(1.0, |w| w[r] as f64);
                let coeff = g[0] as f64 * w / w_total;
                for j in 0..v {
                    let p = probs[r * v + j] as f64;
                    let ind = if j == targets_saved[r] as usize { 1.0 } else { 0.0 };
                    dx[r * v + j] = (coeff * (p - ind)) as f32;
                }
            }
            src.accumulate_grad(&dx);
        };
        Ok(Tensor::new_node(
            vec![],
            out,
            true,
            vec![self.clone()],
            Some(Box::new(back)),
        ))
    }
}

/// Primitive identifiers, so tests can drive every op through one door.
#[derive(Debug, Clone)]
pub enum OpKind {
    MatMul,
    Add,
    Mul,
    Scale(f32),
    SoftmaxLast,
    LayerNormLast(f32),
    Gelu,
    Lookup(Vec<u32>),
    Concat(usize),
    Slice { axis: usize, start: usize, len: usize },
    Transpose2,
    MeanAll,
    CrossEntropy { targets: Vec<u32>, weights: Option<Vec<f32>> },
}

/// Applies one primitive to `inputs`. Arity must match the op (two for
/// the binary ops, any positive count for `Concat`, one otherwise).
pub fn primitive_forward(kind: &OpKind, inputs: &[&Tensor]) -> Result<Tensor> {
    let arity_err = |expected: &str| TensorError::BadShape {
        op: "primitive_forward",
        expected: expected.into(),
        shape: vec![inputs.len()],
    };
    let one = || inputs.first().copied().ok_or_else(|| arity_err("one input"));
    let two = || match inputs {
        [a, b] => Ok((*a, *b)),
        _ => Err(arity_err("two inputs")),
    };
    match kind {
        OpKind::MatMul => {
            let (a, b) = two()?;
            a.matmul(b)
        }
        OpKind::Add => {
            let (a, b) = two()?;
            a.add(b)
        }
        OpKind::Mul => {
            let (a, b) = two()?;
            a.mul(b)
        }
        OpKind::Scale(c) => one()?.scale(*c),
        OpKind::SoftmaxLast => one()?.softmax_last(),
        OpKind::LayerNormLast(eps) => one()?.layer_norm_last(*eps),
        OpKind::Gelu => one()?.gelu(),
        OpKind::Lookup(ids) => one()?.lookup(ids),
        OpKind::Concat(axis) => Tensor::concat(inputs, *axis),
        OpKind::Slice { axis, start, len } => one()?.slice(*axis, *start, *len),
        OpKind::Transpose2 => one()?.transpose2(),
        OpKind::MeanAll => one()?.mean_all(),
        OpKind::CrossEntropy { targets, weights } => {
            one()?.cross_entropy_with_logits(targets, weights.as_deref())
        }
    }
}

#[derive(Clone, Copy)]
enum BinaryKind {
    Add,
    Mul,
}
