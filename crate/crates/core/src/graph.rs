//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every node stores its forward value and the op that produced it. Scalar
//! losses with hand-derived gradients enter the tape through
//! [`Graph::fused`], which records the input gradients computed at forward
//! time and scales them by the upstream gradient on the way back.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Sigmoid(Var),
    Reshape(Var),
    Transpose(Var),
    Softmax(Var),
    Gather { input: Var, rows: Vec<usize> },
    Concat(Vec<Var>),
    GroupMean { input: Var, group: usize },
    AvgPool2 { input: Var, h: usize, w: usize, c: usize },
    Combine(Vec<(Var, f64)>),
    Fused { inputs: Vec<Var>, grads: Vec<Tensor> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node that required them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax of a rank-2 tensor; with `causal`, entry `(i, j)` for
/// `j > i` is masked out.
pub fn softmax_rows(x: &Tensor, causal: bool) -> Result<Tensor> {
    let (m, n) = x.dims2()?;
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &x.data()[i * n..(i + 1) * n];
        let limit = if causal { (i + 1).min(n) } else { n };
        let max = row[..limit].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in 0..limit {
            let e = (row[j] - max).exp();
            out[i * n + j] = e;
            z += e;
        }
        for v in &mut out[i * n..i * n + limit] {
            *v /= z;
        }
    }
    Tensor::new([m, n], out)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `x + bias` with `bias` broadcast over the rows of rank-2 `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        let b = self.value(bias);
        if b.len() != n {
            return Err(Error::shape(format!(
                "bias of {} elements for rows of width {n}",
                b.len()
            )));
        }
        let mut out = self.value(x).clone();
        for i in 0..m {
            for (o, bv) in out.data_mut()[i * n..(i + 1) * n].iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(gelu);
        let rg = self.rg(a);
        self.push(value, Op::Gelu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    pub fn softmax(&mut self, a: Var, causal: bool) -> Result<Var> {
        let value = softmax_rows(self.value(a), causal)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Softmax(a), rg))
    }

    /// Selects first-axis rows (repeats allowed); output is rank-2.
    pub fn gather(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let src = self.value(a);
        let n = src.row_len();
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= src.rows() {
                return Err(Error::shape(format!("row {r} out of range {}", src.rows())));
            }
            out.extend_from_slice(src.row(r));
        }
        let value = Tensor::new([rows.len(), n], out)?;
        let rg = self.rg(a);
        Ok(self.push(
            value,
            Op::Gather {
                input: a,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    /// Stacks inputs along the first axis; output is rank-2.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let n = self.value(*first).row_len();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.row_len() != n {
                return Err(Error::shape("concat row widths differ"));
            }
            rows += t.rows();
            out.extend_from_slice(t.data());
        }
        let value = Tensor::new([rows, n], out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    /// Averages each run of `group` consecutive rows: `[r·group, n] -> [r, n]`.
    pub fn group_mean(&mut self, a: Var, group: usize) -> Result<Var> {
        let src = self.value(a);
        let (m, n) = (src.rows(), src.row_len());
        if group == 0 || m % group != 0 {
            return Err(Error::shape(format!("{m} rows not divisible by group {group}")));
        }
        let r = m / group;
        let mut out = vec![0.0; r * n];
        for i in 0..m {
            let o = &mut out[(i / group) * n..(i / group + 1) * n];
            for (ov, sv) in o.iter_mut().zip(src.row(i)) {
                *ov += sv / group as f64;
            }
        }
        let value = Tensor::new([r, n], out)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::GroupMean { input: a, group }, rg))
    }

    /// 2×2 average pooling of images laid out as `[n, h·w·c]` (row, column,
    /// channel order).
    pub fn avg_pool2(&mut self, a: Var, h: usize, w: usize, c: usize) -> Result<Var> {
        let src = self.value(a);
        if src.row_len() != h * w * c || !h.is_multiple_of(2) || !w.is_multiple_of(2) {
            return Err(Error::shape(format!(
                "avg_pool2 expects rows of {h}x{w}x{c} with even sides"
            )));
        }
        let (ho, wo) = (h / 2, w / 2);
        let n = src.rows();
        let mut out = vec![0.0; n * ho * wo * c];
        for img in 0..n {
            let s = src.row(img);
            let o = &mut out[img * ho * wo * c..(img + 1) * ho * wo * c];
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        o[((y / 2) * wo + x / 2) * c + ch] += 0.25 * s[(y * w + x) * c + ch];
                    }
                }
            }
        }
        let value = Tensor::new([n, ho * wo * c], out)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::AvgPool2 { input: a, h, w, c }, rg))
    }

    /// Weighted sum of scalar nodes.
    pub fn combine(&mut self, terms: &[(Var, f64)]) -> Var {
        let total = terms.iter().map(|&(v, w)| w * self.value(v).item()).sum();
        let rg = terms.iter().any(|&(v, _)| self.rg(v));
        self.push(Tensor::scalar(total), Op::Combine(terms.to_vec()), rg)
    }

    /// Records a scalar whose gradient with respect to each input was
    /// computed analytically by the caller.
    pub fn fused(&mut self, inputs: &[Var], value: f64, grads: Vec<Tensor>) -> Result<Var> {
        if inputs.len() != grads.len() {
            return Err(Error::shape("fused op needs one gradient per input"));
        }
        for (&v, g) in inputs.iter().zip(&grads) {
            if self.value(v).len() != g.len() {
                return Err(Error::shape("fused gradient does not match its input"));
            }
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::scalar(value),
            Op::Fused {
                inputs: inputs.to_vec(),
                grads,
            },
            rg,
        ))
    }

    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if !self.rg(root) {
            return Gradients { grads };
        }
        grads[root.0] = Some(Tensor::ones(self.value(root).shape().to_vec()));

        for idx in (0..=root.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(gout);
                continue;
            }
            let acc = |v: Var, g: Tensor, grads: &mut Vec<Option<Tensor>>| {
                if !self.rg(v) {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&g),
                    slot => *slot = Some(g),
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let (m, k) = (av.shape()[0], av.shape()[1]);
                    let n = bv.shape()[1];
                    if self.rg(*a) {
                        let mut ga = vec![0.0; m * k];
                        gemm(m, n, k, gout.data(), false, bv.data(), true, &mut ga, 0.0);
                        acc(*a, Tensor::new([m, k], ga).unwrap(), &mut grads);
                    }
                    if self.rg(*b) {
                        let mut gb = vec![0.0; k * n];
                        gemm(k, m, n, av.data(), true, gout.data(), false, &mut gb, 0.0);
                        acc(*b, Tensor::new([k, n], gb).unwrap(), &mut grads);
                    }
                }
                Op::AddBias(x, b) => {
                    let bshape = self.value(*b).shape().to_vec();
                    let n = self.value(*b).len();
                    let mut gb = vec![0.0; n];
                    for (i, g) in gout.data().iter().enumerate() {
                        gb[i % n] += g;
                    }
                    acc(*b, Tensor::new(bshape, gb).unwrap(), &mut grads);
                    acc(*x, gout, &mut grads);
                }
                Op::Add(a, b) => {
                    acc(*a, gout.clone(), &mut grads);
                    acc(*b, gout, &mut grads);
                }
                Op::Sub(a, b) => {
                    acc(*a, gout.clone(), &mut grads);
                    acc(*b, gout.scale(-1.0), &mut grads);
                }
                Op::Mul(a, b) => {
                    let ga = gout.zip_map(self.value(*b), |g, y| g * y).unwrap();
                    let gb = gout.zip_map(self.value(*a), |g, x| g * x).unwrap();
                    acc(*a, ga, &mut grads);
                    acc(*b, gb, &mut grads);
                }
                Op::Scale(a, s) => acc(*a, gout.scale(*s), &mut grads),
                Op::Gelu(a) => {
                    let g = gout.zip_map(self.value(*a), |g, x| g * gelu_grad(x)).unwrap();
                    acc(*a, g, &mut grads);
                }
                Op::Sigmoid(a) => {
                    let g = gout.zip_map(&node.value, |g, y| g * y * (1.0 - y)).unwrap();
                    acc(*a, g, &mut grads);
                }
                Op::Reshape(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    acc(*a, gout.reshape(shape).unwrap(), &mut grads);
                }
                Op::Transpose(a) => acc(*a, gout.transpose().unwrap(), &mut grads),
                Op::Softmax(input) => {
                    // dx_ij = y_ij (g_ij - sum_k g_ik y_ik); masked entries have y = 0.
                    let y = &node.value;
                    let (m, n) = y.dims2().unwrap();
                    let mut gx = vec![0.0; m * n];
                    for i in 0..m {
                        let yr = &y.data()[i * n..(i + 1) * n];
                        let gr = &gout.data()[i * n..(i + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            gx[i * n + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc(*input, Tensor::new([m, n], gx).unwrap(), &mut grads);
                }
                Op::Gather { input, rows } => {
                    let src = self.value(*input);
                    let n = src.row_len();
                    let mut g = Tensor::zeros(src.shape().to_vec());
                    for (k, &r) in rows.iter().enumerate() {
                        for j in 0..n {
                            g.data_mut()[r * n + j] += gout.data()[k * n + j];
                        }
                    }
                    acc(*input, g, &mut grads);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let t = self.value(p);
                        let len = t.len();
                        let g = Tensor::new(
                            t.shape().to_vec(),
                            gout.data()[offset..offset + len].to_vec(),
                        )
                        .unwrap();
                        offset += len;
                        acc(p, g, &mut grads);
                    }
                }
                Op::GroupMean { input, group } => {
                    let src = self.value(*input);
                    let n = src.row_len();
                    let g = Tensor::from_fn(src.shape().to_vec(), |i| {
                        gout.data()[(i / n / group) * n + i % n] / *group as f64
                    });
                    acc(*input, g, &mut grads);
                }
                Op::AvgPool2 { input, h, w, c } => {
                    let src = self.value(*input);
                    let (ho, wo) = (h / 2, w / 2);
                    let per = h * w * c;
                    let g = Tensor::from_fn(src.shape().to_vec(), |i| {
                        let img = i / per;
                        let r = i % per;
                        let (y, x, ch) = (r / (w * c), (r / c) % w, r % c);
                        0.25 * gout.data()[img * ho * wo * c + ((y / 2) * wo + x / 2) * c + ch]
                    });
                    acc(*input, g, &mut grads);
                }
                Op::Combine(terms) => {
                    let up = gout.item();
                    for &(v, w) in terms {
                        let shape = self.value(v).shape().to_vec();
                        acc(v, Tensor::full(shape, up * w), &mut grads);
                    }
                }
                Op::Fused { inputs, grads: local } => {
                    let up = gout.item();
                    for (&v, g) in inputs.iter().zip(local) {
                        let g = g.scale(up).reshape(self.value(v).shape().to_vec()).unwrap();
                        acc(v, g, &mut grads);
                    }
                }
            }
        }
        Gradients { grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central-difference check of d(sum(f(x) * w))/dx for a fixed random `w`.
    fn check_unary(
        shape: &[usize],
        build: impl Fn(&mut Graph, Var) -> Var,
        seed: u64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = Tensor::randn(shape.to_vec(), 1.0, &mut rng);
        let eval = |x: &Tensor| -> (f64, Option<Tensor>) {
            let mut g = Graph::new();
            let xv = g.param(x.clone());
            let y = build(&mut g, xv);
            let yv = g.value(y).clone();
            let mut r2 = ChaCha8Rng::seed_from_u64(99);
            let w = Tensor::randn(yv.shape().to_vec(), 1.0, &mut r2);
            let wv = g.constant(w.clone());
            let prod = g.mul(y, wv).unwrap();
            let flat = g.reshape(prod, [1, yv.len()]).unwrap();
            let ones = g.constant(Tensor::ones([yv.len(), 1]));
            let s = g.matmul(flat, ones).unwrap();
            let total = g.value(s).item();
            let grads = g.backward(s);
            (total, grads.get(xv).cloned())
        };
        let (_, grad) = eval(&x0);
        let grad = grad.unwrap();
        let h = 1e-6;
        for i in 0..x0.len() {
            let mut xp = x0.clone();
            xp.data_mut()[i] += h;
            let mut xm = x0.clone();
            xm.data_mut()[i] -= h;
            let fd = (eval(&xp).0 - eval(&xm).0) / (2.0 * h);
            let an = grad.data()[i];
            assert!(
                (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                "index {i}: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn gelu_and_sigmoid_gradients() {
        check_unary(&[3, 4], |g, x| g.gelu(x), 1);
        check_unary(&[3, 4], |g, x| g.sigmoid(x), 2);
    }

    #[test]
    fn transpose_gradient() {
        check_unary(&[2, 5], |g, x| {
            let t = g.transpose(x).unwrap();
            g.gelu(t)
        }, 7);
    }

    #[test]
    fn softmax_gradients_plain_and_causal() {
        check_unary(&[4, 4], |g, x| g.softmax(x, false).unwrap(), 3);
        check_unary(&[4, 4], |g, x| g.softmax(x, true).unwrap(), 4);
    }

    #[test]
    fn matmul_and_bias_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = Tensor::randn([4, 3], 1.0, &mut rng);
        let b = Tensor::randn([3], 1.0, &mut rng);
        check_unary(
            &[2, 4],
            move |g, x| {
                let wv = g.constant(w.clone());
                let bv = g.constant(b.clone());
                let y = g.matmul(x, wv).unwrap();
                g.add_bias(y, bv).unwrap()
            },
            6,
        );
        let a = Tensor::randn([3, 2], 1.0, &mut rng);
        check_unary(
            &[2, 4],
            move |g, x| {
                let av = g.constant(a.clone());
                g.matmul(av, x).unwrap()
            },
            7,
        );
    }

    #[test]
    fn structural_op_gradients() {
        check_unary(&[6, 3], |g, x| g.gather(x, &[5, 0, 0, 2]).unwrap(), 8);
        check_unary(&[6, 3], |g, x| g.group_mean(x, 3).unwrap(), 9);
        check_unary(&[2, 4 * 4 * 2], |g, x| g.avg_pool2(x, 4, 4, 2).unwrap(), 10);
        check_unary(
            &[2, 3],
            |g, x| {
                let y = g.scale(x, 2.0);
                let z = g.mul(x, y).unwrap();
                let c = g.concat(&[x, z]).unwrap();
                let d = g.sub(c, c).unwrap();
                g.add(c, d).unwrap()
            },
            11,
        );
    }

    #[test]
    fn causal_softmax_masks_future() {
        let x = Tensor::from_fn([3, 3], |i| i as f64);
        let y = softmax_rows(&x, true).unwrap();
        assert_eq!(y.data()[1], 0.0);
        assert_eq!(y.data()[2], 0.0);
        assert!((y.data()[0] - 1.0).abs() < 1e-15);
        for i in 0..3 {
            let s: f64 = y.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::ones([2, 2]));
        let b = g.param(Tensor::ones([2, 2]));
        let c = g.mul(a, b).unwrap();
        let flat = g.reshape(c, [1, 4]).unwrap();
        let ones = g.constant(Tensor::ones([4, 1]));
        let out = g.matmul(flat, ones).unwrap();
        let grads = g.backward(out);
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap().data(), &[1.0; 4]);
    }
}
