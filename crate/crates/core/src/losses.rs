//! Training objectives with analytic gradients.
//!
//! Each loss is a pure function returning its value and the gradient with
//! respect to the prediction; the `*_node` wrappers put it on a [`Graph`].

use rand::Rng as _;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::graph::{sigmoid, Graph, Var};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-7;
const NORM_FLOOR: f64 = 1e-12;

/// Per-item MixCo coefficient and partner index.
#[derive(Clone, Debug, PartialEq)]
pub struct MixState {
    pub lambda: Vec<f64>,
    pub partner: Vec<usize>,
}

impl MixState {
    /// `λ = 1` for every item; partners are irrelevant and set to self.
    pub fn identity(n: usize) -> Self {
        Self {
            lambda: vec![1.0; n],
            partner: (0..n).collect(),
        }
    }

    /// λ ~ Beta(α, α) and a uniformly drawn partner other than self. A batch
    /// of one cannot be mixed and gets the identity state.
    pub fn sample(n: usize, alpha: f64, rng: &mut Rng) -> Result<Self> {
        if n < 2 {
            return Ok(Self::identity(n));
        }
        let beta = Beta::new(alpha, alpha).map_err(|e| Error::domain(format!("beta({alpha}): {e}")))?;
        let lambda = (0..n).map(|_| beta.sample(rng)).collect();
        let partner = (0..n).map(|i| (i + 1 + rng.random_range(0..n - 1)) % n).collect();
        Ok(Self { lambda, partner })
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.lambda.len() != n || self.partner.len() != n {
            return Err(Error::shape(format!(
                "mix state covers {} items, batch has {n}",
                self.lambda.len()
            )));
        }
        if let Some(l) = self.lambda.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return Err(Error::domain(format!("mixing coefficient {l} outside [0, 1]")));
        }
        if let Some(p) = self.partner.iter().find(|&&p| p >= n) {
            return Err(Error::domain(format!("partner index {p} out of range")));
        }
        Ok(())
    }

    /// Repeats each entry `times` times, remapping partners so that item
    /// `b * times + f` pairs with `partner[b] * times + f`.
    pub fn expand(&self, times: usize) -> Self {
        let mut lambda = Vec::with_capacity(self.len() * times);
        let mut partner = Vec::with_capacity(self.len() * times);
        for (l, &p) in self.lambda.iter().zip(&self.partner) {
            for f in 0..times {
                lambda.push(*l);
                partner.push(p * times + f);
            }
        }
        Self { lambda, partner }
    }
}

/// `x*_c = λ_c x_c + (1 - λ_c) x_{m_c}` over the rows of `x`.
pub fn mixco_mix(x: &Tensor, state: &MixState) -> Result<Tensor> {
    let (n, d) = x.dims2()?;
    state.validate(n)?;
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        let (l, m) = (state.lambda[i], state.partner[i]);
        for j in 0..d {
            out[i * d + j] = l * x.data()[i * d + j] + (1.0 - l) * x.data()[m * d + j];
        }
    }
    Tensor::new([n, d], out)
}

fn normalize_rows(x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let (n, d) = x.dims2()?;
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(n);
    for i in 0..n {
        let row = &mut out.data_mut()[i * d..(i + 1) * d];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
        row.iter_mut().for_each(|v| *v /= norm);
        norms.push(norm);
    }
    Ok((out, norms))
}

/// Pulls a gradient with respect to normalized rows back to the raw rows.
fn normalize_rows_backward(u: &Tensor, norms: &[f64], gu: &Tensor) -> Tensor {
    let d = u.row_len();
    let mut gx = gu.clone();
    for (i, &norm) in norms.iter().enumerate() {
        let ur = u.row(i);
        let gr = &gu.data()[i * d..(i + 1) * d];
        let dot: f64 = ur.iter().zip(gr).map(|(a, b)| a * b).sum();
        for j in 0..d {
            gx.data_mut()[i * d + j] = (gr[j] - ur[j] * dot) / norm;
        }
    }
    gx
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Bidirectional MixCo contrastive loss over `M` items.
///
/// Rows of `emb` (fMRI side, already mixed) and `targets` are
/// L2-normalized, similarities are divided by `tau`, and
///
/// ```text
/// L = -1/(2M) [ Σ_i λ_i log P_row(i, i) + Σ_i (1-λ_i) log P_row(i, m_i)
///             + Σ_j λ_j log P_col(j, j) + Σ_j Σ_{l: m_l = j} (1-λ_j) log P_col(l, j) ]
/// ```
///
/// where `P_row` normalizes over targets and `P_col` over fMRI items.
/// Returns the value and the gradients with respect to `emb` and `targets`.
pub fn bimixco_loss(emb: &Tensor, targets: &Tensor, state: &MixState, tau: f64) -> Result<(f64, Tensor, Tensor)> {
    if !(tau > 0.0) {
        return Err(Error::domain(format!("temperature must be positive, got {tau}")));
    }
    emb.expect_same_shape(targets)?;
    let (m, d) = emb.dims2()?;
    if m == 0 {
        return Err(Error::shape("contrastive loss needs at least one item"));
    }
    state.validate(m)?;
    let (u, un) = normalize_rows(emb)?;
    let (t, tn) = normalize_rows(targets)?;
    let s = u.matmul(&t.transpose()?)?.scale(1.0 / tau);

    let rows: Vec<Vec<f64>> = (0..m).map(|i| log_softmax(s.row(i))).collect();
    let st = s.transpose()?;
    // cols[j][k] = log P_col(k, j)
    let cols: Vec<Vec<f64>> = (0..m).map(|j| log_softmax(st.row(j))).collect();

    let mut counts = vec![0usize; m];
    for &p in &state.partner {
        counts[p] += 1;
    }

    let c = 1.0 / (2.0 * m as f64);
    let mut total = 0.0;
    // dL/dS
    let mut gs = vec![0.0; m * m];
    for i in 0..m {
        let (l, p) = (state.lambda[i], state.partner[i]);
        total -= l * rows[i][i] + (1.0 - l) * rows[i][p];
        for k in 0..m {
            gs[i * m + k] += c * rows[i][k].exp();
        }
        gs[i * m + i] -= c * l;
        gs[i * m + p] -= c * (1.0 - l);
    }
    for j in 0..m {
        let l = state.lambda[j];
        total -= l * cols[j][j];
        let weight = l + counts[j] as f64 * (1.0 - l);
        for k in 0..m {
            gs[k * m + j] += c * weight * cols[j][k].exp();
        }
        gs[j * m + j] -= c * l;
    }
    for (li, &j) in state.partner.iter().enumerate() {
        let w = 1.0 - state.lambda[j];
        total -= w * cols[j][li];
        gs[li * m + j] -= c * w;
    }
    let value = c * total;

    let gs = Tensor::new([m, m], gs)?.scale(1.0 / tau);
    let gu = gs.matmul(&t)?;
    let gt = gs.transpose()?.matmul(&u)?;
    debug_assert_eq!(gu.shape(), [m, d]);
    Ok((
        value,
        normalize_rows_backward(&u, &un, &gu),
        normalize_rows_backward(&t, &tn, &gt),
    ))
}

/// Symmetric InfoNCE: the `λ ≡ 1` case of [`bimixco_loss`].
pub fn clip_text_loss(emb: &Tensor, targets: &Tensor, tau: f64) -> Result<(f64, Tensor, Tensor)> {
    let (m, _) = emb.dims2()?;
    bimixco_loss(emb, targets, &MixState::identity(m), tau)
}

/// Mean squared error.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    pred.expect_same_shape(target)?;
    let n = pred.len().max(1) as f64;
    let diff = pred.zip_map(target, |a, b| a - b)?;
    let value = diff.data().iter().map(|d| d * d).sum::<f64>() / n;
    Ok((value, diff.scale(2.0 / n)))
}

/// Diffusion-prior objective.
pub fn prior_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    mse_loss(pred, target)
}

/// Mean absolute error; the subgradient at zero is zero.
pub fn mae_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    pred.expect_same_shape(target)?;
    let n = pred.len().max(1) as f64;
    let diff = pred.zip_map(target, |a, b| a - b)?;
    let value = diff.data().iter().map(|d| d.abs()).sum::<f64>() / n;
    let grad = diff.map(|d| {
        if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        }
    });
    Ok((value, grad))
}

/// Latent reconstruction objective: mean absolute error over frames and
/// latent elements.
pub fn rec_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    mae_loss(pred, target)
}

fn check_binary_targets(gt: &Tensor) -> Result<()> {
    if gt.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::domain("targets must lie in [0, 1]"));
    }
    Ok(())
}

/// Binary cross-entropy on probabilities, averaged over every element.
pub fn bce_loss(pred: &Tensor, gt: &Tensor) -> Result<(f64, Tensor)> {
    pred.expect_same_shape(gt)?;
    check_binary_targets(gt)?;
    let n = pred.len().max(1) as f64;
    let mut value = 0.0;
    let mut grad = Tensor::zeros(pred.shape().to_vec());
    for (i, (&p, &y)) in pred.data().iter().zip(gt.data()).enumerate() {
        let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        value -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        if pc == p {
            grad.data_mut()[i] = (-(y / pc) + (1.0 - y) / (1.0 - pc)) / n;
        }
    }
    Ok((value / n, grad))
}

/// Segmentation loss on sigmoid outputs: per-pixel BCE averaged within each
/// frame, then over the `B·F` frames.
pub fn seg_loss(pred: &Tensor, gt: &Tensor) -> Result<(f64, Tensor)> {
    bce_loss(pred, gt)
}

/// Binary cross-entropy on logits, averaged over every element. Equal to
/// [`bce_loss`] on `sigmoid(logits)` away from the clamp.
pub fn bce_with_logits(logits: &Tensor, gt: &Tensor) -> Result<(f64, Tensor)> {
    logits.expect_same_shape(gt)?;
    check_binary_targets(gt)?;
    let n = logits.len().max(1) as f64;
    let mut value = 0.0;
    let mut grad = Tensor::zeros(logits.shape().to_vec());
    for (i, (&z, &y)) in logits.data().iter().zip(gt.data()).enumerate() {
        // max(z, 0) - z y + log(1 + e^{-|z|})
        value += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        grad.data_mut()[i] = (sigmoid(z) - y) / n;
    }
    Ok((value / n, grad))
}

/// Multi-label concept loss: mean over classes (and batch) of per-class
/// sigmoid cross-entropy.
pub fn cls_loss(logits: &Tensor, concepts: &Tensor) -> Result<(f64, Tensor)> {
    if logits.shape() != concepts.shape() {
        return Err(Error::shape(format!(
            "concept targets {:?} do not match logits {:?}",
            concepts.shape(),
            logits.shape()
        )));
    }
    bce_with_logits(logits, concepts)
}

/// Mean negative log-likelihood of `targets` under row-wise softmax of
/// `logits` (`[T, vocab]`).
pub fn token_nll(logits: &Tensor, targets: &[u32]) -> Result<(f64, Tensor)> {
    if targets.is_empty() {
        return Err(Error::domain("token sequence is empty"));
    }
    let (t, v) = logits.dims2()?;
    if t != targets.len() {
        return Err(Error::shape(format!("{t} logit rows for {} targets", targets.len())));
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; t * v];
    for (i, &y) in targets.iter().enumerate() {
        let y = y as usize;
        if y >= v {
            return Err(Error::domain(format!("token id {y} outside vocabulary of {v}")));
        }
        let lp = log_softmax(logits.row(i));
        value -= lp[y];
        for k in 0..v {
            grad[i * v + k] = lp[k].exp() / t as f64;
        }
        grad[i * v + y] -= 1.0 / t as f64;
    }
    Ok((value / t as f64, Tensor::new([t, v], grad)?))
}

/// Puts a loss with a precomputed gradient on the tape.
pub fn loss_node(g: &mut Graph, input: Var, (value, grad): (f64, Tensor)) -> Result<Var> {
    let grad = grad.reshape(g.value(input).shape().to_vec())?;
    g.fused(&[input], value, vec![grad])
}

/// Contrastive loss node against frozen targets.
pub fn contrastive_node(g: &mut Graph, emb: Var, targets: &Tensor, state: &MixState, tau: f64) -> Result<Var> {
    let (value, ge, _) = bimixco_loss(g.value(emb), targets, state, tau)?;
    loss_node(g, emb, (value, ge))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;

    fn numeric_grad(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Tensor {
        let h = 1e-6;
        Tensor::from_fn(x.shape().to_vec(), |i| {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
    }

    fn assert_grad_close(a: &Tensor, b: &Tensor) {
        let num: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den = a.data().iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-8);
        assert!(num / den < 1e-5, "relative error {}", num / den);
    }

    #[test]
    fn mix_endpoints_and_midpoint() {
        let x = Tensor::new([2, 3], vec![0.0, 0.0, 0.0, 2.0, 2.0, 2.0]).unwrap();
        let s = MixState {
            lambda: vec![0.5, 1.0],
            partner: vec![1, 0],
        };
        let y = mixco_mix(&x, &s).unwrap();
        assert_eq!(y.row(0), &[1.0, 1.0, 1.0]);
        assert_eq!(y.row(1), x.row(1));
        let s = MixState {
            lambda: vec![0.0, 0.0],
            partner: vec![1, 0],
        };
        let y = mixco_mix(&x, &s).unwrap();
        assert_eq!(y.row(0), x.row(1));
        let bad = MixState {
            lambda: vec![1.5, 0.0],
            partner: vec![1, 0],
        };
        assert!(matches!(mixco_mix(&x, &bad), Err(Error::Domain(_))));
    }

    #[test]
    fn sampled_partners_are_never_self() {
        let mut rng = stream(3, "mix");
        for n in 2..10 {
            let s = MixState::sample(n, 0.15, &mut rng).unwrap();
            s.validate(n).unwrap();
            assert!(s.partner.iter().enumerate().all(|(i, &p)| i != p));
        }
    }

    #[test]
    fn bimixco_gradients_match_finite_differences() {
        let mut rng = stream(11, "t");
        let e = Tensor::randn([5, 4], 1.0, &mut rng);
        let t = Tensor::randn([5, 4], 1.0, &mut rng);
        let s = MixState::sample(5, 0.7, &mut rng).unwrap();
        let (_, ge, gt) = bimixco_loss(&e, &t, &s, 0.5).unwrap();
        assert_grad_close(&ge, &numeric_grad(&e, |x| bimixco_loss(x, &t, &s, 0.5).unwrap().0));
        assert_grad_close(&gt, &numeric_grad(&t, |x| bimixco_loss(&e, x, &s, 0.5).unwrap().0));
    }

    #[test]
    fn single_item_is_zero() {
        let e = Tensor::new([1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let (v, _, _) = clip_text_loss(&e, &e, 0.1).unwrap();
        assert_relative_eq!(v, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn orthogonal_pair_by_hand() {
        // S = I with τ = 1: every row and column gives -log(e / (e + 1)).
        let e = Tensor::eye(2, 2);
        let (v, _, _) = clip_text_loss(&e, &e, 1.0).unwrap();
        let expect = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert_relative_eq!(v, expect, epsilon = 1e-12);
    }

    #[test]
    fn bad_temperature() {
        let e = Tensor::eye(2, 2);
        assert!(matches!(clip_text_loss(&e, &e, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn bce_closed_forms() {
        let p = Tensor::full([2, 3], 0.5);
        let y = Tensor::new([2, 3], vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_relative_eq!(bce_loss(&p, &y).unwrap().0, 2f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(bce_with_logits(&Tensor::zeros([2, 3]), &y).unwrap().0, 2f64.ln(), epsilon = 1e-12);
        assert!(bce_loss(&y, &y).unwrap().0 <= 1e-6);
    }

    #[test]
    fn uniform_decoder_is_log_vocab() {
        let logits = Tensor::zeros([3, 16]);
        let (v, _) = token_nll(&logits, &[1, 5, 9]).unwrap();
        assert_relative_eq!(v, 16f64.ln(), epsilon = 1e-12);
        assert!(token_nll(&Tensor::zeros([0, 16]), &[]).is_err());
    }

    #[test]
    fn elementwise_losses() {
        let a = Tensor::zeros([2, 2]);
        let b = Tensor::ones([2, 2]);
        assert_eq!(mse_loss(&a, &b).unwrap().0, 1.0);
        assert_eq!(mae_loss(&b, &a).unwrap().0, 1.0);
        assert_eq!(mae_loss(&a, &a).unwrap().0, 0.0);
        assert!(mse_loss(&a, &Tensor::zeros([4])).is_err());
    }
}
