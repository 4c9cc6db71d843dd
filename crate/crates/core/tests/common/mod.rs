//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use metaproj::backend::PldaModel;
use metaproj::evalkit::ScoreSet;
use metaproj::meta::{meta_gradient, Episode, NetObjective};
use metaproj::nn::init_net;
use metaproj::{
    AamConfig, Activation, Batch, EmbeddingDataset, EmbeddingRecord, HeadKind, LossSpec, MetaMode,
    NetConfig, ProjectionNet,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| normal(rng))
}

/// A small random net with non-zero biases, a batch and the matching loss.
pub fn random_problem(seed: u64, head: HeadKind) -> (ProjectionNet, Batch, LossSpec) {
    let mut r = rng(seed);
    let n_layers = r.random_range(1..=3);
    let mut dims = vec![r.random_range(2..=5)];
    for _ in 0..n_layers {
        dims.push(r.random_range(2..=5));
    }
    let acts = [Activation::Relu, Activation::Tanh, Activation::Identity];
    let config = NetConfig {
        layer_dims: dims.clone(),
        hidden_activation: acts[(seed % 3) as usize],
        // A ReLU output can zero a whole row, which the cosine head rejects.
        embedding_activation: acts[1 + (seed / 3 % 2) as usize],
        head,
        n_classes: r.random_range(2..=4),
    };
    let mut net = init_net(config.clone(), seed).unwrap();
    let flat: Vec<f64> = net
        .params()
        .to_flat()
        .iter()
        .map(|_| 0.7 * normal(&mut r))
        .collect();
    net.params_mut().set_flat(&flat).unwrap();
    let n = r.random_range(2..=6);
    let x = gaussian(n, dims[0], &mut r);
    let labels = (0..n)
        .map(|_| r.random_range(0..config.n_classes))
        .collect();
    let loss = match head {
        HeadKind::SoftmaxLinear => LossSpec::Softmax,
        HeadKind::Aam => LossSpec::Aam(AamConfig {
            scale: 4.0,
            margin: 0.2,
        }),
    };
    (net, Batch::new(x, labels).unwrap(), loss)
}

pub fn random_batch(net: &ProjectionNet, n: usize, rng: &mut ChaCha8Rng) -> Batch {
    let c = net.config();
    let x = gaussian(n, c.input_dim(), rng);
    let labels = (0..n).map(|_| rng.random_range(0..c.n_classes)).collect();
    Batch::new(x, labels).unwrap()
}

fn with_flat(net: &ProjectionNet, flat: &[f64]) -> ProjectionNet {
    let mut p = net.params().clone();
    p.set_flat(flat).unwrap();
    net.with_params(p).unwrap()
}

/// Central differences of `f` over the flat parameter vector.
pub fn fd_gradient(net: &ProjectionNet, h: f64, f: impl Fn(&ProjectionNet) -> f64) -> Vec<f64> {
    let theta = net.params().to_flat();
    (0..theta.len())
        .map(|k| {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[k] += h;
            minus[k] -= h;
            (f(&with_flat(net, &plus)) - f(&with_flat(net, &minus))) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a − b| / max(|a|, |b|)` over entries, ignoring pairs that are
/// both below `floor`.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let scale = x.abs().max(y.abs());
            if scale < floor {
                0.0
            } else {
                (x - y).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

/// Max relative error between the analytic parameter gradient and central
/// differences.
pub fn gradient_check(net: &ProjectionNet, batch: &Batch, loss: &LossSpec) -> f64 {
    let (_, g) = net.loss_and_grad(batch, loss).unwrap();
    let fd = fd_gradient(net, 1e-5, |n| n.loss(batch, loss).unwrap());
    max_rel_err(&g.to_flat(), &fd, 1e-7)
}

/// Max relative error of `H v` against central differences of the gradient
/// along `v`.
pub fn hvp_check(net: &ProjectionNet, batch: &Batch, loss: &LossSpec, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut v = net.params().zeros_like();
    let dir: Vec<f64> = v.to_flat().iter().map(|_| normal(&mut r)).collect();
    v.set_flat(&dir).unwrap();
    let hv = net.hvp(batch, loss, &v).unwrap().to_flat();
    let h = 1e-5;
    let theta = net.params().to_flat();
    let shifted = |s: f64| {
        let t: Vec<f64> = theta.iter().zip(&dir).map(|(a, d)| a + s * d).collect();
        with_flat(net, &t)
            .loss_and_grad(batch, loss)
            .unwrap()
            .1
            .to_flat()
    };
    let (gp, gm) = (shifted(h), shifted(-h));
    let fd: Vec<f64> = gp
        .iter()
        .zip(&gm)
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect();
    max_rel_err(&hv, &fd, 1e-6)
}

/// The meta loss `L(θ − α ∇L(θ; local); meta)` computed from scratch.
pub fn meta_loss(net: &ProjectionNet, ep: &Episode, alpha: f64, loss: &LossSpec) -> f64 {
    let (_, g) = net.loss_and_grad(&ep.local_batch, loss).unwrap();
    let theta = net.params().to_flat();
    let adapted: Vec<f64> = theta
        .iter()
        .zip(g.to_flat())
        .map(|(t, g)| t - alpha * g)
        .collect();
    with_flat(net, &adapted).loss(&ep.meta_batch, loss).unwrap()
}

/// Max relative error of the second-order meta gradient against central
/// differences of the meta loss through the inner step.
pub fn meta_gradient_check(seed: u64, head: HeadKind, alpha: f64) -> f64 {
    let (net, local_batch, loss) = random_problem(seed, head);
    let mut r = rng(seed ^ 0x5eed);
    let ep = Episode {
        local_domain: "a".into(),
        meta_domain: "b".into(),
        local_batch,
        meta_batch: random_batch(&net, 4, &mut r),
    };
    let obj = NetObjective { loss };
    let mg = meta_gradient(&obj, &net, &ep, alpha, MetaMode::SecondOrder).unwrap();
    let fd = fd_gradient(&net, 1e-5, |n| meta_loss(n, &ep, alpha, &loss));
    max_rel_err(&mg.grad.to_flat(), &fd, 1e-6)
}

/// EER by direct counting at every threshold of the sweep, with the same
/// interpolation convention as the library.
pub fn brute_force_eer(scores: &[f64], targets: &[bool]) -> f64 {
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut thresholds = vec![f64::NEG_INFINITY];
    for w in distinct.windows(2) {
        thresholds.push((w[0] + w[1]) / 2.0);
    }
    thresholds.push(f64::INFINITY);
    let n_tar = targets.iter().filter(|&&t| t).count() as f64;
    let n_non = targets.len() as f64 - n_tar;
    let point = |t: f64| {
        let mut fa = 0usize;
        let mut fr = 0usize;
        for (s, &tg) in scores.iter().zip(targets) {
            if tg && *s < t {
                fr += 1;
            }
            if !tg && *s >= t {
                fa += 1;
            }
        }
        (fa as f64 / n_non, fr as f64 / n_tar)
    };
    let mut prev = point(thresholds[0]);
    for &t in &thresholds[1..] {
        let cur = point(t);
        let d1 = cur.1 - cur.0;
        if d1 >= 0.0 {
            if d1 == 0.0 {
                return cur.0;
            }
            let d0 = prev.1 - prev.0;
            let lambda = -d0 / (d1 - d0);
            return prev.0 + lambda * (cur.0 - prev.0);
        }
        prev = cur;
    }
    unreachable!("FRR reaches 1 at +inf")
}

pub fn random_scores(seed: u64, n: usize) -> ScoreSet {
    let mut r = rng(seed);
    let mut scores = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        // Guarantee both classes; quantise some scores to create ties.
        let target = if i < 2 { i == 0 } else { r.random_bool(0.3) };
        let mut s = normal(&mut r) + if target { 1.0 } else { 0.0 };
        if r.random_bool(0.2) {
            s = (s * 4.0).round() / 4.0;
        }
        scores.push(s);
        targets.push(target);
    }
    ScoreSet::new(scores, targets).unwrap()
}

/// 1-D two-covariance LLR written out by hand: with `T = b + w`,
/// `LLR = log T − ½ log(T² − b²) − ½ (T e² − 2 b e t + T t²)/(T² − b²) + ½ (e² + t²)/T`
/// for centred `e`, `t`.
pub fn llr_1d(mu: f64, b: f64, w: f64, e: f64, t: f64) -> f64 {
    let (e, t) = (e - mu, t - mu);
    let tot = b + w;
    let det = tot * tot - b * b;
    tot.ln() - 0.5 * det.ln() - 0.5 * (tot * e * e - 2.0 * b * e * t + tot * t * t) / det
        + 0.5 * (e * e + t * t) / tot
}

/// LLR of a 2-D model by integrating out the speaker variable on a grid.
/// With `y = μ + L z` (`B = L Lᵀ`) the prior becomes a standard normal in `z`.
pub fn llr_2d_quadrature(m: &PldaModel, e: &[f64], t: &[f64]) -> f64 {
    let e = DVector::from_column_slice(e);
    let t = DVector::from_column_slice(t);
    let l = m.b.clone().cholesky().unwrap().l();
    let w_inv = m.w.clone().try_inverse().unwrap();
    let norm = 1.0 / (2.0 * std::f64::consts::PI * m.w.determinant().sqrt());
    let pdf = |x: &DVector<f64>, y: &DVector<f64>| {
        let r = x - y;
        norm * (-0.5 * r.dot(&(&w_inv * &r))).exp()
    };
    let (lim, step) = (9.0_f64, 0.05_f64);
    let n = (2.0 * lim / step).round() as i64;
    let (mut same, mut pe, mut pt) = (0.0, 0.0, 0.0);
    for i in 0..=n {
        for j in 0..=n {
            let z = DVector::from_vec(vec![-lim + i as f64 * step, -lim + j as f64 * step]);
            let prior = (-0.5 * z.norm_squared()).exp() / (2.0 * std::f64::consts::PI);
            let y = &m.mu + &l * &z;
            let (a, b) = (pdf(&e, &y), pdf(&t, &y));
            same += prior * a * b;
            pe += prior * a;
            pt += prior * b;
        }
    }
    let cell = step * step;
    (same * cell).ln() - (pe * cell).ln() - (pt * cell).ln()
}

/// Dataset from a matrix of row vectors and speaker labels.
pub fn dataset(vectors: &[Vec<f64>], speakers: &[usize], domain: &str) -> EmbeddingDataset {
    let recs = vectors
        .iter()
        .zip(speakers)
        .enumerate()
        .map(|(i, (v, s))| EmbeddingRecord {
            utterance_id: format!("u{i}"),
            speaker_id: format!("s{s}"),
            domain_id: domain.into(),
            vector: v.clone(),
        })
        .collect();
    EmbeddingDataset::new(vectors[0].len(), recs).unwrap()
}

/// Samples a two-covariance model.
pub fn sample_plda(
    model: &PldaModel,
    n_speakers: usize,
    utts: usize,
    rng: &mut ChaCha8Rng,
) -> EmbeddingDataset {
    let d = model.mu.len();
    let lb = model.b.clone().cholesky().unwrap().l();
    let lw = model.w.clone().cholesky().unwrap().l();
    let mut vecs = Vec::new();
    let mut spk = Vec::new();
    for k in 0..n_speakers {
        let y = &model.mu + &lb * DVector::from_fn(d, |_, _| normal(rng));
        for _ in 0..utts {
            let x = &y + &lw * DVector::from_fn(d, |_, _| normal(rng));
            vecs.push(x.iter().copied().collect());
            spk.push(k);
        }
    }
    dataset(&vecs, &spk, "d")
}

/// Random SPD matrix with eigenvalues in `[lo, hi]`.
pub fn random_spd(d: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let q = gaussian(d, d, rng).qr().q();
    let lambda = DVector::from_fn(d, |i, _| {
        if d == 1 {
            hi
        } else {
            hi * (lo / hi).powf(i as f64 / (d - 1) as f64)
        }
    });
    let m = &q * DMatrix::from_diagonal(&lambda) * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Within- and between-class scatter (normalised by N) computed directly.
pub fn scatter_oracle(vectors: &[Vec<f64>], labels: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = vectors[0].len();
    let n = vectors.len() as f64;
    let k = labels.iter().max().unwrap() + 1;
    let mut means = vec![DVector::<f64>::zeros(d); k];
    let mut counts = vec![0.0; k];
    let mut global = DVector::<f64>::zeros(d);
    for (v, &l) in vectors.iter().zip(labels) {
        let x = DVector::from_column_slice(v);
        means[l] += &x;
        counts[l] += 1.0;
        global += x;
    }
    global /= n;
    for (m, c) in means.iter_mut().zip(&counts) {
        *m /= *c;
    }
    let mut sw = DMatrix::zeros(d, d);
    for (v, &l) in vectors.iter().zip(labels) {
        let r = DVector::from_column_slice(v) - &means[l];
        sw += &r * r.transpose();
    }
    let mut sb = DMatrix::zeros(d, d);
    for (m, c) in means.iter().zip(&counts) {
        let r = m - &global;
        sb += (&r * r.transpose()) * *c;
    }
    (sw / n, sb / n)
}

pub fn rel_frobenius(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    (est - truth).norm() / truth.norm()
}

/// Cosine softmax (`logits = s·cos`) loss and gradients in closed form:
/// with `g_ik = s (p_ik − δ_{k,y_i}) / n`,
/// `∂L/∂e_i = Σ_k g_ik (ŵ_k − c_ik ê_i) / ‖e_i‖` and
/// `∂L/∂w_k = Σ_i g_ik (ê_i − c_ik ŵ_k) / ‖w_k‖`.
pub fn cosine_softmax_oracle(
    emb: &DMatrix<f64>,
    w: &DMatrix<f64>,
    labels: &[usize],
    s: f64,
) -> (f64, DMatrix<f64>, DMatrix<f64>) {
    let n = emb.nrows();
    let k = w.nrows();
    let unit = |m: &DMatrix<f64>| {
        let norms: Vec<f64> = m.row_iter().map(|r| r.norm()).collect();
        let mut u = m.clone();
        for (i, nr) in norms.iter().enumerate() {
            u.row_mut(i).scale_mut(1.0 / nr);
        }
        (u, norms)
    };
    let (ue, ne) = unit(emb);
    let (uw, nw) = unit(w);
    let mut loss = 0.0;
    let mut g = DMatrix::zeros(n, k);
    let mut c = DMatrix::zeros(n, k);
    for i in 0..n {
        for j in 0..k {
            c[(i, j)] = ue.row(i).dot(&uw.row(j));
        }
        let max = (0..k)
            .map(|j| s * c[(i, j)])
            .fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..k).map(|j| (s * c[(i, j)] - max).exp()).sum();
        loss += -(s * c[(i, labels[i])] - max) + z.ln();
        for j in 0..k {
            let p = (s * c[(i, j)] - max).exp() / z;
            g[(i, j)] = s * (p - if j == labels[i] { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    let mut de = DMatrix::zeros(n, emb.ncols());
    let mut dw = DMatrix::zeros(k, w.ncols());
    for i in 0..n {
        for j in 0..k {
            let a = (uw.row(j) - ue.row(i) * c[(i, j)]) * (g[(i, j)] / ne[i]);
            let b = (ue.row(i) - uw.row(j) * c[(i, j)]) * (g[(i, j)] / nw[j]);
            let mut r = de.row_mut(i);
            r += a;
            let mut r = dw.row_mut(j);
            r += b;
        }
    }
    (loss / n as f64, de, dw)
}
