//! Reference implementations shared by the integration tests. Nothing here
//! calls into the library's numerics.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use meixnernet_core::autodiff::Tape;
use meixnernet_core::graph::{CsrMatrix, Graph};
use meixnernet_core::model::TwoLayerNet;
use meixnernet_core::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Cyclic Jacobi eigensolver for a dense symmetric matrix. Returns
/// eigenvalues and eigenvectors (as columns `v[r][i]`), unsorted.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

pub fn dense(m: &CsrMatrix) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; m.cols()]; m.rows()];
    for (r, c, v) in m.iter() {
        d[r][c] += v;
    }
    d
}

/// `U g(Λ) Uᵀ x` with `g` evaluated per eigenvalue.
pub fn spectral_filter(a: &[Vec<f64>], x: &Tensor, g: impl Fn(f64) -> f64) -> Vec<Vec<f64>> {
    let n = a.len();
    let (vals, vecs) = jacobi_eigen(a);
    let f = x.cols();
    let mut out = vec![vec![0.0; f]; n];
    for (i, &lambda) in vals.iter().enumerate() {
        let gv = g(lambda);
        for col in 0..f {
            let proj: f64 = (0..n).map(|r| vecs[r][i] * x.get(r, col)).sum();
            for r in 0..n {
                out[r][col] += vecs[r][i] * gv * proj;
            }
        }
    }
    out
}

/// Monic Meixner polynomials `M_0..M_{k-1}` at `x`, from the closed-form
/// coefficients.
pub fn meixner_values(beta: f64, c: f64, k: usize, x: f64) -> Vec<f64> {
    let b = |j: f64| (j * (1.0 + c) + beta * c) / (1.0 - c);
    let cc = |j: f64| c * j * (j + beta - 1.0) / ((1.0 - c) * (1.0 - c));
    let mut out = vec![1.0];
    if k > 1 {
        out.push(x - b(0.0));
    }
    for j in 2..k {
        let jf = (j - 1) as f64;
        let next = (x - b(jf)) * out[j - 1] - cc(jf) * out[j - 2];
        out.push(next);
    }
    out.truncate(k);
    out
}

pub fn erdos_renyi(n: usize, p: f64, rng: &mut impl Rng) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Graph::new(n, edges).unwrap()
}

pub fn random_tensor(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Dense `I - D^{-1/2} A D^{-1/2}` with `L_ii = 1` for every node.
pub fn dense_laplacian(g: &Graph) -> Vec<Vec<f64>> {
    let n = g.num_nodes();
    let mut deg = vec![0.0f64; n];
    for &(u, v) in g.edges() {
        deg[u] += 1.0;
        deg[v] += 1.0;
    }
    let mut l = vec![vec![0.0; n]; n];
    for (i, row) in l.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for &(u, v) in g.edges() {
        let w = -1.0 / (deg[u] * deg[v]).sqrt();
        l[u][v] = w;
        l[v][u] = w;
    }
    l
}

pub fn max_abs_diff(a: &Tensor, b: &[Vec<f64>]) -> f64 {
    let mut m: f64 = 0.0;
    for (r, row) in b.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            m = m.max((a.get(r, c) - v).abs());
        }
    }
    m
}

pub const FD_H: f64 = 1e-6;

/// Eval-mode mean cross-entropy, computed by the tape forward pass.
pub fn eval_loss(net: &TwoLayerNet, op: &CsrMatrix, x: &Tensor, labels: &[usize], mask: &[usize]) -> f64 {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = net.forward(&mut tape, op, xv, false, &mut rng(0)).unwrap();
    let loss = tape.softmax_cross_entropy(out.logits, labels, mask).unwrap();
    tape.value(loss).item()
}

/// Relative error with an absolute floor for near-zero gradients.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Analytic vs central-difference gradients of the eval loss for every
/// scalar parameter: `(param name, kind debug string, max rel err)`.
pub fn net_gradcheck(
    net: &mut TwoLayerNet,
    op: &CsrMatrix,
    x: &Tensor,
    labels: &[usize],
    mask: &[usize],
) -> Vec<(String, String, f64)> {
    net.store_mut().zero_grad();
    {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = net.forward(&mut tape, op, xv, false, &mut rng(0)).unwrap();
        let loss = tape.softmax_cross_entropy(out.logits, labels, mask).unwrap();
        tape.backward_into(loss, net.store_mut()).unwrap();
    }
    let ids: Vec<_> = net.store().iter().map(|(id, _)| id).collect();
    let mut out = Vec::new();
    for id in ids {
        let p = net.store().param(id);
        let (name, kind, n) = (p.name.clone(), format!("{:?}", p.kind), p.value.len());
        let analytic = p.value.grad().map(<[f64]>::to_vec).unwrap_or(vec![0.0; n]);
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let orig = net.store().get(id).data()[i];
            net.store_mut().get_mut(id).data_mut()[i] = orig + FD_H;
            let lp = eval_loss(net, op, x, labels, mask);
            net.store_mut().get_mut(id).data_mut()[i] = orig - FD_H;
            let lm = eval_loss(net, op, x, labels, mask);
            net.store_mut().get_mut(id).data_mut()[i] = orig;
            worst = worst.max(rel_err(analytic[i], (lp - lm) / (2.0 * FD_H)));
        }
        out.push((name, kind, worst));
    }
    net.store_mut().zero_grad();
    out
}
