//! Self-check suites run by `meixnernet verify`.
//!
//! - `gradcheck`: full-network loss gradients against central differences
//! - `eigen`: recurrence bases against dense eigendecomposition filtering
//! - `orthogonality`: discrete orthogonality of the Meixner recurrence
//! - `stability`: per-basis normalization keeps high-order bases bounded

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::data::{synthetic_two_cluster, SyntheticSpec};
use crate::error::Result;
use crate::graph::{chebyshev_rescale, scale_laplacian, sym_normalized_laplacian, CsrMatrix, Graph};
use crate::model::{ModelKind, NetConfig, TwoLayerNet};
use crate::poly::{
    chebyshev_basis, meixner_basis, meixner_coeffs_f64, meixner_eval, meixner_orthogonality_check, PerBasisNorm,
    RecurrenceVars,
};
use crate::spectral::symmetric_eigen;
use crate::tensor::{ParamKind, Tensor};

pub const FD_STEP: f64 = 1e-6;
/// Gradient magnitudes below this are compared absolutely.
pub const GRAD_REL_FLOOR: f64 = 1e-6;
pub const GRADCHECK_TOL: f64 = 1e-4;
pub const EIGEN_TOL: f64 = 1e-8;
pub const CHEB_CLOSED_FORM_TOL: f64 = 1e-10;
pub const ORTHOGONALITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Gradcheck,
    Eigen,
    Orthogonality,
    Stability,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Gradcheck, Suite::Eigen, Suite::Orthogonality, Suite::Stability];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Gradcheck => "gradcheck",
            Suite::Eigen => "eigen",
            Suite::Orthogonality => "orthogonality",
            Suite::Stability => "stability",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| format!("unknown suite `{s}`"))
    }
}

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    /// Test hook: added to every `b_k` used by the sparse recurrence (but not
    /// by the eigenbasis reference) in the `eigen` suite.
    pub coeff_perturbation: f64,
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub suite: Suite,
    pub passed: bool,
    /// Worst observed error metric.
    pub worst: f64,
    pub detail: String,
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> Result<SuiteResult> {
    match suite {
        Suite::Gradcheck => gradcheck_suite(),
        Suite::Eigen => eigen_suite(opts),
        Suite::Orthogonality => Ok(orthogonality_suite()),
        Suite::Stability => stability_suite(),
    }
}

/// Erdős–Rényi graph.
pub fn random_graph<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Graph::new(n, edges).expect("endpoints in range")
}

pub fn random_tensor<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .expect("sized")
}

/// Eval-mode mean cross-entropy of `net` over `mask`.
pub fn net_loss(net: &TwoLayerNet, op: &CsrMatrix, x: &Tensor, labels: &[usize], mask: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = net.forward(&mut tape, op, xv, false, &mut ChaCha8Rng::seed_from_u64(0))?;
    let loss = tape.softmax_cross_entropy(out.logits, labels, mask)?;
    Ok(tape.value(loss).item())
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    /// Worst error per parameter role.
    pub by_kind: Vec<(ParamKind, f64)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_REL_FLOOR)
}

/// Compares every scalar parameter's analytic gradient with a central
/// difference of the eval-mode loss.
pub fn gradcheck_net(
    net: &mut TwoLayerNet,
    op: &CsrMatrix,
    x: &Tensor,
    labels: &[usize],
    mask: &[usize],
) -> Result<GradcheckReport> {
    net.store_mut().zero_grad();
    {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = net.forward(&mut tape, op, xv, false, &mut ChaCha8Rng::seed_from_u64(0))?;
        let loss = tape.softmax_cross_entropy(out.logits, labels, mask)?;
        tape.backward_into(loss, net.store_mut())?;
    }
    let ids: Vec<_> = net.store().iter().map(|(id, _)| id).collect();
    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        by_kind: Vec::new(),
        checked: 0,
    };
    for id in ids {
        let (name, kind, n) = {
            let p = net.store().param(id);
            (p.name.clone(), p.kind, p.value.len())
        };
        let analytic: Vec<f64> = net.store().get(id).grad().map_or(vec![0.0; n], <[f64]>::to_vec);
        for i in 0..n {
            let orig = net.store().get(id).data()[i];
            net.store_mut().get_mut(id).data_mut()[i] = orig + FD_STEP;
            let plus = net_loss(net, op, x, labels, mask)?;
            net.store_mut().get_mut(id).data_mut()[i] = orig - FD_STEP;
            let minus = net_loss(net, op, x, labels, mask)?;
            net.store_mut().get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = relative_error(analytic[i], numeric);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_param = format!("{name}[{i}]");
            }
            match report.by_kind.iter_mut().find(|(k, _)| *k == kind) {
                Some((_, e)) => *e = e.max(err),
                None => report.by_kind.push((kind, err)),
            }
        }
    }
    net.store_mut().zero_grad();
    Ok(report)
}

fn gradcheck_suite() -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, f, h, c, k) = (12, 5, 4, 3, 3);
    let g = random_graph(n, 0.3, &mut rng);
    let x = random_tensor(n, f, &mut rng);
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let mask: Vec<usize> = (0..n).collect();
    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    for kind in [ModelKind::Meixner, ModelKind::Cheby] {
        let op = kind.operator(&g)?;
        let mut net = TwoLayerNet::new(NetConfig::new(kind, f, h, c, k), 3)?;
        let r = gradcheck_net(&mut net, &op, &x, &labels, &mask)?;
        worst = worst.max(r.max_rel_err);
        details.push(format!(
            "{kind}: {} params, max rel err {:.2e} at {}",
            r.checked, r.max_rel_err, r.worst_param
        ));
    }
    Ok(SuiteResult {
        suite: Suite::Gradcheck,
        passed: worst < GRADCHECK_TOL,
        worst,
        detail: details.join("; "),
    })
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn eigen_suite(opts: &VerifyOptions) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let k = 6;
    let mut worst_meixner: f64 = 0.0;
    let mut worst_cheb: f64 = 0.0;
    for trial in 0..20 {
        let n = rng.random_range(2..=16);
        let g = random_graph(n, 0.35, &mut rng);
        let l = sym_normalized_laplacian(&g)?;
        let ls = scale_laplacian(&l, 0.5)?;
        let lh = chebyshev_rescale(&l, 2.0)?;
        let x = random_tensor(n, 3, &mut rng);
        // Moderate shapes: for c near 1 the basis entries reach ~1e9 and an
        // absolute tolerance stops being meaningful.
        let beta = 0.5 + trial as f64 * 0.075;
        let c = 0.2 + (trial % 7) as f64 * 0.05;
        let coeffs = meixner_coeffs_f64(beta, c, k)?;
        let mut perturbed = coeffs.clone();
        perturbed.b.iter_mut().for_each(|b| *b += opts.coeff_perturbation);

        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let vars = RecurrenceVars::constant(&mut tape, &perturbed);
        let basis = meixner_basis(&mut tape, &ls, xv, &vars, k, &PerBasisNorm::Off)?;
        let cheb = chebyshev_basis(&mut tape, &lh, xv, k)?;

        let eig_s = symmetric_eigen(&ls.to_dense())?;
        let eig_h = symmetric_eigen(&lh.to_dense())?;
        for order in 0..k {
            let want = eig_s.filter(&x, |lambda| meixner_eval(&coeffs, lambda)[order])?;
            worst_meixner = worst_meixner.max(max_abs_diff(tape.value(basis.terms[order]), &want));
            let want = eig_h.filter(&x, |lambda| (order as f64 * lambda.clamp(-1.0, 1.0).acos()).cos())?;
            worst_cheb = worst_cheb.max(max_abs_diff(tape.value(cheb[order]), &want));
        }
    }
    let worst = worst_meixner.max(worst_cheb);
    Ok(SuiteResult {
        suite: Suite::Eigen,
        passed: worst_meixner < EIGEN_TOL && worst_cheb < EIGEN_TOL,
        worst,
        detail: format!("20 graphs, k < 6: meixner max |Δ| {worst_meixner:.2e}, chebyshev max |Δ| {worst_cheb:.2e}"),
    })
}

fn orthogonality_suite() -> SuiteResult {
    let mut worst: f64 = 0.0;
    for (beta, c) in [(1.0, 0.5), (2.0, 0.3)] {
        for k in 1..=5 {
            for j in 0..k {
                worst = worst.max(meixner_orthogonality_check(beta, c, k, j, 300));
            }
        }
    }
    SuiteResult {
        suite: Suite::Orthogonality,
        passed: worst < ORTHOGONALITY_TOL,
        worst,
        detail: format!("max normalized cross-sum {worst:.2e} over j < k <= 5"),
    }
}

/// Per-row population variance of each basis, and max |entry| of the raw
/// bases on the unscaled Laplacian at K = 2 and K = 8.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub all_finite: bool,
    pub min_row_var: f64,
    pub max_row_var: f64,
    pub raw_max_k2: f64,
    pub raw_max_k8: f64,
}

impl StabilityReport {
    pub fn passed(&self) -> bool {
        self.all_finite
            && self.min_row_var >= 0.9
            && self.max_row_var <= 1.1
            && self.raw_max_k8 >= 1e3 * self.raw_max_k2
    }
}

pub fn stability_check(graph: &Graph, x: &Tensor) -> Result<StabilityReport> {
    let l = sym_normalized_laplacian(graph)?;
    let ls = scale_laplacian(&l, 0.5)?;
    let coeffs = meixner_coeffs_f64(crate::poly::DEFAULT_BETA, crate::poly::DEFAULT_C, 8)?;

    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars = RecurrenceVars::constant(&mut tape, &coeffs);
    let normed = meixner_basis(&mut tape, &ls, xv, &vars, 8, &PerBasisNorm::On(vec![None; 8]))?;
    let mut report = StabilityReport {
        all_finite: true,
        min_row_var: f64::INFINITY,
        max_row_var: f64::NEG_INFINITY,
        raw_max_k2: 0.0,
        raw_max_k8: 0.0,
    };
    for &t in &normed.terms {
        let v = tape.value(t);
        report.all_finite &= v.all_finite();
        for r in 0..v.rows() {
            let row = v.row(r);
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / row.len() as f64;
            report.min_row_var = report.min_row_var.min(var);
            report.max_row_var = report.max_row_var.max(var);
        }
    }

    report.raw_max_k2 = raw_basis_max(&l, x, &coeffs, 2)?;
    report.raw_max_k8 = raw_basis_max(&l, x, &coeffs, 8)?;
    Ok(report)
}

fn raw_basis_max(op: &CsrMatrix, x: &Tensor, coeffs: &crate::poly::RecurrenceCoeffs, k: usize) -> Result<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars = RecurrenceVars::constant(&mut tape, coeffs);
    let b = meixner_basis(&mut tape, op, xv, &vars, k, &PerBasisNorm::Off)?;
    Ok(b.raw_max_abs.iter().fold(0.0, |m: f64, v| m.max(*v)))
}

fn stability_suite() -> Result<SuiteResult> {
    let bundle = synthetic_two_cluster(&SyntheticSpec::default())?;
    let r = stability_check(&bundle.graph, &bundle.features)?;
    Ok(SuiteResult {
        suite: Suite::Stability,
        passed: r.passed(),
        worst: r.raw_max_k8 / r.raw_max_k2,
        detail: format!(
            "K=8 normalized row variance in [{:.4}, {:.4}], finite={}; raw growth K=8/K=2 = {:.3e}",
            r.min_row_var,
            r.max_row_var,
            r.all_finite,
            r.raw_max_k8 / r.raw_max_k2
        ),
    })
}
