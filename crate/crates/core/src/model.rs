//! `MeixnerConv` / `ChebConv` layers and the two-layer node classifier.
//!
//! A layer of filter size `K` maps `X ∈ R^{N×F_in}` to `Y ∈ R^{N×F_out}`:
//! it evaluates `K` polynomial bases of the graph operator applied to `X`,
//! concatenates them along the feature axis (ascending order) and projects
//! with one linear map `W ∈ R^{(K·F_in)×F_out}` plus bias.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{chebyshev_rescale, scale_laplacian, sym_normalized_laplacian, CsrMatrix, Graph};
use crate::poly::{chebyshev_basis, meixner_basis, meixner_coeffs, MeixnerParams, PerBasisNorm};
use crate::tensor::{ParamId, ParamKind, ParamStore, Tensor};

/// Laplacian scale for the Meixner filter: maps `[0, 2]` onto `[0, 1]`.
pub const MEIXNER_LAPLACIAN_SCALE: f64 = 0.5;
/// Spectral bound used for the Chebyshev rescaling `2L/λ_max - I`.
pub const CHEBYSHEV_LAMBDA_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Meixner,
    Cheby,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Meixner => "meixner",
            ModelKind::Cheby => "cheby",
        }
    }

    /// Builds the graph operator this model filters with.
    pub fn operator(self, g: &Graph) -> Result<CsrMatrix> {
        let l = sym_normalized_laplacian(g)?;
        match self {
            ModelKind::Meixner => scale_laplacian(&l, MEIXNER_LAPLACIAN_SCALE),
            ModelKind::Cheby => chebyshev_rescale(&l, CHEBYSHEV_LAMBDA_MAX),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "meixner" => Ok(ModelKind::Meixner),
            "cheby" | "chebyshev" => Ok(ModelKind::Cheby),
            other => Err(Error::InvalidArgument(format!("unknown model `{other}`"))),
        }
    }
}

/// Glorot-uniform `rows × cols` matrix.
fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::from_vec(rows, cols, data).expect("sized")
}

/// Output of one conv layer.
#[derive(Debug, Clone)]
pub struct LayerOutput {
    pub y: Var,
    /// Max-abs entry of each raw basis, ascending order.
    pub basis_max_abs: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct MeixnerConvLayer {
    name: String,
    pub params: MeixnerParams,
    /// `(gain, bias)` per basis order, when layer norm carries an affine map.
    pub norms: Vec<Option<(ParamId, ParamId)>>,
    pub weight: ParamId,
    pub bias: ParamId,
    normalize: bool,
    k: usize,
    f_in: usize,
    f_out: usize,
}

impl MeixnerConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        f_in: usize,
        f_out: usize,
        k: usize,
        normalize: bool,
        affine: bool,
        rng: &mut R,
    ) -> Result<Self> {
        check_layer_dims(name, f_in, f_out, k)?;
        let params = MeixnerParams::register(store, name);
        let norms = (0..k)
            .map(|order| {
                (normalize && affine).then(|| {
                    (
                        store.add(
                            format!("{name}.norm{order}.gain"),
                            ParamKind::NormGain,
                            Tensor::full(1, f_in, 1.0),
                        ),
                        store.add(
                            format!("{name}.norm{order}.bias"),
                            ParamKind::NormBias,
                            Tensor::zeros(1, f_in),
                        ),
                    )
                })
            })
            .collect();
        let weight = store.add(
            format!("{name}.weight"),
            ParamKind::Weight,
            glorot(k * f_in, f_out, rng),
        );
        let bias = store.add(format!("{name}.bias"), ParamKind::Bias, Tensor::zeros(1, f_out));
        Ok(Self {
            name: name.to_string(),
            params,
            norms,
            weight,
            bias,
            normalize,
            k,
            f_in,
            f_out,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.f_in, self.f_out)
    }

    pub fn forward<'g>(
        &self,
        tape: &mut Tape<'g>,
        store: &ParamStore,
        l_scaled: &'g CsrMatrix,
        x: Var,
    ) -> Result<LayerOutput> {
        let (beta, c) = self.params.record(tape, store);
        let coeffs = meixner_coeffs(tape, beta, c, self.k)?;
        let norm = if self.normalize {
            PerBasisNorm::On(
                self.norms
                    .iter()
                    .map(|n| n.map(|(g, b)| (tape.param(store, g), tape.param(store, b))))
                    .collect(),
            )
        } else {
            PerBasisNorm::Off
        };
        let basis = meixner_basis(tape, l_scaled, x, &coeffs, self.k, &norm).map_err(|e| match e {
            Error::NonFiniteActivation { basis, .. } => Error::NonFiniteActivation {
                layer: self.name.clone(),
                basis,
            },
            other => other,
        })?;
        let y = project(tape, store, &basis.terms, self.weight, self.bias)?;
        check_finite(tape, y, &self.name, self.k - 1)?;
        Ok(LayerOutput {
            y,
            basis_max_abs: basis.raw_max_abs,
            warnings: basis
                .warnings
                .into_iter()
                .map(|w| format!("{}: {w}", self.name))
                .collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ChebConvLayer {
    name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    k: usize,
    f_in: usize,
    f_out: usize,
}

impl ChebConvLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        f_in: usize,
        f_out: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        check_layer_dims(name, f_in, f_out, k)?;
        let weight = store.add(
            format!("{name}.weight"),
            ParamKind::Weight,
            glorot(k * f_in, f_out, rng),
        );
        let bias = store.add(format!("{name}.bias"), ParamKind::Bias, Tensor::zeros(1, f_out));
        Ok(Self {
            name: name.to_string(),
            weight,
            bias,
            k,
            f_in,
            f_out,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.f_in, self.f_out)
    }

    pub fn forward<'g>(
        &self,
        tape: &mut Tape<'g>,
        store: &ParamStore,
        l_hat: &'g CsrMatrix,
        x: Var,
    ) -> Result<LayerOutput> {
        let terms = chebyshev_basis(tape, l_hat, x, self.k)?;
        let mut basis_max_abs = Vec::with_capacity(self.k);
        for (order, &t) in terms.iter().enumerate() {
            check_finite(tape, t, &self.name, order)?;
            basis_max_abs.push(tape.value(t).max_abs());
        }
        let y = project(tape, store, &terms, self.weight, self.bias)?;
        check_finite(tape, y, &self.name, self.k - 1)?;
        Ok(LayerOutput {
            y,
            basis_max_abs,
            warnings: Vec::new(),
        })
    }
}

fn check_layer_dims(name: &str, f_in: usize, f_out: usize, k: usize) -> Result<()> {
    if k < 1 || f_in < 1 || f_out < 1 {
        return Err(Error::InvalidArgument(format!(
            "{name}: K, F_in and F_out must be positive (got K={k}, F_in={f_in}, F_out={f_out})"
        )));
    }
    Ok(())
}

fn check_finite(tape: &Tape<'_>, v: Var, layer: &str, basis: usize) -> Result<()> {
    if tape.value(v).all_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation {
            layer: layer.to_string(),
            basis,
        })
    }
}

/// `concat(terms) · W + b`.
fn project(tape: &mut Tape<'_>, store: &ParamStore, terms: &[Var], weight: ParamId, bias: ParamId) -> Result<Var> {
    let z = if terms.len() == 1 {
        terms[0]
    } else {
        tape.concat_cols(terms)?
    };
    let w = tape.param(store, weight);
    let b = tape.param(store, bias);
    let zw = tape.matmul(z, w)?;
    tape.add_row_bias(zw, b)
}

#[derive(Debug, Clone)]
pub enum ConvLayer {
    Meixner(MeixnerConvLayer),
    Cheb(ChebConvLayer),
}

impl ConvLayer {
    pub fn forward<'g>(
        &self,
        tape: &mut Tape<'g>,
        store: &ParamStore,
        op: &'g CsrMatrix,
        x: Var,
    ) -> Result<LayerOutput> {
        match self {
            ConvLayer::Meixner(l) => l.forward(tape, store, op, x),
            ConvLayer::Cheb(l) => l.forward(tape, store, op, x),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            ConvLayer::Meixner(l) => l.dims(),
            ConvLayer::Cheb(l) => l.dims(),
        }
    }

    pub fn meixner_params(&self) -> Option<MeixnerParams> {
        match self {
            ConvLayer::Meixner(l) => Some(l.params),
            ConvLayer::Cheb(_) => None,
        }
    }
}

/// Architecture hyperparameters of a [`TwoLayerNet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub kind: ModelKind,
    pub in_features: usize,
    pub hidden: usize,
    pub num_classes: usize,
    pub k: usize,
    pub dropout: f64,
    /// Per-basis layer normalization (Meixner only).
    pub normalize: bool,
    /// Learnable gain/bias on each layer normalization (Meixner only).
    pub layer_norm_affine: bool,
}

impl NetConfig {
    pub fn new(kind: ModelKind, in_features: usize, hidden: usize, num_classes: usize, k: usize) -> Self {
        Self {
            kind,
            in_features,
            hidden,
            num_classes,
            k,
            dropout: 0.5,
            normalize: true,
            layer_norm_affine: true,
        }
    }
}

/// Result of a full forward pass.
#[derive(Debug, Clone)]
pub struct NetOutput {
    pub logits: Var,
    /// Max-abs raw basis entries: layer 1 then layer 2.
    pub basis_max_abs: [Vec<f64>; 2],
    pub warnings: Vec<String>,
}

/// `layer2(dropout(relu(layer1(X))))`, owning its parameters.
#[derive(Debug, Clone)]
pub struct TwoLayerNet {
    config: NetConfig,
    store: ParamStore,
    layer1: ConvLayer,
    layer2: ConvLayer,
}

impl TwoLayerNet {
    /// Builds a freshly initialized network; initialization is a pure
    /// function of `(config, seed)`.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout must be in [0, 1), got {}",
                config.dropout
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let (layer1, layer2) = match c.kind {
            ModelKind::Meixner => (
                ConvLayer::Meixner(MeixnerConvLayer::new(
                    &mut store,
                    "conv1",
                    c.in_features,
                    c.hidden,
                    c.k,
                    c.normalize,
                    c.layer_norm_affine,
                    &mut rng,
                )?),
                ConvLayer::Meixner(MeixnerConvLayer::new(
                    &mut store,
                    "conv2",
                    c.hidden,
                    c.num_classes,
                    c.k,
                    c.normalize,
                    c.layer_norm_affine,
                    &mut rng,
                )?),
            ),
            ModelKind::Cheby => (
                ConvLayer::Cheb(ChebConvLayer::new(
                    &mut store,
                    "conv1",
                    c.in_features,
                    c.hidden,
                    c.k,
                    &mut rng,
                )?),
                ConvLayer::Cheb(ChebConvLayer::new(
                    &mut store,
                    "conv2",
                    c.hidden,
                    c.num_classes,
                    c.k,
                    &mut rng,
                )?),
            ),
        };
        Ok(Self {
            config,
            store,
            layer1,
            layer2,
        })
    }

    /// Rebuilds a network around previously saved parameters. The store must
    /// match the layout `config` produces (names, kinds and shapes).
    pub fn from_parts(config: NetConfig, store: ParamStore) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        if net.store.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                net.store.len(),
                store.len()
            )));
        }
        for ((_, want), (_, got)) in net.store.iter().zip(store.iter()) {
            if want.name != got.name || want.kind != got.kind || want.value.shape() != got.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` {:?} does not match `{}` {:?}",
                    got.name,
                    got.value.shape(),
                    want.name,
                    want.value.shape()
                )));
            }
        }
        net.store = store;
        Ok(net)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn layers(&self) -> [&ConvLayer; 2] {
        [&self.layer1, &self.layer2]
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Effective `(β, c)` of each Meixner layer; empty for the baseline.
    pub fn learned_meixner_params(&self) -> Vec<(f64, f64)> {
        self.layers()
            .iter()
            .filter_map(|l| l.meixner_params())
            .map(|p| p.effective(&self.store))
            .collect()
    }

    /// Records the forward pass. Dropout draws from `rng` only when `training`.
    pub fn forward<'g, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'g>,
        op: &'g CsrMatrix,
        x: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<NetOutput> {
        let h = self.layer1.forward(tape, &self.store, op, x)?;
        let a = tape.relu(h.y);
        let a = tape.dropout(a, self.config.dropout, training, rng)?;
        let out = self.layer2.forward(tape, &self.store, op, a)?;
        let mut warnings = h.warnings;
        warnings.extend(out.warnings);
        Ok(NetOutput {
            logits: out.y,
            basis_max_abs: [h.basis_max_abs, out.basis_max_abs],
            warnings,
        })
    }

    /// Eval-mode logits.
    pub fn logits(&self, op: &CsrMatrix, features: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        // Not consulted in eval mode.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, op, x, false, &mut rng)?;
        Ok(tape.value(out.logits).clone())
    }
}
