//! Full-batch semi-supervised training, evaluation and ablation sweeps.
//!
//! One epoch is a full-graph forward pass in training mode, the masked
//! cross-entropy on the train nodes, a backward pass and one Adam step,
//! followed by an eval-mode validation accuracy. The model after the last
//! epoch is the one tested; there is no early stopping.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::GraphBundle;
use crate::error::{Error, Result};
use crate::graph::CsrMatrix;
use crate::model::{ModelKind, NetConfig, TwoLayerNet};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::Tensor;

/// ChaCha stream reserved for dropout masks; initialization uses a separate
/// generator, and evaluation draws nothing.
pub const DROPOUT_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub k: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub normalize: bool,
    pub layer_norm_affine: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Meixner,
            k: 2,
            hidden: 16,
            dropout: 0.5,
            epochs: 200,
            seed: 0,
            adam: AdamConfig::default(),
            normalize: true,
            layer_norm_affine: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.k < 1 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        if self.hidden < 1 {
            return Err(Error::InvalidArgument("hidden must be at least 1".into()));
        }
        Ok(())
    }

    pub fn net_config(&self, bundle: &GraphBundle) -> NetConfig {
        NetConfig {
            kind: self.model,
            in_features: bundle.meta.num_features,
            hidden: self.hidden,
            num_classes: bundle.meta.num_classes,
            k: self.k,
            dropout: self.dropout,
            normalize: self.normalize,
            layer_norm_affine: self.layer_norm_affine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub dataset: String,
    pub config: TrainConfig,
    /// Training loss per epoch (before that epoch's update).
    pub train_loss: Vec<f64>,
    /// Validation accuracy per epoch (after that epoch's update).
    pub val_acc: Vec<f64>,
    pub train_acc: f64,
    pub final_val_acc: f64,
    pub test_acc: f64,
    /// Effective `(β, c)` per Meixner layer; empty for the baseline.
    pub learned: Vec<(f64, f64)>,
    pub wall_ms: u128,
    pub warnings: Vec<String>,
}

impl TrainReport {
    /// Equality of every deterministic field (all but wall time), bitwise on
    /// floats.
    pub fn same_results(&self, other: &TrainReport) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        let pairs = |v: &[(f64, f64)]| v.iter().map(|(a, b)| (a.to_bits(), b.to_bits())).collect::<Vec<_>>();
        self.dataset == other.dataset
            && self.config == other.config
            && bits(&self.train_loss) == bits(&other.train_loss)
            && bits(&self.val_acc) == bits(&other.val_acc)
            && self.train_acc.to_bits() == other.train_acc.to_bits()
            && self.final_val_acc.to_bits() == other.final_val_acc.to_bits()
            && self.test_acc.to_bits() == other.test_acc.to_bits()
            && pairs(&self.learned) == pairs(&other.learned)
            && self.warnings == other.warnings
    }
}

/// Seed and position of the dropout generator, enough to resume the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// ChaCha word position, as a decimal string (it is a u128).
    pub word_pos: String,
    pub epochs: usize,
}

impl RngState {
    pub fn capture(seed: u64, rng: &ChaCha8Rng, epochs: usize) -> Self {
        Self {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
            epochs,
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad rng word position `{}`", self.word_pos)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: TwoLayerNet,
    pub report: TrainReport,
    pub rng: RngState,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Argmax accuracy of `logits` over the nodes in `mask`.
pub fn accuracy(logits: &Tensor, labels: &[usize], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let correct = mask.iter().filter(|&&i| argmax(logits.row(i)) == labels[i]).count();
    Ok(correct as f64 / mask.len() as f64)
}

/// Eval-mode accuracy of `net` on the bundle nodes in `mask`.
pub fn evaluate(net: &TwoLayerNet, op: &CsrMatrix, bundle: &GraphBundle, mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let logits = net.logits(op, &bundle.features)?;
    accuracy(&logits, &bundle.labels, mask)
}

fn divergence_diagnostic(net: &TwoLayerNet, basis_max_abs: &[Vec<f64>], cause: &str) -> String {
    let params: Vec<String> = net
        .learned_meixner_params()
        .iter()
        .enumerate()
        .map(|(i, (b, c))| format!("layer{}: beta={b:.6} c={c:.6}", i + 1))
        .collect();
    let maxes: Vec<String> = basis_max_abs
        .iter()
        .enumerate()
        .map(|(i, m)| format!("layer{} basis max |x| = {m:?}", i + 1))
        .collect();
    format!("{cause}; {}; {}", params.join(", "), maxes.join("; "))
}

/// Trains with `config` on `bundle` and returns the final model and report.
pub fn train_model(config: &TrainConfig, bundle: &GraphBundle) -> Result<TrainOutcome> {
    config.validate()?;
    bundle.validate()?;
    let start = Instant::now();
    let op = config.model.operator(&bundle.graph)?;
    let mut net = TwoLayerNet::new(config.net_config(bundle), config.seed)?;
    let mut adam = AdamState::new(config.adam, net.store());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(DROPOUT_STREAM);

    let mut train_loss = Vec::with_capacity(config.epochs);
    let mut val_acc = Vec::with_capacity(config.epochs);
    let mut warnings: Vec<String> = Vec::new();

    for epoch in 1..=config.epochs {
        net.store_mut().zero_grad();
        let mut tape = Tape::new();
        let x = tape.constant(bundle.features.clone());
        let out = match net.forward(&mut tape, &op, x, true, &mut rng) {
            Ok(out) => out,
            Err(e @ Error::NonFiniteActivation { .. }) => {
                return Err(Error::Diverged {
                    epoch,
                    diagnostic: divergence_diagnostic(&net, &[], &e.to_string()),
                })
            }
            Err(e) => return Err(e),
        };
        for w in out.warnings {
            if !warnings.contains(&w) {
                warnings.push(w);
            }
        }
        let loss = tape.softmax_cross_entropy(out.logits, &bundle.labels, &bundle.masks.train)?;
        let loss_value = tape.value(loss).item();
        if !loss_value.is_finite() {
            return Err(Error::Diverged {
                epoch,
                diagnostic: divergence_diagnostic(&net, &out.basis_max_abs, &format!("loss = {loss_value}")),
            });
        }
        tape.backward_into(loss, net.store_mut())?;
        drop(tape);
        adam.step(net.store_mut())?;

        for (beta, c) in net.learned_meixner_params() {
            assert!(beta > 0.0 && c > 0.0 && c < 1.0, "shape parameters left their domain");
        }

        let acc = evaluate(&net, &op, bundle, &bundle.masks.val)?;
        log::debug!("epoch {epoch:>4}  loss {loss_value:.4}  val {acc:.4}");
        train_loss.push(loss_value);
        val_acc.push(acc);
    }

    let logits = net.logits(&op, &bundle.features)?;
    let report = TrainReport {
        dataset: bundle.meta.name.clone(),
        config: config.clone(),
        train_loss,
        val_acc,
        train_acc: accuracy(&logits, &bundle.labels, &bundle.masks.train)?,
        final_val_acc: accuracy(&logits, &bundle.labels, &bundle.masks.val)?,
        test_acc: accuracy(&logits, &bundle.labels, &bundle.masks.test)?,
        learned: net.learned_meixner_params(),
        wall_ms: start.elapsed().as_millis(),
        warnings,
    };
    let rng = RngState::capture(config.seed, &rng, config.epochs);
    Ok(TrainOutcome { net, report, rng })
}

pub fn train(config: &TrainConfig, bundle: &GraphBundle) -> Result<TrainReport> {
    train_model(config, bundle).map(|o| o.report)
}

/// Runs every configuration in parallel; results keep the input order.
pub fn run_all(configs: &[TrainConfig], bundle: &GraphBundle) -> Result<Vec<TrainReport>> {
    configs.par_iter().map(|c| train(c, bundle)).collect()
}

/// Both models at each `K`, all with `config.seed`. Rows are ordered
/// Meixner first, then by `K` as given.
pub fn ablate_k(config: &TrainConfig, bundle: &GraphBundle, k_values: &[usize]) -> Result<Vec<TrainReport>> {
    if k_values.is_empty() {
        return Err(Error::InvalidArgument("empty K list".into()));
    }
    let configs: Vec<TrainConfig> = [ModelKind::Meixner, ModelKind::Cheby]
        .into_iter()
        .flat_map(|model| {
            k_values.iter().map(move |&k| TrainConfig {
                model,
                k,
                ..config.clone()
            })
        })
        .collect();
    run_all(&configs, bundle)
}

/// Both models at each hidden width, at `config.k`.
pub fn ablate_hidden(config: &TrainConfig, bundle: &GraphBundle, hidden_values: &[usize]) -> Result<Vec<TrainReport>> {
    if hidden_values.is_empty() {
        return Err(Error::InvalidArgument("empty hidden-size list".into()));
    }
    let configs: Vec<TrainConfig> = [ModelKind::Meixner, ModelKind::Cheby]
        .into_iter()
        .flat_map(|model| {
            hidden_values.iter().map(move |&hidden| TrainConfig {
                model,
                hidden,
                ..config.clone()
            })
        })
        .collect();
    run_all(&configs, bundle)
}

pub const SERIES_HEADER: &str = "model,dataset,K,hidden,seed,epoch,train_loss,val_acc";
pub const FINALS_HEADER: &str = "model,dataset,K,hidden,seed,test_acc,beta_l1,c_l1,beta_l2,c_l2,wall_ms";

/// Per-epoch series rows, epochs numbered from 1.
pub fn write_series_csv<W: Write>(mut w: W, reports: &[TrainReport]) -> std::io::Result<()> {
    writeln!(w, "{SERIES_HEADER}")?;
    for r in reports {
        let c = &r.config;
        for (e, (loss, acc)) in r.train_loss.iter().zip(&r.val_acc).enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{loss},{acc}",
                c.model,
                r.dataset,
                c.k,
                c.hidden,
                c.seed,
                e + 1
            )?;
        }
    }
    Ok(())
}

/// One row per run; Meixner columns are empty for the baseline.
pub fn write_finals_csv<W: Write>(mut w: W, reports: &[TrainReport]) -> std::io::Result<()> {
    writeln!(w, "{FINALS_HEADER}")?;
    for r in reports {
        let c = &r.config;
        let mut params = [String::new(), String::new(), String::new(), String::new()];
        for (i, (b, cc)) in r.learned.iter().take(2).enumerate() {
            params[2 * i] = b.to_string();
            params[2 * i + 1] = cc.to_string();
        }
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            c.model,
            r.dataset,
            c.k,
            c.hidden,
            c.seed,
            r.test_acc,
            params.join(","),
            r.wall_ms
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[-1.0, -2.0]), 0);
    }

    #[test]
    fn accuracy_perfect_uniform_and_hand_counted() {
        let labels = [0, 1, 1, 2, 0];
        let mask = [0, 1, 2, 3, 4];
        let perfect = Tensor::from_rows(&[
            &[5.0, 0.0, 0.0],
            &[0.0, 5.0, 0.0],
            &[0.0, 5.0, 0.0],
            &[0.0, 0.0, 5.0],
            &[5.0, 0.0, 0.0],
        ]);
        assert_eq!(accuracy(&perfect, &labels, &mask).unwrap(), 1.0);

        let uniform = Tensor::zeros(5, 3);
        assert_eq!(accuracy(&uniform, &labels, &mask).unwrap(), 0.4);

        // Rows predict 0, 1, 0, 2, 2 → nodes 0, 1, 3 correct.
        let mixed = Tensor::from_rows(&[
            &[1.0, 0.0, 0.0],
            &[0.0, 2.0, 1.0],
            &[3.0, 1.0, 1.0],
            &[0.0, 0.5, 0.6],
            &[0.0, 0.0, 0.1],
        ]);
        assert_eq!(accuracy(&mixed, &labels, &mask).unwrap(), 0.6);
        assert_eq!(accuracy(&mixed, &labels, &[1, 2]).unwrap(), 0.5);
        assert!(matches!(accuracy(&mixed, &labels, &[]), Err(Error::EmptyMask)));
    }

    #[test]
    fn rng_state_round_trip() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        rng.set_stream(DROPOUT_STREAM);
        for _ in 0..37 {
            rng.random::<f64>();
        }
        let state = RngState::capture(9, &rng, 3);
        let mut restored = state.restore().unwrap();
        assert_eq!(rng.random::<u64>(), restored.random::<u64>());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig {
            k: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn finals_csv_leaves_baseline_params_blank() {
        let report = TrainReport {
            dataset: "d".into(),
            config: TrainConfig {
                model: ModelKind::Cheby,
                ..TrainConfig::default()
            },
            train_loss: vec![0.5],
            val_acc: vec![0.25],
            train_acc: 1.0,
            final_val_acc: 0.25,
            test_acc: 0.75,
            learned: vec![],
            wall_ms: 12,
            warnings: vec![],
        };
        let mut buf = Vec::new();
        write_finals_csv(&mut buf, std::slice::from_ref(&report)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "cheby,d,2,16,0,0.75,,,,,12");
        let mut buf = Vec::new();
        write_series_csv(&mut buf, &[report]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().lines().nth(1).unwrap(),
            "cheby,d,2,16,0,1,0.5,0.25"
        );
    }
}
