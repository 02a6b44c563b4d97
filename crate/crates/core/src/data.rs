//! The `GraphBundle` dataset directory and the synthetic two-cluster
//! generator.
//!
//! A bundle directory holds five files:
//!
//! - `meta.json`: `{name, num_nodes, num_features, num_classes, version}`
//! - `edges.tsv`: one undirected edge per line, two whitespace-separated node ids
//! - `features.tsv`: `num_nodes` lines of `num_features` tab-separated floats
//! - `labels.tsv`: `num_nodes` lines, one class id each
//! - `masks.json`: `{train: [...], val: [...], test: [...]}`
//!
//! Floats are written with 17 significant digits so a save/load cycle is
//! bit-exact. See `docs/format.md` for the full description.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub name: String,
    pub num_nodes: usize,
    pub num_features: usize,
    pub num_classes: usize,
    pub version: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Masks {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Masks {
    fn named(&self) -> [(&'static str, &[usize]); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphBundle {
    pub meta: BundleMeta,
    pub graph: Graph,
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub masks: Masks,
}

impl GraphBundle {
    /// Checks every bundle invariant; the first violation is returned.
    pub fn validate(&self) -> Result<()> {
        let m = &self.meta;
        if m.version != FORMAT_VERSION {
            return Err(Error::Version {
                expected: FORMAT_VERSION,
                found: m.version,
            });
        }
        if self.graph.num_nodes() != m.num_nodes {
            return Err(Error::MetaMismatch {
                what: "graph nodes",
                expected: m.num_nodes,
                found: self.graph.num_nodes(),
            });
        }
        if self.features.rows() != m.num_nodes {
            return Err(Error::MetaMismatch {
                what: "feature rows",
                expected: m.num_nodes,
                found: self.features.rows(),
            });
        }
        if self.features.cols() != m.num_features {
            return Err(Error::MetaMismatch {
                what: "feature columns",
                expected: m.num_features,
                found: self.features.cols(),
            });
        }
        if self.labels.len() != m.num_nodes {
            return Err(Error::MetaMismatch {
                what: "labels",
                expected: m.num_nodes,
                found: self.labels.len(),
            });
        }
        if let Some((node, &label)) = self.labels.iter().enumerate().find(|(_, &l)| l >= m.num_classes) {
            return Err(Error::LabelOutOfRange {
                node,
                label,
                num_classes: m.num_classes,
            });
        }

        let mut owner: Vec<Option<&'static str>> = vec![None; m.num_nodes];
        for (name, idx) in self.masks.named() {
            for &i in idx {
                if i >= m.num_nodes {
                    return Err(Error::MaskIndexOutOfRange {
                        mask: name,
                        index: i,
                        num_nodes: m.num_nodes,
                    });
                }
                match owner[i] {
                    Some(prev) if prev == name => return Err(Error::MaskDuplicate { mask: name, index: i }),
                    Some(prev) => {
                        return Err(Error::MaskOverlap {
                            index: i,
                            first: prev,
                            second: name,
                        })
                    }
                    None => owner[i] = Some(name),
                }
            }
        }

        let present: HashSet<usize> = self.masks.train.iter().map(|&i| self.labels[i]).collect();
        if let Some(c) = (0..m.num_classes).find(|c| !present.contains(c)) {
            return Err(Error::ClassMissingFromTrain(c));
        }
        Ok(())
    }

    /// Fraction of `mask` nodes whose label is `class`.
    pub fn class_frequency(&self, mask: &[usize], class: usize) -> f64 {
        if mask.is_empty() {
            return 0.0;
        }
        mask.iter().filter(|&&i| self.labels[i] == class).count() as f64 / mask.len() as f64
    }
}

fn read(dir: &Path, file: &str) -> Result<String> {
    let path = dir.join(file);
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    Ok(fs::read_to_string(path)?)
}

fn parse_err(file: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        msg: msg.into(),
    }
}

/// Loads and validates a bundle directory.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<GraphBundle> {
    let dir = dir.as_ref();
    let meta: BundleMeta =
        serde_json::from_str(&read(dir, "meta.json")?).map_err(|e| parse_err("meta.json", e.line(), e.to_string()))?;
    if meta.version != FORMAT_VERSION {
        return Err(Error::Version {
            expected: FORMAT_VERSION,
            found: meta.version,
        });
    }
    let n = meta.num_nodes;

    let mut edges = Vec::new();
    for (i, line) in read(dir, "edges.tsv")?.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let ids: Vec<&str> = line.split_whitespace().collect();
        if ids.len() != 2 {
            return Err(parse_err(
                "edges.tsv",
                lineno,
                format!("expected 2 columns, found {}", ids.len()),
            ));
        }
        let mut pair = [0usize; 2];
        for (slot, s) in pair.iter_mut().zip(&ids) {
            *slot = s
                .parse()
                .map_err(|_| parse_err("edges.tsv", lineno, format!("bad node id `{s}`")))?;
            if *slot >= n {
                return Err(Error::EdgeOutOfRange {
                    line: lineno,
                    node: *slot,
                    num_nodes: n,
                });
            }
        }
        edges.push((pair[0], pair[1]));
    }
    let graph = Graph::new(n, edges)?;

    let text = read(dir, "features.tsv")?;
    let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if rows.len() != n {
        return Err(Error::MetaMismatch {
            what: "feature rows",
            expected: n,
            found: rows.len(),
        });
    }
    let mut data = Vec::with_capacity(n * meta.num_features);
    for (i, row) in rows.iter().enumerate() {
        let before = data.len();
        for s in row.split_whitespace() {
            let v: f64 = s
                .parse()
                .map_err(|_| parse_err("features.tsv", i + 1, format!("bad float `{s}`")))?;
            data.push(v);
        }
        if data.len() - before != meta.num_features {
            return Err(parse_err(
                "features.tsv",
                i + 1,
                format!("expected {} columns, found {}", meta.num_features, data.len() - before),
            ));
        }
    }
    let features = Tensor::from_vec(n, meta.num_features, data)?;

    let mut labels = Vec::with_capacity(n);
    for (i, line) in read(dir, "labels.tsv")?.lines().enumerate() {
        let s = line.trim();
        if s.is_empty() {
            continue;
        }
        labels.push(
            s.parse()
                .map_err(|_| parse_err("labels.tsv", i + 1, format!("bad label `{s}`")))?,
        );
    }

    let masks: Masks = serde_json::from_str(&read(dir, "masks.json")?)
        .map_err(|e| parse_err("masks.json", e.line(), e.to_string()))?;

    let bundle = GraphBundle {
        meta,
        graph,
        features,
        labels,
        masks,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Writes `bundle` into `dir` (created if needed). Output is deterministic.
pub fn save_bundle(bundle: &GraphBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("meta.json"),
        serde_json::to_string_pretty(&bundle.meta)? + "\n",
    )?;

    let mut edges = String::new();
    for &(u, v) in bundle.graph.edges() {
        writeln!(edges, "{u}\t{v}").expect("string write");
    }
    fs::write(dir.join("edges.tsv"), edges)?;

    let mut feats = String::with_capacity(bundle.features.len() * 24);
    for r in 0..bundle.features.rows() {
        for (j, v) in bundle.features.row(r).iter().enumerate() {
            if j > 0 {
                feats.push('\t');
            }
            write!(feats, "{v:.16e}").expect("string write");
        }
        feats.push('\n');
    }
    fs::write(dir.join("features.tsv"), feats)?;

    let mut labels = String::new();
    for l in &bundle.labels {
        writeln!(labels, "{l}").expect("string write");
    }
    fs::write(dir.join("labels.tsv"), labels)?;
    fs::write(dir.join("masks.json"), serde_json::to_string(&bundle.masks)? + "\n")?;
    Ok(())
}

/// Parameters of the two-block synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_per_class: usize,
    pub num_features: usize,
    /// Edge probability within a class.
    pub p_in: f64,
    /// Edge probability across classes.
    pub p_out: f64,
    /// Standard deviation of the Gaussian feature noise.
    pub noise: f64,
    /// Amplitude of the class-mean feature pattern; 0 gives structure-only data.
    pub signal: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_per_class: 100,
            num_features: 16,
            p_in: 0.1,
            p_out: 0.01,
            noise: 0.3,
            signal: 1.0,
            seed: 7,
        }
    }
}

/// Two-class stochastic block graph with class-dependent features.
///
/// Nodes `0..n` are class 0 and `n..2n` class 1. Class `k` has mean feature
/// `signal` on columns `j ≡ k (mod 2)` and 0 elsewhere, plus `noise·N(0, 1)`.
/// Each class is split 20/20/60 into train/val/test.
pub fn synthetic_two_cluster(spec: &SyntheticSpec) -> Result<GraphBundle> {
    let s = spec;
    if s.n_per_class < 5 {
        return Err(Error::InvalidArgument("n_per_class must be at least 5".into()));
    }
    if s.num_features < 2 {
        return Err(Error::InvalidArgument("need at least 2 features".into()));
    }
    let prob = 0.0..=1.0;
    if !prob.contains(&s.p_in) || !prob.contains(&s.p_out) || s.p_in < s.p_out {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= p_out <= p_in <= 1, got p_in={}, p_out={}",
            s.p_in, s.p_out
        )));
    }
    if !(s.noise >= 0.0 && s.noise.is_finite()) || !s.signal.is_finite() {
        return Err(Error::InvalidArgument("noise must be >= 0 and signal finite".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let n = 2 * s.n_per_class;
    let labels: Vec<usize> = (0..n).map(|i| i / s.n_per_class).collect();

    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { s.p_in } else { s.p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    let mut data = Vec::with_capacity(n * s.num_features);
    for &label in &labels {
        for j in 0..s.num_features {
            let mean = if j % 2 == label { s.signal } else { 0.0 };
            let z: f64 = rng.sample(StandardNormal);
            data.push(mean + s.noise * z);
        }
    }

    let mut masks = Masks::default();
    for class in 0..2 {
        let mut idx: Vec<usize> = (class * s.n_per_class..(class + 1) * s.n_per_class).collect();
        idx.shuffle(&mut rng);
        let n_train = s.n_per_class / 5;
        let n_val = s.n_per_class / 5;
        masks.train.extend(&idx[..n_train]);
        masks.val.extend(&idx[n_train..n_train + n_val]);
        masks.test.extend(&idx[n_train + n_val..]);
    }
    masks.train.sort_unstable();
    masks.val.sort_unstable();
    masks.test.sort_unstable();

    let bundle = GraphBundle {
        meta: BundleMeta {
            name: format!("synthetic-two-cluster-s{}", s.seed),
            num_nodes: n,
            num_features: s.num_features,
            num_classes: 2,
            version: FORMAT_VERSION,
        },
        graph: Graph::new(n, edges)?,
        features: Tensor::from_vec(n, s.num_features, data)?,
        labels,
        masks,
    };
    bundle.validate()?;
    Ok(bundle)
}
