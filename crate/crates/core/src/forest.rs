//! Random forest of CART trees with Gini impurity over pair features.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::DocumentEmbedding;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// `[u, v]`, resume first.
    #[default]
    Concat,
    /// `[u, v, |u - v|, u * v]`.
    Rich,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairFeatures {
    pub vector: Vec<f64>,
}

pub fn build_features(resume: &DocumentEmbedding, vacancy: &DocumentEmbedding) -> Result<PairFeatures> {
    if resume.producer != vacancy.producer {
        return Err(Error::Shape(format!(
            "embeddings from different producers: {:?} and {:?}",
            resume.producer, vacancy.producer
        )));
    }
    build_features_with(&resume.vector, &vacancy.vector, FeatureMode::Concat)
}

pub fn build_features_with(resume: &[f64], vacancy: &[f64], mode: FeatureMode) -> Result<PairFeatures> {
    if resume.len() != vacancy.len() {
        return Err(Error::Shape(format!(
            "embedding dimensions {} and {}",
            resume.len(),
            vacancy.len()
        )));
    }
    let mut vector = Vec::with_capacity(4 * resume.len());
    vector.extend_from_slice(resume);
    vector.extend_from_slice(vacancy);
    if mode == FeatureMode::Rich {
        vector.extend(resume.iter().zip(vacancy).map(|(a, b)| (a - b).abs()));
        vector.extend(resume.iter().zip(vacancy).map(|(a, b)| a * b));
    }
    Ok(PairFeatures { vector })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    #[serde(default)]
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Features tried per split; `None` means floor(sqrt(d)), at least 1.
    #[serde(default)]
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl ForestConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            features_per_split: None,
            bootstrap: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be at least 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::Config("min_samples_split must be at least 2".into()));
        }
        if self.features_per_split == Some(0) {
            return Err(Error::Config("features_per_split must be at least 1".into()));
        }
        Ok(())
    }

    fn mtry(&self, d: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (d as f64).sqrt().floor() as usize)
            .clamp(1, d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    /// Training samples reaching the leaf, by class.
    Leaf { counts: [usize; 2] },
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_counts(&self, x: &[f64]) -> [usize; 2] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { counts } => return *counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let [n0, n1] = self.leaf_counts(x);
        n1 as f64 / (n0 + n1) as f64
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub n_features: usize,
    pub classes: [u8; 2],
    pub trees: Vec<Tree>,
}

fn gini(n0: usize, n1: usize) -> f64 {
    let n = (n0 + n1) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (p0, p1) = (n0 as f64 / n, n1 as f64 / n);
    1.0 - p0 * p0 - p1 * p1
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [u8],
    config: &'a ForestConfig,
    mtry: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    scratch: Vec<(f64, u8)>,
    features: Vec<usize>,
}

struct BestSplit {
    impurity: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> [usize; 2] {
        let n1 = idx.iter().filter(|&&i| self.y[i] == 1).count();
        [idx.len() - n1, n1]
    }

    /// Best threshold on one feature, or `None` when it is constant here.
    /// Equal impurities keep the lower threshold.
    fn best_on_feature(&mut self, idx: &[usize], f: usize, total: [usize; 2]) -> Option<(f64, f64)> {
        self.scratch.clear();
        self.scratch.extend(idx.iter().map(|&i| (self.x[i][f], self.y[i])));
        self.scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        if self.scratch[0].0 == self.scratch[self.scratch.len() - 1].0 {
            return None;
        }
        let n = idx.len() as f64;
        let mut left = [0usize; 2];
        let mut best: Option<(f64, f64)> = None;
        for k in 0..self.scratch.len() - 1 {
            left[self.scratch[k].1 as usize] += 1;
            let (a, b) = (self.scratch[k].0, self.scratch[k + 1].0);
            if a == b {
                continue;
            }
            let right = [total[0] - left[0], total[1] - left[1]];
            let nl = (left[0] + left[1]) as f64;
            let imp = (nl * gini(left[0], left[1]) + (n - nl) * gini(right[0], right[1])) / n;
            if best.is_none_or(|(bi, _)| imp < bi) {
                let mut t = a + (b - a) / 2.0;
                if !(t >= a && t < b) {
                    t = a;
                }
                best = Some((imp, t));
            }
        }
        best
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let counts = self.counts(idx);
        let at_limit = self.config.max_depth.is_some_and(|m| depth >= m);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { counts });
        if counts[0] == 0 || counts[1] == 0 || at_limit || idx.len() < self.config.min_samples_split {
            return id;
        }

        // Features are visited in random order until `mtry` non-constant ones
        // have been evaluated.
        let d = self.x[0].len();
        let mut features = std::mem::take(&mut self.features);
        features.clear();
        features.extend(0..d);
        features.shuffle(&mut self.rng);
        let mut best: Option<BestSplit> = None;
        let mut tried = 0;
        for &f in &features {
            if tried == self.mtry {
                break;
            }
            if let Some((imp, t)) = self.best_on_feature(idx, f, counts) {
                tried += 1;
                if best.as_ref().is_none_or(|b| imp < b.impurity) {
                    best = Some(BestSplit {
                        impurity: imp,
                        feature: f,
                        threshold: t,
                    });
                }
            }
        }
        self.features = features;
        let Some(best) = best else {
            return id;
        };

        let mut split = 0;
        for k in 0..idx.len() {
            if self.x[idx[k]][best.feature] <= best.threshold {
                idx.swap(split, k);
                split += 1;
            }
        }
        let (l, r) = idx.split_at_mut(split);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }
}

fn fit_tree(x: &[Vec<f64>], y: &[u8], config: &ForestConfig, seed: u64) -> Tree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.len();
    let mut idx: Vec<usize> = if config.bootstrap {
        (0..n).map(|_| rng.gen_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut b = Builder {
        x,
        y,
        config,
        mtry: config.mtry(x[0].len()),
        rng,
        nodes: Vec::new(),
        scratch: Vec::with_capacity(n),
        features: Vec::new(),
    };
    b.grow(&mut idx, 0);
    Tree { nodes: b.nodes }
}

/// Tree `t` is grown from seed `config.seed + t`, so trees are independent of
/// fitting order.
pub fn fit_forest(features: &[PairFeatures], labels: &[u8], config: &ForestConfig) -> Result<ForestModel> {
    config.validate()?;
    if features.is_empty() {
        return Err(Error::Fit("no training samples".into()));
    }
    if features.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature vectors but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let d = features[0].vector.len();
    if d == 0 {
        return Err(Error::Fit("zero-dimensional features".into()));
    }
    if let Some(bad) = features.iter().find(|f| f.vector.len() != d) {
        return Err(Error::Shape(format!("feature of length {} among length {d}", bad.vector.len())));
    }
    if features.iter().any(|f| f.vector.iter().any(|x| !x.is_finite())) {
        return Err(Error::Fit("non-finite feature value".into()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Fit(format!("label {l} is not binary")));
    }
    let x: Vec<Vec<f64>> = features.iter().map(|f| f.vector.clone()).collect();
    let trees = (0..config.n_trees)
        .map(|t| fit_tree(&x, labels, config, config.seed.wrapping_add(t as u64)))
        .collect();
    Ok(ForestModel {
        n_features: d,
        classes: [0, 1],
        trees,
    })
}

impl ForestModel {
    /// Mean over trees of the class-1 fraction in the reached leaf.
    pub fn predict_proba(&self, features: &PairFeatures) -> Result<f64> {
        if features.vector.len() != self.n_features {
            return Err(Error::Shape(format!(
                "forest expects {} features, got {}",
                self.n_features,
                features.vector.len()
            )));
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict_proba(&features.vector)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }
}

pub fn predict_proba(model: &ForestModel, features: &PairFeatures) -> Result<f64> {
    model.predict_proba(features)
}
