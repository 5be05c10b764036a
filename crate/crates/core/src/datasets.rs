//! Node-classification datasets: plain-text ingestion, binary label
//! reduction, contextual stochastic block model generation and stratified
//! train/test splits.
//!
//! File formats (all 0-indexed, `#` starts a comment):
//!
//! * edges: `u v` per line
//! * features: one comma-separated row per node, in node order
//! * labels: `node label` per line, where `label` is any token
//! * split: `node train` or `node test` per line

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numerics::{frobenius_norm, norm2, Matrix};
use crate::rng;

/// A graph with node features, `+-1` labels and a transductive split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    graph: Graph,
    features: Matrix,
    labels: Vec<f64>,
    train: Vec<usize>,
    test: Vec<usize>,
    y_min: f64,
    y_max: f64,
    c_x: f64,
    row_normalized: bool,
}

impl Dataset {
    /// Validates shapes, label range and split disjointness. Split lists
    /// may be empty; [`split`] fills them.
    pub fn new(graph: Graph, features: Matrix, labels: Vec<f64>, train: Vec<usize>, test: Vec<usize>) -> Result<Self> {
        let n = graph.num_nodes();
        if features.rows() != n {
            return Err(Error::dim(
                "dataset",
                format!("{} feature rows for {n} nodes", features.rows()),
            ));
        }
        if labels.len() != n {
            return Err(Error::dim("dataset", format!("{} labels for {n} nodes", labels.len())));
        }
        if let Some(&y) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
            return Err(Error::LabelOutOfRange {
                label: y,
                y_min: -1.0,
                y_max: 1.0,
            });
        }
        let mut seen = vec![0u8; n];
        for (list, tag) in [(&train, 1u8), (&test, 2u8)] {
            for &i in list.iter() {
                if i >= n {
                    return Err(Error::NodeOutOfRange { node: i, num_nodes: n });
                }
                if seen[i] != 0 {
                    return Err(Error::invalid(
                        "split",
                        format!("node {i} listed twice or in both train and test"),
                    ));
                }
                seen[i] = tag;
            }
        }
        let c_x = frobenius_norm(&features);
        Ok(Dataset {
            graph,
            features,
            labels,
            train,
            test,
            y_min: -1.0,
            y_max: 1.0,
            c_x,
            row_normalized: false,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn test_indices(&self) -> &[usize] {
        &self.test
    }

    /// `(node, label)` for the `i`-th training sample.
    pub fn train_sample(&self, i: usize) -> (usize, f64) {
        let node = self.train[i];
        (node, self.labels[node])
    }

    pub fn train_samples(&self) -> Vec<(usize, f64)> {
        self.train.iter().map(|&v| (v, self.labels[v])).collect()
    }

    pub fn test_samples(&self) -> Vec<(usize, f64)> {
        self.test.iter().map(|&v| (v, self.labels[v])).collect()
    }

    pub fn y_range(&self) -> (f64, f64) {
        (self.y_min, self.y_max)
    }

    /// `||X||_F`
    pub fn c_x(&self) -> f64 {
        self.c_x
    }

    pub fn row_normalized(&self) -> bool {
        self.row_normalized
    }

    /// Scales every non-zero feature row to unit length.
    pub fn with_row_normalization(mut self) -> Self {
        for i in 0..self.features.rows() {
            let r = norm2(self.features.row(i));
            if r > 0.0 {
                self.features.row_mut(i).iter_mut().for_each(|x| *x /= r);
            }
        }
        self.c_x = frobenius_norm(&self.features);
        self.row_normalized = true;
        self
    }

    /// Same data with a new split.
    pub fn with_split(self, train: Vec<usize>, test: Vec<usize>) -> Result<Self> {
        let normalized = self.row_normalized;
        let mut d = Dataset::new(self.graph, self.features, self.labels, train, test)?;
        d.row_normalized = normalized;
        Ok(d)
    }
}

/// How a multi-class label file becomes `+-1` labels.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BinaryReduction {
    /// Largest class against the rest; ties go to the alphabetically first
    /// class name.
    #[default]
    LargestVsRest,
    OneVsRest { positive: String },
    /// Keeps only the two classes and the subgraph they induce.
    Pair { positive: String, negative: String },
}

/// Paths of the four text files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetFiles {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    /// Without a split file every node is unassigned until [`split`].
    #[serde(default)]
    pub split: Option<PathBuf>,
}

impl DatasetFiles {
    /// Every path, in a fixed order, for digesting.
    pub fn paths(&self) -> Vec<&Path> {
        let mut v = vec![self.edges.as_path(), self.features.as_path(), self.labels.as_path()];
        if let Some(s) = &self.split {
            v.push(s);
        }
        v
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_error(source_name: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source_name.to_string(),
        line,
        message: message.into(),
    }
}

/// Comma-separated rows; every row must have the same width.
pub fn parse_features(text: &str, source_name: &str) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, content) in content_lines(text) {
        let row = content
            .split(',')
            .map(|f| {
                let f = f.trim();
                match f.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(parse_error(source_name, line, format!("`{f}` is not a finite number"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_error(
                    source_name,
                    line,
                    format!("{} columns, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_error(source_name, 0, "no feature rows"));
    }
    Matrix::from_rows(&rows)
}

/// `node label` pairs; every node in `0..n` must appear exactly once.
pub fn parse_labels(text: &str, source_name: &str, n: usize) -> Result<Vec<String>> {
    let mut out: Vec<Option<String>> = vec![None; n];
    for (line, content) in content_lines(text) {
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(parse_error(source_name, line, "expected `node label`"));
        }
        let node: usize = fields[0]
            .parse()
            .map_err(|_| parse_error(source_name, line, format!("`{}` is not a node index", fields[0])))?;
        if node >= n {
            return Err(parse_error(source_name, line, format!("node {node} out of range for {n} nodes")));
        }
        if out[node].is_some() {
            return Err(parse_error(source_name, line, format!("node {node} labeled twice")));
        }
        out[node] = Some(fields[1].to_string());
    }
    out.into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| parse_error(source_name, 0, format!("node {i} has no label"))))
        .collect()
}

/// `node train|test` pairs.
pub fn parse_split(text: &str, source_name: &str, n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (line, content) in content_lines(text) {
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(parse_error(source_name, line, "expected `node train|test`"));
        }
        let node: usize = fields[0]
            .parse()
            .map_err(|_| parse_error(source_name, line, format!("`{}` is not a node index", fields[0])))?;
        if node >= n {
            return Err(parse_error(source_name, line, format!("node {node} out of range for {n} nodes")));
        }
        match fields[1] {
            "train" => train.push(node),
            "test" => test.push(node),
            other => return Err(parse_error(source_name, line, format!("unknown split `{other}`"))),
        }
    }
    Ok((train, test))
}

/// Maps class names to `+-1` and returns the nodes that survive the
/// reduction.
fn reduce_labels(names: &[String], reduction: &BinaryReduction) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for n in names {
        *counts.entry(n.as_str()).or_default() += 1;
    }
    let known = |c: &str| -> Result<()> {
        if counts.contains_key(c) {
            Ok(())
        } else {
            Err(Error::invalid("label class", format!("`{c}` does not occur in the label file")))
        }
    };
    match reduction {
        BinaryReduction::LargestVsRest => {
            // BTreeMap order makes the alphabetically first class win ties.
            let (best, _) = counts
                .iter()
                .fold(("", 0usize), |acc, (&k, &v)| if v > acc.1 { (k, v) } else { acc });
            let keep = (0..names.len()).collect();
            let labels = names.iter().map(|n| if n == best { 1.0 } else { -1.0 }).collect();
            Ok((keep, labels))
        }
        BinaryReduction::OneVsRest { positive } => {
            known(positive)?;
            let keep = (0..names.len()).collect();
            let labels = names.iter().map(|n| if n == positive { 1.0 } else { -1.0 }).collect();
            Ok((keep, labels))
        }
        BinaryReduction::Pair { positive, negative } => {
            known(positive)?;
            known(negative)?;
            if positive == negative {
                return Err(Error::invalid("label pair", "the two classes must differ"));
            }
            let keep: Vec<usize> = (0..names.len())
                .filter(|&i| names[i] == *positive || names[i] == *negative)
                .collect();
            let labels = keep.iter().map(|&i| if names[i] == *positive { 1.0 } else { -1.0 }).collect();
            Ok((keep, labels))
        }
    }
}

/// Builds a dataset from already-read file contents. `names` label the
/// four sources in error messages.
pub fn dataset_from_text(
    edges: (&str, &str),
    features: (&str, &str),
    labels: (&str, &str),
    split: Option<(&str, &str)>,
    reduction: &BinaryReduction,
) -> Result<Dataset> {
    let x = parse_features(features.0, features.1)?;
    let n = x.rows();
    let graph = Graph::parse_edge_list(edges.0, edges.1, Some(n))?;
    let names = parse_labels(labels.0, labels.1, n)?;
    let (train, test) = match split {
        Some((text, name)) => parse_split(text, name, n)?,
        None => (Vec::new(), Vec::new()),
    };
    let (keep, y) = reduce_labels(&names, reduction)?;
    if keep.len() == n {
        return Dataset::new(graph, x, y, train, test);
    }
    let mut new_index = vec![usize::MAX; n];
    for (j, &i) in keep.iter().enumerate() {
        new_index[i] = j;
    }
    let sub = graph.induced(&keep)?;
    let rows: Vec<Vec<f64>> = keep.iter().map(|&i| x.row(i).to_vec()).collect();
    let remap = |v: Vec<usize>| -> Vec<usize> {
        v.into_iter()
            .filter(|&i| new_index[i] != usize::MAX)
            .map(|i| new_index[i])
            .collect()
    };
    Dataset::new(sub, Matrix::from_rows(&rows)?, y, remap(train), remap(test))
}

/// Reads the four files. The edge list may not mention nodes beyond the
/// feature rows.
pub fn load_dataset(files: &DatasetFiles, reduction: &BinaryReduction) -> Result<Dataset> {
    let e = read(&files.edges)?;
    let f = read(&files.features)?;
    let l = read(&files.labels)?;
    let s = files.split.as_deref().map(read).transpose()?;
    let names: Vec<String> = files.paths().iter().map(|p| p.display().to_string()).collect();
    dataset_from_text(
        (&e, &names[0]),
        (&f, &names[1]),
        (&l, &names[2]),
        s.as_deref().map(|t| (t, names[3].as_str())),
        reduction,
    )
}

/// Two-class contextual stochastic block model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsbmParams {
    #[serde(rename = "N")]
    pub n: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub d0: usize,
    pub mu: f64,
    pub sigma_noise: f64,
    pub train_fraction: f64,
}

impl Default for CsbmParams {
    fn default() -> Self {
        CsbmParams {
            n: 300,
            p_in: 0.1,
            p_out: 0.02,
            d0: 16,
            mu: 1.0,
            sigma_noise: 1.0,
            train_fraction: 0.5,
        }
    }
}

/// Regenerations allowed before giving up on the degree condition.
pub const CSBM_RETRY_BUDGET: usize = 100;

impl CsbmParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::invalid("N", format!("{} nodes; need at least 4", self.n)));
        }
        if self.d0 == 0 {
            return Err(Error::invalid("d0", "feature dimension must be positive"));
        }
        if !(0.0..=1.0).contains(&self.p_out) || !(0.0..=1.0).contains(&self.p_in) || self.p_out > self.p_in {
            return Err(Error::invalid(
                "edge probabilities",
                format!("need 0 <= p_out <= p_in <= 1, got p_in {} p_out {}", self.p_in, self.p_out),
            ));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid("mu", format!("{} must be finite and non-negative", self.mu)));
        }
        if !(self.sigma_noise >= 0.0 && self.sigma_noise.is_finite()) {
            return Err(Error::invalid(
                "sigma_noise",
                format!("{} must be finite and non-negative", self.sigma_noise),
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid(
                "train_fraction",
                format!("{} not in (0, 1)", self.train_fraction),
            ));
        }
        Ok(())
    }
}

/// Node `i` belongs to class `i % 2`; class 0 is labeled `+1`.
pub fn gen_csbm(params: &CsbmParams, seed: u64) -> Result<Dataset> {
    params.validate()?;
    let n = params.n;
    let class = |i: usize| i % 2;

    let mut dir_rng = rng::stream(seed, "csbm.direction");
    let mut u: Vec<f64> = (0..params.d0).map(|_| StandardNormal.sample(&mut dir_rng)).collect();
    let nu = norm2(&u);
    u.iter_mut().for_each(|x| *x /= nu);

    let mut feat_rng = rng::stream(seed, "csbm.features");
    let mut data = Vec::with_capacity(n * params.d0);
    for i in 0..n {
        let sign = if class(i) == 0 { 1.0 } else { -1.0 };
        for &uj in &u {
            let z: f64 = StandardNormal.sample(&mut feat_rng);
            data.push(sign * params.mu * uj + params.sigma_noise * z);
        }
    }
    let features = Matrix::new(n, params.d0, data)?;
    let labels: Vec<f64> = (0..n).map(|i| if class(i) == 0 { 1.0 } else { -1.0 }).collect();

    for attempt in 0..CSBM_RETRY_BUDGET {
        let mut edge_rng = rng::indexed_stream(seed, "csbm.edges", attempt as u64);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let p = if class(i) == class(j) { params.p_in } else { params.p_out };
                if edge_rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        let graph = Graph::new(n, edges)?;
        if graph.degrees().iter().all(|&d| d >= 1) {
            let d = Dataset::new(graph, features, labels, Vec::new(), Vec::new())?;
            return split(d, params.train_fraction, seed);
        }
    }
    Err(Error::Generation(format!(
        "no sample with minimum degree >= 1 after {CSBM_RETRY_BUDGET} attempts; increase p_out or p_in"
    )))
}

/// Class-stratified seeded split over every node. Each class contributes
/// its largest-remainder share of `round(fraction * N)` training nodes,
/// with at least one node on each side.
pub fn split(dataset: Dataset, train_fraction: f64, seed: u64) -> Result<Dataset> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid("train_fraction", format!("{train_fraction} not in (0, 1)")));
    }
    let mut by_class: BTreeMap<i8, Vec<usize>> = BTreeMap::new();
    for (i, &y) in dataset.labels().iter().enumerate() {
        by_class.entry(if y > 0.0 { 1 } else { -1 }).or_default().push(i);
    }
    if let Some((c, nodes)) = by_class.iter().find(|(_, v)| v.len() < 2) {
        return Err(Error::invalid(
            "split",
            format!("class {c:+} has {} node(s); need at least 2", nodes.len()),
        ));
    }
    let n = dataset.num_nodes();
    let total = ((train_fraction * n as f64).round() as usize).clamp(by_class.len(), n - by_class.len());
    let quotas: Vec<f64> = by_class.values().map(|v| train_fraction * v.len() as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())));
    let mut assigned: usize = counts.iter().sum();
    for &c in order.iter().cycle().take(quotas.len() * 2) {
        if assigned >= total {
            break;
        }
        counts[c] += 1;
        assigned += 1;
    }
    let mut rng = rng::stream(seed, "split");
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for ((_, nodes), &count) in by_class.iter().zip(&counts) {
        let count = count.clamp(1, nodes.len() - 1);
        let mut shuffled = nodes.clone();
        shuffled.shuffle(&mut rng);
        train.extend_from_slice(&shuffled[..count]);
        test.extend_from_slice(&shuffled[count..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    dataset.with_split(train, test)
}
