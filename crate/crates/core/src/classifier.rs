//! Random forest device classifier.
//!
//! Bagged CART trees with Gini impurity and a random feature subset per
//! split. Each tree draws from its own RNG seeded by `(seed, tree index)`,
//! so the model does not depend on how many threads built it.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRow {
    pub features: Vec<f64>,
    pub label: u32,
    pub snr_db: f64,
    pub speed_kmh: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledDataset {
    pub rows: Vec<LabeledRow>,
}

impl LabeledDataset {
    pub fn new(rows: Vec<LabeledRow>) -> Self {
        LabeledDataset { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.features.len())
    }

    /// Sorted distinct labels.
    pub fn labels(&self) -> Vec<u32> {
        let mut l: Vec<u32> = self.rows.iter().map(|r| r.label).collect();
        l.sort_unstable();
        l.dedup();
        l
    }

    pub fn check_dims(&self) -> Result<()> {
        let d = self.dim();
        if let Some(r) = self.rows.iter().find(|r| r.features.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: r.features.len(),
            });
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header = vec![
            "label".to_string(),
            "snr_db".into(),
            "speed_kmh".into(),
            "seed".into(),
        ];
        header.extend((0..self.dim()).map(|i| format!("f{i}")));
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for r in &self.rows {
            let mut rec = vec![
                r.label.to_string(),
                r.snr_db.to_string(),
                r.speed_kmh.to_string(),
                r.seed.to_string(),
            ];
            rec.extend(r.features.iter().map(|f| format!("{f:e}")));
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let bad = |detail: String| Error::Format {
            what: "feature CSV",
            detail,
        };
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            if rec.len() < 4 {
                return Err(bad(format!("row {line}: too few columns")));
            }
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| bad(format!("row {line} col {i}: {e}")))
            };
            rows.push(LabeledRow {
                label: rec[0].parse().map_err(|e| bad(format!("row {line}: {e}")))?,
                snr_db: num(1)?,
                speed_kmh: num(2)?,
                seed: rec[3].parse().map_err(|e| bad(format!("row {line}: {e}")))?,
                features: (4..rec.len()).map(num).collect::<Result<_>>()?,
            });
        }
        let ds = LabeledDataset { rows };
        ds.check_dims()?;
        Ok(ds)
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            what: "CSV",
            detail: format!("{}: {other:?}", path.display()),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    /// Candidate features per split; `None` means `floor(sqrt(D))`.
    pub feature_subsample: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            feature_subsample: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    /// Bootstrap-sample count per class index.
    Leaf { counts: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

fn argmax_lowest<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

impl Tree {
    fn leaf(&self, x: &[f64]) -> &[u32] {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { counts } => return counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    fn vote(&self, x: &[f64]) -> usize {
        argmax_lowest(self.leaf(x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    classes: Vec<u32>,
    n_features: usize,
    params: ForestParams,
    seed: u64,
    trees: Vec<Tree>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: u32,
    /// Fraction of trees voting for each class, in [`ForestModel::classes`]
    /// order.
    pub votes: Vec<f64>,
}

struct Builder<'a> {
    data: &'a LabeledDataset,
    class_of: Vec<usize>,
    n_classes: usize,
    mtry: usize,
    max_depth: Option<usize>,
}

struct Candidate {
    impurity: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<u32> {
        let mut c = vec![0u32; self.n_classes];
        for &i in idx {
            c[self.class_of[i]] += 1;
        }
        c
    }

    // sum over children of n * gini, written as n - sum(c^2)/n
    fn weighted_gini(counts: &[u32], n: u32) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let sq: f64 = counts.iter().map(|&c| (c as f64) * (c as f64)).sum();
        n as f64 - sq / n as f64
    }

    fn best_split_on(&self, idx: &[usize], feature: usize, total: &[u32]) -> Option<Candidate> {
        let rows = &self.data.rows;
        let mut order: Vec<(f64, usize)> = idx
            .iter()
            .map(|&i| (rows[i].features[feature], self.class_of[i]))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = order.len() as u32;
        let mut left = vec![0u32; self.n_classes];
        let mut right = total.to_vec();
        let mut best: Option<Candidate> = None;
        for i in 0..order.len() - 1 {
            let (v, c) = order[i];
            left[c] += 1;
            right[c] -= 1;
            let next = order[i + 1].0;
            if !(v < next) {
                continue;
            }
            let nl = i as u32 + 1;
            let imp = Self::weighted_gini(&left, nl) + Self::weighted_gini(&right, n - nl);
            if best.as_ref().is_none_or(|b| imp < b.impurity) {
                let mid = 0.5 * (v + next);
                let threshold = if v <= mid && mid < next { mid } else { v };
                best = Some(Candidate {
                    impurity: imp,
                    feature,
                    threshold,
                });
            }
        }
        best
    }

    fn build(&self, tree_seed: u64) -> Tree {
        let n = self.data.len();
        let d = self.data.dim();
        let mut rng = seed::rng(tree_seed);
        let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();

        let mut nodes: Vec<Node> = vec![Node::Leaf { counts: vec![] }];
        // (node slot, sample indices, depth)
        let mut stack = vec![(0usize, sample, 0usize)];
        while let Some((slot, idx, depth)) = stack.pop() {
            let counts = self.counts(&idx);
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let capped = self.max_depth.is_some_and(|m| depth >= m);
            if pure || capped || idx.len() < 2 {
                nodes[slot] = Node::Leaf { counts };
                continue;
            }
            // random feature order; the first mtry are the candidates, the
            // rest are only tried when every candidate is constant
            let perm = index::sample(&mut rng, d, d).into_vec();
            let mut best: Option<Candidate> = None;
            for (tried, &f) in perm.iter().enumerate() {
                if tried >= self.mtry && best.is_some() {
                    break;
                }
                if let Some(c) = self.best_split_on(&idx, f, &counts) {
                    // equal impurity goes to the lower feature index
                    let better = |b: &Candidate| {
                        c.impurity < b.impurity || (c.impurity == b.impurity && c.feature < b.feature)
                    };
                    if best.as_ref().is_none_or(better) {
                        best = Some(c);
                    }
                }
            }
            let Some(split) = best else {
                nodes[slot] = Node::Leaf { counts };
                continue;
            };
            let (l, r): (Vec<usize>, Vec<usize>) = idx
                .iter()
                .partition(|&&i| self.data.rows[i].features[split.feature] <= split.threshold);
            let left = nodes.len();
            nodes.push(Node::Leaf { counts: vec![] });
            nodes.push(Node::Leaf { counts: vec![] });
            nodes[slot] = Node::Split {
                feature: split.feature as u32,
                threshold: split.threshold,
                left: left as u32,
                right: left as u32 + 1,
            };
            // right first so the left subtree is numbered before it
            stack.push((left + 1, r, depth + 1));
            stack.push((left, l, depth + 1));
        }
        Tree { nodes }
    }
}

/// Grows `params.n_trees` bootstrap trees. Runs on the current rayon pool.
pub fn train(data: &LabeledDataset, params: &ForestParams, seed: u64) -> Result<ForestModel> {
    data.check_dims()?;
    let classes = data.labels();
    if classes.len() < 2 {
        return Err(Error::DegenerateDataset("need at least two classes".into()));
    }
    for &c in &classes {
        if data.rows.iter().filter(|r| r.label == c).count() < 2 {
            return Err(Error::DegenerateDataset(format!("class {c} has fewer than two rows")));
        }
    }
    if params.n_trees == 0 || data.dim() == 0 {
        return Err(Error::DegenerateDataset("no trees or no features".into()));
    }
    let d = data.dim();
    let mtry = params
        .feature_subsample
        .unwrap_or_else(|| (d as f64).sqrt().floor() as usize)
        .clamp(1, d);
    let builder = Builder {
        data,
        class_of: data
            .rows
            .iter()
            .map(|r| classes.binary_search(&r.label).expect("label present"))
            .collect(),
        n_classes: classes.len(),
        mtry,
        max_depth: params.max_depth,
    };
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| builder.build(seed::derive(seed, &[t as u64])))
        .collect();
    Ok(ForestModel {
        classes,
        n_features: d,
        params: *params,
        seed,
        trees,
    })
}

impl ForestModel {
    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    /// Majority vote of the trees' leaf classes; ties go to the lowest label.
    pub fn predict(&self, feature: &[f64]) -> Result<Prediction> {
        if feature.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                actual: feature.len(),
            });
        }
        let mut votes = vec![0u32; self.classes.len()];
        for t in &self.trees {
            votes[t.vote(feature)] += 1;
        }
        let label = self.classes[argmax_lowest(&votes)];
        let total = self.trees.len() as f64;
        Ok(Prediction {
            label,
            votes: votes.iter().map(|&v| v as f64 / total).collect(),
        })
    }

    /// Same model with its trees in reverse order.
    pub fn with_reversed_trees(&self) -> Self {
        let mut m = self.clone();
        m.trees.reverse();
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub classes: Vec<u32>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub per_class_accuracy: Vec<f64>,
    pub overall_accuracy: f64,
    pub snr_db: Option<f64>,
    pub speed_kmh: Option<f64>,
}

fn uniform<T: PartialEq + Copy>(mut it: impl Iterator<Item = T>) -> Option<T> {
    let first = it.next()?;
    it.all(|v| v == first).then_some(first)
}

pub fn evaluate(model: &ForestModel, test: &LabeledDataset) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::DegenerateDataset("empty test set".into()));
    }
    let k = model.classes.len();
    let mut confusion = vec![vec![0u64; k]; k];
    let mut correct = 0u64;
    for row in &test.rows {
        let truth = model.classes.binary_search(&row.label).map_err(|_| {
            Error::DegenerateDataset(format!("test label {} unknown to the model", row.label))
        })?;
        let p = model.predict(&row.features)?;
        let predicted = model.classes.binary_search(&p.label).expect("model class");
        confusion[truth][predicted] += 1;
        if truth == predicted {
            correct += 1;
        }
    }
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let n: u64 = row.iter().sum();
            if n == 0 {
                f64::NAN
            } else {
                row[i] as f64 / n as f64
            }
        })
        .collect();
    Ok(EvalReport {
        classes: model.classes.clone(),
        confusion,
        per_class_accuracy,
        overall_accuracy: correct as f64 / test.len() as f64,
        snr_db: uniform(test.rows.iter().map(|r| r.snr_db)),
        speed_kmh: uniform(test.rows.iter().map(|r| r.speed_kmh)),
    })
}

impl EvalReport {
    /// Square CSV with a header of predicted labels and one row per true
    /// label.
    pub fn write_confusion_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(self.classes.iter().map(|c| c.to_string()));
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for (c, row) in self.classes.iter().zip(&self.confusion) {
            let mut rec = vec![c.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

// Portable model format, all integers and floats little-endian:
//
//   magic    b"RFFM"
//   version  u16 (= 1)
//   n_classes u32, then n_classes x u32 labels
//   n_features u32
//   n_trees u32, max_depth u32 (0 = unlimited), feature_subsample u32
//     (0 = sqrt), seed u64
//   per tree: n_nodes u32, then per node
//     tag u8 = 0 leaf:  n_classes x u32 counts
//     tag u8 = 1 split: feature u32, threshold f64, left u32, right u32
const MAGIC: &[u8; 4] = b"RFFM";
const FORMAT_VERSION: u16 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self.buf.get(self.pos..end).ok_or_else(|| Error::Format {
            what: "model file",
            detail: format!("truncated at byte {}", self.pos),
        })?;
        self.pos = end;
        Ok(bytes.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

impl ForestModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        b.extend_from_slice(&(self.classes.len() as u32).to_le_bytes());
        for c in &self.classes {
            b.extend_from_slice(&c.to_le_bytes());
        }
        b.extend_from_slice(&(self.n_features as u32).to_le_bytes());
        b.extend_from_slice(&(self.params.n_trees as u32).to_le_bytes());
        b.extend_from_slice(&(self.params.max_depth.unwrap_or(0) as u32).to_le_bytes());
        b.extend_from_slice(&(self.params.feature_subsample.unwrap_or(0) as u32).to_le_bytes());
        b.extend_from_slice(&self.seed.to_le_bytes());
        for t in &self.trees {
            b.extend_from_slice(&(t.nodes.len() as u32).to_le_bytes());
            for node in &t.nodes {
                match node {
                    Node::Leaf { counts } => {
                        b.push(0);
                        for c in counts {
                            b.extend_from_slice(&c.to_le_bytes());
                        }
                    }
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        b.push(1);
                        b.extend_from_slice(&feature.to_le_bytes());
                        b.extend_from_slice(&threshold.to_le_bytes());
                        b.extend_from_slice(&left.to_le_bytes());
                        b.extend_from_slice(&right.to_le_bytes());
                    }
                }
            }
        }
        b
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let bad = |detail: String| Error::Format {
            what: "model file",
            detail,
        };
        let mut r = Reader { buf, pos: 0 };
        if &r.take::<4>()? != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let k = r.u32()? as usize;
        let classes = (0..k).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n_features = r.u32()? as usize;
        let n_trees = r.u32()? as usize;
        let depth = r.u32()? as usize;
        let sub = r.u32()? as usize;
        let seed = r.u64()?;
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let n_nodes = r.u32()? as usize;
            let mut nodes = Vec::with_capacity(n_nodes.min(1 << 20));
            for _ in 0..n_nodes {
                let node = match r.u8()? {
                    0 => Node::Leaf {
                        counts: (0..k).map(|_| r.u32()).collect::<Result<_>>()?,
                    },
                    1 => {
                        let feature = r.u32()?;
                        let threshold = r.f64()?;
                        let left = r.u32()?;
                        let right = r.u32()?;
                        if feature as usize >= n_features
                            || left as usize >= n_nodes
                            || right as usize >= n_nodes
                        {
                            return Err(bad("node index out of range".into()));
                        }
                        Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        }
                    }
                    t => return Err(bad(format!("unknown node tag {t}"))),
                };
                nodes.push(node);
            }
            // children always follow their parent
            for (i, node) in nodes.iter().enumerate() {
                if let Node::Split { left, right, .. } = node {
                    if *left as usize <= i || *right as usize <= i {
                        return Err(bad("node references an earlier node".into()));
                    }
                }
            }
            trees.push(Tree { nodes });
        }
        if r.pos != buf.len() {
            return Err(bad("trailing bytes".into()));
        }
        Ok(ForestModel {
            classes,
            n_features,
            params: ForestParams {
                n_trees,
                max_depth: (depth > 0).then_some(depth),
                feature_subsample: (sub > 0).then_some(sub),
            },
            seed,
            trees,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
