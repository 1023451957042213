//! Graph datasets: loading, validation, synthetic generation and
//! symmetric normalization of the adjacency.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CgpError, Result};
use crate::tensor::{DenseMatrix, SparseMatrix};

pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const SPLITS_FILE: &str = "splits.json";

/// Node-classification graph stored as a list of directed arcs.
///
/// Undirected graphs keep both directions. Arcs are sorted by `(src, dst)`;
/// self-loops are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    arcs: Vec<(usize, usize)>,
    features: DenseMatrix<f64>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Graph {
    pub fn new(
        n_nodes: usize,
        mut arcs: Vec<(usize, usize)>,
        features: DenseMatrix<f64>,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self> {
        if features.rows() != n_nodes {
            return Err(CgpError::InvalidGraph(format!(
                "{} feature rows for {n_nodes} nodes",
                features.rows()
            )));
        }
        if labels.len() != n_nodes {
            return Err(CgpError::InvalidGraph(format!(
                "{} labels for {n_nodes} nodes",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(CgpError::InvalidGraph(format!(
                "label {bad} outside [0, {n_classes})"
            )));
        }
        if !features.is_finite() {
            return Err(CgpError::InvalidGraph("non-finite feature value".into()));
        }
        arcs.sort_unstable();
        for w in arcs.windows(2) {
            if w[0] == w[1] {
                return Err(CgpError::InvalidGraph(format!(
                    "duplicate arc {} {}",
                    w[0].0, w[0].1
                )));
            }
        }
        for &(s, d) in &arcs {
            if s >= n_nodes || d >= n_nodes {
                return Err(CgpError::InvalidGraph(format!(
                    "arc {s} {d} references a node outside [0, {n_nodes})"
                )));
            }
            if s == d {
                return Err(CgpError::InvalidGraph(format!("self-loop arc {s} {d} rejected")));
            }
        }
        Ok(Self {
            n_nodes,
            arcs,
            features,
            labels,
            n_classes,
        })
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    #[inline]
    pub fn arcs(&self) -> &[(usize, usize)] {
        &self.arcs
    }

    #[inline]
    pub fn n_arcs(&self) -> usize {
        self.arcs.len()
    }

    #[inline]
    pub fn features(&self) -> &DenseMatrix<f64> {
        &self.features
    }

    #[inline]
    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    #[inline]
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    #[inline]
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Copy of the graph restricted to the arcs for which `keep` is true.
    pub fn filter_arcs(&self, keep: impl Fn(usize) -> bool) -> Self {
        Self {
            arcs: (0..self.arcs.len())
                .filter(|&k| keep(k))
                .map(|k| self.arcs[k])
                .collect(),
            ..self.clone()
        }
    }
}

/// Disjoint train/validation/test node index lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSet {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSet {
    pub fn validate(&self, n_nodes: usize) -> Result<()> {
        let mut seen = HashSet::new();
        for (name, idx) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            if idx.is_empty() {
                return Err(CgpError::InvalidGraph(format!("{name} split is empty")));
            }
            for &i in idx.iter() {
                if i >= n_nodes {
                    return Err(CgpError::InvalidGraph(format!(
                        "{name} split index {i} outside [0, {n_nodes})"
                    )));
                }
                if !seen.insert(i) {
                    return Err(CgpError::InvalidGraph(format!(
                        "node {i} appears in more than one split ({name})"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct SplitsFile {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
    #[serde(default = "default_undirected")]
    undirected: bool,
}

fn default_undirected() -> bool {
    true
}

fn read_file(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(CgpError::MissingFile(path));
    }
    fs::read_to_string(&path).map_err(|e| CgpError::io(path, e))
}

fn parse_err(file: &str, line: usize, msg: impl Into<String>) -> CgpError {
    CgpError::Parse {
        file: file.to_string(),
        line,
        msg: msg.into(),
    }
}

/// Non-empty lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Loads a dataset directory (`edges.tsv`, `features.tsv`, `labels.tsv`,
/// `splits.json`). Errors name the offending file and line.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(Graph, SplitSet)> {
    let dir = dir.as_ref();
    let labels_txt = read_file(dir, LABELS_FILE)?;
    let features_txt = read_file(dir, FEATURES_FILE)?;
    let edges_txt = read_file(dir, EDGES_FILE)?;
    let splits_txt = read_file(dir, SPLITS_FILE)?;

    let mut labels = Vec::new();
    for (ln, line) in content_lines(&labels_txt) {
        let l: usize = line
            .parse()
            .map_err(|_| parse_err(LABELS_FILE, ln, format!("invalid class id {line:?}")))?;
        labels.push(l);
    }
    let n = labels.len();
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);

    let mut feat = Vec::new();
    let mut d = None;
    let mut rows = 0;
    for (ln, line) in content_lines(&features_txt) {
        let mut count = 0;
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(FEATURES_FILE, ln, format!("non-numeric feature {tok:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(FEATURES_FILE, ln, format!("non-finite feature {tok:?}")));
            }
            feat.push(v);
            count += 1;
        }
        match d {
            None => d = Some(count),
            Some(d) if d != count => {
                return Err(parse_err(
                    FEATURES_FILE,
                    ln,
                    format!("expected {d} features, found {count}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    if rows != n {
        return Err(parse_err(
            FEATURES_FILE,
            rows,
            format!("{rows} feature rows but {n} labels"),
        ));
    }
    let features = DenseMatrix::from_vec(n, d.unwrap_or(0), feat)?;

    let splits_file: SplitsFile = serde_json::from_str(&splits_txt)
        .map_err(|e| parse_err(SPLITS_FILE, e.line(), e.to_string()))?;

    let mut arcs = Vec::new();
    let mut seen = HashSet::new();
    for (ln, line) in content_lines(&edges_txt) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(parse_err(EDGES_FILE, ln, "expected two node indices"));
        }
        let mut ends = [0usize; 2];
        for (slot, tok) in ends.iter_mut().zip(&toks) {
            *slot = tok
                .parse()
                .map_err(|_| parse_err(EDGES_FILE, ln, format!("invalid node index {tok:?}")))?;
            if *slot >= n {
                return Err(parse_err(
                    EDGES_FILE,
                    ln,
                    format!("node index {slot} out of range [0, {n})"),
                ));
            }
        }
        let [s, t] = ends;
        if s == t {
            return Err(parse_err(EDGES_FILE, ln, format!("self-loop arc {s} {t} rejected")));
        }
        if !seen.insert((s, t)) {
            return Err(parse_err(EDGES_FILE, ln, format!("duplicate arc {s} {t}")));
        }
        arcs.push((s, t));
    }
    if splits_file.undirected {
        let reverse: Vec<_> = arcs
            .iter()
            .map(|&(s, t)| (t, s))
            .filter(|a| !seen.contains(a))
            .collect();
        arcs.extend(reverse);
    }

    let graph = Graph::new(n, arcs, features, labels, n_classes)?;
    let splits = SplitSet {
        train: splits_file.train,
        val: splits_file.val,
        test: splits_file.test,
    };
    splits
        .validate(n)
        .map_err(|e| parse_err(SPLITS_FILE, 1, e.to_string()))?;
    Ok((graph, splits))
}

/// Writes a dataset directory readable by [`load_dataset`]. Every stored arc
/// is written, so an undirected graph lists both directions.
pub fn write_dataset(graph: &Graph, splits: &SplitSet, dir: impl AsRef<Path>) -> Result<()> {
    use std::fmt::Write as _;

    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| CgpError::io(dir, e))?;
    let write = |name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| CgpError::io(path, e))
    };

    let mut edges = String::new();
    for &(s, t) in graph.arcs() {
        writeln!(edges, "{s}\t{t}").unwrap();
    }
    let mut feats = String::new();
    for r in 0..graph.n_nodes() {
        let row: Vec<String> = graph.features().row(r).iter().map(|v| format!("{v:?}")).collect();
        writeln!(feats, "{}", row.join("\t")).unwrap();
    }
    let mut labels = String::new();
    for l in graph.labels() {
        writeln!(labels, "{l}").unwrap();
    }
    let undirected = is_symmetric(graph);
    let splits_json = serde_json::to_string_pretty(&SplitsFile {
        train: splits.train.clone(),
        val: splits.val.clone(),
        test: splits.test.clone(),
        undirected,
    })?;

    write(EDGES_FILE, edges)?;
    write(FEATURES_FILE, feats)?;
    write(LABELS_FILE, labels)?;
    write(SPLITS_FILE, splits_json + "\n")
}

fn is_symmetric(graph: &Graph) -> bool {
    let set: HashSet<_> = graph.arcs().iter().copied().collect();
    graph.arcs().iter().all(|&(s, t)| set.contains(&(t, s)))
}

/// Normalized adjacency `D̂^{-1/2}(A + I)D̂^{-1/2}` in CSR form, with the
/// bookkeeping needed to apply a per-arc mask.
#[derive(Debug, Clone, PartialEq)]
pub struct NormAdj {
    csr: SparseMatrix<f64>,
    entry_arc: Vec<Option<usize>>,
    arc_entry: Vec<usize>,
    self_loop_positions: Vec<usize>,
}

impl NormAdj {
    #[inline]
    pub fn csr(&self) -> &SparseMatrix<f64> {
        &self.csr
    }

    /// Source arc of each CSR entry; `None` for self-loops.
    #[inline]
    pub fn entry_arc(&self) -> &[Option<usize>] {
        &self.entry_arc
    }

    /// CSR position of each arc.
    #[inline]
    pub fn arc_entry(&self) -> &[usize] {
        &self.arc_entry
    }

    #[inline]
    pub fn self_loop_positions(&self) -> &[usize] {
        &self.self_loop_positions
    }

    #[inline]
    pub fn n_arcs(&self) -> usize {
        self.arc_entry.len()
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.csr.rows()
    }
}

/// Degrees count `A + I` row sums and are fixed at construction; masking
/// later scales these values without renormalizing.
pub fn normalize_adjacency(g: &Graph) -> NormAdj {
    let n = g.n_nodes();
    let mut neighbors: Vec<Vec<(usize, Option<usize>)>> = vec![Vec::new(); n];
    for (k, &(s, t)) in g.arcs().iter().enumerate() {
        neighbors[s].push((t, Some(k)));
    }
    let deg: Vec<f64> = neighbors.iter().map(|nb| (nb.len() + 1) as f64).collect();

    let nnz = g.n_arcs() + n;
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(nnz);
    let mut values = Vec::with_capacity(nnz);
    let mut entry_arc = Vec::with_capacity(nnz);
    let mut arc_entry = vec![0; g.n_arcs()];
    let mut self_loop_positions = Vec::with_capacity(n);
    row_ptr.push(0);
    for (i, mut row) in neighbors.into_iter().enumerate() {
        row.push((i, None));
        row.sort_unstable_by_key(|&(c, _)| c);
        for (j, arc) in row {
            let pos = col_idx.len();
            col_idx.push(j);
            values.push(1.0 / (deg[i] * deg[j]).sqrt());
            entry_arc.push(arc);
            match arc {
                Some(k) => arc_entry[k] = pos,
                None => self_loop_positions.push(pos),
            }
        }
        row_ptr.push(col_idx.len());
    }
    let csr = SparseMatrix::new(n, n, row_ptr, col_idx, values)
        .expect("normalized adjacency is well-formed CSR");
    NormAdj {
        csr,
        entry_arc,
        arc_entry,
        self_loop_positions,
    }
}

/// Stochastic block model configuration for synthetic node classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmConfig {
    pub n_nodes: usize,
    pub n_classes: usize,
    pub d: usize,
    pub intra_p: f64,
    pub inter_p: f64,
    pub feature_noise: f64,
    pub seed: u64,
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("intra_p", self.intra_p), ("inter_p", self.inter_p)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CgpError::Config(format!(
                    "{name}={p}: probability out of range"
                )));
            }
        }
        if self.n_classes < 2 || self.n_nodes < self.n_classes {
            return Err(CgpError::Config(format!(
                "need n_nodes >= n_classes >= 2 (got {} nodes, {} classes)",
                self.n_nodes, self.n_classes
            )));
        }
        if self.n_nodes < 3 {
            return Err(CgpError::Config("need at least 3 nodes for three splits".into()));
        }
        if self.d == 0 {
            return Err(CgpError::Config("feature dimension must be positive".into()));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(CgpError::Config("feature_noise must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Samples a graph from the block model. Node `i` belongs to class
/// `i % n_classes`; each unordered pair is an edge independently, stored as
/// two arcs. Splits are 60/20/20, stratified by class.
pub fn generate_sbm(cfg: &SbmConfig) -> Result<(Graph, SplitSet)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_nodes;
    let c = cfg.n_classes;
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();

    let mut arcs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] {
                cfg.intra_p
            } else {
                cfg.inter_p
            };
            if rng.random::<f64>() < p {
                arcs.push((i, j));
                arcs.push((j, i));
            }
        }
    }

    let noise = Normal::new(0.0, cfg.feature_noise)
        .map_err(|e| CgpError::Config(format!("feature_noise: {e}")))?;
    let mut features = DenseMatrix::zeros(n, cfg.d);
    for i in 0..n {
        for j in 0..cfg.d {
            let centroid = if j % c == labels[i] { 1.0 } else { 0.0 };
            features.set(i, j, centroid + noise.sample(&mut rng));
        }
    }

    let mut splits = SplitSet {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for class in 0..c {
        let mut members: Vec<usize> = (class..n).step_by(c).collect();
        members.shuffle(&mut rng);
        let m = members.len();
        let n_train = (0.6 * m as f64).round() as usize;
        let n_val = ((0.2 * m as f64).round() as usize).min(m - n_train);
        splits.train.extend_from_slice(&members[..n_train]);
        splits.val.extend_from_slice(&members[n_train..n_train + n_val]);
        splits.test.extend_from_slice(&members[n_train + n_val..]);
    }
    rebalance_empty_splits(&mut splits);
    for idx in [&mut splits.train, &mut splits.val, &mut splits.test] {
        idx.sort_unstable();
    }

    let graph = Graph::new(n, arcs, features, labels, c)?;
    Ok((graph, splits))
}

/// Tiny graphs can round a split down to nothing; borrow a node from the
/// largest split.
fn rebalance_empty_splits(s: &mut SplitSet) {
    loop {
        let lens = [s.train.len(), s.val.len(), s.test.len()];
        let Some(empty) = lens.iter().position(|&l| l == 0) else {
            return;
        };
        let donor = (0..3).max_by_key(|&i| (lens[i], std::cmp::Reverse(i))).unwrap();
        if lens[donor] < 2 {
            return;
        }
        let node = [&mut s.train, &mut s.val, &mut s.test][donor].pop().unwrap();
        [&mut s.train, &mut s.val, &mut s.test][empty].push(node);
    }
}

/// Fraction of arcs whose endpoints share a label.
pub fn edge_homophily(g: &Graph) -> Result<f64> {
    if g.n_arcs() == 0 {
        return Err(CgpError::InvalidArgument(
            "edge homophily is undefined on empty edge set".into(),
        ));
    }
    let same = g
        .arcs()
        .iter()
        .filter(|&&(s, t)| g.labels()[s] == g.labels()[t])
        .count();
    Ok(same as f64 / g.n_arcs() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, arcs: Vec<(usize, usize)>, labels: Vec<usize>) -> Graph {
        let c = labels.iter().max().unwrap() + 1;
        Graph::new(n, arcs, DenseMatrix::zeros(n, 1), labels, c).unwrap()
    }

    fn value(na: &NormAdj, i: usize, j: usize) -> f64 {
        let csr = na.csr();
        (csr.row_ptr()[i]..csr.row_ptr()[i + 1])
            .find(|&k| csr.col_idx()[k] == j)
            .map(|k| csr.values()[k])
            .unwrap()
    }

    #[test]
    fn two_node_normalization() {
        let g = toy(2, vec![(0, 1), (1, 0)], vec![0, 1]);
        let na = normalize_adjacency(&g);
        assert_eq!(na.csr().values(), &[0.5; 4]);
    }

    #[test]
    fn path_normalization() {
        let g = toy(3, vec![(0, 1), (1, 0), (1, 2), (2, 1)], vec![0, 1, 0]);
        let na = normalize_adjacency(&g);
        assert!((value(&na, 0, 1) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!((value(&na, 0, 1) - 0.40825).abs() < 1e-5);
        assert!((value(&na, 1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((value(&na, 0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn isolated_node_normalization() {
        let g = toy(1, vec![], vec![0]);
        let na = normalize_adjacency(&g);
        assert_eq!(na.csr().values(), &[1.0]);
        assert_eq!(na.self_loop_positions(), &[0]);
    }

    #[test]
    fn arc_map_is_bijective() {
        let g = toy(4, vec![(0, 1), (1, 0), (2, 3), (3, 2), (0, 3), (3, 0)], vec![0, 0, 1, 1]);
        let na = normalize_adjacency(&g);
        for (k, &pos) in na.arc_entry().iter().enumerate() {
            assert_eq!(na.entry_arc()[pos], Some(k));
            let (s, t) = g.arcs()[k];
            assert_eq!(na.csr().col_idx()[pos], t);
            assert!(na.csr().row_ptr()[s] <= pos && pos < na.csr().row_ptr()[s + 1]);
        }
        assert_eq!(na.entry_arc().iter().filter(|a| a.is_none()).count(), 4);
    }

    #[test]
    fn graph_rejects_invalid_arcs() {
        let f = DenseMatrix::zeros(2, 1);
        assert!(Graph::new(2, vec![(0, 0)], f.clone(), vec![0, 0], 1).is_err());
        assert!(Graph::new(2, vec![(0, 2)], f.clone(), vec![0, 0], 1).is_err());
        assert!(Graph::new(2, vec![(0, 1), (0, 1)], f.clone(), vec![0, 0], 1).is_err());
        assert!(Graph::new(2, vec![], f, vec![0, 3], 2).is_err());
    }

    #[test]
    fn splits_must_be_disjoint_and_nonempty() {
        let ok = SplitSet { train: vec![0], val: vec![1], test: vec![2] };
        assert!(ok.validate(3).is_ok());
        let overlap = SplitSet { train: vec![0], val: vec![0], test: vec![2] };
        assert!(overlap.validate(3).is_err());
        let empty = SplitSet { train: vec![0], val: vec![], test: vec![2] };
        assert!(empty.validate(3).is_err());
        assert!(ok.validate(2).is_err());
    }

    #[test]
    fn sbm_degenerate_probabilities_give_cliques() {
        let cfg = SbmConfig {
            n_nodes: 4,
            n_classes: 2,
            d: 2,
            intra_p: 1.0,
            inter_p: 0.0,
            feature_noise: 0.0,
            seed: 0,
        };
        let (g, s) = generate_sbm(&cfg).unwrap();
        assert_eq!(g.arcs(), &[(0, 2), (1, 3), (2, 0), (3, 1)]);
        assert_eq!(edge_homophily(&g).unwrap(), 1.0);
        s.validate(4).unwrap();
    }

    #[test]
    fn sbm_is_deterministic_and_homophilous() {
        let cfg = SbmConfig {
            n_nodes: 400,
            n_classes: 4,
            d: 8,
            intra_p: 0.5,
            inter_p: 0.05,
            feature_noise: 0.1,
            seed: 42,
        };
        let (a, sa) = generate_sbm(&cfg).unwrap();
        let (b, sb) = generate_sbm(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        // Expected 0.5 / (0.5 + 3 * 0.05) ≈ 0.77 by counting pair types.
        let h = edge_homophily(&a).unwrap();
        assert!(h > 0.6, "homophily {h}");
        assert_eq!(sa.train.len() + sa.val.len() + sa.test.len(), 400);
        assert_eq!(sa.train.len(), 240);
    }

    #[test]
    fn sbm_rejects_bad_probability() {
        let cfg = SbmConfig {
            n_nodes: 10,
            n_classes: 2,
            d: 2,
            intra_p: 1.1,
            inter_p: 0.0,
            feature_noise: 0.0,
            seed: 0,
        };
        let err = generate_sbm(&cfg).unwrap_err().to_string();
        assert!(err.contains("probability out of range"), "{err}");
    }

    #[test]
    fn homophily_edge_cases() {
        let bip = toy(4, vec![(0, 2), (2, 0), (0, 3), (3, 0), (1, 2), (2, 1), (1, 3), (3, 1)], vec![0, 0, 1, 1]);
        assert_eq!(edge_homophily(&bip).unwrap(), 0.0);
        let empty = toy(2, vec![], vec![0, 1]);
        assert!(edge_homophily(&empty).unwrap_err().to_string().contains("empty edge set"));
    }
}
