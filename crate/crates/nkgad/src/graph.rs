//! Graph data model, normalized Laplacian, filter operators, neighbor
//! statistics, and the spectral / attribute-similarity diagnostics.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::eigh::eigh_symmetric;
use crate::error::{NkError, Result};
use crate::matrix::{cosine_similarity, l2_norm, Matrix};

/// Undirected attributed graph: deduplicated edge set, dense feature matrix,
/// optional binary anomaly labels (1 = anomalous).
#[derive(Clone, Debug)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    features: Matrix,
    labels: Option<Vec<u8>>,
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    /// Build a graph, deduplicating reversed/duplicate edges.
    ///
    /// Self-loops and out-of-range endpoints are rejected.
    pub fn new(
        node_count: usize,
        edges: &[(usize, usize)],
        features: Matrix,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        if features.rows() != node_count {
            return Err(NkError::shape(
                "graph",
                format!("{} feature rows for {node_count} nodes", features.rows()),
            ));
        }
        if let Some(l) = &labels {
            if l.len() != node_count {
                return Err(NkError::shape(
                    "graph",
                    format!("{} labels for {node_count} nodes", l.len()),
                ));
            }
            if l.iter().any(|&x| x > 1) {
                return Err(NkError::contract("labels must be 0 or 1".to_string()));
            }
        }
        let mut set = BTreeSet::new();
        for &(u, v) in edges {
            if u == v {
                return Err(NkError::contract(format!("self-loop at node {u}")));
            }
            if u >= node_count || v >= node_count {
                return Err(NkError::contract(format!(
                    "edge ({u},{v}) references a node id out of range [0,{node_count})"
                )));
            }
            set.insert((u.min(v), u.max(v)));
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); node_count];
        for &(u, v) in &edges {
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Graph {
            node_count,
            edges,
            features,
            labels,
            neighbors,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    /// Dense symmetric 0/1 adjacency with zero diagonal.
    pub fn adjacency(&self) -> Matrix {
        let mut a = Matrix::zeros(self.node_count, self.node_count);
        for &(u, v) in &self.edges {
            a.set(u, v, 1.0);
            a.set(v, u, 1.0);
        }
        a
    }

    /// Copy of this graph with different labels.
    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Graph> {
        Graph::new(self.node_count, &self.edges, self.features.clone(), Some(labels))
    }

    /// Copy of this graph with different features (same shape).
    pub fn with_features(&self, features: Matrix) -> Result<Graph> {
        Graph::new(self.node_count, &self.edges, features, self.labels.clone())
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| NkError::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> NkError {
    NkError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Load a GraphBundle directory: `edges.tsv` + `features.tsv`, with
/// `labels.tsv` optional. Line numbers are 1-based in errors.
pub fn load_graph(dir: &Path) -> Result<Graph> {
    let features_path = dir.join("features.tsv");
    if !features_path.exists() {
        return Err(NkError::io(
            &features_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "missing features.tsv"),
        ));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in read_lines(&features_path)?.iter().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut row = Vec::new();
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| {
                parse_err(&features_path, lineno + 1, format!("non-numeric token '{tok}'"))
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(
                    &features_path,
                    lineno + 1,
                    format!("ragged row: {} values, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(&features_path, 1, "no feature rows"));
    }
    let node_count = rows.len();
    let features = Matrix::from_rows(&rows)?;

    let edges_path = dir.join("edges.tsv");
    if !edges_path.exists() {
        return Err(NkError::io(
            &edges_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "missing edges.tsv"),
        ));
    }
    let mut edges = Vec::new();
    for (lineno, line) in read_lines(&edges_path)?.iter().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(parse_err(
                &edges_path,
                lineno + 1,
                format!("expected 'u<TAB>v', got {} tokens", toks.len()),
            ));
        }
        let parse_id = |tok: &str| -> Result<usize> {
            tok.parse().map_err(|_| {
                parse_err(&edges_path, lineno + 1, format!("non-numeric token '{tok}'"))
            })
        };
        let u = parse_id(toks[0])?;
        let v = parse_id(toks[1])?;
        if u == v {
            return Err(parse_err(&edges_path, lineno + 1, format!("self-loop at node {u}")));
        }
        if u >= node_count || v >= node_count {
            return Err(parse_err(
                &edges_path,
                lineno + 1,
                format!("node id out of range [0,{node_count}) in edge ({u},{v})"),
            ));
        }
        edges.push((u, v));
    }

    let labels_path = dir.join("labels.tsv");
    let labels = if labels_path.exists() {
        let mut labels = Vec::new();
        for (lineno, line) in read_lines(&labels_path)?.iter().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line {
                "0" => labels.push(0u8),
                "1" => labels.push(1u8),
                other => {
                    return Err(parse_err(
                        &labels_path,
                        lineno + 1,
                        format!("label must be 0 or 1, got '{other}'"),
                    ))
                }
            }
        }
        if labels.len() != node_count {
            return Err(parse_err(
                &labels_path,
                labels.len() + 1,
                format!("{} labels for {node_count} nodes", labels.len()),
            ));
        }
        Some(labels)
    } else {
        None
    };

    Graph::new(node_count, &edges, features, labels)
}

/// Write a graph back out in GraphBundle format.
pub fn save_graph(g: &Graph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| NkError::io(dir, e))?;
    let write = |name: &str, content: String| -> Result<PathBuf> {
        let path = dir.join(name);
        fs::write(&path, content).map_err(|e| NkError::io(&path, e))?;
        Ok(path)
    };
    let mut edges = String::new();
    for &(u, v) in g.edges() {
        edges.push_str(&format!("{u}\t{v}\n"));
    }
    write("edges.tsv", edges)?;
    let mut feats = String::new();
    for i in 0..g.node_count() {
        let row: Vec<String> = g.features().row(i).iter().map(|x| format!("{x}")).collect();
        feats.push_str(&row.join("\t"));
        feats.push('\n');
    }
    write("features.tsv", feats)?;
    if let Some(labels) = g.labels() {
        let mut text = String::new();
        for l in labels {
            text.push_str(&format!("{l}\n"));
        }
        write("labels.tsv", text)?;
    }
    Ok(())
}

/// Symmetric normalized Laplacian D^{-1/2}(D - A)D^{-1/2}, taking
/// d^{-1/2} = 0 for degree-0 nodes (their rows and columns are all zero).
pub fn normalized_laplacian(g: &Graph) -> Matrix {
    let n = g.node_count();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d = g.degree(i);
            if d == 0 {
                0.0
            } else {
                1.0 / (d as f64).sqrt()
            }
        })
        .collect();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        if g.degree(i) > 0 {
            l.set(i, i, 1.0);
        }
    }
    for &(u, v) in g.edges() {
        let w = -inv_sqrt[u] * inv_sqrt[v];
        l.set(u, v, w);
        l.set(v, u, w);
    }
    l
}

/// The low- and high-pass filter operators: f_high = L, f_low = 2I - L.
/// Their sum is exactly 2I by construction.
pub fn filter_operators(g: &Graph) -> (Matrix, Matrix) {
    let f_high = normalized_laplacian(g);
    let n = g.node_count();
    let mut f_low = f_high.scale(-1.0);
    for i in 0..n {
        f_low.set(i, i, 2.0 - f_high.get(i, i));
    }
    (f_low, f_high)
}

/// Per-node first and second moments of neighbor features.
///
/// `mean`/`std` are n x d; `cov` holds one d x d matrix per node. The masks
/// flag where the statistics are defined: mean needs degree >= 1, std and
/// covariance need degree >= 2 (the sample denominator is |Z(i)|-1).
/// Undefined entries are zero.
#[derive(Clone, Debug)]
pub struct NeighborStats {
    pub mean: Matrix,
    pub std: Matrix,
    pub cov: Vec<Matrix>,
    pub valid_mean_mask: Vec<bool>,
    pub valid_cov_mask: Vec<bool>,
}

/// Empirical neighbor statistics of `h0` rows over each node's neighborhood.
pub fn neighbor_stats(g: &Graph, h0: &Matrix) -> Result<NeighborStats> {
    let n = g.node_count();
    if h0.rows() != n {
        return Err(NkError::shape(
            "neighbor_stats",
            format!("{} feature rows for {n} nodes", h0.rows()),
        ));
    }
    let d = h0.cols();
    let mut mean = Matrix::zeros(n, d);
    let mut std = Matrix::zeros(n, d);
    let mut cov = Vec::with_capacity(n);
    let mut valid_mean_mask = vec![false; n];
    let mut valid_cov_mask = vec![false; n];

    for i in 0..n {
        let nbrs = g.neighbors(i);
        let k = nbrs.len();
        if k == 0 {
            cov.push(Matrix::zeros(d, d));
            continue;
        }
        valid_mean_mask[i] = true;
        for &j in nbrs {
            for (m, x) in mean.row_mut(i).iter_mut().zip(h0.row(j)) {
                *m += x;
            }
        }
        for m in mean.row_mut(i) {
            *m /= k as f64;
        }
        if k < 2 {
            cov.push(Matrix::zeros(d, d));
            continue;
        }
        valid_cov_mask[i] = true;
        let denom = (k - 1) as f64;
        let mut c = Matrix::zeros(d, d);
        for &j in nbrs {
            let diff: Vec<f64> = h0
                .row(j)
                .iter()
                .zip(mean.row(i))
                .map(|(x, m)| x - m)
                .collect();
            for (a, &da) in diff.iter().enumerate() {
                std.row_mut(i)[a] += da * da;
                for (b, &db) in diff.iter().enumerate() {
                    let cur = c.get(a, b);
                    c.set(a, b, cur + da * db);
                }
            }
        }
        for s in std.row_mut(i) {
            *s = (*s / denom).sqrt();
        }
        cov.push(c.scale(1.0 / denom));
    }
    Ok(NeighborStats {
        mean,
        std,
        cov,
        valid_mean_mask,
        valid_cov_mask,
    })
}

/// Spectral energy of a signal: per-eigenvalue squared projections onto the
/// Laplacian eigenbasis, normalized by the signal energy, plus a binned view.
#[derive(Clone, Debug)]
pub struct SpectralEnergyReport {
    pub eigenvalues: Vec<f64>,
    pub energy: Vec<f64>,
    pub bin_edges: Vec<f64>,
    pub binned_energy: Vec<f64>,
}

/// Default number of energy bins: width 0.25 over the eigenvalue range [0, 2].
pub const DEFAULT_ENERGY_BINS: usize = 8;

/// Laplacian eigenbasis of a graph, reusable across several signals.
#[derive(Clone, Debug)]
pub struct SpectralBasis {
    pub eigenvalues: Vec<f64>,
    vectors: Matrix,
}

impl SpectralBasis {
    pub fn new(g: &Graph) -> Result<Self> {
        let lap = normalized_laplacian(g);
        let (eigenvalues, vectors) = eigh_symmetric(&lap, 1e-9)?;
        Ok(SpectralBasis { eigenvalues, vectors })
    }

    /// Energy distribution of one signal over this basis.
    pub fn energy(&self, signal: &[f64], bins: usize) -> Result<SpectralEnergyReport> {
        let n = self.eigenvalues.len();
        if signal.len() != n {
            return Err(NkError::shape(
                "spectral_energy",
                format!("signal length {} for {n} nodes", signal.len()),
            ));
        }
        if bins == 0 {
            return Err(NkError::contract("bins must be >= 1".to_string()));
        }
        let norm_sq: f64 = signal.iter().map(|x| x * x).sum();
        if norm_sq == 0.0 {
            return Err(NkError::contract("spectral_energy requires a nonzero signal".to_string()));
        }
        let mut energy = Vec::with_capacity(n);
        for k in 0..n {
            let mut dot = 0.0;
            for i in 0..n {
                dot += self.vectors.get(i, k) * signal[i];
            }
            energy.push(dot * dot / norm_sq);
        }
        let (bin_edges, binned_energy) = bin_energy(&self.eigenvalues, &energy, bins);
        Ok(SpectralEnergyReport {
            eigenvalues: self.eigenvalues.clone(),
            energy,
            bin_edges,
            binned_energy,
        })
    }
}

/// Distribution of a graph signal's energy over the Laplacian spectrum:
/// energy_k = (u_k . x)^2 / ||x||^2.
pub fn spectral_energy(g: &Graph, signal: &[f64], bins: usize) -> Result<SpectralEnergyReport> {
    SpectralBasis::new(g)?.energy(signal, bins)
}

/// Bucket per-eigenvalue energies into `bins` equal bins over [0, 2];
/// values at or beyond the ends clamp into the boundary bins.
pub fn bin_energy(eigenvalues: &[f64], energy: &[f64], bins: usize) -> (Vec<f64>, Vec<f64>) {
    let width = 2.0 / bins as f64;
    let bin_edges: Vec<f64> = (0..=bins).map(|b| b as f64 * width).collect();
    let mut binned = vec![0.0; bins];
    for (lambda, e) in eigenvalues.iter().zip(energy) {
        let idx = ((lambda / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
        binned[idx] += e;
    }
    (bin_edges, binned)
}

/// One histogram of per-edge cosine similarities for a group of edges.
#[derive(Clone, Debug)]
pub struct SimilarityHistogram {
    pub group: String,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Cosine similarity histograms over edges, split by endpoint label pair
/// (normal-normal / anomalous-normal / anomalous-anomalous) when labels are
/// present, otherwise a single "all" group. Bins are equal-width over [-1, 1].
pub fn similarity_histogram(g: &Graph, bins: usize) -> Result<Vec<SimilarityHistogram>> {
    if bins == 0 {
        return Err(NkError::contract("bins must be >= 1".to_string()));
    }
    let width = 2.0 / bins as f64;
    let bin_edges: Vec<f64> = (0..=bins).map(|b| -1.0 + b as f64 * width).collect();
    let groups: Vec<&str> = match g.labels() {
        Some(_) => vec!["normal-normal", "anomalous-normal", "anomalous-anomalous"],
        None => vec!["all"],
    };
    let mut histograms: Vec<SimilarityHistogram> = groups
        .iter()
        .map(|name| SimilarityHistogram {
            group: (*name).to_string(),
            bin_edges: bin_edges.clone(),
            counts: vec![0; bins],
        })
        .collect();
    for &(u, v) in g.edges() {
        let sim = cosine_similarity(g.features().row(u), g.features().row(v));
        let idx = (((sim + 1.0) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
        let group = match g.labels() {
            None => 0,
            Some(labels) => match labels[u] + labels[v] {
                0 => 0,
                1 => 1,
                _ => 2,
            },
        };
        histograms[group].counts[idx] += 1;
    }
    Ok(histograms)
}

/// Remove every edge joining a normal node to an anomalous one, keeping
/// same-label edges. Features and labels are untouched.
pub fn drop_anomalous_edges(g: &Graph) -> Result<Graph> {
    let labels = g
        .labels()
        .ok_or_else(|| NkError::contract("drop_anomalous_edges requires labels".to_string()))?;
    let kept: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .copied()
        .filter(|&(u, v)| labels[u] == labels[v])
        .collect();
    Graph::new(
        g.node_count(),
        &kept,
        g.features().clone(),
        Some(labels.to_vec()),
    )
}

/// Row-wise L2 distance helper used by several loss oracles in tests.
pub fn row_l2_distance(a: &Matrix, b: &Matrix, row: usize) -> f64 {
    let diff: Vec<f64> = a.row(row).iter().zip(b.row(row)).map(|(x, y)| x - y).collect();
    l2_norm(&diff)
}
