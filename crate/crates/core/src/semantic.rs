//! Semantic ratio and minimum-spanning-tree edge statistics over review
//! embeddings under cosine distance.
//!
//! Small corpora use an exact O(N²) Prim. Large ones build a symmetric k-NN
//! graph by blocked brute force and take its minimum spanning forest
//! (Kruskal), which may have several components.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::embedding::Vector;
use crate::error::{Error, Result};
use crate::vecmath;

pub const DEFAULT_KNN_K: usize = 30;
pub const DEFAULT_EXACT_CAP: usize = 20_000;
const DISTINCT_DECIMALS: f64 = 1e9;

pub fn cosine_similarity(a: &Vector, b: &Vector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Precondition("vectors differ in dimension".into()));
    }
    let (na, nb) = (a.norm_sq(), b.norm_sq());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateVector);
    }
    Ok(vecmath::cosine_similarity_with_norms(
        a.as_slice(),
        b.as_slice(),
        na,
        nb,
    ))
}

/// `1 - cos(a, b)`, in [0, 2].
pub fn cosine_distance(a: &Vector, b: &Vector) -> Result<f64> {
    cosine_similarity(a, b).map(|s| 1.0 - s)
}

/// Identity of an embedding for distinctness checks: components rounded to
/// nine decimal places.
pub fn embedding_key(v: &Vector) -> Vec<i64> {
    v.as_slice()
        .iter()
        .map(|x| (x * DISTINCT_DECIMALS).round() as i64)
        .collect()
}

pub fn semantic_ratio(vectors: &[Vector]) -> Result<f64> {
    if vectors.is_empty() {
        return Err(Error::Precondition("semantic ratio needs at least one vector".into()));
    }
    let distinct: HashSet<Vec<i64>> = vectors.iter().map(embedding_key).collect();
    Ok(distinct.len() as f64 / vectors.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

struct Prepared<'a> {
    rows: Vec<&'a [f64]>,
    norms: Vec<f64>,
}

impl<'a> Prepared<'a> {
    fn new(vectors: &'a [Vector]) -> Result<Self> {
        let dim = vectors.first().map(Vector::dim).unwrap_or(0);
        let mut rows = Vec::with_capacity(vectors.len());
        let mut norms = Vec::with_capacity(vectors.len());
        for v in vectors {
            if v.dim() != dim {
                return Err(Error::Precondition("vectors differ in dimension".into()));
            }
            let n = v.norm_sq();
            if n == 0.0 {
                return Err(Error::DegenerateVector);
            }
            rows.push(v.as_slice());
            norms.push(n);
        }
        Ok(Prepared { rows, norms })
    }

    #[inline]
    fn distance(&self, i: usize, j: usize) -> f64 {
        vecmath::cosine_distance_with_norms(self.rows[i], self.rows[j], self.norms[i], self.norms[j])
    }
}

/// Prim's algorithm on the complete cosine-distance graph: O(N²) time,
/// O(N) memory. Ties go to the lowest node index.
pub fn exact_mst(vectors: &[Vector]) -> Result<Vec<Edge>> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::Precondition(format!("MST needs at least 2 vectors, got {n}")));
    }
    let p = Prepared::new(vectors)?;
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![0usize; n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut current = 0usize;
    in_tree[0] = true;
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut next_dist = f64::INFINITY;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let d = p.distance(current, j);
            if d < best[j] {
                best[j] = d;
                parent[j] = current;
            }
            if best[j] < next_dist || next == usize::MAX {
                next_dist = best[j];
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push(Edge {
            a: parent[next],
            b: next,
            weight: best[next],
        });
        current = next;
    }
    Ok(edges)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanningForest {
    pub edges: Vec<Edge>,
    pub components: usize,
}

/// Indices of the `k` nearest neighbours of every vector (self excluded),
/// by exact blocked search. Nearer first; equal distances favour the lower
/// index.
pub fn knn_graph(vectors: &[Vector], k: usize) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::Parameter("k must be >= 1".into()));
    }
    let n = vectors.len();
    Prepared::new(vectors)?;
    let dim = vectors.first().map(Vector::dim).unwrap_or(0);
    let k = k.min(n.saturating_sub(1));

    let mut unit = Vec::with_capacity(n * dim);
    for v in vectors {
        let inv = 1.0 / v.norm_sq().sqrt();
        unit.extend(v.as_slice().iter().map(|x| x * inv));
    }

    let mut heaps: Vec<TopK> = (0..n).map(|_| TopK::new(k)).collect();
    if k == 0 {
        return Ok(vec![Vec::new(); n]);
    }
    const BLOCK: usize = 1024;
    let mut sims = vec![0f64; BLOCK * BLOCK];
    for qi in (0..n).step_by(BLOCK) {
        let qn = BLOCK.min(n - qi);
        for cj in (qi..n).step_by(BLOCK) {
            let cn = BLOCK.min(n - cj);
            // sims[qn x cn] = Q · Cᵀ
            unsafe {
                matrixmultiply::dgemm(
                    qn,
                    dim,
                    cn,
                    1.0,
                    unit[qi * dim..].as_ptr(),
                    dim as isize,
                    1,
                    unit[cj * dim..].as_ptr(),
                    1,
                    dim as isize,
                    0.0,
                    sims.as_mut_ptr(),
                    cn as isize,
                    1,
                );
            }
            for a in 0..qn {
                let i = qi + a;
                let row = &sims[a * cn..(a + 1) * cn];
                let start = if cj == qi { a + 1 } else { 0 };
                for (b, &s) in row.iter().enumerate().skip(start) {
                    let j = cj + b;
                    heaps[i].offer(s, j);
                    heaps[j].offer(s, i);
                }
            }
        }
    }
    Ok(heaps.into_iter().map(TopK::into_sorted).collect())
}

/// Bounded best-k set under (higher similarity, then lower index).
struct TopK {
    cap: usize,
    items: Vec<(f64, usize)>,
    worst: usize,
}

impl TopK {
    fn new(cap: usize) -> Self {
        TopK {
            cap,
            items: Vec::with_capacity(cap),
            worst: 0,
        }
    }

    #[inline]
    fn better(a: (f64, usize), b: (f64, usize)) -> bool {
        a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
    }

    #[inline]
    fn offer(&mut self, sim: f64, idx: usize) {
        if self.items.len() < self.cap {
            self.items.push((sim, idx));
            if self.items.len() == self.cap {
                self.recompute_worst();
            }
            return;
        }
        if Self::better((sim, idx), self.items[self.worst]) {
            self.items[self.worst] = (sim, idx);
            self.recompute_worst();
        }
    }

    fn recompute_worst(&mut self) {
        let mut w = 0;
        for i in 1..self.items.len() {
            if Self::better(self.items[w], self.items[i]) {
                w = i;
            }
        }
        self.worst = w;
    }

    fn into_sorted(mut self) -> Vec<usize> {
        self.items
            .sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        self.items.into_iter().map(|(_, i)| i).collect()
    }
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Minimum spanning forest of the symmetric k-NN graph. With `k >= N-1`
/// the graph is complete and the result is an exact MST.
pub fn approx_mst(vectors: &[Vector], k: usize) -> Result<SpanningForest> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::Precondition(format!("MST needs at least 2 vectors, got {n}")));
    }
    let neighbours = knn_graph(vectors, k)?;
    let p = Prepared::new(vectors)?;
    let mut pairs: Vec<(usize, usize)> = neighbours
        .iter()
        .enumerate()
        .flat_map(|(i, ns)| ns.iter().map(move |&j| (i.min(j), i.max(j))))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    let mut candidates: Vec<Edge> = pairs
        .into_iter()
        .map(|(a, b)| Edge {
            a,
            b,
            weight: p.distance(a, b),
        })
        .collect();
    candidates.sort_by(|x, y| x.weight.total_cmp(&y.weight).then_with(|| (x.a, x.b).cmp(&(y.a, y.b))));
    let mut dsu = DisjointSet::new(n);
    let mut edges = Vec::with_capacity(n - 1);
    for e in candidates {
        if dsu.union(e.a, e.b) {
            edges.push(e);
            if edges.len() == n - 1 {
                break;
            }
        }
    }
    let components = n - edges.len();
    Ok(SpanningForest { edges, components })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeLengthSummary {
    pub mean: f64,
    /// Number of distinct nonzero edges averaged.
    pub distinct_edges: usize,
    /// No nonzero edge existed; `mean` is 0.
    pub degenerate: bool,
}

/// Mean over distinct nonzero MST edges.
///
/// Edges whose endpoints carry the same embedding are zero edges and are
/// dropped. Edges joining the same pair of distinct embeddings (which only
/// arises through duplicated reviews) count once. Different pairs that
/// happen to share a weight all count.
pub fn avg_mst_edge_length(edges: &[Edge], vectors: &[Vector]) -> EdgeLengthSummary {
    let mut seen: HashSet<(Vec<i64>, Vec<i64>)> = HashSet::new();
    let mut kept = Vec::new();
    for e in edges {
        if e.weight <= 0.0 {
            continue;
        }
        let (ka, kb) = (embedding_key(&vectors[e.a]), embedding_key(&vectors[e.b]));
        if ka == kb {
            continue;
        }
        let key = if ka <= kb { (ka, kb) } else { (kb, ka) };
        if seen.insert(key) {
            kept.push(e.weight);
        }
    }
    if kept.is_empty() {
        return EdgeLengthSummary {
            mean: 0.0,
            distinct_edges: 0,
            degenerate: true,
        };
    }
    EdgeLengthSummary {
        mean: kept.iter().sum::<f64>() / kept.len() as f64,
        distinct_edges: kept.len(),
        degenerate: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MstMode {
    Exact,
    ApproximateKnn,
}

/// How the audit picks an MST algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MstSelection {
    /// Exact up to `exact_cap` vectors, k-NN above.
    Auto,
    Exact,
    Knn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemanticOptions {
    pub selection: MstSelection,
    pub k: usize,
    pub exact_cap: usize,
}

impl Default for SemanticOptions {
    fn default() -> Self {
        SemanticOptions {
            selection: MstSelection::Auto,
            k: DEFAULT_KNN_K,
            exact_cap: DEFAULT_EXACT_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticReport {
    pub ratio: f64,
    pub avg_mst_edge: f64,
    pub avg_mst_edge_degenerate: bool,
    pub mode: MstMode,
    pub k: Option<usize>,
    pub components: usize,
    pub vectors: usize,
    pub distinct_vectors: usize,
    /// Reviews without a usable embedding (no known token, or zero norm).
    pub excluded_reviews: usize,
}

pub fn semantic_report(review_vectors: &[Option<Vector>], options: &SemanticOptions) -> Result<SemanticReport> {
    let mut vectors = Vec::with_capacity(review_vectors.len());
    let mut excluded = 0;
    for v in review_vectors {
        match v {
            Some(v) if !v.is_zero() => vectors.push(v.clone()),
            _ => excluded += 1,
        }
    }
    if vectors.len() < 2 {
        return Err(Error::undefined(
            "semantic",
            format!("{} embeddable reviews; at least 2 required", vectors.len()),
        ));
    }
    let ratio = semantic_ratio(&vectors)?;
    let distinct_vectors = (ratio * vectors.len() as f64).round() as usize;
    let use_exact = match options.selection {
        MstSelection::Exact => true,
        MstSelection::Knn => false,
        MstSelection::Auto => vectors.len() <= options.exact_cap,
    };
    let (edges, mode, k, components) = if use_exact {
        (exact_mst(&vectors)?, MstMode::Exact, None, 1)
    } else {
        let forest = approx_mst(&vectors, options.k)?;
        (
            forest.edges,
            MstMode::ApproximateKnn,
            Some(options.k),
            forest.components,
        )
    };
    let summary = avg_mst_edge_length(&edges, &vectors);
    Ok(SemanticReport {
        ratio,
        avg_mst_edge: summary.mean,
        avg_mst_edge_degenerate: summary.degenerate,
        mode,
        k,
        components,
        vectors: vectors.len(),
        distinct_vectors,
        excluded_reviews: excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector(xs.to_vec())
    }

    fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vector((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect()
    }

    fn sorted_weights(edges: &[Edge]) -> Vec<f64> {
        let mut w: Vec<f64> = edges.iter().map(|e| e.weight).collect();
        w.sort_by(f64::total_cmp);
        w
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_distance(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 1.0);
        let x = v(&[0.3, -2.0, 7.5]);
        assert_eq!(cosine_distance(&x, &x).unwrap(), 0.0);
        let d = cosine_distance(&v(&[1.0, 0.0]), &v(&[1.0, 1.0])).unwrap();
        assert_abs_diff_eq!(d, 0.2929, epsilon = 1e-4);
        assert!(matches!(
            cosine_distance(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(Error::DegenerateVector)
        ));
    }

    #[test]
    fn cosine_distance_is_symmetric_and_bounded() {
        let vs = random_vectors(20, 5, 9);
        for a in &vs {
            for b in &vs {
                let d = cosine_distance(a, b).unwrap();
                assert!((0.0..=2.0).contains(&d));
                assert_eq!(d, cosine_distance(b, a).unwrap());
            }
        }
    }

    #[test]
    fn ratio_examples() {
        let a = v(&[1.0, 2.0]);
        let vs = vec![a.clone(), a.clone(), v(&[0.0, 1.0]), v(&[1.0, 0.0]), v(&[2.0, 2.0])];
        assert_abs_diff_eq!(semantic_ratio(&vs).unwrap(), 0.8);
        assert_abs_diff_eq!(semantic_ratio(&vec![a.clone(); 4]).unwrap(), 0.25);
        assert_eq!(semantic_ratio(&random_vectors(10, 3, 1)).unwrap(), 1.0);
        assert!(semantic_ratio(&[]).is_err());
    }

    #[test]
    fn ratio_rounds_to_nine_decimals() {
        let vs = vec![v(&[0.1234567891]), v(&[0.12345678912]), v(&[0.123456790])];
        assert_abs_diff_eq!(semantic_ratio(&vs).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn three_point_mst() {
        let vs = vec![v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[1.0, 1.0])];
        let edges = exact_mst(&vs).unwrap();
        let mut pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e.a.min(e.b), e.a.max(e.b))).collect();
        pairs.sort();
        assert_eq!(pairs, vec![(0, 2), (1, 2)]);
        for e in &edges {
            assert_abs_diff_eq!(e.weight, 0.2929, epsilon = 1e-4);
        }
        let s = avg_mst_edge_length(&edges, &vs);
        assert_abs_diff_eq!(s.mean, 0.2929, epsilon = 1e-4);
        assert_eq!(s.distinct_edges, 2);
    }

    #[test]
    fn duplicate_pair_gives_zero_edge() {
        let vs = vec![v(&[1.0, 0.0]), v(&[1.0, 0.0]), v(&[0.0, 1.0])];
        let edges = exact_mst(&vs).unwrap();
        assert_eq!(sorted_weights(&edges), vec![0.0, 1.0]);
        let s = avg_mst_edge_length(&edges, &vs);
        assert_eq!(s.mean, 1.0);
        assert!(!s.degenerate);
    }

    #[test]
    fn two_points() {
        let vs = random_vectors(2, 4, 5);
        let edges = exact_mst(&vs).unwrap();
        assert_eq!(edges.len(), 1);
        let f = approx_mst(&vs, 1).unwrap();
        assert_eq!(f.edges.len(), 1);
        assert_eq!(f.components, 1);
        assert!(exact_mst(&vs[..1]).is_err());
    }

    #[test]
    fn identical_vectors_are_degenerate() {
        let vs = vec![v(&[0.5, 0.5]); 4];
        let s = avg_mst_edge_length(&exact_mst(&vs).unwrap(), &vs);
        assert!(s.degenerate);
        assert_eq!(s.mean, 0.0);
    }

    #[test]
    fn knn_with_full_k_matches_exact() {
        let vs = random_vectors(50, 8, 11);
        let exact = exact_mst(&vs).unwrap();
        let approx = approx_mst(&vs, 49).unwrap();
        assert_eq!(approx.components, 1);
        for (a, b) in sorted_weights(&exact).iter().zip(sorted_weights(&approx.edges)) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn separated_clusters_form_two_components() {
        let mut vs = Vec::new();
        for i in 0..5 {
            vs.push(v(&[1.0, 0.01 * i as f64, 0.0]));
            vs.push(v(&[0.0, 0.01 * i as f64, 1.0]));
        }
        let f = approx_mst(&vs, 1).unwrap();
        assert_eq!(f.components, 2);
        assert_eq!(f.edges.len(), vs.len() - 2);
    }

    #[test]
    fn knn_neighbours_are_nearest() {
        let vs = random_vectors(300, 6, 2);
        let graph = knn_graph(&vs, 5).unwrap();
        for (i, ns) in graph.iter().enumerate().step_by(37) {
            let mut brute: Vec<(f64, usize)> = (0..vs.len())
                .filter(|&j| j != i)
                .map(|j| (cosine_distance(&vs[i], &vs[j]).unwrap(), j))
                .collect();
            brute.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let expect: Vec<usize> = brute.iter().take(5).map(|p| p.1).collect();
            assert_eq!(ns, &expect);
        }
    }

    #[test]
    fn knn_blocks_cover_large_inputs() {
        // More than one 1024-row block in each direction.
        let vs = random_vectors(2100, 4, 8);
        let graph = knn_graph(&vs, 3).unwrap();
        for i in [0usize, 1023, 1024, 2099] {
            let nearest = (0..vs.len())
                .filter(|&j| j != i)
                .min_by(|&a, &b| {
                    cosine_distance(&vs[i], &vs[a])
                        .unwrap()
                        .total_cmp(&cosine_distance(&vs[i], &vs[b]).unwrap())
                })
                .unwrap();
            assert_eq!(graph[i][0], nearest);
        }
    }

    #[test]
    fn edge_length_ignores_uniform_scaling() {
        let vs = random_vectors(30, 5, 4);
        for factor in [2.0, 0.5, 1024.0] {
            let scaled: Vec<Vector> = vs.iter().map(|x| x.scaled(factor)).collect();
            let a = sorted_weights(&exact_mst(&vs).unwrap());
            let b = sorted_weights(&exact_mst(&scaled).unwrap());
            assert_eq!(a, b);
        }
        let scaled: Vec<Vector> = vs.iter().map(|x| x.scaled(3.0)).collect();
        let a = avg_mst_edge_length(&exact_mst(&vs).unwrap(), &vs).mean;
        let b = avg_mst_edge_length(&exact_mst(&scaled).unwrap(), &scaled).mean;
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn report_excludes_absent_and_zero() {
        let vs = vec![
            Some(v(&[1.0, 0.0])),
            None,
            Some(v(&[0.0, 0.0])),
            Some(v(&[0.0, 1.0])),
            Some(v(&[1.0, 1.0])),
        ];
        let r = semantic_report(&vs, &SemanticOptions::default()).unwrap();
        assert_eq!(r.excluded_reviews, 2);
        assert_eq!(r.vectors, 3);
        assert_eq!(r.mode, MstMode::Exact);
        assert_eq!(r.components, 1);
        let knn = SemanticOptions {
            selection: MstSelection::Knn,
            k: 2,
            ..SemanticOptions::default()
        };
        let r2 = semantic_report(&vs, &knn).unwrap();
        assert_eq!(r2.mode, MstMode::ApproximateKnn);
        assert_eq!(r2.k, Some(2));
        assert_abs_diff_eq!(r.avg_mst_edge, r2.avg_mst_edge, epsilon = 1e-12);
        assert!(semantic_report(&[None, Some(v(&[1.0]))], &SemanticOptions::default()).is_err());
    }

    #[test]
    fn auto_switches_on_cap() {
        let vs: Vec<Option<Vector>> = random_vectors(12, 3, 3).into_iter().map(Some).collect();
        let opts = SemanticOptions {
            exact_cap: 10,
            ..SemanticOptions::default()
        };
        assert_eq!(semantic_report(&vs, &opts).unwrap().mode, MstMode::ApproximateKnn);
    }
}
