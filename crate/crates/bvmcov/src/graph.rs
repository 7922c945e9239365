//! Decomposable-graph machinery: maximum cardinality search, perfect
//! elimination orderings, junction trees (cliques and separators), graph
//! complexity statistics, generators, and exhaustive enumeration at tiny p.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::matcore::{try_cholesky, SymMatrix};

/// Undirected graph on vertices 0..p with a symmetric, loop-free edge set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UGraph {
    p: usize,
    adj: Vec<BTreeSet<usize>>,
}

impl UGraph {
    pub fn new(p: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = vec![BTreeSet::new(); p];
        for &(i, j) in edges {
            if i == j {
                return Err(Error::InvalidParameter(format!("self-loop at vertex {i}")));
            }
            if i >= p || j >= p {
                return Err(Error::InvalidParameter(format!(
                    "edge ({i}, {j}) out of range for p = {p}"
                )));
            }
            adj[i].insert(j);
            adj[j].insert(i);
        }
        Ok(UGraph { p, adj })
    }

    pub fn empty(p: usize) -> Self {
        UGraph {
            p,
            adj: vec![BTreeSet::new(); p],
        }
    }

    pub fn complete(p: usize) -> Self {
        let mut adj = vec![BTreeSet::new(); p];
        for i in 0..p {
            for j in 0..p {
                if i != j {
                    adj[i].insert(j);
                }
            }
        }
        UGraph { p, adj }
    }

    pub fn vertex_count(&self) -> usize {
        self.p
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(|s| s.len()).sum::<usize>() / 2
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i != j && self.adj[i].contains(&j)
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj[v].iter().copied()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    /// Edges as (i, j) with i < j, lexicographic.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for i in 0..self.p {
            for &j in &self.adj[i] {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(|s| s.len()).max().unwrap_or(0)
    }

    /// Free coordinate count p + |E| of the associated matrix space.
    pub fn free_count(&self) -> usize {
        self.p + self.edge_count()
    }

    /// Edge-list text format: header "p <int>", then one "i j" pair per
    /// line, 1-indexed.
    pub fn to_edge_list_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "p {}", self.p);
        for (i, j) in self.edges() {
            let _ = writeln!(s, "{} {}", i + 1, j + 1);
        }
        s
    }

    pub fn from_edge_list_str(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Config {
            location: "line 1".into(),
            msg: "empty graph file".into(),
        })?;
        let p: usize = header
            .strip_prefix("p ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Config {
                location: "line 1".into(),
                msg: format!("expected header \"p <int>\", got {header:?}"),
            })?;
        let mut edges = Vec::new();
        for (k, line) in lines.enumerate() {
            let mut it = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<usize> {
                tok.and_then(|t| t.parse::<usize>().ok())
                    .filter(|&v| v >= 1 && v <= p)
                    .ok_or_else(|| Error::Config {
                        location: format!("edge line {}", k + 1),
                        msg: format!("expected \"i j\" with 1 <= i, j <= {p}, got {line:?}"),
                    })
            };
            let i = parse(it.next())?;
            let j = parse(it.next())?;
            edges.push((i - 1, j - 1));
        }
        UGraph::new(p, &edges)
    }
}

/// Cliques and separators of a decomposable graph in perfect order.
///
/// `order[k]` is the vertex at position k of the perfect elimination scheme
/// (earlier neighbors of every vertex form a clique). Separators pair with
/// cliques 1.. and may be empty for disconnected graphs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JunctionTree {
    pub order: Vec<usize>,
    pub cliques: Vec<Vec<usize>>,
    pub separators: Vec<Vec<usize>>,
}

impl JunctionTree {
    /// Each vertex is counted exactly once by cliques minus separators.
    pub fn vertex_multiset_identity(&self) -> bool {
        let p = self.order.len();
        let mut count = vec![0i64; p];
        for c in &self.cliques {
            for &v in c {
                count[v] += 1;
            }
        }
        for s in &self.separators {
            for &v in s {
                count[v] -= 1;
            }
        }
        count.iter().all(|&c| c == 1)
    }
}

/// Graph complexity statistics for a fixed perfect ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphStats {
    /// 1 + maximum vertex degree: the maximal row support of a matrix in M_G.
    pub d: usize,
    /// (1 + max forward neighbor count) * (1 + max backward neighbor count)
    /// under the ordering.
    pub a_g: usize,
    pub edge_count: usize,
}

/// Maximum cardinality search. Returns whether the graph is decomposable and,
/// if so, an ordering where every vertex's earlier neighbors form a clique.
pub fn mcs_decomposable(g: &UGraph) -> (bool, Option<Vec<usize>>) {
    let p = g.vertex_count();
    if p == 0 {
        return (true, Some(vec![]));
    }
    let mut weight = vec![0usize; p];
    let mut visited = vec![false; p];
    let mut order = Vec::with_capacity(p);
    for _ in 0..p {
        let v = (0..p)
            .filter(|&v| !visited[v])
            .max_by_key(|&v| (weight[v], usize::MAX - v))
            .unwrap();
        visited[v] = true;
        order.push(v);
        for u in g.neighbors(v) {
            if !visited[u] {
                weight[u] += 1;
            }
        }
    }
    if verify_perfect_order(g, &order) {
        (true, Some(order))
    } else {
        (false, None)
    }
}

/// Check the perfect elimination property: for every vertex, its neighbors
/// earlier in the order are pairwise adjacent.
pub fn verify_perfect_order(g: &UGraph, order: &[usize]) -> bool {
    let p = g.vertex_count();
    if order.len() != p {
        return false;
    }
    let mut rank = vec![usize::MAX; p];
    for (k, &v) in order.iter().enumerate() {
        if v >= p || rank[v] != usize::MAX {
            return false;
        }
        rank[v] = k;
    }
    for &v in order {
        let earlier: Vec<usize> = g.neighbors(v).filter(|&u| rank[u] < rank[v]).collect();
        for (a_idx, &a) in earlier.iter().enumerate() {
            for &b in &earlier[a_idx + 1..] {
                if !g.has_edge(a, b) {
                    return false;
                }
            }
        }
    }
    true
}

/// Build the clique/separator sequence for a decomposable graph under a
/// valid perfect ordering. Rejects non-decomposable input.
pub fn perfect_sequence(g: &UGraph, order: &[usize]) -> Result<JunctionTree> {
    if !verify_perfect_order(g, order) {
        return Err(Error::NotDecomposable);
    }
    let p = g.vertex_count();
    let mut rank = vec![0usize; p];
    for (k, &v) in order.iter().enumerate() {
        rank[v] = k;
    }
    // Candidate clique per vertex: the vertex plus its earlier neighbors.
    let mut candidates: Vec<BTreeSet<usize>> = Vec::with_capacity(p);
    for &v in order {
        let mut c: BTreeSet<usize> = g.neighbors(v).filter(|&u| rank[u] < rank[v]).collect();
        c.insert(v);
        candidates.push(c);
    }
    // Keep maximal candidates, in discovery order.
    let mut cliques: Vec<BTreeSet<usize>> = Vec::new();
    for (k, c) in candidates.iter().enumerate() {
        let dominated = candidates
            .iter()
            .enumerate()
            .any(|(k2, c2)| k2 != k && c2.is_superset(c) && (c2.len() > c.len() || k2 < k));
        if !dominated {
            cliques.push(c.clone());
        }
    }
    // Separators from the running intersection.
    let mut seen: BTreeSet<usize> = BTreeSet::new();
    let mut separators = Vec::new();
    for (k, c) in cliques.iter().enumerate() {
        if k > 0 {
            let sep: BTreeSet<usize> = c.intersection(&seen).copied().collect();
            // Running intersection: the separator must live inside one
            // earlier clique.
            if !sep.is_empty() && !cliques[..k].iter().any(|c2| sep.is_subset(c2)) {
                return Err(Error::NotDecomposable);
            }
            separators.push(sep.into_iter().collect());
        }
        seen.extend(c.iter().copied());
    }
    if seen.len() != p {
        return Err(Error::NotDecomposable);
    }
    let jt = JunctionTree {
        order: order.to_vec(),
        cliques: cliques.into_iter().map(|c| c.into_iter().collect()).collect(),
        separators,
    };
    // Every edge must lie inside some clique.
    for (i, j) in g.edges() {
        if !jt
            .cliques
            .iter()
            .any(|c| c.contains(&i) && c.contains(&j))
        {
            return Err(Error::NotDecomposable);
        }
    }
    Ok(jt)
}

/// Junction tree via MCS; convenience for decomposable graphs.
pub fn junction_tree(g: &UGraph) -> Result<JunctionTree> {
    match mcs_decomposable(g) {
        (true, Some(order)) => perfect_sequence(g, &order),
        _ => Err(Error::NotDecomposable),
    }
}

/// Complexity statistics under the given perfect ordering. Forward and
/// backward neighbor counts are taken after relabeling vertices by the
/// ordering; their sums both equal |E|.
pub fn graph_stats(g: &UGraph, order: &[usize]) -> Result<GraphStats> {
    if !verify_perfect_order(g, order) {
        return Err(Error::NotDecomposable);
    }
    let p = g.vertex_count();
    let mut rank = vec![0usize; p];
    for (k, &v) in order.iter().enumerate() {
        rank[v] = k;
    }
    let mut max_fwd = 0usize;
    let mut max_bwd = 0usize;
    let mut sum_fwd = 0usize;
    let mut sum_bwd = 0usize;
    for v in 0..p {
        let fwd = g.neighbors(v).filter(|&u| rank[u] > rank[v]).count();
        let bwd = g.neighbors(v).filter(|&u| rank[u] < rank[v]).count();
        max_fwd = max_fwd.max(fwd);
        max_bwd = max_bwd.max(bwd);
        sum_fwd += fwd;
        sum_bwd += bwd;
    }
    debug_assert_eq!(sum_fwd, g.edge_count());
    debug_assert_eq!(sum_bwd, g.edge_count());
    Ok(GraphStats {
        d: 1 + g.max_degree(),
        a_g: (1 + max_fwd) * (1 + max_bwd),
        edge_count: g.edge_count(),
    })
}

/// Star graph: vertex 0 is the hub. The identity ordering is perfect.
pub fn star(p: usize) -> UGraph {
    let edges: Vec<(usize, usize)> = (1..p).map(|k| (0, k)).collect();
    UGraph::new(p, &edges).expect("star edges are valid")
}

/// Banded graph: edges between vertices within distance k. band(p, 1) is the
/// path graph. The identity ordering is perfect.
pub fn band(p: usize, k: usize) -> UGraph {
    let mut edges = Vec::new();
    for i in 0..p {
        for j in (i + 1)..p.min(i + k + 1) {
            edges.push((i, j));
        }
    }
    UGraph::new(p, &edges).expect("band edges are valid")
}

/// Random decomposable graph by incremental clique growth: each new vertex
/// attaches to a random subset of a random existing clique, which keeps the
/// neighborhood complete. Deterministic per seed.
pub fn random_decomposable(p: usize, seed: u64) -> UGraph {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut cliques: Vec<Vec<usize>> = vec![vec![0]];
    for v in 1..p {
        let c = &cliques[rng.gen_range(0..cliques.len())];
        let size = rng.gen_range(1..=c.len());
        let mut pool = c.clone();
        let mut attach = Vec::with_capacity(size);
        for _ in 0..size {
            let k = rng.gen_range(0..pool.len());
            attach.push(pool.swap_remove(k));
        }
        for &u in &attach {
            edges.push((u, v));
        }
        attach.push(v);
        attach.sort_unstable();
        cliques.push(attach);
    }
    UGraph::new(p, &edges).expect("grown edges are valid")
}

/// All labeled decomposable graphs on p <= 5 vertices, by exhaustive filter
/// over the 2^(p(p-1)/2) edge masks.
pub fn enumerate_decomposable(p: usize) -> Result<Vec<UGraph>> {
    if p > 5 {
        return Err(Error::InvalidParameter(format!(
            "exhaustive enumeration is limited to p <= 5, got {p}"
        )));
    }
    let pairs: Vec<(usize, usize)> = (0..p)
        .flat_map(|i| ((i + 1)..p).map(move |j| (i, j)))
        .collect();
    let m = pairs.len();
    let mut out = Vec::new();
    for mask in 0u32..(1u32 << m) {
        let edges: Vec<(usize, usize)> = pairs
            .iter()
            .enumerate()
            .filter(|(b, _)| mask >> b & 1 == 1)
            .map(|(_, &e)| e)
            .collect();
        let g = UGraph::new(p, &edges)?;
        if mcs_decomposable(&g).0 {
            out.push(g);
        }
    }
    Ok(out)
}

/// Membership in P_G: positive definite with off-graph entries within tol.
pub fn membership_pg(omega: &SymMatrix, g: &UGraph, tol: f64) -> bool {
    let p = omega.dim();
    if p != g.vertex_count() {
        return false;
    }
    for i in 0..p {
        for j in 0..i {
            if !g.has_edge(i, j) && omega.get(i, j).abs() > tol {
                return false;
            }
        }
    }
    try_cholesky(omega.as_matrix()).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle(p: usize) -> UGraph {
        let edges: Vec<(usize, usize)> = (0..p).map(|i| (i, (i + 1) % p)).collect();
        UGraph::new(p, &edges).unwrap()
    }

    // Brute-force chordality: no vertex subset of size >= 4 induces a cycle.
    fn is_chordal_brute(g: &UGraph) -> bool {
        let p = g.vertex_count();
        for mask in 0u32..(1 << p) {
            let verts: Vec<usize> = (0..p).filter(|v| mask >> v & 1 == 1).collect();
            if verts.len() < 4 {
                continue;
            }
            let deg: Vec<usize> = verts
                .iter()
                .map(|&v| verts.iter().filter(|&&u| g.has_edge(v, u)).count())
                .collect();
            if !deg.iter().all(|&d| d == 2) {
                continue;
            }
            // All induced degrees are 2; a connected such subgraph is a cycle.
            let mut seen = vec![false; verts.len()];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(a) = stack.pop() {
                for (b, &u) in verts.iter().enumerate() {
                    if !seen[b] && g.has_edge(verts[a], u) {
                        seen[b] = true;
                        stack.push(b);
                    }
                }
            }
            if seen.iter().all(|&s| s) {
                return false;
            }
        }
        true
    }

    #[test]
    fn mcs_examples() {
        assert!(!mcs_decomposable(&cycle(4)).0);
        assert!(mcs_decomposable(&star(5)).0);
        assert!(mcs_decomposable(&UGraph::complete(4)).0);
    }

    #[test]
    fn mcs_agrees_with_brute_force_up_to_p6() {
        for p in 1..=6usize {
            let pairs: Vec<(usize, usize)> = (0..p)
                .flat_map(|i| ((i + 1)..p).map(move |j| (i, j)))
                .collect();
            let m = pairs.len();
            // All graphs for p <= 5, deterministic stride sample for p = 6.
            let stride = if p <= 5 { 1u32 } else { 11 };
            let mut mask = 0u32;
            while (mask as u64) < (1u64 << m) {
                let edges: Vec<(usize, usize)> = pairs
                    .iter()
                    .enumerate()
                    .filter(|(b, _)| mask >> b & 1 == 1)
                    .map(|(_, &e)| e)
                    .collect();
                let g = UGraph::new(p, &edges).unwrap();
                assert_eq!(
                    mcs_decomposable(&g).0,
                    is_chordal_brute(&g),
                    "disagreement at p={p}, mask={mask}"
                );
                mask += stride;
            }
        }
    }

    #[test]
    fn perfect_sequence_path() {
        let g = band(3, 1);
        let jt = junction_tree(&g).unwrap();
        assert_eq!(jt.cliques, vec![vec![0, 1], vec![1, 2]]);
        assert_eq!(jt.separators, vec![vec![1]]);
        assert!(jt.vertex_multiset_identity());
    }

    #[test]
    fn perfect_sequence_star4() {
        let g = star(4);
        let order: Vec<usize> = (0..4).collect();
        let jt = perfect_sequence(&g, &order).unwrap();
        assert_eq!(jt.cliques, vec![vec![0, 1], vec![0, 2], vec![0, 3]]);
        assert_eq!(jt.separators, vec![vec![0], vec![0]]);
        assert!(jt.vertex_multiset_identity());
    }

    #[test]
    fn perfect_sequence_complete3() {
        let jt = junction_tree(&UGraph::complete(3)).unwrap();
        assert_eq!(jt.cliques, vec![vec![0, 1, 2]]);
        assert!(jt.separators.is_empty());
    }

    #[test]
    fn perfect_sequence_rejects_cycle() {
        let g = cycle(4);
        let order: Vec<usize> = (0..4).collect();
        assert!(perfect_sequence(&g, &order).is_err());
    }

    #[test]
    fn multiset_identity_on_random_graphs() {
        for seed in 0..30 {
            let g = random_decomposable(9, seed);
            let jt = junction_tree(&g).unwrap();
            assert!(jt.vertex_multiset_identity(), "seed {seed}");
        }
    }

    #[test]
    fn graph_stats_examples() {
        // Star with hub first: d = p, a_g = 2p.
        for p in 2..=7usize {
            let g = star(p);
            let order: Vec<usize> = (0..p).collect();
            let s = graph_stats(&g, &order).unwrap();
            assert_eq!(s.d, p);
            assert_eq!(s.a_g, 2 * p);
            assert_eq!(s.edge_count, p - 1);
        }

        let empty = UGraph::empty(6);
        let s = graph_stats(&empty, &(0..6).collect::<Vec<_>>()).unwrap();
        assert_eq!((s.d, s.a_g, s.edge_count), (1, 1, 0));

        let path = band(6, 1);
        let s = graph_stats(&path, &(0..6).collect::<Vec<_>>()).unwrap();
        assert_eq!((s.d, s.a_g), (3, 4));
    }

    #[test]
    fn star_rate_expression() {
        // min(a_g, d^4) log p = 2p log p for the star with hub first.
        for p in 2..=12usize {
            let g = star(p);
            let order: Vec<usize> = (0..p).collect();
            let s = graph_stats(&g, &order).unwrap();
            let lhs = (s.a_g.min(s.d.pow(4)) as f64) * (p as f64).ln();
            let rhs = 2.0 * (p as f64) * (p as f64).ln();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn generator_shapes() {
        assert_eq!(star(3).edges(), vec![(0, 1), (0, 2)]);
        assert_eq!(band(4, 1).edges(), vec![(0, 1), (1, 2), (2, 3)]);
        let g = random_decomposable(8, 7);
        assert!(mcs_decomposable(&g).0);
        assert_eq!(g, random_decomposable(8, 7));
        assert_ne!(
            random_decomposable(8, 1).edges(),
            random_decomposable(8, 2).edges()
        );
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_decomposable(2).unwrap().len(), 2);
        assert_eq!(enumerate_decomposable(3).unwrap().len(), 8);
        let four = enumerate_decomposable(4).unwrap();
        assert_eq!(four.len(), 61);
        // The three labeled 4-cycles are exactly the excluded graphs.
        assert!(!four.iter().any(|g| *g == cycle(4)));
        assert!(enumerate_decomposable(6).is_err());
    }

    #[test]
    fn membership_pg_cases() {
        let id = SymMatrix::identity(4);
        assert!(membership_pg(&id, &UGraph::empty(4), 1e-10));
        assert!(membership_pg(&id, &star(4), 1e-10));

        let dense = SymMatrix::from_lower(3, |i, j| if i == j { 2.0 } else { 0.5 });
        assert!(!membership_pg(&dense, &UGraph::empty(3), 1e-8));

        // PD check: an indefinite matrix with the right zero pattern fails.
        let indef = SymMatrix::from_lower(2, |i, j| if i == j { -1.0 } else { 0.0 });
        assert!(!membership_pg(&indef, &UGraph::empty(2), 1e-8));
    }

    #[test]
    fn edge_list_round_trip() {
        let g = random_decomposable(7, 3);
        let text = g.to_edge_list_string();
        let back = UGraph::from_edge_list_str(&text).unwrap();
        assert_eq!(g, back);

        assert!(UGraph::from_edge_list_str("").is_err());
        assert!(UGraph::from_edge_list_str("q 3\n1 2\n").is_err());
        assert!(UGraph::from_edge_list_str("p 3\n1 9\n").is_err());
    }
}
