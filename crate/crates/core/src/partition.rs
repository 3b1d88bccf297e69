//! Overlapping patches and the patch graph.
//!
//! Nodes are first split into `k` disjoint clusters by a seeded, capacity
//! capped label propagation. Each patch is then its cluster plus the 1-hop
//! neighborhood, which puts every cut edge inside at least one patch.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Default minimum overlap: twice the embedding dimension.
pub const DEFAULT_MIN_OVERLAP: usize = 32;

pub const LABEL_PROPAGATION_SWEEPS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    /// Sorted global ids; local id `i` is `nodes[i]`.
    pub nodes: Vec<usize>,
    /// Induced subgraph on `nodes`, in local ids, with the feature rows.
    pub graph: Graph,
}

impl Patch {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn local_index(&self, global: usize) -> Option<usize> {
        self.nodes.binary_search(&global).ok()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    pub patches: Vec<Patch>,
    /// For each global node, the patches containing it (ascending).
    pub membership: Vec<Vec<usize>>,
}

impl PatchSet {
    pub fn k(&self) -> usize {
        self.patches.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.membership.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchEdge {
    pub i: usize,
    pub j: usize,
    /// Sorted global ids shared by patches `i` and `j`.
    pub overlap: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchGraph {
    pub k: usize,
    pub edges: Vec<PatchEdge>,
    pub min_overlap: usize,
    pub max_overlap: usize,
}

impl PatchGraph {
    pub fn is_connected(&self) -> bool {
        let pairs: Vec<(usize, usize)> = self.edges.iter().map(|e| (e.i, e.j)).collect();
        count_components(self.k, &pairs) <= 1
    }

    /// Neighbors of each patch, paired with the index of the connecting edge.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.k];
        for (idx, e) in self.edges.iter().enumerate() {
            adj[e.i].push((e.j, idx));
            adj[e.j].push((e.i, idx));
        }
        adj
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        self.0[hi] = lo;
        true
    }
}

fn count_components(n: usize, pairs: &[(usize, usize)]) -> usize {
    let mut uf = UnionFind::new(n);
    let merged = pairs.iter().filter(|&&(a, b)| uf.union(a, b)).count();
    n - merged
}

/// Draws `count` distinct items with probability proportional to `weight`,
/// sequentially without replacement.
pub(crate) fn weighted_without_replacement<R: Rng>(
    items: &[usize],
    weight: impl Fn(usize) -> f64,
    count: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut pool: Vec<usize> = items.to_vec();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count.min(items.len()) {
        let total: f64 = pool.iter().map(|&v| weight(v)).sum();
        let mut r = rng.gen::<f64>() * total;
        let mut pick = pool.len() - 1;
        for (idx, &v) in pool.iter().enumerate() {
            r -= weight(v);
            if r < 0.0 {
                pick = idx;
                break;
            }
        }
        out.push(pool.remove(pick));
    }
    out
}

/// Assigns every node to one of `k` non-empty clusters.
///
/// Seeds are drawn with probability proportional to degree + 1, at least one
/// per connected component while seeds last. Clusters then grow in
/// synchronous BFS rounds, each node joining the adjacent cluster with most
/// links among those below the cap `⌈1.2·N/k⌉`. Leftover nodes join the
/// neighboring cluster with most links and spare capacity, falling back to
/// the smallest cluster, so no cluster exceeds the cap. Finally, up to
/// [`LABEL_PROPAGATION_SWEEPS`] label-propagation sweeps move nodes towards
/// the cluster most of their neighbors belong to; a cluster stops giving
/// nodes away at `⌊N/(2k)⌋`.
pub fn cluster_nodes(g: &Graph, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = g.n_nodes();
    if k == 0 || k > n {
        return Err(Error::Parameter(format!(
            "cannot split {n} nodes into {k} clusters"
        )));
    }
    if k == 1 {
        return Ok(vec![0; n]);
    }
    let cap = (1.2 * n as f64 / k as f64).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (n_comp, comp) = g.components();
    let mut members = vec![Vec::new(); n_comp];
    for v in 0..n {
        members[comp[v]].push(v);
    }
    let mut order: Vec<usize> = (0..n_comp).collect();
    order.sort_by(|&a, &b| members[b].len().cmp(&members[a].len()).then(a.cmp(&b)));
    let mut quota = vec![0usize; n_comp];
    for &c in order.iter().take(k) {
        quota[c] = 1;
    }
    let mut remaining = k.saturating_sub(n_comp);
    while remaining > 0 {
        // Largest-average rule: next seed goes where size / (seeds + 1) is biggest.
        let best = order
            .iter()
            .copied()
            .filter(|&c| quota[c] < members[c].len())
            .max_by(|&a, &b| {
                let fa = members[a].len() as f64 / (quota[a] + 1) as f64;
                let fb = members[b].len() as f64 / (quota[b] + 1) as f64;
                fa.partial_cmp(&fb).unwrap().then(b.cmp(&a))
            })
            .expect("k <= n leaves room for every seed");
        quota[best] += 1;
        remaining -= 1;
    }
    let mut seeds = Vec::with_capacity(k);
    for &c in &order {
        if quota[c] > 0 {
            let w = |v: usize| (g.degree(v) + 1) as f64;
            seeds.extend(weighted_without_replacement(&members[c], w, quota[c], &mut rng));
        }
    }
    seeds.sort_unstable();

    const NONE: usize = usize::MAX;
    let mut assign = vec![NONE; n];
    let mut size = vec![0usize; k];
    for (c, &s) in seeds.iter().enumerate() {
        assign[s] = c;
        size[c] = 1;
    }

    let mut counts = vec![0usize; k];
    let mut touched = Vec::new();
    let link_counts = |v: usize, assign: &[usize], counts: &mut Vec<usize>, touched: &mut Vec<usize>| {
        for &c in touched.iter() {
            counts[c] = 0;
        }
        touched.clear();
        for &w in g.neighbors(v) {
            let c = assign[w];
            if c != NONE {
                if counts[c] == 0 {
                    touched.push(c);
                }
                counts[c] += 1;
            }
        }
        touched.sort_unstable();
    };

    let mut frontier: Vec<usize> = seeds.clone();
    loop {
        let candidates: BTreeSet<usize> = frontier
            .iter()
            .flat_map(|&u| g.neighbors(u).iter().copied())
            .filter(|&v| assign[v] == NONE)
            .collect();
        let mut pending = Vec::new();
        for &v in &candidates {
            link_counts(v, &assign, &mut counts, &mut touched);
            let best = touched
                .iter()
                .copied()
                .filter(|&c| size[c] < cap)
                .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)));
            if let Some(c) = best {
                size[c] += 1;
                pending.push((v, c));
            }
        }
        if pending.is_empty() {
            break;
        }
        frontier.clear();
        for (v, c) in pending {
            assign[v] = c;
            frontier.push(v);
        }
    }

    // Stragglers: capacity-blocked nodes and components that received no seed.
    // They join the neighboring cluster with most links that still has room,
    // or the smallest cluster when every neighboring one is full.
    loop {
        let mut progress = false;
        let mut unassigned = false;
        for v in 0..n {
            if assign[v] != NONE {
                continue;
            }
            link_counts(v, &assign, &mut counts, &mut touched);
            if touched.is_empty() {
                unassigned = true;
                continue;
            }
            let c = touched
                .iter()
                .copied()
                .filter(|&c| size[c] < cap)
                .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
                .unwrap_or_else(|| (0..k).min_by_key(|&c| (size[c], c)).unwrap());
            assign[v] = c;
            size[c] += 1;
            progress = true;
        }
        if !unassigned {
            break;
        }
        if !progress {
            let v = assign.iter().position(|&c| c == NONE).unwrap();
            let c = (0..k).min_by_key(|&c| (size[c], c)).unwrap();
            assign[v] = c;
            size[c] += 1;
        }
    }

    // Label propagation: sweep nodes in id order, moving each to the cluster
    // holding strictly more of its neighbors, as long as the target stays
    // within the cap and the source keeps half the balanced size.
    let floor = (n / (2 * k)).max(1);
    for _ in 0..LABEL_PROPAGATION_SWEEPS {
        let mut moved = false;
        for v in 0..n {
            let own = assign[v];
            if size[own] <= floor {
                continue;
            }
            link_counts(v, &assign, &mut counts, &mut touched);
            let own_links = if touched.contains(&own) { counts[own] } else { 0 };
            let best = touched
                .iter()
                .copied()
                .filter(|&c| c != own && size[c] < cap)
                .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)));
            if let Some(c) = best {
                if counts[c] > own_links {
                    assign[v] = c;
                    size[own] -= 1;
                    size[c] += 1;
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
    Ok(assign)
}

fn sorted_intersection(a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

fn overlap_edges(nodes: &[Vec<usize>], d: usize) -> Vec<PatchEdge> {
    let k = nodes.len();
    let mut edges = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let overlap = sorted_intersection(&nodes[i], &nodes[j]);
            if !overlap.is_empty() && overlap.len() >= d {
                edges.push(PatchEdge { i, j, overlap });
            }
        }
    }
    edges
}

/// Builds 1-hop expanded patches from a cluster assignment and links patches
/// that share at least `min_overlap` nodes.
///
/// A disconnected patch graph is repaired along the cluster adjacency: for
/// the best linking pair, the highest-degree nodes of each patch are copied
/// into the other until the pair shares `min_overlap` nodes.
pub fn build_patches(g: &Graph, assignment: &[usize], min_overlap: usize) -> Result<(PatchSet, PatchGraph)> {
    let n = g.n_nodes();
    if assignment.len() != n {
        return Err(Error::Parameter(format!(
            "assignment covers {} nodes, graph has {n}",
            assignment.len()
        )));
    }
    let k = assignment.iter().copied().max().map_or(0, |m| m + 1);
    if k == 0 {
        return Err(Error::Parameter("cannot build patches of an empty graph".into()));
    }
    let mut nodes: Vec<Vec<usize>> = vec![Vec::new(); k];
    for u in 0..n {
        let c = assignment[u];
        nodes[c].push(u);
        for &v in g.neighbors(u) {
            if assignment[v] != c {
                nodes[c].push(v);
            }
        }
    }
    for (c, list) in nodes.iter_mut().enumerate() {
        list.sort_unstable();
        list.dedup();
        if list.is_empty() {
            return Err(Error::Parameter(format!("cluster {c} is empty")));
        }
    }
    let smallest = nodes.iter().map(Vec::len).min().unwrap();
    if k > 1 && min_overlap > smallest {
        return Err(Error::Parameter(format!(
            "minimum overlap {min_overlap} exceeds the smallest patch size {smallest}"
        )));
    }

    if k > 1 {
        connect_patches(g, assignment, &mut nodes, min_overlap);
    }
    let edges = overlap_edges(&nodes, min_overlap.max(1));
    let max_overlap = edges.iter().map(|e| e.overlap.len()).max().unwrap_or(0);

    let mut membership = vec![Vec::new(); n];
    for (j, list) in nodes.iter().enumerate() {
        for &u in list {
            membership[u].push(j);
        }
    }
    let patches = nodes
        .into_iter()
        .map(|list| Patch {
            graph: g.induced_subgraph(&list),
            nodes: list,
        })
        .collect();
    Ok((
        PatchSet { patches, membership },
        PatchGraph {
            k,
            edges,
            min_overlap,
            max_overlap,
        },
    ))
}

fn connect_patches(g: &Graph, assignment: &[usize], nodes: &mut [Vec<usize>], d: usize) {
    let k = nodes.len();
    let d = d.max(1);
    let mut cut_links = vec![vec![0usize; k]; k];
    for &(u, v) in g.edges() {
        let (a, b) = (assignment[u], assignment[v]);
        if a != b {
            cut_links[a][b] += 1;
            cut_links[b][a] += 1;
        }
    }
    loop {
        let edges = overlap_edges(nodes, d);
        let mut uf = UnionFind::new(k);
        for e in &edges {
            uf.union(e.i, e.j);
        }
        let roots: Vec<usize> = (0..k).map(|i| uf.find(i)).collect();
        if roots.iter().all(|&r| r == roots[0]) {
            return;
        }
        // Best bridging pair: most cut edges between the clusters, then largest
        // current overlap, then lowest ids.
        let mut best: Option<((usize, usize, usize, usize), (usize, usize))> = None;
        for i in 0..k {
            for j in i + 1..k {
                if roots[i] == roots[j] {
                    continue;
                }
                let ov = sorted_intersection(&nodes[i], &nodes[j]).len();
                let key = (cut_links[i][j], ov, usize::MAX - i, usize::MAX - j);
                if best.as_ref().map_or(true, |(bk, _)| key > *bk) {
                    best = Some((key, (i, j)));
                }
            }
        }
        let (_, (i, j)) = best.expect("a disconnected patch graph has a bridging pair");
        let mut candidates: Vec<(usize, usize)> = Vec::new();
        for &u in &nodes[i] {
            if nodes[j].binary_search(&u).is_err() {
                candidates.push((u, j));
            }
        }
        for &u in &nodes[j] {
            if nodes[i].binary_search(&u).is_err() {
                candidates.push((u, i));
            }
        }
        candidates.sort_by(|a, b| g.degree(b.0).cmp(&g.degree(a.0)).then(a.0.cmp(&b.0)));
        let mut overlap = sorted_intersection(&nodes[i], &nodes[j]).len();
        for (u, into) in candidates {
            if overlap >= d {
                break;
            }
            let pos = nodes[into].binary_search(&u).unwrap_err();
            nodes[into].insert(pos, u);
            overlap += 1;
        }
    }
}

/// Writes `k d`, then one line of global node ids per patch.
pub fn save_patches(patches: &PatchSet, graph: &PatchGraph, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{} {}", patches.k(), graph.min_overlap)?;
    for p in &patches.patches {
        let ids: Vec<String> = p.nodes.iter().map(usize::to_string).collect();
        writeln!(w, "{}", ids.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a patch file and rebuilds the patch set and patch graph over `g`.
pub fn load_patches(g: &Graph, path: &Path) -> Result<(PatchSet, PatchGraph)> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let parse = |tok: &str, line: usize| -> Result<usize> {
        tok.parse().map_err(|_| Error::Format {
            line,
            msg: format!("cannot parse {tok:?}"),
        })
    };
    let (k, d) = match lines.next() {
        Some((_, line)) => {
            let line = line?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks.as_slice() {
                [k, d] => (parse(k, 1)?, parse(d, 1)?),
                _ => return Err(Error::Format { line: 1, msg: "header must be \"k d\"".into() }),
            }
        }
        None => return Err(Error::Format { line: 1, msg: "empty patch file".into() }),
    };
    let mut nodes = Vec::with_capacity(k);
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut ids = line
            .split_whitespace()
            .map(|t| parse(t, i + 1))
            .collect::<Result<Vec<_>>>()?;
        if let Some(&bad) = ids.iter().find(|&&u| u >= g.n_nodes()) {
            return Err(Error::Format {
                line: i + 1,
                msg: format!("node id {bad} out of range"),
            });
        }
        ids.sort_unstable();
        ids.dedup();
        nodes.push(ids);
    }
    if nodes.len() != k {
        return Err(Error::Format {
            line: k + 1,
            msg: format!("header declares {k} patches, found {}", nodes.len()),
        });
    }
    patches_from_nodes(g, nodes, d)
}

/// Assembles a patch set from explicit node lists.
pub fn patches_from_nodes(g: &Graph, nodes: Vec<Vec<usize>>, min_overlap: usize) -> Result<(PatchSet, PatchGraph)> {
    let k = nodes.len();
    let mut membership = vec![Vec::new(); g.n_nodes()];
    for (j, list) in nodes.iter().enumerate() {
        for &u in list {
            membership[u].push(j);
        }
    }
    if let Some(u) = membership.iter().position(Vec::is_empty) {
        return Err(Error::Contract(format!("node {u} is not covered by any patch")));
    }
    let edges = overlap_edges(&nodes, min_overlap.max(1));
    let max_overlap = edges.iter().map(|e| e.overlap.len()).max().unwrap_or(0);
    let patches = nodes
        .into_iter()
        .map(|list| Patch {
            graph: g.induced_subgraph(&list),
            nodes: list,
        })
        .collect();
    Ok((
        PatchSet { patches, membership },
        PatchGraph {
            k,
            edges,
            min_overlap,
            max_overlap,
        },
    ))
}

/// Conductance of a node set: cut edges over the smaller side's volume.
pub fn conductance(g: &Graph, in_set: &[bool]) -> f64 {
    let mut cut = 0usize;
    let mut vol_in = 0usize;
    for u in 0..g.n_nodes() {
        if in_set[u] {
            vol_in += g.degree(u);
            cut += g.neighbors(u).iter().filter(|&&v| !in_set[v]).count();
        }
    }
    let vol_out = 2 * g.n_edges() - vol_in;
    let denom = vol_in.min(vol_out);
    if denom == 0 {
        0.0
    } else {
        cut as f64 / denom as f64
    }
}
