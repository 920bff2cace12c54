//! Graph surgery: embedding a graph that is regular-tree-like outside a
//! finite core into a finite edge-edit of the tree itself.
//!
//! The defect invariant `nu = sum_x (q+1 - deg x) + 2 b_1` vanishes exactly
//! when the graph can be turned into the regular tree by finitely many edge
//! edits. Two elementary moves adjust it: attaching a pendant vertex to the
//! core shifts `nu` by `q - 1`, attaching a fresh q-ary end subtracts `1`.
//! After normalizing to `nu = 0`, the ball around the core is rewired into
//! a balanced tree with the same vertex set, producing a regular tree `T`
//! whose adjacency differs from the edited input by a finite signed edge
//! set: `A(edited) = A(T) + W` with `W` entries in `{-1, 0, +1}`. Removing
//! the move-attachment edges makes the original graph a connected component
//! of the edited one, so its spectral theory reduces to scattering by `W`
//! on the tree.

use crate::error::{Error, Result};
use crate::potential::NonlocalPotential;
use crate::scattering::Scatter;
use crate::surface::{SpectralParam, Surface};
use crate::tree::{FiniteGraph, GraphInput, RayClass, TruncatedTree, VertexId};
use num_complex::Complex64;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};

/// A graph given by its finite part: an arbitrary core plus declared end
/// roots, each implicitly continuing as an infinite q-ary tree.
#[derive(Debug, Clone)]
pub struct AsymptoticGraph {
    pub q: u32,
    pub graph: FiniteGraph,
    /// Dense ids of the end roots.
    pub end_roots: Vec<u32>,
}

impl AsymptoticGraph {
    pub fn from_input(input: &GraphInput, default_q: Option<u32>) -> Result<Self> {
        let q = input
            .q
            .or(default_q)
            .ok_or_else(|| Error::Format("no branching number q given".into()))?;
        let g = AsymptoticGraph {
            q,
            graph: input.graph.clone(),
            end_roots: input.end_roots.clone(),
        };
        g.validate()?;
        if let Some(gamma0) = &input.gamma0 {
            // a marked core must be exactly the non-root vertices
            let declared: BTreeSet<u32> = gamma0.iter().copied().collect();
            let computed: BTreeSet<u32> = g.core_vertices().into_iter().collect();
            if declared != computed {
                return Err(Error::InvalidStructure(
                    "marked gamma0 does not match the complement of the end roots".into(),
                ));
            }
        }
        Ok(g)
    }

    /// Core vertices: everything that is not an end root.
    pub fn core_vertices(&self) -> Vec<u32> {
        (0..self.graph.vertex_count() as u32)
            .filter(|v| !self.end_roots.contains(v))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.q < 2 {
            return Err(Error::InvalidStructure(format!("q = {}", self.q)));
        }
        if !self.graph.is_connected() {
            return Err(Error::InvalidStructure("input graph disconnected".into()));
        }
        if self.end_roots.is_empty() {
            return Err(Error::InvalidStructure(
                "an asymptotic graph needs at least one end".into(),
            ));
        }
        let roots: BTreeSet<u32> = self.end_roots.iter().copied().collect();
        if roots.len() != self.end_roots.len() {
            return Err(Error::InvalidStructure("duplicate end root".into()));
        }
        let core = self.core_vertices();
        if core.is_empty() {
            return Err(Error::InvalidStructure("empty core".into()));
        }
        for &r in &self.end_roots {
            if self.graph.degree(r) == 0 {
                return Err(Error::InvalidStructure(format!(
                    "end root {r} not linked to the core"
                )));
            }
            for &nb in self.graph.neighbors(r) {
                if roots.contains(&nb) {
                    return Err(Error::InvalidStructure(format!(
                        "end roots {r} and {nb} adjacent; ends must be disjoint trees"
                    )));
                }
            }
        }
        // the core alone must stay connected (it is the Gamma_0 of the
        // definition)
        let keep: Vec<i64> = core
            .iter()
            .map(|&v| self.graph.labels[v as usize])
            .collect();
        let index_of: BTreeMap<u32, u32> = core
            .iter()
            .enumerate()
            .map(|(i, &v)| (v, i as u32))
            .collect();
        let mut edges = Vec::new();
        for &(a, b) in &self.graph.edges {
            if let (Some(&ia), Some(&ib)) = (index_of.get(&a), index_of.get(&b)) {
                edges.push((ia, ib));
            }
        }
        let core_graph = FiniteGraph::from_parts(keep, edges)?;
        if !core_graph.is_connected() {
            return Err(Error::InvalidStructure("core disconnected".into()));
        }
        Ok(())
    }

    /// Degree in the infinite graph: end roots carry `q` tree children on
    /// top of their explicit edges.
    fn full_degree(&self, v: u32) -> usize {
        self.graph.degree(v)
            + if self.end_roots.contains(&v) {
                self.q as usize
            } else {
                0
            }
    }

    /// The defect invariant from its definition,
    /// `nu = sum_x (q+1 - deg x) + 2 b_1`; only finitely many vertices
    /// contribute.
    pub fn nu(&self) -> Result<i64> {
        let q = self.q as i64;
        let b1 = self.graph.betti()?;
        let mut total = 2 * b1;
        for v in 0..self.graph.vertex_count() as u32 {
            total += q + 1 - self.full_degree(v) as i64;
        }
        Ok(total)
    }

    /// Attach a pendant vertex to the lowest-id core vertex
    /// (`nu += q - 1`). Returns the new edge.
    pub fn move_m1(&mut self) -> (u32, u32) {
        let attach = self.core_vertices()[0];
        let new_id = self.graph.vertex_count() as u32;
        let new_label = self.graph.labels.iter().max().unwrap() + 1;
        let mut labels = self.graph.labels.clone();
        labels.push(new_label);
        let mut edges = self.graph.edges.clone();
        edges.push((attach, new_id));
        self.graph = FiniteGraph::from_parts(labels, edges).expect("valid extension");
        (attach, new_id)
    }

    /// Attach a fresh q-ary end to the lowest-id core vertex (`nu -= 1`).
    /// Returns the new edge.
    pub fn move_m2(&mut self) -> (u32, u32) {
        let attach = self.core_vertices()[0];
        let new_id = self.graph.vertex_count() as u32;
        let new_label = self.graph.labels.iter().max().unwrap() + 1;
        let mut labels = self.graph.labels.clone();
        labels.push(new_label);
        let mut edges = self.graph.edges.clone();
        edges.push((attach, new_id));
        self.graph = FiniteGraph::from_parts(labels, edges).expect("valid extension");
        self.end_roots.push(new_id);
        (attach, new_id)
    }
}

/// The finite part of the infinite graph, with every end grown `depth`
/// levels below its root.
#[derive(Debug, Clone)]
pub struct Materialized {
    pub q: u32,
    pub adj: Vec<Vec<u32>>,
    /// Input dense id for input vertices, `None` for grown end vertices.
    pub origin: Vec<Option<u32>>,
    pub dist_core: Vec<u32>,
    /// Deepest grown vertices; their tree children are cut off.
    pub frontier: Vec<bool>,
}

impl Materialized {
    pub fn vertex_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_set(&self) -> BTreeSet<(u32, u32)> {
        let mut out = BTreeSet::new();
        for (v, nbs) in self.adj.iter().enumerate() {
            for &w in nbs {
                out.insert((w.min(v as u32), w.max(v as u32)));
            }
        }
        out
    }
}

/// Grow the ends of `g` to `depth` levels below their roots.
pub fn materialize(g: &AsymptoticGraph, depth: u32) -> Materialized {
    let n0 = g.graph.vertex_count();
    let mut adj: Vec<Vec<u32>> = (0..n0)
        .map(|v| g.graph.neighbors(v as u32).to_vec())
        .collect();
    let mut origin: Vec<Option<u32>> = (0..n0).map(|v| Some(v as u32)).collect();
    let mut frontier = vec![false; n0];
    let mut level: Vec<u32> = g.end_roots.clone();
    for step in 0..depth {
        let mut next = Vec::new();
        for &v in &level {
            for _ in 0..g.q {
                let c = adj.len() as u32;
                adj.push(vec![v]);
                adj[v as usize].push(c);
                origin.push(None);
                frontier.push(step + 1 == depth);
                next.push(c);
            }
        }
        level = next;
    }
    // distances from the core by multi-source BFS
    let core: BTreeSet<u32> = g.core_vertices().into_iter().collect();
    let mut dist = vec![u32::MAX; adj.len()];
    let mut queue = std::collections::VecDeque::new();
    for &c in &core {
        dist[c as usize] = 0;
        queue.push_back(c);
    }
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v as usize] {
            if dist[w as usize] == u32::MAX {
                dist[w as usize] = dist[v as usize] + 1;
                queue.push_back(w);
            }
        }
    }
    Materialized {
        q: g.q,
        adj,
        origin,
        dist_core: dist,
        frontier,
    }
}

/// Ball counts for the second `nu` route: `m` inner and `M` boundary
/// vertices of `B_r`, valid only when every boundary vertex has exactly one
/// neighbor inside and `q` outside and the ball is connected.
pub fn ball_counts(mat: &Materialized, r: u32) -> Result<(i64, i64)> {
    let n = mat.vertex_count();
    let inside: Vec<bool> = (0..n).map(|v| mat.dist_core[v] <= r).collect();
    if (0..n).any(|v| inside[v] && mat.frontier[v]) {
        return Err(Error::DepthInsufficient(format!(
            "ball radius {r} reaches the materialization frontier"
        )));
    }
    let mut m = 0i64;
    let mut big_m = 0i64;
    for v in 0..n {
        if !inside[v] {
            continue;
        }
        let outside_nbs = mat.adj[v].iter().filter(|&&w| !inside[w as usize]).count();
        let inside_nbs = mat.adj[v].len() - outside_nbs;
        if outside_nbs == 0 {
            m += 1;
        } else {
            if outside_nbs != mat.q as usize || inside_nbs != 1 {
                return Err(Error::InvalidStructure(format!(
                    "radius {r}: boundary vertex {v} has {inside_nbs} inside / {outside_nbs} outside neighbors"
                )));
            }
            big_m += 1;
        }
    }
    // connectivity of the induced ball
    let start = (0..n)
        .find(|&v| inside[v])
        .ok_or_else(|| Error::InvalidStructure("empty ball".into()))?;
    let mut seen = vec![false; n];
    seen[start] = true;
    let mut stack = vec![start as u32];
    let mut count = 1i64;
    while let Some(v) = stack.pop() {
        for &w in &mat.adj[v as usize] {
            if inside[w as usize] && !seen[w as usize] {
                seen[w as usize] = true;
                count += 1;
                stack.push(w);
            }
        }
    }
    if count != m + big_m {
        return Err(Error::InvalidStructure(format!(
            "ball of radius {r} is disconnected"
        )));
    }
    Ok((m, big_m))
}

/// `nu = (q-1) m - M + 2` from the ball counts.
pub fn nu_from_ball(mat: &Materialized, r: u32) -> Result<i64> {
    let (m, big_m) = ball_counts(mat, r)?;
    Ok((mat.q as i64 - 1) * m - big_m + 2)
}

/// Smallest radius for which the ball counts are valid.
pub fn minimal_valid_radius(mat: &Materialized) -> Result<u32> {
    for r in 1..=2 {
        if ball_counts(mat, r).is_ok() {
            return Ok(r);
        }
    }
    Err(Error::InvalidStructure(
        "no valid ball radius; input violates the asymptotic-graph shape".into(),
    ))
}

/// A finite tree with all inner vertices of degree `q+1` and `M = 2 + (q-1)m`
/// leaves, built by repeatedly promoting the oldest leaf.
pub struct BalancedTree {
    pub graph: FiniteGraph,
    /// Inner vertices in creation order (the first is the root).
    pub inner: Vec<u32>,
    /// Leaves in creation order.
    pub leaves: Vec<u32>,
}

pub fn balanced_tree(q: u32, m: u32) -> Result<BalancedTree> {
    if m < 1 {
        return Err(Error::InvalidParameter(format!("m = {m}, need m >= 1")));
    }
    let mut edges: Vec<(u32, u32)> = Vec::new();
    let mut next = 1u32;
    let mut inner = vec![0u32];
    let mut queue = std::collections::VecDeque::new();
    for _ in 0..=q {
        edges.push((0, next));
        queue.push_back(next);
        next += 1;
    }
    for _ in 1..m {
        let promoted = queue.pop_front().expect("leaves available");
        inner.push(promoted);
        for _ in 0..q {
            edges.push((promoted, next));
            queue.push_back(next);
            next += 1;
        }
    }
    let labels: Vec<i64> = (0..next as i64).collect();
    let graph = FiniteGraph::from_parts(labels, edges)?;
    Ok(BalancedTree {
        graph,
        inner,
        leaves: queue.into_iter().collect(),
    })
}

/// Outcome of rewiring the ball `B_r` of a `nu = 0` graph into a balanced
/// tree on the same vertices: the removed and added edges (materialized
/// indices) and the ball counts used.
pub struct RewireOutcome {
    pub removed: Vec<(u32, u32)>,
    pub added: Vec<(u32, u32)>,
    pub m: i64,
    pub big_m: i64,
    pub r: u32,
}

/// Replace the induced graph on `B_r` by a balanced tree keeping the same
/// vertex set: inner vertices (sorted) take the inner tree slots in
/// creation order, boundary vertices (sorted) take the leaves. Requires
/// `nu = 0`; the result, grafted onto the untouched outside, is
/// `(q+1)`-regular.
pub fn normalize_to_tree(mat: &Materialized, r: u32) -> Result<RewireOutcome> {
    let (m, big_m) = ball_counts(mat, r)?;
    let q = mat.q as i64;
    if (q - 1) * m - big_m + 2 != 0 {
        return Err(Error::PreconditionViolated(format!(
            "nu = {} != 0; normalize the graph first",
            (q - 1) * m - big_m + 2
        )));
    }
    let n = mat.vertex_count();
    let inside: Vec<bool> = (0..n).map(|v| mat.dist_core[v] <= r).collect();
    let mut inner_vs = Vec::new();
    let mut boundary_vs = Vec::new();
    for v in 0..n {
        if !inside[v] {
            continue;
        }
        if mat.adj[v].iter().all(|&w| inside[w as usize]) {
            inner_vs.push(v as u32);
        } else {
            boundary_vs.push(v as u32);
        }
    }
    let ft = balanced_tree(mat.q, m as u32)?;
    debug_assert_eq!(ft.inner.len(), inner_vs.len());
    debug_assert_eq!(ft.leaves.len(), boundary_vs.len());
    let mut slot: BTreeMap<u32, u32> = BTreeMap::new();
    for (&f, &v) in ft.inner.iter().zip(&inner_vs) {
        slot.insert(f, v);
    }
    for (&f, &v) in ft.leaves.iter().zip(&boundary_vs) {
        slot.insert(f, v);
    }
    let mut old_edges = BTreeSet::new();
    for v in 0..n {
        if !inside[v] {
            continue;
        }
        for &w in &mat.adj[v] {
            if inside[w as usize] {
                old_edges.insert((v.min(w as usize) as u32, (v as u32).max(w)));
            }
        }
    }
    let mut new_edges = BTreeSet::new();
    for &(a, b) in &ft.graph.edges {
        let (x, y) = (slot[&a], slot[&b]);
        new_edges.insert((x.min(y), x.max(y)));
    }
    Ok(RewireOutcome {
        removed: old_edges.difference(&new_edges).copied().collect(),
        added: new_edges.difference(&old_edges).copied().collect(),
        m,
        big_m,
        r,
    })
}

/// Everything the embedding produces: the move log, the canonical vertex
/// identification, the signed edge edits, the extracted potential, and the
/// component structure of the edited graph.
pub struct EmbeddingResult {
    pub q: u32,
    pub nu: i64,
    pub n_prime: u32,
    pub n_second: u32,
    pub m: i64,
    pub big_m: i64,
    pub r: u32,
    /// `nu` after each move, ending at zero.
    pub nu_trace: Vec<i64>,
    /// Input vertex label -> canonical tree id.
    pub bijection: Vec<(i64, u32)>,
    /// Edge edits in canonical ids: tree edges missing from the edited
    /// graph and non-tree edges present in it.
    pub removed_edges: Vec<(u32, u32)>,
    pub added_edges: Vec<(u32, u32)>,
    /// `A(edited) - A0` as a potential on the canonical tree.
    pub w: NonlocalPotential,
    /// Components of the edited graph in canonical ids (materialized part).
    pub components: Vec<Vec<u32>>,
    /// Index of the component holding the original graph.
    pub gamma_component: usize,
    /// Canonical depth to which every ball vertex is materialized.
    pub usable_depth: u32,
}

#[derive(Serialize)]
struct EmbeddingJson {
    q: u32,
    nu: i64,
    n_prime: u32,
    n_second: u32,
    m: i64,
    big_m: i64,
    r: u32,
    nu_trace: Vec<i64>,
    bijection: Vec<(i64, u32)>,
    removed_edges: Vec<(u32, u32)>,
    added_edges: Vec<(u32, u32)>,
    w_entries: Vec<(u32, u32, f64, f64)>,
    component_sizes: Vec<usize>,
    gamma_component: usize,
    usable_depth: u32,
}

impl EmbeddingResult {
    pub fn to_json(&self) -> String {
        let doc = EmbeddingJson {
            q: self.q,
            nu: self.nu,
            n_prime: self.n_prime,
            n_second: self.n_second,
            m: self.m,
            big_m: self.big_m,
            r: self.r,
            nu_trace: self.nu_trace.clone(),
            bijection: self.bijection.clone(),
            removed_edges: self.removed_edges.clone(),
            added_edges: self.added_edges.clone(),
            w_entries: self
                .w
                .upper_triangle()
                .map(|(x, y, v)| (x, y, v.re, v.im))
                .collect(),
            component_sizes: self.components.iter().map(|c| c.len()).collect(),
            gamma_component: self.gamma_component,
            usable_depth: self.usable_depth,
        };
        serde_json::to_string_pretty(&doc).expect("serializable")
    }
}

/// Decompose `nu = N'' - (q-1) N'` with both counts nonnegative and `N'`
/// minimal.
pub fn move_counts(q: u32, nu: i64) -> (u32, u32) {
    let qm1 = q as i64 - 1;
    let n_prime = if nu >= 0 { 0 } else { (-nu + qm1 - 1) / qm1 };
    let n_second = nu + qm1 * n_prime;
    debug_assert!(n_second >= 0);
    (n_prime as u32, n_second as u32)
}

/// The full pipeline: validate, measure `nu` by both routes, normalize with
/// the two moves, rewire the ball, identify the result with the canonical
/// tree, and extract `W`.
pub fn embed(g: &AsymptoticGraph, depth: u32) -> Result<EmbeddingResult> {
    g.validate()?;
    let q = g.q;
    let nu = g.nu()?;
    {
        // both nu routes must agree exactly before any surgery
        let mat = materialize(g, depth.max(4));
        let r0 = minimal_valid_radius(&mat)?;
        let by_ball = nu_from_ball(&mat, r0)?;
        if by_ball != nu {
            return Err(Error::InvalidStructure(format!(
                "nu mismatch: degree sum gives {nu}, ball count gives {by_ball}"
            )));
        }
    }
    let (n_prime, n_second) = move_counts(q, nu);
    let mut edited = g.clone();
    let mut attach_edges = Vec::new();
    let mut nu_trace = vec![nu];
    for _ in 0..n_prime {
        attach_edges.push(edited.move_m1());
        nu_trace.push(edited.nu()?);
    }
    for _ in 0..n_second {
        attach_edges.push(edited.move_m2());
        nu_trace.push(edited.nu()?);
    }
    if *nu_trace.last().unwrap() != 0 {
        return Err(Error::InvalidStructure(format!(
            "moves did not normalize nu: trace {nu_trace:?}"
        )));
    }

    let mat = materialize(&edited, depth);
    let r = minimal_valid_radius(&mat)?;
    let rewire = normalize_to_tree(&mat, r)?;

    // the regular tree after rewiring
    let mut tree_adj: Vec<BTreeSet<u32>> = mat
        .adj
        .iter()
        .map(|nbs| nbs.iter().copied().collect())
        .collect();
    for &(a, b) in &rewire.removed {
        tree_adj[a as usize].remove(&b);
        tree_adj[b as usize].remove(&a);
    }
    for &(a, b) in &rewire.added {
        tree_adj[a as usize].insert(b);
        tree_adj[b as usize].insert(a);
    }
    let n = mat.vertex_count();
    let edge_count: usize = tree_adj.iter().map(|s| s.len()).sum::<usize>() / 2;
    if edge_count != n - 1 {
        return Err(Error::InvalidStructure(
            "rewired graph is not a tree".into(),
        ));
    }
    for (v, adj_v) in tree_adj.iter().enumerate() {
        let deg = adj_v.len();
        let expect = if mat.frontier[v] { 1 } else { q as usize + 1 };
        if deg != expect {
            return Err(Error::InvalidStructure(format!(
                "rewired vertex {v} has degree {deg}, expected {expect}"
            )));
        }
    }

    // canonical identification: root at the vertex holding the balanced
    // tree's root (the smallest inner vertex), children ordered by
    // materialized index
    let root = {
        let inside: Vec<bool> = (0..n).map(|v| mat.dist_core[v] <= r).collect();
        (0..n)
            .find(|&v| inside[v] && mat.adj[v].iter().all(|&w| inside[w as usize]))
            .expect("inner vertex exists") as u32
    };
    let mut canon = vec![u32::MAX; n];
    let mut level_of = vec![u32::MAX; n];
    canon[root as usize] = 0;
    level_of[root as usize] = 0;
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        let d = level_of[v as usize];
        let mut kids: Vec<u32> = tree_adj[v as usize]
            .iter()
            .copied()
            .filter(|&w| canon[w as usize] == u32::MAX)
            .collect();
        kids.sort_unstable();
        let level_start = |lvl: u32| -> u32 {
            if lvl == 0 {
                0
            } else {
                TruncatedTree::vertex_count_for(q, lvl - 1) as u32
            }
        };
        for (slot, &c) in kids.iter().enumerate() {
            let id = if v == root {
                1 + slot as u32
            } else {
                level_start(d + 1) + (canon[v as usize] - level_start(d)) * q + slot as u32
            };
            canon[c as usize] = id;
            level_of[c as usize] = d + 1;
            queue.push_back(c);
        }
    }

    let usable_depth = (0..n)
        .filter(|&v| mat.frontier[v])
        .map(|v| level_of[v])
        .min()
        .ok_or_else(|| Error::InvalidStructure("no ends materialized".into()))?;

    // edited graph = materialized edges minus the attachment edges
    let mut edited_edges = mat.edge_set();
    for &(a, b) in &attach_edges {
        edited_edges.remove(&(a.min(b), a.max(b)));
    }
    let mut tree_edges = BTreeSet::new();
    for (v, adj_v) in tree_adj.iter().enumerate() {
        for &w in adj_v {
            tree_edges.insert(((v as u32).min(w), (v as u32).max(w)));
        }
    }
    let to_canon = |&(a, b): &(u32, u32)| -> (u32, u32) {
        let (x, y) = (canon[a as usize], canon[b as usize]);
        (x.min(y), x.max(y))
    };
    let mut w_entries = Vec::new();
    let mut added_edges = Vec::new();
    let mut removed_edges = Vec::new();
    for e in edited_edges.difference(&tree_edges) {
        let (x, y) = to_canon(e);
        w_entries.push((x, y, Complex64::ONE));
        added_edges.push((x, y));
    }
    for e in tree_edges.difference(&edited_edges) {
        let (x, y) = to_canon(e);
        w_entries.push((x, y, -Complex64::ONE));
        removed_edges.push((x, y));
    }
    added_edges.sort_unstable();
    removed_edges.sort_unstable();
    let w = NonlocalPotential::from_entries(w_entries)?;

    // components of the edited graph, in canonical ids
    let mut comp = vec![usize::MAX; n];
    let mut components: Vec<Vec<u32>> = Vec::new();
    let mut edited_adj: Vec<Vec<u32>> = vec![Vec::new(); n];
    for &(a, b) in &edited_edges {
        edited_adj[a as usize].push(b);
        edited_adj[b as usize].push(a);
    }
    for v in 0..n {
        if comp[v] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut members = Vec::new();
        let mut stack = vec![v as u32];
        comp[v] = id;
        while let Some(u) = stack.pop() {
            members.push(canon[u as usize]);
            for &w2 in &edited_adj[u as usize] {
                if comp[w2 as usize] == usize::MAX {
                    comp[w2 as usize] = id;
                    stack.push(w2);
                }
            }
        }
        members.sort_unstable();
        components.push(members);
    }
    let gamma_component = comp[0];

    // certificate: an explicit isomorphism from the original graph (with
    // its materialized ends) onto the component of the edited graph that
    // holds the input vertices
    certify_component(g, depth, &mat, &edited_edges, &comp, gamma_component)?;

    let bijection = (0..g.graph.vertex_count())
        .map(|v| (g.graph.labels[v], canon[v]))
        .collect();

    Ok(EmbeddingResult {
        q,
        nu,
        n_prime,
        n_second,
        m: rewire.m,
        big_m: rewire.big_m,
        r,
        nu_trace,
        bijection,
        removed_edges,
        added_edges,
        w,
        components,
        gamma_component,
        usable_depth,
    })
}

/// Map the original materialization into the edited one (input vertices by
/// identity, end trees by parallel breadth-first descent) and verify that
/// the image is exactly one connected component, edge for edge.
fn certify_component(
    g: &AsymptoticGraph,
    depth: u32,
    edited_mat: &Materialized,
    edited_edges: &BTreeSet<(u32, u32)>,
    comp: &[usize],
    gamma_component: usize,
) -> Result<()> {
    let orig = materialize(g, depth);
    let fail = |msg: String| {
        Err(Error::InvalidStructure(format!(
            "component certificate: {msg}"
        )))
    };
    let mut map = vec![u32::MAX; orig.vertex_count()];
    for v in 0..g.graph.vertex_count() as u32 {
        map[v as usize] = v; // input part keeps its indices in the edited graph
    }
    // grown end vertices: children are appended in creation order in both
    // materializations, so parallel BFS from each original root matches them
    let mut queue: std::collections::VecDeque<(u32, u32)> =
        g.end_roots.iter().map(|&r| (r, r)).collect();
    let grown_children = |mat: &Materialized, v: u32, parent_dist: u32| -> Vec<u32> {
        mat.adj[v as usize]
            .iter()
            .copied()
            .filter(|&w| {
                mat.origin[w as usize].is_none() && mat.dist_core[w as usize] > parent_dist
            })
            .collect()
    };
    while let Some((ov, ev)) = queue.pop_front() {
        let oc = grown_children(&orig, ov, orig.dist_core[ov as usize]);
        let ec = grown_children(edited_mat, ev, edited_mat.dist_core[ev as usize]);
        if oc.len() != ec.len() {
            return fail(format!("end branching mismatch at {ov}"));
        }
        for (&a, &b) in oc.iter().zip(&ec) {
            map[a as usize] = b;
            queue.push_back((a, b));
        }
    }
    if map.contains(&u32::MAX) {
        return fail("incomplete vertex map".into());
    }
    let image: BTreeSet<u32> = map.iter().copied().collect();
    if image.len() != map.len() {
        return fail("vertex map not injective".into());
    }
    let component: BTreeSet<u32> = (0..edited_mat.vertex_count() as u32)
        .filter(|&v| comp[v as usize] == gamma_component)
        .collect();
    if image != component {
        return fail(format!(
            "image has {} vertices, component has {}",
            image.len(),
            component.len()
        ));
    }
    let mapped_edges: BTreeSet<(u32, u32)> = orig
        .edge_set()
        .iter()
        .map(|&(a, b)| {
            let (x, y) = (map[a as usize], map[b as usize]);
            (x.min(y), x.max(y))
        })
        .collect();
    let component_edges: BTreeSet<(u32, u32)> = edited_edges
        .iter()
        .copied()
        .filter(|&(a, b)| component.contains(&a) && component.contains(&b))
        .collect();
    if mapped_edges != component_edges {
        return fail(format!(
            "{} mapped edges vs {} component edges",
            mapped_edges.len(),
            component_edges.len()
        ));
    }
    Ok(())
}

/// Verify `A0 + W = A(edited graph)` entry by entry on the materialized
/// region, in exact integers.
pub fn verify_adjacency_identity(result: &EmbeddingResult, tree: &TruncatedTree) -> Result<()> {
    // edited = tree + added - removed: check every edit is consistent and
    // the potential matches
    for &(a, b) in &result.added_edges {
        if result.w.entry(VertexId(a), VertexId(b)) != Complex64::ONE {
            return Err(Error::InvalidStructure(format!(
                "added edge ({a},{b}) not a +1 entry of W"
            )));
        }
        if tree.distance(VertexId(a), VertexId(b))? == 1 {
            return Err(Error::InvalidStructure(format!(
                "added edge ({a},{b}) already a tree edge"
            )));
        }
    }
    for &(a, b) in &result.removed_edges {
        if result.w.entry(VertexId(a), VertexId(b)) != -Complex64::ONE {
            return Err(Error::InvalidStructure(format!(
                "removed edge ({a},{b}) not a -1 entry of W"
            )));
        }
        if tree.distance(VertexId(a), VertexId(b))? != 1 {
            return Err(Error::InvalidStructure(format!(
                "removed edge ({a},{b}) is not a tree edge"
            )));
        }
    }
    let count = result.added_edges.len() + result.removed_edges.len();
    if result.w.upper_triangle().count() != count {
        return Err(Error::InvalidStructure(
            "W carries entries beyond the edge edits".into(),
        ));
    }
    Ok(())
}

/// Leakage report for the support of scattering waves across components.
#[derive(Debug, Clone, Copy)]
pub struct SupportReport {
    /// Max |e(x)| over foreign-component vertices, incoming rays in the
    /// original graph's ends.
    pub leak_out: f64,
    /// Max |e(x)| over original-component vertices, incoming rays in
    /// foreign ends.
    pub leak_in: f64,
    pub samples: usize,
}

/// For rays in the original component's ends the wave must vanish on every
/// other component, and conversely. Exercises `ls_solve` across the whole
/// embedding.
pub fn component_support_check(
    result: &EmbeddingResult,
    tree: &TruncatedTree,
    s_values: &[f64],
) -> Result<SupportReport> {
    let surf = Surface::new(result.q)?;
    let scat = Scatter::new(tree, surf, &result.w)?;
    if result.usable_depth < tree.depth() {
        return Err(Error::DepthInsufficient(format!(
            "component data only to canonical depth {}, tree has {}",
            result.usable_depth,
            tree.depth()
        )));
    }
    let comp_of = |v: u32| -> Option<usize> {
        result
            .components
            .iter()
            .position(|c| c.binary_search(&v).is_ok())
    };
    // one representative ray per component with boundary presence
    let mut rep_rays: BTreeMap<usize, RayClass> = BTreeMap::new();
    for omega in tree.boundary_cylinders() {
        if let Some(c) = comp_of(omega.cylinder.0) {
            rep_rays.entry(c).or_insert(omega);
        }
    }
    // sample vertices per component (shallow ones, within depth bounds)
    let sample_vertices = |c: usize| -> Vec<VertexId> {
        result.components[c]
            .iter()
            .copied()
            .map(VertexId)
            .filter(|&v| tree.contains(v) && tree.depth_of(v) + 1 < tree.depth())
            .take(40)
            .collect()
    };
    let mut leak_out: f64 = 0.0;
    let mut leak_in: f64 = 0.0;
    let mut samples = 0;
    for &sre in s_values {
        let fac = match scat.ls_factor(SpectralParam::real(sre)) {
            Ok(f) => f,
            Err(Error::ExceptionalParameter(_)) => continue,
            Err(e) => return Err(e),
        };
        for (&c, ray) in &rep_rays {
            let sol = fac.solve(ray)?;
            for other in 0..result.components.len() {
                if other == c {
                    continue;
                }
                for x in sample_vertices(other) {
                    let v = sol.eval(tree, &scat.surf, x)?.norm();
                    samples += 1;
                    if c == result.gamma_component {
                        leak_out = leak_out.max(v);
                    } else if other == result.gamma_component {
                        leak_in = leak_in.max(v);
                    }
                }
            }
        }
    }
    Ok(SupportReport {
        leak_out,
        leak_in,
        samples,
    })
}
