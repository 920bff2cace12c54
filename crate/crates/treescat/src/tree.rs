//! Finite truncations of the regular tree `T_q` and generic finite graphs.
//!
//! The infinite (q+1)-regular tree is represented by its ball of radius `D`
//! around a root `O`. Vertices are addressed by words over child indices
//! (the root has q+1 children, every other vertex q), assigned in
//! breadth-first order so that the dense id of a vertex does not depend on
//! the truncation depth. Boundary vertices at depth `D` stand for the
//! cylinder sets of rays to infinity; each carries the exact weight
//! `1/((q+1) q^(D-1))` of the rotation-invariant measure on the boundary.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Dense index of a vertex in a [`TruncatedTree`] (breadth-first order,
/// root = 0). Ids are stable across truncation depths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VertexId(pub u32);

impl VertexId {
    pub const ROOT: VertexId = VertexId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Depth-`D` ball of the (q+1)-regular tree.
#[derive(Debug, Clone)]
pub struct TruncatedTree {
    q: u32,
    depth: u32,
    parent: Vec<u32>,
    depth_of: Vec<u32>,
    /// Child lists in address order; empty for depth-D vertices.
    children: Vec<Vec<u32>>,
}

impl TruncatedTree {
    /// Breadth-first construction of the depth-`D` truncation.
    pub fn new(q: u32, depth: u32) -> Result<Self> {
        if q < 2 {
            return Err(Error::InvalidParameter(format!("q = {q}, need q >= 2")));
        }
        if depth < 1 {
            return Err(Error::InvalidParameter(format!(
                "depth = {depth}, need depth >= 1"
            )));
        }
        let count = Self::vertex_count_for(q, depth);
        let mut parent = vec![0u32; count];
        let mut depth_of = vec![0u32; count];
        let mut children: Vec<Vec<u32>> = vec![Vec::new(); count];

        let mut next = 1u32;
        for v in 0..count as u32 {
            let d = depth_of[v as usize];
            if d == depth {
                continue;
            }
            let fanout = if v == 0 { q + 1 } else { q };
            let mut kids = Vec::with_capacity(fanout as usize);
            for _ in 0..fanout {
                parent[next as usize] = v;
                depth_of[next as usize] = d + 1;
                kids.push(next);
                next += 1;
            }
            children[v as usize] = kids;
        }
        debug_assert_eq!(next as usize, count);

        Ok(TruncatedTree {
            q,
            depth,
            parent,
            depth_of,
            children,
        })
    }

    /// `1 + (q+1)(q^D - 1)/(q - 1)` vertices in the depth-`D` ball.
    pub fn vertex_count_for(q: u32, depth: u32) -> usize {
        let q = q as u128;
        let geom: u128 = (q.pow(depth) - 1) / (q - 1);
        (1 + (q + 1) * geom) as usize
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn vertex_count(&self) -> usize {
        self.parent.len()
    }

    pub fn vertices(&self) -> impl Iterator<Item = VertexId> + '_ {
        (0..self.vertex_count() as u32).map(VertexId)
    }

    pub fn contains(&self, v: VertexId) -> bool {
        v.index() < self.vertex_count()
    }

    pub fn depth_of(&self, v: VertexId) -> u32 {
        self.depth_of[v.index()]
    }

    pub fn parent(&self, v: VertexId) -> Option<VertexId> {
        if v == VertexId::ROOT {
            None
        } else {
            Some(VertexId(self.parent[v.index()]))
        }
    }

    pub fn children(&self, v: VertexId) -> &[u32] {
        &self.children[v.index()]
    }

    pub fn neighbors(&self, v: VertexId) -> Vec<VertexId> {
        let mut out = Vec::with_capacity(self.q as usize + 1);
        if let Some(p) = self.parent(v) {
            out.push(p);
        }
        out.extend(self.children(v).iter().map(|&c| VertexId(c)));
        out
    }

    /// Vertex is interior when its whole adjacency stencil lies in the ball.
    pub fn is_interior(&self, v: VertexId) -> bool {
        self.depth_of(v) < self.depth
    }

    /// Address word (child indices from the root).
    pub fn address(&self, v: VertexId) -> Vec<u32> {
        let mut word = Vec::with_capacity(self.depth_of(v) as usize);
        let mut cur = v;
        while let Some(p) = self.parent(cur) {
            let slot = self.children(p).iter().position(|&c| c == cur.0).unwrap();
            word.push(slot as u32);
            cur = p;
        }
        word.reverse();
        word
    }

    /// Inverse of [`address`](Self::address).
    pub fn vertex_at(&self, address: &[u32]) -> Result<VertexId> {
        let mut cur = VertexId::ROOT;
        for &slot in address {
            let kids = self.children(cur);
            let &next = kids.get(slot as usize).ok_or_else(|| {
                Error::InvalidParameter(format!("address {address:?} leaves the truncation"))
            })?;
            cur = VertexId(next);
        }
        Ok(cur)
    }

    fn check_vertex(&self, v: VertexId) -> Result<()> {
        if self.contains(v) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "vertex {} outside truncation of {} vertices",
                v.0,
                self.vertex_count()
            )))
        }
    }

    /// Deepest common ancestor of two vertices.
    pub fn common_ancestor(&self, x: VertexId, y: VertexId) -> VertexId {
        let (mut a, mut b) = (x, y);
        while self.depth_of(a) > self.depth_of(b) {
            a = self.parent(a).unwrap();
        }
        while self.depth_of(b) > self.depth_of(a) {
            b = self.parent(b).unwrap();
        }
        while a != b {
            a = self.parent(a).unwrap();
            b = self.parent(b).unwrap();
        }
        a
    }

    /// Combinatorial distance `d(x,y) = |x| + |y| - 2 |common prefix|`.
    pub fn distance(&self, x: VertexId, y: VertexId) -> Result<u32> {
        self.check_vertex(x)?;
        self.check_vertex(y)?;
        let a = self.common_ancestor(x, y);
        Ok(self.depth_of(x) + self.depth_of(y) - 2 * self.depth_of(a))
    }

    /// All depth-`D` cylinders, in address order. Their weights make up the
    /// exact uniform probability measure on the boundary at infinity.
    pub fn boundary_cylinders(&self) -> Vec<RayClass> {
        let first = self.vertex_count() - self.boundary_count();
        (first..self.vertex_count())
            .map(|i| RayClass {
                cylinder: VertexId(i as u32),
            })
            .collect()
    }

    /// `(q+1) q^(D-1)` boundary cylinders.
    pub fn boundary_count(&self) -> usize {
        (self.q as usize + 1) * (self.q as usize).pow(self.depth - 1)
    }

    /// Busemann value `b_w(x) = |x_w| - d(x, x_w)` where `x_w` is the last
    /// vertex of the ray `w` on the geodesic from the root to `x`. Requires
    /// `|x| + 1 < D` so neighboring values are cylinder-determined too.
    pub fn busemann(&self, omega: &RayClass, x: VertexId) -> Result<i64> {
        self.check_vertex(x)?;
        self.check_vertex(omega.cylinder)?;
        if self.depth_of(x) + 1 >= self.depth {
            return Err(Error::DepthInsufficient(format!(
                "busemann at depth {} needs |x| + 1 < D = {}",
                self.depth_of(x),
                self.depth
            )));
        }
        let meet = self.common_ancestor(x, omega.cylinder);
        Ok(2 * self.depth_of(meet) as i64 - self.depth_of(x) as i64)
    }

    /// Sphere `{x : |x| = k}` as a contiguous id range.
    pub fn sphere(&self, k: u32) -> Vec<VertexId> {
        self.vertices().filter(|&v| self.depth_of(v) == k).collect()
    }

    /// Ball `{x : |x| <= k}`; ids `0..count(k)` by BFS ordering.
    pub fn ball(&self, k: u32) -> Vec<VertexId> {
        (0..Self::vertex_count_for(self.q, k).min(self.vertex_count()))
            .map(|i| VertexId(i as u32))
            .collect()
    }
}

/// Boundary cylinder of the truncation: the class of rays through a fixed
/// depth-`D` vertex. Stands for a point at infinity in every quantity that
/// is constant on such cylinders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RayClass {
    pub cylinder: VertexId,
}

impl RayClass {
    /// Exact weight `1/((q+1) q^(D-1))` as a (numerator, denominator) pair.
    pub fn weight_exact(&self, tree: &TruncatedTree) -> (u64, u64) {
        (1, tree.boundary_count() as u64)
    }

    pub fn weight(&self, tree: &TruncatedTree) -> f64 {
        1.0 / tree.boundary_count() as f64
    }
}

/// A finite graph with arbitrary integer vertex labels, densely reindexed.
/// Used both for raw inputs and for the core of asymptotic graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteGraph {
    /// Original labels, indexed by dense id.
    pub labels: Vec<i64>,
    /// Symmetric edge list over dense ids, each stored once with a < b.
    pub edges: Vec<(u32, u32)>,
    adjacency: Vec<Vec<u32>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FiniteGraphJson {
    q: Option<u32>,
    vertices: Vec<i64>,
    edges: Vec<(i64, i64)>,
    #[serde(default)]
    gamma0: Option<Vec<i64>>,
    #[serde(default)]
    ends: Option<Vec<EndJson>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EndJson {
    root: i64,
}

/// Parsed graph input: the finite graph plus the optional markings used by
/// the surgery pipeline.
#[derive(Debug, Clone)]
pub struct GraphInput {
    pub q: Option<u32>,
    pub graph: FiniteGraph,
    /// Dense ids of the marked core, if given.
    pub gamma0: Option<Vec<u32>>,
    /// Dense ids of declared end roots.
    pub end_roots: Vec<u32>,
}

impl FiniteGraph {
    pub fn from_parts(labels: Vec<i64>, edges: Vec<(u32, u32)>) -> Result<Self> {
        let n = labels.len();
        let mut seen = std::collections::HashSet::new();
        let mut canonical = Vec::with_capacity(edges.len());
        for &(a, b) in &edges {
            if a as usize >= n || b as usize >= n {
                return Err(Error::InvalidStructure(format!(
                    "edge ({a},{b}) references unknown vertex"
                )));
            }
            if a == b {
                return Err(Error::InvalidStructure(format!("self-loop at {a}")));
            }
            let e = (a.min(b), a.max(b));
            if !seen.insert(e) {
                return Err(Error::InvalidStructure(format!("duplicate edge ({a},{b})")));
            }
            canonical.push(e);
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in &canonical {
            adjacency[a as usize].push(b);
            adjacency[b as usize].push(a);
        }
        Ok(FiniteGraph {
            labels,
            edges: canonical,
            adjacency,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.labels.len()
    }

    pub fn degree(&self, v: u32) -> usize {
        self.adjacency[v as usize].len()
    }

    pub fn neighbors(&self, v: u32) -> &[u32] {
        &self.adjacency[v as usize]
    }

    pub fn dense_id_of_label(&self, label: i64) -> Option<u32> {
        self.labels
            .iter()
            .position(|&l| l == label)
            .map(|i| i as u32)
    }

    pub fn is_connected(&self) -> bool {
        let n = self.vertex_count();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0u32];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &w in self.neighbors(v) {
                if !seen[w as usize] {
                    seen[w as usize] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == n
    }

    /// First Betti number `|E| - |V| + 1` of a connected graph.
    pub fn betti(&self) -> Result<i64> {
        if !self.is_connected() {
            return Err(Error::InvalidStructure(
                "betti number requested for a disconnected graph".into(),
            ));
        }
        Ok(self.edges.len() as i64 - self.vertex_count() as i64 + 1)
    }

    /// Parse the JSON input format: arbitrary integer vertex labels are
    /// reindexed densely, preserving their relative order through the label
    /// map stored on the result.
    pub fn parse_input(text: &str) -> Result<GraphInput> {
        let raw: FiniteGraphJson =
            serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        let mut index: HashMap<i64, u32> = HashMap::new();
        for (i, &label) in raw.vertices.iter().enumerate() {
            if index.insert(label, i as u32).is_some() {
                return Err(Error::Format(format!("duplicate vertex label {label}")));
            }
        }
        let resolve = |label: i64| -> Result<u32> {
            index
                .get(&label)
                .copied()
                .ok_or_else(|| Error::Format(format!("unknown vertex label {label}")))
        };
        let mut edges = Vec::with_capacity(raw.edges.len());
        for &(a, b) in &raw.edges {
            edges.push((resolve(a)?, resolve(b)?));
        }
        let graph = FiniteGraph::from_parts(raw.vertices.clone(), edges)?;
        let gamma0 = match raw.gamma0 {
            Some(labels) => Some(labels.iter().map(|&l| resolve(l)).collect::<Result<_>>()?),
            None => None,
        };
        let end_roots = match raw.ends {
            Some(ends) => ends
                .iter()
                .map(|e| resolve(e.root))
                .collect::<Result<_>>()?,
            None => Vec::new(),
        };
        Ok(GraphInput {
            q: raw.q,
            graph,
            gamma0,
            end_roots,
        })
    }
}
