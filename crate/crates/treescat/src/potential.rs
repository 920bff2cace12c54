//! Finite Hermitian non-local potentials `W` on the tree, their minimal
//! support `K`, and the enlarged support whose complement has only infinite
//! components.

use crate::error::{Error, Result};
use crate::tree::{TruncatedTree, VertexId};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Hermitian matrix with finite support `K x K`, stored as its upper
/// triangle over canonical vertex ids.
#[derive(Debug, Clone, Default)]
pub struct NonlocalPotential {
    /// Upper-triangle entries keyed by `(x, y)` with `x <= y`.
    entries: BTreeMap<(u32, u32), Complex64>,
    /// Sorted minimal support: vertices appearing in some nonzero entry.
    support: Vec<VertexId>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PotentialJson {
    q: u32,
    entries: Vec<(u32, u32, f64, f64)>,
}

impl NonlocalPotential {
    pub fn zero() -> Self {
        NonlocalPotential::default()
    }

    /// Build from arbitrary (x, y, value) triples; Hermitian symmetry is
    /// enforced, conflicting duplicates are an error.
    pub fn from_entries(entries: impl IntoIterator<Item = (u32, u32, Complex64)>) -> Result<Self> {
        let mut map: BTreeMap<(u32, u32), Complex64> = BTreeMap::new();
        for (x, y, v) in entries {
            if v == Complex64::ZERO {
                continue;
            }
            let (key, val) = if x <= y {
                ((x, y), v)
            } else {
                ((y, x), v.conj())
            };
            if key.0 == key.1 && val.im.abs() > 1e-14 {
                return Err(Error::Format(format!(
                    "diagonal entry at {} not real: {val}",
                    key.0
                )));
            }
            if let Some(prev) = map.insert(key, val) {
                if (prev - val).norm() > 1e-14 {
                    return Err(Error::Format(format!(
                        "conflicting entries for ({}, {}): {prev} vs {val}",
                        key.0, key.1
                    )));
                }
            }
        }
        let mut support = BTreeSet::new();
        for &(x, y) in map.keys() {
            support.insert(x);
            support.insert(y);
        }
        Ok(NonlocalPotential {
            entries: map,
            support: support.into_iter().map(VertexId).collect(),
        })
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// Minimal support `K`, sorted by id.
    pub fn support(&self) -> &[VertexId] {
        &self.support
    }

    pub fn entry(&self, x: VertexId, y: VertexId) -> Complex64 {
        let key = (x.0.min(y.0), x.0.max(y.0));
        match self.entries.get(&key) {
            None => Complex64::ZERO,
            Some(&v) => {
                if x.0 <= y.0 {
                    v
                } else {
                    v.conj()
                }
            }
        }
    }

    pub fn upper_triangle(&self) -> impl Iterator<Item = (u32, u32, Complex64)> + '_ {
        self.entries.iter().map(|(&(x, y), &v)| (x, y, v))
    }

    /// Max depth of the support in a given truncation.
    pub fn max_depth(&self, tree: &TruncatedTree) -> u32 {
        self.support
            .iter()
            .map(|&v| tree.depth_of(v))
            .max()
            .unwrap_or(0)
    }

    /// Crude operator-norm bound: max absolute row sum on `K`.
    pub fn norm_bound(&self) -> f64 {
        let mut best: f64 = 0.0;
        for &x in &self.support {
            let row: f64 = self.support.iter().map(|&y| self.entry(x, y).norm()).sum();
            best = best.max(row);
        }
        best
    }

    /// `(W f)(x)` for a vector given on the support ordering.
    pub fn apply_on_support(&self, f: &[Complex64]) -> Vec<Complex64> {
        let k = &self.support;
        let mut out = vec![Complex64::ZERO; k.len()];
        for (i, &x) in k.iter().enumerate() {
            for (j, &y) in k.iter().enumerate() {
                let w = self.entry(x, y);
                if w != Complex64::ZERO {
                    out[i] += w * f[j];
                }
            }
        }
        out
    }

    /// Smallest `S` containing `K` such that every connected component of
    /// the tree minus `S` is infinite: absorb every component of the
    /// complement that does not reach the truncation boundary. Requires the
    /// support at depth `<= D - 2`.
    pub fn hat_k(&self, tree: &TruncatedTree) -> Result<Vec<VertexId>> {
        for &v in &self.support {
            if !tree.contains(v) {
                return Err(Error::InvalidParameter(format!(
                    "support vertex {} outside truncation",
                    v.0
                )));
            }
            if tree.depth_of(v) + 2 > tree.depth() {
                return Err(Error::DepthInsufficient(format!(
                    "support at depth {} needs D >= depth + 2 = {}",
                    tree.depth_of(v),
                    tree.depth_of(v) + 2
                )));
            }
        }
        hat_of_set(tree, &self.support)
    }

    pub fn to_json(&self, q: u32) -> String {
        let entries = self
            .entries
            .iter()
            .map(|(&(x, y), &v)| (x, y, v.re, v.im))
            .collect();
        serde_json::to_string_pretty(&PotentialJson { q, entries }).expect("serializable")
    }

    /// Parse the JSON format `{"q": .., "entries": [[x, y, re, im], ..]}`.
    /// Entries must describe the upper triangle (`x <= y`); a Hermiticity
    /// violation is a hard error, never silently symmetrized.
    pub fn from_json(text: &str) -> Result<(u32, Self)> {
        let raw: PotentialJson =
            serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if raw.q < 2 {
            return Err(Error::Format(format!("q = {}, need q >= 2", raw.q)));
        }
        let mut seen = BTreeSet::new();
        for &(x, y, _, im) in &raw.entries {
            if x > y {
                return Err(Error::Format(format!(
                    "entry ({x}, {y}) below the diagonal; store the upper triangle"
                )));
            }
            if x == y && im.abs() > 1e-14 {
                return Err(Error::Format(format!(
                    "hermiticity violated: diagonal entry at {x} has imaginary part {im}"
                )));
            }
            if !seen.insert((x, y)) {
                return Err(Error::Format(format!("duplicate entry ({x}, {y})")));
            }
        }
        let pot = Self::from_entries(
            raw.entries
                .iter()
                .map(|&(x, y, re, im)| (x, y, Complex64::new(re, im))),
        )?;
        Ok((raw.q, pot))
    }
}

/// Smallest superset of `set` whose complement in the tree has only
/// infinite components (components of the truncation complement are finite
/// exactly when they miss the boundary sphere).
pub fn hat_of_set(tree: &TruncatedTree, set: &[VertexId]) -> Result<Vec<VertexId>> {
    let n = tree.vertex_count();
    let mut blocked = vec![false; n];
    for &v in set {
        blocked[v.index()] = true;
    }
    let mut comp = vec![u32::MAX; n];
    let mut finite = Vec::new();
    let mut next = 0u32;
    for v in tree.vertices() {
        if blocked[v.index()] || comp[v.index()] != u32::MAX {
            continue;
        }
        let mut stack = vec![v];
        let mut members = Vec::new();
        let mut touches_boundary = false;
        comp[v.index()] = next;
        while let Some(u) = stack.pop() {
            members.push(u);
            if tree.depth_of(u) == tree.depth() {
                touches_boundary = true;
            }
            for w in tree.neighbors(u) {
                if !blocked[w.index()] && comp[w.index()] == u32::MAX {
                    comp[w.index()] = next;
                    stack.push(w);
                }
            }
        }
        if !touches_boundary {
            finite.push(members);
        }
        next += 1;
    }
    let mut out: BTreeSet<VertexId> = set.iter().copied().collect();
    for members in finite {
        out.extend(members);
    }
    Ok(out.into_iter().collect())
}

/// Dense matrix of an operator rule compressed to an ordered vertex set.
pub fn compress(
    rule: impl Fn(VertexId, VertexId) -> Complex64,
    k: &[VertexId],
) -> DMatrix<Complex64> {
    DMatrix::from_fn(k.len(), k.len(), |i, j| rule(k[i], k[j]))
}

/// The star potential: `W(x, O) = W(O, x) = -1` for every neighbor of the
/// root. Carries a compactly supported eigenfunction at energy zero.
pub fn star_potential(tree: &TruncatedTree) -> NonlocalPotential {
    let root = VertexId::ROOT;
    NonlocalPotential::from_entries(
        tree.neighbors(root)
            .into_iter()
            .map(|x| (root.0, x.0, Complex64::new(-1.0, 0.0))),
    )
    .expect("star potential is hermitian")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::free::green0;
    use crate::surface::{SpectralParam, Surface};

    #[test]
    fn hermiticity_and_support() {
        let w = NonlocalPotential::from_entries([
            (0, 1, Complex64::new(0.5, 0.25)),
            (2, 2, Complex64::new(-1.0, 0.0)),
        ])
        .unwrap();
        assert_eq!(w.support(), &[VertexId(0), VertexId(1), VertexId(2)]);
        assert_eq!(
            w.entry(VertexId(1), VertexId(0)),
            Complex64::new(0.5, -0.25)
        );
        assert_eq!(w.entry(VertexId(0), VertexId(1)), Complex64::new(0.5, 0.25));
        assert_eq!(w.entry(VertexId(0), VertexId(3)), Complex64::ZERO);
    }

    #[test]
    fn json_enforces_upper_triangle_and_hermiticity() {
        assert!(
            NonlocalPotential::from_json(r#"{"q": 2, "entries": [[1, 0, 1.0, 0.0]]}"#).is_err()
        );
        assert!(
            NonlocalPotential::from_json(r#"{"q": 2, "entries": [[1, 1, 1.0, 0.5]]}"#).is_err()
        );
        let (q, w) = NonlocalPotential::from_json(
            r#"{"q": 2, "entries": [[0, 1, -1.0, 0.0], [0, 2, 0.0, 0.5]]}"#,
        )
        .unwrap();
        assert_eq!(q, 2);
        assert_eq!(w.entry(VertexId(2), VertexId(0)), Complex64::new(0.0, -0.5));
        // round-trip through the writer
        let (_, again) = NonlocalPotential::from_json(&w.to_json(2)).unwrap();
        assert_eq!(
            again.entry(VertexId(0), VertexId(2)),
            Complex64::new(0.0, 0.5)
        );
    }

    #[test]
    fn hat_k_of_root_is_root() {
        let tree = TruncatedTree::new(2, 6).unwrap();
        let w = NonlocalPotential::from_entries([(0, 0, Complex64::ONE)]).unwrap();
        assert_eq!(w.hat_k(&tree).unwrap(), vec![VertexId::ROOT]);
    }

    #[test]
    fn hat_k_fills_in_the_surrounded_root() {
        // K = the q+1 neighbors of the root; the root alone is a finite
        // component of the complement and must be absorbed
        let tree = TruncatedTree::new(2, 6).unwrap();
        let star = star_potential(&tree);
        let k_only: Vec<VertexId> = tree
            .children(VertexId::ROOT)
            .iter()
            .map(|&c| VertexId(c))
            .collect();
        let hat = hat_of_set(&tree, &k_only).unwrap();
        let mut expect = k_only.clone();
        expect.insert(0, VertexId::ROOT);
        assert_eq!(hat, expect);
        // the star potential's own support already contains the root
        assert_eq!(star.hat_k(&tree).unwrap(), expect);
    }

    #[test]
    fn hat_k_brute_force_small() {
        // K = two vertices at distance 2 (root's grandchildren through one
        // child): enumerate supersets up to |K| + 3 and take the smallest
        // one whose complement has only infinite components
        let tree = TruncatedTree::new(2, 5).unwrap();
        let c0 = tree.children(VertexId::ROOT)[0];
        let g = tree.children(VertexId(c0)).to_vec();
        let k = vec![VertexId(g[0]), VertexId(g[1])];
        let got = hat_of_set(&tree, &k).unwrap();

        let all_infinite = |s: &Vec<VertexId>| -> bool {
            let blocked: std::collections::HashSet<_> = s.iter().copied().collect();
            let mut seen: std::collections::HashSet<VertexId> = blocked.clone();
            for v in tree.vertices() {
                if seen.contains(&v) {
                    continue;
                }
                let mut stack = vec![v];
                let mut comp = vec![];
                let mut touches = false;
                seen.insert(v);
                while let Some(u) = stack.pop() {
                    comp.push(u);
                    if tree.depth_of(u) == tree.depth() {
                        touches = true;
                    }
                    for w in tree.neighbors(u) {
                        if !blocked.contains(&w) && seen.insert(w) {
                            stack.push(w);
                        }
                    }
                }
                if !touches {
                    return false;
                }
            }
            true
        };
        let candidates: Vec<VertexId> =
            tree.vertices().filter(|&v| tree.depth_of(v) <= 4).collect();
        let mut best: Option<Vec<VertexId>> = None;
        // supersets of K of size at most |K| + 3
        for extra in 0..=3usize {
            combos(&candidates, extra, &mut |chosen| {
                let mut s: Vec<VertexId> = k.clone();
                s.extend_from_slice(chosen);
                s.sort();
                s.dedup();
                if s.len() != k.len() + chosen.len() {
                    return;
                }
                if all_infinite(&s) && best.as_ref().map_or(true, |b| s.len() < b.len()) {
                    best = Some(s);
                }
            });
            if best.is_some() {
                break;
            }
        }
        assert_eq!(got, best.unwrap());
    }

    fn combos(pool: &[VertexId], k: usize, f: &mut impl FnMut(&[VertexId])) {
        fn rec(
            pool: &[VertexId],
            k: usize,
            start: usize,
            cur: &mut Vec<VertexId>,
            f: &mut impl FnMut(&[VertexId]),
        ) {
            if cur.len() == k {
                f(cur);
                return;
            }
            for i in start..pool.len() {
                cur.push(pool[i]);
                rec(pool, k, i + 1, cur, f);
                cur.pop();
            }
        }
        rec(pool, k, 0, &mut Vec::new(), f);
    }

    #[test]
    fn hat_k_idempotent_and_depth_stable() {
        let tree6 = TruncatedTree::new(2, 6).unwrap();
        let tree8 = TruncatedTree::new(2, 8).unwrap();
        let star = star_potential(&tree6);
        let hat6 = star.hat_k(&tree6).unwrap();
        let hat8 = star.hat_k(&tree8).unwrap();
        assert_eq!(hat6, hat8);
        // a potential already supported on hat(K) x hat(K) maps to itself
        let filled =
            NonlocalPotential::from_entries(hat6.iter().map(|&v| (v.0, v.0, Complex64::ONE)))
                .unwrap();
        assert_eq!(filled.hat_k(&tree6).unwrap(), hat6);
    }

    #[test]
    fn compress_identity_and_green_times_w() {
        let tree = TruncatedTree::new(2, 5).unwrap();
        let surf = Surface::new(2).unwrap();
        let k = vec![VertexId::ROOT, VertexId(1)];
        let id = compress(
            |x, y| {
                if x == y {
                    Complex64::ONE
                } else {
                    Complex64::ZERO
                }
            },
            &k,
        );
        assert_eq!(id, DMatrix::identity(2, 2));

        // G0(s) W on a two-point support, entry by entry from the closed form
        let w = NonlocalPotential::from_entries([(0, 1, Complex64::new(2.0, 0.0))]).unwrap();
        let s = SpectralParam::complex(0.3, 0.6);
        let m = compress(
            |x, y| {
                k.iter()
                    .map(|&z| {
                        green0(&surf, s, tree.distance(x, z).unwrap()).unwrap() * w.entry(z, y)
                    })
                    .sum()
            },
            &k,
        );
        let g0 = green0(&surf, s, 0).unwrap();
        let g1 = green0(&surf, s, 1).unwrap();
        let wv = Complex64::new(2.0, 0.0);
        // rows are x in K, columns y in K; W couples the two vertices only
        assert!((m[(0, 0)] - g1 * wv).norm() < 1e-14);
        assert!((m[(0, 1)] - g0 * wv).norm() < 1e-14);
        assert!((m[(1, 0)] - g0 * wv).norm() < 1e-14);
        assert!((m[(1, 1)] - g1 * wv).norm() < 1e-14);

        // compress(W) is hermitian
        let wm = compress(|x, y| w.entry(x, y), &k);
        assert_eq!(wm.adjoint(), wm);
    }
}
