//! Direct diagonalization oracles on the truncation: the radial reduction
//! of the root spectral measure, dense eigendecomposition, and a Lanczos
//! iteration for extremal eigenvalues of `A0 + W`.

use crate::error::Result;
use crate::potential::NonlocalPotential;
use crate::tree::TruncatedTree;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Spectral measure of the truncated tree at the root, as a finite atomic
/// measure `(lambda_j, weight_j)`. The Krylov space of the root vector is
/// spanned by the sphere averages, so the measure is exactly that of the
/// `(D+1) x (D+1)` radial Jacobi matrix with off-diagonals
/// `sqrt(q+1), sqrt(q), ..., sqrt(q)`.
pub fn root_atoms_radial(q: u32, depth: u32) -> Vec<(f64, f64)> {
    let n = depth as usize + 1;
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 0..n - 1 {
        let b = if k == 0 {
            (q as f64 + 1.0).sqrt()
        } else {
            (q as f64).sqrt()
        };
        j[(k, k + 1)] = b;
        j[(k + 1, k)] = b;
    }
    let eig = nalgebra::SymmetricEigen::new(j);
    let mut atoms: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    atoms
}

/// The same measure from a dense eigendecomposition of the whole truncated
/// adjacency matrix: weights `|v_j(root)|^2` aggregated over eigenvalue
/// clusters. Exact but cubic in the vertex count.
pub fn root_atoms_dense(tree: &TruncatedTree) -> Vec<(f64, f64)> {
    let n = tree.vertex_count();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for v in tree.vertices() {
        for &c in tree.children(v) {
            a[(v.index(), c as usize)] = 1.0;
            a[(c as usize, v.index())] = 1.0;
        }
    }
    let eig = nalgebra::SymmetricEigen::new(a);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // merge degenerate eigenvalues, then drop roundoff-level root weights
    let mut atoms: Vec<(f64, f64)> = Vec::new();
    for (lam, w) in pairs {
        match atoms.last_mut() {
            Some((l0, w0)) if (lam - *l0).abs() < 1e-8 => *w0 += w,
            _ => atoms.push((lam, w)),
        }
    }
    atoms.retain(|&(_, w)| w > 1e-12);
    atoms
}

/// Bin masses of an atomic measure over `[-edge, edge]`.
pub fn bin_masses(atoms: &[(f64, f64)], edge: f64, bins: usize) -> Vec<f64> {
    let width = 2.0 * edge / bins as f64;
    let mut out = vec![0.0; bins];
    for &(lam, w) in atoms {
        let idx = (((lam + edge) / width).floor() as isize).clamp(0, bins as isize - 1);
        out[idx as usize] += w;
    }
    out
}

/// Largest eigenvalue of `A0 + W` on the truncation by Hermitian Lanczos
/// with full reorthogonalization.
pub fn top_eigenvalue(tree: &TruncatedTree, w: &NonlocalPotential, steps: usize) -> Result<f64> {
    let n = tree.vertex_count();
    let matvec = |v: &DVector<Complex64>| -> DVector<Complex64> {
        let mut out = DVector::zeros(n);
        for u in tree.vertices() {
            let mut acc = Complex64::ZERO;
            if let Some(p) = tree.parent(u) {
                acc += v[p.index()];
            }
            for &c in tree.children(u) {
                acc += v[c as usize];
            }
            out[u.index()] = acc;
        }
        for &x in w.support() {
            let mut acc = Complex64::ZERO;
            for &y in w.support() {
                acc += w.entry(x, y) * v[y.index()];
            }
            out[x.index()] += acc;
        }
        out
    };

    // deterministic start vector with mass everywhere
    let mut v = DVector::from_fn(n, |i, _| {
        Complex64::new(1.0 + (i as f64 * 0.61803398875).fract(), 0.0)
    });
    v /= Complex64::new(v.norm(), 0.0);
    let m = steps.min(n);
    let mut basis: Vec<DVector<Complex64>> = vec![v.clone()];
    let mut alphas = Vec::with_capacity(m);
    let mut betas = Vec::new();
    for j in 0..m {
        let mut hv = matvec(&basis[j]);
        let alpha = basis[j].dotc(&hv).re;
        alphas.push(alpha);
        hv -= &basis[j] * Complex64::new(alpha, 0.0);
        if j > 0 {
            let beta_prev = betas[j - 1];
            hv -= &basis[j - 1] * Complex64::new(beta_prev, 0.0);
        }
        // full reorthogonalization
        for b in &basis {
            let c = b.dotc(&hv);
            hv -= b * c;
        }
        let beta = hv.norm();
        if beta < 1e-13 || j + 1 == m {
            break;
        }
        betas.push(beta);
        basis.push(hv / Complex64::new(beta, 0.0));
    }
    let k = alphas.len();
    let mut t = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alphas[i];
        if i + 1 < k {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = nalgebra::SymmetricEigen::new(t);
    Ok(eig.eigenvalues.iter().copied().fold(f64::MIN, f64::max))
}
