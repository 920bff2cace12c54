//! Dirichlet-to-Neumann operators on finite graphs and the closed-form
//! transmission matrix they yield.
//!
//! For a symmetric matrix `B` supported on the edges and diagonal of a
//! finite graph with marked boundary, the interior Dirichlet problem
//! `(BF)(interior) = 0`, `F|boundary = f` has a unique solution when the
//! interior block is invertible, and `DN(f) = (BF)|boundary` is the Schur
//! complement of the interior block. Applying this to the ball `B_n` of the
//! tree with `B = A_n - lambda_s I` reduces the scattering problem to an
//! `L x L` boundary computation: the transmission matrix is
//! `tau = -alpha^(-2n) [ (1/C(s)) (DN_s + q^(1/2+is) I)^(-1) + A ]` with
//! `A(l,l') = alpha^(d(x_l, x_l'))` — a route to the transmission
//! coefficients completely independent of the wave-asymptotics one.

use crate::error::{Error, Result};
use crate::potential::NonlocalPotential;
use crate::surface::{SpectralParam, Surface};
use crate::tree::TruncatedTree;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// A finite boundary-value problem: matrix `B` over the vertices of a graph
/// with `b(i,j) = 0` for non-adjacent `i != j`, and a marked boundary.
pub struct BoundaryProblem {
    pub b: DMatrix<Complex64>,
    /// Indices (into `b`) of the boundary vertices.
    pub boundary: Vec<usize>,
    /// Complement of the boundary, in increasing order.
    pub interior: Vec<usize>,
}

impl BoundaryProblem {
    pub fn new(b: DMatrix<Complex64>, boundary: Vec<usize>) -> Result<Self> {
        if !b.is_square() {
            return Err(Error::InvalidParameter("B must be square".into()));
        }
        let n = b.nrows();
        for &i in &boundary {
            if i >= n {
                return Err(Error::InvalidParameter(format!(
                    "boundary index {i} out of range"
                )));
            }
        }
        let interior = (0..n).filter(|i| !boundary.contains(i)).collect();
        Ok(BoundaryProblem {
            b,
            boundary,
            interior,
        })
    }

    fn blocks(
        &self,
    ) -> (
        DMatrix<Complex64>,
        DMatrix<Complex64>,
        DMatrix<Complex64>,
        DMatrix<Complex64>,
    ) {
        let bi = &self.interior;
        let bd = &self.boundary;
        let pick = |rows: &Vec<usize>, cols: &Vec<usize>| {
            DMatrix::from_fn(rows.len(), cols.len(), |r, c| self.b[(rows[r], cols[c])])
        };
        (pick(bi, bi), pick(bi, bd), pick(bd, bi), pick(bd, bd))
    }

    /// Unique interior extension of boundary data: `F|boundary = f`,
    /// `(BF)(l) = 0` at interior vertices.
    pub fn dirichlet_solve(&self, f: &DVector<Complex64>) -> Result<DVector<Complex64>> {
        if f.len() != self.boundary.len() {
            return Err(Error::InvalidParameter(format!(
                "boundary data length {} vs boundary size {}",
                f.len(),
                self.boundary.len()
            )));
        }
        let (b00, b0d, _, _) = self.blocks();
        if b00.clone().singular_values().min() < 1e-10 {
            return Err(Error::DirichletSingular("interior block singular".into()));
        }
        let rhs = -&b0d * f;
        let interior_vals = b00
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::DirichletSingular("interior block singular".into()))?;
        let mut full = DVector::zeros(self.b.nrows());
        for (i, &idx) in self.interior.iter().enumerate() {
            full[idx] = interior_vals[i];
        }
        for (i, &idx) in self.boundary.iter().enumerate() {
            full[idx] = f[i];
        }
        Ok(full)
    }

    /// The Dirichlet-to-Neumann matrix, computed as the Schur complement
    /// `B_dd - B_d0 B_00^(-1) B_0d` of the interior block.
    pub fn dtn_operator(&self) -> Result<DMatrix<Complex64>> {
        let (b00, b0d, bd0, bdd) = self.blocks();
        if self.interior.is_empty() {
            return Ok(bdd);
        }
        if b00.clone().singular_values().min() < 1e-10 {
            return Err(Error::DirichletSingular("interior block singular".into()));
        }
        let x = b00
            .lu()
            .solve(&b0d)
            .ok_or_else(|| Error::DirichletSingular("interior block singular".into()))?;
        Ok(bdd - bd0 * x)
    }

    /// `DN` column by column through Dirichlet solves; agrees with the
    /// Schur complement and serves as its independent cross-check.
    pub fn dtn_by_columns(&self) -> Result<DMatrix<Complex64>> {
        let l = self.boundary.len();
        let mut dtn = DMatrix::zeros(l, l);
        for col in 0..l {
            let mut f = DVector::zeros(l);
            f[col] = Complex64::ONE;
            let ext = self.dirichlet_solve(&f)?;
            let bf = &self.b * &ext;
            for row in 0..l {
                dtn[(row, col)] = bf[self.boundary[row]];
            }
        }
        Ok(dtn)
    }
}

/// `A0 + W - lambda` on the ball of radius `n`, with the radius-`n` sphere
/// as boundary.
pub fn ball_problem(
    tree: &TruncatedTree,
    w: &NonlocalPotential,
    lambda: Complex64,
    n: u32,
) -> Result<BoundaryProblem> {
    if n + 1 > tree.depth() {
        return Err(Error::DepthInsufficient(format!(
            "ball of radius {n} needs a deeper truncation than {}",
            tree.depth()
        )));
    }
    let ball = tree.ball(n);
    let mut b = DMatrix::zeros(ball.len(), ball.len());
    for (i, &x) in ball.iter().enumerate() {
        for (j, &y) in ball.iter().enumerate() {
            let mut val = w.entry(x, y);
            if tree.distance(x, y)? == 1 {
                val += Complex64::ONE;
            }
            if i == j {
                val -= lambda;
            }
            b[(i, j)] = val;
        }
    }
    let boundary = ball
        .iter()
        .enumerate()
        .filter(|&(_, &v)| tree.depth_of(v) == n)
        .map(|(i, _)| i)
        .collect();
    BoundaryProblem::new(b, boundary)
}

/// Eigenvalues of the compression of `A0 + W` to the ball of radius `n-1`;
/// the Dirichlet problem on `B_n` degenerates exactly at these energies.
pub fn inner_ball_spectrum(
    tree: &TruncatedTree,
    w: &NonlocalPotential,
    n: u32,
) -> Result<Vec<f64>> {
    let ball = tree.ball(n - 1);
    let mut h = DMatrix::zeros(ball.len(), ball.len());
    for (i, &x) in ball.iter().enumerate() {
        for (j, &y) in ball.iter().enumerate() {
            let mut val = w.entry(x, y);
            if tree.distance(x, y)? == 1 {
                val += Complex64::ONE;
            }
            h[(i, j)] = val;
        }
    }
    let mut eigs: Vec<f64> = nalgebra::SymmetricEigen::new(h)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eigs.sort_by(f64::total_cmp);
    Ok(eigs)
}

/// Transmission matrix over the `L = (q+1) q^(n-1)` depth-`n` ends from the
/// Dirichlet-to-Neumann operator of the ball:
/// `tau(s) = -alpha^(-2n) [ (1/C(s)) (DN_s + q^(1/2+is) I)^(-1) + A ]`.
/// Requires `B_(n-2)` to contain the potential support and `lambda_s` off
/// the inner-ball spectrum.
pub fn tau_via_dtn(
    tree: &TruncatedTree,
    surf: &Surface,
    w: &NonlocalPotential,
    s: SpectralParam,
    n: u32,
) -> Result<DMatrix<Complex64>> {
    if n < 2 {
        return Err(Error::InvalidParameter("need n >= 2".into()));
    }
    if !w.is_zero() && w.max_depth(tree) + 2 > n {
        return Err(Error::InvalidParameter(format!(
            "potential reaches depth {}, so n >= {} is required",
            w.max_depth(tree),
            w.max_depth(tree) + 2
        )));
    }
    let lambda = surf.lambda(s);
    for mu in inner_ball_spectrum(tree, w, n)? {
        if (lambda - Complex64::new(mu, 0.0)).norm() < 1e-9 {
            return Err(Error::DirichletSingular(format!(
                "lambda_s = {lambda} hits the inner-ball spectrum at {mu}"
            )));
        }
    }
    let problem = ball_problem(tree, w, lambda, n)?;
    let dtn = problem.dtn_operator()?;
    let kc = surf.checked_constants(s)?;
    let l = problem.boundary.len();
    let is = Complex64::new(0.0, 1.0) * s.as_complex();
    let m = &dtn + DMatrix::from_diagonal_element(l, l, surf.q_pow(Complex64::new(0.5, 0.0) + is));
    let m_inv = m
        .try_inverse()
        .ok_or_else(|| Error::ExceptionalParameter("DN_s + q^(1/2+is) I is singular".into()))?;
    let sphere = tree.sphere(n);
    debug_assert_eq!(sphere.len(), l);
    let mut a = DMatrix::zeros(l, l);
    for (i, &x) in sphere.iter().enumerate() {
        for (j, &y) in sphere.iter().enumerate() {
            a[(i, j)] = kc.alpha.powi(tree.distance(x, y)? as i32);
        }
    }
    let pref = -kc.alpha.powi(-2 * n as i32);
    // row l = incoming end, column l' = observed end; the solve against the
    // unit vector E_l lands in column l of the inverse, hence the transpose
    let tau = (m_inv.transpose() / kc.c + a) * pref;
    Ok(tau)
}
