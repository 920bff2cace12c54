//! The free adjacency operator on `T_q`: Green's function, plane waves,
//! the Fourier–Helgason transform with its inversion and Plancherel
//! identity, exact closed-walk counts, and the Stone-formula route to the
//! density of states.

use crate::error::{Error, Result};
use crate::quad::CircleGrid;
use crate::surface::{SpectralParam, Surface};
use crate::tree::{RayClass, TruncatedTree, VertexId};
use num_complex::Complex64;

/// Green's function `G0(lambda_s, x, y) = C(s) alpha(s)^d` as a function of
/// the distance `d = d(x,y)`. For `Im s > 0` this is the resolvent kernel
/// `(lambda_s - A0)^{-1}(x, y)`; on the band circle it is the meromorphic
/// boundary value.
pub fn green0(surf: &Surface, s: SpectralParam, d: u32) -> Result<Complex64> {
    let k = surf.checked_constants(s)?;
    Ok(k.c * k.alpha.powi(d as i32))
}

/// Plane wave `e0(x, omega, s) = q^((1/2 - is) b_omega(x))`.
pub fn plane_wave(
    tree: &TruncatedTree,
    surf: &Surface,
    x: VertexId,
    omega: &RayClass,
    s: SpectralParam,
) -> Result<Complex64> {
    let b = tree.busemann(omega, x)?;
    Ok(plane_wave_from_busemann(surf, b, s))
}

pub fn plane_wave_from_busemann(surf: &Surface, b: i64, s: SpectralParam) -> Complex64 {
    let is = Complex64::new(0.0, 1.0) * s.as_complex();
    surf.q_pow(Complex64::new(0.5, 0.0) - is).powi(b as i32)
}

/// `q^((1/2 + is) b)`, the integrand of the forward transform; equals
/// `conj(e0)` for real `s`.
pub fn plane_wave_conj_from_busemann(surf: &Surface, b: i64, s: SpectralParam) -> Complex64 {
    let is = Complex64::new(0.0, 1.0) * s.as_complex();
    surf.q_pow(Complex64::new(0.5, 0.0) + is).powi(b as i32)
}

/// A finitely supported function on the tree, as (vertex, value) pairs.
pub type Supported = Vec<(VertexId, Complex64)>;

/// Sampled Fourier–Helgason image on the product of boundary cylinders and
/// a circle grid in `s`.
#[derive(Debug, Clone)]
pub struct FhImage {
    pub grid: CircleGrid,
    pub cylinders: Vec<RayClass>,
    /// Cylinder-major: `values[cyl * grid.len() + node]`.
    pub values: Vec<Complex64>,
}

impl FhImage {
    pub fn value(&self, cyl: usize, node: usize) -> Complex64 {
        self.values[cyl * self.grid.len() + node]
    }
}

fn check_support_depth(tree: &TruncatedTree, f: &Supported) -> Result<()> {
    for &(x, _) in f {
        if tree.depth_of(x) + 2 > tree.depth() {
            return Err(Error::DepthInsufficient(format!(
                "support vertex at depth {} needs depth <= D - 2 = {}",
                tree.depth_of(x),
                tree.depth() - 2
            )));
        }
    }
    Ok(())
}

/// Forward transform `FH(f)(omega, s) = sum_x f(x) q^((1/2+is) b_omega(x))`,
/// an exact finite sum on every cylinder/node of the grid.
pub fn fh_forward(
    tree: &TruncatedTree,
    surf: &Surface,
    f: &Supported,
    grid: &CircleGrid,
) -> Result<FhImage> {
    check_support_depth(tree, f)?;
    let cylinders = tree.boundary_cylinders();
    let n = grid.len();
    let mut values = vec![Complex64::ZERO; cylinders.len() * n];
    for (ci, omega) in cylinders.iter().enumerate() {
        // busemann values are cylinder-determined for the whole support
        let bs: Vec<i64> = f
            .iter()
            .map(|&(x, _)| tree.busemann(omega, x).expect("depth checked"))
            .collect();
        for (j, &sj) in grid.nodes.iter().enumerate() {
            let s = SpectralParam::real(sj);
            let mut acc = Complex64::ZERO;
            for (&(_, fx), &b) in f.iter().zip(&bs) {
                acc += fx * plane_wave_conj_from_busemann(surf, b, s);
            }
            values[ci * n + j] = acc;
        }
    }
    Ok(FhImage {
        grid: grid.clone(),
        cylinders,
        values,
    })
}

/// Inverse transform at a vertex: quadrature of
/// `int int e0(x, omega, s) F(omega, s) d sigma(omega) d mu(s)`.
/// The cylinder sum is exact; the `s` integral is the trapezoid rule on the
/// grid carried by the image.
pub fn fh_inverse(
    tree: &TruncatedTree,
    surf: &Surface,
    image: &FhImage,
    x: VertexId,
) -> Result<Complex64> {
    let w_cyl = 1.0 / tree.boundary_count() as f64;
    let n = image.grid.len();
    let mut acc = Complex64::ZERO;
    for (ci, omega) in image.cylinders.iter().enumerate() {
        let b = tree.busemann(omega, x)?;
        let mut inner = Complex64::ZERO;
        for (j, &sj) in image.grid.nodes.iter().enumerate() {
            let s = SpectralParam::real(sj);
            inner += plane_wave_from_busemann(surf, b, s)
                * image.values[ci * n + j]
                * surf.mu_density(s);
        }
        acc += inner * w_cyl;
    }
    Ok(acc * image.grid.step)
}

/// Plancherel mass `int int |F|^2 d sigma d mu` of an image.
pub fn fh_norm_sq(tree: &TruncatedTree, surf: &Surface, image: &FhImage) -> f64 {
    let w_cyl = 1.0 / tree.boundary_count() as f64;
    let n = image.grid.len();
    let mut acc = 0.0;
    for ci in 0..image.cylinders.len() {
        for (j, &sj) in image.grid.nodes.iter().enumerate() {
            acc += image.values[ci * n + j].norm_sqr() * surf.mu_density(SpectralParam::real(sj));
        }
    }
    acc * w_cyl * image.grid.step
}

/// Exact number of closed walks of length `n` at `x`, by integer
/// matrix-vector powering on the truncation. Requires the ball around `x`
/// deep enough that no walk can reach the truncation boundary.
pub fn closed_walk_count(tree: &TruncatedTree, x: VertexId, n: u32) -> Result<u128> {
    if tree.depth_of(x) + n / 2 + 1 > tree.depth() {
        return Err(Error::DepthInsufficient(format!(
            "walks of length {n} from depth {} need depth {}",
            tree.depth_of(x),
            tree.depth_of(x) + n / 2 + 1
        )));
    }
    let mut v = vec![0u128; tree.vertex_count()];
    v[x.index()] = 1;
    for _ in 0..n {
        let mut next = vec![0u128; tree.vertex_count()];
        for u in tree.vertices() {
            let val = v[u.index()];
            if val != 0 {
                for w in tree.neighbors(u) {
                    next[w.index()] += val;
                }
            }
        }
        v = next;
    }
    Ok(v[x.index()])
}

/// Smeared density of states `(-1/pi) Im G0(lambda + i eps, x, x)` from the
/// closed form in the energy variable.
pub fn stone_dos(surf: &Surface, lambda: f64, eps: f64) -> f64 {
    let g = surf.green0_diag_lambda(Complex64::new(lambda, eps));
    -g.im / std::f64::consts::PI
}

/// `int f(lambda) de(lambda)` by Gauss–Legendre after the substitution
/// `lambda = 2 sqrt(q) cos(theta)`, which removes the square-root edge
/// vanishing and converges fast for smooth `f`.
pub fn dos_integral(surf: &Surface, nodes: usize, f: impl Fn(f64) -> f64) -> f64 {
    let q = surf.qf();
    // half-interval nodes mirrored to +/- lambda: the rule is symmetric by
    // construction, so odd integrands cancel exactly
    let (ts, ws) =
        crate::quad::gauss_legendre_on(nodes.div_ceil(2), 0.0, std::f64::consts::PI / 2.0);
    ts.iter()
        .zip(&ws)
        .map(|(&t, &w)| {
            let lam = 2.0 * q.sqrt() * t.cos();
            let density = (q + 1.0) * 4.0 * q * t.sin().powi(2)
                / (2.0 * std::f64::consts::PI * ((q + 1.0).powi(2) - lam * lam));
            w * (f(lam) + f(-lam)) * density
        })
        .sum()
}

/// Pointwise residual `(lambda_s - A0) g` at an interior vertex, for any
/// evaluation rule `g`.
pub fn free_stencil_residual(
    tree: &TruncatedTree,
    surf: &Surface,
    s: SpectralParam,
    x: VertexId,
    g: &impl Fn(VertexId) -> Complex64,
) -> Complex64 {
    debug_assert!(tree.is_interior(x));
    let mut acc = surf.lambda(s) * g(x);
    for y in tree.neighbors(x) {
        acc -= g(y);
    }
    acc
}
