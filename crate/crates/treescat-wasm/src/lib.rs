//! Browser demo bindings: flat `Float64Array`-friendly exports for the
//! density-of-states explorer, the exceptional-set profile, and the
//! transmission-coefficient sweep. The static page in `www/` drives these
//! with plain canvas drawing; everything here also compiles (and is tested)
//! on native targets.

use num_complex::Complex64;
use treescat::free::stone_dos;
use treescat::potential::{star_potential, NonlocalPotential};
use treescat::quad::CircleGrid;
use treescat::scattering::Scatter;
use treescat::{SpectralParam, Surface, TruncatedTree};
use wasm_bindgen::prelude::wasm_bindgen;

/// Density of states and its Stone smearing on a uniform energy grid:
/// returns rows `[lambda, de, stone_eps]` flattened.
#[wasm_bindgen]
pub fn dos_curve(q: u32, eps: f64, points: usize) -> Vec<f64> {
    let surf = match Surface::new(q) {
        Ok(s) => s,
        Err(_) => return Vec::new(),
    };
    let points = points.clamp(16, 4096);
    let eps = eps.clamp(1e-6, 1.0);
    let edge = surf.band_edge() * 1.15;
    let mut out = Vec::with_capacity(points * 3);
    for i in 0..points {
        let lam = -edge + 2.0 * edge * i as f64 / (points - 1) as f64;
        out.push(lam);
        out.push(surf.dos_density(lam));
        out.push(stone_dos(&surf, lam, eps));
    }
    out
}

fn demo_potential(q: u32, kind: u32, strength: f64) -> NonlocalPotential {
    let tree = TruncatedTree::new(q, 3).expect("small tree");
    let w = Complex64::new(strength, 0.0);
    match kind {
        // scaled star around the root
        1 => NonlocalPotential::from_entries(
            star_potential(&tree)
                .upper_triangle()
                .map(|(x, y, v)| (x, y, v * strength)),
        )
        .expect("hermitian"),
        // rank-one at the root
        2 => NonlocalPotential::from_entries([(0, 0, w)]).expect("hermitian"),
        // hopping defect on the first edge plus opposite site shifts
        3 => NonlocalPotential::from_entries([
            (0, 1, w),
            (1, 1, Complex64::new(-0.5 * strength, 0.0)),
            (2, 2, Complex64::new(0.5 * strength, 0.0)),
        ])
        .expect("hermitian"),
        _ => NonlocalPotential::zero(),
    }
}

/// Smallest-singular-value profile of the cut-off scattering system over
/// the band circle: rows `[s, sigma_min/sigma_max]` flattened. Dips mark
/// exceptional parameters (embedded eigenvalues).
#[wasm_bindgen]
pub fn exceptional_profile(q: u32, kind: u32, strength: f64, nodes: usize) -> Vec<f64> {
    let surf = match Surface::new(q) {
        Ok(s) => s,
        Err(_) => return Vec::new(),
    };
    let tree = match TruncatedTree::new(q, 6) {
        Ok(t) => t,
        Err(_) => return Vec::new(),
    };
    let w = demo_potential(q, kind, strength);
    let scat = match Scatter::new(&tree, surf, &w) {
        Ok(s) => s,
        Err(_) => return Vec::new(),
    };
    let grid = CircleGrid::new(surf.tau(), nodes.clamp(16, 1024));
    let mut out = Vec::new();
    if let Ok(scan) = scat.exceptional_scan(&grid, 1e-8) {
        for (s, r) in scan.samples {
            out.push(s);
            out.push(r);
        }
    }
    out
}

/// Point-spectrum energies of the demo potential: embedded values paired
/// with 0.0, outside-band values paired with 1.0.
#[wasm_bindgen]
pub fn point_spectrum(q: u32, kind: u32, strength: f64) -> Vec<f64> {
    let surf = match Surface::new(q) {
        Ok(s) => s,
        Err(_) => return Vec::new(),
    };
    let tree = match TruncatedTree::new(q, 6) {
        Ok(t) => t,
        Err(_) => return Vec::new(),
    };
    let w = demo_potential(q, kind, strength);
    let scat = match Scatter::new(&tree, surf, &w) {
        Ok(s) => s,
        Err(_) => return Vec::new(),
    };
    let mut out = Vec::new();
    if let Ok(embedded) = scat.pp_embedded() {
        for e in embedded {
            out.push(e.lambda);
            out.push(0.0);
        }
    }
    if let Ok(outside) = scat.pp_outside() {
        for o in outside {
            out.push(o.lambda);
            out.push(1.0);
        }
    }
    out
}

/// Transmission sweep: for each band node `s`, the moduli of the
/// self-entry `tau(s, 0, 0)`, a neighboring-end entry `tau(s, 0, 1)` and
/// the farthest-end entry; rows `[s, t_self, t_near, t_far]`.
#[wasm_bindgen]
pub fn transmission_curve(q: u32, kind: u32, strength: f64, nodes: usize) -> Vec<f64> {
    let surf = match Surface::new(q) {
        Ok(s) => s,
        Err(_) => return Vec::new(),
    };
    let tree = match TruncatedTree::new(q, 7) {
        Ok(t) => t,
        Err(_) => return Vec::new(),
    };
    let w = demo_potential(q, kind, strength);
    let scat = match Scatter::new(&tree, surf, &w) {
        Ok(s) => s,
        Err(_) => return Vec::new(),
    };
    let n = scat.min_ball_exponent().max(2);
    let grid = CircleGrid::new(surf.tau(), nodes.clamp(16, 512));
    let mut out = Vec::new();
    for &sre in &grid.nodes {
        match scat.tau_matrix(SpectralParam::real(sre), n) {
            Ok(tau) => {
                let l = tau.nrows();
                out.push(sre);
                out.push(tau[(0, 0)].norm());
                out.push(tau[(0, 1)].norm());
                out.push(tau[(0, l - 1)].norm());
            }
            Err(_) => {
                // exceptional node: emit a gap marker
                out.push(sre);
                out.push(f64::NAN);
                out.push(f64::NAN);
                out.push(f64::NAN);
            }
        }
    }
    out
}

/// Band edge `2 sqrt(q)`, for axis scaling.
#[wasm_bindgen]
pub fn band_edge(q: u32) -> f64 {
    Surface::new(q).map(|s| s.band_edge()).unwrap_or(0.0)
}

/// Circle period `tau = 2 pi / log(q)`, for axis scaling.
#[wasm_bindgen]
pub fn band_period(q: u32) -> f64 {
    Surface::new(q).map(|s| s.tau()).unwrap_or(0.0)
}
