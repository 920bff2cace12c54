//! Property tests for the structural invariants that hold for every input.

use num_complex::Complex64;
use proptest::prelude::*;
use treescat::{NonlocalPotential, SpectralParam, Surface, TruncatedTree, VertexId};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Distance is a metric and matches the address-word prefix formula.
    #[test]
    fn distance_is_a_metric(q in 2u32..4, seed in any::<u64>()) {
        let tree = TruncatedTree::new(q, 5).unwrap();
        let n = tree.vertex_count() as u64;
        let pick = |k: u64| VertexId(((seed.rotate_left(k as u32 * 13).wrapping_mul(0x9e3779b97f4a7c15)) % n) as u32);
        let (x, y, z) = (pick(1), pick(2), pick(3));
        let d = |a, b| tree.distance(a, b).unwrap();
        prop_assert_eq!(d(x, y), d(y, x));
        prop_assert_eq!(d(x, x), 0);
        prop_assert!(d(x, z) <= d(x, y) + d(y, z));
        // prefix formula
        let (ax, ay) = (tree.address(x), tree.address(y));
        let common = ax.iter().zip(&ay).take_while(|(a, b)| a == b).count() as u32;
        prop_assert_eq!(d(x, y), tree.depth_of(x) + tree.depth_of(y) - 2 * common);
    }

    /// The root constants satisfy their quadratic everywhere on the surface,
    /// and real parameters map into the band.
    #[test]
    fn spectral_constants_satisfy_the_quadratic(
        q in 2u32..6,
        re in 0.0f64..10.0,
        im in 0.0f64..2.0,
    ) {
        let surf = Surface::new(q).unwrap();
        let s = SpectralParam::complex(re, im);
        let k = surf.constants(s);
        let lambda = surf.lambda(s);
        let residual = surf.qf() * k.alpha * k.alpha - lambda * k.alpha + 1.0;
        prop_assert!(residual.norm() < 1e-9);
        let on_band = surf.lambda_real(SpectralParam::real(re));
        prop_assert!(on_band.abs() <= surf.band_edge() + 1e-12);
    }

    /// Potential serialization round-trips entry for entry.
    #[test]
    fn potential_json_roundtrip(entries in proptest::collection::vec(
        (0u32..20, 0u32..20, -2.0f64..2.0, -2.0f64..2.0), 0..12)
    ) {
        let cleaned: Vec<(u32, u32, Complex64)> = entries
            .iter()
            .map(|&(x, y, re, im)| {
                let (a, b) = (x.min(y), x.max(y));
                (a, b, Complex64::new(re, if a == b { 0.0 } else { im }))
            })
            .collect();
        // last write wins for duplicate keys
        let mut map = std::collections::BTreeMap::new();
        for &(a, b, v) in &cleaned {
            map.insert((a, b), v);
        }
        let w = NonlocalPotential::from_entries(map.iter().map(|(&(a, b), &v)| (a, b, v))).unwrap();
        let (q, back) = NonlocalPotential::from_json(&w.to_json(2)).unwrap();
        prop_assert_eq!(q, 2);
        for (&(a, b), &v) in &map {
            if v != Complex64::ZERO {
                prop_assert!((back.entry(VertexId(a), VertexId(b)) - v).norm() < 1e-15);
            }
        }
        prop_assert_eq!(back.support().len(), w.support().len());
    }
}
