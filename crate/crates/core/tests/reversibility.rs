//! Running a geodesic backwards: scattering, lengths and X-ray values must all match.

use ahx::flow::{scattering_map, trace_geodesic, BoundaryCovector, TraceOptions};
use ahx::metric::fixtures::{disc, perturbed};
use ahx::renorm::renormalized_length;
use ahx::xray::{xray_along, SymmetricTensorField};
use ahx::Family;
use proptest::prelude::*;

fn family(i: usize) -> Family {
    if i == 0 {
        disc()
    } else {
        perturbed(0.1, 0.05)
    }
}

fn eta_strategy() -> impl Strategy<Value = f64> {
    prop_oneof![-3.0f64..-0.7, 0.7f64..3.0]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn scattering_is_an_involution_up_to_sign(fi in 0usize..2, y in 0.0f64..6.28, eta in eta_strategy()) {
        let f = family(fi);
        let opts = TraceOptions::with_tol(1e-12);
        let z = BoundaryCovector::incoming1(y, eta);
        let out = scattering_map(&f, &z, &opts).unwrap();
        let back = scattering_map(&f, &out.time_reversed(), &opts).unwrap();
        let dy = f.y_diff(&back.y, &z.y)[0];
        prop_assert!(dy.abs() < 1e-8, "y drift {dy}");
        prop_assert!((back.eta[0] + eta).abs() < 1e-8, "eta {} vs {}", back.eta[0], -eta);
    }

    #[test]
    fn length_and_xray_ignore_orientation(fi in 0usize..2, y in 0.0f64..6.28, eta in eta_strategy()) {
        let f = family(fi);
        let opts = TraceOptions::with_tol(1e-12);
        let fwd = trace_geodesic(&f, &BoundaryCovector::incoming1(y, eta), &opts).unwrap();
        let bwd = trace_geodesic(&f, &fwd.outgoing(&f).time_reversed(), &opts).unwrap();
        let (la, lb) = (renormalized_length(&fwd).unwrap().length, renormalized_length(&bwd).unwrap().length);
        prop_assert!((la - lb).abs() < 1e-7, "{la} vs {lb}");
        let g = SymmetricTensorField::scalar(1, 2, |r: f64, y: &[f64]| r * r * (1.0 + 0.5 * y[0].cos()));
        let (xa, xb) = (xray_along(&f, &g, &fwd, 1e-11).unwrap().value, xray_along(&f, &g, &bwd, 1e-11).unwrap().value);
        prop_assert!((xa - xb).abs() < 1e-8 * (1.0 + xa.abs()), "{xa} vs {xb}");
    }
}
