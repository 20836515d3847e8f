use efzo::compressors::{estimate_contraction, qsgd_w, CompressorSpec, Keep};
use efzo::linalg;
use efzo::rng::RngStream;
use proptest::prelude::*;

fn vector(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3f64..1e3, 1..max_len)
}

fn selection_spec() -> impl Strategy<Value = CompressorSpec> {
    prop_oneof![
        (0.05f64..1.0).prop_map(|f| CompressorSpec::TopK(Keep::Fraction(f))),
        (0.05f64..1.0).prop_map(|f| CompressorSpec::RandK(Keep::Fraction(f))),
        (0.0f64..=1.0).prop_map(|p| CompressorSpec::DropoutBiased { p }),
        Just(CompressorSpec::Identity),
    ]
}

fn any_spec() -> impl Strategy<Value = CompressorSpec> {
    prop_oneof![
        selection_spec(),
        (0.05f64..=1.0).prop_map(|p| CompressorSpec::DropoutUnbiased { p }),
        (1u32..9).prop_map(|bits| CompressorSpec::Qsgd { bits }),
    ]
}

proptest! {
    #[test]
    fn selection_masks_split_the_norm(x in vector(40), spec in selection_spec(), seed in any::<u64>()) {
        let c = spec.compress(&x, &mut RngStream::from_seed(seed)).unwrap();
        for (ci, xi) in c.iter().zip(&x) {
            prop_assert!(*ci == 0.0 || ci == xi);
        }
        let lhs = linalg::norm_sq(&c) + linalg::dist_sq(&x, &c);
        let rhs = linalg::norm_sq(&x);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.max(1.0));
    }

    #[test]
    fn compression_is_reproducible(x in vector(30), spec in any_spec(), seed in any::<u64>()) {
        let a = spec.compress(&x, &mut RngStream::from_seed(seed)).unwrap();
        let b = spec.compress(&x, &mut RngStream::from_seed(seed)).unwrap();
        prop_assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn qsgd_output_lies_on_its_lattice(x in vector(30), bits in 1u32..9, seed in any::<u64>()) {
        let c = CompressorSpec::Qsgd { bits }.compress(&x, &mut RngStream::from_seed(seed)).unwrap();
        let norm = linalg::norm(&x);
        let unit = norm / (2f64.powi(bits as i32) * qsgd_w(x.len(), bits));
        for (ci, xi) in c.iter().zip(&x) {
            if *ci != 0.0 {
                prop_assert_eq!(ci.signum(), xi.signum());
                let level = ci.abs() / unit;
                prop_assert!((level - level.round()).abs() < 1e-6, "level {}", level);
            }
        }
    }

    #[test]
    fn top_k_keeps_no_smaller_than_it_drops(x in vector(30), f in 0.05f64..1.0) {
        let c = CompressorSpec::TopK(Keep::Fraction(f)).compress(&x, &mut RngStream::from_seed(0)).unwrap();
        let kept = c.iter().zip(&x).filter(|(c, _)| **c != 0.0).map(|(_, x)| x.abs()).fold(f64::INFINITY, f64::min);
        let dropped = c.iter().zip(&x).filter(|(c, _)| **c == 0.0).map(|(_, x)| x.abs()).fold(0.0, f64::max);
        prop_assert!(kept >= dropped || kept == f64::INFINITY);
    }
}

#[test]
fn dropout_unbiased_mean_converges() {
    let x = [1.5, -2.0, 0.25, 4.0];
    let p = 0.3;
    let spec = CompressorSpec::DropoutUnbiased { p };
    let mut rng = RngStream::from_seed(21);
    let n = 20_000;
    let mut sum = [0.0; 4];
    for _ in 0..n {
        let c = spec.compress(&x, &mut rng).unwrap();
        for k in 0..4 {
            sum[k] += c[k];
        }
    }
    for k in 0..4 {
        // each component is x/p with probability p, else 0
        let sd = x[k].abs() * ((1.0 - p) / p).sqrt();
        let se = sd / (n as f64).sqrt();
        assert!((sum[k] / n as f64 - x[k]).abs() < 3.0 * se, "component {k}");
    }
}

#[test]
fn analytic_delta_bounds_the_empirical_error() {
    let dim = 12;
    let mut rng = RngStream::from_seed(5);
    for spec in [
        CompressorSpec::TopK(Keep::Count(3)),
        CompressorSpec::RandK(Keep::Count(3)),
        CompressorSpec::DropoutBiased { p: 0.4 },
        CompressorSpec::Identity,
    ] {
        let delta = spec.analytic_delta(dim).unwrap();
        for _ in 0..20 {
            let x = rng.normal_vec(dim);
            let trials = 4000;
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..trials {
                let r = linalg::dist_sq(&spec.compress(&x, &mut rng).unwrap(), &x) / linalg::norm_sq(&x);
                sum += r;
                sum_sq += r * r;
            }
            let mean = sum / trials as f64;
            let se = ((sum_sq / trials as f64 - mean * mean).max(0.0) / trials as f64).sqrt();
            assert!(mean <= 1.0 - delta + 4.0 * se + 1e-12, "{spec}: {mean} vs {}", 1.0 - delta);
        }
    }
}

#[test]
fn top_k_worst_case_is_k_over_d() {
    let est = estimate_contraction(&CompressorSpec::TopK(Keep::Count(1)), 4, 50, &mut RngStream::from_seed(2)).unwrap();
    // the all-ones direction realises the worst case exactly
    assert!((est.delta_hat - 0.25).abs() < 1e-12);
    assert!(est.directions >= 20);
}

#[test]
fn non_finite_input_is_rejected() {
    let err = CompressorSpec::TopK(Keep::Count(1)).compress(&[1.0, f64::NAN], &mut RngStream::from_seed(0));
    assert!(matches!(err, Err(efzo::Error::Input(_))));
}
