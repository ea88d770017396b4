use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use stochinv::geometry::{Orthant, SamplerConfig};
use stochinv::invariance::{check_set, pmp_probe, CheckSetConfig, PmpConfig, Verdict};
use stochinv::linop::{self, SymOperator};
use stochinv::model::{self, ModelSpec};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // ker C = ker Σᵀ for C = Σ Σᵀ
    #[test]
    fn kernel_of_dispersion_matches_kernel_of_adjoint(
        cols in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 1..3),
        lam in prop::collection::vec(0.1f64..2.0, 3),
    ) {
        let k = cols.len();
        let sigma = DMatrix::from_fn(3, 3, |i, j| if j < k { cols[j][i] } else { 0.0 });
        let m = model::constant(DVector::zeros(3), sigma, lam).unwrap();
        let x = DVector::zeros(3);
        let c = m.dispersion(&x).unwrap();
        let s = m.big_sigma(&x).unwrap();
        let sd = linop::spectral(&c);
        let scale = sd.max_abs().max(1e-300);
        for (i, e) in sd.eigenvalues.iter().enumerate() {
            let v = sd.eigenvectors.column(i).into_owned();
            let st = (s.transpose() * &v).norm();
            if e.abs() <= 1e-10 * scale {
                prop_assert!(st <= 1e-6 * (1.0 + s.norm()));
            } else {
                prop_assert!(st > 0.0);
            }
        }
    }

    #[test]
    fn pseudo_inverse_projection_is_idempotent(entries in prop::collection::vec(-1.0f64..1.0, 9), rank in 0usize..4) {
        let b = DMatrix::from_vec(3, 3, entries);
        let mut b = b;
        for j in rank..3 {
            b.column_mut(j).fill(0.0);
        }
        let a = SymOperator::symmetrized(&(&b * b.transpose()));
        let p = linop::range_proj(&a, linop::DEFAULT_RANK_TOL);
        let pm = p.matrix();
        prop_assert!((pm * pm - pm).amax() <= 1e-9);
    }
}

fn half_line_check(m: &ModelSpec) -> Verdict {
    let cfg = CheckSetConfig {
        n_points: 10,
        extra_points: vec![DVector::zeros(1)],
        ..Default::default()
    };
    check_set(m, &Orthant { dim: 1 }, &cfg).unwrap().verdict
}

// φ(x) = -x² - 2 c x has its maximum 0 over the half-line at the origin
fn pmp_violations(m: &ModelSpec) -> usize {
    let cfg = PmpConfig {
        sampler: SamplerConfig {
            radius: 2.0,
            ..Default::default()
        },
        ..Default::default()
    };
    (1..=10)
        .filter(|i| {
            let c = 0.1 * *i as f64;
            let phi = move |x: &DVector<f64>| Ok(-x[0] * x[0] - 2.0 * c * x[0]);
            let out = pmp_probe(m, &Orthant { dim: 1 }, &phi, &cfg).unwrap();
            assert!(out.probed);
            out.violation
        })
        .count()
}

#[test]
fn maximum_principle_probe_agrees_with_the_boundary_check() {
    for (a, expect) in [(-0.5, Verdict::Fail), (0.0, Verdict::Pass), (0.3, Verdict::Pass)] {
        let m = model::cir(a, 1.0, 1.0, 1.0).unwrap();
        let verdict = half_line_check(&m);
        assert_eq!(verdict, expect, "a = {a}");
        let violations = pmp_violations(&m);
        if expect == Verdict::Pass {
            assert_eq!(violations, 0, "a = {a}");
        } else {
            assert_eq!(violations, 10, "a = {a}");
        }
    }
}
