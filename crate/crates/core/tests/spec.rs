use mdr_core::spec::{ProblemSpec, Scalar};
use mdr_core::Error;
use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;

fn scalar() -> impl Strategy<Value = Scalar> {
    prop_oneof![
        (-1e6f64..1e6).prop_map(Scalar::Float),
        (-1000i64..1000, 1i64..1000).prop_map(|(n, d)| Scalar::Rational(BigRational::new(
            BigInt::from(n),
            BigInt::from(d)
        ))),
    ]
}

fn spec() -> impl Strategy<Value = ProblemSpec> {
    (1usize..4, 1usize..4).prop_flat_map(|(n_u, n_v)| {
        let matrix = || prop::collection::vec(prop::collection::vec(scalar(), n_v), n_u);
        (
            prop::collection::vec(1u32..10, n_u),
            any::<bool>(),
            matrix(),
            matrix(),
            prop::option::of(prop::collection::vec("[a-z]{1,3}", n_u)),
        )
            .prop_map(|(w, exact, ce, cd, labels_u)| {
                let total: u32 = w.iter().sum();
                let source = w
                    .iter()
                    .map(|&x| {
                        let r = BigRational::new(BigInt::from(x), BigInt::from(total));
                        if exact {
                            Scalar::Rational(r)
                        } else {
                            Scalar::Float(x as f64 / total as f64)
                        }
                    })
                    .collect();
                ProblemSpec {
                    source,
                    cost_encoder: ce,
                    cost_decoder: cd,
                    labels_u,
                    labels_v: None,
                }
            })
    })
}

proptest! {
    #[test]
    fn serialization_round_trips_exactly(s in spec()) {
        prop_assume!(s.validate().is_ok());
        let back = ProblemSpec::parse(&s.to_json()).unwrap();
        prop_assert_eq!(back, s);
    }
}

#[test]
fn schema_errors_carry_paths() {
    let cases = [
        (r#"[1]"#, "$"),
        (r#"{"source":[1],"cost_encoder":[[0]]}"#, "cost_decoder"),
        (
            r#"{"source":[1],"cost_encoder":[[0]],"cost_decoder":[["a"]]}"#,
            "cost_decoder[0][0]",
        ),
        (
            r#"{"source":[1],"cost_encoder":[[0]],"cost_decoder":[[0]],"extra":1}"#,
            "extra",
        ),
        (
            r#"{"source":[1],"cost_encoder":[[0]],"cost_decoder":[[0]],"labels_v":[1]}"#,
            "labels_v[0]",
        ),
    ];
    for (text, want) in cases {
        match ProblemSpec::parse(text) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, want, "{text}"),
            other => panic!("{text}: {other:?}"),
        }
    }
}

#[test]
fn validation_reports_the_source_sum() {
    let e = ProblemSpec::parse(
        r#"{"source":[0.5,0.4],"cost_encoder":[[0,1],[1,0]],"cost_decoder":[[0,1],[1,0]]}"#,
    )
    .unwrap_err();
    assert!(e.to_string().contains("0.9"), "{e}");
}
