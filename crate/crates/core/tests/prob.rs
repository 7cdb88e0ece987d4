use mdr_core::prob::{
    coupling_to_forward, entropy, info_by_entropy_form, mutual_information, reduce_cost,
};
use mdr_core::{CostMatrix, Coupling, Distribution, Kernel};
use proptest::prelude::*;

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n)
}

fn normalized(w: &[f64]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

/// A consistent `(pu, lambda, p)` built from a random joint table.
fn consistent(joint: &[Vec<f64>]) -> (Distribution, Distribution, Coupling) {
    let total: f64 = joint.iter().flatten().sum();
    let j: Vec<Vec<f64>> = joint
        .iter()
        .map(|r| r.iter().map(|x| x / total).collect())
        .collect();
    let pu = Distribution::new(j.iter().map(|r| r.iter().sum()).collect()).unwrap();
    let m = j[0].len();
    let lambda = Distribution::new((0..m).map(|w| j.iter().map(|r| r[w]).sum()).collect()).unwrap();
    let p = Coupling::from_joint(&j, &lambda).unwrap();
    (pu, lambda, p)
}

fn joint() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..=4, 1usize..=4).prop_flat_map(|(n, m)| prop::collection::vec(weights(m), n))
}

fn kernel(n_w: usize, n_v: usize) -> impl Strategy<Value = Kernel> {
    prop::collection::vec(weights(n_v), n_w)
        .prop_map(|rows| Kernel::from_rows(rows.iter().map(|r| normalized(r)).collect()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn entropy_is_concave(a in weights(4), b in weights(4), t in 0.0f64..=1.0) {
        let d1 = Distribution::new(normalized(&a)).unwrap();
        let d2 = Distribution::new(normalized(&b)).unwrap();
        let mix = d1.mix(&d2, t).unwrap();
        prop_assert!(entropy(&mix) >= t * entropy(&d1) + (1.0 - t) * entropy(&d2) - 1e-12);
    }

    #[test]
    fn information_is_non_negative_and_zero_only_for_products(j in joint()) {
        let (pu, lambda, p) = consistent(&j);
        let info = mutual_information(&pu, &lambda, &p).unwrap();
        prop_assert!(info >= 0.0);
        prop_assert!((info - info_by_entropy_form(&pu, &lambda, &p)).abs() <= 1e-12);
        let dev = p
            .support()
            .iter()
            .flat_map(|&w| (0..pu.len()).map(move |u| (u, w)))
            .map(|(u, w)| (p.get(u, w) - pu[u]).abs())
            .fold(0.0, f64::max);
        if dev > 1e-3 {
            prop_assert!(info > 0.0);
        }
        let product = Coupling::product(&pu, &lambda);
        prop_assert!(mutual_information(&pu, &lambda, &product).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn forward_kernel_reconstructs_the_joint(j in joint()) {
        let (pu, lambda, p) = consistent(&j);
        let fwd = coupling_to_forward(&pu, &lambda, &p).unwrap();
        for u in 0..pu.len() {
            for &w in p.support() {
                let direct = lambda[w] * p.get(u, w);
                prop_assert!((pu[u] * fwd.get(u, w) - direct).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn reduce_cost_is_linear_in_the_kernel(
        k1 in kernel(3, 4),
        k2 in kernel(3, 4),
        c in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 4), 2),
        t in 0.0f64..=1.0,
    ) {
        let c = CostMatrix::from_rows(&c).unwrap();
        let mixed: Vec<Vec<f64>> = (0..3)
            .map(|w| (0..4).map(|v| t * k1.get(w, v) + (1.0 - t) * k2.get(w, v)).collect())
            .collect();
        let km = Kernel::from_rows(mixed).unwrap();
        let a = reduce_cost(&k1, &c).unwrap();
        let b = reduce_cost(&k2, &c).unwrap();
        let m = reduce_cost(&km, &c).unwrap();
        for u in 0..2 {
            for w in 0..3 {
                let mix = t * a.get(u, w) + (1.0 - t) * b.get(u, w);
                prop_assert!((m.get(u, w) - mix).abs() <= 1e-12);
            }
        }
    }
}
