use proptest::prelude::*;

use sepex::function_class::{covering_number, evaluate, EmpiricalMeasure, FunctionClass};
use sepex::hoeffding::decompose;
use sepex::lattice::{all_evectors, transversal_partition, verify_partition, Shape};
use sepex::model::{AdditiveModel, InteractionModel, SeModel};
use sepex::orlicz::orlicz_norm;
use sepex::sampler::sample_array;
use sepex::supremum::component_sup;

fn shapes() -> impl Strategy<Value = Shape> {
    prop::collection::vec(1usize..=6, 1..=4).prop_map(|d| Shape::new(d).unwrap())
}

fn small_shapes() -> impl Strategy<Value = Shape> {
    prop::collection::vec(1usize..=5, 2..=3).prop_map(|d| Shape::new(d).unwrap())
}

fn model(k: usize, interaction: bool) -> Box<dyn SeModel> {
    if interaction {
        Box::new(InteractionModel::new(k, 0.5).unwrap())
    } else {
        Box::new(AdditiveModel::new(k).unwrap())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partitions_cover_disjointly_and_transversally(shape in shapes()) {
        for e in all_evectors(shape.dim()).unwrap() {
            let p = transversal_partition(&shape, &e).unwrap();
            let r = verify_partition(&shape, &e, &p);
            prop_assert!(r.passed(), "{shape} {e}: {:?}", r.counterexample);
            prop_assert_eq!(p.groups.len() * p.group_size, shape.cardinality(&e));
        }
    }

    #[test]
    fn components_sum_to_the_sample_mean(
        shape in small_shapes(),
        interaction in any::<bool>(),
        seed in any::<u64>(),
        u in 0.05f64..0.95,
    ) {
        let m = model(shape.dim(), interaction);
        let (lo, hi) = m.support();
        for class in [FunctionClass::identity(m.as_ref()), FunctionClass::half_interval(m.as_ref(), &[lo + u * (hi - lo)])] {
            let map = decompose(m.as_ref(), &class, 0, &shape, seed, 32).unwrap();
            prop_assert!((map.total() - map.sample_mean).abs() <= 1e-10 * (1.0 + map.sample_mean.abs()));
        }
    }

    #[test]
    fn component_sup_scales_with_the_class(
        shape in small_shapes(),
        seed in any::<u64>(),
        c in -4.0f64..4.0,
    ) {
        let m = AdditiveModel::new(shape.dim()).unwrap();
        let class = FunctionClass::half_interval(&m, &[0.7, 1.4, 2.1]);
        for e in all_evectors(shape.dim()).unwrap() {
            let a = component_sup(&m, &class, &shape, e, seed, 0).unwrap();
            let b = component_sup(&m, &class.scaled(c), &shape, e, seed, 0).unwrap();
            prop_assert!((b - c.abs() * a).abs() <= 1e-12 * (1.0 + a));
        }
    }

    #[test]
    fn covering_numbers_shrink_as_the_radius_grows(
        seed in any::<u64>(),
        r1 in 0.01f64..1.0,
        r2 in 0.01f64..1.0,
    ) {
        let m = AdditiveModel::new(2).unwrap();
        let thetas: Vec<f64> = (1..40).map(|j| j as f64 * 3.0 / 40.0).collect();
        let class = FunctionClass::half_interval(&m, &thetas);
        let xs = sample_array(&m, &Shape::square(8, 2).unwrap(), seed).unwrap().values;
        let eval = evaluate(&class, &xs).unwrap();
        let mu = EmpiricalMeasure::uniform(xs).unwrap();
        let (small, large) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        prop_assert!(covering_number(&eval, &mu, large).unwrap() <= covering_number(&eval, &mu, small).unwrap());
        prop_assert!(covering_number(&eval, &mu, small).unwrap() <= class.len());
    }

    #[test]
    fn orlicz_norm_is_homogeneous(
        xs in prop::collection::vec(-10.0f64..10.0, 1..200),
        c in 0.01f64..50.0,
        beta in prop::sample::select(vec![1.0, 2.0]),
    ) {
        let a = orlicz_norm(&xs, beta).unwrap();
        let scaled: Vec<f64> = xs.iter().map(|x| c * x).collect();
        let b = orlicz_norm(&scaled, beta).unwrap();
        prop_assert!((b - c * a).abs() <= 1e-8 * (c * a).max(1e-300));
    }

    #[test]
    fn envelopes_dominate_members(
        seed in any::<u64>(),
        width in 0.04f64..0.5,
        interaction in any::<bool>(),
    ) {
        let m = model(2, interaction);
        let (lo, hi) = m.support();
        let thetas: Vec<f64> = (1..30).map(|j| lo + j as f64 * (hi - lo) / 30.0).collect();
        let base = FunctionClass::half_interval(m.as_ref(), &thetas);
        let xs = sample_array(m.as_ref(), &Shape::square(6, 2).unwrap(), seed).unwrap().values;
        for class in [FunctionClass::identity(m.as_ref()), FunctionClass::localized_differences(&base, width * (hi - lo)).unwrap(), base] {
            let eval = evaluate(&class, &xs).unwrap();
            for row in &eval.rows {
                for (v, f) in row.iter().zip(&eval.envelope) {
                    prop_assert!(v.abs() <= f.abs() * (1.0 + 1e-12) + 1e-12);
                }
            }
        }
    }
}
