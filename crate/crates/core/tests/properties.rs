//! Randomized checks of the crate's structural invariants: aggregation
//! produces valid distributions, the robust risks dominate the mean, tail
//! risks shrink as the tail grows, metrics stay ordered and order-free, and
//! the closed-form weight gradient tracks its finite-difference oracle.

use proptest::prelude::*;
use softlabel_core::baselines::{consensus_filter, majority_vote};
use softlabel_core::bilevel::{BilevelProblem, MetaGradBackend};
use softlabel_core::data::{candidate_set, featurize_text, AnnotatedExample, GroupSpec, LabeledExample};
use softlabel_core::eval::group_metrics;
use softlabel_core::losses::{
    cvar_risk, erm_risk, groupdro_risk, soft_label_aggregate, OuterRisk,
};
use softlabel_core::math;
use softlabel_core::models::{ModelSpec, ParamVector};

fn probability_vector(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, len).prop_map(|raw| {
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / total).collect()
    })
}

fn votes(class_count: usize, max_annotators: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..class_count, 1..=max_annotators)
}

prop_compose! {
    fn labeled_batch()(
        rows in prop::collection::vec(
            (prop::collection::vec(-2.0f64..2.0, 2), 0usize..3, 0usize..4),
            1..12,
        )
    ) -> Vec<LabeledExample> {
        rows.into_iter()
            .enumerate()
            .map(|(i, (features, label, group))| LabeledExample {
                id: format!("x{i}"),
                features,
                label,
                group,
            })
            .collect()
    }
}

fn linear_params(spec: &ModelSpec) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, spec.param_count())
}

proptest! {
    #[test]
    fn aggregation_yields_a_distribution_and_ignores_annotator_order(
        (annotations, weights, swap) in votes(4, 6).prop_flat_map(|a| {
            let m = a.len();
            (Just(a), probability_vector(m), (0..m, 0..m))
        })
    ) {
        let label = soft_label_aggregate(&annotations, &weights, 4).unwrap();
        let probs = label.probabilities();
        prop_assert!(probs.iter().all(|p| (0.0..=1.0 + 1e-12).contains(p)));
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // Mass lands exactly on voted classes.
        for (class, p) in probs.iter().enumerate() {
            let voted = annotations.contains(&class);
            prop_assert_eq!(*p > 0.0, voted, "class {} mass {}", class, p);
        }

        // Swapping two annotators together with their weights changes nothing.
        let (i, j) = swap;
        let mut annotations2 = annotations.clone();
        let mut weights2 = weights.clone();
        annotations2.swap(i, j);
        weights2.swap(i, j);
        let swapped = soft_label_aggregate(&annotations2, &weights2, 4).unwrap();
        for (a, b) in probs.iter().zip(swapped.probabilities()) {
            prop_assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn candidate_sets_are_sorted_deduplicated_and_complete(
        annotations in votes(5, 8)
    ) {
        let set = candidate_set(&annotations);
        prop_assert!(set.windows(2).all(|w| w[0] < w[1]));
        for vote in &annotations {
            prop_assert!(set.contains(vote));
        }
        for class in &set {
            prop_assert!(annotations.contains(class));
        }
        let modal = majority_vote(&AnnotatedExample {
            id: String::new(),
            features: vec![],
            annotations: annotations.clone(),
        });
        prop_assert!(set.contains(&modal));
    }

    #[test]
    fn consensus_keeps_only_unanimous_examples(
        rows in prop::collection::vec(votes(3, 4), 1..10)
    ) {
        let dataset: Vec<AnnotatedExample> = rows
            .iter()
            .enumerate()
            .map(|(i, annotations)| AnnotatedExample {
                id: format!("e{i}"),
                features: vec![],
                annotations: annotations.clone(),
            })
            .collect();
        let agg = consensus_filter(&dataset);
        let unanimous = dataset
            .iter()
            .filter(|ex| ex.candidate_set().len() == 1)
            .count();
        prop_assert_eq!(agg.examples.len(), unanimous);
        prop_assert!((agg.kept_fraction - unanimous as f64 / dataset.len() as f64).abs() < 1e-15);
        for kept in &agg.examples {
            let source = dataset.iter().find(|ex| ex.id == kept.id).unwrap();
            prop_assert!(source.candidate_set().contains(&kept.label));
        }
    }

    #[test]
    fn robust_risks_dominate_the_mean_and_order_by_tail(
        batch in labeled_batch(),
        raw_params in linear_params(&ModelSpec::linear(2, 3)),
        alpha_lo in 0.05f64..0.5,
        alpha_hi in 0.5f64..1.0,
    ) {
        let spec = ModelSpec::linear(2, 3);
        let params = ParamVector::from_values(&spec, raw_params).unwrap();
        let n = batch.len();

        let erm = erm_risk(&spec, &params, &batch).unwrap();
        let dro = groupdro_risk(&spec, &params, &batch, 4).unwrap();
        prop_assert!(dro.value >= erm - 1e-12);

        let worst = cvar_risk(&spec, &params, &batch, 4, 1.0 / n as f64).unwrap();
        let lo = cvar_risk(&spec, &params, &batch, 4, alpha_lo).unwrap();
        let hi = cvar_risk(&spec, &params, &batch, 4, alpha_hi).unwrap();
        let full = cvar_risk(&spec, &params, &batch, 4, 1.0).unwrap();

        // Tail risks shrink as the tail widens and bracket mean and max.
        prop_assert!(worst.value + 1e-12 >= lo.value);
        prop_assert!(lo.value + 1e-12 >= hi.value);
        prop_assert!(hi.value + 1e-12 >= full.value);
        prop_assert!((full.value - erm).abs() < 1e-12);
        prop_assert!(worst.value >= dro.value - 1e-12);
        prop_assert!(erm >= 0.0);
    }

    #[test]
    fn metrics_stay_ordered_and_order_free(
        batch in labeled_batch(),
        raw_params in linear_params(&ModelSpec::linear(2, 3)),
        seed in 0u64..1000,
    ) {
        let spec = ModelSpec::linear(2, 3);
        let params = ParamVector::from_values(&spec, raw_params).unwrap();
        let metrics = group_metrics(&spec, &params, &batch, 4).unwrap();
        let best = metrics
            .per_group
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(metrics.worst_group <= metrics.average + 1e-12);
        prop_assert!(metrics.average <= best + 1e-12);
        prop_assert!((0.0..=1.0).contains(&metrics.overall));

        let mut shuffled = batch.clone();
        // A deterministic pseudo-shuffle driven by the seed.
        let n = shuffled.len();
        for i in 0..n {
            let j = ((seed as usize).wrapping_mul(31).wrapping_add(i * 17)) % n;
            shuffled.swap(i, j);
        }
        let reshuffled = group_metrics(&spec, &params, &shuffled, 4).unwrap();
        prop_assert_eq!(metrics, reshuffled);
    }

    #[test]
    fn hashed_text_features_are_unit_or_zero(
        text in ".{0,60}",
        dim in 1usize..32,
    ) {
        let features = featurize_text(&text, dim);
        prop_assert_eq!(features.len(), dim);
        let norm = math::l2_norm(&features);
        prop_assert!(norm < 1e-12 || (norm - 1.0).abs() < 1e-9, "norm {}", norm);
    }

    #[test]
    fn group_tables_round_trip(
        pairs in prop::collection::btree_set((0usize..5, 0usize..5), 1..10)
    ) {
        let entries: Vec<(usize, usize, usize)> = pairs
            .iter()
            .enumerate()
            .map(|(group, &(topic, label))| (topic, label, group))
            .collect();
        let spec = GroupSpec::from_entries(&entries).unwrap();
        prop_assert_eq!(spec.group_count(), entries.len());
        for (topic, label, group) in entries {
            prop_assert_eq!(spec.group_of(topic, label).unwrap(), group);
            prop_assert_eq!(spec.pair_of(group), Some((topic, label)));
        }
    }

    #[test]
    fn softmax_is_a_distribution_dominated_by_its_logsumexp(
        logits in prop::collection::vec(-30.0f64..30.0, 1..6)
    ) {
        let probs = math::softmax(&logits);
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let lse = math::log_sum_exp(&logits);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lse >= max - 1e-12);
        prop_assert!(lse <= max + (logits.len() as f64).ln() + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Slower: full pseudo-update plus a finite-difference sweep per case.
    #[test]
    fn weight_gradient_matches_finite_differences_on_random_instances(
        theta_raw in linear_params(&ModelSpec::linear(2, 2)),
        w_raw in linear_params(&ModelSpec::linear(2, 3)),
        train_rows in prop::collection::vec(
            // Exactly one vote per estimator output: three annotators.
            (prop::collection::vec(-1.5f64..1.5, 2), prop::collection::vec(0usize..2, 3)),
            2..5,
        ),
        val_rows in prop::collection::vec(
            (prop::collection::vec(-1.5f64..1.5, 2), 0usize..2, 0usize..2),
            2..5,
        ),
        mu in 0.02f64..0.3,
    ) {
        let classifier = ModelSpec::linear(2, 2);
        let estimator = ModelSpec::linear(2, 3);
        let problem = BilevelProblem {
            classifier: &classifier,
            estimator: &estimator,
            group_count: 2,
        };
        let theta = ParamVector::from_values(&classifier, theta_raw).unwrap();
        let w = ParamVector::from_values(&estimator, w_raw).unwrap();
        let train: Vec<AnnotatedExample> = train_rows
            .into_iter()
            .enumerate()
            .map(|(i, (features, annotations))| AnnotatedExample {
                id: format!("t{i}"),
                features,
                annotations,
            })
            .collect();
        let val: Vec<LabeledExample> = val_rows
            .into_iter()
            .enumerate()
            .map(|(i, (features, label, group))| LabeledExample {
                id: format!("v{i}"),
                features,
                label,
                group,
            })
            .collect();

        let outer = OuterRisk::Groupdro;
        // Skip near-ties of the worst group: the subgradient jumps there and
        // central differences straddle the switch.
        let pseudo = problem.pseudo_update(&theta, &w, &train, mu).unwrap();
        let risk = outer.evaluate(&classifier, &pseudo, &val, 2).unwrap();
        let mut means: Vec<f64> = risk.per_group.iter().flatten().copied().collect();
        means.sort_by(|a, b| b.partial_cmp(a).unwrap());
        prop_assume!(means.len() < 2 || means[0] - means[1] > 1e-3);

        let analytic = problem
            .metagrad_w(&theta, &w, &train, &val, &outer, mu, MetaGradBackend::Analytic)
            .unwrap();
        let fd = problem
            .metagrad_w_fd(&theta, &w, &train, &val, &outer, mu, 1e-5)
            .unwrap();
        for (a, f) in analytic.values().iter().zip(fd.values()) {
            prop_assert!(
                (a - f).abs() <= 1e-7 + 1e-4 * f.abs().max(a.abs()),
                "analytic {} vs fd {}",
                a,
                f
            );
        }
    }
}
