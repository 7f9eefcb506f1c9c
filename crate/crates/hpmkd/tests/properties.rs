//! Property tests over the numeric and data-handling invariants.

use proptest::prelude::*;

use hpmkd::chain::plan_size_sequence;
use hpmkd::data::{apply_imbalance, inject_label_noise, synth_blobs};
use hpmkd::distill::entropy_term;
use hpmkd::ensemble::attention_weights;
use hpmkd::eval::accuracy;
use hpmkd::matrix::Matrix;
use hpmkd::meta::HistoryEntry;
use hpmkd::nn::{softmax_temp, Model};
use hpmkd::pipeline::{schedule_tasks, Task, TaskKind};
use hpmkd::rng::SplitMix64;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_sums_to_one_and_shift_invariant(
        logits in prop::collection::vec(-50.0f64..50.0, 2..8),
        temperature in 0.1f64..20.0,
        shift in -100.0f64..100.0,
    ) {
        let p = softmax_temp(&logits, temperature).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&v| v >= 0.0));

        let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
        let q = softmax_temp(&shifted, temperature).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-9, "shift changed softmax: {a} vs {b}");
        }
    }

    #[test]
    fn entropy_maximal_at_uniform_zero_at_vertices(
        k in 2usize..=8,
        seed in 0u64..1000,
    ) {
        let uniform = vec![1.0 / k as f64; k];
        let h_uniform = entropy_term(&uniform, 1.0).unwrap();

        let mut vertex = vec![0.0; k];
        vertex[0] = 1.0;
        prop_assert_eq!(entropy_term(&vertex, 1.0).unwrap(), 0.0);

        // Random simplex points never beat the uniform distribution.
        let mut rng = SplitMix64::new(seed);
        for _ in 0..20 {
            let mut w: Vec<f64> = (0..k).map(|_| -rng.next_f64().max(1e-12).ln()).collect();
            let sum: f64 = w.iter().sum();
            for v in &mut w {
                *v /= sum;
            }
            let h = entropy_term(&w, 1.0).unwrap();
            prop_assert!(h <= h_uniform + 1e-12, "entropy {h} beats uniform {h_uniform}");
        }
    }

    #[test]
    fn attention_weights_always_normalize(
        scores in prop::collection::vec(-500.0f64..500.0, 1..8),
    ) {
        let w = attention_weights(&scores);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(w.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn plan_sequence_decreasing_and_log_bounded(
        teacher in 100u64..10_000_000,
        ratio in 2.1f64..500.0,
    ) {
        let student = ((teacher as f64 / ratio) as u64).max(1);
        let sizes = plan_size_sequence(teacher, student, 100);
        let mut prev = teacher;
        for &s in &sizes {
            prop_assert!(s < prev, "sizes must strictly decrease");
            prop_assert!(s > student, "planned size at or below the student");
            prev = s;
        }
        let bound = (teacher as f64 / student as f64).log2().ceil() as usize;
        prop_assert!(sizes.len() <= bound, "{} intermediates > log bound {bound}", sizes.len());
    }

    #[test]
    fn accuracy_invariant_to_sample_order(seed in 0u64..500) {
        let ds = synth_blobs(120, 3, 4, 1.0, seed).unwrap();
        let model = Model::new(&[4, 6, 3], seed ^ 0xF00).unwrap();
        let base = accuracy(&model, &ds).unwrap();

        let mut rng = SplitMix64::new(seed.wrapping_add(1));
        let mut order: Vec<usize> = (0..ds.len()).collect();
        rng.shuffle(&mut order);
        let shuffled = hpmkd::data::Dataset::new(
            "shuffled",
            ds.features().select_rows(&order),
            order.iter().map(|&i| ds.labels()[i]).collect(),
            ds.class_count(),
        )
        .unwrap();
        prop_assert_eq!(accuracy(&model, &shuffled).unwrap(), base);
    }

    #[test]
    fn history_canonical_line_roundtrip(
        t0 in 0.5f64..16.0,
        alpha in 0.0f64..1.0,
        lr in 1e-4f64..0.5,
        epochs in 1usize..100,
        accuracy in 0.0f64..1.0,
        n in 1u64..1_000_000,
    ) {
        let entry = HistoryEntry {
            meta: hpmkd::meta::MetaFeatures {
                n_samples: n,
                n_classes: 10,
                dim: 20,
                teacher_params: 500_000,
                student_params: 50_000,
                compression_ratio: 10.0,
            },
            config: hpmkd::distill::DistillConfig { t0, alpha, lr, epochs },
            accuracy,
        };
        let back = HistoryEntry::parse_line(&entry.canonical_line()).unwrap();
        prop_assert_eq!(back, entry);
    }

    #[test]
    fn noise_touches_labels_only(rate in 0.0f64..1.0, seed in 0u64..300) {
        let ds = synth_blobs(100, 4, 3, 1.0, seed).unwrap();
        let noisy = inject_label_noise(&ds, rate, seed ^ 0xA0).unwrap();
        prop_assert_eq!(ds.features().data(), noisy.features().data());
        let flipped = ds
            .labels()
            .iter()
            .zip(noisy.labels())
            .filter(|(a, b)| a != b)
            .count();
        prop_assert_eq!(flipped, (rate * 100.0).floor() as usize);
    }

    #[test]
    fn imbalance_only_drops_members(ratio in 1.0f64..20.0, seed in 0u64..300) {
        let ds = synth_blobs(120, 3, 4, 1.0, seed).unwrap();
        let skewed = apply_imbalance(&ds, ratio, seed).unwrap();
        prop_assert!(skewed.len() <= ds.len());
        // Class counts follow the long-tail profile exactly.
        let per = 40.0;
        for (c, &count) in skewed.class_counts().iter().enumerate() {
            let expect = (per * ratio.powf(-(c as f64) / 2.0)).round() as usize;
            prop_assert_eq!(count, expect);
        }
    }

    #[test]
    fn lpt_assigns_every_task_once(
        costs in prop::collection::vec(0.1f64..100.0, 1..24),
        workers in 1usize..6,
    ) {
        let tasks: Vec<Task> = costs
            .iter()
            .enumerate()
            .map(|(id, &c)| Task { id, kind: TaskKind::TeacherTrain, cost_estimate: c })
            .collect();
        let assignment = schedule_tasks(&tasks, workers);
        prop_assert_eq!(assignment.len(), workers);
        let mut seen: Vec<usize> = assignment.iter().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..costs.len()).collect::<Vec<_>>());
        // Each worker receives its tasks in descending cost order.
        for ids in &assignment {
            for pair in ids.windows(2) {
                prop_assert!(costs[pair[0]] >= costs[pair[1]]);
            }
        }
    }

    #[test]
    fn model_container_roundtrip(
        hidden in 1usize..12,
        seed in 0u64..10_000,
    ) {
        let model = Model::new(&[3, hidden, 2], seed).unwrap();
        let back = Model::from_bytes(&model.to_bytes()).unwrap();
        prop_assert_eq!(back.to_bytes(), model.to_bytes());
    }
}

#[test]
fn silhouette_matches_brute_force_on_random_instances() {
    // Complements the acceptance-scale oracle with quick random checks.
    let mut rng = SplitMix64::new(0x0DDB);
    for _ in 0..10 {
        let n = 10 + rng.below(30);
        let clusters = 2 + rng.below(3);
        let mut rows = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for c in 0..clusters {
            rows.push(vec![c as f64 * 2.0 + rng.normal(), rng.normal()]);
            labels.push(c);
        }
        for _ in clusters..n {
            let c = rng.below(clusters);
            rows.push(vec![c as f64 * 2.0 + rng.normal(), rng.normal()]);
            labels.push(c);
        }
        let emb = Matrix::from_rows(&rows).unwrap();
        let got = hpmkd::eval::silhouette(&emb, &labels, 0).unwrap();

        // Naive per-sample mean-distance oracle.
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        };
        let mut total = 0.0;
        for i in 0..n {
            let own = labels[i];
            let own_count = labels.iter().filter(|&&l| l == own).count();
            if own_count == 1 {
                continue;
            }
            let a: f64 = (0..n)
                .filter(|&j| j != i && labels[j] == own)
                .map(|j| dist(&rows[i], &rows[j]))
                .sum::<f64>()
                / (own_count - 1) as f64;
            let b = (0..clusters)
                .filter(|&c| c != own)
                .map(|c| {
                    let members: Vec<usize> = (0..n).filter(|&j| labels[j] == c).collect();
                    members.iter().map(|&j| dist(&rows[i], &rows[j])).sum::<f64>()
                        / members.len() as f64
                })
                .fold(f64::INFINITY, f64::min);
            total += (b - a) / a.max(b);
        }
        let want = total / n as f64;
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}
