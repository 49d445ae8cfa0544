use augcycle::checkpoint::Checkpoint;
use augcycle::evaluation::{
    chain_cycle, collapse_probe, corruption_curve, diversity_score, infer_via_opt, ndcg_at_k, precision_at_k,
    sample_groups, InferOptions,
};
use augcycle::networks::{ArchConfig, Injection, ModelBundle, ModelDims, Variant};
use augcycle::objectives::{
    disc_loss_from_probs, gen_loss_from_probs, generator_objective, BoundBundle, GenLossForm, LossReport, LossWeights,
    StepBatch,
};
use augcycle::rng::sample_gaussian;
use augcycle::synth::{sample_paired, sample_unpaired, Domain, JointSpec, TaskConfig};
use augcycle::trainer::{ExperimentConfig, Trainer};
use augcycle::{Rng, Tape, Tensor};
use proptest::prelude::*;

fn small_arch(injection: Injection) -> ArchConfig {
    ArchConfig {
        gen_hidden: vec![6, 6],
        enc_hidden: vec![6],
        disc_hidden: vec![6],
        latent_disc_hidden: vec![6],
        injection,
    }
}

fn dims(dz: usize) -> ModelDims {
    ModelDims {
        dim_a: 3,
        dim_b: 5,
        dim_za: dz,
        dim_zb: dz,
    }
}

/// A bundle whose weights are perturbed away from initialization so every
/// path carries signal.
fn perturbed(variant: Variant, seed: u64, scale: f64) -> ModelBundle {
    let dz = if variant.is_stochastic() { 2 } else { 0 };
    let mut rng = Rng::new(seed);
    let mut m = ModelBundle::build(variant, dims(dz), &small_arch(Injection::AllLayers), &mut rng).unwrap();
    let mut p = m.all_params();
    for (_, t) in p.iter_mut() {
        let g = sample_gaussian(&mut rng, t.shape());
        t.data_mut().iter_mut().zip(g.data()).for_each(|(x, n)| *x += scale * n);
    }
    m.scatter_params(&p).unwrap();
    m
}

fn batch(variant: Variant, seed: u64, n: usize) -> StepBatch {
    let mut rng = Rng::new(seed);
    let mut g = |w: usize| sample_gaussian(&mut rng, &[n, w]);
    let stoch = variant.is_stochastic();
    let aug = variant == Variant::AugCyclegan;
    StepBatch {
        a: g(3),
        b: g(5),
        z_a: stoch.then(|| g(2)),
        z_b: stoch.then(|| g(2)),
        z_a_cycle: (stoch && !aug).then(|| g(2)),
        z_b_cycle: (stoch && !aug).then(|| g(2)),
        prior_za: aug.then(|| g(2)),
        prior_zb: aug.then(|| g(2)),
        paired: None,
    }
}

fn gen_report(m: &ModelBundle, b: &StepBatch, w: &LossWeights) -> (LossReport, f64) {
    let mut tape = Tape::new();
    let nets = BoundBundle::new(&mut tape, m, true, false);
    let (terms, total) = generator_objective(&mut tape, &nets, b, w, GenLossForm::NonSaturating).unwrap();
    let mut r = LossReport::default();
    r.fill_gen(&tape, &terms, total);
    (r, tape.scalar(total))
}

fn variant_strategy() -> impl Strategy<Value = Variant> {
    prop_oneof![
        Just(Variant::Cyclegan),
        Just(Variant::StochCyclegan),
        Just(Variant::AugCyclegan)
    ]
}

fn groups_strategy() -> impl Strategy<Value = Vec<Vec<Vec<f64>>>> {
    (1usize..4, 2usize..7, 1usize..5).prop_flat_map(|(g, n, d)| {
        prop::collection::vec(prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), n), g)
    })
}

fn to_tensors(groups: &[Vec<Vec<f64>>]) -> Vec<Tensor> {
    groups.iter().map(|g| Tensor::from_rows(g).unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn tape_replay_reproduces_the_loss(variant in variant_strategy(), seed in 0u64..1000) {
        let m = perturbed(variant, seed, 0.3);
        let b = batch(variant, seed + 1, 4);
        let w = LossWeights::default();
        let mut tape = Tape::new();
        let nets = BoundBundle::new(&mut tape, &m, true, false);
        let (_, total) = generator_objective(&mut tape, &nets, &b, &w, GenLossForm::NonSaturating).unwrap();
        let first = tape.scalar(total);
        tape.backward(total).unwrap();
        let (_, again) = gen_report(&m, &b, &w);
        prop_assert_eq!(first.to_bits(), again.to_bits());
    }

    #[test]
    fn init_outputs_ignore_z(seed in 0u64..1000, dz in 1usize..5, last in any::<bool>(), aug in any::<bool>()) {
        let injection = if last { Injection::LastLayer } else { Injection::AllLayers };
        let variant = if aug { Variant::AugCyclegan } else { Variant::StochCyclegan };
        let m = ModelBundle::build(variant, dims(dz), &small_arch(injection), &mut Rng::new(seed)).unwrap();
        let mut rng = Rng::new(seed ^ 0xff);
        let a = sample_gaussian(&mut rng, &[4, 3]);
        let b = sample_gaussian(&mut rng, &[4, 5]);
        let z1 = sample_gaussian(&mut rng, &[4, dz]);
        let z2 = sample_gaussian(&mut rng, &[4, dz]);
        prop_assert_eq!(m.map_ab(&a, Some(&z1)).unwrap(), m.map_ab(&a, Some(&z2)).unwrap());
        prop_assert_eq!(m.map_ba(&b, Some(&z1)).unwrap(), m.map_ba(&b, Some(&z2)).unwrap());
    }

    #[test]
    fn forward_passes_are_pure(variant in variant_strategy(), seed in 0u64..1000) {
        let m = perturbed(variant, seed, 0.3);
        let before = m.clone();
        let b = batch(variant, seed, 3);
        let y1 = m.map_ab(&b.a, b.z_b.as_ref()).unwrap();
        let y2 = m.map_ab(&b.a, b.z_b.as_ref()).unwrap();
        prop_assert_eq!(y1, y2);
        prop_assert_eq!(m, before);
    }

    #[test]
    fn doubling_gamma1_doubles_the_cycle_contribution(seed in 0u64..1000, g1 in 0.5f64..20.0) {
        let m = perturbed(Variant::AugCyclegan, seed, 0.3);
        let b = batch(Variant::AugCyclegan, seed + 7, 4);
        let w = LossWeights { gamma: 10.0, gamma1: g1, gamma2: 3.0 };
        let (r, t0) = gen_report(&m, &b, &w);
        let (_, t1) = gen_report(&m, &b, &LossWeights { gamma1: 2.0 * g1, ..w });
        let cyc = r.cyc_a + r.cyc_b;
        prop_assert!((t1 - t0 - g1 * cyc).abs() <= 1e-12 * t1.abs().max(1.0));
    }

    #[test]
    fn cyclegan_objective_is_term_for_term(seed in 0u64..1000, gamma in 0.0f64..20.0) {
        let m = perturbed(Variant::Cyclegan, seed, 0.3);
        let b = batch(Variant::Cyclegan, seed + 3, 5);
        let w = LossWeights { gamma, ..LossWeights::default() };
        let (r, total) = gen_report(&m, &b, &w);
        let want = r.gan_a + r.gan_b + gamma * (r.cyc_a + r.cyc_b);
        prop_assert!((total - want).abs() <= 1e-12 * want.abs().max(1.0));
        prop_assert_eq!(r.cyc_za, 0.0);
        prop_assert_eq!(r.gan_za, 0.0);
    }

    #[test]
    fn losses_stay_finite_at_extreme_probabilities(p in prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0f64..=1.0], 1..8)) {
        let mut tape = Tape::new();
        let t = Tensor::new(vec![p.len(), 1], p).unwrap();
        let v = tape.constant(&t);
        let d = disc_loss_from_probs(&mut tape, v, v).unwrap();
        let g = gen_loss_from_probs(&mut tape, v, GenLossForm::NonSaturating).unwrap();
        let mm = gen_loss_from_probs(&mut tape, v, GenLossForm::Minimax).unwrap();
        prop_assert!(tape.scalar(d).is_finite());
        prop_assert!(tape.scalar(g).is_finite());
        prop_assert!(tape.scalar(mm).is_finite());
    }

    #[test]
    fn supervised_schedule_is_exact(s in 0.0f64..=1.0, t in 1u64..5000) {
        let mut c = ExperimentConfig::new(Variant::AugCyclegan, TaskConfig::style_mixture_default(), t, 0);
        c.paired_fraction = s;
        let count = (1..=t).filter(|&i| c.supervised_at(i)).count() as u64;
        prop_assert_eq!(count, (t as f64 * s).floor() as u64);
    }

    #[test]
    fn diversity_is_translation_invariant_and_scales_linearly(
        groups in groups_strategy(),
        shift in -10.0f64..10.0,
        scale in 0.01f64..50.0,
    ) {
        let base = diversity_score(&to_tensors(&groups)).unwrap();
        let moved: Vec<Vec<Vec<f64>>> = groups
            .iter()
            .map(|g| g.iter().map(|r| r.iter().enumerate().map(|(j, v)| v + shift * (j as f64 + 1.0)).collect()).collect())
            .collect();
        let scaled: Vec<Vec<Vec<f64>>> = groups
            .iter()
            .map(|g| g.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect())
            .collect();
        let tol = 1e-9 * base.max(1.0);
        prop_assert!((diversity_score(&to_tensors(&moved)).unwrap() - base).abs() <= tol * 20.0);
        prop_assert!((diversity_score(&to_tensors(&scaled)).unwrap() - scale * base).abs() <= tol * scale.max(1.0));
    }

    #[test]
    fn ranking_metrics_lie_in_unit_interval(
        items in prop::collection::vec((-3.0f64..3.0, any::<bool>()), 1..12),
        kf in 0.0f64..1.0,
    ) {
        let scores: Vec<f64> = items.iter().map(|p| (p.0 * 4.0).round() / 4.0).collect();
        let truth: Vec<f64> = items.iter().map(|p| f64::from(u8::from(p.1))).collect();
        let k = 1 + (kf * (items.len() - 1) as f64) as usize;
        let p = precision_at_k(&scores, &truth, k).unwrap();
        let g = ndcg_at_k(&scores, &truth, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!((0.0..=1.0 + 1e-15).contains(&g));
        if truth.iter().all(|&t| t == 0.0) {
            prop_assert_eq!(g, 0.0);
        }
    }

    #[test]
    fn oracle_has_exactly_m_modes(seed in 0u64..500, styles in 1usize..6, row in 0usize..50) {
        let task = TaskConfig::StyleMixture { dim_a: 4, dim_b: 8, clusters: 3, styles, sigma_a: 0.05, sigma_b: 0.05, seed };
        let spec = JointSpec::from_config(&task).unwrap();
        let a = sample_unpaired(&spec, Domain::A, row + 1, &mut Rng::new(seed)).unwrap();
        let modes = spec.oracle(a.row(row)).b_modes;
        prop_assert_eq!(modes.len(), styles);
        for (i, x) in modes.iter().enumerate() {
            for y in &modes[i + 1..] {
                prop_assert!(x != y);
            }
        }
    }

    #[test]
    fn sampling_is_determined_by_the_seed(seed in any::<u64>(), n in 1usize..40) {
        let spec = JointSpec::from_config(&TaskConfig::attribute_default()).unwrap();
        let x = sample_paired(&spec, n, &mut Rng::new(seed)).unwrap();
        let y = sample_paired(&spec, n, &mut Rng::new(seed)).unwrap();
        prop_assert_eq!(x, y);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn infer_error_never_increases_with_steps(seed in 0u64..1000, s1 in 0usize..15, extra in 0usize..15) {
        let m = perturbed(Variant::StochCyclegan, seed, 0.5);
        let mut rng = Rng::new(seed);
        let a = sample_gaussian(&mut rng, &[6, 3]);
        let b = sample_gaussian(&mut rng, &[6, 5]);
        let run = |steps| {
            let opts = InferOptions { steps, lr: 0.05, restarts: 2 };
            infer_via_opt(&m.f_ab, &a, &b, &opts, &mut Rng::new(seed + 1)).unwrap().errors
        };
        let short = run(s1);
        let long = run(s1 + extra);
        for (l, s) in long.iter().zip(&short) {
            prop_assert!(l <= s);
        }
    }

    #[test]
    fn evaluation_leaves_parameters_unchanged(seed in 0u64..1000, aug in any::<bool>()) {
        let variant = if aug { Variant::AugCyclegan } else { Variant::StochCyclegan };
        let m = perturbed(variant, seed, 0.3);
        let before = m.all_params();
        let mut rng = Rng::new(seed);
        let a = sample_gaussian(&mut rng, &[6, 3]);
        let b = sample_gaussian(&mut rng, &[6, 5]);
        infer_via_opt(&m.f_ab, &a, &b, &InferOptions { steps: 5, lr: 0.01, restarts: 1 }, &mut rng).unwrap();
        diversity_score(&sample_groups(&m, &a, 4, &mut rng).unwrap()).unwrap();
        collapse_probe(&m, &a, &b, 3, &mut rng).unwrap();
        corruption_curve(&m, &b, &[0.0, 0.1], &mut rng).unwrap();
        chain_cycle(&m, &b, 3, &mut rng).unwrap();
        prop_assert_eq!(m.all_params(), before);
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(seed in 0u64..1000, steps in 0u64..4) {
        let mut c = ExperimentConfig::new(Variant::AugCyclegan, TaskConfig::style_mixture_default(), 4, seed);
        c.batch_size = 4;
        c.arch = small_arch(Injection::AllLayers);
        c.paired_fraction = 0.5;
        let mut t = Trainer::new(c).unwrap();
        for _ in 0..steps {
            t.step().unwrap();
        }
        let ck = t.checkpoint().unwrap();
        let bytes = ck.encode().unwrap();
        let back = Checkpoint::decode(&bytes).unwrap();
        prop_assert_eq!(&back, &ck);
        prop_assert_eq!(back.encode().unwrap(), bytes);
    }
}

/// Two-sample Kolmogorov-Smirnov statistic.
fn ks_statistic(mut x: Vec<f64>, mut y: Vec<f64>) -> f64 {
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

#[test]
fn ks_statistic_of_known_samples() {
    assert_eq!(ks_statistic(vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]), 0.0);
    assert_eq!(ks_statistic(vec![1.0, 2.0], vec![3.0, 4.0]), 1.0);
    assert!((ks_statistic(vec![1.0, 3.0], vec![2.0, 4.0]) - 0.5).abs() < 1e-15);
}

#[test]
fn paired_and_unpaired_a_marginals_agree() {
    let n = 10_000;
    let alpha: f64 = 0.01;
    for task in [TaskConfig::style_mixture_default(), TaskConfig::attribute_default()] {
        let spec = JointSpec::from_config(&task).unwrap();
        let paired = sample_paired(&spec, n, &mut Rng::new(101)).unwrap().a;
        let unpaired = sample_unpaired(&spec, Domain::A, n, &mut Rng::new(202)).unwrap();
        // Bonferroni across coordinates.
        let per_coord = alpha / spec.dim_a as f64;
        let crit = (-(per_coord / 2.0).ln() / 2.0).sqrt() * (2.0 / n as f64).sqrt();
        for j in 0..spec.dim_a {
            let col = |t: &Tensor| t.row_iter().map(|r| r[j]).collect::<Vec<f64>>();
            let d = ks_statistic(col(&paired), col(&unpaired));
            assert!(d < crit, "coordinate {j}: D = {d:.4} >= {crit:.4}");
        }
    }
}
