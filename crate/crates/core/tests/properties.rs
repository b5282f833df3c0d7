mod common;

use std::sync::Arc;

use common::*;
use pipesim_core::graph::{find_feedforward_cutsets, simulate};
use pipesim_core::nn::{quantize, sgd_step, Mlp, Params, SgdConfig, SgdState, Tensor, PARAM_QUANTUM};
use pipesim_core::pipeline::{run_delayed_serial, run_pipeline, PipelineSchedule, RunOptions};
use pipesim_core::retime::{compact, insert_initial_delays, retime_backward_cutset};
use pipesim_core::weights::{beta, GradientAverager};
use pipesim_core::{build_training_graph, derive_delays, StagePartition, WeightStrategy};
use proptest::prelude::*;
use rand::Rng;

fn partition(max_layers: usize) -> impl Strategy<Value = StagePartition> {
    (1..=max_layers).prop_flat_map(|l| {
        prop::collection::vec(any::<bool>(), l - 1).prop_map(move |cuts| {
            let mut b = vec![0];
            b.extend(cuts.iter().enumerate().filter(|(_, &c)| c).map(|(i, _)| i + 1));
            StagePartition::new(l, b).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_cycle_has_one_register(l in 1usize..=5) {
        let g = build_training_graph(l).unwrap();
        prop_assert!(g.validate().is_ok());
        for cycle in g.simple_cycles() {
            prop_assert_eq!(cycle.iter().filter(|&&v| g.kind(v).is_register()).count(), 1);
        }
    }

    #[test]
    fn delays_even_monotone_and_stage_uniform(p in partition(10)) {
        let a = derive_delays(&p);
        for l in 0..p.num_layers() {
            prop_assert_eq!(a.gradient_delay[l] % 2, 0);
            let k = a.staleness(l);
            prop_assert!(k == 0 || k % 2 == 1);
            if l + 1 < p.num_layers() {
                prop_assert!(a.gradient_delay[l] >= a.gradient_delay[l + 1]);
                if p.stage_of(l) == p.stage_of(l + 1) {
                    prop_assert_eq!(a.gradient_delay[l], a.gradient_delay[l + 1]);
                }
            }
        }
        prop_assert_eq!(a.gradient_delay, closed_form_delays(&p));
    }

    #[test]
    fn refinement_never_lowers_delay(p in partition(9), extra in prop::collection::vec(any::<bool>(), 9)) {
        let mut b: Vec<usize> = p.boundaries().to_vec();
        for l in 1..p.num_layers() {
            if extra[l - 1] && !b.contains(&l) {
                b.push(l);
            }
        }
        b.sort_unstable();
        let finer = StagePartition::new(p.num_layers(), b).unwrap();
        prop_assert!(p.is_refined_by(&finer));
        let (a, f) = (derive_delays(&p), derive_delays(&finer));
        for l in 0..p.num_layers() {
            prop_assert!(f.gradient_delay[l] >= a.gradient_delay[l]);
        }
    }

    #[test]
    fn compaction_matches_planner(p in partition(8)) {
        let g = build_training_graph(p.num_layers()).unwrap();
        let (init, _) = insert_initial_delays(&g, &p).unwrap();
        let c = compact(&init, &p).unwrap();
        prop_assert_eq!(&c.assignment, &derive_delays(&p));
        for cycle in c.graph.simple_cycle_edges() {
            prop_assert_eq!(c.graph.cycle_delay(&cycle), init.cycle_delay(&cycle));
        }
    }

    #[test]
    fn illegal_retiming_leaves_graph_alone(l in 2usize..=5, amount in 1usize..4) {
        let g = build_training_graph(l).unwrap();
        let p = StagePartition::per_layer(l).unwrap();
        let before = g.clone();
        prop_assert!(retime_backward_cutset(&g, &p, 0, amount).is_err());
        prop_assert_eq!(g, before);
    }

    #[test]
    fn cutset_delays_shift_output(l in 1usize..=4, k in 1usize..=3, seed in 0u64..1000) {
        let g = build_training_graph(l).unwrap();
        let sem = random_semantics(&g, seed);
        let mut r = rng(seed);
        let input: Vec<i64> = (0..30).map(|_| r.gen_range(-50..50)).collect();
        let base = simulate(&g, &input, 30, &sem).unwrap();
        for cut in find_feedforward_cutsets(&g) {
            prop_assert!(cut.is_feedforward() && cut.splits_in_two(&g));
            let shift = cut.output_latency(k);
            let out = simulate(&cut.with_delay(&g, k), &input, 30, &sem).unwrap();
            prop_assert_eq!(&out[shift..], &base[..30 - shift]);
        }
    }

    #[test]
    fn beta_identities(n in 0u64..=1_000_000) {
        prop_assert_eq!(beta(n) + 1.0 / (n as f64 + 1.0), 1.0);
        prop_assert!(beta(n + 1) > beta(n));
    }

    #[test]
    fn reconstruction_error_bound(seed in 0u64..10_000, k in 1usize..6) {
        let k = 2 * k - 1;
        let mut r = rng(seed);
        let alpha = r.gen_range(0.01..0.5);
        let gs: Vec<f64> = (0..k).map(|_| quantize(r.gen_range(-1.0..1.0))).collect();
        let mut w = quantize(r.gen_range(-1.0..1.0));
        let stash = w;
        let mut avg = GradientAverager::analytic();
        for &g in &gs {
            w -= quantize(alpha * g);
            avg.update(&Tensor::scalar(g)).unwrap();
        }
        let mean = avg.mean().unwrap().data()[0];
        let rebuilt = avg.reconstruct(&Tensor::scalar(w), alpha, k).unwrap().data()[0];
        let bound = alpha * k as f64 * gs.iter().fold(0f64, |m, g| m.max((g - mean).abs()));
        prop_assert!((rebuilt - stash).abs() <= bound + k as f64 * PARAM_QUANTUM + 1e-12);
    }

    #[test]
    fn plain_sgd_telescopes(seed in 0u64..10_000, steps in 1usize..30) {
        let mut model = Mlp::new(&[2, 3, 2], seed).unwrap();
        let start = model.layers[1].params.clone();
        let mut r = rng(seed);
        let cfg = SgdConfig::plain(r.gen_range(0.01..0.3));
        let mut st = SgdState::default();
        let mut total = Params { w: Tensor::zeros(start.w.shape()), b: Tensor::zeros(start.b.shape()) };
        for t in 0..steps {
            let b = random_stream(seed + t as u64, 1, 3, 2, 2).remove(0);
            let (logits, caches) = model.forward(&b.x).unwrap();
            let (_, d) = pipesim_core::nn::softmax_ce(&logits, &b.y).unwrap();
            let g = model.layers[1].backward(&caches[1], &d).unwrap();
            let u = sgd_step(&mut model.layers[1], &mut st, &g, &cfg, t).unwrap();
            total.w = total.w.add(&u.w).unwrap();
            total.b = total.b.add(&u.b).unwrap();
        }
        let now = &model.layers[1].params;
        prop_assert_eq!(bits(&now.w.sub(&start.w).unwrap()), bits(&total.w));
        prop_assert_eq!(bits(&now.b.sub(&start.b).unwrap()), bits(&total.b));
    }

    #[test]
    fn forward_is_deterministic(seed in 0u64..10_000) {
        let m = Mlp::new(&[3, 4, 2], seed).unwrap();
        let x = random_stream(seed, 1, 5, 3, 2).remove(0).x;
        prop_assert_eq!(bits(&m.logits(&x).unwrap()), bits(&m.logits(&x).unwrap()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pipeline_equals_serial_with_momentum(p in partition(4), seed in 0u64..1000) {
        let batches = random_stream(seed, 30, 3, 2, 3);
        let mut sizes = vec![2];
        sizes.extend(std::iter::repeat_n(4, p.num_layers() - 1));
        sizes.push(3);
        let model = Mlp::new(&sizes, seed).unwrap();
        let sched = PipelineSchedule::new(p, batches.len());
        let sgd = SgdConfig { momentum: 0.5, weight_decay: 1e-3, ..SgdConfig::plain(0.05) };
        let mut opts = RunOptions::new(sgd, WeightStrategy::ExactStash);
        opts.check_history = true;
        let a = run_pipeline(model.clone(), &sched, &batches, &opts, &mut no_hook()).unwrap();
        let b = run_delayed_serial(model, &sched, &batches, &opts, &mut no_hook()).unwrap();
        prop_assert_eq!(&a.trajectory, &b.trajectory);
        prop_assert_eq!(a.model, b.model);
    }

    #[test]
    fn activation_peaks_are_depth_plus_one(p in partition(5), strategy in prop::sample::select(vec![
        WeightStrategy::ExactStash, WeightStrategy::Latest, WeightStrategy::FixedEma(0.9), WeightStrategy::PipelineAwareEma,
    ])) {
        let a = derive_delays(&p);
        let batches = random_stream(1, 2 * p.num_stages() + 4, 2, 2, 2);
        let sizes = vec![2; p.num_layers() + 1];
        let model = Mlp::new(&sizes, 3).unwrap();
        let sched = PipelineSchedule::new(p.clone(), batches.len());
        let out = run_pipeline(model, &sched, &batches, &RunOptions::new(SgdConfig::plain(0.05), strategy), &mut no_hook()).unwrap();
        for l in 0..p.num_layers() {
            prop_assert_eq!(out.peak_act_slots[l], a.activation_stash[l] + 1);
            let copies = if strategy == WeightStrategy::ExactStash { a.weight_stash[l] } else { 0 };
            prop_assert_eq!(out.peak_weight_copies[l], copies);
        }
    }

    #[test]
    fn schedule_respects_dataflow(p in partition(8), m in 1usize..20) {
        let s = PipelineSchedule::new(p, m);
        let stages = s.num_stages();
        let mut busy = std::collections::HashSet::new();
        let mut last_tick = 0;
        for mb in 0..m {
            for st in 0..stages {
                let (f, b) = (s.forward_tick(st, mb), s.backward_tick(st, mb));
                prop_assert!(busy.insert((st, f)) && busy.insert((st, b)));
                prop_assert_eq!(s.forward_slot(st, f), Some(mb));
                prop_assert_eq!(s.backward_slot(st, b), Some(mb));
                if st > 0 {
                    prop_assert!(f > s.forward_tick(st - 1, mb));
                    prop_assert!(s.backward_tick(st - 1, mb) > b);
                }
                let stale = b - f;
                let sa = stages - 1 - st;
                prop_assert_eq!(stale, 2 * sa + 1);
                last_tick = last_tick.max(b);
            }
        }
        prop_assert_eq!(s.total_ticks(), last_tick + 1);
        prop_assert_eq!(s.total_ticks(), 2 * m + 2 * (stages - 1));
    }
}

#[test]
fn snapshot_sharing_counts_versions_once() {
    use pipesim_core::weights::StashBuffer;
    let p = Arc::new(Params { w: Tensor::scalar(1.0), b: Tensor::scalar(0.0) });
    let mut s = StashBuffer::new(0, 4);
    s.push(0, 5, Arc::clone(&p)).unwrap();
    s.push(1, 5, Arc::clone(&p)).unwrap();
    s.push(2, 6, Arc::clone(&p)).unwrap();
    assert_eq!(s.distinct_versions_except(7), 2);
    assert_eq!(s.distinct_versions_except(6), 1);
}
