mod common;

use can_core::data::{generate, ClipRecord, SynthConfig};
use can_core::gscm::{gscm_param_count, GscmPaths};
use can_core::mtcm::mtcm_param_count;
use can_core::network::checkpoint::{load_into, write_checkpoint};
use can_core::network::train::{BEST_CHECKPOINT, METRICS_FILE};
use can_core::network::*;
use can_core::params::ParamStore;
use can_core::{Dims, Error, VideoTensor};

fn tiny(name: &str) -> NetSpec {
    NetSpec::named(name).unwrap().with_input(4, 16, 16)
}

fn small_clips(seed: u64, per_class: usize) -> Vec<ClipRecord> {
    let cfg = SynthConfig {
        frames: 4,
        height: 16,
        width: 16,
    };
    generate(seed, per_class, &cfg).clips
}

#[test]
fn instantiated_scalars_match_analytic_count_for_every_spec() {
    for name in SPEC_NAMES {
        let spec = NetSpec::named(name).unwrap();
        let mut store = ParamStore::new();
        Model::new(&spec, &mut store, 1).unwrap();
        assert_eq!(store.scalar_count(), count_cost(&spec).unwrap().total_params, "{name}");
    }
}

#[test]
fn cost_deltas_are_additive_over_insertion_sites() {
    let base = count_cost(&NetSpec::named("resnet50").unwrap()).unwrap();
    for (name, mtcm, paths) in [
        ("resnet50can", true, GscmPaths::ALL),
        ("resnet50-mtcm", true, GscmPaths::NONE),
        ("resnet50-gscm", false, GscmPaths::ALL),
        ("resnet50-pmm", false, GscmPaths { pmm: true, lmm: false, gmm: false }),
        ("resnet50-lmm", false, GscmPaths { pmm: false, lmm: true, gmm: false }),
        ("resnet50-gmm", false, GscmPaths { pmm: false, lmm: false, gmm: true }),
    ] {
        let spec = NetSpec::named(name).unwrap();
        let mut sites = 0;
        for (_, _, bs) in spec.blocks() {
            let c = bs.bottleneck_channels as u64;
            if mtcm {
                sites += mtcm_param_count(c, 3, 2);
            }
            if paths.any() {
                sites += gscm_param_count(c, 2, 3, paths);
            }
        }
        let report = count_cost(&spec).unwrap();
        assert_eq!(report.total_params - base.total_params, sites, "{name}");
    }
}

#[test]
fn eval_mode_batch_rows_are_independent() {
    let spec = tiny("tinycan");
    let mut store = ParamStore::new();
    let model = Model::new(&spec, &mut store, 3).unwrap();
    common::jitter(&mut store, 0.05, &mut common::rng(3));
    let clips = small_clips(3, 1);
    let frames: Vec<&VideoTensor> = clips.iter().map(|c| &c.frames).collect();
    let batch = VideoTensor::stack_batch(&frames).unwrap();
    let together = model.logits(&store, &batch).unwrap();
    for (i, f) in frames.iter().enumerate() {
        let alone = model.logits(&store, f).unwrap();
        for (a, b) in alone[0].iter().zip(&together[i]) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn suppressed_can_matches_plain_residual_network() {
    let can_spec = tiny("tinycan");
    let base_spec = tiny("tinycan-baseline");
    let mut can_store = ParamStore::new();
    let can = Model::new(&can_spec, &mut can_store, 5).unwrap();
    common::jitter(&mut can_store, 0.05, &mut common::rng(5));
    let mut base_store = ParamStore::new();
    let base = Model::new(&base_spec, &mut base_store, 5).unwrap();
    assert_eq!(base_store.copy_matching(&can_store), base_store.len());
    can.suppress_attention(&mut can_store, -30.0);
    let x = VideoTensor::uniform(Dims::new(3, 4, 16, 16, 1), 0.0, 1.0, &mut common::rng(6)).unwrap();
    let a = can.logits(&can_store, &x).unwrap();
    let b = base.logits(&base_store, &x).unwrap();
    for (ra, rb) in a.iter().zip(&b) {
        for (u, v) in ra.iter().zip(rb) {
            assert!((u - v).abs() <= 1e-6, "{u} vs {v}");
        }
    }
}

#[test]
fn constant_classifier_scores_chance() {
    let spec = tiny("tinycan-baseline");
    let mut store = ParamStore::new();
    let model = Model::new(&spec, &mut store, 1).unwrap();
    store.value_mut(model.fc.weight).fill(0.0);
    store.value_mut(model.fc.bias.unwrap()).copy_from_slice(&[1.0, 0.0, 0.0, 0.0, 0.0]);
    let clips = small_clips(2, 4);
    let acc = evaluate(&model, &store, &clips, 1).unwrap();
    assert_eq!(acc.top1, 0.2);
    assert_eq!(acc.top5, 1.0);
    assert_eq!(acc.count, 20);
}

#[test]
fn class_count_mismatch_is_a_config_error() {
    let spec = tiny("tinycan-baseline");
    let mut store = ParamStore::new();
    let model = Model::new(&spec, &mut store, 1).unwrap();
    let mut clips = small_clips(2, 1);
    clips[0].label = 7;
    assert!(matches!(evaluate(&model, &store, &clips, 1), Err(Error::Config(_))));
    let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
    assert!(matches!(train(&spec, &clips, &clips, &cfg, None), Err(Error::Config(_))));
}

#[test]
fn wrong_clip_shape_is_a_shape_error() {
    let spec = tiny("tinycan");
    let mut store = ParamStore::new();
    let model = Model::new(&spec, &mut store, 1).unwrap();
    let x = VideoTensor::zeros(Dims::new(1, 8, 32, 32, 1)).unwrap();
    assert!(matches!(model.logits(&store, &x), Err(Error::Shape(_))));
}

#[test]
fn training_is_reproducible_and_thread_count_free() {
    let spec = tiny("tinycan");
    let clips = small_clips(4, 4);
    let cfg = TrainConfig { epochs: 2, batch_size: 4, ..TrainConfig::default() };
    let a = train(&spec, &clips[..16], &clips[16..], &TrainConfig { threads: 1, ..cfg.clone() }, None).unwrap();
    let b = train(&spec, &clips[..16], &clips[16..], &TrainConfig { threads: 1, ..cfg.clone() }, None).unwrap();
    let c = train(&spec, &clips[..16], &clips[16..], &TrainConfig { threads: 3, ..cfg }, None).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.metrics, c.metrics);
    for ((_, p), (_, q)) in a.best.iter().zip(b.best.iter()) {
        let bits = |v: &[can_core::Real]| v.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>();
        assert_eq!(bits(&p.value), bits(&q.value), "{}", p.name);
    }
}

#[test]
fn reloaded_best_checkpoint_replays_logged_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let spec = tiny("tinycan");
    let clips = small_clips(9, 6);
    let cfg = TrainConfig { epochs: 3, batch_size: 8, threads: 1, ..TrainConfig::default() };
    let out = train(&spec, &clips[..20], &clips[20..], &cfg, Some(dir.path())).unwrap();
    let log = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(log.lines().count(), 3);
    for (line, m) in log.lines().zip(&out.metrics) {
        assert_eq!(line, m.tsv_line());
        assert_eq!(line.split('\t').count(), 5);
    }
    let mut store = ParamStore::new();
    let model = Model::new(&spec, &mut store, 99).unwrap();
    load_into(&dir.path().join(BEST_CHECKPOINT), spec.hash(), &mut store).unwrap();
    let acc = evaluate(&model, &store, &clips[20..], 1).unwrap();
    assert_eq!(acc.top1, out.metrics[out.best_epoch - 1].val_top1);
    assert!(out.metrics.iter().all(|m| m.val_top1 <= acc.top1));
}

#[test]
fn checkpoint_for_another_network_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    let spec = tiny("tinycan-baseline");
    let mut store = ParamStore::new();
    Model::new(&spec, &mut store, 1).unwrap();
    write_checkpoint(&path, spec.hash(), &store).unwrap();
    let other = tiny("tinycan");
    let mut s2 = ParamStore::new();
    Model::new(&other, &mut s2, 1).unwrap();
    assert!(matches!(load_into(&path, other.hash(), &mut s2), Err(Error::Config(_))));
}

#[test]
fn bad_training_config_is_rejected() {
    let spec = tiny("tinycan-baseline");
    let clips = small_clips(1, 1);
    for cfg in [
        TrainConfig { lr: 0.0, ..TrainConfig::default() },
        TrainConfig { epochs: 0, ..TrainConfig::default() },
        TrainConfig { momentum: 1.0, ..TrainConfig::default() },
    ] {
        assert!(matches!(train(&spec, &clips, &clips, &cfg, None), Err(Error::Config(_))));
    }
}

#[test]
fn inference_matches_straight_line_network() {
    let spec = tiny("tinycan");
    let mut store = ParamStore::new();
    let model = Model::new(&spec, &mut store, 2).unwrap();
    common::jitter(&mut store, 0.05, &mut common::rng(2));
    let x = small_clips(2, 1)[3].frames.clone();
    let fast = evaluate_forward(&model, &store, &x);
    let slow = common::model(&x, &model, &store);
    assert!(fast.max_abs_diff(&slow).unwrap() <= 1e-10);
}

fn evaluate_forward(model: &Model, store: &ParamStore, x: &VideoTensor) -> VideoTensor {
    can_core::autograd::evaluate(store, x, |t, v| model.forward(t, v)).unwrap()
}

#[test]
#[ignore = "per-path deltas of 0.30/0.11/0.30 M are not reachable with the stated PMM/LMM/GMM shapes; exact deltas are 0.198/0.001/0.198 M"]
fn gscm_single_path_deltas_match_reported_values() {
    let base = count_cost(&NetSpec::named("resnet50").unwrap()).unwrap().params_millions();
    for (name, want) in [("resnet50-pmm", 0.30), ("resnet50-lmm", 0.11), ("resnet50-gmm", 0.30)] {
        let got = count_cost(&NetSpec::named(name).unwrap()).unwrap().params_millions() - base;
        assert!(((got - want) / want).abs() <= 0.05, "{name}: +{got:.3} M, want +{want} M");
    }
}
