use fgos_core::asgp::{asgp_gate, probe_masks, AsgpWeights, GateMode};
use fgos_core::fablock::{fa_scan, lgb};
use fgos_core::flops::Meter;
use fgos_core::io::{weights_from_bytes, weights_to_bytes};
use fgos_core::nn::{conv2d, pointwise, relu_grid, sigmoid};
use fgos_core::pipeline::{align, brm, fgos_block, gfa, AlignWeights, Model, PipelineConfig, PsiMode};
use fgos_core::{dwt_haar, idwt_haar, FeatureGrid, SsmParams, SubbandSet, WeightStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_grid(seed: u64, c: usize, h: usize, w: usize) -> FeatureGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureGrid::from_fn(c, h, w, |_, _, _| rng.gen_range(-1.0..1.0))
}

fn small_cfg() -> PipelineConfig {
    PipelineConfig {
        channels: [8, 8, 16, 16],
        seed: 3,
        ..PipelineConfig::default()
    }
}

/// The block written out from the public module operations.
fn block_by_hand(x: &FeatureGrid, stage: usize, cfg: &PipelineConfig, w: &WeightStore) -> FeatureGrid {
    let c = cfg.channels[stage - 1];
    let p = format!("s{stage}.");
    let s = dwt_haar(x).unwrap();
    let aw = AlignWeights::from_store(w, &p, c, c / 4, cfg.align_bound).unwrap();
    let ll = align(&s.ll, [&s.lh, &s.hl, &s.hh], &aw).unwrap();
    let psi = match cfg.psi {
        PsiMode::Selective => SsmParams::from_store(w, &p, c, cfg.state_dim).unwrap(),
        PsiMode::Identity => SsmParams::identity(c),
    };
    let low = lgb(&fa_scan(&ll, &psi, &cfg.assignment).unwrap(), &cfg.lgb.for_stage(stage), w, &format!("{p}lgb.")).unwrap();
    let asw = AsgpWeights::from_store(w, &p, c, &cfg.asgp).unwrap();
    let (m0, m1, _) = probe_masks(&ll, &cfg.asgp, &asw, cfg.probe_seed(stage - 1)).unwrap();
    let [lh, hl, hh] = asgp_gate(&m0, &m1, [&s.lh, &s.hl, &s.hh], &cfg.asgp).unwrap();
    idwt_haar(&SubbandSet::new(low, lh, hl, hh).unwrap(), x.height(), x.width()).unwrap()
}

#[test]
fn block_equals_hand_chained_modules() {
    let cfg = small_cfg();
    let w = cfg.seeded_weights().unwrap();
    for stage in 1..=4 {
        let c = cfg.channels[stage - 1];
        let x = random_grid(stage as u64, c, 16, 24);
        let got = fgos_block(&x, stage, &cfg, &w).unwrap();
        let want = block_by_hand(&x, stage, &cfg, &w);
        assert!(got.max_abs_diff(&want).unwrap() <= 1e-5, "stage {stage}");
    }
}

#[test]
fn forward_equals_hand_chained_modules() {
    let cfg = small_cfg();
    let w = cfg.seeded_weights().unwrap();
    let img = random_grid(11, 1, 64, 64).map(|v| 0.5 + 0.5 * v);
    let got = Model::new(&cfg, &w).unwrap().forward_metered(&img, &mut Meter::new()).unwrap();

    let c = cfg.channels;
    let mut x = relu_grid(&conv2d(&img, &w.expect("stem.w", &[c[0], 1, 3, 3]).unwrap(), &w.expect("stem.b", &[c[0]]).unwrap(), c[0], 3, 1).unwrap());
    let mut feats = Vec::new();
    for s in 1..=4 {
        let y = block_by_hand(&x, s, &cfg, &w);
        if s < 4 {
            let wt = w.expect(&format!("down{s}.w"), &[c[s], c[s - 1], 3, 3]).unwrap();
            let b = w.expect(&format!("down{s}.b"), &[c[s]]).unwrap();
            x = relu_grid(&conv2d(&y, &wt, &b, c[s], 3, 2).unwrap());
        }
        feats.push(y);
    }
    for (a, b) in got.features.iter().zip(&feats) {
        assert!(a.max_abs_diff(b).unwrap() <= 1e-5);
    }
    let fused = gfa(&feats, &w, 16).unwrap();
    let refined = brm(&fused, &w, "brm.").unwrap();
    let head = pointwise(&refined, &w.expect("head.w", &[1, 16]).unwrap(), &w.expect("head.b", &[1]).unwrap(), 1).unwrap();
    let want = head.map(sigmoid);
    assert!(got.mask.max_abs_diff(&want).unwrap() <= 1e-5);
}

#[test]
fn degenerate_block_is_a_wavelet_roundtrip() {
    let mut cfg = small_cfg();
    cfg.psi = PsiMode::Identity;
    cfg.asgp.gate = GateMode::Open;
    let mut w = cfg.seeded_weights().unwrap();
    for s in 1..=4 {
        w.zero_prefix(&format!("s{s}.align."));
        w.zero_prefix(&format!("s{s}.lgb.pw2"));
    }
    for stage in 1..=4 {
        let x = random_grid(20 + stage as u64, cfg.channels[stage - 1], 16, 16);
        let y = fgos_block(&x, stage, &cfg, &w).unwrap();
        assert!(y.max_abs_diff(&x).unwrap() <= 1e-5);
    }
}

#[test]
fn zero_input_stays_zero_without_biases() {
    let cfg = small_cfg();
    let mut w = cfg.seeded_weights().unwrap();
    let biases: Vec<String> = w.iter().map(|(k, _)| k.clone()).filter(|k| k.ends_with(".b") || k.ends_with(".b1") || k.ends_with(".b2")).collect();
    for b in biases {
        w.zero_prefix(&b);
    }
    let y = fgos_block(&FeatureGrid::zeros(8, 16, 16), 1, &cfg, &w).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn weights_survive_serialization() {
    let cfg = small_cfg();
    let w = cfg.seeded_weights().unwrap();
    let back = weights_from_bytes(&mut weights_to_bytes(&w).as_slice()).unwrap();
    assert_eq!(back, w);
    let img = random_grid(4, 1, 64, 64);
    let a = Model::new(&cfg, &w).unwrap().forward(&img).unwrap();
    let b = Model::new(&cfg, &back).unwrap().forward(&img).unwrap();
    assert_eq!(a, b);
}

#[test]
fn missing_weight_is_reported_by_name() {
    let cfg = small_cfg();
    let mut w = WeightStore::new();
    for (k, v) in cfg.seeded_weights().unwrap().iter() {
        if k != "s2.ssm.d" {
            w.insert(k.clone(), v.clone());
        }
    }
    let err = Model::new(&cfg, &w).err().unwrap().to_string();
    assert!(err.contains("s2.ssm.d"), "{err}");
}

#[test]
fn stage_outputs_follow_channel_plan() {
    let cfg = PipelineConfig::default();
    let w = cfg.seeded_weights().unwrap();
    let out = Model::new(&cfg, &w).unwrap().forward_metered(&random_grid(1, 1, 64, 128), &mut Meter::new()).unwrap();
    let shapes: Vec<_> = out.features.iter().map(FeatureGrid::shape).collect();
    assert_eq!(shapes, vec![(16, 64, 128), (32, 32, 64), (64, 16, 32), (128, 8, 16)]);
    assert_eq!(out.traces.len(), 4);
    assert!(out.traces.iter().all(|t| t.gate.data().iter().all(|&g| g > 0.0 && g < 1.0)));
}
