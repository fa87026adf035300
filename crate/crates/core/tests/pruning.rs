use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vdcompress::net::{EncoderDecoderLayout, Model, NetworkSpec};
use vdcompress::planner::{analyze_sparsity, apply_plan, plan_channels, uniform_profile, PruningPlan};
use vdcompress::{Clip, Frame};

fn set(plan: &mut PruningPlan, name: &str, target: usize) {
    plan.layers.iter_mut().find(|l| l.name == name).unwrap().target = target;
}

#[test]
fn identity_plan_keeps_weights_bit_identical() {
    let spec = EncoderDecoderLayout::mini(8, true).build("mini");
    let model = Model::build(&spec, 1).unwrap();
    let (pruned, plan) = apply_plan(&model, &PruningPlan::identity(&spec), "mini").unwrap();
    assert_eq!(pruned, model);
    assert_eq!(plan.predicted_params, spec.count_params());
}

#[test]
fn hand_computed_slice() {
    let spec = EncoderDecoderLayout::mini(4, false).build("tiny");
    let mut model = Model::build(&spec, 2).unwrap();
    let i = model.layer_index("s1.out0").unwrap();
    let filter = model.layers()[i].weight.len() / 4;
    for (c, norm) in [5.0f32, 0.0, 3.0, 0.0].iter().enumerate() {
        let w = &mut model.layers_mut()[i].weight.data_mut()[c * filter..(c + 1) * filter];
        w.fill(0.0);
        w[0] = *norm;
    }
    let mut plan = PruningPlan::identity(&spec);
    set(&mut plan, "s1.out0", 2);
    assert!(apply_plan(&model, &plan, "stale").is_err());
    plan.refresh_prediction(&spec).unwrap();
    let (pruned, plan) = apply_plan(&model, &plan, "tiny-pruned").unwrap();
    let lp = plan.layers.iter().find(|l| l.name == "s1.out0").unwrap();
    assert_eq!(lp.kept.as_deref(), Some(&[0usize, 2][..]));
    let consumer = model.layer("s1.out1").unwrap();
    let sliced = pruned.layer("s1.out1").unwrap();
    assert_eq!(sliced.weight.shape(), &[3, 2, 3, 3]);
    for o in 0..3 {
        for (k, src) in [0usize, 2].iter().enumerate() {
            assert_eq!(
                sliced.weight.data()[(o * 2 + k) * 9..(o * 2 + k + 1) * 9],
                consumer.weight.data()[(o * 4 + src) * 9..(o * 4 + src + 1) * 9]
            );
        }
    }
    let bias = model.layer("s1.out0").unwrap().bias.as_ref().unwrap().data().to_vec();
    assert_eq!(
        pruned.layer("s1.out0").unwrap().bias.as_ref().unwrap().data(),
        &[bias[0], bias[2]]
    );
    assert_eq!(pruned.count_params(), plan.predicted_params);
}

#[test]
fn skip_partners_share_kept_sets() {
    let spec = EncoderDecoderLayout::mini(8, false).build("mini");
    let model = Model::build(&spec, 3).unwrap();
    let plan = plan_channels(&uniform_profile(&spec, 0.5), &spec).unwrap();
    let (pruned, plan) = apply_plan(&model, &plan, "half").unwrap();
    let kept = |n: &str| plan.layers.iter().find(|l| l.name == n).unwrap().kept.clone().unwrap();
    assert_eq!(kept("s1.inc1"), kept("s1.up1"));
    assert_eq!(kept("s2.down0_c0"), kept("s2.up2"));
    assert_eq!(pruned.count_params(), plan.predicted_params);
    assert!(pruned.count_params() < model.count_params());
    for l in &plan.layers {
        assert!(l.target.is_power_of_two() || l.target == l.original);
    }
    assert_eq!(pruned.spec().layer("s1.out1").unwrap().out_channels, 3);
    let dense = uniform_profile(pruned.spec(), 1.0);
    assert!(plan_channels(&dense, pruned.spec()).unwrap().is_identity());
    assert_eq!(
        analyze_sparsity(&pruned, 0.0)
            .unwrap()
            .iter()
            .map(|e| e.ratio)
            .fold(0.0, f64::max),
        1.0
    );
}

#[test]
fn reference_half_profile_meets_size_bound() {
    let spec = EncoderDecoderLayout::REFERENCE.build("reference");
    let plan = plan_channels(&uniform_profile(&spec, 0.5), &spec).unwrap();
    let pruned = plan.pruned_spec(&spec, "pruned").unwrap();
    assert_eq!(pruned.count_params(), plan.predicted_params);
    assert!(pruned.count_params() <= 650_372, "{}", pruned.count_params());
}

#[test]
fn plan_toml_round_trip_and_mismatch() {
    let spec = EncoderDecoderLayout::mini(8, false).build("mini");
    let plan = plan_channels(&uniform_profile(&spec, 0.3), &spec).unwrap();
    assert_eq!(PruningPlan::from_toml(&plan.to_toml()).unwrap(), plan);
    let mut bad = plan.clone();
    set(&mut bad, "s1.up2", 2);
    assert!(bad.validate(&spec).is_err());
    let other = EncoderDecoderLayout::mini(16, false).build("other");
    assert!(plan.validate(&other).is_err());
}

/// Zero the filters of dropped channels and every weight that reads them.
fn zero_dropped(model: &mut Model, plan: &PruningPlan, rng: &mut ChaCha8Rng) -> PruningPlan {
    let spec: NetworkSpec = model.spec().clone();
    let mut plan = plan.clone();
    let groups: Vec<Vec<String>> = {
        let mut g: Vec<Vec<String>> = Vec::new();
        for l in spec.layers().filter(|l| l.prunable) {
            if let Some(src) = &l.skip_from {
                g.iter_mut().find(|v| v.contains(src)).unwrap().push(l.name.clone());
            } else {
                g.push(vec![l.name.clone()]);
            }
        }
        g
    };
    for group in groups {
        let lp = plan.layers.iter().find(|l| l.name == group[0]).unwrap().clone();
        let mut idx: Vec<usize> = (0..lp.original).collect();
        idx.shuffle(rng);
        let mut kept = idx[..lp.target].to_vec();
        kept.sort_unstable();
        for name in &group {
            let li = model.layer_index(name).unwrap();
            let ls = spec.layers().nth(li).unwrap().clone();
            let per = ls.filters_per_channel();
            let next = spec.layers().nth(li + 1).unwrap().clone();
            let filter = model.layers()[li].weight.len() / ls.out_channels;
            for c in (0..lp.original).filter(|c| !kept.contains(c)) {
                model.layers_mut()[li].weight.data_mut()[c * per * filter..(c + 1) * per * filter].fill(0.0);
                let kk = next.kernel * next.kernel;
                let cin = next.in_channels;
                let w = model.layers_mut()[li + 1].weight.data_mut();
                for o in 0..next.out_channels {
                    w[(o * cin + c) * kk..(o * cin + c + 1) * kk].fill(0.0);
                }
            }
            plan.layers.iter_mut().find(|l| &l.name == name).unwrap().kept = None;
        }
    }
    plan
}

#[test]
fn dropping_zero_channels_is_lossless() {
    let spec = EncoderDecoderLayout::mini(8, true).build("mini");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut model = Model::build(&spec, 4).unwrap();
    for l in model.layers_mut() {
        if let Some(b) = &mut l.bias {
            b.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
    }
    let plan = plan_channels(&uniform_profile(&spec, 0.4), &spec).unwrap();
    let plan = zero_dropped(&mut model, &plan, &mut rng);
    let (pruned, _) = apply_plan(&model, &plan, "pruned").unwrap();
    for _ in 0..5 {
        let frames: Vec<Frame> = (0..5)
            .map(|_| Frame::new(3, 8, 12, (0..288).map(|_| rng.random()).collect()).unwrap())
            .collect();
        let clip = Clip::from_frames(&frames).unwrap();
        let map = Frame::filled(3, 8, 12, rng.random_range(0.0..0.1));
        assert_eq!(
            model.forward_cascade(&clip, Some(&map)).unwrap(),
            pruned.forward_cascade(&clip, Some(&map)).unwrap()
        );
    }
}
