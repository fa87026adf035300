use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vdcompress::net::{ChannelParams, EncoderDecoderLayout, LayerKind, Model, NetworkSpec};
use vdcompress::{Clip, Frame};

/// Plain C×H×W image used by the replay oracle.
#[derive(Clone, Debug, PartialEq)]
struct Img {
    c: usize,
    h: usize,
    w: usize,
    v: Vec<f32>,
}

impl Img {
    fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.v[(c * self.h + y) * self.w + x]
    }
}

fn naive_conv(x: &Img, w: &[f32], out: usize, k: usize, stride: usize, groups: usize) -> Img {
    let pad = k / 2;
    let cin_g = x.c / groups;
    let out_g = out / groups;
    let ho = (x.h + 2 * pad - k) / stride + 1;
    let wo = (x.w + 2 * pad - k) / stride + 1;
    let mut v = vec![0.0f32; out * ho * wo];
    for o in 0..out {
        let g = o / out_g;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0f32;
                for ci in 0..cin_g {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                continue;
                            }
                            let wv = w[((o * cin_g + ci) * k + ky) * k + kx];
                            acc += wv * x.at(g * cin_g + ci, iy as usize, ix as usize);
                        }
                    }
                }
                v[(o * ho + oy) * wo + ox] = acc;
            }
        }
    }
    Img {
        c: out,
        h: ho,
        w: wo,
        v,
    }
}

fn naive_shuffle(x: &Img) -> Img {
    let c = x.c / 4;
    let (h, w) = (x.h * 2, x.w * 2);
    let mut v = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                v[(ch * h + y) * w + xx] = x.at(ch * 4 + (y % 2) * 2 + xx % 2, y / 2, xx / 2);
            }
        }
    }
    Img { c, h, w, v }
}

fn naive_reflect(x: &Img, h: usize, w: usize) -> Img {
    let mirror = |i: usize, n: usize| if i < n { i } else { 2 * (n - 1) - i };
    let mut v = Vec::with_capacity(x.c * h * w);
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                v.push(x.at(c, mirror(y, x.h), mirror(xx, x.w)));
            }
        }
    }
    Img { c: x.c, h, w, v }
}

fn img(f: &Frame) -> Img {
    let (c, h, w) = f.dims();
    Img {
        c,
        h,
        w,
        v: f.data().to_vec(),
    }
}

/// Straight-line replay of one block using only the layer table and raw
/// parameter slices.
fn replay_block(model: &Model, block: usize, frames: [&Frame; 3], map: Option<&Frame>) -> Frame {
    let spec = model.spec();
    let m = spec.spatial_multiple();
    let (_, h, w) = frames[0].dims();
    let (hp, wp) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let padded: Vec<Img> = frames.iter().map(|f| naive_reflect(&img(f), hp, wp)).collect();
    let map = map.map(|f| naive_reflect(&img(f), hp, wp));
    let mut v = Vec::new();
    for f in &padded {
        v.extend_from_slice(&f.v);
        if let Some(m) = &map {
            v.extend_from_slice(&m.v);
        }
    }
    let mut x = Img {
        c: v.len() / (hp * wp),
        h: hp,
        w: wp,
        v,
    };
    let offset: usize = spec.blocks[..block].iter().map(|b| b.layers.len()).sum();
    let layers = &spec.blocks[block].layers;
    let mut outs: Vec<Img> = Vec::new();
    for (i, ls) in layers.iter().enumerate() {
        let p = &model.layers()[offset + i];
        let mut y = naive_conv(&x, p.weight.data(), ls.out_channels, ls.kernel, ls.stride(), ls.groups);
        let plane = y.h * y.w;
        match ls.channel_params {
            ChannelParams::Bias => {
                let b = p.bias.as_ref().unwrap().data();
                for (j, v) in y.v.iter_mut().enumerate() {
                    *v += b[j / plane];
                }
            }
            ChannelParams::ScaleBias => {
                let s = p.scale.as_ref().unwrap().data();
                let b = p.bias.as_ref().unwrap().data();
                for (j, v) in y.v.iter_mut().enumerate() {
                    *v = *v * s[j / plane] + b[j / plane];
                }
            }
            ChannelParams::None => {}
        }
        if ls.kind == LayerKind::UpsampleConv {
            y = naive_shuffle(&y);
        }
        if matches!(ls.kind, LayerKind::Conv | LayerKind::StridedConv) {
            for v in &mut y.v {
                *v = v.max(0.0);
            }
        }
        if let Some(src) = &ls.skip_from {
            let j = layers.iter().position(|l| &l.name == src).unwrap();
            for (a, b) in y.v.iter_mut().zip(&outs[j].v) {
                *a += b;
            }
        }
        outs.push(y.clone());
        x = y;
    }
    let center = &padded[1];
    let mut out = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        for yy in 0..h {
            for xx in 0..w {
                out.push(center.at(c, yy, xx) + x.at(c, yy, xx));
            }
        }
    }
    Frame::new(3, h, w, out).unwrap()
}

fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Frame {
    Frame::new(3, h, w, (0..3 * h * w).map(|_| rng.random::<f32>()).collect()).unwrap()
}

fn random_clip(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Clip {
    let frames: Vec<Frame> = (0..5).map(|_| random_frame(rng, h, w)).collect();
    Clip::from_frames(&frames).unwrap()
}

/// Mini model with non-trivial scales and biases.
fn fixture_model(map: bool, seed: u64) -> Model {
    let spec = EncoderDecoderLayout::mini(8, map).build("fixture");
    let mut model = Model::build(&spec, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    for layer in model.layers_mut() {
        if let Some(s) = &mut layer.scale {
            s.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
        }
        if let Some(b) = &mut layer.bias {
            b.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
    }
    model
}

fn max_diff(a: &Frame, b: &Frame) -> f32 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

#[test]
fn zero_weights_pass_the_center_frame_through() {
    let spec = EncoderDecoderLayout::mini(8, true).build("zero");
    let model = Model::zeroed(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let clip = random_clip(&mut rng, 12, 20);
    let map = Frame::filled(3, 12, 20, 0.1);
    let f: Vec<Frame> = clip.frames();
    let out = model.forward_block(0, [&f[0], &f[1], &f[2]], Some(&map)).unwrap();
    assert_eq!(out, f[1]);
    let out = model.forward_cascade(&clip, Some(&map)).unwrap();
    assert_eq!(out, clip.center());
}

#[test]
fn block_matches_layer_replay() {
    for (map, seed) in [(true, 1u64), (false, 2)] {
        let model = fixture_model(map, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 10);
        let f: Vec<Frame> = (0..3).map(|_| random_frame(&mut rng, 16, 12)).collect();
        let m = map.then(|| Frame::filled(3, 16, 12, 0.05));
        for block in 0..2 {
            let got = model.forward_block(block, [&f[0], &f[1], &f[2]], m.as_ref()).unwrap();
            let want = replay_block(&model, block, [&f[0], &f[1], &f[2]], m.as_ref());
            let d = max_diff(&got, &want);
            assert!(d < 1e-5, "block {block}, map {map}: max diff {d}");
        }
    }
}

#[test]
fn odd_sizes_are_padded_and_cropped_back() {
    let model = fixture_model(false, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f: Vec<Frame> = (0..3).map(|_| random_frame(&mut rng, 30, 34)).collect();
    let got = model.forward_block(0, [&f[0], &f[1], &f[2]], None).unwrap();
    assert_eq!(got.dims(), (3, 30, 34));
    let want = replay_block(&model, 0, [&f[0], &f[1], &f[2]], None);
    assert!(max_diff(&got, &want) < 1e-5);
}

#[test]
fn cascade_is_composition_of_blocks() {
    let model = fixture_model(true, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let clip = random_clip(&mut rng, 8, 8);
    let map = Frame::filled(3, 8, 8, 0.2);
    let f = clip.frames();
    let mid: Vec<Frame> = (0..3)
        .map(|t| {
            model
                .forward_block(0, [&f[t], &f[t + 1], &f[t + 2]], Some(&map))
                .unwrap()
        })
        .collect();
    let want = model.forward_block(1, [&mid[0], &mid[1], &mid[2]], Some(&map)).unwrap();
    assert_eq!(model.forward_cascade(&clip, Some(&map)).unwrap(), want);
}

#[test]
fn batch_forward_equals_per_clip_forward() {
    let model = fixture_model(false, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let clips: Vec<Clip> = (0..3).map(|_| random_clip(&mut rng, 8, 12)).collect();
    let batch = model.forward_cascade_batch(&clips, None).unwrap();
    for (clip, out) in clips.iter().zip(&batch) {
        assert_eq!(&model.forward_cascade(clip, None).unwrap(), out);
    }
}

#[test]
fn noise_map_presence_must_match_spec() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let clip = random_clip(&mut rng, 8, 8);
    let map = Frame::filled(3, 8, 8, 0.1);
    let student = fixture_model(false, 1);
    assert!(student.forward_cascade(&clip, Some(&map)).is_err());
    let baseline = fixture_model(true, 1);
    assert!(baseline.forward_cascade(&clip, None).is_err());
}

#[test]
fn wrong_frame_count_is_rejected() {
    let model = fixture_model(false, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let frames: Vec<Frame> = (0..4).map(|_| random_frame(&mut rng, 8, 8)).collect();
    let clip = Clip::from_frames(&frames).unwrap();
    assert!(model.forward_cascade(&clip, None).is_err());
}

#[test]
fn build_is_deterministic_and_shapes_follow_spec() {
    let spec = EncoderDecoderLayout::mini(16, false).build("mini");
    let a = Model::build(&spec, 0).unwrap();
    let b = Model::build(&spec, 0).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, Model::build(&spec, 1).unwrap());
    for (l, p) in spec.layers().zip(a.layers()) {
        assert_eq!(
            p.weight.shape(),
            &[l.out_channels, l.in_channels / l.groups, l.kernel, l.kernel]
        );
    }
    assert_eq!(a.count_params(), spec.count_params());
}

#[test]
fn constant_clip_gives_finite_output() {
    let model = fixture_model(false, 12);
    let frames: Vec<Frame> = (0..5).map(|_| Frame::filled(3, 8, 8, 0.5)).collect();
    let out = model
        .forward_cascade(&Clip::from_frames(&frames).unwrap(), None)
        .unwrap();
    assert!(out.data().iter().all(|v| v.is_finite()));
}

#[test]
fn spec_rejects_invalid_toml() {
    assert!(NetworkSpec::from_toml("name = 3").is_err());
}
