use std::f64::consts::PI;

use vdcompress::noise::{add_periodic, corrupt_clip, substream, Corruption, NoiseParams, Periodic};
use vdcompress::{Clip, Frame};

/// Magnitude of one bin of the 2-D DFT by direct summation.
fn dft_bin(plane: &[f32], h: usize, w: usize, kx: usize, ky: usize) -> f64 {
    let (mut re, mut im) = (0.0f64, 0.0f64);
    for y in 0..h {
        for x in 0..w {
            let a = -2.0 * PI * (kx as f64 * x as f64 / w as f64 + ky as f64 * y as f64 / h as f64);
            re += plane[y * w + x] as f64 * a.cos();
            im += plane[y * w + x] as f64 * a.sin();
        }
    }
    re.hypot(im)
}

#[test]
fn periodic_peak_lands_on_its_bin() {
    let comps = [
        Periodic {
            fx: 0.125,
            fy: 0.0,
            phase: 0.7,
        },
        Periodic {
            fx: 0.25,
            fy: 0.0,
            phase: 0.0,
        },
        Periodic {
            fx: 0.25,
            fy: 0.0,
            phase: 0.0,
        },
    ];
    let mut f = Frame::filled(1, 64, 64, 0.0);
    add_periodic(&mut f, [0.1, 0.0, 0.0], &comps, false, &mut substream(0, 0)).unwrap();
    let peak = dft_bin(f.plane(0), 64, 64, 8, 0);
    let want = 0.1 * 64.0 * 64.0 / 2.0;
    assert!((peak / want - 1.0).abs() < 0.01, "{peak} vs {want}");
    assert!(dft_bin(f.plane(0), 64, 64, 4, 0) < 1e-3 * want);
}

#[test]
fn shot_noise_is_independent_between_frames() {
    let clip = Clip::from_frames(&vec![Frame::filled(1, 1000, 1000, 0.5); 2]).unwrap();
    let mut p = NoiseParams::zero();
    p.sigma_s = 0.01;
    let noisy = corrupt_clip(&clip, &p, 21).unwrap();
    let a: Vec<f64> = noisy.frame_data(0).iter().map(|v| *v as f64 - 0.5).collect();
    let b: Vec<f64> = noisy.frame_data(1).iter().map(|v| *v as f64 - 0.5).collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let rho = dot(&a, &b) / (dot(&a, &a) * dot(&b, &b)).sqrt();
    assert!(rho.abs() < 0.01, "{rho}");
}

#[test]
fn physics_corruption_draws_fresh_parameters_per_seed() {
    let clip = Clip::from_frames(&vec![Frame::filled(3, 8, 8, 0.5); 5]).unwrap();
    let c = Corruption::default();
    let (a, ma) = c.apply(&clip, 1).unwrap();
    let (b, mb) = c.apply(&clip, 2).unwrap();
    assert_ne!(a, b);
    assert_ne!(ma, mb);
    assert_eq!(c.apply(&clip, 1).unwrap().0, a);
}
