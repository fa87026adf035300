use proptest::prelude::*;
use vdcompress::io::{
    decode_clip, encode_clip, load_dataset, read_clip_dir, read_frame_folder, read_model, write_clip,
    write_frame_folder, write_model, write_png,
};
use vdcompress::net::{EncoderDecoderLayout, Model};
use vdcompress::scene::synth_clip;
use vdcompress::{Clip, Error, Frame};

#[test]
fn weights_round_trip_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = EncoderDecoderLayout::mini(8, true).build("m");
    let model = Model::build(&spec, 5).unwrap();
    let path = dir.path().join("m.pdwt");
    write_model(&path, &model).unwrap();
    let back = read_model(&path, &spec).unwrap();
    let clip = synth_clip(5, 16, 16, 3).unwrap();
    let map = Frame::filled(3, 16, 16, 0.05);
    let a = model.forward_cascade(&clip, Some(&map)).unwrap();
    let b = back.forward_cascade(&clip, Some(&map)).unwrap();
    assert_eq!(
        a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );

    let other = EncoderDecoderLayout::mini(4, true).build("other");
    assert!(read_model(&path, &other).is_err());
}

#[test]
fn png_folders_load_into_shuffled_windows() {
    let root = tempfile::tempdir().unwrap();
    let long = synth_clip(7, 20, 24, 1).unwrap();
    write_frame_folder(root.path().join("long"), &long).unwrap();
    write_frame_folder(root.path().join("short"), &synth_clip(3, 20, 24, 2).unwrap()).unwrap();
    write_clip(root.path().join("extra.pdvd"), &synth_clip(5, 16, 16, 4).unwrap()).unwrap();

    let back = read_frame_folder(root.path().join("long")).unwrap();
    assert_eq!(back.num_frames(), 7);
    for (a, b) in back.data().iter().zip(long.data()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
    }

    let set = load_dataset(root.path(), 16, 8, 7).unwrap();
    // long: 3 windows × 1×2 crops; extra: 1 window × 1 crop; short skipped
    assert_eq!(set.len(), 3 * 2 + 1);
    assert!(set
        .iter()
        .all(|(_, c)| c.num_frames() == 5 && c.height() == 16 && c.width() == 16));
    assert!(set.iter().any(|(id, _)| id == "long/t2/y0x8"));
    assert!(set.iter().any(|(id, _)| id == "extra/t0/y0x0"));
    assert_eq!(set, load_dataset(root.path(), 16, 8, 7).unwrap());
    let order = |s: &[(String, Clip)]| s.iter().map(|(id, _)| id.clone()).collect::<Vec<_>>();
    let mut a = order(&set);
    let mut b = order(&load_dataset(root.path(), 16, 8, 8).unwrap());
    a.sort();
    b.sort();
    assert_eq!(a, b);
    assert_eq!(read_clip_dir(root.path()).unwrap().len(), 3);
}

#[test]
fn mismatched_or_gapped_frames_are_errors() {
    let root = tempfile::tempdir().unwrap();
    let dir = root.path().join("clip");
    write_frame_folder(&dir, &synth_clip(5, 8, 8, 1).unwrap()).unwrap();
    write_png(dir.join("00005.png"), &Frame::filled(3, 8, 10, 0.5)).unwrap();
    assert!(matches!(read_frame_folder(&dir), Err(Error::Dataset(_))));
    std::fs::remove_file(dir.join("00005.png")).unwrap();
    std::fs::remove_file(dir.join("00002.png")).unwrap();
    assert!(matches!(read_frame_folder(&dir), Err(Error::Dataset(_))));
}

proptest! {
    #[test]
    fn clip_encoding_round_trips(t in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let n = t * 3 * h * w;
        let data: Vec<f32> = (0..n).map(|i| ((i as u64).wrapping_mul(seed | 1) % 1001) as f32 / 1000.0).collect();
        let clip = Clip::new(t, 3, h, w, data).unwrap();
        let bytes = encode_clip(&clip);
        prop_assert_eq!(bytes.len(), 24 + 4 * n);
        prop_assert_eq!(decode_clip(&bytes).unwrap(), clip);
        prop_assert!(decode_clip(&bytes[..bytes.len() - 1]).is_err());
    }
}
