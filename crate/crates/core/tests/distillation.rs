use vdcompress::distill::{
    distill, distill_gradients, distill_train_step, DistillConfig, FileTeacher, NetworkTeacher, OracleTeacher, Teacher,
};
use vdcompress::io::{teacher_output_path, write_clip};
use vdcompress::net::{EncoderDecoderLayout, Model};
use vdcompress::noise::Corruption;
use vdcompress::optim::AdamState;
use vdcompress::train::{supervised_gradients, train_supervised, ClipPool};
use vdcompress::{Batch, Clip, Error, Frame};

fn student(seed: u64) -> Model {
    Model::build(&EncoderDecoderLayout::mini(8, false).build("student"), seed).unwrap()
}

fn pool() -> ClipPool {
    ClipPool::synthetic(6, 16, 11).unwrap()
}

fn noise() -> Corruption {
    Corruption::default()
}

fn cfg(alpha: f32) -> DistillConfig {
    DistillConfig {
        alpha,
        batch_size: 2,
        total_steps: 12,
        noise: noise(),
        ..DistillConfig::default()
    }
}

fn bits(m: &Model) -> Vec<u32> {
    m.named_tensors()
        .iter()
        .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()))
        .collect()
}

struct Shifted(f32);

impl Teacher for Shifted {
    fn denoise_batch(&self, batch: &Batch) -> vdcompress::Result<Vec<Frame>> {
        Ok(batch
            .clean
            .iter()
            .map(|f| {
                let mut g = f.clone();
                g.data_mut().iter_mut().for_each(|v| *v += self.0);
                g
            })
            .collect())
    }
}

#[test]
fn oracle_teacher_trajectory_matches_supervised() {
    let c = cfg(0.5);
    let mut a = student(4);
    let mut b = student(4);
    distill(&mut a, &OracleTeacher, &pool(), &c, 9, |r| {
        assert_eq!(r.l_teacher, r.l_gt);
        assert!((r.total - r.l_gt).abs() <= 1e-12 * r.l_gt);
    })
    .unwrap();
    train_supervised(
        &mut b,
        &pool(),
        &noise(),
        c.total_steps,
        c.batch_size,
        c.lr,
        c.eps,
        9,
        |_, _| {},
    )
    .unwrap();
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&student(4)));
}

#[test]
fn oracle_gradient_equals_supervised_gradient() {
    let batch = pool().batch(0, 3, 1, &noise()).unwrap();
    let s = student(2);
    let (lg_sup, g_sup) = supervised_gradients(&s, &batch, 1e-4).unwrap();
    for alpha in [0.0, 0.25, 0.5, 0.7, 1.0] {
        let (lt, lg, g) = distill_gradients(&s, &batch, &batch.clean, alpha, 1e-4).unwrap();
        assert_eq!((lt, lg), (lg_sup, lg_sup));
        for (a, b) in g.iter().zip(&g_sup) {
            let scale = b.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-6 * scale, "alpha {alpha}: {x} vs {y}");
            }
        }
        if alpha == 0.5 {
            assert_eq!(g, g_sup);
        }
    }
}

#[test]
fn zero_alpha_ignores_the_teacher() {
    let batch = pool().batch(3, 2, 5, &noise()).unwrap();
    let run = |t: &dyn Teacher| {
        let mut m = student(6);
        let rec = distill_train_step(&mut m, &batch, t, &cfg(0.0), 0, &mut AdamState::new()).unwrap();
        assert_eq!(rec.total, rec.l_gt);
        bits(&m)
    };
    assert_eq!(run(&Shifted(0.3)), run(&Shifted(-0.2)));
    assert_eq!(run(&Shifted(0.3)), run(&OracleTeacher));
}

#[test]
fn records_are_alpha_weighted_and_teacher_is_frozen() {
    let map_spec = EncoderDecoderLayout::mini(8, true).build("teacher");
    let teacher = NetworkTeacher::new(Model::build(&map_spec, 21).unwrap());
    let before = bits(teacher.model());
    let c = DistillConfig {
        alpha: 0.3,
        total_steps: 5,
        ..cfg(0.3)
    };
    let mut s = student(1);
    distill(&mut s, &teacher, &pool(), &c, 3, |r| {
        let expect = 0.3f32 as f64 * r.l_teacher + (1.0 - 0.3f32 as f64) * r.l_gt;
        assert!((r.total - expect).abs() <= 4.0 * f64::EPSILON * r.total);
        assert_ne!(r.l_teacher, r.l_gt);
    })
    .unwrap();
    assert_eq!(before, bits(teacher.model()));
}

#[test]
fn student_with_noise_map_is_rejected() {
    let mut s = Model::build(&EncoderDecoderLayout::mini(8, true).build("s"), 1).unwrap();
    let batch = pool().batch(0, 1, 1, &noise()).unwrap();
    let err = distill_train_step(&mut s, &batch, &OracleTeacher, &cfg(0.5), 0, &mut AdamState::new());
    assert!(matches!(err, Err(Error::InvalidArgument(_))));
}

#[test]
fn file_teacher_matches_network_teacher() {
    let dir = tempfile::tempdir().unwrap();
    let teacher = NetworkTeacher::new(student(30));
    let batch = pool().all(8, &noise()).unwrap();
    let mut outs = teacher.denoise_batch(&batch).unwrap();
    for (id, o) in batch.ids.iter().zip(outs.iter_mut()) {
        o.clamp01();
        let path = teacher_output_path(dir.path(), id);
        write_clip(&path, &Clip::from_frames(std::slice::from_ref(o)).unwrap()).unwrap();
    }
    let files = FileTeacher::new(dir.path());
    assert_eq!(files.denoise_batch(&batch).unwrap(), outs);

    std::fs::remove_file(teacher_output_path(dir.path(), "scene-2")).unwrap();
    match files.denoise_batch(&batch) {
        Err(Error::MissingTeacherOutput(id)) => assert_eq!(id, "scene-2"),
        other => panic!("expected a missing-output error, got {other:?}"),
    }
}
