//! Knowledge distillation: the student matches a teacher's outputs and the
//! ground truth under an α-weighted pair of Charbonnier losses.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clip::{stack_frames, Frame};
use crate::error::{Error, Result};
use crate::io::{read_clip, read_model, teacher_output_path};
use crate::metrics::charbonnier;
use crate::net::{Model, NetworkSpec};
use crate::noise::Corruption;
use crate::optim::AdamState;
use crate::tensor::Tensor;
use crate::train::{adam_update, charbonnier_pass, Batch, ClipPool};

/// Where teacher outputs come from. Relative paths resolve against the
/// directory of the config file that names them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TeacherBinding {
    /// The ground truth itself. Only meaningful for testing.
    #[default]
    Oracle,
    /// A trained network given by its spec and weights files.
    Network { spec: PathBuf, weights: PathBuf },
    /// Precomputed one-frame `.pdvd` outputs keyed by clip id.
    Files { dir: PathBuf },
}

impl TeacherBinding {
    pub fn resolve(&self, base: &Path) -> TeacherBinding {
        let join = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        match self {
            TeacherBinding::Oracle => TeacherBinding::Oracle,
            TeacherBinding::Network { spec, weights } => TeacherBinding::Network {
                spec: join(spec),
                weights: join(weights),
            },
            TeacherBinding::Files { dir } => TeacherBinding::Files { dir: join(dir) },
        }
    }

    pub fn load(&self) -> Result<Box<dyn Teacher>> {
        Ok(match self {
            TeacherBinding::Oracle => Box::new(OracleTeacher),
            TeacherBinding::Network { spec, weights } => {
                let spec = NetworkSpec::load(spec)?;
                Box::new(NetworkTeacher::new(read_model(weights, &spec)?))
            }
            TeacherBinding::Files { dir } => Box::new(FileTeacher::new(dir)),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    /// Weight of the teacher term; the ground-truth term gets `1 − alpha`.
    pub alpha: f32,
    pub eps: f32,
    pub lr: f32,
    pub batch_size: usize,
    pub total_steps: usize,
    pub teacher: TeacherBinding,
    pub noise: Corruption,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            alpha: 0.5,
            eps: 1e-4,
            lr: 1e-3,
            batch_size: 32,
            total_steps: 2000,
            teacher: TeacherBinding::Oracle,
            noise: Corruption::default(),
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 || self.total_steps == 0 {
            return bad("batch_size and total_steps must be positive".into());
        }
        self.noise.validate()?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: DistillConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialise")
    }

    /// Load a config and resolve the teacher paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::from_toml(&text)?;
        c.teacher = c.teacher.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(c)
    }
}

/// Produces a denoised center frame for every clip of a batch.
pub trait Teacher {
    fn denoise_batch(&self, batch: &Batch) -> Result<Vec<Frame>>;
}

/// Returns the batch's ground truth.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleTeacher;

impl Teacher for OracleTeacher {
    fn denoise_batch(&self, batch: &Batch) -> Result<Vec<Frame>> {
        Ok(batch.clean.clone())
    }
}

/// A frozen network. It receives noise maps if its spec takes them.
#[derive(Clone, Debug)]
pub struct NetworkTeacher {
    model: Model,
}

impl NetworkTeacher {
    pub fn new(model: Model) -> Self {
        NetworkTeacher { model }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }
}

impl Teacher for NetworkTeacher {
    fn denoise_batch(&self, batch: &Batch) -> Result<Vec<Frame>> {
        self.model
            .forward_cascade_batch(&batch.noisy, batch.maps_for(&self.model)?)
    }
}

/// Reads `<dir>/<clip id>.pdvd`, a one-frame clip, for each batch entry.
#[derive(Clone, Debug)]
pub struct FileTeacher {
    dir: PathBuf,
}

impl FileTeacher {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FileTeacher { dir: dir.into() }
    }
}

impl Teacher for FileTeacher {
    fn denoise_batch(&self, batch: &Batch) -> Result<Vec<Frame>> {
        if batch.ids.len() != batch.len() {
            return Err(Error::InvalidArgument(
                "file teacher needs a clip id per batch entry".into(),
            ));
        }
        batch
            .ids
            .iter()
            .zip(&batch.clean)
            .map(|(id, gt)| {
                let path = teacher_output_path(&self.dir, id);
                if !path.is_file() {
                    return Err(Error::MissingTeacherOutput(id.clone()));
                }
                let clip = read_clip(&path)?;
                if clip.num_frames() != 1 || clip.center().dims() != gt.dims() {
                    return Err(Error::Shape(format!(
                        "teacher output {} must be one {:?} frame",
                        path.display(),
                        gt.dims()
                    )));
                }
                Ok(clip.center())
            })
            .collect()
    }
}

/// `(total, teacher term, ground-truth term)`, with
/// `total = alpha·teacher + (1 − alpha)·gt`.
pub fn distill_loss(
    student: &[Frame],
    teacher: &[Frame],
    gt: &[Frame],
    alpha: f32,
    eps: f32,
) -> Result<(f64, f64, f64)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let s = stack_frames(student)?;
    let lt = charbonnier(&s, &stack_frames(teacher)?, eps as f64)?;
    let lg = charbonnier(&s, &stack_frames(gt)?, eps as f64)?;
    Ok((combine(alpha, lt, lg), lt, lg))
}

fn combine(alpha: f32, lt: f64, lg: f64) -> f64 {
    alpha as f64 * lt + (1.0 - alpha as f64) * lg
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistillRecord {
    pub step: usize,
    pub total: f64,
    pub l_teacher: f64,
    pub l_gt: f64,
}

impl DistillRecord {
    pub const CSV_HEADER: &'static str = "step,total,l_teacher,l_gt";

    pub fn csv_row(&self) -> String {
        format!("{},{:.9},{:.9},{:.9}", self.step, self.total, self.l_teacher, self.l_gt)
    }
}

/// One distillation step. The student must not take a noise map; the
/// teacher is only read. Losses are those before the update.
pub fn distill_train_step(
    student: &mut Model,
    batch: &Batch,
    teacher: &dyn Teacher,
    cfg: &DistillConfig,
    step: usize,
    state: &mut AdamState,
) -> Result<DistillRecord> {
    if student.spec().noise_map_input {
        return Err(Error::InvalidArgument(format!(
            "student {:?} takes a noise map; distil into a spec without one",
            student.spec().name
        )));
    }
    let teacher_out = teacher.denoise_batch(batch)?;
    let (lt, lg, grads) = distill_gradients(student, batch, &teacher_out, cfg.alpha, cfg.eps)?;
    adam_update(student, &grads, state, cfg.lr)?;
    Ok(DistillRecord {
        step,
        total: combine(cfg.alpha, lt, lg),
        l_teacher: lt,
        l_gt: lg,
    })
}

/// Teacher and ground-truth loss terms of the student on `batch`, and the
/// gradient of their α-weighted total in the model's parameter order.
pub fn distill_gradients(
    student: &Model,
    batch: &Batch,
    teacher_out: &[Frame],
    alpha: f32,
    eps: f32,
) -> Result<(f64, f64, Vec<Tensor>)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let pass = charbonnier_pass(
        student,
        batch,
        &[(alpha, teacher_out), (1.0 - alpha, &batch.clean)],
        eps,
    )?;
    Ok((pass.terms[0], pass.terms[1], pass.grads))
}

/// Run `cfg.total_steps` distillation steps on batches drawn from `pool`.
pub fn distill(
    student: &mut Model,
    teacher: &dyn Teacher,
    pool: &ClipPool,
    cfg: &DistillConfig,
    seed: u64,
    mut on_step: impl FnMut(&DistillRecord),
) -> Result<()> {
    cfg.validate()?;
    let mut state = AdamState::new();
    for step in 0..cfg.total_steps {
        let batch = pool.batch(step, cfg.batch_size, seed, &cfg.noise)?;
        let rec = distill_train_step(student, &batch, teacher, cfg, step, &mut state)?;
        on_step(&rec);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(v: f32) -> Vec<Frame> {
        vec![Frame::filled(3, 2, 2, v)]
    }

    #[test]
    fn loss_closed_forms() {
        let x = frames(0.3);
        let (t, lt, lg) = distill_loss(&x, &x, &x, 0.5, 1e-4).unwrap();
        assert!((t - 1e-4).abs() < 1e-10 && lt == lg);
        let (t, lt, lg) = distill_loss(&x, &frames(0.5), &frames(0.7), 0.5, 1e-4).unwrap();
        assert!((t - 0.5 * (lt + lg)).abs() < 1e-15);
        assert!((lt - (0.04f64 + 1e-8).sqrt()).abs() < 1e-7);
        assert!(distill_loss(&x, &x, &x, 1.5, 1e-4).is_err());
        assert_eq!(combine(0.5, 0.2, 0.4), 0.30000000000000004);
        for alpha in [0.0, 0.25, 1.0] {
            let gt = frames(0.6);
            let (t, lt, lg) = distill_loss(&x, &gt, &gt, alpha, 1e-4).unwrap();
            assert_eq!(lt, lg);
            assert!((t - lg).abs() < 1e-15);
        }
    }

    #[test]
    fn config_round_trips_and_is_strict() {
        let mut cfg = DistillConfig::default();
        assert_eq!(DistillConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        cfg.teacher = TeacherBinding::Files { dir: "out".into() };
        cfg.noise = Corruption::Awgn { sigma: 25.0 };
        assert_eq!(DistillConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(DistillConfig::from_toml("alpha = 1.5").is_err());
        assert!(DistillConfig::from_toml("temperature = 2.0").is_err());
        let t =
            DistillConfig::from_toml("[teacher]\nkind = \"network\"\nspec = \"a.spec\"\nweights = \"a.pdwt\"").unwrap();
        assert_eq!(
            t.teacher.resolve(Path::new("/cfg")),
            TeacherBinding::Network {
                spec: "/cfg/a.spec".into(),
                weights: "/cfg/a.pdwt".into()
            }
        );
    }
}
