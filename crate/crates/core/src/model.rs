//! Encoders and the student-teacher pair.
//!
//! Two residual encoder families stand in for large backbones: a multilayer
//! perceptron with additive skip blocks for vector data, and a small strided
//! convolutional stack with residual blocks for images. The teacher is the
//! gradient-trained network; the student is updated only by an exponential
//! moving average toward the teacher.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Tape, Tensor, ValueId};

/// What the encoder consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderInput {
    Vector { dim: usize },
    /// Three-channel images of fixed extents.
    Image { height: usize, width: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

/// Architecture of one encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub input: EncoderInput,
    /// Stem widths: layer widths for vector data, channel counts for
    /// image data (each image stem convolution halves the spatial size).
    pub hidden: Vec<usize>,
    /// Residual blocks at the last hidden width.
    pub blocks: usize,
    pub representation_dim: usize,
    pub activation: Activation,
}

impl EncoderSpec {
    pub fn vector(dim: usize, hidden: Vec<usize>, blocks: usize, representation_dim: usize) -> Self {
        EncoderSpec {
            input: EncoderInput::Vector { dim },
            hidden,
            blocks,
            representation_dim,
            activation: Activation::Relu,
        }
    }

    pub fn image(height: usize, width: usize, hidden: Vec<usize>, blocks: usize, representation_dim: usize) -> Self {
        EncoderSpec {
            input: EncoderInput::Image { height, width },
            hidden,
            blocks,
            representation_dim,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.representation_dim < 2 {
            return Err(Error::config(format!(
                "representation_dim {} must be at least 2",
                self.representation_dim
            )));
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::config(format!("invalid hidden widths {:?}", self.hidden)));
        }
        match self.input {
            EncoderInput::Vector { dim: 0 } => {
                Err(Error::config("input dimension must be positive"))
            }
            EncoderInput::Image { height, width } if height < 2 || width < 2 => {
                Err(Error::config(format!("image extents {height}x{width} too small")))
            }
            _ => Ok(()),
        }
    }

    /// Flattened input extent of one sample.
    pub fn input_len(&self) -> usize {
        match self.input {
            EncoderInput::Vector { dim } => dim,
            EncoderInput::Image { height, width } => 3 * height * width,
        }
    }

    /// Batch tensor shape for `n` samples.
    pub fn batch_shape(&self, n: usize) -> Vec<usize> {
        match self.input {
            EncoderInput::Vector { dim } => vec![n, dim],
            EncoderInput::Image { height, width } => vec![n, 3, height, width],
        }
    }
}

/// Ordered, named parameter tensors of one encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.push((name.into(), tensor));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        for (_, t) in self.entries.iter_mut() {
            t.set_trainable(trainable);
        }
    }

    /// Same names, order and shapes.
    pub fn same_geometry(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape())
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// All values concatenated in entry order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_values());
        for (_, t) in &self.entries {
            out.extend_from_slice(t.values());
        }
        out
    }

    /// Overwrite all values from a flat slice in entry order.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.total_values() {
            return Err(Error::contract(format!(
                "flat length {} but parameters hold {}",
                flat.len(),
                self.total_values()
            )));
        }
        let mut offset = 0;
        for (_, t) in self.entries.iter_mut() {
            let n = t.numel();
            t.values_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn from_entries(entries: Vec<(String, Tensor)>) -> ParamSet {
        ParamSet { entries }
    }
}

/// Tape handles for one bound parameter set, in entry order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    ids: Vec<ValueId>,
}

impl BoundParams {
    pub fn ids(&self) -> &[ValueId] {
        &self.ids
    }

    /// Gradients per parameter after backward; zeros where backward never
    /// reached (for example behind a detach).
    pub fn grads(&self, tape: &Tape) -> Vec<Vec<f64>> {
        self.ids
            .iter()
            .map(|&id| match tape.grad(id) {
                Some(g) => g.to_vec(),
                None => vec![0.0; tape.values(id).len()],
            })
            .collect()
    }
}

/// Register every parameter tensor as a tape leaf. `trainable_override`
/// forces the flag regardless of what the tensors carry.
pub fn bind_params(
    tape: &mut Tape,
    params: &ParamSet,
    trainable_override: Option<bool>,
) -> BoundParams {
    let ids = params
        .tensors()
        .map(|t| match trainable_override {
            Some(flag) => tape.leaf(&t.clone().with_trainable(flag)),
            None => tape.leaf(t),
        })
        .collect();
    BoundParams { ids }
}

fn uniform_tensor(rng: &mut RngStream, shape: Vec<usize>, bound: f64) -> Tensor {
    let numel: usize = shape.iter().product();
    let values = (0..numel).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::new(values, shape).expect("shape/values constructed together")
}

/// Fan-in-scaled uniform initialization: weights from
/// `U(-sqrt(6/fan_in), sqrt(6/fan_in))` (variance `2/fan_in`), biases zero.
/// Deterministic under `seed`. Parameters are created trainable.
pub fn init_params(spec: &EncoderSpec, seed: u64) -> Result<ParamSet> {
    spec.validate()?;
    let mut rng = RngStream::new(seed).derive_named("init");
    let mut params = ParamSet { entries: Vec::new() };
    match spec.input {
        EncoderInput::Vector { dim } => {
            let mut fan_in = dim;
            for (i, &width) in spec.hidden.iter().enumerate() {
                let bound = (6.0 / fan_in as f64).sqrt();
                params.push(format!("stem{i}.weight"), uniform_tensor(&mut rng, vec![fan_in, width], bound));
                params.push(format!("stem{i}.bias"), Tensor::zeros(vec![width]));
                fan_in = width;
            }
            let width = *spec.hidden.last().unwrap();
            for i in 0..spec.blocks {
                let bound = (6.0 / width as f64).sqrt();
                params.push(format!("block{i}.weight"), uniform_tensor(&mut rng, vec![width, width], bound));
                params.push(format!("block{i}.bias"), Tensor::zeros(vec![width]));
            }
            let bound = (6.0 / width as f64).sqrt();
            params.push("head.weight", uniform_tensor(&mut rng, vec![width, spec.representation_dim], bound));
            params.push("head.bias", Tensor::zeros(vec![spec.representation_dim]));
        }
        EncoderInput::Image { .. } => {
            let mut channels = 3;
            for (i, &oc) in spec.hidden.iter().enumerate() {
                let fan_in = channels * 9;
                let bound = (6.0 / fan_in as f64).sqrt();
                params.push(format!("conv{i}.weight"), uniform_tensor(&mut rng, vec![oc, channels, 3, 3], bound));
                params.push(format!("conv{i}.bias"), Tensor::zeros(vec![oc]));
                channels = oc;
            }
            for i in 0..spec.blocks {
                let fan_in = channels * 9;
                let bound = (6.0 / fan_in as f64).sqrt();
                params.push(format!("convblock{i}.weight"), uniform_tensor(&mut rng, vec![channels, channels, 3, 3], bound));
                params.push(format!("convblock{i}.bias"), Tensor::zeros(vec![channels]));
            }
            let bound = (6.0 / channels as f64).sqrt();
            params.push("head.weight", uniform_tensor(&mut rng, vec![channels, spec.representation_dim], bound));
            params.push("head.bias", Tensor::zeros(vec![spec.representation_dim]));
        }
    }
    params.set_trainable(true);
    Ok(params)
}

/// Forward pass through the encoder defined by `spec`, consuming the bound
/// parameters in entry order. Returns the `N x d` representation node.
pub fn encode(
    tape: &mut Tape,
    spec: &EncoderSpec,
    bound: &BoundParams,
    input: ValueId,
) -> Result<ValueId> {
    let mut next = bound.ids.iter().copied();
    let mut take = |what: &str| {
        next.next()
            .ok_or_else(|| Error::contract(format!("bound parameters exhausted at {what}")))
    };
    match spec.input {
        EncoderInput::Vector { dim } => {
            if tape.shape(input).len() != 2 || tape.shape(input)[1] != dim {
                return Err(Error::shape(format!(
                    "encoder wants [N, {dim}], got {:?}",
                    tape.shape(input)
                )));
            }
            let mut h = input;
            for _ in &spec.hidden {
                let w = take("stem weight")?;
                let b = take("stem bias")?;
                let lin = tape.matmul(h, w)?;
                let lin = tape.add_bias(lin, b)?;
                h = tape.relu(lin);
            }
            for _ in 0..spec.blocks {
                let w = take("block weight")?;
                let b = take("block bias")?;
                let lin = tape.matmul(h, w)?;
                let lin = tape.add_bias(lin, b)?;
                let act = tape.relu(lin);
                h = tape.add(h, act)?;
            }
            let w = take("head weight")?;
            let b = take("head bias")?;
            let lin = tape.matmul(h, w)?;
            tape.add_bias(lin, b)
        }
        EncoderInput::Image { height, width } => {
            let s = tape.shape(input).to_vec();
            if s.len() != 4 || s[1] != 3 || s[2] != height || s[3] != width {
                return Err(Error::shape(format!(
                    "encoder wants [N, 3, {height}, {width}], got {s:?}"
                )));
            }
            let mut h = input;
            for _ in &spec.hidden {
                let w = take("conv weight")?;
                let b = take("conv bias")?;
                let conv = tape.conv2d(h, w, b, 2, 1)?;
                h = tape.relu(conv);
            }
            for _ in 0..spec.blocks {
                let w = take("conv block weight")?;
                let b = take("conv block bias")?;
                let conv = tape.conv2d(h, w, b, 1, 1)?;
                let act = tape.relu(conv);
                h = tape.add(h, act)?;
            }
            let pooled = tape.mean_pool_spatial(h)?;
            let w = take("head weight")?;
            let b = take("head bias")?;
            let lin = tape.matmul(pooled, w)?;
            tape.add_bias(lin, b)
        }
    }
}

/// One-call forward for a plain (non-shared) parameter set.
pub fn encode_batch(
    tape: &mut Tape,
    spec: &EncoderSpec,
    params: &ParamSet,
    batch: &Tensor,
) -> Result<(ValueId, BoundParams)> {
    let bound = bind_params(tape, params, None);
    let input = tape.leaf(batch);
    let rep = encode(tape, spec, &bound, input)?;
    Ok((rep, bound))
}

/// Both representation views of one batch.
#[derive(Debug, Clone)]
pub struct TwoView {
    /// Teacher representation of the augmented view; gradients flow.
    pub teacher_rep: ValueId,
    /// Student representation of the raw view; detached when the student
    /// gradient is blocked.
    pub student_rep: ValueId,
    pub teacher_params: BoundParams,
    pub student_params: BoundParams,
}

/// The gradient-trained teacher and its moving-average student.
#[derive(Debug, Clone)]
pub struct StudentTeacher {
    spec: EncoderSpec,
    teacher: ParamSet,
    student: ParamSet,
    tau: f64,
}

impl StudentTeacher {
    /// Initialize the teacher from `seed`; the student starts as an exact
    /// copy, flagged non-trainable.
    pub fn new(spec: EncoderSpec, seed: u64, tau: f64) -> Result<StudentTeacher> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::config(format!("tau {tau} outside [0, 1]")));
        }
        let teacher = init_params(&spec, seed)?;
        let mut student = teacher.clone();
        student.set_trainable(false);
        Ok(StudentTeacher { spec, teacher, student, tau })
    }

    pub fn from_parts(spec: EncoderSpec, teacher: ParamSet, student: ParamSet, tau: f64) -> Result<StudentTeacher> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::config(format!("tau {tau} outside [0, 1]")));
        }
        if !teacher.same_geometry(&student) {
            return Err(Error::contract("teacher/student parameter geometry differs"));
        }
        Ok(StudentTeacher { spec, teacher, student, tau })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn teacher(&self) -> &ParamSet {
        &self.teacher
    }

    pub fn teacher_mut(&mut self) -> &mut ParamSet {
        &mut self.teacher
    }

    pub fn student(&self) -> &ParamSet {
        &self.student
    }

    pub fn student_mut(&mut self) -> &mut ParamSet {
        &mut self.student
    }

    /// Student update: `s <- tau*s + (1 - tau)*t` elementwise. The teacher
    /// is untouched and the student stays non-trainable.
    pub fn ema_update(&mut self) {
        let tau = self.tau;
        for ((_, s), (_, t)) in self.student.entries.iter_mut().zip(&self.teacher.entries) {
            for (sv, &tv) in s.values_mut().iter_mut().zip(t.values()) {
                *sv = tau * *sv + (1.0 - tau) * tv;
            }
        }
    }

    /// Run both encoders: the teacher on the augmented batch (on the tape,
    /// trainable) and the student on the raw batch. With `block_student`
    /// the student output is detached and its parameters bound frozen;
    /// without it the student trains by gradient like the teacher.
    pub fn two_view_forward(
        &self,
        tape: &mut Tape,
        raw_batch: &Tensor,
        aug_batch: &Tensor,
        block_student: bool,
    ) -> Result<TwoView> {
        if raw_batch.shape()[0] != aug_batch.shape()[0] {
            return Err(Error::shape(format!(
                "view batches misaligned: {:?} vs {:?}",
                raw_batch.shape(),
                aug_batch.shape()
            )));
        }
        let teacher_params = bind_params(tape, &self.teacher, None);
        let aug_in = tape.leaf(aug_batch);
        let teacher_rep = encode(tape, &self.spec, &teacher_params, aug_in)?;

        let student_params = bind_params(tape, &self.student, Some(!block_student));
        let raw_in = tape.leaf(raw_batch);
        let student_raw = encode(tape, &self.spec, &student_params, raw_in)?;
        let student_rep = if block_student { tape.detach(student_raw) } else { student_raw };

        Ok(TwoView { teacher_rep, student_rep, teacher_params, student_params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_grad, max_rel_err};

    fn small_spec() -> EncoderSpec {
        EncoderSpec::vector(6, vec![8], 2, 4)
    }

    fn random_batch(spec: &EncoderSpec, n: usize, seed: u64) -> Tensor {
        let mut rng = RngStream::new(seed);
        let shape = spec.batch_shape(n);
        let numel: usize = shape.iter().product();
        Tensor::new((0..numel).map(|_| rng.uniform(-1.0, 1.0)).collect(), shape).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(EncoderSpec::vector(6, vec![8], 1, 1).validate().is_err());
        assert!(EncoderSpec::vector(6, vec![0], 1, 4).validate().is_err());
        assert!(EncoderSpec::vector(6, vec![], 1, 4).validate().is_err());
        assert!(small_spec().validate().is_ok());
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let spec = small_spec();
        let a = init_params(&spec, 42).unwrap();
        let b = init_params(&spec, 42).unwrap();
        assert_eq!(a, b);
        let c = init_params(&spec, 43).unwrap();
        assert_ne!(a, c);
        for (name, t) in a.iter() {
            if name.ends_with(".bias") {
                assert!(t.values().iter().all(|&v| v == 0.0), "{name} has nonzero bias");
            }
            assert!(t.trainable());
        }
    }

    #[test]
    fn init_weight_variance_tracks_fan_in() {
        let spec = EncoderSpec::vector(256, vec![256], 0, 8);
        let params = init_params(&spec, 1).unwrap();
        let w = params.get("stem0.weight").unwrap();
        let n = w.numel() as f64;
        let mean = w.values().iter().sum::<f64>() / n;
        let var = w.values().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let expect = 2.0 / 256.0;
        assert!((var - expect).abs() / expect < 0.10, "var {var} vs {expect}");
    }

    #[test]
    fn encode_output_shape_and_batch_independence() {
        let spec = small_spec();
        let params = init_params(&spec, 3).unwrap();
        let batch = random_batch(&spec, 5, 10);

        let mut tape = Tape::new();
        let (rep, _) = encode_batch(&mut tape, &spec, &params, &batch).unwrap();
        assert_eq!(tape.shape(rep), &[5, 4]);
        let full = tape.values(rep).to_vec();

        // row 2 alone reproduces row 2 of the batch bitwise
        let row: Vec<f64> = batch.values()[2 * 6..3 * 6].to_vec();
        let single = Tensor::new(row, vec![1, 6]).unwrap();
        let mut tape2 = Tape::new();
        let (rep2, _) = encode_batch(&mut tape2, &spec, &params, &single).unwrap();
        assert_eq!(tape2.values(rep2), &full[2 * 4..3 * 4]);
    }

    #[test]
    fn encode_gradient_matches_finite_differences() {
        let spec = small_spec();
        let params = init_params(&spec, 7).unwrap();
        let batch = random_batch(&spec, 3, 11);

        let mut tape = Tape::new();
        let (rep, bound) = encode_batch(&mut tape, &spec, &params, &batch).unwrap();
        let loss = tape.mean(rep, None).unwrap();
        tape.backward(loss).unwrap();
        let analytic = bound.grads(&tape);

        for (slot, (name, tensor)) in params.iter().enumerate() {
            let numeric = finite_diff_grad(
                |probe| {
                    let mut p = params.clone();
                    let entries: Vec<(String, Tensor)> = p
                        .iter()
                        .map(|(n, t)| {
                            let t = if n == name { probe.clone() } else { t.clone() };
                            (n.to_string(), t)
                        })
                        .collect();
                    p = ParamSet::from_entries(entries);
                    let mut tape = Tape::new();
                    let (rep, _) = encode_batch(&mut tape, &spec, &p, &batch)?;
                    let loss = tape.mean(rep, None)?;
                    Ok(tape.scalar_value(loss))
                },
                tensor,
                1e-5,
            )
            .unwrap();
            let err = max_rel_err(&analytic[slot], numeric.values());
            assert!(err < 1e-5, "{name}: rel err {err}");
        }
    }

    #[test]
    fn image_encoder_shapes_and_gradients() {
        let spec = EncoderSpec::image(6, 6, vec![4], 1, 3);
        let params = init_params(&spec, 5).unwrap();
        let batch = random_batch(&spec, 2, 8);

        let mut tape = Tape::new();
        let (rep, bound) = encode_batch(&mut tape, &spec, &params, &batch).unwrap();
        assert_eq!(tape.shape(rep), &[2, 3]);

        let loss = tape.mean(rep, None).unwrap();
        tape.backward(loss).unwrap();
        let analytic = bound.grads(&tape);

        // check the first conv weight only; the rest share the machinery
        let (name, tensor) = params.iter().next().unwrap();
        let numeric = finite_diff_grad(
            |probe| {
                let entries: Vec<(String, Tensor)> = params
                    .iter()
                    .map(|(n, t)| (n.to_string(), if n == name { probe.clone() } else { t.clone() }))
                    .collect();
                let p = ParamSet::from_entries(entries);
                let mut tape = Tape::new();
                let (rep, _) = encode_batch(&mut tape, &spec, &p, &batch)?;
                let loss = tape.mean(rep, None)?;
                Ok(tape.scalar_value(loss))
            },
            tensor,
            1e-5,
        )
        .unwrap();
        assert!(max_rel_err(&analytic[0], numeric.values()) < 1e-5);
    }

    #[test]
    fn ema_endpoints_and_midpoint() {
        let spec = small_spec();
        let mut st = StudentTeacher::new(spec.clone(), 2, 1.0).unwrap();
        for t in st.teacher_mut().tensors_mut() {
            for v in t.values_mut() {
                *v += 1.0;
            }
        }
        let before = st.student().clone();
        st.ema_update();
        assert_eq!(st.student(), &before, "tau=1 must freeze the student");

        let mut st = StudentTeacher::new(spec.clone(), 2, 0.0).unwrap();
        for t in st.teacher_mut().tensors_mut() {
            for v in t.values_mut() {
                *v = 7.25;
            }
        }
        st.ema_update();
        for t in st.student().tensors() {
            assert!(t.values().iter().all(|&v| v == 7.25), "tau=0 must copy the teacher");
        }

        let mut st = StudentTeacher::new(spec, 2, 0.5).unwrap();
        for t in st.student_mut().tensors_mut() {
            for v in t.values_mut() {
                *v = 0.0;
            }
        }
        for t in st.teacher_mut().tensors_mut() {
            for v in t.values_mut() {
                *v = 1.0;
            }
        }
        st.ema_update();
        for t in st.student().tensors() {
            assert!(t.values().iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn ema_rejects_bad_tau_and_keeps_geometry() {
        let spec = small_spec();
        assert!(StudentTeacher::new(spec.clone(), 2, -0.1).is_err());
        assert!(StudentTeacher::new(spec.clone(), 2, 1.5).is_err());

        let mut st = StudentTeacher::new(spec, 2, 0.5).unwrap();
        for _ in 0..5 {
            st.ema_update();
            assert!(st.teacher().same_geometry(st.student()));
            assert!(st.student().tensors().all(|t| !t.trainable()));
        }
    }

    #[test]
    fn ema_fixed_point_is_preserved() {
        let spec = small_spec();
        for tau in [0.0, 0.25, 0.5, 0.999, 1.0] {
            let mut st = StudentTeacher::new(spec.clone(), 9, tau).unwrap();
            // student starts equal to the teacher
            st.ema_update();
            for (s, t) in st.student().tensors().zip(st.teacher().tensors()) {
                for (a, b) in s.values().iter().zip(t.values()) {
                    assert!((a - b).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn two_view_matches_when_student_equals_teacher_and_views_agree() {
        let spec = small_spec();
        let mut st = StudentTeacher::new(spec.clone(), 4, 0.0).unwrap();
        st.ema_update(); // tau=0: student == teacher bitwise
        let batch = random_batch(&spec, 4, 6);

        let mut tape = Tape::new();
        let views = st.two_view_forward(&mut tape, &batch, &batch, true).unwrap();
        assert_eq!(tape.values(views.teacher_rep), tape.values(views.student_rep));
    }

    #[test]
    fn two_view_blocks_student_gradients() {
        let spec = small_spec();
        let st = StudentTeacher::new(spec.clone(), 4, 0.5).unwrap();
        let raw = random_batch(&spec, 4, 6);
        let aug = random_batch(&spec, 4, 16);

        let mut tape = Tape::new();
        let views = st.two_view_forward(&mut tape, &raw, &aug, true).unwrap();
        assert_ne!(tape.values(views.teacher_rep), tape.values(views.student_rep));

        let diff = tape.sub(views.teacher_rep, views.student_rep).unwrap();
        let sq = tape.square(diff);
        let loss = tape.mean(sq, None).unwrap();
        tape.backward(loss).unwrap();

        for g in views.student_params.grads(&tape) {
            assert!(g.iter().all(|&x| x == 0.0), "student gradient leaked");
        }
        let teacher_nonzero = views
            .teacher_params
            .grads(&tape)
            .iter()
            .any(|g| g.iter().any(|&x| x != 0.0));
        assert!(teacher_nonzero, "teacher gradient missing");
    }
}
