//! Multilayer perceptron heads: `[Linear -> LayerNorm -> Mish] x layers -> Linear -> out act`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernels;
use super::matrix::{gemm, Matrix};
use super::tape::{Gradients, Tape, Var};
use super::{AutodiffError, ParamTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HiddenActivation {
    Mish,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Linear,
    Tanh,
    /// Softmax over consecutive groups of `group` outputs.
    SemNorm { group: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Number of hidden blocks before the output projection.
    pub num_layers: usize,
    pub output_dim: usize,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
    pub use_layer_norm: bool,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dim: usize, num_layers: usize, output_dim: usize, output_activation: OutputActivation) -> Self {
        Self {
            input_dim,
            hidden_dim,
            num_layers,
            output_dim,
            hidden_activation: HiddenActivation::Mish,
            output_activation,
            use_layer_norm: true,
        }
    }

    pub fn validate(&self) -> Result<(), AutodiffError> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 || self.num_layers == 0 {
            return Err(AutodiffError::InvalidSpec(format!("all MLP dimensions must be positive: {self:?}")));
        }
        if let OutputActivation::SemNorm { group } = self.output_activation {
            if group == 0 || self.output_dim % group != 0 {
                return Err(AutodiffError::InvalidSpec(format!(
                    "output dim {} not divisible by simplex size {group}",
                    self.output_dim
                )));
            }
        }
        Ok(())
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        let mut fan_in = self.input_dim;
        for _ in 0..self.num_layers {
            n += fan_in * self.hidden_dim + self.hidden_dim;
            if self.use_layer_norm {
                n += 2 * self.hidden_dim;
            }
            fan_in = self.hidden_dim;
        }
        n + fan_in * self.output_dim + self.output_dim
    }
}

/// Tape handles for one binding of an [`Mlp`]'s parameters.
#[derive(Clone, Debug)]
pub struct MlpBinding {
    vars: Vec<Var>,
}

impl MlpBinding {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    name: String,
    spec: MlpSpec,
    params: Vec<ParamTensor>,
}

impl Mlp {
    pub fn new(name: &str, spec: MlpSpec, rng: &mut impl Rng) -> Result<Self, AutodiffError> {
        spec.validate()?;
        let mut params = Vec::new();
        let mut fan_in = spec.input_dim;
        for l in 0..spec.num_layers {
            params.push(ParamTensor::new(format!("{name}.l{l}.weight"), init_weight(fan_in, spec.hidden_dim, rng)));
            params.push(ParamTensor::new(format!("{name}.l{l}.bias"), Matrix::zeros(1, spec.hidden_dim)));
            if spec.use_layer_norm {
                params.push(ParamTensor::new(format!("{name}.l{l}.ln_gain"), Matrix::filled(1, spec.hidden_dim, 1.0)));
                params.push(ParamTensor::new(format!("{name}.l{l}.ln_bias"), Matrix::zeros(1, spec.hidden_dim)));
            }
            fan_in = spec.hidden_dim;
        }
        params.push(ParamTensor::new(format!("{name}.out.weight"), init_weight(fan_in, spec.output_dim, rng)));
        params.push(ParamTensor::new(format!("{name}.out.bias"), Matrix::zeros(1, spec.output_dim)));
        Ok(Self { name: name.to_string(), spec, params })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[ParamTensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Zeroes the output projection so the head starts at a constant output.
    pub fn zero_output_layer(&mut self) {
        let n = self.params.len();
        self.params[n - 2].value.fill(0.0);
        self.params[n - 1].value.fill(0.0);
    }

    /// Sets every parameter to zero.
    pub fn zero_all(&mut self) {
        for p in &mut self.params {
            p.value.fill(0.0);
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    fn per_layer(&self) -> usize {
        if self.spec.use_layer_norm {
            4
        } else {
            2
        }
    }

    /// Places every parameter on `tape` as a gradient-receiving leaf.
    pub fn bind(&self, tape: &mut Tape) -> MlpBinding {
        MlpBinding { vars: self.params.iter().map(|p| tape.variable(p.value.clone())).collect() }
    }

    /// Places every parameter on `tape` as a constant (frozen head).
    pub fn bind_frozen(&self, tape: &mut Tape) -> MlpBinding {
        MlpBinding { vars: self.params.iter().map(|p| tape.constant(p.value.clone())).collect() }
    }

    fn check_input(&self, cols: usize) -> Result<(), AutodiffError> {
        if cols != self.spec.input_dim {
            return Err(AutodiffError::DimensionMismatch {
                layer: format!("{}.l0", self.name),
                expected: self.spec.input_dim,
                actual: cols,
            });
        }
        Ok(())
    }

    /// Recorded forward pass of a `batch x input_dim` node.
    pub fn forward(&self, tape: &mut Tape, binding: &MlpBinding, x: Var) -> Result<Var, AutodiffError> {
        self.check_input(tape.shape(x).1)?;
        let v = &binding.vars;
        let step = self.per_layer();
        let mut h = x;
        for l in 0..self.spec.num_layers {
            let base = l * step;
            h = tape.matmul(h, v[base]);
            h = tape.add_row(h, v[base + 1]);
            if self.spec.use_layer_norm {
                h = tape.layer_norm(h, v[base + 2], v[base + 3]);
            }
            h = tape.mish(h);
        }
        let base = self.spec.num_layers * step;
        h = tape.matmul(h, v[base]);
        h = tape.add_row(h, v[base + 1]);
        Ok(match self.spec.output_activation {
            OutputActivation::Linear => h,
            OutputActivation::Tanh => tape.tanh(h),
            OutputActivation::SemNorm { group } => tape.group_softmax(h, group),
        })
    }

    /// Adds the gradients of one binding into the parameters' `grad` buffers.
    pub fn accumulate_grads(&mut self, grads: &Gradients, binding: &MlpBinding) {
        for (p, &v) in self.params.iter_mut().zip(&binding.vars) {
            if let Some(g) = grads.wrt(v) {
                p.grad.axpy(1.0, g);
            }
        }
    }

    /// Untraced forward pass of a `batch x input_dim` matrix.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix, AutodiffError> {
        self.check_input(x.cols())?;
        let w0 = &self.params[0].value;
        let mut h = Matrix::broadcast_row(self.params[1].value.data(), x.rows());
        gemm(1.0, x, false, w0, false, 1.0, &mut h);
        Ok(self.finish_first_layer(h))
    }

    /// Untraced forward pass where the trailing input columns are the same
    /// `shared` vector for every row; `prefix` holds the leading columns.
    pub fn infer_shared_suffix(&self, prefix: &Matrix, shared: &[f64]) -> Result<Matrix, AutodiffError> {
        self.check_input(prefix.cols() + shared.len())?;
        let w0 = &self.params[0].value;
        let p = prefix.cols();
        let mut bias = self.params[1].value.clone();
        if !shared.is_empty() {
            let w_shared = Matrix::from_vec(shared.len(), w0.cols(), w0.data()[p * w0.cols()..].to_vec());
            gemm(1.0, &Matrix::row_vector(shared.to_vec()), false, &w_shared, false, 1.0, &mut bias);
        }
        let mut h = Matrix::broadcast_row(bias.data(), prefix.rows());
        if p > 0 {
            let w_prefix = Matrix::from_vec(p, w0.cols(), w0.data()[..p * w0.cols()].to_vec());
            gemm(1.0, prefix, false, &w_prefix, false, 1.0, &mut h);
        }
        Ok(self.finish_first_layer(h))
    }

    fn finish_first_layer(&self, mut h: Matrix) -> Matrix {
        let step = self.per_layer();
        let rows = h.rows();
        for l in 0..self.spec.num_layers {
            let base = l * step;
            if l > 0 {
                let mut next = Matrix::broadcast_row(self.params[base + 1].value.data(), rows);
                gemm(1.0, &h, false, &self.params[base].value, false, 1.0, &mut next);
                h = next;
            }
            for r in 0..rows {
                let row = h.row_mut(r);
                if self.spec.use_layer_norm {
                    kernels::layer_norm_row(row);
                    let g = self.params[base + 2].value.data();
                    let b = self.params[base + 3].value.data();
                    for ((x, gv), bv) in row.iter_mut().zip(g).zip(b) {
                        *x = *x * gv + bv;
                    }
                }
                row.iter_mut().for_each(|x| *x = kernels::mish(*x));
            }
        }
        let base = self.spec.num_layers * step;
        let mut out = Matrix::broadcast_row(self.params[base + 1].value.data(), rows);
        gemm(1.0, &h, false, &self.params[base].value, false, 1.0, &mut out);
        match self.spec.output_activation {
            OutputActivation::Linear => {}
            OutputActivation::Tanh => out.data_mut().iter_mut().for_each(|x| *x = x.tanh()),
            OutputActivation::SemNorm { group } => {
                for r in 0..rows {
                    kernels::group_softmax_inplace(out.row_mut(r), group);
                }
            }
        }
        out
    }

    /// Forward pass of a single input vector.
    pub fn forward_vector(&self, input: &[f64]) -> Result<Vec<f64>, AutodiffError> {
        Ok(self.infer(&Matrix::row_vector(input.to_vec()))?.into_vec())
    }

    /// `self = rate * self + (1 - rate) * source`, elementwise.
    pub fn ema_from(&mut self, source: &Mlp, rate: f64) {
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            for (tv, sv) in t.value.data_mut().iter_mut().zip(s.value.data()) {
                *tv = rate * *tv + (1.0 - rate) * sv;
            }
        }
    }

    pub fn copy_from(&mut self, source: &Mlp) {
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            t.value = s.value.clone();
        }
    }
}

fn init_weight(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Matrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
    Matrix::from_vec(fan_in, fan_out, data)
}
