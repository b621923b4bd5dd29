//! Highway feedforward network with transform and carry gates tied across
//! every hidden layer.
//!
//! Layer 1 is a plain sigmoid layer mapping the spliced input to `H` units.
//! Layers `2..=L` are highway layers:
//!
//! ```text
//! h_l = σ(W_l h + b_l) ∘ σ(W_T h) + h ∘ σ(W_C h),   h = h_{l-1}
//! ```
//!
//! with a single `W_T`/`W_C` pair shared by all of them. A softmax
//! classifier sits on top of `h_L`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mathcore::{matmul, sigmoid_scalar, softmax, uniform_init, vstack, Matrix, Rng, Vector};

/// Initial weights are drawn from `U[-INIT_RANGE, INIT_RANGE)`.
pub const INIT_RANGE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// θ_h: hidden weights and biases.
    Hidden,
    /// θ_g: the tied gate matrices (and gate biases if enabled).
    Gates,
    /// θ_c: softmax weights and bias.
    Classifier,
}

/// Which parameter groups an update may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamGroupMask {
    pub update_hidden: bool,
    pub update_gates: bool,
    pub update_classifier: bool,
}

impl ParamGroupMask {
    pub const ALL: Self = ParamGroupMask {
        update_hidden: true,
        update_gates: true,
        update_classifier: true,
    };
    pub const NONE: Self = ParamGroupMask {
        update_hidden: false,
        update_gates: false,
        update_classifier: false,
    };
    pub const GATES: Self = ParamGroupMask {
        update_hidden: false,
        update_gates: true,
        update_classifier: false,
    };
    pub const GATES_AND_CLASSIFIER: Self = ParamGroupMask {
        update_hidden: false,
        update_gates: true,
        update_classifier: true,
    };

    pub fn contains(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Hidden => self.update_hidden,
            ParamGroup::Gates => self.update_gates,
            ParamGroup::Classifier => self.update_classifier,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.update_hidden || self.update_gates || self.update_classifier)
    }
}

impl fmt::Display for ParamGroupMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.update_hidden {
            parts.push("h");
        }
        if self.update_gates {
            parts.push("g");
        }
        if self.update_classifier {
            parts.push("c");
        }
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join(","))
        }
    }
}

impl FromStr for ParamGroupMask {
    type Err = Error;

    /// Parses `h,g,c`, `all` or `none`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all" => return Ok(Self::ALL),
            "none" => return Ok(Self::NONE),
            _ => {}
        }
        let mut mask = Self::NONE;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "h" => mask.update_hidden = true,
                "g" => mask.update_gates = true,
                "c" => mask.update_classifier = true,
                other => return Err(Error::argument(format!("unknown parameter group `{other}`"))),
            }
        }
        Ok(mask)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HighwayConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub output_dim: usize,
    pub gate_bias: bool,
}

impl HighwayConfig {
    pub fn new(input_dim: usize, hidden_dim: usize, num_layers: usize, output_dim: usize) -> Self {
        HighwayConfig {
            input_dim,
            hidden_dim,
            num_layers,
            output_dim,
            gate_bias: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.num_layers == 0 || self.output_dim == 0 {
            return Err(Error::argument(format!("all network dimensions must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// Number of scalars in the selected groups, computed from the
    /// dimensions alone.
    pub fn parameter_count(&self, mask: Option<ParamGroupMask>) -> usize {
        let mask = mask.unwrap_or(ParamGroupMask::ALL);
        let h = self.hidden_dim;
        let mut total = 0;
        if mask.update_hidden {
            total += self.input_dim * h + h + (self.num_layers - 1) * (h * h + h);
        }
        if mask.update_gates {
            total += 2 * h * h + if self.gate_bias { 2 * h } else { 0 };
        }
        if mask.update_classifier {
            total += self.output_dim * h + self.output_dim;
        }
        total
    }
}

/// Storage shared by the network and its gradients. Weight matrices are
/// stored output-major (`rows = fan_out`), so `W h` is a plain mat-vec.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    /// `hidden_weights[0]` is `H × input_dim`; the rest are `H × H`.
    pub hidden_weights: Vec<Matrix>,
    pub hidden_biases: Vec<Vector>,
    pub transform_gate: Matrix,
    pub carry_gate: Matrix,
    /// `(b_T, b_C)`, present only when `gate_bias` is set.
    pub gate_biases: Option<(Vector, Vector)>,
    /// `output_dim × H`.
    pub output_weights: Matrix,
    pub output_bias: Vector,
}

/// One named parameter block.
#[derive(Debug)]
pub struct Block<'a> {
    pub group: ParamGroup,
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: &'a [f64],
}

#[derive(Debug)]
pub struct BlockMut<'a> {
    pub group: ParamGroup,
    pub name: String,
    pub values: &'a mut [f64],
}

impl ParamSet {
    pub fn zeros(config: &HighwayConfig) -> Self {
        let h = config.hidden_dim;
        let mut hidden_weights = vec![Matrix::zeros(h, config.input_dim)];
        hidden_weights.extend((1..config.num_layers).map(|_| Matrix::zeros(h, h)));
        ParamSet {
            hidden_weights,
            hidden_biases: (0..config.num_layers).map(|_| Vector::zeros(h)).collect(),
            transform_gate: Matrix::zeros(h, h),
            carry_gate: Matrix::zeros(h, h),
            gate_biases: config.gate_bias.then(|| (Vector::zeros(h), Vector::zeros(h))),
            output_weights: Matrix::zeros(config.output_dim, h),
            output_bias: Vector::zeros(config.output_dim),
        }
    }

    /// Every parameter block in file order: `W1 b1 … WL bL WT WC [bT bC] WO bO`.
    pub fn blocks(&self) -> Vec<Block<'_>> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.hidden_weights.iter().zip(&self.hidden_biases).enumerate() {
            out.push(Block {
                group: ParamGroup::Hidden,
                name: format!("W{}", i + 1),
                rows: w.rows(),
                cols: w.cols(),
                values: w.as_slice(),
            });
            out.push(Block {
                group: ParamGroup::Hidden,
                name: format!("b{}", i + 1),
                rows: b.len(),
                cols: 1,
                values: b.as_slice(),
            });
        }
        for (name, m) in [("WT", &self.transform_gate), ("WC", &self.carry_gate)] {
            out.push(Block {
                group: ParamGroup::Gates,
                name: name.into(),
                rows: m.rows(),
                cols: m.cols(),
                values: m.as_slice(),
            });
        }
        if let Some((bt, bc)) = &self.gate_biases {
            for (name, b) in [("bT", bt), ("bC", bc)] {
                out.push(Block {
                    group: ParamGroup::Gates,
                    name: name.into(),
                    rows: b.len(),
                    cols: 1,
                    values: b.as_slice(),
                });
            }
        }
        out.push(Block {
            group: ParamGroup::Classifier,
            name: "WO".into(),
            rows: self.output_weights.rows(),
            cols: self.output_weights.cols(),
            values: self.output_weights.as_slice(),
        });
        out.push(Block {
            group: ParamGroup::Classifier,
            name: "bO".into(),
            rows: self.output_bias.len(),
            cols: 1,
            values: self.output_bias.as_slice(),
        });
        out
    }

    /// Mutable view of the blocks, same order as [`ParamSet::blocks`].
    pub fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
        let mut out = Vec::new();
        for (i, (w, b)) in self
            .hidden_weights
            .iter_mut()
            .zip(self.hidden_biases.iter_mut())
            .enumerate()
        {
            out.push(BlockMut {
                group: ParamGroup::Hidden,
                name: format!("W{}", i + 1),
                values: w.as_mut_slice(),
            });
            out.push(BlockMut {
                group: ParamGroup::Hidden,
                name: format!("b{}", i + 1),
                values: b,
            });
        }
        out.push(BlockMut {
            group: ParamGroup::Gates,
            name: "WT".into(),
            values: self.transform_gate.as_mut_slice(),
        });
        out.push(BlockMut {
            group: ParamGroup::Gates,
            name: "WC".into(),
            values: self.carry_gate.as_mut_slice(),
        });
        if let Some((bt, bc)) = &mut self.gate_biases {
            out.push(BlockMut {
                group: ParamGroup::Gates,
                name: "bT".into(),
                values: bt,
            });
            out.push(BlockMut {
                group: ParamGroup::Gates,
                name: "bC".into(),
                values: bc,
            });
        }
        out.push(BlockMut {
            group: ParamGroup::Classifier,
            name: "WO".into(),
            values: self.output_weights.as_mut_slice(),
        });
        out.push(BlockMut {
            group: ParamGroup::Classifier,
            name: "bO".into(),
            values: &mut self.output_bias,
        });
        out
    }

    pub fn count(&self, mask: Option<ParamGroupMask>) -> usize {
        let mask = mask.unwrap_or(ParamGroupMask::ALL);
        self.blocks()
            .iter()
            .filter(|b| mask.contains(b.group))
            .map(|b| b.values.len())
            .sum()
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        let a = self.blocks();
        let b = other.blocks();
        a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|(x, y)| x.name == y.name && x.rows == y.rows && x.cols == y.cols)
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.values.iter().all(|v| v.is_finite()))
    }

    /// All values flattened in block order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|b| b.values.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HighwayNetwork {
    config: HighwayConfig,
    pub params: ParamSet,
}

/// Intermediate values for one hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// `W_l h_{l-1} + b_l`.
    pub pre_activation: Vector,
    /// `σ(pre_activation)`.
    pub body: Vector,
    /// `T_l`; `None` for the plain first layer.
    pub transform: Option<Vector>,
    /// `C_l`; `None` for the plain first layer.
    pub carry: Option<Vector>,
    /// `h_l`.
    pub output: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `h_0`, the spliced input frame.
    pub input: Vector,
    pub layers: Vec<LayerTrace>,
    pub logits: Vector,
    /// `ŷ`, softmax of the logits.
    pub output: Vector,
}

impl ForwardTrace {
    /// `h_l` for `l` in `0..=L`.
    pub fn activation(&self, l: usize) -> &Vector {
        if l == 0 {
            &self.input
        } else {
            &self.layers[l - 1].output
        }
    }
}

/// Gradient of a scalar objective w.r.t. every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: ParamSet,
}

impl Gradients {
    pub fn zeros(config: &HighwayConfig) -> Self {
        Gradients {
            params: ParamSet::zeros(config),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        self.add_scaled(other, 1.0);
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        let src = other.params.blocks();
        for (dst, src) in self.params.blocks_mut().into_iter().zip(src) {
            for (d, s) in dst.values.iter_mut().zip(src.values) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for b in self.params.blocks_mut() {
            b.values.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn dot(&self, other: &Gradients) -> f64 {
        self.params
            .blocks()
            .iter()
            .zip(other.params.blocks())
            .map(|(a, b)| crate::mathcore::dot(a.values, b.values))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.params.is_finite()
    }

    /// Zeroes the blocks of every group the mask deselects.
    pub fn apply_mask(mut self, mask: ParamGroupMask) -> Gradients {
        for b in self.params.blocks_mut() {
            if !mask.contains(b.group) {
                b.values.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        self
    }
}

impl HighwayNetwork {
    /// Uniform `[-0.5, 0.5)` weights, zero biases.
    pub fn init(config: HighwayConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let lo = -INIT_RANGE;
        let hi = INIT_RANGE;
        let mut hidden_weights = Vec::with_capacity(config.num_layers);
        hidden_weights.push(uniform_init(rng, h, config.input_dim, lo, hi)?);
        for _ in 1..config.num_layers {
            hidden_weights.push(uniform_init(rng, h, h, lo, hi)?);
        }
        let transform_gate = uniform_init(rng, h, h, lo, hi)?;
        let carry_gate = uniform_init(rng, h, h, lo, hi)?;
        let output_weights = uniform_init(rng, config.output_dim, h, lo, hi)?;
        Ok(HighwayNetwork {
            config,
            params: ParamSet {
                hidden_weights,
                hidden_biases: (0..config.num_layers).map(|_| Vector::zeros(h)).collect(),
                transform_gate,
                carry_gate,
                gate_biases: config.gate_bias.then(|| (Vector::zeros(h), Vector::zeros(h))),
                output_weights,
                output_bias: Vector::zeros(config.output_dim),
            },
        })
    }

    /// Wraps existing parameters after checking they fit `config`.
    pub fn from_params(config: HighwayConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        if !params.same_shape(&ParamSet::zeros(&config)) {
            return Err(Error::shape("parameter blocks do not match the configuration"));
        }
        if !params.is_finite() {
            return Err(Error::Numerical("non-finite parameter".into()));
        }
        Ok(HighwayNetwork { config, params })
    }

    pub fn config(&self) -> &HighwayConfig {
        &self.config
    }

    pub fn parameter_count(&self, mask: Option<ParamGroupMask>) -> usize {
        self.params.count(mask)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(Error::shape(format!(
                "input has {} features, network expects {}",
                x.len(),
                self.config.input_dim
            )));
        }
        Ok(())
    }

    fn gate(&self, weights: &Matrix, bias: Option<&Vector>, h: &[f64]) -> Vector {
        let mut z = weights.matvec(h).expect("gate shape fixed by construction");
        if let Some(b) = bias {
            z.iter_mut().zip(b.iter()).for_each(|(z, b)| *z += b);
        }
        z.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
        z
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let p = &self.params;
        let mut layers: Vec<LayerTrace> = Vec::with_capacity(self.config.num_layers);
        for l in 0..self.config.num_layers {
            let prev: &[f64] = if l == 0 { x } else { &layers[l - 1].output };
            let mut pre = p.hidden_weights[l].matvec(prev)?;
            pre.iter_mut()
                .zip(p.hidden_biases[l].iter())
                .for_each(|(z, b)| *z += b);
            let body: Vector = pre.iter().map(|&z| sigmoid_scalar(z)).collect::<Vec<_>>().into();
            let trace = if l == 0 {
                LayerTrace {
                    output: body.clone(),
                    pre_activation: pre,
                    body,
                    transform: None,
                    carry: None,
                }
            } else {
                let (bt, bc) = match &p.gate_biases {
                    Some((bt, bc)) => (Some(bt), Some(bc)),
                    None => (None, None),
                };
                let t = self.gate(&p.transform_gate, bt, prev);
                let c = self.gate(&p.carry_gate, bc, prev);
                let out: Vec<f64> = (0..body.len())
                    .map(|i| body[i] * t[i] + prev[i] * c[i])
                    .collect();
                LayerTrace {
                    pre_activation: pre,
                    body,
                    transform: Some(t),
                    carry: Some(c),
                    output: out.into(),
                }
            };
            layers.push(trace);
        }
        let top = &layers.last().expect("num_layers >= 1").output;
        let mut logits = p.output_weights.matvec(top)?;
        logits
            .iter_mut()
            .zip(p.output_bias.iter())
            .for_each(|(z, b)| *z += b);
        let output = softmax(&logits);
        Ok(ForwardTrace {
            input: x.to_vec().into(),
            layers,
            logits,
            output,
        })
    }

    /// Batched forward pass. Each highway layer multiplies the stacked
    /// `[W_l; W_T; W_C]` against the whole batch once and splits the
    /// result; traces are identical to [`HighwayNetwork::forward`].
    pub fn forward_packed(&self, batch: &[Vector]) -> Result<Vec<ForwardTrace>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        for x in batch {
            self.check_input(x)?;
        }
        let n = batch.len();
        let h = self.config.hidden_dim;
        let p = &self.params;

        // Columns of `cur` are the batch members.
        let mut cur = column_matrix(batch.iter().map(|v| v.as_slice()), self.config.input_dim);
        let mut layers: Vec<Vec<LayerTrace>> = vec![Vec::with_capacity(self.config.num_layers); n];
        for l in 0..self.config.num_layers {
            let bias = &p.hidden_biases[l];
            if l == 0 {
                let z = matmul(&p.hidden_weights[0], &cur)?;
                let mut next = Matrix::zeros(h, n);
                for (j, traces) in layers.iter_mut().enumerate() {
                    let pre: Vec<f64> = (0..h).map(|i| z.get(i, j) + bias[i]).collect();
                    let body: Vec<f64> = pre.iter().map(|&v| sigmoid_scalar(v)).collect();
                    for (i, &v) in body.iter().enumerate() {
                        next.set(i, j, v);
                    }
                    traces.push(LayerTrace {
                        pre_activation: pre.into(),
                        output: body.clone().into(),
                        body: body.into(),
                        transform: None,
                        carry: None,
                    });
                }
                cur = next;
                continue;
            }
            let packed = vstack(&[&p.hidden_weights[l], &p.transform_gate, &p.carry_gate])?;
            let z = matmul(&packed, &cur)?;
            let mut next = Matrix::zeros(h, n);
            for (j, traces) in layers.iter_mut().enumerate() {
                let pre: Vec<f64> = (0..h).map(|i| z.get(i, j) + bias[i]).collect();
                let body: Vec<f64> = pre.iter().map(|&v| sigmoid_scalar(v)).collect();
                let (t, c): (Vec<f64>, Vec<f64>) = (0..h)
                    .map(|i| {
                        let mut zt = z.get(h + i, j);
                        let mut zc = z.get(2 * h + i, j);
                        if let Some((bt, bc)) = &p.gate_biases {
                            zt += bt[i];
                            zc += bc[i];
                        }
                        (sigmoid_scalar(zt), sigmoid_scalar(zc))
                    })
                    .unzip();
                let out: Vec<f64> = (0..h)
                    .map(|i| body[i] * t[i] + cur.get(i, j) * c[i])
                    .collect();
                for (i, &v) in out.iter().enumerate() {
                    next.set(i, j, v);
                }
                traces.push(LayerTrace {
                    pre_activation: pre.into(),
                    body: body.into(),
                    transform: Some(t.into()),
                    carry: Some(c.into()),
                    output: out.into(),
                });
            }
            cur = next;
        }
        let z = matmul(&p.output_weights, &cur)?;
        Ok(layers
            .into_iter()
            .zip(batch)
            .enumerate()
            .map(|(j, (layers, x))| {
                let logits: Vector = (0..self.config.output_dim)
                    .map(|i| z.get(i, j) + p.output_bias[i])
                    .collect::<Vec<_>>()
                    .into();
                let output = softmax(&logits);
                ForwardTrace {
                    input: x.clone(),
                    layers,
                    logits,
                    output,
                }
            })
            .collect())
    }

    /// Backpropagates `output_grad` (w.r.t. the pre-softmax logits).
    pub fn backward(&self, trace: &ForwardTrace, output_grad: &[f64]) -> Result<Gradients> {
        let mut grads = Gradients::zeros(&self.config);
        self.backward_into(trace, output_grad, &mut grads)?;
        Ok(grads)
    }

    /// Like [`HighwayNetwork::backward`] but accumulates into `grads`.
    pub fn backward_into(&self, trace: &ForwardTrace, output_grad: &[f64], grads: &mut Gradients) -> Result<()> {
        self.check_trace(trace)?;
        if output_grad.len() != self.config.output_dim {
            return Err(Error::shape(format!(
                "output gradient has {} entries, network has {} outputs",
                output_grad.len(),
                self.config.output_dim
            )));
        }
        let p = &self.params;
        let g = &mut grads.params;
        let top = trace.activation(self.config.num_layers);
        g.output_weights.add_outer(output_grad, top);
        g.output_bias
            .iter_mut()
            .zip(output_grad)
            .for_each(|(d, s)| *d += s);
        let mut dh = p.output_weights.matvec_transposed(output_grad)?;

        for l in (0..self.config.num_layers).rev() {
            let layer = &trace.layers[l];
            let prev = trace.activation(l);
            match (&layer.transform, &layer.carry) {
                (Some(t), Some(c)) => {
                    let n = dh.len();
                    let mut dz = vec![0.0; n];
                    let mut dzt = vec![0.0; n];
                    let mut dzc = vec![0.0; n];
                    let mut dprev = vec![0.0; n];
                    for i in 0..n {
                        let s = layer.body[i];
                        dz[i] = dh[i] * t[i] * s * (1.0 - s);
                        dzt[i] = dh[i] * s * t[i] * (1.0 - t[i]);
                        dzc[i] = dh[i] * prev[i] * c[i] * (1.0 - c[i]);
                        dprev[i] = dh[i] * c[i];
                    }
                    g.hidden_weights[l].add_outer(&dz, prev);
                    g.transform_gate.add_outer(&dzt, prev);
                    g.carry_gate.add_outer(&dzc, prev);
                    for i in 0..n {
                        g.hidden_biases[l][i] += dz[i];
                    }
                    if let Some((bt, bc)) = &mut g.gate_biases {
                        for i in 0..n {
                            bt[i] += dzt[i];
                            bc[i] += dzc[i];
                        }
                    }
                    let through_body = p.hidden_weights[l].matvec_transposed(&dz)?;
                    let through_t = p.transform_gate.matvec_transposed(&dzt)?;
                    let through_c = p.carry_gate.matvec_transposed(&dzc)?;
                    for i in 0..n {
                        dprev[i] += through_body[i] + through_t[i] + through_c[i];
                    }
                    dh = dprev.into();
                }
                _ => {
                    let dz: Vec<f64> = dh
                        .iter()
                        .zip(layer.body.iter())
                        .map(|(d, s)| d * s * (1.0 - s))
                        .collect();
                    g.hidden_weights[l].add_outer(&dz, prev);
                    g.hidden_biases[l]
                        .iter_mut()
                        .zip(&dz)
                        .for_each(|(d, s)| *d += s);
                    if l > 0 {
                        dh = p.hidden_weights[l].matvec_transposed(&dz)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        let cfg = &self.config;
        let ok = trace.input.len() == cfg.input_dim
            && trace.layers.len() == cfg.num_layers
            && trace.logits.len() == cfg.output_dim
            && trace.layers.iter().enumerate().all(|(l, lt)| {
                lt.output.len() == cfg.hidden_dim && (l == 0) == lt.transform.is_none()
            });
        if ok {
            Ok(())
        } else {
            Err(Error::state("forward trace was not produced by this network"))
        }
    }

    /// Gradient step on the selected groups: `θ -= step` for every block
    /// the mask selects. Deselected blocks are left untouched.
    pub(crate) fn apply_update(&mut self, step: &ParamSet, mask: ParamGroupMask) {
        let src = step.blocks();
        for (dst, src) in self.params.blocks_mut().into_iter().zip(src) {
            if mask.contains(dst.group) {
                for (d, s) in dst.values.iter_mut().zip(src.values) {
                    *d -= s;
                }
            }
        }
    }
}

fn column_matrix<'a>(cols: impl Iterator<Item = &'a [f64]>, rows: usize) -> Matrix {
    let cols: Vec<&[f64]> = cols.collect();
    let mut m = Matrix::zeros(rows, cols.len());
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            m.set(i, j, v);
        }
    }
    m
}
