//! Error propagation through a chain of quantized layers.
//!
//! A toy network is a chain of linear layers with optional ReLU. Quantizing it
//! layer by layer produces two activation streams: `X` from the full-precision
//! network and `Xt` from the network whose earlier layers are already quantized.
//! Each layer is quantized from the statistics of its own `(X, Xt)` pair, and the
//! relative output error `||Y - Yt|| / ||Y||` is tracked per layer.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::calib::CalibStats;
use crate::error::{Error, Result};
use crate::grid::{quantize_per_token, GridConfig};
use crate::rounding::{quantize_layer, LayerQuantRequest, Method};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Relu,
}

impl Activation {
    fn apply(self, y: &mut Array2<f64>) {
        if self == Activation::Relu {
            y.mapv_inplace(|v| v.max(0.0));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `inputs x outputs`.
    pub weights: Array2<f64>,
    pub activation: Activation,
    /// Inputs are rotated by the normalized Hadamard matrix before this layer;
    /// `weights` are stored already rotated.
    pub hadamard: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub layers: Vec<Layer>,
    /// Layer indices at which the quantized stream is reset to the full-precision one.
    pub block_boundaries: Vec<usize>,
    /// One grid configuration per layer.
    pub weight_grids: Vec<GridConfig>,
    /// Per-token activation quantization applied to the inputs of every layer on the quantized stream.
    pub act_levels: Option<u32>,
    pub seed: u64,
}

impl NetworkSpec {
    /// `depth` square layers of `width` with Gaussian weights of variance `2 / width`
    /// and ReLU between layers (none after the last).
    pub fn gaussian(depth: usize, width: usize, grid: GridConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = (2.0 / width as f64).sqrt();
        let layers = (0..depth)
            .map(|l| Layer {
                weights: Array2::from_shape_fn((width, width), |_| {
                    scale * rng.sample::<f64, _>(StandardNormal)
                }),
                activation: if l + 1 < depth { Activation::Relu } else { Activation::None },
                hadamard: false,
            })
            .collect();
        Self {
            layers,
            block_boundaries: vec![0],
            weight_grids: vec![grid; depth],
            act_levels: None,
            seed,
        }
    }

    /// Like [`NetworkSpec::gaussian`] but every weight is already a point of its
    /// column's min-max grid with an odd `levels`: integers in `[-(levels-1)/2, (levels-1)/2]`
    /// scaled by a power of two, with both extremes present in every column.
    pub fn lattice(depth: usize, width: usize, levels: u32, seed: u64) -> Result<Self> {
        if levels < 3 || levels.is_multiple_of(2) {
            return Err(Error::invalid("lattice networks need an odd level count of at least 3"));
        }
        if width < 2 {
            return Err(Error::invalid("lattice networks need width of at least 2"));
        }
        let half = i64::from((levels - 1) / 2);
        // keep the per-layer gain near one
        let scale = 2f64.powi(-((half as f64 * (width as f64).sqrt()).log2().ceil() as i32));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..depth)
            .map(|l| {
                let mut w = Array2::from_shape_fn((width, width), |_| {
                    rng.random_range(-half..=half) as f64 * scale
                });
                for mut col in w.columns_mut() {
                    col[0] = -(half as f64) * scale;
                    col[1] = half as f64 * scale;
                }
                Layer {
                    weights: w,
                    activation: if l + 1 < depth { Activation::Relu } else { Activation::None },
                    hadamard: false,
                }
            })
            .collect();
        Ok(Self {
            layers,
            block_boundaries: vec![0],
            weight_grids: vec![GridConfig::minmax(levels, 1.0); depth],
            act_levels: None,
            seed,
        })
    }

    /// `blocks` equal-length blocks (the last one absorbs the remainder).
    pub fn with_blocks(mut self, blocks: usize) -> Self {
        let depth = self.layers.len();
        let blocks = blocks.clamp(1, depth.max(1));
        let len = depth / blocks;
        self.block_boundaries = (0..blocks).map(|b| b * len).collect();
        self
    }

    pub fn with_act_levels(mut self, levels: Option<u32>) -> Self {
        self.act_levels = levels;
        self
    }

    /// Replaces every layer's weights `W` by `H^T W` and marks the layer so its
    /// inputs are rotated by `H`; the network function is unchanged.
    pub fn with_hadamard(mut self) -> Result<Self> {
        for layer in &mut self.layers {
            if !layer.hadamard {
                rotate_rows(&mut layer.weights)?;
                layer.hadamard = true;
            }
        }
        Ok(self)
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weights.nrows())
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("network has no layers"));
        }
        for (l, pair) in self.layers.windows(2).enumerate() {
            if pair[0].weights.ncols() != pair[1].weights.nrows() {
                return Err(Error::shape(format!(
                    "layer {} has {} outputs but layer {} has {} inputs",
                    l + 1,
                    pair[0].weights.ncols(),
                    l + 2,
                    pair[1].weights.nrows()
                )));
            }
        }
        if self.weight_grids.len() != self.layers.len() {
            return Err(Error::shape("one grid configuration per layer is required"));
        }
        if self.block_boundaries.windows(2).any(|b| b[0] >= b[1])
            || self.block_boundaries.iter().any(|&b| b >= self.layers.len())
        {
            return Err(Error::invalid("block boundaries must be increasing layer indices"));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.hadamard && !layer.weights.nrows().is_power_of_two() {
                return Err(Error::invalid(format!(
                    "layer {} is rotated but has {} inputs, not a power of two",
                    l + 1,
                    layer.weights.nrows()
                )));
            }
        }
        Ok(())
    }
}

/// In-place normalized fast Walsh-Hadamard transform: `v <- (H_n / sqrt(n)) v`.
pub fn fwht(v: &mut [f64]) -> Result<()> {
    let n = v.len();
    if !n.is_power_of_two() {
        return Err(Error::invalid(format!("Hadamard size {n} is not a power of two")));
    }
    let mut h = 1;
    while h < n {
        for start in (0..n).step_by(2 * h) {
            for i in start..start + h {
                let (a, b) = (v[i], v[i + h]);
                v[i] = a + b;
                v[i + h] = a - b;
            }
        }
        h *= 2;
    }
    let norm = 1.0 / (n as f64).sqrt();
    v.iter_mut().for_each(|x| *x *= norm);
    Ok(())
}

fn rotate_rows(w: &mut Array2<f64>) -> Result<()> {
    // columns of W transformed: W <- H^T W (H is symmetric)
    let mut buf = vec![0.0; w.nrows()];
    for mut col in w.columns_mut() {
        buf.iter_mut().zip(col.iter()).for_each(|(b, &c)| *b = c);
        fwht(&mut buf)?;
        col.iter_mut().zip(&buf).for_each(|(c, &b)| *c = b);
    }
    Ok(())
}

fn rotate_inputs(x: &mut Array2<f64>) -> Result<()> {
    let mut x_std = x.as_standard_layout().into_owned();
    for mut row in x_std.rows_mut() {
        fwht(row.as_slice_mut().expect("standard layout"))?;
    }
    *x = x_std;
    Ok(())
}

/// `(W', X') = (H^T W, X H)` with `H` the normalized Hadamard matrix, so `X' W' = X W`.
pub fn hadamard_rotate(w: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    if w.nrows() != x.ncols() {
        return Err(Error::shape(format!(
            "X has {} columns but W has {} rows",
            x.ncols(),
            w.nrows()
        )));
    }
    let mut w2 = w.to_owned();
    rotate_rows(&mut w2)?;
    let mut x2 = x.to_owned();
    rotate_inputs(&mut x2)?;
    Ok((w2, x2))
}

/// Activations at every depth of both streams.
#[derive(Debug, Clone)]
pub struct ForwardPair {
    /// `inputs[l]` is what layer `l` multiplies (after rotation, reset and activation
    /// quantization); `outputs[l]` is its output after the nonlinearity.
    pub inputs: Vec<Array2<f64>>,
    pub outputs: Vec<Array2<f64>>,
    pub inputs_q: Vec<Array2<f64>>,
    pub outputs_q: Vec<Array2<f64>>,
}

struct Stream {
    x: Array2<f64>,
    xt: Array2<f64>,
}

impl Stream {
    /// Rotation, block reset and activation quantization in front of layer `l`.
    fn layer_inputs(&mut self, spec: &NetworkSpec, l: usize) -> Result<()> {
        let layer = &spec.layers[l];
        if layer.hadamard {
            rotate_inputs(&mut self.x)?;
        }
        if spec.block_boundaries.contains(&l) {
            self.xt = self.x.clone();
        } else if layer.hadamard {
            rotate_inputs(&mut self.xt)?;
        }
        if let Some(levels) = spec.act_levels {
            self.xt = quantize_per_token(self.xt.view(), levels)?;
        }
        Ok(())
    }
}

/// Runs both streams through the network. Layers `< quantized_prefix` use
/// `quantized[l]` on the quantized stream; all later layers use full precision.
pub fn forward_pair(
    spec: &NetworkSpec,
    quantized: &[Array2<f64>],
    x0: ArrayView2<'_, f64>,
    quantized_prefix: usize,
) -> Result<ForwardPair> {
    spec.validate()?;
    if x0.ncols() != spec.input_dim() {
        return Err(Error::shape(format!(
            "input has {} columns, network expects {}",
            x0.ncols(),
            spec.input_dim()
        )));
    }
    if quantized_prefix > spec.layers.len() || quantized.len() < quantized_prefix {
        return Err(Error::invalid("quantized prefix exceeds the available quantized layers"));
    }
    let mut stream = Stream {
        x: x0.to_owned(),
        xt: x0.to_owned(),
    };
    let mut out = ForwardPair {
        inputs: Vec::new(),
        outputs: Vec::new(),
        inputs_q: Vec::new(),
        outputs_q: Vec::new(),
    };
    for (l, layer) in spec.layers.iter().enumerate() {
        stream.layer_inputs(spec, l)?;
        let wq = if l < quantized_prefix {
            if quantized[l].dim() != layer.weights.dim() {
                return Err(Error::shape(format!("quantized layer {} has the wrong shape", l + 1)));
            }
            &quantized[l]
        } else {
            &layer.weights
        };
        let mut y = stream.x.dot(&layer.weights);
        let mut yt = stream.xt.dot(wq);
        layer.activation.apply(&mut y);
        layer.activation.apply(&mut yt);
        out.inputs.push(std::mem::replace(&mut stream.x, y.clone()));
        out.inputs_q.push(std::mem::replace(&mut stream.xt, yt.clone()));
        out.outputs.push(y);
        out.outputs_q.push(yt);
    }
    Ok(out)
}

/// Mean over rows of `||y_r - yt_r|| / ||y_r||`; rows with `y_r = 0` are skipped.
pub fn relative_error(y: ArrayView2<'_, f64>, yt: ArrayView2<'_, f64>) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (a, b) in y.axis_iter(Axis(0)).zip(yt.axis_iter(Axis(0))) {
        let norm = a.dot(&a).sqrt();
        if norm > 0.0 {
            let d = &a - &b;
            total += d.dot(&d).sqrt() / norm;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropagationReport {
    pub method: Method,
    pub seed: u64,
    /// Relative output error after each layer.
    pub relative_errors: Vec<f64>,
    /// Total layer objective reported by the rounding routine.
    pub objectives: Vec<f64>,
}

/// Quantizes the layers in order, each from the `(X, Xt)` statistics it sees
/// given the already-quantized layers before it.
pub fn quantize_network(
    spec: &NetworkSpec,
    calib: ArrayView2<'_, f64>,
    method: Method,
) -> Result<(Vec<Array2<f64>>, PropagationReport)> {
    spec.validate()?;
    if calib.ncols() != spec.input_dim() {
        return Err(Error::shape(format!(
            "calibration input has {} columns, network expects {}",
            calib.ncols(),
            spec.input_dim()
        )));
    }
    let mut stream = Stream {
        x: calib.to_owned(),
        xt: calib.to_owned(),
    };
    let mut quantized = Vec::with_capacity(spec.layers.len());
    let mut relative_errors = Vec::with_capacity(spec.layers.len());
    let mut objectives = Vec::with_capacity(spec.layers.len());
    for (l, layer) in spec.layers.iter().enumerate() {
        stream.layer_inputs(spec, l)?;
        let stats = CalibStats::from_activations(stream.x.view(), stream.xt.view())?;
        let grids = spec.weight_grids[l].per_channel(layer.weights.view())?;
        let req = LayerQuantRequest::new(layer.weights.view(), &stats, &grids, method)
            .with_activations(stream.x.view(), stream.xt.view());
        let result = quantize_layer(&req)?;
        let mut y = stream.x.dot(&layer.weights);
        let mut yt = stream.xt.dot(&result.q);
        layer.activation.apply(&mut y);
        layer.activation.apply(&mut yt);
        relative_errors.push(relative_error(y.view(), yt.view()));
        objectives.push(result.report.total_objective);
        quantized.push(result.q);
        stream.x = y;
        stream.xt = yt;
    }
    Ok((
        quantized,
        PropagationReport {
            method,
            seed: spec.seed,
            relative_errors,
            objectives,
        },
    ))
}

/// Parameters of a seeded simulation sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub layers: usize,
    pub width: usize,
    pub blocks: usize,
    pub weight_levels: u32,
    pub act_levels: Option<u32>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub hadamard: bool,
    pub samples: usize,
    pub lattice: bool,
}

impl SimulationConfig {
    pub fn new(layers: usize, width: usize, weight_levels: u32) -> Self {
        Self {
            layers,
            width,
            blocks: 1,
            weight_levels,
            act_levels: None,
            methods: vec![Method::Rtn, Method::Optq, Method::Gpfq, Method::Qronos],
            seeds: (0..10).collect(),
            hadamard: false,
            samples: 8 * width,
            lattice: false,
        }
    }

    /// The network and calibration input used for `seed`.
    pub fn build(&self, seed: u64) -> Result<(NetworkSpec, Array2<f64>)> {
        if self.layers == 0 || self.width == 0 || self.samples == 0 {
            return Err(Error::invalid("layers, width and samples must be positive"));
        }
        let spec = if self.lattice {
            NetworkSpec::lattice(self.layers, self.width, self.weight_levels, seed)?
        } else {
            NetworkSpec::gaussian(self.layers, self.width, GridConfig::minmax(self.weight_levels, 1.0), seed)
        };
        let mut spec = spec.with_blocks(self.blocks).with_act_levels(self.act_levels);
        if self.hadamard {
            spec = spec.with_hadamard()?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ca11_b000_0000);
        let calib = Array2::from_shape_fn((self.samples, self.width), |_| rng.sample(StandardNormal));
        Ok((spec, calib))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    /// Per-layer relative error averaged over seeds.
    pub mean_relative_errors: Vec<f64>,
    pub mean_final_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub config: SimulationConfig,
    pub runs: Vec<PropagationReport>,
    pub summary: Vec<MethodSummary>,
}

pub fn run_simulation(config: &SimulationConfig) -> Result<SimulationReport> {
    let mut runs = Vec::new();
    for &seed in &config.seeds {
        let (spec, calib) = config.build(seed)?;
        for &method in &config.methods {
            let (_, report) = quantize_network(&spec, calib.view(), method)?;
            runs.push(report);
        }
    }
    let summary = config
        .methods
        .iter()
        .map(|&method| {
            let curves: Vec<&Vec<f64>> = runs
                .iter()
                .filter(|r| r.method == method)
                .map(|r| &r.relative_errors)
                .collect();
            let mut mean = Array1::<f64>::zeros(config.layers);
            for c in &curves {
                mean += &Array1::from((*c).clone());
            }
            if !curves.is_empty() {
                mean /= curves.len() as f64;
            }
            let mean_final_error = mean.last().copied().unwrap_or(0.0);
            MethodSummary {
                method,
                mean_relative_errors: mean.to_vec(),
                mean_final_error,
            }
        })
        .collect();
    Ok(SimulationReport {
        config: config.clone(),
        runs,
        summary,
    })
}
