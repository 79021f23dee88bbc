//! The model graph: an ordered list of named layers with shape inference,
//! batched forward passes (optionally capturing a named layer's output),
//! single-sample traces for backpropagation, and the text summary table.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::layers::{
    conv2d_backward_into, conv2d_forward, conv2d_out_shape, dense_backward_into, dense_forward,
    flatten, maxpool_backward, maxpool_forward, maxpool_out_shape, relu_backward, relu_in_place,
    ConvParams, DenseParams, PoolParams,
};
use crate::tensor::{Shape, Tensor};

/// What a layer node computes. ReLU is a fused flag on conv/dense nodes, so
/// the layer list matches the nine architecture rows one-to-one.
#[derive(Clone, Debug)]
pub enum LayerKind {
    Input,
    Conv2d { params: ConvParams, relu: bool },
    MaxPool { params: PoolParams },
    Flatten,
    Dense { params: DenseParams, relu: bool },
}

impl LayerKind {
    fn type_name(&self) -> &'static str {
        match self {
            LayerKind::Input => "Input",
            LayerKind::Conv2d { .. } => "Conv2D",
            LayerKind::MaxPool { .. } => "MaxPool2D",
            LayerKind::Flatten => "Flatten",
            LayerKind::Dense { .. } => "Dense",
        }
    }
}

/// One node of the graph: kind, unique name, and inferred output shape.
#[derive(Clone, Debug)]
pub struct LayerNode {
    pub kind: LayerKind,
    pub name: String,
    pub out_shape: Shape,
}

impl LayerNode {
    /// Trainable parameter count of this node.
    pub fn param_count(&self) -> usize {
        match &self.kind {
            LayerKind::Conv2d { params, .. } => {
                params.kernels.shape().count() + params.bias.shape().count()
            }
            LayerKind::Dense { params, .. } => {
                params.weights.shape().count() + params.bias.shape().count()
            }
            _ => 0,
        }
    }
}

/// Sequential model: `layers[0]` is the input node.
#[derive(Clone, Debug)]
pub struct Model {
    layers: Vec<LayerNode>,
}

/// Incremental model construction with shape inference. Layers without an
/// explicit name get framework-style defaults (`conv2d`, `conv2d_1`, ...).
#[derive(Debug)]
pub struct ModelBuilder {
    layers: Vec<LayerNode>,
    conv_count: usize,
    pool_count: usize,
    flatten_count: usize,
    dense_count: usize,
}

impl ModelBuilder {
    /// Start a model with a rank-3 (h, w, c) input.
    pub fn input(dims: &[usize]) -> Result<ModelBuilder> {
        let shape = Shape::new(dims)?;
        if shape.rank() != 3 {
            return Err(Error::InvalidShape(format!(
                "model input must be rank 3 (h, w, c), got {shape}"
            )));
        }
        Ok(ModelBuilder {
            layers: vec![LayerNode {
                kind: LayerKind::Input,
                name: "input".to_string(),
                out_shape: shape,
            }],
            conv_count: 0,
            pool_count: 0,
            flatten_count: 0,
            dense_count: 0,
        })
    }

    fn auto_name(base: &str, count: &mut usize) -> String {
        let name = if *count == 0 {
            base.to_string()
        } else {
            format!("{base}_{count}")
        };
        *count += 1;
        name
    }

    fn push(&mut self, kind: LayerKind, name: String, out_shape: Shape) -> Result<()> {
        if self.layers.iter().any(|l| l.name == name) {
            return Err(Error::DuplicateLayerName(name));
        }
        self.layers.push(LayerNode {
            kind,
            name,
            out_shape,
        });
        Ok(())
    }

    fn last_shape(&self) -> &Shape {
        &self.layers.last().expect("input node always present").out_shape
    }

    /// Append a convolution (stride 1, no padding) with zero-initialized
    /// weights; real values come from weight init or a checkpoint.
    pub fn conv2d(
        mut self,
        filters: usize,
        kernel: (usize, usize),
        relu: bool,
        name: Option<&str>,
    ) -> Result<ModelBuilder> {
        let in_shape = self.last_shape().clone();
        if in_shape.rank() != 3 {
            return Err(Error::InvalidShape(format!(
                "convolution needs a rank-3 predecessor, got {in_shape}"
            )));
        }
        let c_in = in_shape.dims()[2];
        let params = ConvParams::new(
            Tensor::zeros(&[kernel.0, kernel.1, c_in, filters])?,
            Tensor::zeros(&[filters])?,
            (1, 1),
            (0, 0),
        )?;
        let out_shape = conv2d_out_shape(&in_shape, &params)?;
        let name = match name {
            Some(n) => n.to_string(),
            None => Self::auto_name("conv2d", &mut self.conv_count),
        };
        self.push(LayerKind::Conv2d { params, relu }, name, out_shape)?;
        Ok(self)
    }

    /// Append a max-pooling layer; stride defaults to the window size.
    pub fn maxpool(mut self, pool: (usize, usize), name: Option<&str>) -> Result<ModelBuilder> {
        let in_shape = self.last_shape().clone();
        let params = PoolParams::new(pool, None)?;
        let out_shape = maxpool_out_shape(&in_shape, &params)?;
        let name = match name {
            Some(n) => n.to_string(),
            None => Self::auto_name("max_pooling2d", &mut self.pool_count),
        };
        self.push(LayerKind::MaxPool { params }, name, out_shape)?;
        Ok(self)
    }

    /// Append a flatten layer.
    pub fn flatten(mut self, name: Option<&str>) -> Result<ModelBuilder> {
        let out_shape = Shape::new(&[self.last_shape().count()])?;
        let name = match name {
            Some(n) => n.to_string(),
            None => Self::auto_name("flatten", &mut self.flatten_count),
        };
        self.push(LayerKind::Flatten, name, out_shape)?;
        Ok(self)
    }

    /// Append a dense layer with zero-initialized weights.
    pub fn dense(mut self, units: usize, relu: bool, name: Option<&str>) -> Result<ModelBuilder> {
        let in_shape = self.last_shape().clone();
        if in_shape.rank() != 1 {
            return Err(Error::InvalidShape(format!(
                "dense needs a rank-1 predecessor (flatten first), got {in_shape}"
            )));
        }
        let n_in = in_shape.dims()[0];
        let params = DenseParams::new(Tensor::zeros(&[n_in, units])?, Tensor::zeros(&[units])?)?;
        let out_shape = Shape::new(&[units])?;
        let name = match name {
            Some(n) => n.to_string(),
            None => Self::auto_name("dense", &mut self.dense_count),
        };
        self.push(LayerKind::Dense { params, relu }, name, out_shape)?;
        Ok(self)
    }

    /// Finish the model. The last layer must be dense, so the network
    /// ends in a flat score vector (the output logits).
    pub fn build(self) -> Result<Model> {
        match self.layers.last() {
            Some(LayerNode {
                kind: LayerKind::Dense { .. },
                ..
            }) => Ok(Model {
                layers: self.layers,
            }),
            _ => Err(Error::InvalidArgument(
                "model must end with a dense layer".to_string(),
            )),
        }
    }
}

/// The slim four-class CNN: (128,128,1) input, three 3x3 convolution
/// stages (128/256/256 filters, the last one named "lastConv"), two 2x2
/// poolings, then dense 256 and a 4-unit output head emitting raw logits.
pub fn build_slim_cnn() -> Model {
    ModelBuilder::input(&[128, 128, 1])
        .and_then(|b| b.conv2d(128, (3, 3), true, None))
        .and_then(|b| b.maxpool((2, 2), None))
        .and_then(|b| b.conv2d(256, (3, 3), true, None))
        .and_then(|b| b.maxpool((2, 2), None))
        .and_then(|b| b.conv2d(256, (3, 3), true, Some("lastConv")))
        .and_then(|b| b.flatten(None))
        .and_then(|b| b.dense(256, true, None))
        .and_then(|b| b.dense(4, false, Some("output_layer")))
        .and_then(|b| b.build())
        .expect("fixed architecture is well-formed")
}

/// Per-layer record of one sample's forward pass: post-activation outputs
/// (index-aligned with the layer list; index 0 is the input itself) and the
/// pooling argmax maps needed by the backward pass.
pub struct Trace {
    pub activations: Vec<Tensor>,
    pub argmax: Vec<Option<Vec<u32>>>,
}

impl Trace {
    /// The network output (logits) of the traced sample.
    pub fn logits(&self) -> &Tensor {
        self.activations.last().expect("trace is never empty")
    }
}

/// Per-layer gradient accumulators, index-aligned with the layer list:
/// `Some((d_kernels_or_weights, d_bias))` for trainable layers.
pub type GradBuffers = Vec<Option<(Tensor, Tensor)>>;

impl Model {
    pub fn layers(&self) -> &[LayerNode] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [LayerNode] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> &Shape {
        &self.layers[0].out_shape
    }

    /// Output class count (width of the final dense layer).
    pub fn num_classes(&self) -> usize {
        self.layers.last().expect("non-empty").out_shape.dims()[0]
    }

    /// Index of a layer by name.
    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    /// Total trainable parameter count.
    pub fn total_params(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// Mutable references to every parameter tensor in serialization order:
    /// per layer, kernels/weights then bias.
    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match &mut layer.kind {
                LayerKind::Conv2d { params, .. } => {
                    out.push(&mut params.kernels);
                    out.push(&mut params.bias);
                }
                LayerKind::Dense { params, .. } => {
                    out.push(&mut params.weights);
                    out.push(&mut params.bias);
                }
                _ => {}
            }
        }
        out
    }

    /// Read-only view of every parameter tensor in serialization order.
    pub fn param_tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match &layer.kind {
                LayerKind::Conv2d { params, .. } => {
                    out.push(&params.kernels);
                    out.push(&params.bias);
                }
                LayerKind::Dense { params, .. } => {
                    out.push(&params.weights);
                    out.push(&params.bias);
                }
                _ => {}
            }
        }
        out
    }

    /// Run one layer on a single sample's activation.
    fn apply_layer(&self, idx: usize, input: &Tensor) -> Result<(Tensor, Option<Vec<u32>>)> {
        match &self.layers[idx].kind {
            LayerKind::Input => Ok((input.clone(), None)),
            LayerKind::Conv2d { params, relu } => {
                let mut out = conv2d_forward(input, params)?;
                if *relu {
                    relu_in_place(&mut out);
                }
                Ok((out, None))
            }
            LayerKind::MaxPool { params } => {
                let (out, argmax) = maxpool_forward(input, params)?;
                Ok((out, Some(argmax)))
            }
            LayerKind::Flatten => Ok((flatten(input), None)),
            LayerKind::Dense { params, relu } => {
                let mut out = dense_forward(input, params)?;
                if *relu {
                    relu_in_place(&mut out);
                }
                Ok((out, None))
            }
        }
    }

    fn check_batch(&self, batch: &Tensor) -> Result<(usize, usize)> {
        let in_dims = self.input_shape().dims();
        let dims = batch.dims();
        if dims.len() != 4 || &dims[1..] != in_dims {
            return Err(Error::ShapeMismatch {
                expected: format!("(b, {}, {}, {})", in_dims[0], in_dims[1], in_dims[2]),
                got: format!("{}", batch.shape()),
            });
        }
        Ok((dims[0], self.input_shape().count()))
    }

    fn sample(&self, batch: &Tensor, i: usize, sample_len: usize) -> Tensor {
        let data = batch.data()[i * sample_len..(i + 1) * sample_len].to_vec();
        Tensor::from_shape(self.input_shape().clone(), data)
    }

    /// Batched forward pass. Returns logits (b, k) and, when `capture`
    /// names a layer, that layer's post-activation outputs stacked along a
    /// leading batch axis. Samples run in parallel; results are assembled
    /// in batch order, so the output is independent of thread timing.
    pub fn forward(&self, batch: &Tensor, capture: Option<&str>) -> Result<(Tensor, Option<Tensor>)> {
        let (b, sample_len) = self.check_batch(batch)?;
        let capture_idx = match capture {
            Some(name) => Some(self.layer_index(name)?),
            None => None,
        };
        let k = self.num_classes();

        let per_sample: Vec<(Vec<f32>, Option<Vec<f32>>)> = (0..b)
            .into_par_iter()
            .map(|i| {
                let mut act = self.sample(batch, i, sample_len);
                let mut captured = None;
                if capture_idx == Some(0) {
                    captured = Some(act.data().to_vec());
                }
                for idx in 1..self.layers.len() {
                    let (next, _) = self
                        .apply_layer(idx, &act)
                        .expect("shapes verified at build time");
                    act = next;
                    if capture_idx == Some(idx) {
                        captured = Some(act.data().to_vec());
                    }
                }
                (act.into_data(), captured)
            })
            .collect();

        let mut logits = Vec::with_capacity(b * k);
        for (row, _) in &per_sample {
            logits.extend_from_slice(row);
        }
        let logits = Tensor::new(&[b, k], logits)?;

        let captured = match capture_idx {
            None => None,
            Some(idx) => {
                let cap_dims = self.layers[idx].out_shape.dims();
                let mut dims = vec![b];
                dims.extend_from_slice(cap_dims);
                let mut data = Vec::with_capacity(b * self.layers[idx].out_shape.count());
                for (_, cap) in per_sample {
                    data.extend_from_slice(&cap.expect("captured for every sample"));
                }
                Some(Tensor::new(&dims, data)?)
            }
        };
        Ok((logits, captured))
    }

    /// Forward pass of a single (h, w, c) sample keeping every layer's
    /// post-activation output and the pooling argmax maps.
    pub fn forward_trace(&self, image: &Tensor) -> Result<Trace> {
        if image.dims() != self.input_shape().dims() {
            return Err(Error::ShapeMismatch {
                expected: format!("{}", self.input_shape()),
                got: format!("{}", image.shape()),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut argmax = Vec::with_capacity(self.layers.len());
        activations.push(image.clone());
        argmax.push(None);
        for idx in 1..self.layers.len() {
            let (out, am) = self.apply_layer(idx, activations.last().expect("non-empty"))?;
            activations.push(out);
            argmax.push(am);
        }
        Ok(Trace {
            activations,
            argmax,
        })
    }

    /// Fresh zeroed gradient buffers aligned with the layer list.
    pub fn zero_grads(&self) -> GradBuffers {
        self.layers
            .iter()
            .map(|l| match &l.kind {
                LayerKind::Conv2d { params, .. } => Some((
                    Tensor::zeros_like_shape(params.kernels.shape()),
                    Tensor::zeros_like_shape(params.bias.shape()),
                )),
                LayerKind::Dense { params, .. } => Some((
                    Tensor::zeros_like_shape(params.weights.shape()),
                    Tensor::zeros_like_shape(params.bias.shape()),
                )),
                _ => None,
            })
            .collect()
    }

    /// Accumulate one traced sample's parameter gradients into `grads`,
    /// given the loss gradient at the logits. Layers run in reverse; the
    /// first trainable layer skips its input gradient.
    pub fn backward_into(
        &self,
        trace: &Trace,
        dlogits: &Tensor,
        grads: &mut GradBuffers,
    ) -> Result<()> {
        if grads.len() != self.layers.len() {
            return Err(Error::InvalidArgument(
                "gradient buffers misaligned with layer list".to_string(),
            ));
        }
        let mut g = dlogits.clone();
        for idx in (1..self.layers.len()).rev() {
            let node = &self.layers[idx];
            let layer_input = &trace.activations[idx - 1];
            let need_dx = idx > 1;
            match &node.kind {
                LayerKind::Input => unreachable!("input is always index 0"),
                LayerKind::Conv2d { params, relu } => {
                    if *relu {
                        g = relu_backward(&trace.activations[idx], &g)?;
                    }
                    let (dk, db) = grads[idx].as_mut().expect("conv has grad buffers");
                    if need_dx {
                        let mut dx = Tensor::zeros_like_shape(layer_input.shape());
                        conv2d_backward_into(layer_input, params, &g, dk, db, Some(&mut dx))?;
                        g = dx;
                    } else {
                        conv2d_backward_into(layer_input, params, &g, dk, db, None)?;
                    }
                }
                LayerKind::MaxPool { .. } => {
                    let am = trace.argmax[idx].as_ref().expect("pool traced argmax");
                    g = maxpool_backward(am, &g, layer_input.shape())?;
                }
                LayerKind::Flatten => {
                    g = g.reshape(layer_input.dims())?;
                }
                LayerKind::Dense { params, relu } => {
                    if *relu {
                        g = relu_backward(&trace.activations[idx], &g)?;
                    }
                    let (dw, db) = grads[idx].as_mut().expect("dense has grad buffers");
                    if need_dx {
                        let mut dx = Tensor::zeros_like_shape(layer_input.shape());
                        dense_backward_into(layer_input, params, &g, dw, db, Some(&mut dx))?;
                        g = dx;
                    } else {
                        dense_backward_into(layer_input, params, &g, dw, db, None)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Gradient of one output logit with respect to a named layer's
    /// post-activation output, for a traced sample. Only the input-gradient
    /// chain runs (no parameter gradients), and the target layer's own
    /// activation is not re-masked — the result is d logit / d activation.
    pub fn activation_gradient(
        &self,
        trace: &Trace,
        class_index: usize,
        target_layer: &str,
    ) -> Result<Tensor> {
        let target_idx = self.layer_index(target_layer)?;
        let k = self.num_classes();
        if class_index >= k {
            return Err(Error::ClassOutOfRange {
                index: class_index,
                classes: k,
            });
        }
        if target_idx + 1 >= self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "layer \"{target_layer}\" has no downstream layers to differentiate through"
            )));
        }
        let mut g = Tensor::zeros(&[k])?;
        g.set(&[class_index], 1.0);
        for idx in (target_idx + 1..self.layers.len()).rev() {
            let node = &self.layers[idx];
            let layer_input = &trace.activations[idx - 1];
            match &node.kind {
                LayerKind::Input => unreachable!("input is always index 0"),
                LayerKind::Conv2d { params, relu } => {
                    if *relu {
                        g = relu_backward(&trace.activations[idx], &g)?;
                    }
                    let mut dk = Tensor::zeros_like_shape(params.kernels.shape());
                    let mut db = Tensor::zeros_like_shape(params.bias.shape());
                    let mut dx = Tensor::zeros_like_shape(layer_input.shape());
                    conv2d_backward_into(layer_input, params, &g, &mut dk, &mut db, Some(&mut dx))?;
                    g = dx;
                }
                LayerKind::MaxPool { .. } => {
                    let am = trace.argmax[idx].as_ref().expect("pool traced argmax");
                    g = maxpool_backward(am, &g, layer_input.shape())?;
                }
                LayerKind::Flatten => {
                    g = g.reshape(layer_input.dims())?;
                }
                LayerKind::Dense { params, relu } => {
                    if *relu {
                        g = relu_backward(&trace.activations[idx], &g)?;
                    }
                    let mut dx = Tensor::zeros_like_shape(layer_input.shape());
                    let mut dw = Tensor::zeros_like_shape(params.weights.shape());
                    let mut db = Tensor::zeros_like_shape(params.bias.shape());
                    dense_backward_into(layer_input, params, &g, &mut dw, &mut db, Some(&mut dx))?;
                    g = dx;
                }
            }
        }
        Ok(g)
    }

    /// Argmax class per batch element; ties go to the lowest index.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let (logits, _) = self.forward(batch, None)?;
        Ok(argmax_rows(&logits))
    }

    /// Render the architecture as an aligned text table: one row per layer
    /// with a "None" batch placeholder in the shapes, and a footer with the
    /// total parameter count and its f32 storage size in MB.
    pub fn summary(&self) -> String {
        let rows: Vec<(String, String, String)> = self
            .layers
            .iter()
            .map(|l| {
                let label = format!("{} ({})", l.name, l.kind.type_name());
                let dims = l
                    .out_shape
                    .dims()
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(", ");
                let shape = format!("(None, {dims})");
                (label, shape, group_thousands(l.param_count()))
            })
            .collect();
        let w0 = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max("Layer (type)".len());
        let w1 = rows.iter().map(|r| r.1.len()).max().unwrap_or(0).max("Output Shape".len());
        let w2 = rows.iter().map(|r| r.2.len()).max().unwrap_or(0).max("Param #".len());

        let total = self.total_params();
        let mb = total as f64 * 4.0 / (1u64 << 20) as f64;
        let mut out = String::new();
        out.push_str(&format!(
            "{:<w0$}  {:<w1$}  {:>w2$}\n",
            "Layer (type)", "Output Shape", "Param #"
        ));
        out.push_str(&"=".repeat(w0 + w1 + w2 + 4));
        out.push('\n');
        for (label, shape, params) in &rows {
            out.push_str(&format!("{label:<w0$}  {shape:<w1$}  {params:>w2$}\n"));
        }
        out.push_str(&"=".repeat(w0 + w1 + w2 + 4));
        out.push('\n');
        out.push_str(&format!(
            "Total (trainable) params: {} ({mb:.2} MB)\n",
            group_thousands(total)
        ));
        out
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = j;
        }
    }
    best
}

/// Row-wise argmax of a (b, k) tensor; ties go to the lowest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let dims = logits.dims();
    let (b, k) = (dims[0], dims[1]);
    let data = logits.data();
    (0..b).map(|i| argmax(&data[i * k..(i + 1) * k])).collect()
}

/// Format an integer with comma thousands separators.
pub fn group_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}
