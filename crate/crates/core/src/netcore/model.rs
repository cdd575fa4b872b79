//! The conditional re-enhancement network.
//!
//! ```text
//! input  = concat(rgb, cond)                       4 ch
//! conv0  = relu(conv3x3(input))                   32 ch
//! conv   = conv9x9(input)                         64 ch   (no activation)
//! conv1  = relu(conv3x3(conv))                    64 ch
//! conv2  = relu(conv3x3 stride 2 (conv1))        128 ch   half size
//! conv3  = relu(conv3x3(conv2))                  128 ch
//! conv4  = relu(conv3x3(upsample2(conv3)))        64 ch   full size
//! conv5  = concat(conv4, conv1)                  128 ch
//! conv6  = relu(conv3x3(conv5))                   64 ch
//! conv7  = concat(conv6, conv0)                   96 ch
//! conv8  = conv3x3(conv7)                         64 ch   (no activation)
//! conv9  = conv3x3(conv8)                          3 ch   (no activation)
//! output = sigmoid(conv9)
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

use super::ops::{
    concat_channels, relu_backward, relu_in_place, sigmoid, sigmoid_backward, split_channels, Conv2d, ConvGrads,
    Sampling,
};
use super::real::Real;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: &'static str,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub sampling: Sampling,
    pub relu: bool,
}

const fn layer(
    name: &'static str,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    sampling: Sampling,
    relu: bool,
) -> LayerSpec {
    LayerSpec {
        name,
        in_channels,
        out_channels,
        kernel,
        sampling,
        relu,
    }
}

pub const CONV0: usize = 0;
pub const CONV: usize = 1;
pub const CONV1: usize = 2;
pub const CONV2: usize = 3;
pub const CONV3: usize = 4;
pub const CONV4: usize = 5;
pub const CONV6: usize = 6;
pub const CONV8: usize = 7;
pub const CONV9: usize = 8;

/// Every parameterized layer, in storage order.
pub const LAYERS: [LayerSpec; 9] = [
    layer("conv0", 4, 32, 3, Sampling::Same, true),
    layer("conv", 4, 64, 9, Sampling::Same, false),
    layer("conv1", 64, 64, 3, Sampling::Same, true),
    layer("conv2", 64, 128, 3, Sampling::Down2, true),
    layer("conv3", 128, 128, 3, Sampling::Same, true),
    layer("conv4", 128, 64, 3, Sampling::Up2, true),
    layer("conv6", 128, 64, 3, Sampling::Same, true),
    layer("conv8", 96, 64, 3, Sampling::Same, false),
    layer("conv9", 64, 3, 3, Sampling::Same, false),
];

/// Kernels and biases for all layers of [`LAYERS`].
#[derive(Debug, Clone, PartialEq)]
pub struct CreNetWeights<T> {
    pub layers: Vec<Conv2d<T>>,
}

/// Same layout as the weights; used for gradients and optimizer moments.
pub type CreNetGrads<T> = Vec<ConvGrads<T>>;

/// Activations of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub input: Tensor<T>,
    pub conv0: Tensor<T>,
    pub conv: Tensor<T>,
    pub conv1: Tensor<T>,
    pub conv2: Tensor<T>,
    pub conv3: Tensor<T>,
    pub conv4: Tensor<T>,
    pub conv5: Tensor<T>,
    pub conv6: Tensor<T>,
    pub conv7: Tensor<T>,
    pub conv8: Tensor<T>,
    pub conv9: Tensor<T>,
    pub enhanced: Tensor<T>,
}

impl<T> ForwardTrace<T> {
    /// Named layer outputs in graph order.
    pub fn named_outputs(&self) -> [(&'static str, &Tensor<T>); 12] {
        [
            ("Conv0", &self.conv0),
            ("Conv", &self.conv),
            ("Conv1", &self.conv1),
            ("Conv2", &self.conv2),
            ("Conv3", &self.conv3),
            ("Conv4", &self.conv4),
            ("Conv5", &self.conv5),
            ("Conv6", &self.conv6),
            ("Conv7", &self.conv7),
            ("Conv8", &self.conv8),
            ("Conv9", &self.conv9),
            ("Enhanced", &self.enhanced),
        ]
    }
}

/// Parameter gradients plus, optionally, gradients for the two inputs.
#[derive(Debug, Clone)]
pub struct Backprop<T> {
    pub weights: CreNetGrads<T>,
    pub rgb: Option<Tensor<T>>,
    pub cond: Option<Tensor<T>>,
}

impl<T: Real> CreNetWeights<T> {
    pub fn zeros() -> Self {
        CreNetWeights {
            layers: LAYERS
                .iter()
                .map(|l| Conv2d::zeros(l.in_channels, l.out_channels, l.kernel, l.sampling))
                .collect(),
        }
    }

    /// He-normal kernels (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = CreNetWeights::zeros();
        for conv in &mut weights.layers {
            let std = (2.0 / conv.fan_in() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for w in &mut conv.weight {
                *w = T::lit(normal.sample(&mut rng));
            }
        }
        weights
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn zero_grads(&self) -> CreNetGrads<T> {
        self.layers.iter().map(ConvGrads::zeros_like).collect()
    }

    pub fn cast<U: Real>(&self) -> CreNetWeights<U> {
        let conv = |v: &[T]| v.iter().map(|&x| U::lit(x.as_f64())).collect();
        CreNetWeights {
            layers: self
                .layers
                .iter()
                .map(|l| Conv2d {
                    in_channels: l.in_channels,
                    out_channels: l.out_channels,
                    kernel: l.kernel,
                    sampling: l.sampling,
                    weight: conv(&l.weight),
                    bias: conv(&l.bias),
                })
                .collect(),
        }
    }

    /// Checks every layer against [`LAYERS`].
    pub fn validate(&self) -> Result<()> {
        if self.layers.len() != LAYERS.len() {
            return Err(Error::Layout(format!(
                "expected {} layers, found {}",
                LAYERS.len(),
                self.layers.len()
            )));
        }
        for (conv, spec) in self.layers.iter().zip(&LAYERS) {
            let ok = conv.in_channels == spec.in_channels
                && conv.out_channels == spec.out_channels
                && conv.kernel == spec.kernel
                && conv.sampling == spec.sampling
                && conv.weight.len() == spec.out_channels * spec.in_channels * spec.kernel * spec.kernel
                && conv.bias.len() == spec.out_channels;
            if !ok {
                return Err(Error::Layout(format!("layer {} has the wrong shape", spec.name)));
            }
        }
        Ok(())
    }

    fn conv_act(&self, idx: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut out = self.layers[idx].forward(x)?;
        if LAYERS[idx].relu {
            relu_in_place(&mut out);
        }
        Ok(out)
    }

    fn check_inputs(rgb: &Tensor<T>, cond: &Tensor<T>) -> Result<()> {
        let [n, c, h, w] = rgb.shape();
        if c != 3 || cond.shape() != [n, 1, h, w] {
            return Err(Error::Shape(format!(
                "expected rgb [n, 3, h, w] and cond [n, 1, h, w], got {:?} and {:?}",
                rgb.shape(),
                cond.shape()
            )));
        }
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!("spatial size {h}x{w} must be even")));
        }
        Ok(())
    }

    /// Runs the graph and keeps every activation.
    pub fn forward(&self, rgb: &Tensor<T>, cond: &Tensor<T>) -> Result<(Tensor<T>, ForwardTrace<T>)> {
        Self::check_inputs(rgb, cond)?;
        let input = concat_channels(rgb, cond)?;
        let conv0 = self.conv_act(CONV0, &input)?;
        let conv = self.conv_act(CONV, &input)?;
        let conv1 = self.conv_act(CONV1, &conv)?;
        let conv2 = self.conv_act(CONV2, &conv1)?;
        let conv3 = self.conv_act(CONV3, &conv2)?;
        let conv4 = self.conv_act(CONV4, &conv3)?;
        let conv5 = concat_channels(&conv4, &conv1)?;
        let conv6 = self.conv_act(CONV6, &conv5)?;
        let conv7 = concat_channels(&conv6, &conv0)?;
        let conv8 = self.conv_act(CONV8, &conv7)?;
        let conv9 = self.conv_act(CONV9, &conv8)?;
        let enhanced = sigmoid(&conv9);
        let trace = ForwardTrace {
            input,
            conv0,
            conv,
            conv1,
            conv2,
            conv3,
            conv4,
            conv5,
            conv6,
            conv7,
            conv8,
            conv9,
            enhanced: enhanced.clone(),
        };
        Ok((enhanced, trace))
    }

    /// Forward pass that drops activations as soon as they are consumed.
    pub fn infer(&self, rgb: &Tensor<T>, cond: &Tensor<T>) -> Result<Tensor<T>> {
        Self::check_inputs(rgb, cond)?;
        let input = concat_channels(rgb, cond)?;
        let conv0 = self.conv_act(CONV0, &input)?;
        let conv = self.conv_act(CONV, &input)?;
        drop(input);
        let conv1 = self.conv_act(CONV1, &conv)?;
        drop(conv);
        let conv3 = {
            let conv2 = self.conv_act(CONV2, &conv1)?;
            self.conv_act(CONV3, &conv2)?
        };
        let conv4 = self.conv_act(CONV4, &conv3)?;
        drop(conv3);
        let conv6 = self.conv_act(CONV6, &concat_channels(&conv4, &conv1)?)?;
        drop((conv4, conv1));
        let conv8 = self.conv_act(CONV8, &concat_channels(&conv6, &conv0)?)?;
        drop((conv6, conv0));
        Ok(sigmoid(&self.conv_act(CONV9, &conv8)?))
    }

    /// Reverse-mode pass from the gradient of the loss w.r.t. the output.
    pub fn backward(
        &self,
        trace: &ForwardTrace<T>,
        grad_enhanced: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<Backprop<T>> {
        if grad_enhanced.shape() != trace.enhanced.shape() {
            return Err(Error::Shape(format!(
                "loss gradient {:?} does not match output {:?}",
                grad_enhanced.shape(),
                trace.enhanced.shape()
            )));
        }
        let mut grads = self.zero_grads();
        let l = &self.layers;
        let missing = || Error::Shape("input gradient was not produced".into());

        let d9 = sigmoid_backward(&trace.enhanced, grad_enhanced);
        let d8 = l[CONV9]
            .backward(&trace.conv8, &d9, &mut grads[CONV9], true)?
            .ok_or_else(missing)?;
        let d7 = l[CONV8]
            .backward(&trace.conv7, &d8, &mut grads[CONV8], true)?
            .ok_or_else(missing)?;
        let (mut d6, mut d0) = split_channels(&d7, LAYERS[CONV6].out_channels)?;

        relu_backward(&trace.conv6, &mut d6);
        let d5 = l[CONV6]
            .backward(&trace.conv5, &d6, &mut grads[CONV6], true)?
            .ok_or_else(missing)?;
        let (mut d4, mut d1) = split_channels(&d5, LAYERS[CONV4].out_channels)?;

        relu_backward(&trace.conv4, &mut d4);
        let mut d3 = l[CONV4]
            .backward(&trace.conv3, &d4, &mut grads[CONV4], true)?
            .ok_or_else(missing)?;
        relu_backward(&trace.conv3, &mut d3);
        let mut d2 = l[CONV3]
            .backward(&trace.conv2, &d3, &mut grads[CONV3], true)?
            .ok_or_else(missing)?;
        relu_backward(&trace.conv2, &mut d2);
        let d1_down = l[CONV2]
            .backward(&trace.conv1, &d2, &mut grads[CONV2], true)?
            .ok_or_else(missing)?;
        for (a, b) in d1.data_mut().iter_mut().zip(d1_down.data()) {
            *a = *a + *b;
        }

        relu_backward(&trace.conv1, &mut d1);
        let d_conv = l[CONV1]
            .backward(&trace.conv, &d1, &mut grads[CONV1], true)?
            .ok_or_else(missing)?;
        let dx_a = l[CONV].backward(&trace.input, &d_conv, &mut grads[CONV], need_input_grad)?;

        relu_backward(&trace.conv0, &mut d0);
        let dx_b = l[CONV0].backward(&trace.input, &d0, &mut grads[CONV0], need_input_grad)?;

        let (rgb, cond) = match (dx_a, dx_b) {
            (Some(mut a), Some(b)) => {
                for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                    *x = *x + *y;
                }
                let (rgb, cond) = split_channels(&a, 3)?;
                (Some(rgb), Some(cond))
            }
            _ => (None, None),
        };
        Ok(Backprop {
            weights: grads,
            rgb,
            cond,
        })
    }
}

/// Named layer output shapes in graph order.
pub type LayerShapes = Vec<(&'static str, [usize; 4])>;

/// Output shape and per-layer shapes for a given input size, in graph order
/// (including both concatenations).
pub fn architecture_audit<T: Real>(
    weights: &CreNetWeights<T>,
    h: usize,
    w: usize,
) -> Result<(LayerShapes, [usize; 4])> {
    let rgb = Tensor::zeros([1, 3, h, w]);
    let cond = Tensor::zeros([1, 1, h, w]);
    let (out, trace) = weights.forward(&rgb, &cond)?;
    let shapes = trace
        .named_outputs()
        .iter()
        .map(|(name, t)| (*name, t.shape()))
        .collect();
    Ok((shapes, out.shape()))
}
