use rand::Rng;

use super::adam::{adam_step, AdamState};
use super::layers::{
    conv_backward_cols, conv_forward_cols, cross_entropy, dropout_mask, im2col, maxpool_backward_raw, maxpool_raw,
    relu_backward_in_place, relu_in_place, ConvLayer, Mode, KSIZE,
};
use super::tensor::{Real, Tensor};
use super::NnRng;
use crate::error::{Error, Result};

/// Parameter tensors in their fixed architectural order.
pub const PARAM_NAMES: [&str; 8] = [
    "conv1.kernels",
    "conv1.bias",
    "conv2.kernels",
    "conv2.bias",
    "fc1.weights",
    "fc1.bias",
    "fc2.weights",
    "fc2.bias",
];

/// Indices into [`PARAM_NAMES`] of tensors subject to the L2 penalty.
const WEIGHT_INDICES: [usize; 4] = [0, 2, 4, 6];

/// Layer sizes. Only `classes` varies for the production network; the
/// other fields exist so gradient checks can run a scaled-down copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub input_side: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Architecture {
    /// 128×128×1 input, 16 and 32 filters, 256 hidden units.
    pub fn standard(classes: usize) -> Self {
        Self { input_side: 128, conv1_filters: 16, conv2_filters: 32, hidden: 256, classes }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if !self.input_side.is_multiple_of(4) || self.input_side / 2 < KSIZE {
            return Err(Error::Config(format!(
                "input side {} must be a multiple of 4 and at least 8",
                self.input_side
            )));
        }
        if self.conv1_filters == 0 || self.conv2_filters == 0 || self.hidden == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn flat_len(&self) -> usize {
        let s = self.input_side / 4;
        s * s * self.conv2_filters
    }

    /// Output shape after each stage: conv1, pool1, conv2, pool2, flatten, fc1, fc2.
    pub fn shape_chain(&self) -> Vec<Vec<usize>> {
        let (s, c1, c2) = (self.input_side, self.conv1_filters, self.conv2_filters);
        vec![
            vec![s, s, c1],
            vec![s / 2, s / 2, c1],
            vec![s / 2, s / 2, c2],
            vec![s / 4, s / 4, c2],
            vec![self.flat_len()],
            vec![self.hidden],
            vec![self.classes],
        ]
    }

    pub fn param_shapes(&self) -> [Vec<usize>; 8] {
        [
            vec![self.conv1_filters, 1, KSIZE, KSIZE],
            vec![self.conv1_filters],
            vec![self.conv2_filters, self.conv1_filters, KSIZE, KSIZE],
            vec![self.conv2_filters],
            vec![self.hidden, self.flat_len()],
            vec![self.hidden],
            vec![self.classes, self.hidden],
            vec![self.classes],
        ]
    }

    /// Inverse of [`Architecture::param_shapes`].
    pub fn from_param_shapes(shapes: &[Vec<usize>]) -> Result<Self> {
        let bad = || Error::Format(format!("parameter shapes do not form a valid network: {shapes:?}"));
        if shapes.len() != 8 {
            return Err(bad());
        }
        let (c1, c2) = (shapes[0][0], shapes[2][0]);
        let &[hidden, flat] = shapes[4].as_slice() else { return Err(bad()) };
        let classes = shapes[6][0];
        let cells = flat / c2.max(1);
        let side4 = (cells as f64).sqrt().round() as usize;
        let arch = Self { input_side: side4 * 4, conv1_filters: c1, conv2_filters: c2, hidden, classes };
        if arch.validate().is_err() || arch.param_shapes().as_slice() != shapes {
            return Err(bad());
        }
        Ok(arch)
    }
}

/// Per-parameter gradients, same order as [`PARAM_NAMES`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T>(pub Vec<Tensor<T>>);

#[derive(Debug, Clone)]
pub struct BatchOutput<T> {
    /// Mean cross-entropy over the batch plus the L2 penalty.
    pub loss: f64,
    pub grads: Gradients<T>,
    pub predictions: Vec<usize>,
}

/// Conv1 → ReLU → Pool → Conv2 → ReLU → Pool → FC1 (ReLU) → Dropout → FC2.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel<T> {
    arch: Architecture,
    pub conv1: ConvLayer<T>,
    pub conv2: ConvLayer<T>,
    pub fc1_weights: Tensor<T>,
    pub fc1_bias: Tensor<T>,
    pub fc2_weights: Tensor<T>,
    pub fc2_bias: Tensor<T>,
    pub dropout_rate: f64,
}

struct ConvCache<T> {
    cols1: Vec<T>,
    act1: Vec<T>,
    idx1: Vec<usize>,
    cols2: Vec<T>,
    act2: Vec<T>,
    idx2: Vec<usize>,
}

/// Index of the largest value, lowest index on ties.
pub fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

impl<T: Real> CnnModel<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn new(arch: Architecture, rng: &mut NnRng) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.param_shapes();
        let mut glorot = |shape: &[usize], fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..shape.iter().product::<usize>()).map(|_| T::lit(rng.random_range(-bound..bound))).collect();
            Tensor::from_vec(shape, data).expect("shape/product agree")
        };
        let k2 = KSIZE * KSIZE;
        let conv1_k = glorot(&shapes[0], k2, arch.conv1_filters * k2);
        let conv2_k = glorot(&shapes[2], arch.conv1_filters * k2, arch.conv2_filters * k2);
        let fc1 = glorot(&shapes[4], arch.flat_len(), arch.hidden);
        let fc2 = glorot(&shapes[6], arch.hidden, arch.classes);
        Self::from_params(
            arch,
            vec![
                conv1_k,
                Tensor::zeros(&shapes[1]),
                conv2_k,
                Tensor::zeros(&shapes[3]),
                fc1,
                Tensor::zeros(&shapes[5]),
                fc2,
                Tensor::zeros(&shapes[7]),
            ],
        )
    }

    pub fn from_params(arch: Architecture, params: Vec<Tensor<T>>) -> Result<Self> {
        arch.validate()?;
        if params.len() != 8 {
            return Err(Error::Shape(format!("expected 8 parameter tensors, got {}", params.len())));
        }
        for ((p, want), name) in params.iter().zip(arch.param_shapes()).zip(PARAM_NAMES) {
            p.expect_shape(&want, name)?;
        }
        let mut it = params.into_iter();
        let mut next = || it.next().expect("length checked");
        Ok(Self {
            arch,
            conv1: ConvLayer::new(next(), next())?,
            conv2: ConvLayer::new(next(), next())?,
            fc1_weights: next(),
            fc1_bias: next(),
            fc2_weights: next(),
            fc2_bias: next(),
            dropout_rate: 0.5,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn params(&self) -> [&Tensor<T>; 8] {
        [
            &self.conv1.kernels,
            &self.conv1.bias,
            &self.conv2.kernels,
            &self.conv2.bias,
            &self.fc1_weights,
            &self.fc1_bias,
            &self.fc2_weights,
            &self.fc2_bias,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor<T>; 8] {
        [
            &mut self.conv1.kernels,
            &mut self.conv1.bias,
            &mut self.conv2.kernels,
            &mut self.conv2.bias,
            &mut self.fc1_weights,
            &mut self.fc1_bias,
            &mut self.fc2_weights,
            &mut self.fc2_bias,
        ]
    }

    pub fn weights(&self) -> Vec<&Tensor<T>> {
        let p = self.params();
        WEIGHT_INDICES.iter().map(|&i| p[i]).collect()
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.weights().iter().map(|w| w.sum_squares()).sum()
    }

    pub fn cast<U: Real>(&self) -> CnnModel<U> {
        let params = self.params().iter().map(|p| p.cast()).collect();
        let mut m = CnnModel::from_params(self.arch, params).expect("same architecture");
        m.dropout_rate = self.dropout_rate;
        m
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let s = self.arch.input_side;
        input.expect_shape(&[s, s, 1], "model input")
    }

    fn conv_stack(&self, x: &[T]) -> ConvCache<T> {
        let s = self.arch.input_side;
        let (c1, c2) = (self.arch.conv1_filters, self.arch.conv2_filters);
        let cols1 = im2col(x, s, s, 1);
        let mut act1 = conv_forward_cols(&cols1, s * s, &self.conv1);
        relu_in_place(&mut act1);
        let (pool1, idx1) = maxpool_raw(&act1, s, s, c1);
        let h = s / 2;
        let cols2 = im2col(&pool1, h, h, c1);
        let mut act2 = conv_forward_cols(&cols2, h * h, &self.conv2);
        relu_in_place(&mut act2);
        let (_, idx2) = maxpool_raw(&act2, h, h, c2);
        ConvCache { cols1, act1, idx1, cols2, act2, idx2 }
    }

    fn pooled_features(cache: &ConvCache<T>) -> impl Iterator<Item = T> + '_ {
        cache.idx2.iter().map(|&i| cache.act2[i])
    }

    /// Fully connected layers over a batch of flattened features (`B × flat`);
    /// returns the ReLU hidden activations, dropout mask and logits.
    fn head(&self, feats: &[T], batch: usize, mode: Mode, rng: &mut NnRng) -> (Vec<T>, Vec<T>, Vec<T>) {
        let (flat, hidden, classes) = (self.arch.flat_len(), self.arch.hidden, self.arch.classes);
        let mut h = Vec::with_capacity(batch * hidden);
        for _ in 0..batch {
            h.extend_from_slice(self.fc1_bias.data());
        }
        T::gemm_raw(
            batch,
            flat,
            hidden,
            T::one(),
            feats,
            flat,
            1,
            self.fc1_weights.data(),
            1,
            flat,
            T::one(),
            &mut h,
            hidden,
            1,
        );
        relu_in_place(&mut h);
        let mask = dropout_mask::<T>(batch * hidden, self.dropout_rate, mode, rng);
        let dropped: Vec<T> = h.iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let mut logits = Vec::with_capacity(batch * classes);
        for _ in 0..batch {
            logits.extend_from_slice(self.fc2_bias.data());
        }
        T::gemm_raw(
            batch,
            hidden,
            classes,
            T::one(),
            &dropped,
            hidden,
            1,
            self.fc2_weights.data(),
            1,
            hidden,
            T::one(),
            &mut logits,
            classes,
            1,
        );
        (h, mask, logits)
    }

    /// Logits for one `side × side × 1` input. Train mode draws a dropout
    /// mask from `rng`; eval mode never touches it.
    pub fn forward(&self, input: &Tensor<T>, mode: Mode, rng: &mut NnRng) -> Result<Vec<T>> {
        self.check_input(input)?;
        let cache = self.conv_stack(input.data());
        let feats: Vec<T> = Self::pooled_features(&cache).collect();
        Ok(self.head(&feats, 1, mode, rng).2)
    }

    /// Eval-mode logits.
    pub fn logits(&self, input: &Tensor<T>) -> Result<Vec<T>> {
        // Eval mode draws nothing, so any seed gives the same answer.
        let mut rng = <NnRng as rand::SeedableRng>::seed_from_u64(0);
        self.forward(input, Mode::Eval, &mut rng)
    }

    pub fn predict_class(&self, input: &Tensor<T>) -> Result<usize> {
        Ok(argmax(&self.logits(input)?))
    }

    /// Mean loss and its gradient over a batch, accumulated in fixed
    /// example order.
    pub fn batch_gradients(
        &self,
        inputs: &[&Tensor<T>],
        labels: &[usize],
        lambda: f64,
        mode: Mode,
        rng: &mut NnRng,
    ) -> Result<BatchOutput<T>> {
        if inputs.is_empty() || inputs.len() != labels.len() {
            return Err(Error::Shape(format!("{} inputs but {} labels", inputs.len(), labels.len())));
        }
        for (x, &y) in inputs.iter().zip(labels) {
            self.check_input(x)?;
            if y >= self.arch.classes {
                return Err(Error::LabelOutOfRange { label: y, classes: self.arch.classes });
            }
        }
        let a = self.arch;
        let batch = inputs.len();
        let (flat, hidden, classes) = (a.flat_len(), a.hidden, a.classes);
        let s = a.input_side;
        let h2 = s / 2;

        let caches: Vec<ConvCache<T>> = inputs.iter().map(|x| self.conv_stack(x.data())).collect();
        let feats: Vec<T> = caches.iter().flat_map(Self::pooled_features).collect();
        let (hid, mask, logits) = self.head(&feats, batch, mode, rng);

        let scale = T::lit(1.0 / batch as f64);
        let mut ce_total = 0.0;
        let mut glogits = Vec::with_capacity(batch * classes);
        let mut predictions = Vec::with_capacity(batch);
        for (row, &y) in logits.chunks_exact(classes).zip(labels) {
            let (ce, g) = cross_entropy(row, y);
            ce_total += ce;
            glogits.extend(g.into_iter().map(|v| v * scale));
            predictions.push(argmax(row));
        }

        let mut grads: Vec<Tensor<T>> = a.param_shapes().iter().map(|s| Tensor::zeros(s)).collect();
        let [g_c1k, g_c1b, g_c2k, g_c2b, g_f1w, g_f1b, g_f2w, g_f2b] = &mut grads[..] else {
            unreachable!("eight parameter tensors")
        };

        // FC2
        let dropped: Vec<T> = hid.iter().zip(&mask).map(|(&h, &m)| h * m).collect();
        T::gemm_raw(
            classes,
            batch,
            hidden,
            T::one(),
            &glogits,
            1,
            classes,
            &dropped,
            hidden,
            1,
            T::zero(),
            g_f2w.data_mut(),
            hidden,
            1,
        );
        for row in glogits.chunks_exact(classes) {
            for (b, &g) in g_f2b.data_mut().iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut ghid = vec![T::zero(); batch * hidden];
        T::gemm_raw(
            batch,
            classes,
            hidden,
            T::one(),
            &glogits,
            classes,
            1,
            self.fc2_weights.data(),
            hidden,
            1,
            T::zero(),
            &mut ghid,
            hidden,
            1,
        );

        // Dropout then FC1's ReLU.
        for (g, &m) in ghid.iter_mut().zip(&mask) {
            *g *= m;
        }
        relu_backward_in_place(&mut ghid, &hid);
        T::gemm_raw(
            hidden,
            batch,
            flat,
            T::one(),
            &ghid,
            1,
            hidden,
            &feats,
            flat,
            1,
            T::zero(),
            g_f1w.data_mut(),
            flat,
            1,
        );
        for row in ghid.chunks_exact(hidden) {
            for (b, &g) in g_f1b.data_mut().iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut gfeat = vec![T::zero(); batch * flat];
        T::gemm_raw(
            batch,
            hidden,
            flat,
            T::one(),
            &ghid,
            hidden,
            1,
            self.fc1_weights.data(),
            flat,
            1,
            T::zero(),
            &mut gfeat,
            flat,
            1,
        );

        // Convolutional stack, one example at a time.
        for (cache, gf) in caches.iter().zip(gfeat.chunks_exact(flat)) {
            let mut gact2 = maxpool_backward_raw(gf, &cache.idx2, cache.act2.len());
            relu_backward_in_place(&mut gact2, &cache.act2);
            let gpool1 = conv_backward_cols(
                &gact2,
                &cache.cols2,
                &self.conv2,
                (h2, h2),
                g_c2k.data_mut(),
                g_c2b.data_mut(),
                true,
            )
            .expect("input gradient requested");
            let mut gact1 = maxpool_backward_raw(&gpool1, &cache.idx1, cache.act1.len());
            relu_backward_in_place(&mut gact1, &cache.act1);
            conv_backward_cols(&gact1, &cache.cols1, &self.conv1, (s, s), g_c1k.data_mut(), g_c1b.data_mut(), false);
        }

        let params = self.params();
        let two_lambda = T::lit(2.0 * lambda);
        for &i in &WEIGHT_INDICES {
            for (g, &w) in grads[i].data_mut().iter_mut().zip(params[i].data()) {
                *g += two_lambda * w;
            }
        }

        Ok(BatchOutput {
            loss: ce_total / batch as f64 + lambda * self.l2_norm_sq(),
            grads: Gradients(grads),
            predictions,
        })
    }

    /// Loss only (no gradients), same definition as [`Self::batch_gradients`].
    pub fn batch_loss(
        &self,
        inputs: &[&Tensor<T>],
        labels: &[usize],
        lambda: f64,
        mode: Mode,
        rng: &mut NnRng,
    ) -> Result<f64> {
        let mut ce = 0.0;
        for (x, &y) in inputs.iter().zip(labels) {
            let logits = self.forward(x, mode, rng)?;
            if y >= logits.len() {
                return Err(Error::LabelOutOfRange { label: y, classes: logits.len() });
            }
            ce += cross_entropy(&logits, y).0;
        }
        Ok(ce / inputs.len() as f64 + lambda * self.l2_norm_sq())
    }

    pub fn apply_adam(&mut self, grads: &Gradients<T>, state: &mut AdamState<T>) -> Result<()> {
        let g: Vec<&Tensor<T>> = grads.0.iter().collect();
        adam_step(&mut self.params_mut(), &g, state)
    }
}
