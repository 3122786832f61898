//! Layers with explicit forward/backward passes.
//!
//! Every layer supports three calls: `forward_train` (batch statistics,
//! optionally caching what backward needs), `forward_eval` (read-only, safe
//! on a shared snapshot) and `backward` (accumulates parameter gradients and
//! returns the input gradient). Convolutions split the batch into fixed-size
//! sample chunks that may run in parallel; partial weight gradients are
//! reduced in chunk order so results never depend on the thread count.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::exec;
use crate::tensor::{gemm, Tensor};

/// Samples per convolution work item.
const CONV_CHUNK: usize = 8;

/// A named parameter or buffer tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    /// Subject to weight decay.
    pub decay: bool,
    /// Updated by the optimizer. Buffers (BN running stats) are not.
    pub trainable: bool,
}

impl Param {
    pub fn new(name: String, shape: Vec<usize>, value: Vec<f64>, decay: bool) -> Self {
        let len = value.len();
        debug_assert_eq!(len, shape.iter().product::<usize>());
        Self {
            name,
            shape,
            value,
            grad: vec![0.0; len],
            decay,
            trainable: true,
        }
    }

    fn buffer(name: String, value: Vec<f64>) -> Self {
        let len = value.len();
        Self {
            name,
            shape: vec![len],
            value,
            grad: Vec::new(),
            decay: false,
            trainable: false,
        }
    }

    fn zeros(name: String, len: usize) -> Self {
        Self::new(name, vec![len], vec![0.0; len], false)
    }

    fn normal(name: String, shape: Vec<usize>, std: f64, rng: &mut impl Rng) -> Self {
        let len = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("finite std");
        let value = (0..len).map(|_| dist.sample(rng)).collect();
        Self::new(name, shape, value, true)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// 2-D convolution, weights stored as `[k*k*cin, cout]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub cin: usize,
    pub cout: usize,
    input: Option<Tensor>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (kernel * kernel * cin) as f64;
        let weight = Param::normal(
            format!("{name}.weight"),
            vec![kernel * kernel * cin, cout],
            (2.0 / fan_in).sqrt(),
            rng,
        );
        let bias = bias.then(|| Param::zeros(format!("{name}.bias"), cout));
        Self {
            weight,
            bias,
            kernel,
            stride,
            pad,
            cin,
            cout,
            input: None,
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &Tensor, s0: usize, s1: usize, ho: usize, wo: usize) -> Vec<f64> {
        let (k, cin) = (self.kernel, self.cin);
        let row = k * k * cin;
        let mut cols = vec![0.0; (s1 - s0) * ho * wo * row];
        for s in s0..s1 {
            for oy in 0..ho {
                for ox in 0..wo {
                    let r = ((s - s0) * ho + oy) * wo + ox;
                    let dst = &mut cols[r * row..(r + 1) * row];
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= x.w as isize {
                                continue;
                            }
                            let src = ((s * x.h + iy as usize) * x.w + ix as usize) * cin;
                            let d = (ky * k + kx) * cin;
                            dst[d..d + cin].copy_from_slice(&x.data[src..src + cin]);
                        }
                    }
                }
            }
        }
        cols
    }

    /// Scatter-add column gradients back into a chunk of input gradients.
    #[allow(clippy::too_many_arguments)]
    fn col2im(&self, dcols: &[f64], dx: &mut [f64], samples: usize, h: usize, w: usize, ho: usize, wo: usize) {
        let (k, cin) = (self.kernel, self.cin);
        let row = k * k * cin;
        for s in 0..samples {
            for oy in 0..ho {
                for ox in 0..wo {
                    let r = (s * ho + oy) * wo + ox;
                    let src = &dcols[r * row..(r + 1) * row];
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let d = ((s * h + iy as usize) * w + ix as usize) * cin;
                            let o = (ky * k + kx) * cin;
                            for (a, b) in dx[d..d + cin].iter_mut().zip(&src[o..o + cin]) {
                                *a += b;
                            }
                        }
                    }
                }
            }
        }
    }

    fn compute(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.cin, "conv input channels");
        let (ho, wo) = self.out_hw(x.h, x.w);
        let mut out = Tensor::zeros(x.n, ho, wo, self.cout);
        let per_sample = ho * wo * self.cout;
        let row = self.kernel * self.kernel * self.cin;
        exec::for_each_chunk_mut(&mut out.data, CONV_CHUNK * per_sample, |ci, chunk| {
            let s0 = ci * CONV_CHUNK;
            let s1 = s0 + chunk.len() / per_sample;
            let cols = self.im2col(x, s0, s1, ho, wo);
            let rows = (s1 - s0) * ho * wo;
            gemm(rows, row, self.cout, &cols, false, &self.weight.value, false, 0.0, chunk);
            if let Some(b) = &self.bias {
                for r in chunk.chunks_exact_mut(self.cout) {
                    for (v, bb) in r.iter_mut().zip(&b.value) {
                        *v += bb;
                    }
                }
            }
        });
        out
    }

    pub fn forward_train(&mut self, x: &Tensor, cache: bool) -> Tensor {
        let out = self.compute(x);
        self.input = cache.then(|| x.clone());
        out
    }

    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        self.compute(x)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.input.take().expect("conv backward without cached forward");
        let (ho, wo) = self.out_hw(x.h, x.w);
        assert_eq!((dy.n, dy.h, dy.w, dy.c), (x.n, ho, wo, self.cout), "conv grad shape");
        let row = self.kernel * self.kernel * self.cin;
        let chunks = x.n.div_ceil(CONV_CHUNK);
        let this = &*self;
        let partials = exec::map_range(chunks, |ci| {
            let s0 = ci * CONV_CHUNK;
            let s1 = (s0 + CONV_CHUNK).min(x.n);
            let rows = (s1 - s0) * ho * wo;
            let cols = this.im2col(&x, s0, s1, ho, wo);
            let dyc = &dy.data[s0 * ho * wo * this.cout..s1 * ho * wo * this.cout];
            let mut dw = vec![0.0; row * this.cout];
            gemm(row, rows, this.cout, &cols, true, dyc, false, 0.0, &mut dw);
            let mut db = vec![0.0; this.cout];
            for r in dyc.chunks_exact(this.cout) {
                for (a, b) in db.iter_mut().zip(r) {
                    *a += b;
                }
            }
            let mut dcols = vec![0.0; rows * row];
            gemm(rows, this.cout, row, dyc, false, &this.weight.value, true, 0.0, &mut dcols);
            let mut dx = vec![0.0; (s1 - s0) * x.h * x.w * x.c];
            this.col2im(&dcols, &mut dx, s1 - s0, x.h, x.w, ho, wo);
            (dw, db, dx)
        });
        let mut dx = Vec::with_capacity(x.data.len());
        for (dw, db, dxc) in partials {
            for (g, v) in self.weight.grad.iter_mut().zip(&dw) {
                *g += v;
            }
            if let Some(b) = &mut self.bias {
                for (g, v) in b.grad.iter_mut().zip(&db) {
                    *g += v;
                }
            }
            dx.extend_from_slice(&dxc);
        }
        Tensor::from_data(x.n, x.h, x.w, x.c, dx)
    }

    fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

/// Per-channel batch normalization.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<(Vec<f64>, Vec<f64>, (usize, usize, usize, usize))>,
}

impl BatchNorm {
    pub fn new(name: &str, c: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), vec![c], vec![1.0; c], false),
            beta: Param::zeros(format!("{name}.beta"), c),
            running_mean: Param::buffer(format!("{name}.running_mean"), vec![0.0; c]),
            running_var: Param::buffer(format!("{name}.running_var"), vec![1.0; c]),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward_train(&mut self, x: &Tensor, cache: bool) -> Tensor {
        let c = x.c;
        let m = x.data.len() / c;
        let mut mean = vec![0.0; c];
        for r in x.data.chunks_exact(c) {
            for (a, v) in mean.iter_mut().zip(r) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        let mut var = vec![0.0; c];
        for r in x.data.chunks_exact(c) {
            for ((a, v), mu) in var.iter_mut().zip(r).zip(&mean) {
                *a += (v - mu) * (v - mu);
            }
        }
        var.iter_mut().for_each(|v| *v /= m as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = x.data.clone();
        for r in xhat.chunks_exact_mut(c) {
            for ((v, mu), is) in r.iter_mut().zip(&mean).zip(&inv_std) {
                *v = (*v - mu) * is;
            }
        }
        let mut out = Tensor::from_data(x.n, x.h, x.w, c, xhat.clone());
        for r in out.data.chunks_exact_mut(c) {
            for ((v, g), b) in r.iter_mut().zip(&self.gamma.value).zip(&self.beta.value) {
                *v = *v * g + b;
            }
        }
        let unbias = if m > 1 { m as f64 / (m - 1) as f64 } else { 1.0 };
        for i in 0..c {
            self.running_mean.value[i] =
                (1.0 - self.momentum) * self.running_mean.value[i] + self.momentum * mean[i];
            self.running_var.value[i] =
                (1.0 - self.momentum) * self.running_var.value[i] + self.momentum * var[i] * unbias;
        }
        self.cache = cache.then_some((xhat, inv_std, (x.n, x.h, x.w, c)));
        out
    }

    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        for r in out.data.chunks_exact_mut(x.c) {
            for (i, v) in r.iter_mut().enumerate() {
                let is = 1.0 / (self.running_var.value[i] + self.eps).sqrt();
                *v = (*v - self.running_mean.value[i]) * is * self.gamma.value[i] + self.beta.value[i];
            }
        }
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (xhat, inv_std, (n, h, w, c)) = self.cache.take().expect("bn backward without cache");
        let m = (n * h * w) as f64;
        let mut sum_dxhat = vec![0.0; c];
        let mut sum_dxhat_xhat = vec![0.0; c];
        for (dr, xr) in dy.data.chunks_exact(c).zip(xhat.chunks_exact(c)) {
            for i in 0..c {
                self.gamma.grad[i] += dr[i] * xr[i];
                self.beta.grad[i] += dr[i];
                let dxh = dr[i] * self.gamma.value[i];
                sum_dxhat[i] += dxh;
                sum_dxhat_xhat[i] += dxh * xr[i];
            }
        }
        let mut dx = vec![0.0; dy.data.len()];
        for ((o, dr), xr) in dx.chunks_exact_mut(c).zip(dy.data.chunks_exact(c)).zip(xhat.chunks_exact(c)) {
            for i in 0..c {
                let dxh = dr[i] * self.gamma.value[i];
                o[i] = inv_std[i] / m * (m * dxh - sum_dxhat[i] - xr[i] * sum_dxhat_xhat[i]);
            }
        }
        Tensor::from_data(n, h, w, c, dx)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward_train(&mut self, x: &Tensor, cache: bool) -> Tensor {
        let out = self.forward_eval(x);
        self.mask = cache.then(|| x.data.iter().map(|&v| v > 0.0).collect());
        out
    }

    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        out.data.iter_mut().for_each(|v| *v = v.max(0.0));
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mask = self.mask.take().expect("relu backward without cache");
        let mut dx = dy.clone();
        for (g, &m) in dx.data.iter_mut().zip(&mask) {
            if !m {
                *g = 0.0;
            }
        }
        dx
    }
}

/// 2x2 max pooling with stride 2.
#[derive(Clone, Debug, Default)]
pub struct MaxPool2 {
    cache: Option<(Vec<usize>, (usize, usize, usize, usize))>,
}

impl MaxPool2 {
    fn compute(x: &Tensor) -> (Tensor, Vec<usize>) {
        let (ho, wo, c) = (x.h / 2, x.w / 2, x.c);
        let mut out = Tensor::zeros(x.n, ho, wo, c);
        let mut arg = vec![0usize; out.data.len()];
        for s in 0..x.n {
            for oy in 0..ho {
                for ox in 0..wo {
                    for ch in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        let mut bi = 0;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = ((s * x.h + 2 * oy + dy) * x.w + 2 * ox + dx) * c + ch;
                                if x.data[i] > best {
                                    best = x.data[i];
                                    bi = i;
                                }
                            }
                        }
                        let o = ((s * ho + oy) * wo + ox) * c + ch;
                        out.data[o] = best;
                        arg[o] = bi;
                    }
                }
            }
        }
        (out, arg)
    }

    pub fn forward_train(&mut self, x: &Tensor, cache: bool) -> Tensor {
        let (out, arg) = Self::compute(x);
        self.cache = cache.then_some((arg, (x.n, x.h, x.w, x.c)));
        out
    }

    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        Self::compute(x).0
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (arg, (n, h, w, c)) = self.cache.take().expect("pool backward without cache");
        let mut dx = Tensor::zeros(n, h, w, c);
        for (g, &i) in dy.data.iter().zip(&arg) {
            dx.data[i] += g;
        }
        dx
    }
}

#[derive(Clone, Debug, Default)]
pub struct GlobalAvgPool {
    shape: Option<(usize, usize, usize, usize)>,
}

impl GlobalAvgPool {
    pub fn forward_train(&mut self, x: &Tensor, cache: bool) -> Tensor {
        self.shape = cache.then_some((x.n, x.h, x.w, x.c));
        self.forward_eval(x)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        let hw = (x.h * x.w) as f64;
        let mut out = Tensor::zeros(x.n, 1, 1, x.c);
        for s in 0..x.n {
            let o = out.row_mut(s);
            for px in x.row(s).chunks_exact(x.c) {
                for (a, v) in o.iter_mut().zip(px) {
                    *a += v;
                }
            }
            o.iter_mut().for_each(|v| *v /= hw);
        }
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (n, h, w, c) = self.shape.take().expect("gap backward without cache");
        let hw = (h * w) as f64;
        let mut dx = Tensor::zeros(n, h, w, c);
        for s in 0..n {
            let g = dy.row(s).to_vec();
            for px in dx.row_mut(s).chunks_exact_mut(c) {
                for (a, v) in px.iter_mut().zip(&g) {
                    *a = v / hw;
                }
            }
        }
        dx
    }
}

/// Fully connected layer on `n x in` feature matrices, weights `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    pub fan_in: usize,
    pub fan_out: usize,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new(name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        Self {
            weight: Param::normal(format!("{name}.weight"), vec![fan_in, fan_out], std, rng),
            bias: Param::zeros(format!("{name}.bias"), fan_out),
            fan_in,
            fan_out,
            input: None,
        }
    }

    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.row_len(), self.fan_in, "linear input width");
        let mut out = vec![0.0; x.n * self.fan_out];
        for r in out.chunks_exact_mut(self.fan_out) {
            r.copy_from_slice(&self.bias.value);
        }
        gemm(x.n, self.fan_in, self.fan_out, &x.data, false, &self.weight.value, false, 1.0, &mut out);
        Tensor::matrix(x.n, self.fan_out, out)
    }

    pub fn forward_train(&mut self, x: &Tensor, cache: bool) -> Tensor {
        let out = self.forward_eval(x);
        self.input = cache.then(|| x.clone());
        out
    }

    /// Accumulates parameter gradients and returns `dy * W^T`.
    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.input.take().expect("linear backward without cache");
        assert_eq!((dy.n, dy.row_len()), (x.n, self.fan_out), "linear grad shape");
        gemm(self.fan_in, x.n, self.fan_out, &x.data, true, &dy.data, false, 1.0, &mut self.weight.grad);
        for r in dy.data.chunks_exact(self.fan_out) {
            for (g, v) in self.bias.grad.iter_mut().zip(r) {
                *g += v;
            }
        }
        let mut dx = vec![0.0; x.n * self.fan_in];
        gemm(x.n, self.fan_out, self.fan_in, &dy.data, false, &self.weight.value, true, 0.0, &mut dx);
        Tensor::from_data(x.n, x.h, x.w, x.c, dx)
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Residual block: `post(branch(pre(x)) + shortcut)`, where the shortcut is
/// either the identity on `x` or a projection of `pre(x)`.
#[derive(Clone, Debug)]
pub struct Residual {
    pub pre: Sequential,
    pub branch: Sequential,
    pub projection: Option<Sequential>,
    pub post_relu: Option<Relu>,
}

impl Residual {
    fn forward_train(&mut self, x: &Tensor, cache: bool) -> Tensor {
        let p = self.pre.forward_train(x, cache);
        let mut out = self.branch.forward_train(&p, cache);
        match &mut self.projection {
            Some(proj) => out.add_assign(&proj.forward_train(&p, cache)),
            None => out.add_assign(x),
        }
        match &mut self.post_relu {
            Some(r) => r.forward_train(&out, cache),
            None => out,
        }
    }

    fn forward_eval(&self, x: &Tensor) -> Tensor {
        let p = self.pre.forward_eval(x);
        let mut out = self.branch.forward_eval(&p);
        match &self.projection {
            Some(proj) => out.add_assign(&proj.forward_eval(&p)),
            None => out.add_assign(x),
        }
        match &self.post_relu {
            Some(r) => r.forward_eval(&out),
            None => out,
        }
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let d = match &mut self.post_relu {
            Some(r) => r.backward(dy),
            None => dy.clone(),
        };
        let mut dp = self.branch.backward(&d);
        match &mut self.projection {
            Some(proj) => {
                dp.add_assign(&proj.backward(&d));
                self.pre.backward(&dp)
            }
            None => {
                let mut dx = self.pre.backward(&dp);
                dx.add_assign(&d);
                dx
            }
        }
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    Conv(Conv2d),
    BatchNorm(BatchNorm),
    Relu(Relu),
    MaxPool(MaxPool2),
    GlobalAvgPool(GlobalAvgPool),
    Residual(Box<Residual>),
}

impl Layer {
    fn forward_train(&mut self, x: &Tensor, cache: bool) -> Tensor {
        match self {
            Layer::Conv(l) => l.forward_train(x, cache),
            Layer::BatchNorm(l) => l.forward_train(x, cache),
            Layer::Relu(l) => l.forward_train(x, cache),
            Layer::MaxPool(l) => l.forward_train(x, cache),
            Layer::GlobalAvgPool(l) => l.forward_train(x, cache),
            Layer::Residual(l) => l.forward_train(x, cache),
        }
    }

    fn forward_eval(&self, x: &Tensor) -> Tensor {
        match self {
            Layer::Conv(l) => l.forward_eval(x),
            Layer::BatchNorm(l) => l.forward_eval(x),
            Layer::Relu(l) => l.forward_eval(x),
            Layer::MaxPool(l) => l.forward_eval(x),
            Layer::GlobalAvgPool(l) => l.forward_eval(x),
            Layer::Residual(l) => l.forward_eval(x),
        }
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        match self {
            Layer::Conv(l) => l.backward(dy),
            Layer::BatchNorm(l) => l.backward(dy),
            Layer::Relu(l) => l.backward(dy),
            Layer::MaxPool(l) => l.backward(dy),
            Layer::GlobalAvgPool(l) => l.backward(dy),
            Layer::Residual(l) => l.backward(dy),
        }
    }

    fn collect<'a>(&'a self, out: &mut Vec<&'a Param>) {
        match self {
            Layer::Conv(l) => out.extend(l.params()),
            Layer::BatchNorm(l) => {
                out.extend([&l.gamma, &l.beta, &l.running_mean, &l.running_var])
            }
            Layer::Residual(r) => {
                r.pre.collect(out);
                r.branch.collect(out);
                if let Some(p) = &r.projection {
                    p.collect(out);
                }
            }
            Layer::Relu(_) | Layer::MaxPool(_) | Layer::GlobalAvgPool(_) => {}
        }
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        match self {
            Layer::Conv(l) => out.extend(l.params_mut()),
            Layer::BatchNorm(l) => out.extend([
                &mut l.gamma,
                &mut l.beta,
                &mut l.running_mean,
                &mut l.running_var,
            ]),
            Layer::Residual(r) => {
                r.pre.collect_mut(out);
                r.branch.collect_mut(out);
                if let Some(p) = &mut r.projection {
                    p.collect_mut(out);
                }
            }
            Layer::Relu(_) | Layer::MaxPool(_) | Layer::GlobalAvgPool(_) => {}
        }
    }

    fn has_batch_norm(&self) -> bool {
        match self {
            Layer::BatchNorm(_) => true,
            Layer::Residual(r) => {
                r.pre.has_batch_norm()
                    || r.branch.has_batch_norm()
                    || r.projection.as_ref().is_some_and(|p| p.has_batch_norm())
            }
            _ => false,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn forward_train(&mut self, x: &Tensor, cache: bool) -> Tensor {
        let mut cur = x.clone();
        for l in &mut self.layers {
            cur = l.forward_train(&cur, cache);
        }
        cur
    }

    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        let mut cur = x.clone();
        for l in &self.layers {
            cur = l.forward_eval(&cur);
        }
        cur
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut cur = dy.clone();
        for l in self.layers.iter_mut().rev() {
            cur = l.backward(&cur);
        }
        cur
    }

    pub fn collect<'a>(&'a self, out: &mut Vec<&'a Param>) {
        for l in &self.layers {
            l.collect(out);
        }
    }

    pub fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        for l in &mut self.layers {
            l.collect_mut(out);
        }
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(Layer::has_batch_norm)
    }
}
