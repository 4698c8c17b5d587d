//! Time-conditioned MLP score approximator with analytic parameter gradients.
//!
//! Architecture: a sinusoidal embedding of `t` is concatenated with the
//! noisy sample, passed through `depth` SiLU layers of `hidden_width`, then a
//! linear head of size `d + m`. The head predicts the injected noise, and the
//! score is `-head / sigma(t)`; the head starts at zero so an untrained
//! network returns the zero score.
//!
//! Parameters live in one flat vector, layer by layer, each layer stored as
//! its `[in][out]` row-major weight block followed by its bias.

use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, check_time, Error, Result};
use crate::sde::VpSchedule;

const TIME_SCALE: f64 = 1000.0;
const SIGMA_FLOOR: f64 = 1e-4;
/// Rows per gradient chunk. Chunk results are reduced in index order.
const GRAD_CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub d: usize,
    pub m: usize,
    pub hidden_width: usize,
    pub depth: usize,
    pub time_embed_dim: usize,
}

impl NetConfig {
    pub fn new(d: usize, m: usize) -> Self {
        NetConfig {
            d,
            m,
            hidden_width: 256,
            depth: 3,
            time_embed_dim: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.d, self.m, self.hidden_width, self.depth, self.time_embed_dim].contains(&0) {
            return Err(Error::InvalidConfig(
                "network sizes must all be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Width of a sample, `d + m`.
    pub fn io_dim(&self) -> usize {
        self.d + self.m
    }

    /// `(fan_in, fan_out)` of every dense layer, head last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.depth + 1);
        shapes.push((self.time_embed_dim + self.io_dim(), self.hidden_width));
        for _ in 1..self.depth {
            shapes.push((self.hidden_width, self.hidden_width));
        }
        shapes.push((self.hidden_width, self.io_dim()));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerSlot {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

fn layout(cfg: &NetConfig) -> Vec<LayerSlot> {
    let mut off = 0;
    cfg.layer_shapes()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let slot = LayerSlot {
                fan_in,
                fan_out,
                w: off,
                b: off + fan_in * fan_out,
            };
            off += fan_in * fan_out + fan_out;
            slot
        })
        .collect()
}

/// Sinusoidal embedding; an odd trailing slot carries `t` itself.
pub fn time_embedding(t: f64, out: &mut [f64]) {
    let dim = out.len();
    let half = dim / 2;
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let arg = TIME_SCALE * t * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    if dim % 2 == 1 {
        out[dim - 1] = t;
    }
}

fn silu(a: f64) -> f64 {
    a / (1.0 + (-a).exp())
}

fn silu_grad(a: f64) -> f64 {
    let s = 1.0 / (1.0 + (-a).exp());
    s * (1.0 + a * (1.0 - s))
}

/// One training example for [`ScoreNetwork::loss_grad`].
#[derive(Debug, Clone, PartialEq)]
pub struct LossItem {
    pub xt: Vec<f64>,
    pub t: f64,
    pub target: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNetwork {
    config: NetConfig,
    schedule: VpSchedule,
    params: Vec<f64>,
    seed: u64,
}

struct Tape {
    /// `post[0]` is the network input, `post[l + 1]` the output of layer `l`.
    post: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    head: Array2<f64>,
}

impl ScoreNetwork {
    pub fn init(config: NetConfig, schedule: VpSchedule, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = vec![0.0; config.param_count()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slots = layout(&config);
        let hidden = &slots[..slots.len() - 1];
        for slot in hidden {
            let scale = 1.0 / (slot.fan_in as f64).sqrt();
            for w in &mut params[slot.w..slot.b] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *w = z * scale;
            }
        }
        Ok(ScoreNetwork {
            config,
            schedule,
            params,
            seed,
        })
    }

    pub fn from_parts(
        config: NetConfig,
        schedule: VpSchedule,
        params: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        check_len(config.param_count(), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(ScoreNetwork {
            config,
            schedule,
            params,
            seed,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn schedule(&self) -> &VpSchedule {
        &self.schedule
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn weight(&self, slot: &LayerSlot) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((slot.fan_in, slot.fan_out), &self.params[slot.w..slot.b])
            .expect("layout matches parameter count")
    }

    fn bias(&self, slot: &LayerSlot) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[slot.b..slot.b + slot.fan_out])
    }

    fn sigma(&self, t: f64) -> f64 {
        self.schedule.sigma(t).max(SIGMA_FLOOR)
    }

    fn input_matrix(&self, xs: ArrayView2<'_, f64>, ts: &[f64]) -> Array2<f64> {
        let e = self.config.time_embed_dim;
        let mut z = Array2::zeros((xs.nrows(), e + self.config.io_dim()));
        for (b, mut row) in z.outer_iter_mut().enumerate() {
            let row = row.as_slice_mut().expect("standard layout");
            time_embedding(ts[b], &mut row[..e]);
            for (dst, &src) in row[e..].iter_mut().zip(xs.row(b)) {
                *dst = src;
            }
        }
        z
    }

    fn run(&self, xs: ArrayView2<'_, f64>, ts: &[f64]) -> Tape {
        let slots = layout(&self.config);
        let (head_slot, hidden) = slots.split_last().expect("at least one layer");
        let mut post = vec![self.input_matrix(xs, ts)];
        let mut pre = Vec::with_capacity(hidden.len());
        for slot in hidden {
            let a = post.last().unwrap().dot(&self.weight(slot)) + &self.bias(slot);
            post.push(a.mapv(silu));
            pre.push(a);
        }
        let head = post.last().unwrap().dot(&self.weight(head_slot)) + &self.bias(head_slot);
        Tape { post, pre, head }
    }

    /// Scores for a batch of rows; `ts[b]` is the time of row `b`.
    pub fn forward_batch(&self, xs: ArrayView2<'_, f64>, ts: &[f64]) -> Result<Array2<f64>> {
        check_len(self.config.io_dim(), xs.ncols())?;
        check_len(xs.nrows(), ts.len())?;
        for &t in ts {
            check_time(t)?;
        }
        let mut out = self.run(xs, ts).head;
        for (mut row, &t) in out.outer_iter_mut().zip(ts) {
            let inv = -1.0 / self.sigma(t);
            row.mapv_inplace(|h| h * inv);
        }
        Ok(out)
    }

    pub fn forward(&self, xhat: &[f64], t: f64) -> Result<Vec<f64>> {
        let xs = ArrayView2::from_shape((1, xhat.len()), xhat)
            .map_err(|_| Error::DimensionMismatch {
                expected: self.config.io_dim(),
                got: xhat.len(),
            })?;
        Ok(self.forward_batch(xs, &[t])?.into_raw_vec_and_offset().0)
    }

    /// Weighted denoising loss and its exact gradient.
    ///
    /// `loss = mean_b lambda(t_b) w_b |s(x_b, t_b) - target_b|^2` with
    /// `lambda(t) = 1 - alpha_bar(t)`.
    pub fn loss_grad(&self, batch: &[LossItem]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let dim = self.config.io_dim();
        let mut xs = Array2::zeros((batch.len(), dim));
        let mut targets = Array2::zeros((batch.len(), dim));
        let mut ts = Vec::with_capacity(batch.len());
        let mut weights = Vec::with_capacity(batch.len());
        for (b, item) in batch.iter().enumerate() {
            check_len(dim, item.xt.len())?;
            check_len(dim, item.target.len())?;
            check_time(item.t)?;
            if !(item.weight >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "sample weight must be >= 0, got {}",
                    item.weight
                )));
            }
            xs.row_mut(b).assign(&ArrayView1::from(&item.xt[..]));
            targets.row_mut(b).assign(&ArrayView1::from(&item.target[..]));
            ts.push(item.t);
            weights.push(item.weight);
        }
        Ok(self.loss_grad_rows(xs.view(), &ts, targets.view(), &weights))
    }

    /// Matrix form of [`loss_grad`](Self::loss_grad) without input checks.
    pub(crate) fn loss_grad_rows(
        &self,
        xs: ArrayView2<'_, f64>,
        ts: &[f64],
        targets: ArrayView2<'_, f64>,
        weights: &[f64],
    ) -> (f64, Vec<f64>) {
        let n = xs.nrows();
        let chunks: Vec<(f64, Vec<f64>)> = (0..n.div_ceil(GRAD_CHUNK))
            .into_par_iter()
            .map(|c| {
                let lo = c * GRAD_CHUNK;
                let hi = (lo + GRAD_CHUNK).min(n);
                self.chunk_loss_grad(
                    xs.slice(s![lo..hi, ..]),
                    &ts[lo..hi],
                    targets.slice(s![lo..hi, ..]),
                    &weights[lo..hi],
                )
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.params.len()];
        for (l, g) in chunks {
            loss += l;
            for (acc, v) in grad.iter_mut().zip(g) {
                *acc += v;
            }
        }
        let inv_n = 1.0 / n as f64;
        grad.iter_mut().for_each(|g| *g *= inv_n);
        (loss * inv_n, grad)
    }

    /// Unnormalized loss sum and gradient sum over a chunk of rows.
    fn chunk_loss_grad(
        &self,
        xs: ArrayView2<'_, f64>,
        ts: &[f64],
        targets: ArrayView2<'_, f64>,
        weights: &[f64],
    ) -> (f64, Vec<f64>) {
        let slots = layout(&self.config);
        let tape = self.run(xs, ts);
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;

        // d loss / d head, row by row.
        let mut d_head = Array2::zeros(tape.head.raw_dim());
        for b in 0..xs.nrows() {
            let sigma = self.sigma(ts[b]);
            let lambda = 1.0 - self.schedule.alpha_bar(ts[b]);
            let coef = lambda * weights[b];
            for j in 0..self.config.io_dim() {
                let score = -tape.head[[b, j]] / sigma;
                let r = score - targets[[b, j]];
                loss += coef * r * r;
                d_head[[b, j]] = -2.0 * coef * r / sigma;
            }
        }

        let (head_slot, hidden) = slots.split_last().expect("at least one layer");
        let mut delta = d_head;
        let mut layer_input = tape.post.last().unwrap();
        let mut slot = *head_slot;
        let mut l = hidden.len();
        loop {
            {
                let (w_part, b_part) = grad[slot.w..slot.b + slot.fan_out].split_at_mut(slot.b - slot.w);
                let mut gw = ArrayViewMut2::from_shape((slot.fan_in, slot.fan_out), w_part)
                    .expect("layout matches parameter count");
                ndarray::linalg::general_mat_mul(1.0, &layer_input.t(), &delta, 0.0, &mut gw);
                for (gb, col) in b_part.iter_mut().zip(delta.axis_iter(Axis(1))) {
                    *gb = col.sum();
                }
            }
            if l == 0 {
                break;
            }
            let d_post = delta.dot(&self.weight(&slot).t());
            l -= 1;
            let pre = &tape.pre[l];
            delta = ndarray::Zip::from(&d_post)
                .and(pre)
                .map_collect(|&g, &a| g * silu_grad(a));
            layer_input = &tape.post[l];
            slot = hidden[l];
        }
        (loss, grad)
    }
}
