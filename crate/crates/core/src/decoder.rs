//! GRU decoder seeded with the encoder latent.
//!
//! One step, with `⊙` the elementwise product:
//!
//! ```text
//! z  = σ(W_z u + U_z X + b_z)              update gate
//! r  = σ(W_f u + U_f X + b_f)              reset gate
//! c  = tanh(W_r u + U_r (r ⊙ X) + b_r)     candidate
//! X' = z ⊙ c + (1 - z) ⊙ X
//! ŷ  = tanh(W_0 X' + b_0)                  output head, applied every step
//! ```
//!
//! The rollout starts from `X = x_s`, so the hidden size equals the latent
//! size, and emits one prediction per future input.

use serde::{Deserialize, Serialize};

use crate::encoder::LatentState;
use crate::error::{Error, Result};
use crate::numerics::{
    derive_seed, dot, glorot_init, sigmoid, Gradients, ParamId, ParamStore, RealMatrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub n_b: usize,
    pub n_x: usize,
    pub n_u: usize,
}

impl DecoderConfig {
    pub fn new(n_b: usize, n_x: usize) -> Self {
        Self { n_b, n_x, n_u: 1 }
    }

    fn check(&self) -> Result<()> {
        if self.n_b == 0 {
            return Err(Error::Config(
                "prediction horizon n_b must be at least 1".into(),
            ));
        }
        if self.n_x == 0 || self.n_u == 0 {
            return Err(Error::Config("decoder n_x and n_u must be positive".into()));
        }
        Ok(())
    }
}

/// Borrowed view of the eleven decoder matrices.
#[derive(Debug, Clone, Copy)]
pub struct GruParams<'a> {
    pub w_z: &'a RealMatrix,
    pub u_z: &'a RealMatrix,
    pub b_z: &'a RealMatrix,
    pub w_f: &'a RealMatrix,
    pub u_f: &'a RealMatrix,
    pub b_f: &'a RealMatrix,
    pub w_r: &'a RealMatrix,
    pub u_r: &'a RealMatrix,
    pub b_r: &'a RealMatrix,
    pub w_0: &'a RealMatrix,
    pub b_0: &'a RealMatrix,
}

impl GruParams<'_> {
    pub fn hidden_dim(&self) -> usize {
        self.u_z.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.cols()
    }

    fn check(&self) -> Result<()> {
        let n_x = self.hidden_dim();
        let n_u = self.input_dim();
        let gates = [
            ("update", self.w_z, self.u_z, self.b_z),
            ("reset", self.w_f, self.u_f, self.b_f),
            ("candidate", self.w_r, self.u_r, self.b_r),
        ];
        for (name, w, u, b) in gates {
            if w.shape() != (n_x, n_u) || u.shape() != (n_x, n_x) || b.shape() != (n_x, 1) {
                return Err(Error::Shape(format!(
                    "{name} gate shapes W {:?}, U {:?}, b {:?} inconsistent with n_x = {n_x}, n_u = {n_u}",
                    w.shape(),
                    u.shape(),
                    b.shape()
                )));
            }
        }
        if self.w_0.shape() != (1, n_x) || self.b_0.shape() != (1, 1) {
            return Err(Error::Shape(format!(
                "output head must map n_x = {n_x} to one output, got W_0 {:?}",
                self.w_0.shape()
            )));
        }
        Ok(())
    }
}

/// Intermediate values of one GRU step.
#[derive(Debug, Clone)]
struct StepCache {
    x_prev: Vec<f64>,
    u: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    rx: Vec<f64>,
    cand: Vec<f64>,
    x_next: Vec<f64>,
    y: f64,
}

fn affine(w: &RealMatrix, u: &[f64], uu: &RealMatrix, x: &[f64], b: &RealMatrix, out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(w.row(i), u) + dot(uu.row(i), x) + b.as_slice()[i];
    }
}

fn step_cached(x: &[f64], u: &[f64], p: &GruParams<'_>) -> StepCache {
    let n = x.len();
    let mut z = vec![0.0; n];
    let mut r = vec![0.0; n];
    affine(p.w_z, u, p.u_z, x, p.b_z, &mut z);
    affine(p.w_f, u, p.u_f, x, p.b_f, &mut r);
    for v in z.iter_mut().chain(r.iter_mut()) {
        *v = sigmoid(*v);
    }
    let rx: Vec<f64> = r.iter().zip(x).map(|(a, b)| a * b).collect();
    let mut cand = vec![0.0; n];
    affine(p.w_r, u, p.u_r, &rx, p.b_r, &mut cand);
    for v in &mut cand {
        *v = v.tanh();
    }
    let x_next: Vec<f64> = (0..n)
        .map(|i| z[i] * cand[i] + (1.0 - z[i]) * x[i])
        .collect();
    let y = (dot(p.w_0.row(0), &x_next) + p.b_0.get(0, 0)).tanh();
    StepCache {
        x_prev: x.to_vec(),
        u: u.to_vec(),
        z,
        r,
        rx,
        cand,
        x_next,
        y,
    }
}

/// One GRU state transition.
pub fn gru_step(x: &[f64], u: &[f64], params: &GruParams<'_>) -> Result<Vec<f64>> {
    params.check()?;
    if x.len() != params.hidden_dim() || u.len() != params.input_dim() {
        return Err(Error::Shape(format!(
            "gru_step got state {} / input {}, expected {} / {}",
            x.len(),
            u.len(),
            params.hidden_dim(),
            params.input_dim()
        )));
    }
    Ok(step_cached(x, u, params).x_next)
}

/// `tanh(W_0 X + b_0)`.
pub fn output_head(x: &[f64], params: &GruParams<'_>) -> Result<f64> {
    if params.w_0.shape() != (1, x.len()) {
        return Err(Error::Shape(format!(
            "output head expects a state of length {}, got {}",
            params.w_0.cols(),
            x.len()
        )));
    }
    Ok((dot(params.w_0.row(0), x) + params.b_0.get(0, 0)).tanh())
}

/// Saved rollout for the reverse pass.
#[derive(Debug, Clone)]
pub struct DecoderCache {
    steps: Vec<StepCache>,
}

impl DecoderCache {
    pub fn predictions(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.y).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct GruIds {
    w_z: ParamId,
    u_z: ParamId,
    b_z: ParamId,
    w_f: ParamId,
    u_f: ParamId,
    b_f: ParamId,
    w_r: ParamId,
    u_r: ParamId,
    b_r: ParamId,
    w_0: ParamId,
    b_0: ParamId,
}

const GATES: [&str; 3] = ["update", "reset", "candidate"];

#[derive(Debug, Clone)]
pub struct Decoder {
    config: DecoderConfig,
    ids: GruIds,
}

impl Decoder {
    /// Registers decoder parameters: Glorot-uniform matrices, zero biases.
    pub fn init(config: DecoderConfig, params: &mut ParamStore, seed: u64) -> Result<Self> {
        config.check()?;
        let (n_x, n_u) = (config.n_x, config.n_u);
        let mut ids = Vec::with_capacity(11);
        for (g, gate) in GATES.iter().enumerate() {
            let g = g as u64;
            ids.push(params.insert(
                format!("decoder.{gate}.w"),
                glorot_init(n_x, n_u, derive_seed(seed, 2 * g))?,
            )?);
            ids.push(params.insert(
                format!("decoder.{gate}.u"),
                glorot_init(n_x, n_x, derive_seed(seed, 2 * g + 1))?,
            )?);
            ids.push(params.insert(format!("decoder.{gate}.b"), RealMatrix::zeros(n_x, 1))?);
        }
        ids.push(params.insert(
            "decoder.output.w",
            glorot_init(1, n_x, derive_seed(seed, 99))?,
        )?);
        ids.push(params.insert("decoder.output.b", RealMatrix::zeros(1, 1))?);
        let decoder = Self {
            config,
            ids: ids_from(&ids),
        };
        decoder.weights(params).check()?;
        Ok(decoder)
    }

    pub fn bind(config: DecoderConfig, params: &ParamStore) -> Result<Self> {
        config.check()?;
        let mut ids = Vec::with_capacity(11);
        for gate in GATES {
            for part in ["w", "u", "b"] {
                ids.push(params.require(&format!("decoder.{gate}.{part}"))?);
            }
        }
        ids.push(params.require("decoder.output.w")?);
        ids.push(params.require("decoder.output.b")?);
        let decoder = Self {
            config,
            ids: ids_from(&ids),
        };
        let w = decoder.weights(params);
        w.check()?;
        if w.hidden_dim() != config.n_x || w.input_dim() != config.n_u {
            return Err(Error::Shape(format!(
                "decoder parameters are sized for n_x = {}, n_u = {}; configuration says {} / {}",
                w.hidden_dim(),
                w.input_dim(),
                config.n_x,
                config.n_u
            )));
        }
        Ok(decoder)
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn weights<'a>(&self, params: &'a ParamStore) -> GruParams<'a> {
        let i = &self.ids;
        GruParams {
            w_z: params.value(i.w_z),
            u_z: params.value(i.u_z),
            b_z: params.value(i.b_z),
            w_f: params.value(i.w_f),
            u_f: params.value(i.u_f),
            b_f: params.value(i.b_f),
            w_r: params.value(i.w_r),
            u_r: params.value(i.u_r),
            b_r: params.value(i.b_r),
            w_0: params.value(i.w_0),
            b_0: params.value(i.b_0),
        }
    }

    fn check_rollout(&self, x_s: &LatentState, u_future: &[f64]) -> Result<()> {
        if x_s.len() != self.config.n_x {
            return Err(Error::Shape(format!(
                "decoder state size n_x = {} cannot be seeded with a latent of length {}",
                self.config.n_x,
                x_s.len()
            )));
        }
        if u_future.is_empty() {
            return Err(Error::Config(
                "prediction horizon must be at least 1".into(),
            ));
        }
        if u_future.len() != self.config.n_b * self.config.n_u {
            return Err(Error::Shape(format!(
                "expected {} future inputs (n_b = {}), got {}",
                self.config.n_b * self.config.n_u,
                self.config.n_b,
                u_future.len()
            )));
        }
        Ok(())
    }

    pub fn rollout_cached(
        &self,
        params: &ParamStore,
        x_s: &LatentState,
        u_future: &[f64],
    ) -> Result<(Vec<f64>, DecoderCache)> {
        self.check_rollout(x_s, u_future)?;
        let w = self.weights(params);
        let mut steps = Vec::with_capacity(self.config.n_b);
        let mut x = x_s.as_slice().to_vec();
        for u in u_future.chunks(self.config.n_u) {
            let step = step_cached(&x, u, &w);
            x.clone_from(&step.x_next);
            steps.push(step);
        }
        let cache = DecoderCache { steps };
        Ok((cache.predictions(), cache))
    }

    pub fn rollout(
        &self,
        params: &ParamStore,
        x_s: &LatentState,
        u_future: &[f64],
    ) -> Result<Vec<f64>> {
        Ok(self.rollout_cached(params, x_s, u_future)?.0)
    }

    /// Backpropagation through time. Parameter gradients are added into
    /// `grads`; returns the gradient with respect to the seed latent.
    pub fn backward(
        &self,
        params: &ParamStore,
        cache: &DecoderCache,
        upstream: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>> {
        let zero = vec![0.0; self.config.n_x];
        self.backward_with_final_state_grad(params, cache, upstream, &zero, grads)
    }

    /// As [`Decoder::backward`], with an extra gradient arriving on the
    /// final hidden state (for chaining rollouts).
    pub fn backward_with_final_state_grad(
        &self,
        params: &ParamStore,
        cache: &DecoderCache,
        upstream: &[f64],
        d_final_state: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>> {
        if cache.steps.is_empty() {
            return Err(Error::MissingCache("decoder rollout cache is empty"));
        }
        if upstream.len() != cache.steps.len() {
            return Err(Error::Shape(format!(
                "decoder upstream gradient has length {}, rollout has {} steps",
                upstream.len(),
                cache.steps.len()
            )));
        }
        let w = self.weights(params);
        let ids = self.ids;
        let n = self.config.n_x;
        if d_final_state.len() != n {
            return Err(Error::Shape(format!(
                "final state gradient must have length n_x = {n}"
            )));
        }
        let mut dx = d_final_state.to_vec();
        let mut da = vec![0.0; n];
        let mut d_rx = vec![0.0; n];

        for (step, &dy) in cache.steps.iter().zip(upstream).rev() {
            // output head
            let d_pre = dy * (1.0 - step.y * step.y);
            if d_pre != 0.0 {
                add_outer(grads.get_mut(ids.w_0), &[d_pre], &step.x_next);
                grads.get_mut(ids.b_0).as_mut_slice()[0] += d_pre;
                for (d, wv) in dx.iter_mut().zip(w.w_0.row(0)) {
                    *d += d_pre * wv;
                }
            }

            let dx_next = std::mem::replace(&mut dx, vec![0.0; n]);
            // X' = z c + (1 - z) X
            for i in 0..n {
                dx[i] = dx_next[i] * (1.0 - step.z[i]);
            }

            // candidate: c = tanh(a_c)
            for i in 0..n {
                da[i] = dx_next[i] * step.z[i] * (1.0 - step.cand[i] * step.cand[i]);
            }
            add_outer(grads.get_mut(ids.w_r), &da, &step.u);
            add_outer(grads.get_mut(ids.u_r), &da, &step.rx);
            add_vec(grads.get_mut(ids.b_r), &da);
            transpose_matvec(w.u_r, &da, &mut d_rx);
            let dr: Vec<f64> = (0..n).map(|i| d_rx[i] * step.x_prev[i]).collect();
            for i in 0..n {
                dx[i] += d_rx[i] * step.r[i];
            }

            // update gate
            for i in 0..n {
                let dz = dx_next[i] * (step.cand[i] - step.x_prev[i]);
                da[i] = dz * step.z[i] * (1.0 - step.z[i]);
            }
            add_outer(grads.get_mut(ids.w_z), &da, &step.u);
            add_outer(grads.get_mut(ids.u_z), &da, &step.x_prev);
            add_vec(grads.get_mut(ids.b_z), &da);
            accumulate_transpose_matvec(w.u_z, &da, &mut dx);

            // reset gate
            for i in 0..n {
                da[i] = dr[i] * step.r[i] * (1.0 - step.r[i]);
            }
            add_outer(grads.get_mut(ids.w_f), &da, &step.u);
            add_outer(grads.get_mut(ids.u_f), &da, &step.x_prev);
            add_vec(grads.get_mut(ids.b_f), &da);
            accumulate_transpose_matvec(w.u_f, &da, &mut dx);
        }
        Ok(dx)
    }
}

fn ids_from(ids: &[ParamId]) -> GruIds {
    GruIds {
        w_z: ids[0],
        u_z: ids[1],
        b_z: ids[2],
        w_f: ids[3],
        u_f: ids[4],
        b_f: ids[5],
        w_r: ids[6],
        u_r: ids[7],
        b_r: ids[8],
        w_0: ids[9],
        b_0: ids[10],
    }
}

fn add_outer(m: &mut RealMatrix, left: &[f64], right: &[f64]) {
    for (i, &l) in left.iter().enumerate() {
        if l == 0.0 {
            continue;
        }
        for (d, &r) in m.row_mut(i).iter_mut().zip(right) {
            *d += l * r;
        }
    }
}

fn add_vec(m: &mut RealMatrix, v: &[f64]) {
    for (d, x) in m.as_mut_slice().iter_mut().zip(v) {
        *d += x;
    }
}

fn transpose_matvec(m: &RealMatrix, v: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    accumulate_transpose_matvec(m, v, out);
}

fn accumulate_transpose_matvec(m: &RealMatrix, v: &[f64], out: &mut [f64]) {
    for (i, &vi) in v.iter().enumerate() {
        for (o, &w) in out.iter_mut().zip(m.row(i)) {
            *o += w * vi;
        }
    }
}

/// Rolls the decoder forward from `x_s` over `u_future`.
pub fn decoder_rollout(
    x_s: &LatentState,
    u_future: &[f64],
    decoder: &Decoder,
    params: &ParamStore,
) -> Result<Vec<f64>> {
    decoder.rollout(params, x_s, u_future)
}
