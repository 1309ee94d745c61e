//! The multi-gate mixture-of-experts treatment-effect network.
//!
//! Data flow for a batch of `n` units with `K` treatments:
//!
//! ```text
//! x_high ──enc──▶ L ─┐                          ┌─▶ g_k = softmax(X_L1 · W_kᵀ)   (per treatment)
//!                    ├─▶ X_L1 = [L, x_low] ─────┤
//! x_low ─────────────┘                          └─▶ f_e = relu(X_L1 · A_e + a_e) (shared experts)
//!
//! H_k   = h_k( Σ_e g_k[:, e] · f_e )            task representation of treatment k
//! p̂_k   = sigmoid(H_k) | H_k                    propensity head (binary | continuous)
//! H     = mean_k H_k
//! ŷ     = [T, H] · Φ + b                        the first K entries of Φ are the effects
//! x̂_high = dec(L)
//! ```
//!
//! The loss combines the outcome term, one propensity term per treatment,
//! the reconstruction error of the autoencoder and an L2 penalty on every
//! weight matrix (biases excluded).

mod checkpoint;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, TensorEntry};

use crate::datagen::{Dataset, Kind};
use crate::engine::{ParamVars, Params, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::stats::{sample, Dist, SeededRng};

/// Weights of the four loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Outcome loss.
    pub alpha: f64,
    /// Sum of propensity losses.
    pub beta: f64,
    /// Autoencoder reconstruction.
    pub gamma: f64,
    /// L2 penalty, applied as `lambda / (2 n)`.
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            lambda: 1.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            lambda: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct M3E2Config {
    pub num_experts: usize,
    pub units_exp: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub n_treat: usize,
    pub treatment_kind: Kind,
    pub outcome_kind: Kind,
    pub weights: LossWeights,
    pub use_lvm: bool,
}

impl M3E2Config {
    pub fn new(n_treat: usize, treatment_kind: Kind, outcome_kind: Kind) -> Self {
        Self {
            num_experts: 4,
            units_exp: 4,
            hidden1: 64,
            hidden2: 8,
            n_treat,
            treatment_kind,
            outcome_kind,
            weights: LossWeights::default(),
            use_lvm: true,
        }
    }

    /// Defaults for a dataset's treatment count and kinds.
    pub fn for_dataset(ds: &Dataset) -> Self {
        Self::new(ds.n_treat(), ds.treatment_kind(), ds.outcome_kind())
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("num_experts", self.num_experts),
            ("units_exp", self.units_exp),
            ("hidden1", self.hidden1),
            ("hidden2", self.hidden2),
            ("n_treat", self.n_treat),
        ];
        for (name, v) in widths {
            if v == 0 {
                return Err(Error::Parameter(format!("{name} must be at least 1")));
            }
        }
        let w = self.weights;
        if [w.alpha, w.beta, w.gamma, w.lambda]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::Parameter(format!(
                "loss weights must be >= 0: {w:?}"
            )));
        }
        Ok(())
    }
}

/// Column counts of the two covariate blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDims {
    pub x_low: usize,
    pub x_high: usize,
}

impl InputDims {
    pub fn of(ds: &Dataset) -> Self {
        Self {
            x_low: ds.x_low().cols(),
            x_high: ds.x_high().cols(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Weight,
    Bias,
    Outcome,
}

/// One training or evaluation batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x_low: Tensor,
    pub x_high: Tensor,
    pub t: Tensor,
    /// `n × 1`.
    pub y: Tensor,
}

impl Batch {
    pub fn from_dataset(ds: &Dataset) -> Self {
        Self {
            x_low: ds.x_low().clone(),
            x_high: ds.x_high().clone(),
            t: ds.t().clone(),
            y: Tensor::column(ds.y().to_vec()),
        }
    }

    pub fn from_rows(ds: &Dataset, idx: &[usize]) -> Self {
        Self {
            x_low: ds.x_low().select_rows(idx),
            x_high: ds.x_high().select_rows(idx),
            t: ds.t().select_rows(idx),
            y: Tensor::column(idx.iter().map(|&i| ds.y()[i]).collect()),
        }
    }

    pub fn len(&self) -> usize {
        self.y.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Network outputs recorded on a tape.
#[derive(Debug, Clone)]
pub struct ForwardVars<'t> {
    pub y_hat: Var<'t>,
    pub p_hat: Vec<Var<'t>>,
    pub h_tasks: Vec<Var<'t>>,
    pub h: Var<'t>,
    pub gates: Vec<Var<'t>>,
    pub x_high_rec: Option<Var<'t>>,
}

/// Plain-value network outputs.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub y_hat: Tensor,
    pub p_hat: Vec<Tensor>,
    pub h_tasks: Vec<Tensor>,
    pub h: Tensor,
    pub gates: Vec<Tensor>,
    pub x_high_rec: Option<Tensor>,
}

impl ForwardVars<'_> {
    pub fn values(&self) -> ForwardOutput {
        ForwardOutput {
            y_hat: self.y_hat.value(),
            p_hat: self.p_hat.iter().map(Var::value).collect(),
            h_tasks: self.h_tasks.iter().map(Var::value).collect(),
            h: self.h.value(),
            gates: self.gates.iter().map(Var::value).collect(),
            x_high_rec: self.x_high_rec.as_ref().map(Var::value),
        }
    }
}

/// Loss terms recorded on a tape. `total` is the weighted sum.
#[derive(Debug, Clone)]
pub struct LossVars<'t> {
    pub total: Var<'t>,
    pub outcome: Var<'t>,
    pub propensity: Vec<Var<'t>>,
    pub autoencoder: Option<Var<'t>>,
    /// Unweighted sum of squared weights.
    pub weight_sq: Var<'t>,
}

/// Values of the loss terms.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub outcome: f64,
    pub propensity: Vec<f64>,
    pub autoencoder: f64,
    pub weight_sq: f64,
}

impl LossVars<'_> {
    pub fn values(&self) -> LossBreakdown {
        LossBreakdown {
            total: self.total.item(),
            outcome: self.outcome.item(),
            propensity: self.propensity.iter().map(Var::item).collect(),
            autoencoder: self.autoencoder.map_or(0.0, |v| v.item()),
            weight_sq: self.weight_sq.item(),
        }
    }
}

/// Configuration, input widths and trainable tensors of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct M3E2Params {
    config: M3E2Config,
    dims: InputDims,
    params: Params,
}

fn glorot(
    rng: &mut SeededRng,
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
) -> Result<Tensor> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::new(rows, cols, sample(rng, Dist::uniform(-a, a), rows * cols)?)
}

impl M3E2Params {
    /// Fresh parameters: weights `U(−a, a)` with `a = sqrt(6/(fan_in + fan_out))`,
    /// zero biases and a zero outcome layer.
    pub fn init(config: M3E2Config, dims: InputDims, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let layout = layout(&config, dims)?;
        let mut params = Params::new();
        for (name, rows, cols, role) in layout {
            let t = match role {
                Role::Weight => {
                    // Gates are stored E × d; every other weight is in × out.
                    let (fan_in, fan_out) = if name.starts_with("gate") {
                        (cols, rows)
                    } else {
                        (rows, cols)
                    };
                    glorot(rng, rows, cols, fan_in, fan_out)?
                }
                Role::Bias | Role::Outcome => Tensor::zeros(rows, cols),
            };
            params.insert(name, t);
        }
        Ok(Self {
            config,
            dims,
            params,
        })
    }

    /// Rebuilds a network from stored tensors, checking names and shapes.
    pub fn from_parts(config: M3E2Config, dims: InputDims, params: Params) -> Result<Self> {
        config.validate()?;
        let layout = layout(&config, dims)?;
        if layout.len() != params.len() {
            return Err(Error::Parameter(format!(
                "expected {} tensors, got {}",
                layout.len(),
                params.len()
            )));
        }
        for (name, rows, cols, _) in &layout {
            match params.get(name) {
                Some(t) if t.shape() == (*rows, *cols) => {}
                Some(t) => {
                    return Err(Error::dim("from_parts", (*rows, *cols), t.shape()));
                }
                None => return Err(Error::Parameter(format!("missing tensor `{name}`"))),
            }
        }
        Ok(Self {
            config,
            dims,
            params,
        })
    }

    pub fn config(&self) -> &M3E2Config {
        &self.config
    }

    pub fn dims(&self) -> InputDims {
        self.dims
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// True when the autoencoder is part of the network.
    pub fn uses_lvm(&self) -> bool {
        self.config.use_lvm && self.dims.x_high > 0
    }

    /// Width of the expert input `X_L1`.
    pub fn expert_input_width(&self) -> usize {
        expert_input_width(&self.config, self.dims)
    }

    /// Estimated effects: the first `K` entries of the outcome layer.
    pub fn extract_tau(&self) -> Vec<f64> {
        let phi = self.params.get("phi.w").expect("phi.w always present");
        phi.data()[..self.config.n_treat].to_vec()
    }

    fn check_inputs(&self, x_low: &Tensor, x_high: &Tensor, t: &Tensor) -> Result<()> {
        let n = t.rows();
        if x_low.shape() != (n, self.dims.x_low) {
            return Err(Error::dim(
                "forward x_low",
                (n, self.dims.x_low),
                x_low.shape(),
            ));
        }
        if x_high.shape() != (n, self.dims.x_high) {
            return Err(Error::dim(
                "forward x_high",
                (n, self.dims.x_high),
                x_high.shape(),
            ));
        }
        if t.cols() != self.config.n_treat {
            return Err(Error::dim("forward t", (n, self.config.n_treat), t.shape()));
        }
        if n == 0 {
            return Err(Error::Parameter("empty batch".into()));
        }
        Ok(())
    }

    /// Records a forward pass on `tape` using the registered `vars`.
    pub fn forward_on<'t>(
        &self,
        tape: &'t Tape,
        vars: &ParamVars<'t>,
        x_low: &Tensor,
        x_high: &Tensor,
        t: &Tensor,
    ) -> Result<ForwardVars<'t>> {
        self.check_inputs(x_low, x_high, t)?;
        let cfg = &self.config;
        let linear = |x: Var<'t>, layer: &str| -> Result<Var<'t>> {
            x.matmul(vars.get(&format!("{layer}.w"))?)?
                .add_row(vars.get(&format!("{layer}.b"))?)
        };

        let mut parts = Vec::with_capacity(2);
        let mut latent = None;
        if self.uses_lvm() {
            let xh = tape.constant(x_high.clone());
            let l = linear(linear(xh, "enc1")?.relu()?, "enc2")?;
            latent = Some(l);
            parts.push(l);
        } else if self.dims.x_high > 0 {
            parts.push(tape.constant(x_high.clone()));
        }
        if self.dims.x_low > 0 {
            parts.push(tape.constant(x_low.clone()));
        }
        let xl1 = if parts.len() == 1 {
            parts[0]
        } else {
            tape.concat_cols(&parts)?
        };

        let experts = (0..cfg.num_experts)
            .map(|e| linear(xl1, &format!("expert{e}"))?.relu())
            .collect::<Result<Vec<_>>>()?;

        let mut gates = Vec::with_capacity(cfg.n_treat);
        let mut h_tasks = Vec::with_capacity(cfg.n_treat);
        let mut p_hat = Vec::with_capacity(cfg.n_treat);
        for k in 0..cfg.n_treat {
            let gate = xl1
                .matmul(vars.get(&format!("gate{k}.w"))?.transpose()?)?
                .softmax_rows()?;
            let mut mix = experts[0].scale_rows(gate.column(0)?)?;
            for (e, f) in experts.iter().enumerate().skip(1) {
                mix = mix.add(f.scale_rows(gate.column(e)?)?)?;
            }
            let hk = linear(mix, &format!("head{k}"))?;
            p_hat.push(match cfg.treatment_kind {
                Kind::Binary => hk.sigmoid()?,
                Kind::Continuous => hk,
            });
            h_tasks.push(hk);
            gates.push(gate);
        }

        let mut h = h_tasks[0];
        for hk in &h_tasks[1..] {
            h = h.add(*hk)?;
        }
        let h = h.scale(1.0 / cfg.n_treat as f64)?;
        let xth = tape.concat_cols(&[tape.constant(t.clone()), h])?;
        let logit = linear(xth, "phi")?;
        let y_hat = match cfg.outcome_kind {
            Kind::Binary => logit.sigmoid()?,
            Kind::Continuous => logit,
        };

        let x_high_rec = match latent {
            Some(l) => Some(linear(linear(l, "dec1")?.relu()?, "dec2")?),
            None => None,
        };

        #[cfg(debug_assertions)]
        for g in &gates {
            let g = g.value();
            for r in 0..g.rows() {
                let s: f64 = g.row(r).iter().sum();
                debug_assert!((s - 1.0).abs() < 1e-9, "gate row {r} sums to {s}");
            }
        }

        Ok(ForwardVars {
            y_hat,
            p_hat,
            h_tasks,
            h,
            gates,
            x_high_rec,
        })
    }

    /// Records the weighted loss for `out` on `batch`.
    pub fn total_loss_on<'t>(
        &self,
        tape: &'t Tape,
        vars: &ParamVars<'t>,
        out: &ForwardVars<'t>,
        batch: &Batch,
    ) -> Result<LossVars<'t>> {
        let cfg = &self.config;
        let w = cfg.weights;
        let n = batch.len();
        let y = tape.constant(batch.y.clone());
        let outcome = match cfg.outcome_kind {
            Kind::Continuous => out.y_hat.rmse(y)?,
            Kind::Binary => out.y_hat.bce(y)?,
        };
        let mut propensity = Vec::with_capacity(cfg.n_treat);
        for (k, p) in out.p_hat.iter().enumerate() {
            let tk = tape.constant(Tensor::column(batch.t.col_values(k)));
            propensity.push(match cfg.treatment_kind {
                Kind::Binary => p.bce(tk)?,
                Kind::Continuous => p.rmse(tk)?,
            });
        }
        let autoencoder = match out.x_high_rec {
            Some(rec) => Some(rec.mse(tape.constant(batch.x_high.clone()))?),
            None => None,
        };

        let mut weight_sq: Option<Var<'t>> = None;
        for (name, v) in vars.iter() {
            if role_of(name) == Role::Bias {
                continue;
            }
            let sq = v.sum_squares()?;
            weight_sq = Some(match weight_sq {
                Some(acc) => acc.add(sq)?,
                None => sq,
            });
        }
        let weight_sq = weight_sq.expect("network has weights");

        let mut total = outcome.scale(w.alpha)?;
        for p in &propensity {
            total = total.add(p.scale(w.beta)?)?;
        }
        if let Some(a) = autoencoder {
            total = total.add(a.scale(w.gamma)?)?;
        }
        total = total.add(weight_sq.scale(w.lambda / (2.0 * n as f64))?)?;

        Ok(LossVars {
            total,
            outcome,
            propensity,
            autoencoder,
            weight_sq,
        })
    }

    pub fn forward(&self, x_low: &Tensor, x_high: &Tensor, t: &Tensor) -> Result<ForwardOutput> {
        let tape = Tape::new();
        let vars = self.params.register(&tape);
        Ok(self.forward_on(&tape, &vars, x_low, x_high, t)?.values())
    }

    /// Loss terms on a batch without gradients.
    pub fn total_loss(&self, batch: &Batch) -> Result<LossBreakdown> {
        let tape = Tape::new();
        let vars = self.params.register(&tape);
        let out = self.forward_on(&tape, &vars, &batch.x_low, &batch.x_high, &batch.t)?;
        Ok(self.total_loss_on(&tape, &vars, &out, batch)?.values())
    }

    /// Loss terms and the gradient of the total with respect to every tensor.
    pub fn loss_and_grads(
        &self,
        batch: &Batch,
    ) -> Result<(LossBreakdown, BTreeMap<String, Tensor>)> {
        let tape = Tape::new();
        let vars = self.params.register(&tape);
        let out = self.forward_on(&tape, &vars, &batch.x_low, &batch.x_high, &batch.t)?;
        let loss = self.total_loss_on(&tape, &vars, &out, batch)?;
        let values = loss.values();
        let grads = tape.backward(loss.total)?;
        Ok((values, grads.into_named()))
    }

    /// Outcome predictions. Without observed treatments the propensity
    /// predictions stand in for them, thresholded at 0.5 when binary.
    pub fn predict(&self, x_low: &Tensor, x_high: &Tensor, t: Option<&Tensor>) -> Result<Vec<f64>> {
        let t = match t {
            Some(t) => t.clone(),
            None => {
                let n = x_low.rows().max(x_high.rows());
                let placeholder = Tensor::zeros(n, self.config.n_treat);
                let out = self.forward(x_low, x_high, &placeholder)?;
                Tensor::from_fn(n, self.config.n_treat, |r, k| {
                    let p = out.p_hat[k].get(r, 0);
                    match self.config.treatment_kind {
                        Kind::Binary => f64::from(u8::from(p >= 0.5)),
                        Kind::Continuous => p,
                    }
                })
            }
        };
        Ok(self.forward(x_low, x_high, &t)?.y_hat.into_data())
    }
}

fn expert_input_width(cfg: &M3E2Config, dims: InputDims) -> usize {
    let high = if cfg.use_lvm && dims.x_high > 0 {
        cfg.hidden2
    } else {
        dims.x_high
    };
    high + dims.x_low
}

fn role_of(name: &str) -> Role {
    if name.ends_with(".b") {
        Role::Bias
    } else if name == "phi.w" {
        Role::Outcome
    } else {
        Role::Weight
    }
}

/// Tensor names and shapes in initialization order.
fn layout(cfg: &M3E2Config, dims: InputDims) -> Result<Vec<(String, usize, usize, Role)>> {
    let d = expert_input_width(cfg, dims);
    if d == 0 {
        return Err(Error::Parameter(
            "the network needs at least one covariate".into(),
        ));
    }
    let mut out = Vec::new();
    let dense = |name: &str, fan_in: usize, fan_out: usize, out: &mut Vec<_>| {
        out.push((format!("{name}.w"), fan_in, fan_out, Role::Weight));
        out.push((format!("{name}.b"), 1, fan_out, Role::Bias));
    };
    if cfg.use_lvm && dims.x_high > 0 {
        dense("enc1", dims.x_high, cfg.hidden1, &mut out);
        dense("enc2", cfg.hidden1, cfg.hidden2, &mut out);
        dense("dec1", cfg.hidden2, cfg.hidden1, &mut out);
        dense("dec2", cfg.hidden1, dims.x_high, &mut out);
    }
    for e in 0..cfg.num_experts {
        dense(&format!("expert{e}"), d, cfg.units_exp, &mut out);
    }
    for k in 0..cfg.n_treat {
        out.push((format!("gate{k}.w"), cfg.num_experts, d, Role::Weight));
    }
    for k in 0..cfg.n_treat {
        dense(&format!("head{k}"), cfg.units_exp, 1, &mut out);
    }
    out.push(("phi.w".into(), cfg.n_treat + 1, 1, Role::Outcome));
    out.push(("phi.b".into(), 1, 1, Role::Bias));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(k: usize) -> M3E2Config {
        M3E2Config {
            hidden1: 6,
            hidden2: 8,
            ..M3E2Config::new(k, Kind::Binary, Kind::Continuous)
        }
    }

    fn inputs(n: usize, dims: InputDims, k: usize, seed: u64) -> Batch {
        let mut rng = SeededRng::new(seed);
        let mut m = |c: usize| {
            Tensor::new(
                n,
                c,
                sample(&mut rng, Dist::normal(0.0, 1.0), n * c).unwrap(),
            )
            .unwrap()
        };
        let x_low = m(dims.x_low);
        let x_high = m(dims.x_high);
        let t = m(k).map(|v| f64::from(u8::from(v > 0.0)));
        let y = m(1);
        Batch {
            x_low,
            x_high,
            t,
            y,
        }
    }

    #[test]
    fn gate_shape_uses_latent_plus_low_width() {
        let dims = InputDims {
            x_low: 2,
            x_high: 5,
        };
        let p = M3E2Params::init(cfg(3), dims, &mut SeededRng::new(1)).unwrap();
        assert_eq!(p.params().get("gate0.w").unwrap().shape(), (4, 10));
        assert_eq!(p.expert_input_width(), 10);
        assert_eq!(p.params().get("phi.w").unwrap().len() + 1, 3 + 2);
    }

    #[test]
    fn init_is_seeded_and_tau_starts_at_zero() {
        let dims = InputDims {
            x_low: 2,
            x_high: 5,
        };
        let a = M3E2Params::init(cfg(2), dims, &mut SeededRng::new(7)).unwrap();
        let b = M3E2Params::init(cfg(2), dims, &mut SeededRng::new(7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.extract_tau(), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_outcome_layer_predicts_zero() {
        let dims = InputDims {
            x_low: 3,
            x_high: 4,
        };
        let p = M3E2Params::init(cfg(2), dims, &mut SeededRng::new(2)).unwrap();
        let b = inputs(9, dims, 2, 3);
        let out = p.forward(&b.x_low, &b.x_high, &b.t).unwrap();
        assert!(out.y_hat.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn extract_tau_reads_phi() {
        let dims = InputDims {
            x_low: 1,
            x_high: 0,
        };
        let mut p = M3E2Params::init(cfg(2), dims, &mut SeededRng::new(2)).unwrap();
        *p.params_mut().get_mut("phi.w").unwrap() = Tensor::column(vec![2.5, -1.0, 0.3]);
        assert_eq!(p.extract_tau(), vec![2.5, -1.0]);
    }

    #[test]
    fn equal_gate_logits_average_the_experts() {
        let dims = InputDims {
            x_low: 3,
            x_high: 0,
        };
        let mut p = M3E2Params::init(cfg(1), dims, &mut SeededRng::new(5)).unwrap();
        *p.params_mut().get_mut("gate0.w").unwrap() = Tensor::zeros(4, 3);
        *p.params_mut().get_mut("head0.w").unwrap() = Tensor::column(vec![1.0, -0.5, 0.25, 2.0]);
        let b = inputs(6, dims, 1, 8);
        let out = p.forward(&b.x_low, &b.x_high, &b.t).unwrap();
        let w = p.params().get("head0.w").unwrap();
        for r in 0..6 {
            let mut avg = [0.0; 4];
            for e in 0..4 {
                let ew = p.params().get(&format!("expert{e}.w")).unwrap();
                let pre = b.x_low.select_rows(&[r]).matmul(ew).unwrap();
                for u in 0..4 {
                    avg[u] += pre.get(0, u).max(0.0) / 4.0;
                }
            }
            let expect: f64 = (0..4).map(|u| avg[u] * w.get(u, 0)).sum();
            assert!((out.h_tasks[0].get(r, 0) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn no_lvm_skips_autoencoder() {
        let mut c = cfg(2);
        c.use_lvm = false;
        let dims = InputDims {
            x_low: 3,
            x_high: 0,
        };
        let p = M3E2Params::init(c, dims, &mut SeededRng::new(1)).unwrap();
        assert!(p.params().get("enc1.w").is_none());
        let b = inputs(5, dims, 2, 1);
        let loss = p.total_loss(&b).unwrap();
        assert_eq!(loss.autoencoder, 0.0);
        let out = p.forward(&b.x_low, &b.x_high, &b.t).unwrap();
        assert!(out.x_high_rec.is_none());
    }

    #[test]
    fn all_zero_weights_give_zero_loss() {
        let mut c = cfg(2);
        c.weights = LossWeights::zero();
        let dims = InputDims {
            x_low: 2,
            x_high: 3,
        };
        let p = M3E2Params::init(c, dims, &mut SeededRng::new(1)).unwrap();
        assert_eq!(p.total_loss(&inputs(7, dims, 2, 2)).unwrap().total, 0.0);
    }

    #[test]
    fn shape_errors() {
        let dims = InputDims {
            x_low: 2,
            x_high: 3,
        };
        let p = M3E2Params::init(cfg(2), dims, &mut SeededRng::new(1)).unwrap();
        let b = inputs(4, dims, 2, 2);
        assert!(matches!(
            p.forward(&b.x_high, &b.x_high, &b.t),
            Err(Error::Dimension { .. })
        ));
        let empty = InputDims {
            x_low: 0,
            x_high: 0,
        };
        assert!(M3E2Params::init(cfg(1), empty, &mut SeededRng::new(1)).is_err());
    }

    #[test]
    fn predict_matches_forward_and_ignores_t_when_phi_zero_on_t() {
        let dims = InputDims {
            x_low: 2,
            x_high: 3,
        };
        let mut p = M3E2Params::init(cfg(2), dims, &mut SeededRng::new(4)).unwrap();
        *p.params_mut().get_mut("phi.w").unwrap() = Tensor::column(vec![0.0, 0.0, 1.3]);
        *p.params_mut().get_mut("phi.b").unwrap() = Tensor::scalar(0.2);
        let b = inputs(8, dims, 2, 6);
        let fwd = p
            .forward(&b.x_low, &b.x_high, &b.t)
            .unwrap()
            .y_hat
            .into_data();
        assert_eq!(p.predict(&b.x_low, &b.x_high, Some(&b.t)).unwrap(), fwd);
        let other_t = b.t.map(|v| 1.0 - v);
        assert_eq!(p.predict(&b.x_low, &b.x_high, Some(&other_t)).unwrap(), fwd);
        assert_eq!(p.predict(&b.x_low, &b.x_high, None).unwrap(), fwd);
    }

    #[test]
    fn from_parts_checks_shapes() {
        let dims = InputDims {
            x_low: 2,
            x_high: 3,
        };
        let p = M3E2Params::init(cfg(2), dims, &mut SeededRng::new(4)).unwrap();
        let mut params = p.params().clone();
        assert!(M3E2Params::from_parts(cfg(2), dims, params.clone()).is_ok());
        params.insert("phi.w", Tensor::zeros(2, 1));
        assert!(M3E2Params::from_parts(cfg(2), dims, params).is_err());
    }
}
