//! Monte Carlo denoising score matching.
//!
//! For knots t_k with weights h_k and m_k fixed draws X_kj = m_{t_k}X_0 + σ_{t_k}Z_kj,
//! the objective is
//!
//!   Σ_k (h_k/m_k) Σ_j ‖s(X_kj, t_k) + Z_kj/σ_{t_k}‖².
//!
//! The sampler evaluates the score at forward times t′_1, …, t′_N and step
//! i covers h′_{N−i−1}, so knot t′_k carries weight h′_{k−1}. The draws are
//! made once and reused at every optimizer step.

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use crate::diffusion::{marginal_at, BetaSchedule};
use crate::measure::DiscreteMeasure;
use crate::rng;
use crate::sampler::Partition;
use crate::score::{GatedEnsemble, Mlp, ScoreFunction};
use crate::{invalid, Error, Result};

/// Draws for one knot.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotSamples {
    pub t: f64,
    /// h_k
    pub weight: f64,
    pub sigma: f64,
    /// m_k points, row-major.
    pub xs: Vec<f64>,
    /// The standard normal noise behind each point, row-major.
    pub zs: Vec<f64>,
}

impl KnotSamples {
    pub fn count(&self, dim: usize) -> usize {
        self.xs.len() / dim
    }
}

/// Fixed Monte Carlo draws for the objective. Knot k uses stream k of the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct McSamples {
    pub dim: usize,
    pub knots: Vec<KnotSamples>,
}

impl McSamples {
    pub fn draw(
        measure: &DiscreteMeasure,
        schedule: &BetaSchedule,
        times: &[f64],
        weights: &[f64],
        counts: &[usize],
        seed: u64,
    ) -> Result<Self> {
        if times.len() != weights.len() || times.len() != counts.len() {
            return invalid(format!(
                "{} knots, {} weights and {} sample counts",
                times.len(),
                weights.len(),
                counts.len()
            ));
        }
        if let Some(&t) = times.iter().find(|&&t| !(t > 0.0)) {
            return invalid(format!("training knot t = {t} must be positive (sigma vanishes at 0)"));
        }
        if counts.contains(&0) {
            return invalid("every knot needs at least one Monte Carlo draw");
        }
        let picker = WeightedIndex::new(measure.weights()).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let d = measure.dim();
        let mut knots = Vec::with_capacity(times.len());
        for (k, ((&t, &weight), &m)) in times.iter().zip(weights).zip(counts).enumerate() {
            let p = marginal_at(schedule, t)?;
            let sigma = p.sigma();
            let mut rng = rng::stream(seed, k as u64);
            let mut xs = vec![0.0; m * d];
            let mut zs = vec![0.0; m * d];
            for (x, z) in xs.chunks_exact_mut(d).zip(zs.chunks_exact_mut(d)) {
                let a = measure.point(picker.sample(&mut rng));
                rng::fill_normal(&mut rng, z);
                for j in 0..d {
                    x[j] = p.m * a[j] + sigma * z[j];
                }
            }
            knots.push(KnotSamples {
                t,
                weight,
                sigma,
                xs,
                zs,
            });
        }
        Ok(McSamples { dim: d, knots })
    }

    /// Knots t′_1..t′_N of the partition with weights h′_0..h′_{N−1}.
    pub fn for_partition(
        measure: &DiscreteMeasure,
        schedule: &BetaSchedule,
        partition: &Partition,
        counts: &[usize],
        seed: u64,
    ) -> Result<Self> {
        let (times, weights) = training_knots(partition);
        Self::draw(measure, schedule, &times, &weights, counts, seed)
    }

    /// Value of the objective for `score_fn`.
    pub fn loss(&self, score_fn: &dyn ScoreFunction) -> Result<f64> {
        Ok(self.per_knot_loss(score_fn)?.iter().sum())
    }

    /// The k-th summand (h_k/m_k) Σ_j ‖s + Z/σ‖² for every knot.
    pub fn per_knot_loss(&self, score_fn: &dyn ScoreFunction) -> Result<Vec<f64>> {
        let d = self.dim;
        self.knots
            .iter()
            .map(|k| {
                let mut s = vec![0.0; k.xs.len()];
                score_fn.eval_batch(&k.xs, k.t, &mut s)?;
                let sum: f64 = s.iter().zip(&k.zs).map(|(sv, z)| (sv + z / k.sigma).powi(2)).sum();
                Ok(k.weight / k.count(d) as f64 * sum)
            })
            .collect()
    }
}

/// Forward knots t′_1..t′_N and the step lengths h′_0..h′_{N−1} attached to them.
pub fn training_knots(partition: &Partition) -> (Vec<f64>, Vec<f64>) {
    (partition.forward_knots()[1..].to_vec(), partition.forward_steps())
}

/// The objective evaluated on fresh draws from `seed`.
pub fn mc_score_matching_loss(
    score_fn: &dyn ScoreFunction,
    measure: &DiscreteMeasure,
    schedule: &BetaSchedule,
    partition: &Partition,
    counts: &[usize],
    seed: u64,
) -> Result<f64> {
    McSamples::for_partition(measure, schedule, partition, counts, seed)?.loss(score_fn)
}

/// Shared time-conditional network: s(x, t) = net(x, log σ_t², m_t)/σ_t.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedMlpScore {
    pub net: Mlp,
    pub schedule: BetaSchedule,
}

impl SharedMlpScore {
    /// Network with inputs D + 2 and outputs D.
    pub fn new(net: Mlp, schedule: BetaSchedule) -> Result<Self> {
        if net.input_dim() != net.output_dim() + 2 {
            return invalid(format!(
                "shared score network maps R^(D+2) to R^D, got {} -> {}",
                net.input_dim(),
                net.output_dim()
            ));
        }
        Ok(SharedMlpScore { net, schedule })
    }

    /// Hidden widths between the D + 2 inputs and D outputs.
    pub fn init(dim: usize, hidden: &[usize], weight_bound: f64, schedule: BetaSchedule, seed: u64) -> Result<Self> {
        let mut sizes = vec![dim + 2];
        sizes.extend_from_slice(hidden);
        sizes.push(dim);
        Self::new(Mlp::init(&sizes, weight_bound, seed)?, schedule)
    }

    fn features(&self, t: f64) -> Result<(f64, f64, f64)> {
        let p = marginal_at(&self.schedule, t)?;
        let s2 = p.sigma2_floored();
        Ok((s2.ln(), p.m, 1.0 / s2.sqrt()))
    }

    /// Objective and its gradient with respect to the flat parameters.
    pub fn loss_and_gradient(&self, samples: &McSamples) -> Result<(f64, Vec<f64>)> {
        Ok(SharedBatch::new(self, samples)?.loss_and_gradient(&self.net))
    }
}

impl ScoreFunction for SharedMlpScore {
    fn dim(&self) -> usize {
        self.net.output_dim()
    }

    fn eval_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        self.eval_batch(x, t, out)
    }

    fn eval_batch(&self, xs: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let d = self.dim();
        let n = xs.len() / d;
        let (log_s2, m, inv_sigma) = self.features(t)?;
        let mut input = DMatrix::zeros(d + 2, n);
        for (c, x) in xs.chunks_exact(d).enumerate() {
            for j in 0..d {
                input[(j, c)] = x[j];
            }
            input[(d, c)] = log_s2;
            input[(d + 1, c)] = m;
        }
        let y = self.net.forward_batch(&input);
        for (o, v) in out.iter_mut().zip(y.as_slice()) {
            *o = v * inv_sigma;
        }
        Ok(())
    }
}

/// Column-per-draw layout of the objective for one network.
struct SharedBatch {
    input: DMatrix<f64>,
    /// Z/σ per column.
    target: DMatrix<f64>,
    inv_sigma: Vec<f64>,
    weight: Vec<f64>,
}

impl SharedBatch {
    fn new(model: &SharedMlpScore, samples: &McSamples) -> Result<Self> {
        let d = samples.dim;
        if model.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                found: d,
            });
        }
        let total: usize = samples.knots.iter().map(|k| k.count(d)).sum();
        let mut batch = SharedBatch {
            input: DMatrix::zeros(d + 2, total),
            target: DMatrix::zeros(d, total),
            inv_sigma: Vec::with_capacity(total),
            weight: Vec::with_capacity(total),
        };
        let mut c = 0;
        for k in &samples.knots {
            let (log_s2, m, inv_sigma) = model.features(k.t)?;
            let w = k.weight / k.count(d) as f64;
            for (x, z) in k.xs.chunks_exact(d).zip(k.zs.chunks_exact(d)) {
                for j in 0..d {
                    batch.input[(j, c)] = x[j];
                    batch.target[(j, c)] = z[j] / k.sigma;
                }
                batch.input[(d, c)] = log_s2;
                batch.input[(d + 1, c)] = m;
                batch.inv_sigma.push(inv_sigma);
                batch.weight.push(w);
                c += 1;
            }
        }
        Ok(batch)
    }

    fn loss_and_gradient(&self, net: &Mlp) -> (f64, Vec<f64>) {
        let cache = net.forward_cached(self.input.clone());
        let mut grad_out = cache.output().clone();
        let mut loss = 0.0;
        for (c, mut col) in grad_out.column_iter_mut().enumerate() {
            let (w, inv) = (self.weight[c], self.inv_sigma[c]);
            for (j, v) in col.iter_mut().enumerate() {
                let r = *v * inv + self.target[(j, c)];
                loss += w * r * r;
                *v = 2.0 * w * r * inv;
            }
        }
        (loss, net.backward(&cache, grad_out))
    }
}

/// First-order update rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::adam(1e-3)
    }
}

struct OptimizerState {
    rule: Optimizer,
    first: Vec<f64>,
    second: Vec<f64>,
    step: i32,
}

impl OptimizerState {
    fn new(rule: Optimizer, len: usize) -> Self {
        OptimizerState {
            rule,
            first: vec![0.0; len],
            second: vec![0.0; len],
            step: 0,
        }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        match self.rule {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { lr, beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.first).zip(&mut self.second) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// Training settings. `mc_per_knot` holds one draw count per training knot
/// t′_1..t′_N of `partition`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub partition: Partition,
    pub mc_per_knot: Vec<usize>,
    pub optimizer: Optimizer,
    pub steps: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// The same draw count at every knot.
    pub fn uniform(partition: Partition, mc_per_knot: usize, optimizer: Optimizer, steps: usize, seed: u64) -> Self {
        let n = partition.steps();
        TrainConfig {
            partition,
            mc_per_knot: vec![mc_per_knot; n],
            optimizer,
            steps,
            seed,
        }
    }
}

/// A trained model and the objective value before every step plus the final
/// value (`steps + 1` entries).
#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    pub model: S,
    pub trace: Vec<f64>,
}

impl<S> TrainOutcome<S> {
    /// `step,loss` CSV.
    pub fn write_trace<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "loss"])?;
        for (k, v) in self.trace.iter().enumerate() {
            w.write_record([k.to_string(), format!("{v:e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_loss(step: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { step, loss })
    }
}

/// Full-batch training of the shared network; parameters are clipped to the
/// weight bound after every step.
pub fn train_shared(
    model: SharedMlpScore,
    measure: &DiscreteMeasure,
    config: &TrainConfig,
) -> Result<TrainOutcome<SharedMlpScore>> {
    let samples = McSamples::for_partition(measure, &model.schedule, &config.partition, &config.mc_per_knot, config.seed)?;
    let batch = SharedBatch::new(&model, &samples)?;
    let mut model = model;
    let mut params = model.net.params_flat();
    let mut state = OptimizerState::new(config.optimizer, params.len());
    let mut trace = Vec::with_capacity(config.steps + 1);
    for step in 0..config.steps {
        let (loss, grad) = batch.loss_and_gradient(&model.net);
        check_loss(step, loss)?;
        trace.push(loss);
        state.apply(&mut params, &grad);
        model.net.set_params_flat(&params)?;
        model.net.clip();
        params = model.net.params_flat();
    }
    let (loss, _) = batch.loss_and_gradient(&model.net);
    check_loss(config.steps, loss)?;
    trace.push(loss);
    Ok(TrainOutcome { model, trace })
}

/// Trains one network per knot on that knot's draws and stacks them with
/// spike gates. The trace records the summed objective.
pub fn train_ensemble(
    nets: Vec<Mlp>,
    measure: &DiscreteMeasure,
    schedule: &BetaSchedule,
    config: &TrainConfig,
) -> Result<TrainOutcome<GatedEnsemble>> {
    let samples = McSamples::for_partition(measure, schedule, &config.partition, &config.mc_per_knot, config.seed)?;
    let d = samples.dim;
    if nets.len() != samples.knots.len() {
        return invalid(format!("{} networks for {} training knots", nets.len(), samples.knots.len()));
    }
    struct Member {
        net: Mlp,
        input: DMatrix<f64>,
        target: DMatrix<f64>,
        weight: f64,
        params: Vec<f64>,
        state: OptimizerState,
    }
    let mut members: Vec<Member> = nets
        .into_iter()
        .zip(&samples.knots)
        .map(|(net, k)| {
            let m = k.count(d);
            let params = net.params_flat();
            let target = DMatrix::from_iterator(d, m, k.zs.iter().map(|z| z / k.sigma));
            Member {
                input: DMatrix::from_column_slice(d, m, &k.xs),
                target,
                weight: k.weight / m as f64,
                state: OptimizerState::new(config.optimizer, params.len()),
                params,
                net,
            }
        })
        .collect();
    let member_loss = |mem: &Member| -> (f64, Vec<f64>) {
        let cache = mem.net.forward_cached(mem.input.clone());
        let mut grad_out = cache.output() + &mem.target;
        let loss = mem.weight * grad_out.norm_squared();
        grad_out *= 2.0 * mem.weight;
        (loss, mem.net.backward(&cache, grad_out))
    };
    let mut trace = Vec::with_capacity(config.steps + 1);
    for step in 0..=config.steps {
        let mut total = 0.0;
        for mem in &mut members {
            let (loss, grad) = member_loss(mem);
            total += loss;
            if step < config.steps {
                mem.state.apply(&mut mem.params, &grad);
                mem.net.set_params_flat(&mem.params)?;
                mem.net.clip();
                mem.params = mem.net.params_flat();
            }
        }
        check_loss(step, total)?;
        trace.push(total);
    }
    let nets = members.into_iter().map(|m| m.net).collect();
    let model = GatedEnsemble::new(nets, &samples.knots.iter().map(|k| k.t).collect::<Vec<_>>())?;
    Ok(TrainOutcome { model, trace })
}
