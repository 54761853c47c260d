use std::collections::BTreeSet;

use super::halo::{DistHalo, TimingRow};
use super::plan::{build_comm_plan, CommPlan};
use super::transport::{run_inproc, CallCounts, InProcOptions, Transport};
use crate::model::{
    outputs_to_matrix, run_backward, run_forward, Adam, BasisMode, BlockKey, BlockMatrix, LossTerms, ModelInput,
    ModelParams, Outputs, Plateau, loss_from_sums,
};
use crate::partition::PartitionAssignment;
use crate::structures::AtomGraph;
use crate::{Error, Real, Result};

/// What one rank did during a forward pass or training step.
#[derive(Debug, Clone, Default)]
pub struct RankReport {
    pub rank: usize,
    pub timings: Vec<TimingRow>,
    pub counts: CallCounts,
    pub exchanges: usize,
    pub reverses: usize,
    pub aggregate_violations: usize,
}

impl RankReport {
    fn absorb<X: Transport + ?Sized>(&mut self, halo: DistHalo<'_, X>) {
        self.timings.extend(halo.timings.iter().copied());
        self.exchanges += halo.exchanges;
        self.reverses += halo.reverses;
        self.aggregate_violations += halo.aggregate_violations;
    }
}

/// Abort unless every rank holds bitwise identical parameters.
pub fn check_params<T: Real, X: Transport + ?Sized>(t: &mut X, params: &ModelParams<T>) -> Result<()> {
    let d = params.digest();
    let words = [(d >> 32) as f64, (d & 0xffff_ffff) as f64];
    let all = t.allgather(&words)?;
    let digests: Vec<u64> = all.iter().map(|w| ((w[0] as u64) << 32) | w[1] as u64).collect();
    if digests.iter().any(|&x| x != d) {
        return Err(Error::ParamDivergence(digests));
    }
    Ok(())
}

fn check_world<X: Transport + ?Sized>(t: &X, plan: &CommPlan) -> Result<()> {
    if t.world_size() != plan.world_size() {
        return Err(Error::Partition(format!(
            "world size {} does not match a plan for {} ranks",
            t.world_size(),
            plan.world_size()
        )));
    }
    Ok(())
}

/// Forward pass of this rank's owned nodes and edges.
pub fn rank_forward<T: Real, X: Transport + ?Sized>(
    t: &mut X,
    plan: &CommPlan,
    g: &AtomGraph,
    params: &ModelParams<T>,
) -> Result<(Outputs, RankReport)> {
    check_world(t, plan)?;
    check_params(t, params)?;
    let rp = &plan.ranks[t.rank()];
    let input = ModelInput::new(rp.local_graph(g)?, params)?;
    let mut report = RankReport { rank: rp.rank, ..Default::default() };
    let mut halo = DistHalo::new(rp, t);
    let (out, _) = run_forward(params, &input, &mut halo, false)?;
    report.absorb(halo);
    report.counts = t.counts();
    Ok((out, report))
}

/// Forward pass on `p.n_parts` in-process ranks, gathered into one matrix.
pub fn distributed_forward<T: Real>(
    g: &AtomGraph,
    params: &ModelParams<T>,
    p: &PartitionAssignment,
    opts: InProcOptions,
) -> Result<(BlockMatrix, Vec<RankReport>)> {
    let plan = build_comm_plan(g, p)?;
    let per_rank = run_inproc(plan.world_size(), opts, |t| rank_forward(t, &plan, g, params))?;
    let mut all = Vec::new();
    let mut reports = Vec::new();
    for (out, rep) in per_rank {
        all.extend(out);
        reports.push(rep);
    }
    Ok((outputs_to_matrix(params, g.species(), all)?, reports))
}

pub fn encode_outputs(out: &Outputs) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(&(out.len() as u64).to_le_bytes());
    for (k, v) in out {
        b.extend_from_slice(&(k.i as u64).to_le_bytes());
        b.extend_from_slice(&(k.j as u64).to_le_bytes());
        for x in k.image {
            b.extend_from_slice(&x.to_le_bytes());
        }
        b.extend_from_slice(&(v.len() as u64).to_le_bytes());
        for x in v {
            b.extend_from_slice(&x.to_le_bytes());
        }
    }
    b
}

pub fn decode_outputs(bytes: &[u8]) -> Result<Outputs> {
    let bad = || Error::Invalid("truncated output buffer".into());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(bad)?;
        pos += n;
        Ok(s)
    };
    let u64_at = |s: &[u8]| u64::from_le_bytes(s.try_into().unwrap());
    let n = u64_at(take(8)?) as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let i = u64_at(take(8)?) as usize;
        let j = u64_at(take(8)?) as usize;
        let mut image = [0i32; 3];
        for x in &mut image {
            *x = i32::from_le_bytes(take(4)?.try_into().unwrap());
        }
        let len = u64_at(take(8)?) as usize;
        let vals = take(len * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        out.push((BlockKey { i, j, image }, vals));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Global loss before the update.
    pub loss: f64,
    /// Learning rate used for the update.
    pub lr: f64,
    pub count: usize,
}

/// Training state of one rank. Every rank holds the full parameter set and
/// applies the same update from the rank-ordered gradient sum.
pub struct Trainer<T> {
    pub params: ModelParams<T>,
    pub adam: Adam,
    pub plateau: Option<Plateau>,
    pub lr: f64,
    pub report: RankReport,
    plan: CommPlan,
    rank: usize,
    input: ModelInput<T>,
    target: BlockMatrix,
    species: Vec<u32>,
    checked: bool,
}

impl<T: Real> Trainer<T> {
    /// `target` may be in either basis and may cover more than this rank
    /// owns; only the owned blocks are kept.
    pub fn new(
        plan: &CommPlan,
        rank: usize,
        g: &AtomGraph,
        target: &BlockMatrix,
        params: ModelParams<T>,
        lr: f64,
    ) -> Result<Self> {
        let rp = plan.ranks.get(rank).ok_or_else(|| Error::Partition(format!("no rank {rank} in the plan")))?;
        let graph = rp.local_graph(g)?;
        let mut keys: BTreeSet<BlockKey> = rp.owned.iter().map(|&n| BlockKey::onsite(n)).collect();
        keys.extend(graph.edges.iter().map(|e| e.key));
        let mut local = BlockMatrix::new(target.basis.clone(), target.mode, target.species.clone());
        for k in &keys {
            if let Some(b) = target.get(k) {
                local.insert(*k, b.clone())?;
            }
        }
        let local = match local.mode {
            BasisMode::Coupled => local,
            BasisMode::Uncoupled => local.to_coupled()?,
        };
        let input = ModelInput::new(graph, &params)?;
        Ok(Trainer {
            params,
            adam: Adam::new(lr),
            plateau: Some(Plateau::default()),
            lr,
            report: RankReport { rank, ..Default::default() },
            plan: plan.clone(),
            rank,
            input,
            target: local,
            species: g.species().to_vec(),
            checked: false,
        })
    }

    /// Global loss, matched element count and the gradient summed over
    /// ranks in rank order.
    pub fn loss_and_gradient<X: Transport + ?Sized>(&mut self, t: &mut X) -> Result<(f64, usize, Vec<f64>)> {
        check_world(t, &self.plan)?;
        if t.rank() != self.rank {
            return Err(Error::Partition(format!("trainer for rank {} driven by rank {}", self.rank, t.rank())));
        }
        if !self.checked {
            check_params(t, &self.params)?;
            self.checked = true;
        }
        let rp = &self.plan.ranks[self.rank];
        let mut halo = DistHalo::new(rp, t);
        let (out, tape) = run_forward(&self.params, &self.input, &mut halo, true)?;
        let pred = outputs_to_matrix(&self.params, &self.species, out)?;
        let terms = LossTerms::new(&pred, &self.target)?;
        let sums = halo.transport().allgather(&[terms.sum_abs, terms.sum_sq, terms.count as f64])?;
        let (mut sa, mut sq, mut n) = (0.0, 0.0, 0usize);
        for v in &sums {
            sa += v[0];
            sq += v[1];
            n += v[2] as usize;
        }
        let loss = loss_from_sums(sa, sq, n)?;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("loss is {loss}")));
        }
        let seed = terms.seed(n);
        let tape = tape.expect("recorded");
        let grads = run_backward(&self.params, &self.input, &tape, &seed, &mut halo)?;
        let local: Vec<f64> = grads.to_flat().into_iter().map(|v| v.f64()).collect();
        let all = halo.transport().allgather(&local)?;
        self.report.absorb(halo);
        let mut total = vec![0.0f64; local.len()];
        for g in &all {
            for (acc, v) in total.iter_mut().zip(g) {
                *acc += v;
            }
        }
        Ok((loss, n, total))
    }

    /// One full-batch step: local loss, allgathered totals, local backward,
    /// gradient sum in rank order, identical Adam update everywhere.
    pub fn step<X: Transport + ?Sized>(&mut self, t: &mut X) -> Result<StepReport> {
        let (loss, count, grad) = self.loss_and_gradient(t)?;
        let lr = self.lr;
        self.adam.lr = lr;
        self.adam.step(&mut self.params, &grad)?;
        check_params(t, &self.params)?;
        if let Some(p) = &mut self.plateau {
            self.lr = p.observe(loss, lr);
        }
        self.report.counts = t.counts();
        Ok(StepReport { loss, lr, count })
    }
}

/// Result of [`train_distributed`]: the loss history and final parameters
/// (identical on every rank), plus per-rank reports.
pub struct TrainRun<T> {
    pub history: Vec<StepReport>,
    pub params: ModelParams<T>,
    pub reports: Vec<RankReport>,
}

/// `steps` training steps on `p.n_parts` in-process ranks.
pub fn train_distributed<T: Real>(
    g: &AtomGraph,
    target: &BlockMatrix,
    params: &ModelParams<T>,
    p: &PartitionAssignment,
    steps: usize,
    lr: f64,
    opts: InProcOptions,
) -> Result<TrainRun<T>> {
    let plan = build_comm_plan(g, p)?;
    let target = match target.mode {
        BasisMode::Coupled => target.clone(),
        BasisMode::Uncoupled => target.to_coupled()?,
    };
    let per_rank = run_inproc(plan.world_size(), opts, |t| {
        let mut tr = Trainer::new(&plan, t.rank(), g, &target, params.clone(), lr)?;
        let history = (0..steps).map(|_| tr.step(t)).collect::<Result<Vec<_>>>()?;
        Ok((history, tr.params, tr.report))
    })?;
    let mut reports = Vec::new();
    let mut first = None;
    for (history, params, report) in per_rank {
        reports.push(report);
        first.get_or_insert((history, params));
    }
    let (history, params) = first.expect("at least one rank");
    Ok(TrainRun { history, params, reports })
}
