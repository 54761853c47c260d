use std::fmt;
use std::time::Instant;

use ndarray::{s, Array3};

use super::plan::RankPlan;
use super::transport::{CallCounts, Transport};
use crate::model::{Halo, Phase};
use crate::{Error, Real, Result};

/// Tag bit marking gradient traffic of the reverse pass.
pub const REVERSE_TAG: u32 = 0x4000_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TimedPhase {
    Pack,
    SendRecv,
    Unpack,
    Compute,
}

impl fmt::Display for TimedPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimedPhase::Pack => "pack",
            TimedPhase::SendRecv => "sendrecv",
            TimedPhase::Unpack => "unpack",
            TimedPhase::Compute => "compute",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingRow {
    pub rank: usize,
    pub layer: usize,
    pub phase: TimedPhase,
    pub seconds: f64,
}

pub fn timings_csv(rows: &[TimingRow]) -> String {
    let mut s = String::from("rank,layer,phase,seconds\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{:.9}\n", r.rank, r.layer, r.phase, r.seconds));
    }
    s
}

/// Halo exchange of one rank over a [`Transport`]. Forward exchanges are
/// timed in three phases (pack, send/recv, unpack); compute is timed
/// between the model's phase markers.
pub struct DistHalo<'a, X: Transport + ?Sized> {
    plan: &'a RankPlan,
    transport: &'a mut X,
    pub timings: Vec<TimingRow>,
    /// Forward exchanges performed.
    pub exchanges: usize,
    pub reverses: usize,
    /// Aggregation stages during which the transport was used.
    pub aggregate_violations: usize,
    compute_start: Option<Instant>,
    aggregate_counts: Option<CallCounts>,
}

impl<'a, X: Transport + ?Sized> DistHalo<'a, X> {
    pub fn new(plan: &'a RankPlan, transport: &'a mut X) -> Self {
        DistHalo {
            plan,
            transport,
            timings: Vec::new(),
            exchanges: 0,
            reverses: 0,
            aggregate_violations: 0,
            compute_start: None,
            aggregate_counts: None,
        }
    }

    pub fn transport(&mut self) -> &mut X {
        self.transport
    }

    fn record(&mut self, step: usize, phase: TimedPhase, since: Instant) {
        let seconds = since.elapsed().as_secs_f64();
        self.timings.push(TimingRow { rank: self.plan.rank, layer: step / 2, phase, seconds });
    }

    fn check_table<T: Real>(&self, table: &Array3<T>) -> Result<()> {
        let want = self.plan.owned.len() + self.plan.remote.len();
        if table.shape()[0] != want {
            return Err(Error::Shape(format!("rank {}: table has {} rows, plan {want}", self.plan.rank, table.shape()[0])));
        }
        Ok(())
    }
}

fn pack_rows<T: Real>(table: &Array3<T>, rows: impl Iterator<Item = usize>, cap: usize) -> Vec<u8> {
    let mut buf = Vec::with_capacity(cap);
    for r in rows {
        for &v in table.slice(s![r, .., ..]).iter() {
            v.put_le(&mut buf);
        }
    }
    buf
}

fn row_values<T: Real>(bytes: &[u8]) -> impl Iterator<Item = T> + '_ {
    bytes.chunks_exact(T::BYTES).map(T::get_le)
}

impl<X: Transport + ?Sized, T: Real> Halo<T> for DistHalo<'_, X> {
    fn exchange(&mut self, step: usize, table: &mut Array3<T>) -> Result<()> {
        self.check_table(table)?;
        self.exchanges += 1;
        let row = table.shape()[1] * table.shape()[2];
        let (rank, n_owned) = (self.plan.rank, self.plan.owned.len());
        let tag = step as u32;

        let t0 = Instant::now();
        let bufs: Vec<Vec<u8>> = self
            .plan
            .sends
            .iter()
            .map(|sl| pack_rows(table, sl.nodes.iter().copied(), sl.nodes.len() * row * T::BYTES))
            .collect();
        self.record(step, TimedPhase::Pack, t0);

        let t0 = Instant::now();
        for (sl, buf) in self.plan.sends.iter().zip(bufs) {
            self.transport.post_send(sl.peer, tag, buf)?;
        }
        let mut got = Vec::with_capacity(self.plan.recvs.len());
        for rs in &self.plan.recvs {
            let bytes = self.transport.post_recv(rs.peer, tag)?;
            let want = rs.slots.len() * row * T::BYTES;
            if bytes.len() != want {
                return Err(Error::Comm {
                    rank,
                    peer: rs.peer,
                    msg: format!("exchange {step}: got {} bytes, expected {want}", bytes.len()),
                });
            }
            got.push(bytes);
        }
        self.record(step, TimedPhase::SendRecv, t0);

        let t0 = Instant::now();
        for (rs, bytes) in self.plan.recvs.iter().zip(&got) {
            let mut vals = row_values::<T>(bytes);
            for slot in rs.slots.clone() {
                for dst in table.slice_mut(s![n_owned + slot, .., ..]).iter_mut() {
                    *dst = vals.next().expect("length checked");
                }
            }
        }
        self.record(step, TimedPhase::Unpack, t0);
        Ok(())
    }

    fn reverse(&mut self, step: usize, grads: &mut Array3<T>) -> Result<()> {
        self.check_table(grads)?;
        self.reverses += 1;
        let row = grads.shape()[1] * grads.shape()[2];
        let (rank, n_owned) = (self.plan.rank, self.plan.owned.len());
        let tag = REVERSE_TAG | step as u32;
        for rs in &self.plan.recvs {
            let rows = rs.slots.clone().map(|slot| n_owned + slot);
            let buf = pack_rows(grads, rows.clone(), rs.slots.len() * row * T::BYTES);
            for r in rows {
                grads.slice_mut(s![r, .., ..]).fill(T::zero());
            }
            self.transport.post_send(rs.peer, tag, buf)?;
        }
        for sl in &self.plan.sends {
            let bytes = self.transport.post_recv(sl.peer, tag)?;
            let want = sl.nodes.len() * row * T::BYTES;
            if bytes.len() != want {
                return Err(Error::Comm {
                    rank,
                    peer: sl.peer,
                    msg: format!("reverse {step}: got {} bytes, expected {want}", bytes.len()),
                });
            }
            let mut vals = row_values::<T>(&bytes);
            for &n in &sl.nodes {
                for dst in grads.slice_mut(s![n, .., ..]).iter_mut() {
                    *dst += vals.next().expect("length checked");
                }
            }
        }
        Ok(())
    }

    fn marker(&mut self, step: usize, phase: Phase) {
        match phase {
            Phase::ComputeBegin => self.compute_start = Some(Instant::now()),
            Phase::ComputeEnd => {
                if let Some(t0) = self.compute_start.take() {
                    self.record(step, TimedPhase::Compute, t0);
                }
            }
            Phase::AggregateBegin => self.aggregate_counts = Some(self.transport.counts()),
            Phase::AggregateEnd => {
                if self.aggregate_counts.take() != Some(self.transport.counts()) {
                    self.aggregate_violations += 1;
                }
            }
        }
    }
}
