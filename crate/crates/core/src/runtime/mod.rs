//! Multi-rank execution under incoming-edge ownership: a rank owns a set of
//! nodes and every edge ending in them, so attention and aggregation stay
//! local and only source embeddings cross rank boundaries.

mod dist;
mod halo;
mod plan;
mod transport;

pub use dist::{
    check_params, decode_outputs, distributed_forward, encode_outputs, rank_forward, train_distributed, RankReport,
    StepReport, TrainRun, Trainer,
};
pub use halo::{timings_csv, DistHalo, TimedPhase, TimingRow, REVERSE_TAG};
pub use plan::{build_comm_plan, CommPlan, RankPlan, RecvSlots, SendList};
pub use transport::{
    inproc_world, run_inproc, CallCounts, InProcOptions, InProcTransport, TcpTransport, Transport, COLLECTIVE_TAG,
};
