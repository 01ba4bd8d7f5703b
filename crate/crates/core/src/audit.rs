//! Per-thread counters of ground-truth label reads.
//!
//! Every read of `l*` goes through [`OracleGate`](crate::data::OracleGate) or
//! the randomized-response boundary, and is tallied here under a
//! [`ReadPurpose`]. A privacy-claimed run must leave every purpose except
//! `Privatization` and `Evaluation` at zero on the thread that executed it.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadPurpose {
    /// The RR mechanism consuming `l*` to emit `l_RR`.
    Privatization,
    /// Non-private DPO and DP-SGD, which train on `l*` directly.
    Training,
    /// Oracle model error rates (validation protocol only).
    OracleGamma,
    /// Ground-truth-aware evaluation.
    Evaluation,
}

const PURPOSES: usize = 4;

impl ReadPurpose {
    fn index(self) -> usize {
        match self {
            ReadPurpose::Privatization => 0,
            ReadPurpose::Training => 1,
            ReadPurpose::OracleGamma => 2,
            ReadPurpose::Evaluation => 3,
        }
    }
}

thread_local! {
    static READS: [Cell<u64>; PURPOSES] = const { [const { Cell::new(0) }; PURPOSES] };
}

pub(crate) fn record(purpose: ReadPurpose, count: u64) {
    READS.with(|reads| {
        let cell = &reads[purpose.index()];
        cell.set(cell.get() + count);
    });
}

/// Snapshot of this thread's read counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditSnapshot {
    pub privatization: u64,
    pub training: u64,
    pub oracle_gamma: u64,
    pub evaluation: u64,
}

impl AuditSnapshot {
    /// Reads that fall outside the privatization boundary and evaluation.
    pub fn outside_eval(&self) -> u64 {
        self.training + self.oracle_gamma
    }

    pub fn since(&self, earlier: &AuditSnapshot) -> AuditSnapshot {
        AuditSnapshot {
            privatization: self.privatization - earlier.privatization,
            training: self.training - earlier.training,
            oracle_gamma: self.oracle_gamma - earlier.oracle_gamma,
            evaluation: self.evaluation - earlier.evaluation,
        }
    }
}

pub fn snapshot() -> AuditSnapshot {
    READS.with(|reads| AuditSnapshot {
        privatization: reads[0].get(),
        training: reads[1].get(),
        oracle_gamma: reads[2].get(),
        evaluation: reads[3].get(),
    })
}

/// Runs `f` and returns its output with the reads it performed.
pub fn audited<T>(f: impl FnOnce() -> T) -> (T, AuditSnapshot) {
    let before = snapshot();
    let out = f();
    (out, snapshot().since(&before))
}
