//! Shared workloads for the benchmarks.

use rtopk_core::stream::generate_workload;
use rtopk_core::{Interner, Record, WorkloadParams};

pub fn workload(params: &WorkloadParams) -> Vec<Record> {
    let raw = generate_workload(params).expect("valid benchmark parameters");
    Interner::default().intern_all(&raw).expect("generated streams intern cleanly")
}
