//! `report.json`: latency breakdown, resource use and constraint margins.
//!
//! Contains nothing run-dependent (no timings, no node counts) so staged
//! and one-shot runs produce identical files.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::model::{self, Assignment, Evaluation};
use crate::platform::PlatformConfig;
use crate::solution::cache_label;
use crate::space::DesignSpace;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransferReport {
    pub array: String,
    pub cache: String,
    pub elements: u64,
    pub bytes: u128,
    pub load: bool,
    pub store: bool,
    /// Body whose buffer is reused instead of reloading.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shares_buffer_of: Option<String>,
    /// Issued back to back with other transfers at the same point. The
    /// latency model does not credit any overlap.
    pub grouped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BodyReport {
    pub id: String,
    pub statements: Vec<String>,
    pub ii: u64,
    pub lat2: u128,
    pub lat1: u128,
    pub lat0: u128,
    pub lat_mem: u128,
    pub lat_total: u128,
    pub dsp: BTreeMap<String, u64>,
    pub transfers: Vec<TransferReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArrayReport {
    pub name: String,
    pub partition: Vec<u64>,
    pub banks: u128,
    pub burst_bits: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Margins {
    pub dsp: i128,
    pub memory_bytes: i128,
    /// Smallest `max_part - banks` over all arrays.
    pub partition: i128,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub kernel: String,
    pub status: String,
    pub latency_cycles: u128,
    pub modeled_gflops: f64,
    pub clock_mhz: f64,
    pub reuse: String,
    pub tree_reduction: bool,
    pub dsp_used: u64,
    pub dsp_optimistic: u64,
    pub dsp_pessimistic: u64,
    pub dsp_available: u64,
    pub memory_bytes: u128,
    pub memory_available: u64,
    pub margins: Margins,
    pub bodies: Vec<BodyReport>,
    pub arrays: Vec<ArrayReport>,
    pub bytes_grouped: u128,
}

pub fn build(space: &DesignSpace, cfg: &PlatformConfig, status: &str, a: &Assignment, ev: &Evaluation) -> Report {
    let ops = ["add", "sub", "mul", "div"];
    let mut grouped_total = 0u128;
    let bodies = space
        .bodies
        .iter()
        .enumerate()
        .map(|(b, body)| {
            let ba = &a.bodies[b];
            let be = &ev.bodies[b];
            let ts = &ev.transfers[b];
            let transfers = ts
                .iter()
                .map(|t| {
                    let info = &space.arrays[body.arrays[t.array].array];
                    let bytes = t.elements as u128 * (info.element_bits as u128 / 8).max(1);
                    let moving = |x: &model::Transfer| x.load || x.store;
                    let grouped = moving(t) && ts.iter().filter(|x| x.pos == t.pos && moving(x)).count() > 1;
                    if grouped {
                        grouped_total += bytes * (t.load as u128 + t.store as u128);
                    }
                    let it = (t.pos > 0).then(|| body.loops[ba.perm[t.pos - 1]].iterator.as_str());
                    TransferReport {
                        array: info.name.clone(),
                        cache: cache_label(it),
                        elements: t.elements,
                        bytes,
                        load: t.load,
                        store: t.store,
                        shares_buffer_of: t.shares_buffer_of.map(|o| space.bodies[o].id.clone()),
                        grouped,
                    }
                })
                .collect();
            BodyReport {
                id: body.id.clone(),
                statements: body.statements.iter().map(|s| s.id.clone()).collect(),
                ii: be.ii,
                lat2: be.lat2,
                lat1: be.lat1,
                lat0: be.lat0,
                lat_mem: be.lat_mem,
                lat_total: be.lat_total,
                dsp: ops.iter().zip(be.dsp).filter(|(_, n)| *n > 0).map(|(o, n)| (o.to_string(), n)).collect(),
                transfers,
            }
        })
        .collect();
    let arrays: Vec<ArrayReport> = space
        .arrays
        .iter()
        .zip(&ev.partition)
        .map(|(info, p)| ArrayReport {
            name: info.name.clone(),
            partition: p.clone(),
            banks: p.iter().map(|x| *x as u128).product(),
            burst_bits: info.burst,
        })
        .collect();
    let used = ev.dsp_used(cfg);
    let margins = Margins {
        dsp: cfg.dsp_available as i128 - used as i128,
        memory_bytes: cfg.mem_bytes as i128 - ev.memory_bytes as i128,
        partition: arrays.iter().map(|x| cfg.max_part as i128 - x.banks as i128).min().unwrap_or(cfg.max_part as i128),
    };
    Report {
        kernel: space.kernel.name.clone(),
        status: status.to_string(),
        latency_cycles: ev.objective,
        modeled_gflops: model::modeled_gflops(space, cfg, ev.objective),
        clock_mhz: cfg.clock_mhz,
        reuse: if cfg.reuse_opt { "optimistic" } else { "pessimistic" }.to_string(),
        tree_reduction: cfg.tree_reduction,
        dsp_used: used,
        dsp_optimistic: ev.dsp_optimistic,
        dsp_pessimistic: ev.dsp_pessimistic,
        dsp_available: cfg.dsp_available,
        memory_bytes: ev.memory_bytes,
        memory_available: cfg.mem_bytes,
        margins,
        bodies,
        arrays,
        bytes_grouped: grouped_total,
    }
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_kernel;
    use crate::solver::{solve, Pins, SolveOptions};
    use crate::space::build_space;

    #[test]
    fn breakdown_adds_up() {
        let src = std::fs::read_to_string(format!("{}/kernels/gemm_small.c", env!("CARGO_MANIFEST_DIR"))).unwrap();
        let space = build_space(&parse_kernel(&src).unwrap(), 512).unwrap();
        let cfg = PlatformConfig { mem_bytes: 700, ..PlatformConfig::default() };
        let out = solve(&space, &cfg, &Pins::none(&space), &SolveOptions::default()).unwrap();
        let best = out.best.unwrap();
        let r = build(&space, &cfg, out.status.as_str(), &best.assignment, &best.evaluation);
        let total: u128 = r.bodies.iter().map(|b| b.lat_total).sum();
        assert_eq!(total, r.latency_cycles);
        for b in &r.bodies {
            assert_eq!(b.lat0 + b.lat_mem, b.lat_total);
        }
        assert!(r.margins.memory_bytes >= 0 && r.margins.dsp >= 0 && r.margins.partition >= 0);
        let text = r.to_json();
        assert!(text.contains("\"latency_cycles\""));
        assert!(!text.contains("elapsed"));
    }
}
