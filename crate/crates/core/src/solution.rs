//! `solution.json`: a solved assignment in named form, plus its claimed cost.
//!
//! Loops, arrays and cache points are referred to by name so the file can
//! be edited by hand and re-checked without the design space at hand.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::SchemaError;
use crate::model::{one_hot, Assignment, BodyAssign, Evaluation};
use crate::platform::PlatformConfig;
use crate::space::DesignSpace;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopChoice {
    pub iterator: String,
    pub tc: [u64; 3],
    pub pip: bool,
    pub uf: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyChoice {
    pub id: String,
    pub statements: Vec<String>,
    /// Level-0 loop order by iterator, outermost first.
    pub perm: Vec<String>,
    pub loops: Vec<LoopChoice>,
    /// Array name to `before-nest` or `after-<iterator>0`.
    pub cache: BTreeMap<String, String>,
    pub ii: u64,
    pub lat2: u128,
    pub lat1: u128,
    pub lat0: u128,
    pub lat_mem: u128,
    pub lat_total: u128,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayChoice {
    pub name: String,
    pub partition: Vec<u64>,
    pub burst: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Solution {
    pub kernel: String,
    pub status: String,
    /// Modeled latency in cycles.
    pub objective: u128,
    /// `optimistic` or `pessimistic` DSP accounting.
    pub reuse: String,
    pub dsp: u64,
    pub memory_bytes: u128,
    pub bodies: Vec<BodyChoice>,
    pub arrays: Vec<ArrayChoice>,
}

pub fn cache_label(iterator: Option<&str>) -> String {
    match iterator {
        None => "before-nest".to_string(),
        Some(it) => format!("after-{it}0"),
    }
}

impl Solution {
    pub fn new(space: &DesignSpace, cfg: &PlatformConfig, status: &str, a: &Assignment, ev: &Evaluation) -> Solution {
        let bodies = space
            .bodies
            .iter()
            .zip(&a.bodies)
            .zip(&ev.bodies)
            .map(|((body, ba), be)| BodyChoice {
                id: body.id.clone(),
                statements: body.statements.iter().map(|s| s.id.clone()).collect(),
                perm: ba.perm.iter().map(|l| body.loops[*l].iterator.clone()).collect(),
                loops: body
                    .loops
                    .iter()
                    .enumerate()
                    .map(|(l, lp)| LoopChoice { iterator: lp.iterator.clone(), tc: ba.tc[l], pip: ba.pip[l], uf: ba.uf[l] })
                    .collect(),
                cache: body
                    .arrays
                    .iter()
                    .enumerate()
                    .map(|(k, arr)| {
                        let pos = ba.cache_pos(k);
                        let it = (pos > 0).then(|| body.loops[ba.perm[pos - 1]].iterator.as_str());
                        (arr.name.clone(), cache_label(it))
                    })
                    .collect(),
                ii: be.ii,
                lat2: be.lat2,
                lat1: be.lat1,
                lat0: be.lat0,
                lat_mem: be.lat_mem,
                lat_total: be.lat_total,
            })
            .collect();
        let arrays = space
            .arrays
            .iter()
            .zip(&ev.partition)
            .map(|(info, p)| ArrayChoice { name: info.name.clone(), partition: p.clone(), burst: info.burst })
            .collect();
        Solution {
            kernel: space.kernel.name.clone(),
            status: status.to_string(),
            objective: ev.objective,
            reuse: if cfg.reuse_opt { "optimistic" } else { "pessimistic" }.to_string(),
            dsp: ev.dsp_used(cfg),
            memory_bytes: ev.memory_bytes,
            bodies,
            arrays,
        }
    }

    pub fn parse(text: &str) -> Result<Solution, SchemaError> {
        serde_json::from_str(text).map_err(|e| SchemaError::Malformed(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("solution serializes");
        s.push('\n');
        s
    }

    /// Maps names back onto the design space. Values are not range-checked
    /// here; that is the checker's job.
    pub fn to_assignment(&self, space: &DesignSpace) -> Result<Assignment, SchemaError> {
        let bad = |m: String| SchemaError::Malformed(m);
        if self.kernel != space.kernel.name {
            return Err(bad(format!("solution is for kernel `{}`, not `{}`", self.kernel, space.kernel.name)));
        }
        if self.bodies.len() != space.bodies.len() {
            return Err(bad(format!("{} bodies listed, the kernel has {}", self.bodies.len(), space.bodies.len())));
        }
        let mut bodies = Vec::new();
        for (body, sb) in space.bodies.iter().zip(&self.bodies) {
            if sb.id != body.id {
                return Err(bad(format!("body `{}` found where `{}` was expected", sb.id, body.id)));
            }
            let n = body.loops.len();
            let find = |it: &str| body.loop_pos(it).ok_or_else(|| bad(format!("body {}: unknown loop `{it}`", body.id)));
            let mut tc = vec![[0u64; 3]; n];
            let mut pip = vec![false; n];
            let mut uf = vec![0u64; n];
            let mut seen = vec![false; n];
            for lc in &sb.loops {
                let l = find(&lc.iterator)?;
                if std::mem::replace(&mut seen[l], true) {
                    return Err(bad(format!("body {}: loop `{}` listed twice", body.id, lc.iterator)));
                }
                tc[l] = lc.tc;
                pip[l] = lc.pip;
                uf[l] = lc.uf;
            }
            if let Some(l) = seen.iter().position(|s| !s) {
                return Err(bad(format!("body {}: loop `{}` missing", body.id, body.loops[l].iterator)));
            }
            let perm = sb.perm.iter().map(|it| find(it)).collect::<Result<Vec<_>, _>>()?;
            let mut cache = Vec::new();
            for arr in &body.arrays {
                let label = sb.cache.get(&arr.name).ok_or_else(|| bad(format!("body {}: no cache point for `{}`", body.id, arr.name)))?;
                let pos = if label == "before-nest" {
                    0
                } else {
                    let it = label
                        .strip_prefix("after-")
                        .and_then(|s| s.strip_suffix('0'))
                        .ok_or_else(|| bad(format!("body {}: cache point `{label}` is not before-nest or after-<loop>0", body.id)))?;
                    let l = find(it)?;
                    1 + perm.iter().position(|p| *p == l).ok_or_else(|| bad(format!("body {}: `{it}` missing from perm", body.id)))?
                };
                cache.push(one_hot(n + 1, pos));
            }
            if let Some(extra) = sb.cache.keys().find(|k| body.array_pos(k).is_none()) {
                return Err(bad(format!("body {}: array `{extra}` is not used there", body.id)));
            }
            bodies.push(BodyAssign { tc, pip, uf, perm, cache });
        }
        let mut partition = Vec::new();
        for info in &space.arrays {
            let sa = self
                .arrays
                .iter()
                .find(|a| a.name == info.name)
                .ok_or_else(|| bad(format!("no entry for array `{}`", info.name)))?;
            partition.push(sa.partition.clone());
        }
        Ok(Assignment { bodies, partition: Some(partition) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_kernel;
    use crate::model::evaluate;
    use crate::solver::{solve, Pins, SolveOptions};
    use crate::space::build_space;

    fn solved() -> (DesignSpace, PlatformConfig, Solution, Assignment) {
        let src = std::fs::read_to_string(format!("{}/kernels/gemm_small.c", env!("CARGO_MANIFEST_DIR"))).unwrap();
        let space = build_space(&parse_kernel(&src).unwrap(), 512).unwrap();
        let cfg = PlatformConfig { dsp_available: 200, mem_bytes: 600, ..PlatformConfig::default() };
        let out = solve(&space, &cfg, &Pins::none(&space), &SolveOptions::default()).unwrap();
        let best = out.best.unwrap();
        let sol = Solution::new(&space, &cfg, out.status.as_str(), &best.assignment, &best.evaluation);
        (space, cfg, sol, best.assignment)
    }

    #[test]
    fn round_trips_through_json() {
        let (space, cfg, sol, a) = solved();
        let back = Solution::parse(&sol.to_json()).unwrap();
        assert_eq!(back, sol);
        let b = back.to_assignment(&space).unwrap();
        assert_eq!(b.bodies, a.bodies);
        assert_eq!(evaluate(&space, &cfg, &b).objective, sol.objective);
    }

    #[test]
    fn inner_cache_points_are_named_by_loop() {
        let (_, _, sol, _) = solved();
        let labels: Vec<&String> = sol.bodies.iter().flat_map(|b| b.cache.values()).collect();
        assert!(labels.iter().all(|l| *l == "before-nest" || (l.starts_with("after-") && l.ends_with('0'))));
    }

    #[test]
    fn malformed_files_are_rejected() {
        let (space, _, sol, _) = solved();
        assert!(Solution::parse("{\"kernel\": 3}").is_err());
        let mut s = sol.clone();
        s.bodies[0].loops[0].iterator = "zz".into();
        assert!(s.to_assignment(&space).is_err());
        let mut s = sol.clone();
        s.bodies[0].cache.insert("A".into(), "inside".into());
        assert!(s.to_assignment(&space).is_err());
        let mut s = sol;
        s.kernel = "other".into();
        assert!(s.to_assignment(&space).is_err());
    }
}
