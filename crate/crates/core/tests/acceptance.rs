//! Acceptance suite. Prints one line per criterion and fails if any does.
//! Criteria run on separate threads; each line is printed in order once all finish.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tileforge::codegen::emit;
use tileforge::frontend::parse_kernel;
use tileforge::interp::{compare, permute_band, run_ir, seeded_memory};
use tileforge::model::{evaluate, footprint, random_assignment, Assignment};
use tileforge::platform::PlatformConfig;
use tileforge::solution::Solution;
use tileforge::solver::{brute_force, solve, Pins, SolveOptions, Status};
use tileforge::space::{build_space, factor_triples, DesignSpace};
use tileforge::verify::{check_assignment, max_burst, verify_solution};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn budget(secs: u64) -> SolveOptions<'static> {
    SolveOptions { budget: Some(Duration::from_secs(secs)), threads: 1, trace: None }
}

fn oracle_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut checked, mut infeasible, mut tried) = (0, 0, 0);
    let started = Instant::now();
    while checked < 50 {
        tried += 1;
        ensure(tried < 2000, || format!("only {checked} usable kernels in {tried} draws"))?;
        let src = common::random_kernel(&mut rng, 24);
        let Ok(ir) = parse_kernel(&src) else { continue };
        let Ok(space) = build_space(&ir, 512) else { continue };
        if space.domain_size() > 1_000_000 {
            continue;
        }
        let cfg = PlatformConfig {
            dsp_available: [16, 64, 400][rng.gen_range(0..3)],
            mem_bytes: [192, 1024, 8192][rng.gen_range(0..3)],
            max_part: [8, 64][rng.gen_range(0..2)],
            tree_reduction: rng.gen_bool(0.3),
            reuse_opt: rng.gen_bool(0.7),
            ..PlatformConfig::default()
        };
        let pins = Pins::none(&space);
        let bf = brute_force(&space, &cfg, &pins).map_err(|e| format!("{e}\n{src}"))?;
        let bb = solve(&space, &cfg, &pins, &budget(60));
        let Some(want) = bf.best.as_ref().map(|b| b.evaluation.objective) else {
            ensure(matches!(&bb, Err(_)) || bb.as_ref().is_ok_and(|o| o.status == Status::Infeasible), || {
                format!("oracle says infeasible, solver disagrees\n{src}")
            })?;
            infeasible += 1;
            continue;
        };
        let bb = bb.map_err(|e| format!("{e}\n{src}"))?;
        let got = bb.best.as_ref().map(|b| b.evaluation.objective);
        ensure(bb.status == Status::Optimal && got == Some(want), || {
            format!("{} {:?} vs oracle {want}\n{src}{cfg:?}", bb.status.as_str(), got)
        })?;
        checked += 1;
    }
    Ok(format!("{checked} random kernels match exhaustive search ({infeasible} infeasible agreed, {:.1?})", started.elapsed()))
}

fn gemm_big_mem(space: &DesignSpace) -> Assignment {
    let mut a = Assignment::identity(space);
    a.bodies[0].tc = vec![[1, 1, 200], [55, 1, 4]];
    a.bodies[0].pip = vec![false, true];
    a.bodies[1].tc = vec![[1, 1, 200], [60, 1, 4], [1, 220, 1]];
    a.bodies[1].pip = vec![false, false, true];
    a
}

fn worked_arithmetic() -> Outcome {
    let space = common::space("gemm");
    let cfg = PlatformConfig::default();
    let a = gemm_big_mem(&space);
    ensure(a.bodies[0].tc[0].iter().product::<u64>() == 200, || "I0*I1*I2 != 200".into())?;
    let triples = factor_triples(200);
    ensure(triples.iter().all(|t| t[0] * t[1] * t[2] == 200), || "bad triple for 200".into())?;
    let ev = evaluate(&space, &cfg, &a);
    let c = space.arrays.iter().position(|x| x.name == "C").unwrap();
    let ap: u64 = ev.partition[c].iter().product();
    ensure(ev.partition[c] == vec![200, 4] && ap == 800 && ap <= cfg.max_part, || format!("AP of C {:?}", ev.partition[c]))?;
    ensure(ev.dsp_optimistic == 6400 && ev.dsp_pessimistic == 8800, || {
        format!("dsp {} / {}", ev.dsp_optimistic, ev.dsp_pessimistic)
    })?;
    let mut f = Assignment::identity(&space);
    f.bodies[1].tc = vec![[1, 200, 1], [48, 1, 5], [1, 1, 220]];
    f.bodies[1].perm = vec![1, 0, 2];
    let k = space.bodies[1].array_pos("A").unwrap();
    let elems = footprint(&space, 1, k, &f.bodies[1].tc, &f.bodies[1].perm, 1);
    ensure(elems == 200 * 240 / 48 && elems == 1000, || format!("footprint {elems}"))?;
    let burst = max_burst(20, 32, 512);
    let ir = parse_kernel("void b(float A[512][20]) { for (int i = 0; i < 512; i++) A[i][0] = A[i][1]; }").unwrap();
    let from_space = build_space(&ir, 512).unwrap().arrays[0].burst;
    ensure(burst == 128 && from_space == 128, || format!("burst {burst} / {from_space}"))?;
    Ok("200 = I0*I1*I2, AP 200*4 = 800 <= 1024, DSP 6400 vs 8800, footprint 1000, burst 128".into())
}

fn cache_points(space: &DesignSpace, a: &Assignment, body: usize) -> Vec<(String, Option<String>)> {
    let b = &space.bodies[body];
    let ba = &a.bodies[body];
    b.arrays
        .iter()
        .enumerate()
        .map(|(k, arr)| {
            let pos = ba.cache_pos(k);
            (arr.name.clone(), (pos > 0).then(|| b.loops[ba.perm[pos - 1]].iterator.clone()))
        })
        .collect()
}

fn gemm_structure() -> Outcome {
    let space = common::space("gemm");
    let mut notes = Vec::new();
    for (dsp, mem, deep) in [(2000u64, 320_000u64, true), (6840, 7_200_000, false)] {
        let cfg = PlatformConfig { dsp_available: dsp, mem_bytes: mem, ..PlatformConfig::default() };
        let out = solve(&space, &cfg, &Pins::none(&space), &budget(240)).map_err(|e| e.to_string())?;
        let best = out.best.ok_or("no solution")?;
        let sol = Solution::new(&space, &cfg, out.status.as_str(), &best.assignment, &best.evaluation);
        let verdict = verify_solution(&space, &cfg, &sol).map_err(|e| e.to_string())?;
        ensure(verdict.pass, || format!("verifier: {:?}", verdict.violations))?;
        ensure(best.evaluation.memory_bytes <= mem as u128, || "over memory".into())?;
        let s1 = space.body("S1").unwrap();
        let points: Vec<(String, Option<String>)> = (0..space.bodies.len()).flat_map(|b| cache_points(&space, &best.assignment, b)).collect();
        if deep {
            let inner = cache_points(&space, &best.assignment, s1);
            for name in ["A", "B"] {
                let at = inner.iter().find(|(n, _)| n == name).and_then(|(_, it)| it.clone());
                ensure(at.as_deref() == Some("k"), || format!("{name} cached at {at:?}, wanted inside k0"))?;
            }
        } else {
            ensure(points.iter().all(|(_, it)| it.is_none()), || format!("cache points {points:?}"))?;
        }
        notes.push(format!("dsp {dsp}: {} {} cycles", out.status.as_str(), best.evaluation.objective));
    }
    Ok(format!("A and B inside k0 at 320 kB, everything before the nest at 7.2 MB; {}", notes.join(", ")))
}

fn functional_equivalence() -> Outcome {
    if !common::have_cc() {
        return Err("no C compiler on PATH".into());
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = 0;
    for name in ["gemm", "two_mm", "bicg", "doitgen", "cnn_small", "coupled"] {
        let space = common::space(name);
        for tree in [false, true] {
            let cfg = PlatformConfig { tree_reduction: tree, ..PlatformConfig::default() };
            let out = solve(&space, &cfg, &Pins::none(&space), &budget(5)).map_err(|e| format!("{name}: {e}"))?;
            let best = out.best.ok_or_else(|| format!("{name}: no design"))?;
            let files = emit(&space, &cfg, &best.assignment).map_err(|e| e.to_string())?;
            let sub = dir.path().join(format!("{name}_{tree}"));
            std::fs::create_dir_all(&sub).unwrap();
            std::fs::write(sub.join(format!("{name}_opt.c")), &files.design).unwrap();
            std::fs::write(sub.join(format!("{name}_harness.c")), &files.harness).unwrap();
            common::run_harness(&sub, &format!("{name}_harness.c"), 1..11).map_err(|e| format!("{name} tree={tree}: {e}"))?;
            runs += 10;
        }
    }
    Ok(format!("{runs} harness runs pass (bit-exact without tree reduction, 1e-4 with it)"))
}

fn cardinalities() -> Outcome {
    let counts = [factor_triples(200).len(), factor_triples(4).len(), factor_triples(1).len()];
    ensure(counts == [60, 6, 1], || format!("d3 = {counts:?}"))?;
    let brute = |n: u64| (1..=n).flat_map(|a| (1..=n).map(move |b| (a, b))).filter(|(a, b)| n % (a * b) == 0).count();
    ensure(brute(200) == 60 && brute(4) == 6 && brute(1) == 1, || "brute-force d3 disagrees".into())?;
    let space = common::space("cnn");
    let b = &space.bodies[0];
    ensure(b.fully_permutable && b.perms.len() == 720, || format!("cnn perms {}", b.perms.len()))?;
    let distinct: BTreeSet<&Vec<usize>> = b.perms.iter().collect();
    ensure(distinct.len() == 720, || "duplicate permutations".into())?;
    Ok("d3(200)=60, d3(4)=6, d3(1)=1, CNN level-0 orders 720".into())
}

fn constraint_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut feasible = 0;
    let mut total = 0;
    let mut scaled = 0;
    for name in common::CORPUS {
        let space = common::space(name);
        let cfg = PlatformConfig { dsp_available: 2000, mem_bytes: 320_000, ..PlatformConfig::default() };
        for _ in 0..1000 {
            let a = random_assignment(&space, &mut |n| rng.gen_range(0..n));
            let ev = evaluate(&space, &cfg, &a);
            let (found, re) = check_assignment(&space, &cfg, &a);
            total += 1;
            ensure(ev.feasible() == found.is_empty(), || format!("{name}: model {:?} vs verifier {:?}", ev.violations, found))?;
            if let Some(re) = &re {
                ensure(re.objective == ev.objective, || format!("{name}: objective {} vs {}", re.objective, ev.objective))?;
            }
            ensure(ev.dsp_optimistic <= ev.dsp_pessimistic, || format!("{name}: optimistic above pessimistic"))?;
            if !ev.feasible() {
                continue;
            }
            feasible += 1;
            for (b, (body, ba)) in space.bodies.iter().zip(&a.bodies).enumerate() {
                for k in 0..body.arrays.len() {
                    let f: Vec<u64> = (0..body.positions()).map(|p| footprint(&space, b, k, &ba.tc, &ba.perm, p)).collect();
                    ensure(f.windows(2).all(|w| w[1] <= w[0]), || format!("{name}/{}: footprints {f:?}", body.id))?;
                }
                let be = &ev.bodies[b];
                let tiles: u128 = ba.tc.iter().zip(&ba.uf).map(|(t, u)| (t[0] / u) as u128).product();
                ensure(be.lat0 == tiles * be.lat1, || format!("{name}/{}: lat0 {} != {tiles} * {}", body.id, be.lat0, be.lat1))?;
                // undoing one loop's unrolling multiplies lat0 by exactly its factor
                for l in (0..body.loops.len()).filter(|l| ba.uf[*l] > 1) {
                    let mut rolled = a.clone();
                    rolled.bodies[b].uf[l] = 1;
                    let slow = evaluate(&space, &cfg, &rolled).bodies[b].lat0;
                    ensure(slow == be.lat0 * ba.uf[l] as u128, || format!("{name}/{}: uf {} gives {} vs {slow}", body.id, ba.uf[l], be.lat0))?;
                    scaled += 1;
                }
            }
        }
    }
    ensure(scaled > 0, || "no feasible point unrolled a loop".into())?;
    Ok(format!("{total} random points, {feasible} feasible, {scaled} unroll rescalings: model and verifier agree, optimistic <= pessimistic, footprints shrink inward, lat0 scales with UF"))
}

fn legality_soundness() -> Outcome {
    let mut checked = 0;
    for name in common::CORPUS {
        let space = common::space(name);
        if space.kernel.total_iterations() > 4096 {
            continue;
        }
        let mut want = seeded_memory(&space.kernel, 11);
        run_ir(&space.kernel, &mut want).map_err(|e| e.0)?;
        let mut dist = seeded_memory(&space.kernel, 11);
        run_ir(&space.distributed, &mut dist).map_err(|e| e.0)?;
        compare(&space.kernel, &want, &dist, None).map_err(|e| format!("{name}: distribution changed results: {e}"))?;
        for body in &space.bodies {
            for perm in &body.perms {
                let ir = permute_band(&space.distributed, body.loops[0].id, perm).map_err(|e| e.0)?;
                let mut got = seeded_memory(&space.kernel, 11);
                run_ir(&ir, &mut got).map_err(|e| e.0)?;
                compare(&space.kernel, &want, &got, None).map_err(|e| format!("{name}/{} order {perm:?}: {e}", body.id))?;
                checked += 1;
            }
        }
    }
    let space = common::space("recurrence");
    let body = &space.bodies[0];
    ensure(body.perms == vec![vec![0, 1]], || format!("recurrence orders {:?}", body.perms))?;
    let swapped = permute_band(&space.distributed, body.loops[0].id, &[1, 0]).map_err(|e| e.0)?;
    let mut a = seeded_memory(&space.kernel, 11);
    let mut b = seeded_memory(&space.kernel, 11);
    run_ir(&space.distributed, &mut a).map_err(|e| e.0)?;
    run_ir(&swapped, &mut b).map_err(|e| e.0)?;
    ensure(compare(&space.kernel, &a, &b, None).is_err(), || "swapped recurrence gave identical results".into())?;
    Ok(format!("{checked} legal orders reproduce the original; (1,-1) interchange rejected and shown wrong"))
}

fn anytime() -> Outcome {
    let space = common::space("cnn");
    let cfg = PlatformConfig::default();
    let pins = Pins::none(&space);
    let run = |secs: u64| -> Result<(Status, u128, u64, Duration), String> {
        let out = solve(&space, &cfg, &pins, &budget(secs)).map_err(|e| e.to_string())?;
        let best = out.best.as_ref().ok_or_else(|| format!("no incumbent in {secs} s"))?;
        let sol = Solution::new(&space, &cfg, out.status.as_str(), &best.assignment, &best.evaluation);
        let verdict = verify_solution(&space, &cfg, &sol).map_err(|e| e.to_string())?;
        ensure(verdict.pass, || format!("{secs} s incumbent: {:?}", verdict.violations))?;
        Ok((out.status, best.evaluation.objective, out.nodes, out.wall_time))
    };
    let (s1, o1, ..) = run(1)?;
    let (s60, o60, n60, t60) = run(60)?;
    let (_, o120, ..) = run(120)?;
    ensure(o60 <= o1 && o120 <= o60, || format!("objective rose with budget: {o1} / {o60} / {o120}"))?;
    let detail = format!(
        "1 s: {} {o1}; 60 s: {} {o60} after {n60} nodes in {t60:.1?}; 120 s: {o120}; all verifier clean",
        s1.as_str(),
        s60.as_str()
    );
    ensure(s60 == Status::FeasibleTimeout, || format!("60 s run did not time out ({detail})"))?;
    Ok(detail)
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("oracle optimality", oracle_optimality),
        ("worked arithmetic", worked_arithmetic),
        ("gemm cache structure", gemm_structure),
        ("functional equivalence", functional_equivalence),
        ("design-space cardinality", cardinalities),
        ("constraint-suite properties", constraint_properties),
        ("legality soundness", legality_soundness),
        ("anytime behaviour", anytime),
    ];
    let handles: Vec<_> = criteria
        .into_iter()
        .map(|(name, f)| {
            let h = std::thread::spawn(move || {
                let t = Instant::now();
                (f(), t.elapsed())
            });
            (name, h)
        })
        .collect();
    let mut failed = 0;
    for (i, (name, h)) in handles.into_iter().enumerate() {
        let (res, took) = h.join().unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            (Err(format!("panicked: {}", msg.unwrap_or_default())), Duration::ZERO)
        });
        match res {
            Ok(msg) => println!("criterion {} PASS {name} ({took:.1?}): {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {} FAIL {name} ({took:.1?}): {msg}", i + 1);
            }
        }
    }
    println!("{} of 8 criteria pass", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
