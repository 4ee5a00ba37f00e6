//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nvm_ddn::cell::{self, available_levels, encode_level, gen_upward_random, BitsPerCell, CellLevel, DataWord};
use nvm_ddn::config::{OutputFormat, RunConfig};
use nvm_ddn::controller::{BasePolicy, DeletionPolicy, InvalidationRequest, NvmController, RequestKind};
use nvm_ddn::device::{DeviceError, DeviceKind, Geometry, LatencyParams, NvmDevice, PhysAddr};
use nvm_ddn::host::{parse_trace, TraceLine};
use nvm_ddn::run::{run, Simulation};
use nvm_ddn::synthetic::synthetic_trace;
use nvm_ddn::FillKind;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    check(took < limit, format!("took {took:?}, limit {limit:?}"))
}

fn b3() -> BitsPerCell {
    BitsPerCell::new(3).unwrap()
}

/// Available overwrites of '100' are exactly the three higher states, and
/// '111' is kept.
fn upward_generation() -> Outcome {
    let start = Instant::now();
    let bits = b3();
    let s5 = cell::decode_bits("100", bits).unwrap();
    let avail: BTreeSet<String> =
        available_levels(s5, bits).unwrap().into_iter().map(|l| encode_level(l, bits).unwrap()).collect();
    let expected: BTreeSet<String> = ["101", "110", "111"].iter().map(|s| s.to_string()).collect();
    check(avail == expected, format!("available set {avail:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(2017);
    let mut seen = BTreeSet::new();
    for _ in 0..100_000 {
        let bits_out = encode_level(gen_upward_random(s5, bits, &mut rng).unwrap(), bits).unwrap();
        check(expected.contains(&bits_out), format!("drew {bits_out}"))?;
        seen.insert(bits_out);
    }
    check(seen == expected, format!("only saw {seen:?}"))?;
    let s8 = cell::decode_bits("111", bits).unwrap();
    for _ in 0..100_000 {
        check(gen_upward_random(s8, bits, &mut rng).unwrap() == s8, "'111' was not maintained")?;
    }
    within(start, Duration::from_secs(1))?;
    Ok(format!("available('100') = {avail:?}; 2x10^5 draws in {:?}", start.elapsed()))
}

fn flush_then_update_trace(n: u64, config: &RunConfig, update: bool) -> Vec<TraceLine> {
    let g = &config.geometry;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut text = String::new();
    for i in 0..n {
        let p = cell::gen_uniform_word(g.cells_per_slot, g.bits, &mut rng).to_hex();
        let q = cell::gen_uniform_word(g.cells_per_slot, g.bits, &mut rng).to_hex();
        let delete = if update { format!("U {i} {q}") } else { format!("I {i}") };
        text += &format!("W {i} {p}\nF\n{delete}\nT 1\n");
    }
    parse_trace(&text, g).unwrap()
}

/// Mean per-deletion cost: DDN exactly 49 + 100 + 600, erase at least 4000.
fn deletion_costs() -> Outcome {
    let start = Instant::now();
    let mut config = RunConfig::default();
    config.policies = vec![BasePolicy::DdnRandom, BasePolicy::EraseBased];
    let oracle_ddn = 49 + 100 + 600;
    check(oracle_ddn == 749, "oracle")?;

    let trace = flush_then_update_trace(100, &config, true);
    let report = run(&config, &trace).map_err(|e| e.to_string())?;
    let ddn = report.table.row("DdnRandom").unwrap();
    let erase = report.table.row("EraseBased").unwrap();
    check(ddn.deletions == 100 && erase.deletions == 100, format!("deletions {} / {}", ddn.deletions, erase.deletions))?;
    check(ddn.total_us == 100 * oracle_ddn, format!("DDN total {}", ddn.total_us))?;
    check((ddn.rd, ddn.wr, ddn.gen, ddn.erase, ddn.gc) == (49.0, 600.0, 100.0, 0.0, 0.0), format!("DDN row {ddn:?}"))?;
    check(erase.total_us >= 100 * 4000, format!("erase total {}", erase.total_us))?;
    check(erase.erase == 4000.0, format!("erase column {}", erase.erase))?;
    check(ddn.mean_total() < erase.mean_total(), "DDN is not cheaper than erase")?;

    // Victim blocks with no valid pages: erase cost is exactly t_erase.
    let empty_victims = flush_then_update_trace(100, &config, false);
    let report2 = run(&config, &empty_victims).map_err(|e| e.to_string())?;
    let erase2 = report2.table.row("EraseBased").unwrap();
    check(erase2.deletions == 100 && erase2.total_us == 100 * 4000, format!("empty-victim erase {erase2:?}"))?;
    check(report2.table.row("DdnRandom").unwrap().total_us == 100 * oracle_ddn, "DDN on I-trace")?;
    within(start, Duration::from_secs(1))?;
    Ok(format!(
        "DDN mean {:.1} us, erase mean {:.1} us (empty victims {:.1} us)",
        ddn.mean_total(),
        erase.mean_total(),
        erase2.mean_total()
    ))
}

/// Final remanence rate for 10^4 uniform-payload deletions.
fn residual_remanence() -> Outcome {
    let start = Instant::now();
    let mut config = RunConfig::default();
    // Every line's final version stays live, so the device must hold 10^4
    // valid slots on top of the dead ones.
    config.geometry.blocks = 256;
    let bits = config.geometry.bits;
    // Analytic oracle: the fraction of levels with no higher level.
    let oracle = (0..bits.states())
        .filter(|&l| available_levels(CellLevel::new(l, bits).unwrap(), bits).unwrap().is_empty())
        .count() as f64
        / f64::from(bits.states());
    check(oracle == 0.125, format!("oracle {oracle}"))?;
    let trace = synthetic_trace(10_000, 1.0, &config.geometry, 11);
    let report = run(&config, &trace).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    for row in &report.table.rows {
        check(row.deletions == 10_000, format!("{} deletions {}", row.policy, row.deletions))?;
        let ok = match row.policy.as_str() {
            "MarkOnly" => row.remanence == 1.0,
            "EraseBased" => row.remanence == 0.0,
            _ => (row.remanence - oracle).abs() <= 0.01,
        };
        check(ok, format!("{} remanence {}", row.policy, row.remanence))?;
        parts.push(format!("{}={:.4}", row.policy, row.remanence));
    }
    within(start, Duration::from_secs(10))?;
    Ok(parts.join(", "))
}

fn random_word(rng: &mut ChaCha8Rng, g: &Geometry) -> DataWord {
    cell::gen_uniform_word(g.cells_per_slot, g.bits, rng)
}

fn snapshot(d: &NvmDevice) -> Vec<Vec<Vec<u8>>> {
    d.blocks()
        .iter()
        .map(|b| b.pages().iter().map(|p| p.cells().iter().map(|c| c.value()).collect()).collect())
        .collect()
}

/// No cell level decreases on a non-overwritable device except in a block
/// that the operation erased.
fn monotonicity_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = Geometry { blocks: 3, pages_per_block: 2, cells_per_page: 4, bits: b3(), cells_per_slot: 2 };
    let mut ops = 0usize;
    for seq in 0..10_000 {
        let mut d = NvmDevice::new(DeviceKind::NonOverwritable, g, LatencyParams::default(), 4).unwrap();
        let mut next_id = 0u64;
        for _ in 0..rng.gen_range(5..30) {
            let before = snapshot(&d);
            let erases: Vec<u64> = (0..g.blocks).map(|b| d.erase_count(b).unwrap()).collect();
            let addr = PhysAddr {
                block: rng.gen_range(0..g.blocks),
                page: rng.gen_range(0..g.pages_per_block),
                slot: rng.gen_range(0..g.slots_per_page()),
            };
            let result = match rng.gen_range(0..8) {
                0 | 1 => d.program_slot(addr, &random_word(&mut rng, &g)),
                2 => {
                    let cur = d.peek_slot(addr).unwrap();
                    d.partial_program(addr, &cell::gen_upward_word(&cur, &mut rng))
                }
                3 => d.read_slot(addr).map(|_| ()),
                4 => {
                    next_id += 1;
                    d.write_new(next_id, &random_word(&mut rng, &g), 0).map(|_| ())
                }
                5 => {
                    let id = rng.gen_range(0..=next_id);
                    d.set_valid_bit(id, false, 1).or_else(|e| match e {
                        DeviceError::UnknownCacheId(_) => Ok(()),
                        other => Err(other),
                    })
                }
                6 => d.garbage_collect(addr.block).map(|_| ()),
                _ => d.erase_block(addr.block),
            };
            match result {
                Ok(())
                | Err(DeviceError::MonotoneViolation { .. })
                | Err(DeviceError::NopExceeded { .. })
                | Err(DeviceError::NvmFull)
                | Err(DeviceError::NoFreePages { .. }) => {}
                Err(e) => return Err(format!("sequence {seq}: unexpected {e}")),
            }
            let after = snapshot(&d);
            for b in 0..g.blocks {
                if d.erase_count(b).unwrap() != erases[b] {
                    continue;
                }
                for (p, (old, new)) in before[b].iter().zip(&after[b]).enumerate() {
                    if let Some(c) = old.iter().zip(new).position(|(o, n)| n < o) {
                        return Err(format!("sequence {seq}: block {b} page {p} cell {c} decreased"));
                    }
                }
            }
            ops += 1;
        }
    }
    within(start, Duration::from_secs(30))?;
    Ok(format!("10^4 sequences, {ops} operations, no decrease outside erase"))
}

/// Deleting one slot of a multi-slot page leaves every other slot
/// untouched.
fn partial_overwrite_isolation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let policies = [BasePolicy::DdnRandom, BasePolicy::DdnNonRandom(FillKind::AllMax)];
    for case in 0..1_000 {
        let slots = rng.gen_range(2..=4);
        let cells_per_slot = rng.gen_range(1..=8);
        let bits = BitsPerCell::new(rng.gen_range(1..=4)).unwrap();
        let g = Geometry { blocks: 2, pages_per_block: 1, cells_per_page: slots * cells_per_slot, bits, cells_per_slot };
        let kind = if rng.gen_bool(0.75) { DeviceKind::NonOverwritable } else { DeviceKind::Overwritable };
        let nop = 2 * slots as u32;
        let device = NvmDevice::new(kind, g, LatencyParams::default(), nop).unwrap();
        let policy = policies[rng.gen_range(0..policies.len())];
        let mut c = NvmController::new(device, DeletionPolicy::new(policy), rng.gen()).unwrap();
        for id in 0..slots as u64 {
            let w = random_word(&mut rng, &g);
            let at = c.flush(id, &w, 0).map_err(|e| e.to_string())?.addr;
            check(at.block == 0 && at.page == 0, format!("case {case}: slot {id} placed at {at}"))?;
        }
        let victim = rng.gen_range(0..slots as u64);
        let before: Vec<DataWord> = (0..slots).map(|s| c.device().peek_slot(PhysAddr { block: 0, page: 0, slot: s }).unwrap()).collect();
        let out = c
            .handle_invalidation(InvalidationRequest { cache_id: victim, kind: RequestKind::Invalidate, issued_at: 0 }, 1)
            .map_err(|e| e.to_string())?;
        check(out.fallback.is_none() && out.error.is_none(), format!("case {case}: {out:?}"))?;
        for s in 0..slots {
            let now = c.device().peek_slot(PhysAddr { block: 0, page: 0, slot: s }).unwrap();
            if s as u64 != victim {
                check(now == before[s], format!("case {case}: neighbour slot {s} changed"))?;
                check(c.is_valid(s as u64), format!("case {case}: neighbour {s} invalid"))?;
            }
        }
    }
    Ok("10^3 pages, every co-located slot bit-identical".into())
}

/// Entries written at tick 0 stay valid through tick 9 and are scrubbed at
/// tick 10.
fn secure_mode_scrub() -> Outcome {
    let mut config = RunConfig::default();
    config.t_secure = Some(10);
    config.flush_idle_threshold = 1000;
    config.policies = vec![BasePolicy::DdnRandom];
    let g = config.geometry;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let max = cell::gen_fill_word(FillKind::AllMax, g.cells_per_slot, g.bits).unwrap();
    let mut payloads = vec![max.clone()];
    payloads.extend((0..6).map(|_| random_word(&mut rng, &g)));
    let mut text = String::new();
    for (id, p) in payloads.iter().enumerate() {
        text += &format!("W {id} {}\n", p.to_hex());
    }
    text += "F\n";
    text += &"T 1\n".repeat(10);
    let trace = parse_trace(&text, &g).unwrap();
    let mut sim = Simulation::new(&config, BasePolicy::DdnRandom).map_err(|e| e.to_string())?;
    let ids = 0..payloads.len() as u64;
    let mut flushed = false;
    for line in &trace {
        sim.step(line).map_err(|e| e.to_string())?;
        flushed |= line.event == nvm_ddn::TraceEvent::Flush;
        let now = sim.host().now();
        let table = sim.host().controller().device().table();
        if flushed && now < 10 {
            check(ids.clone().all(|id| table.is_valid(id)), format!("entry invalid at tick {now}"))?;
            check(sim.ledger().deletion_count() == 0, format!("scrub before tick 10 (tick {now})"))?;
        }
    }
    check(sim.host().now() == 10, "clock")?;
    let table = sim.host().controller().device().table();
    check(ids.clone().all(|id| !table.is_valid(id)), "entries still valid at tick 10")?;
    let records = sim.ledger().records();
    check(records.len() == payloads.len(), format!("{} scrubs", records.len()))?;
    for r in records {
        check(r.tick == 10, format!("scrub at tick {}", r.tick))?;
        let all_max = payloads[r.cache_id as usize] == max;
        let ok = if all_max { r.residual_cells == r.slot_cells } else { r.residual_cells < r.slot_cells };
        check(ok, format!("cache {} residual {}/{}", r.cache_id, r.residual_cells, r.slot_cells))?;
    }
    Ok(format!("{} entries valid through tick 9, scrubbed at tick 10", payloads.len()))
}

/// Identical runs give byte-identical CSV and JSON-lines output.
fn determinism() -> Outcome {
    let config = RunConfig { seed: 77, ..RunConfig::default() };
    let trace = synthetic_trace(500, 0.7, &config.geometry, config.seed);
    let a = run(&config, &trace).map_err(|e| e.to_string())?;
    let b = run(&config, &trace).map_err(|e| e.to_string())?;
    for f in [OutputFormat::Csv, OutputFormat::Jsonl] {
        check(a.render(f).as_bytes() == b.render(f).as_bytes(), format!("{f} output differs"))?;
    }
    Ok(format!(
        "csv {} bytes, jsonl {} bytes identical",
        a.render(OutputFormat::Csv).len(),
        a.render(OutputFormat::Jsonl).len()
    ))
}

/// Field-study remanence and real device timing are substituted by the
/// analytic remanence oracle and a parameterized ledger. Checks that the
/// ledger follows arbitrary latency parameters.
fn substitutions() -> Outcome {
    let mut config = RunConfig::default();
    config.latency = LatencyParams { t_read: 7, t_program: 300, t_gen: 11, t_erase: 2500 };
    config.policies = vec![BasePolicy::DdnRandom, BasePolicy::EraseBased];
    let trace = flush_then_update_trace(20, &config, false);
    let report = run(&config, &trace).map_err(|e| e.to_string())?;
    check(report.table.row("DdnRandom").unwrap().total_us == 20 * (7 + 11 + 300), "DDN ledger")?;
    check(report.table.row("EraseBased").unwrap().total_us == 20 * 2500, "erase ledger")?;
    Ok("field remanence study -> criterion 3 oracle; device timing -> parameterized ledger".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 available-state generation", upward_generation),
        ("2 deletion cost", deletion_costs),
        ("3 residual remanence", residual_remanence),
        ("4 monotonicity property suite", monotonicity_suite),
        ("5 partial-overwrite isolation", partial_overwrite_isolation),
        ("6 secure-mode scrub boundary", secure_mode_scrub),
        ("7 determinism", determinism),
        ("8 substituted measurements", substitutions),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        match f() {
            Ok(detail) => println!("PASS criterion {name} ({:?}): {detail}", start.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
