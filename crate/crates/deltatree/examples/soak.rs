// One-off soak: extended linearizability + storm beyond acceptance scale.
use deltatree::oracle::{check_linearizable, merge_logs, OpKind, ThreadLog};
use deltatree::{DeltaParams, Universe};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::sync::Barrier;
use std::time::Instant;

fn main() {
    let runs = 20_000u64;
    let start = Instant::now();
    for run in 0..runs {
        let u = Universe::new(DeltaParams::new(7, 8).unwrap()).unwrap();
        let base = Instant::now();
        let mut rng = ChaCha12Rng::seed_from_u64(run.wrapping_mul(0x9E3779B9) + 1);
        let mut prefill_log = ThreadLog::new(99, base);
        for _ in 0..rng.random_range(0..6u32) {
            let key = rng.random_range(1..=8u64);
            prefill_log.run(OpKind::Insert, key, || u.insert(key));
        }
        let barrier = Barrier::new(3);
        let logs: Vec<ThreadLog> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..3u32)
                .map(|tid| {
                    let u = &u;
                    let barrier = &barrier;
                    let mut ops = Vec::new();
                    let mut trng = ChaCha12Rng::seed_from_u64(run.wrapping_mul(31) ^ tid as u64);
                    for _ in 0..8 {
                        ops.push((trng.random_range(0..3u32), trng.random_range(1..=8u64)));
                    }
                    s.spawn(move || {
                        let mut log = ThreadLog::new(tid, base);
                        barrier.wait();
                        for (kind, key) in ops {
                            match kind {
                                0 => log.run(OpKind::Insert, key, || u.insert(key)),
                                1 => log.run(OpKind::Delete, key, || u.delete(key)),
                                _ => log.run(OpKind::Search, key, || u.search(key)),
                            };
                            std::thread::yield_now();
                        }
                        log
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let mut all = vec![prefill_log];
        all.extend(logs);
        let history = merge_logs(all);
        if !check_linearizable(&history) {
            eprintln!(
                "RUN {run} NOT LINEARIZABLE:\n{}",
                deltatree::oracle::history_to_text(&history)
            );
            std::process::exit(1);
        }
        u.debug_validate();
        if run % 5000 == 0 {
            eprintln!("...{run} runs, {:.1}s", start.elapsed().as_secs_f64());
        }
    }
    eprintln!(
        "linearizability soak: {} runs OK in {:.1}s",
        runs,
        start.elapsed().as_secs_f64()
    );

    // Heavy storm across UBs.
    for (ub, kr) in [(7u64, 200u64), (7, 50_000), (127, 200), (127, 200_000)] {
        let u = Universe::new(DeltaParams::new(ub, 8).unwrap()).unwrap();
        let net = std::sync::atomic::AtomicI64::new(0);
        std::thread::scope(|s| {
            for t in 0..8u64 {
                let u = &u;
                let net = &net;
                s.spawn(move || {
                    let mut rng = ChaCha12Rng::seed_from_u64(t ^ ub ^ kr);
                    let mut local = 0i64;
                    for i in 0..100_000u32 {
                        let v = rng.random_range(1..=kr);
                        match rng.random_range(0..10u32) {
                            0..=3 => local += u.insert(v) as i64,
                            4..=7 => local -= u.delete(v) as i64,
                            _ => {
                                u.search(v);
                            }
                        }
                        if i % 256 == 0 {
                            std::thread::yield_now();
                        }
                    }
                    net.fetch_add(local, std::sync::atomic::Ordering::Relaxed);
                });
            }
        });
        u.debug_validate();
        let members = u.members();
        assert_eq!(
            members.len() as i64,
            net.load(std::sync::atomic::Ordering::Relaxed),
            "ub={ub} kr={kr}"
        );
        eprintln!(
            "storm ub={ub} range={kr}: {} members OK, stats {:?}",
            members.len(),
            u.stats()
        );
    }
    eprintln!("soak complete");
}
