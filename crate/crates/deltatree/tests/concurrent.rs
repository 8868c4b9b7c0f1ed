//! Concurrency stress: mixed workloads across container sizes, with
//! quiescence validation and accounting cross-checks after the storm.

use std::sync::atomic::{AtomicI64, Ordering};

use deltatree::{DeltaParams, Universe};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn storm(ub: u64, threads: usize, ops_per_thread: u32, key_range: u64, seed: u64) {
    let u = Universe::new(DeltaParams::new(ub, threads.max(4)).unwrap()).unwrap();
    let net = AtomicI64::new(0);
    std::thread::scope(|s| {
        for t in 0..threads as u64 {
            let u = &u;
            let net = &net;
            s.spawn(move || {
                let mut rng = ChaCha12Rng::seed_from_u64(seed ^ (t + 1));
                let mut local = 0i64;
                for i in 0..ops_per_thread {
                    let v = rng.random_range(1..=key_range);
                    match rng.random_range(0..10u32) {
                        0..=3 => local += u.insert(v) as i64,
                        4..=7 => local -= u.delete(v) as i64,
                        _ => {
                            u.search(v);
                        }
                    }
                    if i % 64 == 0 {
                        std::thread::yield_now();
                    }
                }
                net.fetch_add(local, Ordering::Relaxed);
            });
        }
    });
    u.debug_validate();
    let members = u.members();
    assert_eq!(
        members.len() as i64,
        net.load(Ordering::Relaxed),
        "net successful updates must equal final membership"
    );
    assert_eq!(u.len_estimate(), members.len() as u64);
    assert!(members.iter().all(|&v| v >= 1 && v <= key_range));
    assert!(
        members.windows(2).all(|w| w[0] < w[1]),
        "members sorted, unique"
    );
}

#[test]
fn storm_tiny_containers_high_contention() {
    storm(7, 4, 5_000, 64, 0xDEAD);
}

#[test]
fn storm_tiny_containers_wide_keyspace() {
    storm(7, 4, 5_000, 10_000, 0xBEEF);
}

#[test]
fn storm_page_sized_containers() {
    storm(127, 4, 10_000, 50_000, 0xF00D);
}

#[test]
fn storm_two_threads_repeated() {
    for seed in 0..20u64 {
        storm(7, 2, 1_500, 16, seed);
    }
}

#[test]
fn concurrent_growth_preserves_every_inserted_key() {
    // Disjoint key ranges per thread: every inserted key must be present
    // at the end, every never-inserted key absent.
    let u = Universe::new(DeltaParams::new(7, 8).unwrap()).unwrap();
    let per_thread = 3_000u64;
    std::thread::scope(|s| {
        for t in 0..4u64 {
            let u = &u;
            s.spawn(move || {
                let base = t * per_thread;
                let mut keys: Vec<u64> = (1..=per_thread).map(|i| base + i).collect();
                use rand::seq::SliceRandom;
                keys.shuffle(&mut ChaCha12Rng::seed_from_u64(t));
                for (i, &k) in keys.iter().enumerate() {
                    assert!(u.insert(k), "insert {k}");
                    if i % 128 == 0 {
                        std::thread::yield_now();
                    }
                }
            });
        }
    });
    u.debug_validate();
    let members = u.members();
    assert_eq!(members.len() as u64, 4 * per_thread);
    assert_eq!(members, (1..=4 * per_thread).collect::<Vec<u64>>());
    assert!(!u.search(4 * per_thread + 1));
}

#[test]
fn deleters_and_inserters_on_shared_keys() {
    // Heavy same-key contention: for every key, successful deletes can
    // never outnumber successful inserts.
    let u = Universe::new(DeltaParams::new(7, 8).unwrap()).unwrap();
    let keys: Vec<u64> = (1..=8).collect();
    let balance: Vec<AtomicI64> = keys.iter().map(|_| AtomicI64::new(0)).collect();
    std::thread::scope(|s| {
        for t in 0..4u64 {
            let u = &u;
            let balance = &balance;
            let keys = &keys;
            s.spawn(move || {
                let mut rng = ChaCha12Rng::seed_from_u64(t + 100);
                for _ in 0..4_000 {
                    let i = rng.random_range(0..keys.len());
                    if rng.random_bool(0.5) {
                        if u.insert(keys[i]) {
                            balance[i].fetch_add(1, Ordering::Relaxed);
                        }
                    } else if u.delete(keys[i]) {
                        balance[i].fetch_sub(1, Ordering::Relaxed);
                    }
                }
            });
        }
    });
    u.debug_validate();
    let members = u.members();
    for (i, &k) in keys.iter().enumerate() {
        let b = balance[i].load(Ordering::Relaxed);
        assert!(
            b == 0 || b == 1,
            "key {k}: net successful inserts {b} out of [0, 1]"
        );
        assert_eq!(members.contains(&k), b == 1, "key {k} presence");
    }
}
