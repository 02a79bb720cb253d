//! Worker pool: one coordinator owns the falsifier and proposes
//! sequentially; `workers` threads evaluate samples concurrently and
//! report completions through a single queue.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use trajfals_core::falsify::{Evaluation, Falsifier, FalsifyError, Proposal};

/// Detects overlapping entries into the sampler (propose or feed).
#[derive(Debug, Default)]
pub struct SamplingGuard {
    active: AtomicBool,
    trips: AtomicUsize,
}

impl SamplingGuard {
    pub fn enter(&self) -> GuardToken<'_> {
        if self.active.swap(true, Ordering::SeqCst) {
            self.trips.fetch_add(1, Ordering::SeqCst);
            debug_assert!(false, "overlapping sampler access");
        }
        GuardToken(self)
    }

    pub fn trips(&self) -> usize {
        self.trips.load(Ordering::SeqCst)
    }
}

pub struct GuardToken<'a>(&'a SamplingGuard);

impl Drop for GuardToken<'_> {
    fn drop(&mut self) {
        self.0.active.store(false, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoolStats {
    pub callbacks: usize,
    pub max_in_flight: usize,
    pub guard_trips: usize,
    pub wall: Duration,
    /// Per-sample callback durations, indexed by sample index.
    pub sample_times: Vec<Duration>,
}

/// Drives `falsifier` to completion. Each element of `workers` is owned by
/// one thread and passed to `eval` for every sample that thread runs.
pub fn run_pool<W, E>(
    falsifier: &mut Falsifier<'_>,
    workers: Vec<W>,
    eval: E,
) -> Result<PoolStats, FalsifyError>
where
    W: Send,
    E: Fn(&mut W, &Proposal) -> Result<Evaluation, String> + Sync,
{
    let n_workers = workers.len().max(1);
    let guard = SamplingGuard::default();
    let started = Instant::now();
    let (job_tx, job_rx) = crossbeam_channel::unbounded::<Proposal>();
    let (res_tx, res_rx) =
        crossbeam_channel::unbounded::<(usize, Result<Evaluation, String>, Duration)>();
    let mut stats = PoolStats::default();
    let mut failure = None;

    thread::scope(|s| {
        for mut w in workers {
            let job_rx = job_rx.clone();
            let res_tx = res_tx.clone();
            let eval = &eval;
            s.spawn(move || {
                for p in job_rx {
                    let t0 = Instant::now();
                    let out = eval(&mut w, &p);
                    if res_tx.send((p.index, out, t0.elapsed())).is_err() {
                        break;
                    }
                }
            });
        }
        drop(job_rx);
        drop(res_tx);

        let mut in_flight = 0usize;
        let mut exhausted = false;
        loop {
            while !exhausted && in_flight < n_workers {
                let next = {
                    let _g = guard.enter();
                    falsifier.next()
                };
                match next {
                    Ok(Some(p)) => {
                        job_tx.send(p).expect("workers alive");
                        in_flight += 1;
                        stats.max_in_flight = stats.max_in_flight.max(in_flight);
                    }
                    Ok(None) => exhausted = true,
                    Err(e) => {
                        failure = Some(e);
                        exhausted = true;
                    }
                }
            }
            if in_flight == 0 {
                break;
            }
            let (index, out, took) = res_rx.recv().expect("workers alive");
            in_flight -= 1;
            stats.callbacks += 1;
            if stats.sample_times.len() <= index {
                stats.sample_times.resize(index + 1, Duration::ZERO);
            }
            stats.sample_times[index] = took;
            let _g = guard.enter();
            if let Err(e) = falsifier.complete(index, out) {
                failure.get_or_insert(e);
            }
        }
        drop(job_tx);
    });

    stats.wall = started.elapsed();
    stats.guard_trips = guard.trips();
    match failure {
        Some(e) => Err(e),
        None => Ok(stats),
    }
}

/// A fixed amount of arithmetic, sized once so it takes a given duration on
/// one otherwise idle thread. Concurrent copies compete for CPU time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticWork {
    pub rounds: u64,
}

const ROUND: u64 = 1000;

fn mix(rounds: u64, mut x: u64) -> u64 {
    for _ in 0..rounds {
        for i in 0..ROUND {
            x = x
                .wrapping_mul(6_364_136_223_846_793_005)
                .wrapping_add(i | 1);
        }
        x = std::hint::black_box(x);
    }
    x
}

impl SyntheticWork {
    /// Measures the arithmetic rate on the calling thread.
    pub fn calibrate(duration: Duration) -> Self {
        let probe = Duration::from_millis(50).min(duration.max(Duration::from_millis(1)));
        let start = Instant::now();
        let mut rounds = 0u64;
        let mut x = 0x9E37_79B9_7F4A_7C15u64;
        while start.elapsed() < probe {
            x = mix(16, x);
            rounds += 16;
        }
        std::hint::black_box(x);
        let rate = rounds as f64 / start.elapsed().as_secs_f64();
        SyntheticWork {
            rounds: (rate * duration.as_secs_f64()).round() as u64,
        }
    }

    pub fn run(&self) -> u64 {
        std::hint::black_box(mix(self.rounds, 0x9E37_79B9_7F4A_7C15))
    }
}
