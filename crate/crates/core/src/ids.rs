//! Identifier and timestamp generation.
//!
//! All ids are ULID strings, optionally prefixed (`cycle-…`, `rev-…`). A
//! generator either follows the wall clock with OS entropy, or runs from a
//! seed on a logical clock so that a whole pipeline run is reproducible.

use chrono::{DateTime, TimeZone, Utc};
use parking_lot::Mutex;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ulid::Ulid;

/// Start of the logical clock used by seeded generators (2025-01-01T00:00:00Z).
const LOGICAL_EPOCH_MS: i64 = 1_735_689_600_000;

#[derive(Debug)]
enum Clock {
    System,
    Logical { now_ms: i64 },
}

#[derive(Debug)]
struct State {
    clock: Clock,
    rng: ChaCha8Rng,
    last_ms: u64,
    last_random: u128,
}

/// Thread-safe source of monotonic ULIDs and timestamps.
#[derive(Debug)]
pub struct IdGenerator {
    seed: Option<u64>,
    state: Mutex<State>,
}

impl IdGenerator {
    /// Wall-clock timestamps, OS-seeded randomness.
    pub fn system() -> Self {
        Self {
            seed: None,
            state: Mutex::new(State {
                clock: Clock::System,
                rng: ChaCha8Rng::from_os_rng(),
                last_ms: 0,
                last_random: 0,
            }),
        }
    }

    /// Logical clock advancing one millisecond per reading, seeded randomness.
    /// Two generators built from the same seed produce identical sequences.
    pub fn seeded(seed: u64) -> Self {
        Self {
            seed: Some(seed),
            state: Mutex::new(State {
                clock: Clock::Logical {
                    now_ms: LOGICAL_EPOCH_MS,
                },
                rng: ChaCha8Rng::seed_from_u64(seed),
                last_ms: 0,
                last_random: 0,
            }),
        }
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn now(&self) -> DateTime<Utc> {
        let mut state = self.state.lock();
        Utc.timestamp_millis_opt(tick(&mut state.clock))
            .single()
            .unwrap_or_else(Utc::now)
    }

    /// Moves a logical clock past `t`, so a seeded generator reopened over
    /// existing data never reissues earlier timestamps. No-op on the wall clock.
    pub fn advance_past(&self, t: DateTime<Utc>) {
        let mut state = self.state.lock();
        if let Clock::Logical { now_ms } = &mut state.clock {
            *now_ms = (*now_ms).max(t.timestamp_millis() + 1);
        }
    }

    /// Next ULID. Strictly greater than every ULID this generator produced
    /// before, so ids sort in creation order.
    pub fn next_ulid(&self) -> Ulid {
        let mut state = self.state.lock();
        let ms = tick(&mut state.clock).max(0) as u64;
        let (ms, random) = if ms <= state.last_ms {
            (state.last_ms, state.last_random.wrapping_add(1) & RANDOM_MASK)
        } else {
            let hi = u128::from(state.rng.next_u64());
            let lo = u128::from(state.rng.next_u64());
            // keep headroom so monotonic increments do not overflow the 80 bits
            (ms, ((hi << 64) | lo) & (RANDOM_MASK >> 1))
        };
        state.last_ms = ms;
        state.last_random = random;
        Ulid::from_parts(ms, random)
    }

    pub fn next_id(&self) -> String {
        self.next_ulid().to_string()
    }

    pub fn next_prefixed(&self, prefix: &str) -> String {
        format!("{prefix}-{}", self.next_ulid())
    }

    /// Seeded generators hand out a fresh u64 for downstream seeding; system
    /// generators draw from entropy.
    pub fn next_u64(&self) -> u64 {
        self.state.lock().rng.next_u64()
    }
}

const RANDOM_MASK: u128 = (1u128 << 80) - 1;

fn tick(clock: &mut Clock) -> i64 {
    match clock {
        Clock::System => Utc::now().timestamp_millis(),
        Clock::Logical { now_ms } => {
            *now_ms += 1;
            *now_ms
        }
    }
}
