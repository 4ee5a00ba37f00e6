//! Built-in workload generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cell::gen_uniform_word;
use crate::device::Geometry;
use crate::host::{TraceEvent, TraceLine};

/// Stream reserved for payload generation, so the trace and the deletion
/// unit draw from independent streams of the same seed.
const PAYLOAD_STREAM: u64 = 1;

/// `n` cache lines with uniform random payloads. Each line is written and
/// flushed; with probability `update_ratio` it is then updated, which
/// invalidates the flushed copy. One tick passes between lines and a final
/// flush closes the trace.
pub fn synthetic_trace(n: usize, update_ratio: f64, geometry: &Geometry, seed: u64) -> Vec<TraceLine> {
    let ratio = update_ratio.clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PAYLOAD_STREAM);
    let payload = |rng: &mut ChaCha8Rng| gen_uniform_word(geometry.cells_per_slot, geometry.bits, rng);
    let mut events = Vec::with_capacity(n * 4 + 1);
    for i in 0..n as u64 {
        events.push(TraceEvent::Write(i, payload(&mut rng)));
        events.push(TraceEvent::Flush);
        if rng.gen_bool(ratio) {
            events.push(TraceEvent::Update(i, payload(&mut rng)));
        }
        events.push(TraceEvent::Tick(1));
    }
    events.push(TraceEvent::Flush);
    events
        .into_iter()
        .enumerate()
        .map(|(i, event)| TraceLine { line: i + 1, event })
        .collect()
}
