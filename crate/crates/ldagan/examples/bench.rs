//! Wall-clock probe: times default-config training steps and extrapolates.

use ldagan::data::{ring_spec, sample_mixture};
use ldagan::special_math::RngStream;
use ldagan::trainer::{init_state, train_step, TrainConfig};

fn main() {
    let iters: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let cfg = TrainConfig::default();
    let dataset = sample_mixture(&ring_spec(8, 2.0, 0.08), 10_000, &mut RngStream::new(42));
    let mut state = init_state(&cfg).unwrap();
    let start = std::time::Instant::now();
    for _ in 0..iters {
        let (next, _) = train_step(state, &dataset).unwrap();
        state = next;
    }
    let elapsed = start.elapsed().as_secs_f64();
    let per_iter = elapsed / iters as f64;
    println!(
        "{iters} iters in {elapsed:.2}s  ({:.2} ms/iter, {:.1}s per 10k)",
        per_iter * 1e3,
        per_iter * 10_000.0
    );
}
