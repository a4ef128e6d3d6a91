//! Runs the 8-ring experiment at the defaults across several seeds and
//! reports coverage, for checking the headline configuration end to end.

use ldagan::data::{ring_spec, sample_mixture};
use ldagan::special_math::RngStream;
use ldagan::trainer::{train, TrainConfig};

fn main() {
    let seeds: Vec<u64> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let seeds = if seeds.is_empty() { vec![0, 1, 2, 3, 4] } else { seeds };
    let dataset = sample_mixture(&ring_spec(8, 2.0, 0.08), 10_000, &mut RngStream::new(42));
    let mut passes = 0;
    for &seed in &seeds {
        let cfg = TrainConfig { seed, ..TrainConfig::default() };
        let start = std::time::Instant::now();
        let (_, records) = train(&cfg, &dataset).expect("training diverged");
        let last = records.last().expect("no metrics");
        let modes = last.modes_covered.unwrap_or(0);
        let hq = last.hq_ratio.unwrap_or(0.0);
        let ok = modes == 8 && hq >= 0.75;
        passes += ok as u32;
        println!(
            "seed {seed}: modes {modes}/8  hq {hq:.4}  entropy {:.3}  alpha[0] {:.3}  {:.1}s  {}",
            last.usage_entropy.unwrap_or(f64::NAN),
            last.alpha[0],
            start.elapsed().as_secs_f64(),
            if ok { "PASS" } else { "FAIL" }
        );
    }
    println!("{passes}/{} seeds passed", seeds.len());
}
