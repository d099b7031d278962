//! Synthetic end-to-end benchmark with the default configuration.
//!
//! ```text
//! cargo run --release -p bbvel-core --example benchmark -- [train_samples] [epochs]
//! ```

use std::time::Instant;

use bbvel::benchmark::{run, BenchmarkConfig};

fn main() -> bbvel::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = BenchmarkConfig::default();
    if let Some(n) = args.first() {
        cfg.n_train = n.parse().expect("train_samples");
    }
    if let Some(e) = args.get(1) {
        cfg.train.epochs = e.parse().expect("epochs");
    }

    let t0 = Instant::now();
    let res = run(&cfg)?;
    println!(
        "fitted velocity mean {:?}, cov {:?}",
        res.fitted.vel_mean, res.fitted.vel_cov
    );
    println!("final training loss {:.4}, total {:.1?}", res.final_loss, t0.elapsed());
    print!("{}", res.table().to_text());
    println!("beats baseline (every bucket, overall x2): {}", res.beats_baseline(2.0));
    Ok(())
}
