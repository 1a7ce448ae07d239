//! Runs one desk-scale experiment on the synthetic corpus and prints the
//! segmentation and retrieval summary.
//!
//! `cargo run --release -p segaw-core --example desk -- [seed] [key=value ...]`

use segaw_core::experiment::{run_desk, DeskConfig};

fn parse<T: std::str::FromStr>(k: &str, v: &str) -> T {
    v.parse().unwrap_or_else(|_| {
        eprintln!("bad value for {k}: `{v}`");
        std::process::exit(2)
    })
}

fn main() {
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut cfg = DeskConfig::small(seed);
    for kv in args {
        let Some((k, v)) = kv.split_once('=') else {
            eprintln!("expected key=value, got `{kv}`");
            std::process::exit(2);
        };
        match k {
            "lambda" => cfg.train.lambda = parse(k, v),
            "iters" => cfg.train.outer_iterations = parse(k, v),
            "p1" => cfg.train.phase1_epochs = parse(k, v),
            "p2" => cfg.train.phase2_epochs = parse(k, v),
            "lr1" => cfg.train.lr_phase1 = parse(k, v),
            "lr2" => cfg.train.lr_phase2 = parse(k, v),
            "batch" => cfg.train.batch_size = parse(k, v),
            "mode" => cfg.train.mode = parse(k, v),
            "train" => cfg.synth.train_utterances = parse(k, v),
            "use_gas" => cfg.use_gas = parse(k, v),
            _ => {
                eprintln!("unknown key {k}");
                std::process::exit(2);
            }
        }
    }
    let start = std::time::Instant::now();
    let r = match run_desk(&cfg, &mut |l| eprintln!("[{:>6.1}s] {l}", start.elapsed().as_secs_f64())) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    };
    let greedy_nt = r.iterations.last().map_or(0.0, |m| m.greedy_nt);
    println!("true N/T {:.4}  learned N/T {:.4}", r.true_rate, greedy_nt);
    println!("F1 per iteration {:?}", r.f1_curve.iter().map(|f| (f * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    println!("F1 ssae {:.4} gas {:.4} random {:.4}", r.ssae_seg.f1, r.gas_seg.f1, r.random_seg.f1);
    println!(
        "MAP ssae {:.4} oracle {:.4} dtw {:.4} random {:.4}",
        r.map_ssae, r.map_oracle, r.map_dtw, r.map_random
    );
}
