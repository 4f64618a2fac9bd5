//! Pretrained versus from-scratch Small on the synthetic task for one seed.
//!
//! cargo run --release -p d2t-core --example transfer -- [SEED] [PRETRAIN_STEPS]

use std::time::Instant;

use d2t_core::experiment::*;
use d2t_core::seq2seq::SizeTag;
use d2t_core::train::Start;

fn main() {
    let seed: u64 = std::env::args().nth(1).map_or(0, |s| s.parse().unwrap());
    let mut cfg = TransferConfig::new(seed);
    if let Some(n) = std::env::args().nth(2) {
        cfg.pretrain_steps = n.parse().unwrap();
    }
    let t = Instant::now();
    let data = prepare(&cfg).unwrap();
    println!("prepared in {:?}, vocab {}", t.elapsed(), data.vocab.len());
    let t = Instant::now();
    let pre = pretrain_model(&cfg, &data, SizeTag::Small).unwrap();
    println!("pretrained in {:?}", t.elapsed());
    let t = Instant::now();
    let a = finetune_and_test(&cfg, &data, Start::Checkpoint(&pre)).unwrap();
    println!("pretrained+ft {a:?} in {:?}", t.elapsed());
    let t = Instant::now();
    let b = finetune_and_test(&cfg, &data, Start::Fresh(model_config(&cfg, &data, SizeTag::Small))).unwrap();
    println!("scratch {b:?} in {:?}", t.elapsed());
}
