//! Build row-shuffled copies of a dataset and compare their training losses
//! after a short run. Training is insensitive to body-row order, so the
//! copies reach the same loss.
//!
//! cargo run --release --example reorder_study -- [steps]

use seqset::data::{datagen, reorder_study, RunConfig, SynthSpec};
use seqset::pipeline::train_run;

fn main() -> seqset::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let d = datagen(&SynthSpec {
        n_instances: 200,
        ..SynthSpec::default()
    })?;
    let mut config = RunConfig::default();
    config.train.max_steps = steps;
    config.train.eval_every = 0;
    config.valid_size = 20;
    let seeds = [1, 2, 3];
    let copies = reorder_study(&d, &seeds);
    println!("original: {}", d.tables[0].body.iter().map(|r| r[0].as_str()).collect::<Vec<_>>().join(", "));
    for (seed, copy) in seeds.iter().zip(&copies) {
        let first: Vec<&str> = copy.tables[0].body.iter().map(|r| r[0].as_str()).collect();
        let (_, report) = train_run(&config, copy, None)?;
        let last = report.log.last().expect("at least one step");
        println!("seed {seed}: {} | final loss {:.6}, validation {:?}", first.join(", "), last.total, report.validations.last());
    }
    Ok(())
}
