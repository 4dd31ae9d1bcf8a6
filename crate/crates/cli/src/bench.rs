use griffin::bench::{bench_generation, random_block, write_csv, BenchRecord, BenchScenario};
use griffin::io::load_model;
use griffin::{ActivationKind, Result};
use serde::Serialize;

use crate::{out, BenchArgs};

#[derive(Serialize)]
struct Report<'a> {
    scenario: &'a BenchScenario,
    records: &'a [BenchRecord],
}

pub fn run(args: &BenchArgs) -> Result<()> {
    let mut scenario = BenchScenario {
        prompt_len: args.partition.0,
        gen_len: args.partition.1,
        dim: args.dim,
        d_ff: args.d_ff,
        sparsities: args.sparsity.clone(),
        repeats: args.repeats,
        warmup: args.warmup,
        threads: args.threads,
        activation: ActivationKind::Silu,
        glu: args.glu,
        seed: args.common.seed,
    };
    let block = match &args.model {
        Some(path) => {
            let model = load_model(path)?;
            let block = model.layers()[0].block.clone();
            scenario.dim = block.dim();
            scenario.d_ff = block.d_ff();
            scenario.glu = block.is_glu();
            scenario.activation = block.activation();
            block
        }
        None => {
            scenario.validate()?;
            random_block(&scenario)?
        }
    };
    let records = bench_generation(&scenario, &block)?;
    let dir = out::prepare(&args.common.out)?;
    write_csv(&dir.join("bench.csv"), &records)?;
    out::json(
        &dir.join("bench.json"),
        &Report {
            scenario: &scenario,
            records: &records,
        },
    )
}
