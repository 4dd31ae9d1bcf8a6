use griffin::io::{load_model, read_tokens};
use griffin::sim::{batched_perplexity, corpus_perplexity, Batching, EvalConfig, Method, SimulationPartition};
use griffin::{GriffinError, Result, SparsityConfig};
use serde::Serialize;

use crate::{out, BatchArg, SimulateArgs};

#[derive(Serialize)]
struct Record {
    method: Method,
    sparsity: f64,
    #[serde(rename = "P")]
    prompt_len: usize,
    #[serde(rename = "G")]
    gen_len: usize,
    /// Sequences sharing one expert set; absent when each selects its own.
    batch: Option<String>,
    ppl: f64,
    ppl_full: f64,
}

pub fn run(args: &SimulateArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let seqs = read_tokens(&args.tokens)?;
    let shortest = seqs
        .iter()
        .map(Vec::len)
        .min()
        .ok_or_else(|| GriffinError::invalid("token file holds no sequences"))?;
    let (p, g) = match args.partition {
        Some(pg) => pg,
        None => {
            let half = shortest.saturating_sub(1) / 2;
            (half, half)
        }
    };
    let partition = SimulationPartition::new(p, g)?;
    if shortest < partition.total() + 1 {
        return Err(GriffinError::invalid(format!(
            "P={p} G={g} needs sequences of at least {} tokens, shortest has {shortest}",
            partition.total() + 1
        )));
    }
    let streams: Vec<Vec<u32>> = seqs.iter().map(|s| s[..partition.total() + 1].to_vec()).collect();

    let methods = if args.method.is_empty() {
        if args.batch.is_some() {
            vec![Method::Griffin]
        } else {
            Method::ALL.to_vec()
        }
    } else {
        args.method.clone()
    };
    if args.batch.is_some() && methods.iter().any(|&m| m != Method::Griffin) {
        return Err(GriffinError::invalid("--batch applies to the griffin method only"));
    }

    let mut records = Vec::new();
    for &s in &args.sparsity {
        let mut cfg = EvalConfig::new(SparsityConfig::new(s)?);
        cfg.wanda.include_w2 = !args.wanda_skip_w2;
        cfg.reselect_every = args.reselect_every;
        cfg.seed = args.common.seed;
        for &method in &methods {
            let (pair, batch) = match args.batch {
                None => (corpus_perplexity(&model, &streams, partition, method, &cfg)?, None),
                Some(BatchArg::Size(b)) => (
                    batched_perplexity(&model, &streams, partition, Batching::Batch(b), &cfg)?,
                    Some(b.to_string()),
                ),
                Some(BatchArg::Global) => (
                    batched_perplexity(&model, &streams, partition, Batching::Global, &cfg)?,
                    Some("global".to_string()),
                ),
            };
            records.push(Record {
                method,
                sparsity: s,
                prompt_len: p,
                gen_len: g,
                batch,
                ppl: pair.method,
                ppl_full: pair.full,
            });
        }
    }
    let dir = out::prepare(&args.common.out)?;
    out::json(&dir.join("simulate.json"), &records)
}
