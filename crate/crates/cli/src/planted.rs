use griffin::io::{save_model, write_tokens};
use griffin::rng::{stream_rng, Stream};
use griffin::sim::{generate_planted_model, PlantedDims, PlantedSpec};
use griffin::{IndexSet, Result};
use serde::Serialize;

use crate::{out, GenPlantedArgs};

#[derive(Serialize)]
struct Truth<'a> {
    spec: PlantedSpec,
    dims: PlantedDims,
    /// `supports[layer][cluster]`.
    supports: &'a [Vec<IndexSet>],
    sequence_clusters: Vec<usize>,
}

pub fn run(args: &GenPlantedArgs) -> Result<()> {
    let dir = out::prepare(&args.common.out)?;
    let spec = PlantedSpec {
        clusters: args.clusters,
        experts_per_cluster: args.experts,
        dominance: args.dominance,
        rng_seed: args.common.seed,
    };
    let dims = PlantedDims::new(args.vocab, args.dim, args.d_ff, args.layers);
    let (model, truth) = generate_planted_model::<f32>(&spec, &dims)?;
    let clusters: Vec<usize> = (0..args.sequences).map(|i| i % args.clusters).collect();
    let seqs: Vec<Vec<u32>> = clusters
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let mut rng = stream_rng(args.common.seed, Stream::PlantedSequences, i as u64);
            truth.sample_sequence(c, args.seq_len, &mut rng)
        })
        .collect();
    save_model(&dir.join("model.grfn"), &model)?;
    write_tokens(&dir.join("tokens.txt"), &seqs)?;
    out::json(
        &dir.join("truth.json"),
        &Truth {
            spec,
            dims,
            supports: &truth.supports,
            sequence_clusters: clusters,
        },
    )
}
