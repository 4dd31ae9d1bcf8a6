use griffin::baselines::{magnitude_experts, sampled_experts, wanda_prune_with, MaskRecord, WandaOptions};
use griffin::io::{load_model, read_tokens, save_model};
use griffin::rng::{stream_rng, Stream};
use griffin::sim::{prompt_statistics, prompt_trace, Method};
use griffin::{
    aggregate_statistics, prune_block, select_experts, ExpertRecord, ExpertSet, GriffinError, Matrix, Result,
    SparsityConfig,
};

use crate::{out, PruneArgs};

pub fn run(args: &PruneArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let prompts = read_tokens(&args.tokens)?;
    if prompts.is_empty() {
        return Err(GriffinError::invalid("token file holds no prompts"));
    }
    let cfg = SparsityConfig::new(args.sparsity)?;
    let dir = out::prepare(&args.common.out)?;

    if args.method == Method::Wanda {
        let traces = prompts
            .iter()
            .map(|p| prompt_trace(&model, p))
            .collect::<Result<Vec<_>>>()?;
        let opts = WandaOptions {
            include_w2: !args.wanda_skip_w2,
        };
        let mut blocks = Vec::with_capacity(model.n_layers());
        let mut masks: Vec<MaskRecord> = Vec::new();
        for (l, layer) in model.layers().iter().enumerate() {
            let inputs: Vec<Matrix<f32>> = traces.iter().map(|t| t[l].input.clone()).collect();
            let mask = wanda_prune_with(&layer.block, &Matrix::vstack(&inputs)?, args.sparsity, opts)?;
            blocks.push(mask.apply(&layer.block)?);
            masks.extend(mask.records(l));
        }
        save_model(&dir.join("pruned.grfn"), &model.with_blocks(blocks)?)?;
        return out::json(&dir.join("masks.json"), &masks);
    }

    let stats = prompts
        .iter()
        .map(|p| prompt_statistics(&model, p))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = stream_rng(args.common.seed, Stream::Sampling, 0);
    let mut blocks = Vec::with_capacity(model.n_layers());
    let mut records: Vec<ExpertRecord> = Vec::new();
    for (l, layer) in model.layers().iter().enumerate() {
        let per_prompt: Vec<_> = stats.iter().map(|s| s[l].clone()).collect();
        let stat = aggregate_statistics(&per_prompt)?;
        let experts = match args.method {
            Method::Full => ExpertSet::all(layer.block.d_ff()),
            Method::Griffin => select_experts(&stat, cfg)?,
            Method::Magnitude => magnitude_experts(&layer.block, cfg)?,
            m => {
                let mode = m.selection_mode().expect("sampling method");
                sampled_experts(&stat, cfg, mode, &mut rng)?
            }
        };
        records.push(experts.record(l));
        blocks.push(prune_block(&layer.block, &experts)?.into_block());
    }
    save_model(&dir.join("pruned.grfn"), &model.with_blocks(blocks)?)?;
    out::json(&dir.join("experts.json"), &records)
}
