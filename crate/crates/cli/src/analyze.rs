use griffin::flocking::{
    control_inputs, heatmap_export, intersample_similarity, matrix_to_csv, pairwise_similarity,
    sorted_statistic_profile, split_half_similarity, ControlKind, HeatmapMeta,
};
use griffin::io::{load_model, read_tokens, write_tokens};
use griffin::rng::{stream_rng, Stream};
use griffin::sim::prompt_trace;
use griffin::{compute_statistic, GriffinError, Matrix, NeuronStatistic, Result};
use serde::Serialize;

use crate::{out, AnalyzeArgs, Control};

#[derive(Serialize)]
struct PairwiseAtK {
    k: usize,
    matrix: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct LayerJaccard {
    layer: usize,
    d_ff: usize,
    k_grid: Vec<usize>,
    /// Mean pairwise top-k similarity across sequences; absent with fewer
    /// than two sequences.
    inter_sample: Option<Vec<f64>>,
    /// Mean top-k similarity between the two halves of each sequence.
    within_sequence: Vec<f64>,
    pairwise: Vec<PairwiseAtK>,
}

#[derive(Serialize)]
struct JaccardFile {
    control: ControlKind,
    seed: u64,
    sequences: usize,
    layers: Vec<LayerJaccard>,
}

fn default_grid(d_ff: usize) -> Vec<usize> {
    let mut g: Vec<usize> = std::iter::successors(Some(1usize), |k| Some(k * 2))
        .take_while(|&k| k < d_ff)
        .collect();
    g.push(d_ff);
    g
}

fn kind(c: Control) -> ControlKind {
    match c {
        Control::None => ControlKind::Original,
        Control::Permute => ControlKind::PermutedTokens,
        Control::Random => ControlKind::UniformRandomTokens,
    }
}

pub fn run(args: &AnalyzeArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let original = read_tokens(&args.tokens)?;
    if original.is_empty() {
        return Err(GriffinError::invalid("token file holds no sequences"));
    }
    let seed = args.common.seed;
    let control = kind(args.control);
    let seqs = original
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = stream_rng(seed, Stream::Control, i as u64);
            control_inputs(s, control, model.vocab(), &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let dir = out::prepare(&args.common.out)?;
    let control_name = match args.control {
        Control::None => "none",
        Control::Permute => "permute",
        Control::Random => "random",
    };
    write_tokens(&dir.join(format!("tokens_{control_name}.txt")), &seqs)?;

    let traces = seqs
        .iter()
        .map(|s| prompt_trace(&model, s))
        .collect::<Result<Vec<_>>>()?;

    let mut layers = Vec::with_capacity(model.n_layers());
    for (l, layer) in model.layers().iter().enumerate() {
        let d_ff = layer.block.d_ff();
        let acts0 = &traces[0][l].acts;
        let window = (args.window.0.min(acts0.tokens()), args.window.1.min(d_ff));
        let heat = heatmap_export(acts0, window, l)?;
        out::text(&dir.join(format!("heatmap_layer{l}.csv")), &heat.to_csv())?;
        let meta: HeatmapMeta = heat.meta((acts0.tokens(), d_ff));
        out::json(&dir.join(format!("heatmap_layer{l}.json")), &meta)?;

        let stats = traces
            .iter()
            .map(|t| compute_statistic(&t[l].acts))
            .collect::<Result<Vec<NeuronStatistic>>>()?;
        let profiles = stats
            .iter()
            .map(|s| sorted_statistic_profile(s).into_vec())
            .collect::<Vec<_>>();
        let profile = Matrix::from_rows(&profiles)?;
        out::text(&dir.join(format!("profile_layer{l}.csv")), &matrix_to_csv(&profile))?;

        let k_grid = if args.k_grid.is_empty() {
            default_grid(d_ff)
        } else {
            if let Some(&k) = args.k_grid.iter().find(|&&k| k == 0 || k > d_ff) {
                return Err(GriffinError::invalid(format!("k = {k} is outside 1..={d_ff} for layer {l}")));
            }
            args.k_grid.clone()
        };
        let (inter_sample, pairwise) = if stats.len() >= 2 {
            let report = intersample_similarity(l, &stats, &k_grid)?;
            let pairs = k_grid
                .iter()
                .map(|&k| {
                    Ok(PairwiseAtK {
                        k,
                        matrix: pairwise_similarity(&stats, k)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (Some(report.mean_similarity), pairs)
        } else {
            (None, Vec::new())
        };
        let halves: Vec<_> = traces.iter().filter(|t| t[l].acts.tokens() >= 2).collect();
        let within_sequence = k_grid
            .iter()
            .map(|&k| {
                let total = halves
                    .iter()
                    .map(|t| split_half_similarity(&t[l].acts, k))
                    .sum::<Result<f64>>()?;
                Ok(if halves.is_empty() { f64::NAN } else { total / halves.len() as f64 })
            })
            .collect::<Result<Vec<_>>>()?;
        layers.push(LayerJaccard {
            layer: l,
            d_ff,
            k_grid,
            inter_sample,
            within_sequence,
            pairwise,
        });
    }
    out::json(
        &dir.join("jaccard.json"),
        &JaccardFile {
            control,
            seed,
            sequences: seqs.len(),
            layers,
        },
    )
}
