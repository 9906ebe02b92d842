//! Trains the two-tower matcher on a planted corpus and prints the learning
//! curve. Pass `concat` as the first argument to use concatenation fusion.

use capmatch::data::split_dataset;
use capmatch::embed::HashedEncoderConfig;
use capmatch::mcprop::{train_mcprop, FusionMode, ModalityInputs, ModelShape, TrainingConfig};
use capmatch::synthetic::{planted_corpus, SyntheticConfig};

fn main() -> capmatch::Result<()> {
    let fusion = match std::env::args().nth(1).as_deref() {
        Some("concat") => FusionMode::Concat,
        _ => FusionMode::Attentive,
    };
    let corpus = planted_corpus(&SyntheticConfig { n_pairs: 1200, ..SyntheticConfig::small(1) })?;
    let (train, val) = split_dataset(&corpus.dataset, 200, 1)?;
    let encoder = HashedEncoderConfig::default();
    let train_in = ModalityInputs::from_dataset(&train, &encoder, &corpus.images)?;
    let val_in = ModalityInputs::from_dataset(&val, &encoder, &corpus.images)?;

    let shape = ModelShape {
        url_dim: encoder.out_dim,
        image_dim: corpus.images.dim(),
        caption_dim: encoder.out_dim,
        hidden_dim: 128,
        common_dim: 64,
        fusion,
    };
    let config = TrainingConfig { epochs: 15, ..TrainingConfig::default() };
    let (model, history) = train_mcprop(&train, &train_in, &val, &val_in, &shape, &config)?;
    println!("{:?} fusion, {} parameters", fusion, model.parameter_count());
    println!("epoch  loss    R@1    R@5    nDCG5  alpha_u alpha_v");
    for h in &history {
        let v = &h.validation;
        println!(
            "{:5}  {:.4}  {:.3}  {:.3}  {:.3}  {}",
            h.epoch,
            h.train_loss,
            v.metrics.recall(1),
            v.metrics.recall(5),
            v.metrics.ndcg5,
            match (v.mean_alpha_u, v.mean_alpha_v) {
                (Some(u), Some(w)) => format!("{u:.3}   {w:.3}"),
                _ => "-".into(),
            }
        );
    }
    Ok(())
}
