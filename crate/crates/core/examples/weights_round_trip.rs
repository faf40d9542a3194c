//! Save a model to the binary weight format and load it back bit-exactly.
//!
//! cargo run --release --example weights_round_trip

use witchcraft::model::{build_model, ArchSpec, Model};
use witchcraft::tensor::Tensor;
use witchcraft::weights::{encode, load_weights, save_weights};

fn main() -> anyhow::Result<()> {
    let model: Model<f32> = build_model(&ArchSpec::cnn_2conv(&[28, 28, 1], 10), 0)?;
    let path = std::env::temp_dir().join("cnn-2conv.wts");
    save_weights(&model, &path)?;
    let back = load_weights(&path)?;
    let x = Tensor::full(&[28, 28, 1], 0.5f32);
    println!(
        "{}: {} parameters, {} bytes on disk, layers {:?}",
        back.name(),
        back.parameter_count(),
        encode(&model).len(),
        back.layer_kinds().iter().map(|k| k.name()).collect::<Vec<_>>()
    );
    println!("identical logits after reload: {}", model.logits(&x)? == back.logits(&x)?);
    Ok(())
}
