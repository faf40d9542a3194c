//! Parse IDX files: a hand-built two-image fixture, then the bundled MNIST
//! subset (or `$MNIST_DIR`).
//!
//! cargo run --release --example idx_loading

use witchcraft::data::{parse_idx_images, parse_idx_labels, LabeledDataset, MnistFiles};

fn main() -> anyhow::Result<()> {
    let mut images = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
    images.extend([0, 255, 128, 64, 1, 2, 3, 4]);
    let labels = [0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
    let raw = parse_idx_images(&images)?;
    let tiny = LabeledDataset::from_idx(&raw, &parse_idx_labels(&labels)?, 10)?;
    println!("fixture: {} images of {:?}, labels {:?}, first image {:?}", tiny.len(), tiny.sample_shape(), tiny.labels(), tiny.image::<f32>(0).data());

    let files = MnistFiles::from_env();
    let test = files.test(None)?;
    let mut counts = [0usize; 10];
    for &l in test.labels() {
        counts[l] += 1;
    }
    let mean = test.images().data().iter().map(|&v| v as f64).sum::<f64>() / test.images().len() as f64;
    println!("{}: {} examples, label counts {counts:?}, mean pixel {mean:.4}", files.test_images.display(), test.len());
    Ok(())
}
