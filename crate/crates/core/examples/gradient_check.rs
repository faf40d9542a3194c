//! Input gradients from the backward pass against central finite
//! differences, on an MLP and a reduced-width CNN.
//!
//! cargo run --release --example gradient_check

use witchcraft::model::{build_model, ArchSpec, Model};
use witchcraft::selftest::{finite_difference_grad, relative_error};
use witchcraft::tensor::Tensor;

fn main() {
    let models: Vec<(Model<f64>, Vec<usize>)> = vec![
        (build_model(&ArchSpec::mlp_small(&[12], 4), 1).unwrap(), vec![12]),
        (
            build_model(&ArchSpec::cnn_2conv(&[12, 12, 1], 10).with_widths(&[3, 5]).with_kernel(3), 2).unwrap(),
            vec![12, 12, 1],
        ),
    ];
    for (model, shape) in &models {
        let n: usize = shape.iter().product();
        let x = Tensor::new(shape.clone(), (0..n).map(|i| (i * 37 % 101) as f64 / 101.0).collect()).unwrap();
        let label = 1;
        let analytic = model.grad_input(&x, label).unwrap();
        let numeric = finite_difference_grad(model, &x, label, 1e-4);
        println!(
            "{:<10} {:>5} params  |grad| {:.4e}  relative error {:.2e}",
            model.name(),
            model.parameter_count(),
            analytic.data().iter().map(|g| g * g).sum::<f64>().sqrt(),
            relative_error(&analytic, &numeric)
        );
    }
}
