//! Records a conv -> batch norm -> relu -> pool -> fc network on a tape,
//! backpropagates, and compares every gradient with central differences.
//!
//! cargo run --release --example autodiff_gradcheck

use rand_distr::{Distribution, StandardNormal};
use tripnet::rng;
use tripnet::tensor::gradcheck::{grad_check, DEFAULT_STEP};
use tripnet::tensor::{Tape, Tensor, Var};

fn randn(shape: Vec<usize>, scale: f64, r: &mut rng::Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut *r)).collect();
    Tensor::new(shape, data).unwrap()
}

fn main() -> tripnet::Result<()> {
    let mut r = rng::stream(3, 0, 0);
    let x = randn(vec![4, 2, 5, 5], 1.0, &mut r);
    let params = vec![
        randn(vec![3, 2, 3, 3], 0.5, &mut r),
        randn(vec![3], 0.1, &mut r),
        Tensor::full(vec![3], 1.0),
        Tensor::zeros(vec![3]),
        randn(vec![27, 4], 0.3, &mut r),
        randn(vec![4], 0.1, &mut r),
    ];
    let net = |tape: &mut Tape<f64>, p: &[Var]| -> tripnet::Result<Var> {
        let input = tape.constant(x.clone());
        let h = tape.conv2d(input, p[0], p[1])?;
        let (h, _) = tape.batchnorm_train(h, p[2], p[3])?;
        let h = tape.relu(h);
        let h = tape.maxpool2d_ceil(h)?;
        let h = tape.flatten(h)?;
        let h = tape.linear(h, p[4], p[5])?;
        let sq = tape.square(h);
        Ok(tape.sum(sq))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = net(&mut tape, &vars)?;
    tape.backward(loss)?;
    println!("loss {:.6}, {} tape nodes", tape.value(loss).item(), tape.len());
    println!("d loss / d conv bias = {:?}", tape.grad(vars[1]).unwrap().data());

    let check = grad_check(&params, DEFAULT_STEP, net)?;
    println!(
        "{} gradient entries checked ({} zero on both sides), max relative error {:.2e} (parameter {}, element {})",
        check.checked, check.zeros, check.max_rel_error, check.worst.0, check.worst.1
    );
    Ok(())
}
