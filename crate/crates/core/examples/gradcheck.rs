//! Finite-difference check of a small attention-plus-norm expression in f64.

use fcft::autodiff::gradcheck::check;
use fcft::autodiff::Graph;
use fcft::tensor::Tensor;

fn main() -> fcft::Result<()> {
    let t = |shape: Vec<usize>, salt: f64| {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|i| ((i as f64 + 1.0) * salt).sin()).collect();
        Tensor::from_f64(shape, &v).unwrap()
    };
    // x is two sequences of three frames, width 4
    let inputs = vec![t(vec![6, 4], 0.7), t(vec![4, 4], 1.3), t(vec![4], 0.4), t(vec![4], 2.1)];
    let report = check::<f64, _>(&inputs, 1e-5, |g: &mut Graph<f64>, v| {
        let h = g.matmul(v[0], v[1])?;
        let h = g.gelu(h);
        let h = g.layer_norm(h, v[2], v[3], 1e-5)?;
        let a = g.attention(h, h, h, 2, 3, 2)?;
        let s = g.mul(a, a)?;
        Ok(g.sum(s))
    })?;
    for (i, e) in report.rel_errors.iter().enumerate() {
        println!("input {i}: relative error {e:.2e}");
    }
    println!("worst {:.2e}", report.max_rel_error());
    Ok(())
}
