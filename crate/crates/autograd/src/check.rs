//! Central finite differences for gradient tests.

use crate::Tensor;

/// Central-difference gradient of `f` with respect to every entry of every
/// input tensor.
pub fn finite_difference<F>(f: F, inputs: &[Tensor], eps: f32) -> Vec<Tensor>
where
    F: Fn(&[Tensor]) -> f64,
{
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let (r, c) = inputs[i].shape();
        let mut grad = Tensor::zeros(r, c);
        for j in 0..r * c {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = f(&work);
            work[i].data_mut()[j] = orig - eps;
            let minus = f(&work);
            work[i].data_mut()[j] = orig;
            grad.data_mut()[j] = ((plus - minus) / (2.0 * eps as f64)) as f32;
        }
        out.push(grad);
    }
    out
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute difference when both are tiny.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let diff = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt();
    let scale = a.sq_norm().sqrt().max(b.sq_norm().sqrt());
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}
