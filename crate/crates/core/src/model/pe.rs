use crate::error::{Result, S2aError};
use crate::numerics::{Real, Tensor};

/// Sinusoidal encoding: `PE(p, 2i) = sin(p / 10000^(2i/d))`, `PE(p, 2i+1) = cos(·)`.
pub fn positional_encoding<F: Real>(len: usize, d_model: usize) -> Result<Tensor<F>> {
    if len == 0 {
        return Err(S2aError::InvalidInput("positional encoding length must be >= 1".into()));
    }
    if d_model == 0 || d_model % 2 != 0 {
        return Err(S2aError::Config(format!("positional encoding needs an even dimension, got {d_model}")));
    }
    let inv_freq: Vec<f64> = (0..d_model / 2)
        .map(|i| 10000f64.powf(-(2.0 * i as f64) / d_model as f64))
        .collect();
    let mut pe = Tensor::zeros(&[len, d_model]);
    for p in 0..len {
        let row = pe.row_mut(p);
        for (i, &w) in inv_freq.iter().enumerate() {
            let angle = p as f64 * w;
            row[2 * i] = F::lit(angle.sin());
            row[2 * i + 1] = F::lit(angle.cos());
        }
    }
    Ok(pe)
}
