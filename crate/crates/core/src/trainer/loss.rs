use crate::error::{Result, S2aError};
use crate::numerics::{Graph, Real, Var};

/// Sum of squared errors over frames flagged in `valid` (one flag per row).
/// Returns the sum and the number of valid cells.
pub fn masked_sse<F: Real>(g: &mut Graph<'_, F>, pred: Var, target: Var, valid: &[bool]) -> Result<(Var, usize)> {
    let ps = g.shape(pred).to_vec();
    if ps != g.shape(target) {
        return Err(S2aError::shape("mse_loss", &ps, g.shape(target)));
    }
    if ps.len() != 2 || valid.len() != ps[0] {
        return Err(S2aError::shape("mse_loss mask", &ps, &[valid.len()]));
    }
    let cols = ps[1];
    let n_valid = valid.iter().filter(|&&v| v).count();
    if n_valid == 0 {
        return Err(S2aError::EmptySequence("mse_loss: no valid frames".into()));
    }
    let diff = g.sub(pred, target)?;
    let diff = if n_valid < valid.len() {
        let mask = (0..ps[0] * cols)
            .map(|i| if valid[i / cols] { F::one() } else { F::zero() })
            .collect();
        g.mul_const(diff, mask)?
    } else {
        diff
    };
    let sq = g.mul(diff, diff)?;
    Ok((g.sum(sq), n_valid * cols))
}

/// Mean squared error over valid frame-channel cells.
pub fn mse_loss<F: Real>(g: &mut Graph<'_, F>, pred: Var, target: Var, valid: &[bool]) -> Result<Var> {
    let (sse, n) = masked_sse(g, pred, target, valid)?;
    g.scale(sse, F::one() / F::lit(n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn loss(pred: &Tensor<f64>, target: &Tensor<f64>, valid: &[bool]) -> Result<f64> {
        let mut g = Graph::new();
        let p = g.constant_ref(pred);
        let t = g.constant_ref(target);
        let l = mse_loss(&mut g, p, t, valid)?;
        Ok(g.scalar(l))
    }

    #[test]
    fn analytic_values() {
        let t = Tensor::from_fn(&[4, 32], |i| (i as f64 * 0.37).sin());
        assert_eq!(loss(&t, &t, &[true; 4]).unwrap(), 0.0);
        let p = Tensor::from_fn(&[4, 32], |i| t.data()[i] + 0.1);
        assert!((loss(&p, &t, &[true; 4]).unwrap() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn masked_frames_excluded() {
        let t = Tensor::from_fn(&[3, 2], |i| i as f64);
        let mut p = t.clone();
        p.set(0, 0, 1.0);
        let valid = [true, true, false];
        let base = loss(&p, &t, &valid).unwrap();
        p.set(2, 1, 100.0);
        assert_eq!(loss(&p, &t, &valid).unwrap(), base);
        assert!(loss(&p, &t, &[false; 3]).is_err());
    }
}
