use crate::error::{Result, S2aError};
use crate::numerics::Tensor;

/// Per-column linear interpolation of a `T₁×D` stream onto `t2` frames over
/// the normalized time axis. Endpoint rows are copied exactly. With
/// `renormalize_rows`, every output row is rescaled to sum to 1 (PPGs).
pub fn resample_linear(stream: &Tensor<f32>, t2: usize, renormalize_rows: bool) -> Result<Tensor<f32>> {
    let t1 = stream.rows();
    if stream.rank() != 2 || t1 < 2 {
        return Err(S2aError::InvalidInput(format!(
            "resampling needs at least 2 frames, got shape {:?}",
            stream.shape()
        )));
    }
    if t2 == 0 {
        return Err(S2aError::InvalidInput("target length must be at least 1".into()));
    }
    let d = stream.cols();
    let mut out = Tensor::zeros(&[t2, d]);
    for i in 0..t2 {
        let row = out.row_mut(i);
        if i == 0 || t2 == 1 {
            row.copy_from_slice(stream.row(0));
        } else if i == t2 - 1 {
            row.copy_from_slice(stream.row(t1 - 1));
        } else {
            let pos = i as f64 * (t1 - 1) as f64 / (t2 - 1) as f64;
            let lo = (pos.floor() as usize).min(t1 - 2);
            let frac = pos - lo as f64;
            let (a, b) = (stream.row(lo), stream.row(lo + 1));
            for j in 0..d {
                row[j] = ((1.0 - frac) * a[j] as f64 + frac * b[j] as f64) as f32;
            }
        }
        if renormalize_rows {
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            if sum > 0.0 {
                row.iter_mut().for_each(|v| *v = (*v as f64 / sum) as f32);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn column(values: &[f32]) -> Tensor<f32> {
        Tensor::new(vec![values.len(), 1], values.to_vec()).unwrap()
    }

    #[test]
    fn hand_interpolation() {
        let out = resample_linear(&column(&[0.0, 1.0]), 3, false).unwrap();
        assert_eq!(out.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn too_short_rejected() {
        assert!(resample_linear(&column(&[1.0]), 4, false).is_err());
        assert!(resample_linear(&column(&[1.0, 2.0]), 0, false).is_err());
    }

    proptest! {
        #[test]
        fn identity_endpoints_and_constants(
            rows in prop::collection::vec(prop::collection::vec(0.01f32..1.0, 3), 2..40),
            t2 in 1usize..90,
            c in -3.0f32..3.0,
        ) {
            let t = Tensor::from_rows(&rows).unwrap();
            let same = resample_linear(&t, rows.len(), false).unwrap();
            prop_assert_eq!(same.data(), t.data());

            let out = resample_linear(&t, t2, false).unwrap();
            prop_assert_eq!(out.row(0), t.row(0));
            if t2 > 1 {
                prop_assert_eq!(out.row(t2 - 1), t.row(rows.len() - 1));
            }

            let flat = column(&vec![c; rows.len()]);
            let r = resample_linear(&flat, t2, false).unwrap();
            prop_assert!(r.data().iter().all(|&v| (v - c).abs() < 1e-6));

            let dist = resample_linear(&t, t2, true).unwrap();
            for i in 0..t2 {
                let s: f64 = dist.row(i).iter().map(|&v| v as f64).sum();
                prop_assert!((s - 1.0).abs() < 1e-5);
            }
        }

        #[test]
        fn monotone_columns_stay_monotone(mut v in prop::collection::vec(-5.0f32..5.0, 2..30), t2 in 2usize..80) {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let out = resample_linear(&column(&v), t2, false).unwrap();
            for w in out.data().windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-6);
            }
        }
    }
}
