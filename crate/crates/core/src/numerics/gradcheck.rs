use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Result, S2aError};

/// Central-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so entries whose true gradient
/// is ~0 are judged on absolute error instead.
const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// (input index, flat element index) of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Compares the autodiff gradient of a scalar `f` against central
/// differences, in double precision.
pub fn grad_check<Func>(f: Func, x: &Tensor<f64>, tol: f64) -> Result<GradCheckReport>
where
    Func: for<'g> Fn(&mut Graph<'g, f64>, Var) -> Result<Var>,
{
    grad_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(x), tol)
}

/// [`grad_check`] over several differentiable inputs at once.
pub fn grad_check_many<Func>(f: Func, xs: &[Tensor<f64>], tol: f64) -> Result<GradCheckReport>
where
    Func: for<'g> Fn(&mut Graph<'g, f64>, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
        let out = f(&mut g, &vars)?;
        if g.value(out).len() != 1 {
            return Err(S2aError::InvalidInput("grad_check needs a scalar-valued function".into()));
        }
        Ok(g.scalar(out))
    };

    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.param(t)).collect();
        let out = f(&mut g, &vars)?;
        if g.value(out).len() != 1 {
            return Err(S2aError::InvalidInput("grad_check needs a scalar-valued function".into()));
        }
        let grads = g.backward(out)?;
        vars.iter()
            .zip(xs)
            .map(|(v, t)| grads.get(*v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
            .collect()
    };

    let mut work: Vec<Tensor<f64>> = xs.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: (0, 0),
        checked: 0,
        tol,
        passed: true,
    };
    for (ti, grad) in analytic.iter().enumerate() {
        for ei in 0..xs[ti].numel() {
            let orig = xs[ti].data()[ei];
            work[ti].data_mut()[ei] = orig + GRAD_CHECK_STEP;
            let plus = eval(&work)?;
            work[ti].data_mut()[ei] = orig - GRAD_CHECK_STEP;
            let minus = eval(&work)?;
            work[ti].data_mut()[ei] = orig;
            let numeric = (plus - minus) / (2.0 * GRAD_CHECK_STEP);
            let abs = (numeric - grad[ei]).abs();
            let rel = abs / numeric.abs().max(grad[ei].abs()).max(REL_FLOOR);
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err || !rel.is_finite() {
                report.max_rel_err = rel;
                report.worst = (ti, ei);
            }
            report.checked += 1;
        }
    }
    report.passed = report.max_rel_err <= tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;

    fn rand_tensor(rng: &mut RngState, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.normal())
    }

    fn assert_pass(r: &GradCheckReport) {
        assert!(r.passed, "grad check failed: {r:?}");
    }

    #[test]
    fn sum_is_all_ones() {
        let x = Tensor::new(vec![3], vec![0.3, -1.0, 2.0]).unwrap();
        let r = grad_check(|g, v| Ok(g.sum(v)), &x, 1e-4).unwrap();
        assert!(r.max_abs_err < 1e-9);
    }

    #[test]
    fn non_scalar_rejected() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        assert!(grad_check(|g, v| Ok(g.relu(v)), &x, 1e-4).is_err());
    }

    #[test]
    fn matmul_random_5x7x3() {
        let mut rng = RngState::new(11);
        for _ in 0..10 {
            let a = rand_tensor(&mut rng, &[5, 7]);
            let b = rand_tensor(&mut rng, &[7, 3]);
            let w = rand_tensor(&mut rng, &[5, 3]);
            let r = grad_check_many(
                |g, v| {
                    let c = g.matmul(v[0], v[1])?;
                    let wv = g.input(w.clone());
                    let p = g.mul(c, wv)?;
                    Ok(g.sum(p))
                },
                &[a, b],
                1e-4,
            )
            .unwrap();
            assert_pass(&r);
        }
    }

    #[test]
    fn softmax_weighted_sum() {
        let mut rng = RngState::new(12);
        for _ in 0..10 {
            let x = rand_tensor(&mut rng, &[3, 5]);
            let v = rand_tensor(&mut rng, &[3, 5]);
            let r = grad_check(
                |g, x| {
                    let s = g.softmax_lastdim(x)?;
                    let vv = g.input(v.clone());
                    let p = g.mul(s, vv)?;
                    Ok(g.sum(p))
                },
                &x,
                1e-4,
            )
            .unwrap();
            assert_pass(&r);
        }
    }

    #[test]
    fn masked_softmax() {
        let mut rng = RngState::new(13);
        let mask: Vec<f64> = (0..12)
            .map(|i| if i % 4 == 3 { f64::NEG_INFINITY } else { 0.0 })
            .collect();
        for _ in 0..10 {
            let x = rand_tensor(&mut rng, &[3, 4]);
            let v = rand_tensor(&mut rng, &[3, 4]);
            let r = grad_check(
                |g, x| {
                    let m = g.add_const(x, &mask)?;
                    let s = g.softmax_lastdim(m)?;
                    let vv = g.input(v.clone());
                    let p = g.mul(s, vv)?;
                    Ok(g.sum(p))
                },
                &x,
                1e-4,
            )
            .unwrap();
            assert_pass(&r);
        }
    }

    #[test]
    fn conv1d_random_6x2() {
        let mut rng = RngState::new(14);
        for _ in 0..10 {
            let x = rand_tensor(&mut rng, &[6, 2]);
            let w = rand_tensor(&mut rng, &[3, 2, 3]);
            let b = rand_tensor(&mut rng, &[3]);
            let v = rand_tensor(&mut rng, &[6, 3]);
            let r = grad_check_many(
                |g, p| {
                    let y = g.conv1d_same(p[0], p[1], p[2])?;
                    let vv = g.input(v.clone());
                    let q = g.mul(y, vv)?;
                    Ok(g.sum(q))
                },
                &[x, w, b],
                1e-4,
            )
            .unwrap();
            assert_pass(&r);
        }
    }

    #[test]
    fn layer_norm_random() {
        let mut rng = RngState::new(15);
        for _ in 0..10 {
            let x = rand_tensor(&mut rng, &[4, 5]);
            let gain = rand_tensor(&mut rng, &[5]);
            let bias = rand_tensor(&mut rng, &[5]);
            let v = rand_tensor(&mut rng, &[4, 5]);
            let r = grad_check_many(
                |g, p| {
                    let y = g.layer_norm(p[0], p[1], p[2], 1e-5)?;
                    let vv = g.input(v.clone());
                    let q = g.mul(y, vv)?;
                    Ok(g.sum(q))
                },
                &[x, gain, bias],
                1e-4,
            )
            .unwrap();
            assert_pass(&r);
        }
    }

    #[test]
    fn elementwise_and_structural_ops() {
        let mut rng = RngState::new(16);
        for _ in 0..10 {
            let a = rand_tensor(&mut rng, &[4, 3]);
            let b = Tensor::from_fn(&[4, 3], |_| 1.5 + rng.uniform());
            let s = rand_tensor(&mut rng, &[4]);
            let bias = rand_tensor(&mut rng, &[3]);
            let r = grad_check_many(
                |g, p| {
                    let (a, b, s, bias) = (p[0], p[1], p[2], p[3]);
                    let x = g.add(a, b)?;
                    let x = g.sub(x, a)?;
                    let x = g.mul(x, a)?;
                    let x = g.div(x, b)?;
                    let x = g.add_bias(x, bias)?;
                    let x = g.tanh(x);
                    let y = g.sigmoid(a);
                    let z = g.relu(b);
                    let cat = g.concat_cols(&[x, y, z])?;
                    let sl = g.slice_cols(cat, 2, 5)?;
                    let tr = g.transpose(sl)?;
                    let tr = g.transpose(tr)?;
                    let rs = g.row_scale(tr, s)?;
                    let ga = g.gather_rows(rs, vec![3, 0, 0])?;
                    let sc = g.scatter_rows(ga, vec![1, 2, 1], 4)?;
                    let se = g.select_entries(sc, vec![(1, 0), (2, 4), (1, 1)])?;
                    let m = g.mean(sc);
                    let m = g.scale(m, 3.0)?;
                    let s1 = g.sum(se);
                    let sq = g.mul(s1, s1)?;
                    g.add(sq, m)
                },
                &[a, b, s, bias],
                1e-4,
            )
            .unwrap();
            assert_pass(&r);
        }
    }
}
