use s2a_core::model::{
    expert_forward, moe_layer, multi_head_self_attention, topk_indices, AttentionWeights, Checkpoint, ExpertWeights,
    ModelConfig, ModelInput, MoeWeights, Params, S2aModel, TrainingMeta, Variant,
};
use s2a_core::features::NormStats;
use s2a_core::numerics::{grad_check_many, Graph, Real, RngState, Tensor, Var};

fn randn(rng: &mut RngState, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.normal() * scale)
}

fn attn_tensors(rng: &mut RngState, d: usize) -> Vec<Tensor<f64>> {
    (0..8)
        .map(|i| if i % 2 == 0 { randn(rng, &[d, d], 0.4) } else { randn(rng, &[d], 0.1) })
        .collect()
}

fn attn_weights(v: &[Var]) -> AttentionWeights {
    AttentionWeights {
        wq: v[0],
        bq: v[1],
        wk: v[2],
        bk: v[3],
        wv: v[4],
        bv: v[5],
        wo: v[6],
        bo: v[7],
    }
}

#[test]
fn attention_single_frame_is_value_projection() {
    let mut rng = RngState::new(3);
    let ts = attn_tensors(&mut rng, 8);
    let x = randn(&mut rng, &[1, 8], 1.0);
    let mut g = Graph::new();
    let vars: Vec<Var> = ts.iter().map(|t| g.param(t)).collect();
    let xv = g.param(&x);
    let out = multi_head_self_attention(&mut g, xv, &attn_weights(&vars), 2, None).unwrap();
    for w in &out.weights {
        assert_eq!(g.value(*w), &[1.0]);
    }
    let v = x.matmul(&ts[4]).unwrap();
    let expect: Vec<f64> = (0..8)
        .map(|j| (0..8).map(|i| (v.data()[i] + ts[5].data()[i]) * ts[6].at(i, j)).sum::<f64>() + ts[7].data()[j])
        .collect();
    for (a, b) in g.value(out.out).iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn attention_identical_frames_uniform_and_rows_normalized() {
    let mut rng = RngState::new(4);
    let ts = attn_tensors(&mut rng, 8);
    let row: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
    let x = Tensor::from_fn(&[5, 8], |i| row[i % 8]);
    let mut g = Graph::new();
    let vars: Vec<Var> = ts.iter().map(|t| g.param(t)).collect();
    let xv = g.param(&x);
    let out = multi_head_self_attention(&mut g, xv, &attn_weights(&vars), 2, None).unwrap();
    for w in &out.weights {
        assert!(g.value(*w).iter().all(|p| (p - 0.2).abs() < 1e-12));
    }

    let x = randn(&mut rng, &[6, 8], 1.0);
    let mut g = Graph::new();
    let vars: Vec<Var> = ts.iter().map(|t| g.param(t)).collect();
    let xv = g.param(&x);
    let out = multi_head_self_attention(&mut g, xv, &attn_weights(&vars), 4, Some(4)).unwrap();
    for w in &out.weights {
        let p = g.value(*w);
        for r in 0..6 {
            let row = &p[r * 6..(r + 1) * 6];
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row[4..].iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn attention_rejects_long_mask() {
    let mut rng = RngState::new(5);
    let ts = attn_tensors(&mut rng, 8);
    let x = randn(&mut rng, &[3, 8], 1.0);
    let mut g = Graph::new();
    let vars: Vec<Var> = ts.iter().map(|t| g.param(t)).collect();
    let xv = g.param(&x);
    assert!(multi_head_self_attention(&mut g, xv, &attn_weights(&vars), 2, Some(4)).is_err());
    assert!(multi_head_self_attention(&mut g, xv, &attn_weights(&vars), 3, None).is_err());
}

#[test]
fn attention_gradcheck() {
    let mut rng = RngState::new(6);
    for _ in 0..3 {
        let mut xs = attn_tensors(&mut rng, 8);
        xs.push(randn(&mut rng, &[4, 8], 1.0));
        let probe = randn(&mut rng, &[4, 8], 1.0);
        let report = grad_check_many(
            |g, v| {
                let out = multi_head_self_attention(g, v[8], &attn_weights(v), 2, Some(3))?;
                let p = g.input(probe.clone());
                let y = g.mul(out.out, p)?;
                Ok(g.sum(y))
            },
            &xs,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }
}

struct MoeCase {
    h: Tensor<f64>,
    gate_w: Tensor<f64>,
    gate_b: Tensor<f64>,
    /// per expert: conv K×d×hid, conv bias, fc hid×d, fc bias
    experts: Vec<[Tensor<f64>; 4]>,
    kernel: usize,
    k: usize,
}

impl MoeCase {
    fn random(rng: &mut RngState, t: usize, d: usize, n: usize, k: usize, hid: usize, kernel: usize) -> Self {
        MoeCase {
            h: randn(rng, &[t, d], 1.0),
            gate_w: randn(rng, &[d, n], 0.8),
            gate_b: randn(rng, &[n], 0.2),
            experts: (0..n)
                .map(|_| {
                    [
                        randn(rng, &[kernel, d, hid], 0.5),
                        randn(rng, &[hid], 0.2),
                        randn(rng, &[hid, d], 0.5),
                        randn(rng, &[d], 0.2),
                    ]
                })
                .collect(),
            kernel,
            k,
        }
    }

    fn tensors(&self) -> Vec<Tensor<f64>> {
        let mut v = vec![self.h.clone(), self.gate_w.clone(), self.gate_b.clone()];
        for e in &self.experts {
            let conv = e[0].clone();
            let s = conv.shape().to_vec();
            v.push(conv.reshape(vec![s[0] * s[1], s[2]]).unwrap());
            v.extend(e[1..].iter().cloned());
        }
        v
    }

    fn weights(vars: &[Var]) -> MoeWeights {
        MoeWeights {
            gate_w: vars[1],
            gate_b: vars[2],
            experts: vars[3..]
                .chunks(4)
                .map(|c| ExpertWeights {
                    conv_w: c[0],
                    conv_b: c[1],
                    fc_w: c[2],
                    fc_b: c[3],
                })
                .collect(),
        }
    }

    /// Loop-based reference: evaluate every expert on every frame, weight by
    /// the top-k renormalized softmax.
    fn dense_oracle(&self) -> Vec<f64> {
        let (t, d) = (self.h.rows(), self.h.cols());
        let n = self.experts.len();
        let r = self.kernel as isize / 2;
        let mut out = vec![0.0; t * d];
        for f in 0..t {
            let logits: Vec<f64> = (0..n)
                .map(|e| self.gate_b.data()[e] + (0..d).map(|i| self.h.at(f, i) * self.gate_w.at(i, e)).sum::<f64>())
                .collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap().then(a.cmp(&b)));
            let kept = &order[..self.k];
            let mx = kept.iter().map(|&e| logits[e]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = kept.iter().map(|&e| (logits[e] - mx).exp()).sum();
            for (e, ex) in self.experts.iter().enumerate() {
                let prob = if kept.contains(&e) { (logits[e] - mx).exp() / z } else { 0.0 };
                let hid = ex[0].shape()[2];
                let mut a = ex[1].data().to_vec();
                for o in -r..=r {
                    let src = f as isize + o;
                    if src < 0 || src >= t as isize {
                        continue;
                    }
                    for i in 0..d {
                        for j in 0..hid {
                            a[j] += self.h.at(src as usize, i) * ex[0].data()[((o + r) as usize * d + i) * hid + j];
                        }
                    }
                }
                for j in 0..d {
                    let y = ex[3].data()[j] + (0..hid).map(|q| a[q].max(0.0) * ex[2].at(q, j)).sum::<f64>();
                    out[f * d + j] += prob * y;
                }
            }
        }
        out
    }
}

fn run_moe(case: &MoeCase) -> (Vec<f64>, Vec<f64>) {
    let ts = case.tensors();
    let mut g = Graph::new();
    let vars: Vec<Var> = ts.iter().map(|t| g.param(t)).collect();
    let out = moe_layer(&mut g, vars[0], &MoeCase::weights(&vars), case.k, case.kernel, false, None).unwrap();
    (g.value(out.out).to_vec(), g.value(out.probs).to_vec())
}

#[test]
fn moe_sparse_matches_dense_oracle() {
    let mut rng = RngState::new(11);
    for i in 0..25 {
        let n = rng.int(1, 8);
        let k = rng.int(1, n);
        let t = rng.int(1, 16);
        let d = rng.int(1, 16);
        let kernel = [1, 3, 5][i % 3];
        let hid = rng.int(2, 10);
        let case = MoeCase::random(&mut rng, t, d, n, k, hid, kernel);
        let (sparse, probs) = run_moe(&case);
        let dense = case.dense_oracle();
        let scale = dense.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
        for (a, b) in sparse.iter().zip(&dense) {
            assert!((a - b).abs() <= 1e-5 * scale, "case {i}: {a} vs {b}");
        }
        for row in probs.chunks(n) {
            assert_eq!(row.iter().filter(|&&p| p > 0.0).count(), k);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn moe_single_expert_equals_expert() {
    let mut rng = RngState::new(12);
    let case = MoeCase::random(&mut rng, 9, 6, 1, 1, 5, 3);
    let (moe, _) = run_moe(&case);
    let ts = case.tensors();
    let mut g = Graph::new();
    let vars: Vec<Var> = ts.iter().map(|t| g.param(t)).collect();
    let w = MoeCase::weights(&vars);
    let e = expert_forward(&mut g, vars[0], &w.experts[0], None, 3).unwrap();
    assert_eq!(moe, g.value(e));
}

#[test]
fn moe_full_k_is_plain_softmax() {
    let mut rng = RngState::new(13);
    let case = MoeCase::random(&mut rng, 7, 5, 6, 6, 4, 3);
    let (_, probs) = run_moe(&case);
    let mut g = Graph::new();
    let h = g.param(&case.h);
    let w = g.param(&case.gate_w);
    let b = g.param(&case.gate_b);
    let l = g.linear(h, w, b).unwrap();
    let s = g.softmax_lastdim(l).unwrap();
    assert_eq!(probs, g.value(s));
}

#[test]
fn moe_expert_permutation_invariance() {
    let mut rng = RngState::new(14);
    for _ in 0..5 {
        let case = MoeCase::random(&mut rng, 10, 6, 6, 3, 5, 3);
        let (base, _) = run_moe(&case);
        let mut perm: Vec<usize> = (0..6).collect();
        rng.shuffle(&mut perm);
        let permuted = MoeCase {
            h: case.h.clone(),
            gate_w: Tensor::from_fn(&[6, 6], |i| case.gate_w.at(i / 6, perm[i % 6])),
            gate_b: Tensor::from_fn(&[6], |i| case.gate_b.data()[perm[i]]),
            experts: perm.iter().map(|&p| case.experts[p].clone()).collect(),
            kernel: 3,
            k: 3,
        };
        let (other, _) = run_moe(&permuted);
        for (a, b) in base.iter().zip(&other) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn moe_gradcheck() {
    let mut rng = RngState::new(15);
    for _ in 0..3 {
        let case = MoeCase::random(&mut rng, 6, 4, 4, 2, 3, 3);
        let probe = randn(&mut rng, &[6, 4], 1.0);
        let report = grad_check_many(
            |g, v| {
                let out = moe_layer(g, v[0], &MoeCase::weights(v), 2, 3, true, Some(5))?;
                let p = g.input(probe.clone());
                let y = g.mul(out.out, p)?;
                let y = g.sum(y);
                let imp = g.scale(out.importance_cv2.unwrap(), 0.1)?;
                g.add(y, imp)
            },
            &case.tensors(),
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }
}

#[test]
fn topk_ties_prefer_lower_index() {
    assert_eq!(topk_indices(&[1.0f64, 3.0, 3.0, 0.0, 3.0], 2).unwrap(), vec![1, 2]);
}

fn random_input<F: Real>(rng: &mut RngState, t: usize, dim: usize) -> ModelInput<F> {
    let content = Tensor::from_fn(&[t, dim], |_| F::lit(rng.uniform()));
    let prosody = Tensor::from_fn(&[t, 2], |_| F::lit(rng.normal()));
    ModelInput::new(content, prosody).unwrap()
}

/// Gradient check of the masked MSE of the whole network w.r.t. every parameter.
fn model_gradcheck(cfg: ModelConfig, seed: u64) {
    let model = S2aModel::new(cfg.clone()).unwrap();
    let mut rng = RngState::new(seed);
    let params: Params<f64> = model.init_params(&mut rng);
    // perturb norms and biases away from their symmetric starting values
    let xs: Vec<Tensor<f64>> = params
        .iter()
        .map(|(name, t)| {
            let mut t = t.clone();
            if name.ends_with(".b") || name.ends_with(".g") || name.contains(".b") {
                t.data_mut().iter_mut().for_each(|v| *v += 0.1 * rng.normal());
            }
            match t.shape().to_vec().as_slice() {
                [k, cin, cout] => t.reshape(vec![k * cin, *cout]).unwrap(),
                _ => t,
            }
        })
        .collect();
    let input: ModelInput<f64> = random_input(&mut rng, 5, cfg.ppg_dim).padded(6);
    let target = randn(&mut rng, &[6, 32], 1.0);
    let report = grad_check_many(
        |g, v| {
            let bound = params.bind_vars(v.to_vec())?;
            let c = g.input(input.content.clone());
            let p = g.input(input.prosody.clone());
            let out = model.forward(g, &bound, c, p, input.valid_len, None)?;
            let tgt = g.input(target.clone());
            let diff = g.sub(out.out, tgt)?;
            let mask: Vec<f64> = (0..6 * 32).map(|i| if i / 32 < 5 { 1.0 } else { 0.0 }).collect();
            let diff = g.mul_const(diff, mask)?;
            let sq = g.mul(diff, diff)?;
            let s = g.sum(sq);
            let mse = g.scale(s, 1.0 / (5.0 * 32.0))?;
            match out.aux_loss {
                Some(a) => g.add(mse, a),
                None => Ok(mse),
            }
        },
        &xs,
        1e-4,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn end_to_end_gradcheck_moe() {
    model_gradcheck(ModelConfig::gradcheck(), 21);
}

#[test]
fn end_to_end_gradcheck_dense_ablation() {
    model_gradcheck(ModelConfig::gradcheck().for_variant(Variant::Dense), 22);
}

#[test]
fn end_to_end_gradcheck_importance_loss() {
    let cfg = ModelConfig {
        importance_loss: 0.05,
        ..ModelConfig::gradcheck()
    };
    model_gradcheck(cfg, 23);
}

#[test]
fn output_shape_contract() {
    for variant in [Variant::Moe, Variant::Dense, Variant::NoProsody, Variant::DenseFeatures] {
        let cfg = ModelConfig::tiny().for_variant(variant);
        let model = S2aModel::new(cfg.clone()).unwrap();
        let params: Params<f32> = model.init_params(&mut RngState::new(1));
        for t in [1, 2, 13] {
            let input = random_input(&mut RngState::new(t as u64), t, cfg.ppg_dim);
            let y = model.predict(&params, &input).unwrap();
            assert_eq!(y.shape(), &[t, 32]);
            assert!(y.is_finite());
        }
    }
}

#[test]
fn dense_ablation_equals_single_expert_moe() {
    let dense_cfg = ModelConfig {
        n_experts: 1,
        top_k: 1,
        ..ModelConfig::tiny()
    }
    .for_variant(Variant::Dense);
    let moe_cfg = dense_cfg.for_variant(Variant::Moe);
    let dense = S2aModel::new(dense_cfg).unwrap();
    let moe = S2aModel::new(moe_cfg).unwrap();
    let mut rng = RngState::new(31);
    let dp: Params<f32> = dense.init_params(&mut rng);
    let mut mp: Params<f32> = moe.init_params(&mut rng);
    for (name, t) in dp.iter() {
        let target = name.replace(".ffn.", ".moe.expert.0.");
        let slot = if name.starts_with("dec.") && name.contains(".ffn.") { target } else { name.to_string() };
        *mp.get_mut(&slot).unwrap() = t.clone();
    }
    let input = random_input(&mut rng, 11, 64);
    assert_eq!(dense.predict(&dp, &input).unwrap(), moe.predict(&mp, &input).unwrap());
}

#[test]
fn every_frame_sees_global_context() {
    let cfg = ModelConfig::tiny();
    let model = S2aModel::new(cfg).unwrap();
    let mut rng = RngState::new(41);
    let params: Params<f32> = model.init_params(&mut rng);
    let input = random_input(&mut rng, 20, 64);
    let base = model.predict(&params, &input).unwrap();
    for frame in [0usize, 10, 19] {
        let mut other = input.clone();
        other.content.row_mut(frame).iter_mut().for_each(|v| *v = 1.0 - *v);
        let y = model.predict(&params, &other).unwrap();
        // frames farther than the convolution reach can only change via attention
        let far: Vec<usize> = (0..20).filter(|t: &usize| t.abs_diff(frame) > 2).collect();
        for t in far {
            let diff: f32 = base.row(t).iter().zip(y.row(t)).map(|(a, b)| (a - b).abs()).sum();
            assert!(diff > 0.0, "frame {t} unaffected by perturbing {frame}");
        }
    }
}

#[test]
fn padding_does_not_change_valid_outputs() {
    for variant in [Variant::Moe, Variant::Dense] {
        let model = S2aModel::new(ModelConfig::tiny().for_variant(variant)).unwrap();
        let mut rng = RngState::new(51);
        let params: Params<f64> = model.init_params(&mut rng);
        let input: ModelInput<f64> = random_input(&mut rng, 9, 64);
        let base = model.predict(&params, &input).unwrap();
        let mut padded = input.padded(14);
        padded.content.row_mut(12).iter_mut().for_each(|v| *v = 3.0);
        let y = model.predict(&params, &padded).unwrap();
        for (a, b) in base.data().iter().zip(&y.data()[..9 * 32]) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn no_prosody_variant_ignores_prosody() {
    let cfg = ModelConfig::tiny().for_variant(Variant::NoProsody);
    let model = S2aModel::new(cfg).unwrap();
    let mut rng = RngState::new(61);
    let params: Params<f32> = model.init_params(&mut rng);
    let input = random_input(&mut rng, 8, 64);
    let mut louder = input.clone();
    louder.prosody.data_mut().iter_mut().for_each(|v| *v += 2.0);
    assert_eq!(model.predict(&params, &input).unwrap(), model.predict(&params, &louder).unwrap());
}

#[test]
fn feature_dim_mismatch_rejected() {
    let model = S2aModel::new(ModelConfig::tiny()).unwrap();
    let params: Params<f32> = model.init_params(&mut RngState::new(1));
    let input = random_input(&mut RngState::new(2), 5, 20);
    assert!(model.predict(&params, &input).is_err());
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let cfg = ModelConfig::tiny();
    let model = S2aModel::new(cfg.clone()).unwrap();
    let mut rng = RngState::new(71);
    let params: Params<f32> = model.init_params(&mut rng);
    let stats = NormStats {
        anim_mean: (0..32).map(|i| i as f32 / 64.0).collect(),
        anim_std: vec![0.1; 32],
        pitch_mean: 151.3,
        pitch_std: 20.7,
        energy_mean: -3.3,
        energy_std: 1.9,
    };
    let meta = TrainingMeta {
        epoch: 3,
        steps: 40,
        seed: 9,
        train_loss: 0.123,
        val_rmse: Some(0.456),
    };
    let ckpt = Checkpoint::new(cfg, params, stats, meta).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.s2a1");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    let input = random_input(&mut rng, 12, 64);
    let a = ckpt.predict_normalized(&input).unwrap();
    let b = loaded.predict_normalized(&input).unwrap();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}
