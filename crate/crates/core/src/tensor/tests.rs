use super::*;
use proptest::prelude::*;

fn t(data: &[f32], shape: &[usize]) -> Tensor {
    Tensor::from_vec(data.to_vec(), shape).unwrap()
}

/// Fixed, non-degenerate projection coefficients for scalarizing an op
/// output so every output element influences the objective.
fn proj_coeffs(n: usize) -> Vec<f32> {
    (0..n).map(|i| ((i % 7) as f32 - 3.0) * 0.25 + 0.1).collect()
}

/// Scalar objective for gradient checks: already-scalar ops pass
/// through, everything else is projected onto fixed coefficients.
fn objective(kind: &OpKind, inputs: &[&Tensor]) -> Tensor {
    let out = primitive_forward(kind, inputs).unwrap();
    if out.numel() == 1 && out.shape().is_empty() {
        return out;
    }
    let proj = t(&proj_coeffs(out.numel()), out.shape());
    out.mul(&proj)
        .unwrap()
        .mean_all()
        .unwrap()
        .scale(out.numel() as f32)
        .unwrap()
}

/// Central-difference check of every input gradient of one primitive.
fn gradcheck(kind: &OpKind, input_data: &[(Vec<f32>, Vec<usize>)]) {
    let inputs: Vec<Tensor> = input_data
        .iter()
        .map(|(d, s)| Tensor::input(d.clone(), s).unwrap())
        .collect();
    let refs: Vec<&Tensor> = inputs.iter().collect();
    let loss = objective(kind, &refs);
    backward(&loss).unwrap();
    let analytic: Vec<Vec<f32>> = inputs.iter().map(|p| p.grad_or_zeros()).collect();

    let eval = |ti: usize, j: usize, x: f32| -> f64 {
        let consts: Vec<Tensor> = input_data
            .iter()
            .enumerate()
            .map(|(i, (d, s))| {
                let mut d = d.clone();
                if i == ti {
                    d[j] = x;
                }
                t(&d, s)
            })
            .collect();
        let refs: Vec<&Tensor> = consts.iter().collect();
        objective(kind, &refs).item() as f64
    };

    for (ti, (d, _)) in input_data.iter().enumerate() {
        for j in 0..d.len() {
            let h = 1e-2 * (d[j].abs() as f64).max(1.0);
            let xp = (d[j] as f64 + h) as f32;
            let xm = (d[j] as f64 - h) as f32;
            let numeric = (eval(ti, j, xp) - eval(ti, j, xm)) / (xp as f64 - xm as f64);
            let ana = analytic[ti][j] as f64;
            let denom = numeric.abs().max(1e-3);
            assert!(
                (ana - numeric).abs() / denom <= 1e-3,
                "{kind:?} input {ti} coord {j}: analytic {ana} vs numeric {numeric}"
            );
        }
    }
}

#[test]
fn gradcheck_all_primitives() {
    let a23 = (vec![0.3, -1.2, 0.7, 1.5, -0.4, 0.9], vec![2usize, 3]);
    let b32 = (vec![0.8, -0.6, 1.1, 0.2, -0.9, 0.4], vec![3usize, 2]);
    let a24 = (vec![0.5, -0.7, 1.3, -0.2, 0.9, 1.8, -1.1, 0.4], vec![2usize, 4]);
    let v3 = (vec![0.6, -1.4, 0.25], vec![3usize]);
    let cases: Vec<(OpKind, Vec<(Vec<f32>, Vec<usize>)>)> = vec![
        (OpKind::MatMul, vec![a23.clone(), b32.clone()]),
        (OpKind::Add, vec![a23.clone(), (vec![1.0, 0.2, -0.5, 0.7, 1.1, -0.3], vec![2, 3])]),
        (OpKind::Add, vec![a23.clone(), v3.clone()]),
        (OpKind::Add, vec![a23.clone(), (vec![0.9, -0.4, 1.2], vec![1, 3])]),
        (OpKind::Mul, vec![a23.clone(), (vec![1.0, 0.2, -0.5, 0.7, 1.1, -0.3], vec![2, 3])]),
        (OpKind::Mul, vec![a23.clone(), v3.clone()]),
        (OpKind::Mul, vec![a23.clone(), (vec![0.9, -0.4, 1.2], vec![1, 3])]),
        (OpKind::Scale(1.7), vec![a23.clone()]),
        (OpKind::SoftmaxLast, vec![a24.clone()]),
        (OpKind::LayerNormLast(1e-5), vec![a24.clone()]),
        (OpKind::Gelu, vec![(vec![-1.8, -0.5, 0.0, 0.6, 1.9], vec![5])]),
        (
            OpKind::Lookup(vec![2, 0, 1, 0]),
            vec![(vec![0.4, -0.8, 1.2, 0.3, -0.5, 0.9], vec![3, 2])],
        ),
        (
            OpKind::Concat(0),
            vec![(vec![0.2, -0.6, 1.0], vec![1, 3]), a23.clone()],
        ),
        (
            OpKind::Concat(1),
            vec![(vec![0.5, -1.1], vec![2, 1]), (vec![0.3, 0.8, -0.2, 1.4], vec![2, 2])],
        ),
        (OpKind::Slice { axis: 1, start: 1, len: 2 }, vec![a24.clone()]),
        (OpKind::Transpose2, vec![a23.clone()]),
        (OpKind::MeanAll, vec![a23.clone()]),
        (
            OpKind::CrossEntropy {
                targets: vec![1, 3, 0],
                weights: Some(vec![1.0, 0.5, 2.0]),
            },
            vec![(
                vec![0.2, 1.1, -0.7, 0.4, -0.3, 0.8, 1.6, -1.2, 0.5, 0.0, -0.9, 1.3],
                vec![3, 4],
            )],
        ),
        (
            OpKind::CrossEntropy { targets: vec![2, 0], weights: None },
            vec![(vec![0.7, -0.4, 1.2, -0.8, 0.3, 0.6], vec![2, 3])],
        ),
    ];
    for (kind, inputs) in &cases {
        gradcheck(kind, inputs);
    }
}

#[test]
fn matmul_identity_and_shape_error() {
    let a = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
    let eye = t(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[3, 3]);
    assert_eq!(a.matmul(&eye).unwrap().to_vec(), a.to_vec());
    assert!(matches!(
        eye.matmul(&t(&[1.0, 2.0], &[2, 1])),
        Err(TensorError::ShapeMismatch { .. })
    ));
}

#[test]
fn add_broadcasts_rows() {
    let a = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
    let b = t(&[10.0, 20.0, 30.0], &[3]);
    assert_eq!(
        a.add(&b).unwrap().to_vec(),
        vec![11.0, 22.0, 33.0, 14.0, 25.0, 36.0]
    );
    assert!(a.add(&t(&[1.0, 2.0], &[2])).is_err());
}

#[test]
fn softmax_rows_are_distributions() {
    let x = t(&[3.0, 1.0, -2.0, 0.5, 0.5, 0.5], &[2, 3]);
    let y = x.softmax_last().unwrap();
    let d = y.to_vec();
    for r in 0..2 {
        let s: f32 = d[r * 3..(r + 1) * 3].iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
    // uniform logits give the uniform distribution
    for &p in &d[3..6] {
        assert!((p - 1.0 / 3.0).abs() < 1e-7);
    }
}

#[test]
fn layer_norm_standardizes_rows() {
    let x = t(&[2.0, 4.0, 6.0, 8.0, -1.0, 0.0, 3.0, 10.0], &[2, 4]);
    let y = x.layer_norm_last(1e-6).unwrap();
    let d = y.to_vec();
    for r in 0..2 {
        let row = &d[r * 4..(r + 1) * 4];
        let mean: f32 = row.iter().sum::<f32>() / 4.0;
        let var: f32 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4);
    }
}

#[test]
fn gelu_matches_reference_points() {
    let y = t(&[1.0, -0.5, 0.0], &[3]).gelu().unwrap();
    let d = y.to_vec();
    assert!((d[0] - 0.841_191_99).abs() < 1e-6);
    assert!((d[1] - -0.154_285_99).abs() < 1e-6);
    assert_eq!(d[2], 0.0);
}

#[test]
fn cross_entropy_reference_values() {
    // peaked logits: loss = ln(e^10 + 2) - 10
    let peaked = t(&[10.0, 0.0, 0.0], &[1, 3]);
    let loss = peaked.cross_entropy_with_logits(&[0], None).unwrap().item();
    assert!((loss as f64 - 9.079_573_746_717_529e-5).abs() < 1e-9);
    // uniform logits: loss = ln(V)
    let unif = t(&[1.0; 4], &[1, 4]);
    let loss = unif.cross_entropy_with_logits(&[2], None).unwrap().item();
    assert!((loss as f64 - 4.0f64.ln()).abs() < 1e-7);
}

#[test]
fn cross_entropy_weights_mask_and_normalize() {
    let base = t(&[0.4, -0.2, 1.0], &[1, 3]);
    let want = base.cross_entropy_with_logits(&[2], None).unwrap().item();
    // a zero-weight row with wild logits must not contribute
    let two = t(&[0.4, -0.2, 1.0, 500.0, -500.0, 0.0], &[2, 3]);
    let got = two
        .cross_entropy_with_logits(&[2, 1], Some(&[1.0, 0.0]))
        .unwrap()
        .item();
    assert!((got - want).abs() < 1e-7);
    // uniform scaling of the weights cancels
    let same = t(&[0.4, -0.2, 1.0, 0.4, -0.2, 1.0], &[2, 3]);
    let w2 = same
        .cross_entropy_with_logits(&[2, 2], Some(&[2.0, 2.0]))
        .unwrap()
        .item();
    assert!((w2 - want).abs() < 1e-7);
    // all-zero weights are rejected
    assert!(same
        .cross_entropy_with_logits(&[2, 2], Some(&[0.0, 0.0]))
        .is_err());
}

#[test]
fn concat_slice_transpose_roundtrip() {
    let a = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
    let cat = Tensor::concat(&[&a, &a], 0).unwrap();
    assert_eq!(cat.shape(), &[4, 3]);
    let back = cat.slice(0, 2, 2).unwrap();
    assert_eq!(back.to_vec(), a.to_vec());

    let wide = Tensor::concat(&[&a, &a], 1).unwrap();
    assert_eq!(wide.shape(), &[2, 6]);
    assert_eq!(wide.slice(1, 3, 3).unwrap().to_vec(), a.to_vec());

    assert_eq!(a.transpose2().unwrap().transpose2().unwrap().to_vec(), a.to_vec());
}

#[test]
fn lookup_gathers_and_validates() {
    let table = t(&[0.0, 1.0, 10.0, 11.0, 20.0, 21.0], &[3, 2]);
    let got = table.lookup(&[2, 0]).unwrap();
    assert_eq!(got.to_vec(), vec![20.0, 21.0, 0.0, 1.0]);
    assert!(matches!(
        table.lookup(&[3]),
        Err(TensorError::IdOutOfRange { id: 3, rows: 3 })
    ));
}

#[test]
fn backward_requires_scalar_loss() {
    let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
    let y = x.scale(2.0).unwrap();
    assert!(matches!(backward(&y), Err(TensorError::NonScalarLoss { .. })));
}

#[test]
fn gradients_accumulate_across_uses() {
    // z = mean(2x + 3x) -> dz/dx_i = 5 / n
    let x = Tensor::param(vec![1.0, -1.0], &[2]).unwrap();
    let loss = x
        .scale(2.0)
        .unwrap()
        .add(&x.scale(3.0).unwrap())
        .unwrap()
        .mean_all()
        .unwrap();
    backward(&loss).unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.5, 2.5]);

    // same tensor on both sides of mul: d(x*x) = 2x
    let y = Tensor::param(vec![3.0], &[1]).unwrap();
    let loss = y.mul(&y).unwrap().mean_all().unwrap();
    backward(&loss).unwrap();
    assert_eq!(y.grad().unwrap(), vec![6.0]);
}

#[test]
fn untouched_parameter_has_zero_gradient() {
    let used = Tensor::param(vec![1.0], &[1]).unwrap();
    let unused = Tensor::param(vec![5.0], &[1]).unwrap();
    let loss = used.mean_all().unwrap();
    backward(&loss).unwrap();
    assert!(unused.grad().is_none());
    assert_eq!(unused.grad_or_zeros(), vec![0.0]);
}

#[test]
fn construction_checks_lengths() {
    assert!(Tensor::from_vec(vec![1.0; 5], &[2, 3]).is_err());
    let p = Tensor::param(vec![0.0; 4], &[2, 2]).unwrap();
    assert!(p.set_data(&[1.0; 3]).is_err());
}

#[test]
fn adam_matches_hand_recurrence() {
    let p = Tensor::param(vec![1.0, -2.0], &[2]).unwrap();
    let params: NamedParams = vec![("p".into(), p.clone())];
    let (b1, b2, eps, wd, lr) = (0.9, 0.999, 1e-8, 0.1, 0.05);
    let mut state = AdamState::new(&params, b1, b2, eps, wd, 0.0);

    let grads = [[0.5f64, -1.0], [-0.25, 0.75], [1.5, 0.1]];
    let mut x = [1.0f64, -2.0];
    let (mut m, mut v) = ([0.0f64; 2], [0.0f64; 2]);
    for (step, g) in grads.iter().enumerate() {
        p.zero_grad();
        p.accumulate_grad(&[g[0] as f32, g[1] as f32]);
        state.step(&params, lr).unwrap();

        let t = (step + 1) as i32;
        for j in 0..2 {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let mh = m[j] / (1.0 - b1.powi(t));
            let vh = v[j] / (1.0 - b2.powi(t));
            x[j] -= lr * (mh / (vh.sqrt() + eps) + wd * x[j]);
        }
    }
    let got = p.to_vec();
    for j in 0..2 {
        assert!(
            (got[j] as f64 - x[j]).abs() < 1e-5,
            "coord {j}: {} vs {}",
            got[j],
            x[j]
        );
    }
    assert_eq!(state.step_count(), 3);
}

#[test]
fn adam_clips_by_global_norm() {
    // norm of [3,4] is 5; clipping to 1 must equal feeding grads/5
    let run = |grad: [f32; 2], clip: f64| -> (Vec<f32>, f64) {
        let p = Tensor::param(vec![0.5, -0.5], &[2]).unwrap();
        let params: NamedParams = vec![("p".into(), p.clone())];
        let mut state = AdamState::new(&params, 0.9, 0.999, 1e-8, 0.0, clip);
        p.accumulate_grad(&grad);
        let norm = state.step(&params, 0.1).unwrap();
        (p.to_vec(), norm)
    };
    let (clipped, norm) = run([3.0, 4.0], 1.0);
    let (scaled, _) = run([0.6, 0.8], 0.0);
    assert!((norm - 5.0).abs() < 1e-6);
    assert_eq!(clipped, scaled);
}

#[test]
fn adam_rejects_non_finite_gradients() {
    let p = Tensor::param(vec![0.0], &[1]).unwrap();
    let params: NamedParams = vec![("layer.weight".into(), p.clone())];
    let mut state = AdamState::new(&params, 0.9, 0.999, 1e-8, 0.0, 0.0);
    p.accumulate_grad(&[f32::NAN]);
    match state.step(&params, 0.1) {
        Err(TensorError::NonFiniteGrad { name }) => assert_eq!(name, "layer.weight"),
        other => panic!("expected a non-finite gradient error, got {other:?}"),
    }
}

#[test]
fn diamond_graph_sums_both_paths() {
    let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
    let b = x.scale(2.0).unwrap();
    let c = x.scale(3.0).unwrap();
    let loss = b.add(&c).unwrap().mean_all().unwrap();
    backward(&loss).unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.5, 2.5]);
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(row in proptest::collection::vec(-8.0f32..8.0, 2..12)) {
        let n = row.len();
        let y = t(&row, &[1, n]).softmax_last().unwrap();
        let d = y.to_vec();
        let sum: f64 = d.iter().map(|&p| p as f64).sum();
        prop_assert!((sum - 1.0).abs() < 1e-5);
        prop_assert!(d.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn layer_norm_is_shift_invariant(
        row in proptest::collection::vec(-4.0f32..4.0, 4..10),
        shift in -10.0f32..10.0,
    ) {
        let n = row.len();
        let base = t(&row, &[1, n]).layer_norm_last(1e-5).unwrap().to_vec();
        let shifted_in: Vec<f32> = row.iter().map(|&v| v + shift).collect();
        let shifted = t(&shifted_in, &[1, n]).layer_norm_last(1e-5).unwrap().to_vec();
        for (a, b) in base.iter().zip(&shifted) {
            prop_assert!((a - b).abs() < 2e-3);
        }
    }

    #[test]
    fn mean_all_matches_f64_oracle(vals in proptest::collection::vec(-100.0f32..100.0, 1..40)) {
        let n = vals.len();
        let got = t(&vals, &[n]).mean_all().unwrap().item() as f64;
        let want: f64 = vals.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        prop_assert!((got - want).abs() < 1e-4);
    }
}
