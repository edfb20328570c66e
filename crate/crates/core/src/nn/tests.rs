use alloc::vec;
use alloc::vec::Vec;
use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::tensor::gradcheck;
use crate::tensor::Graph;

fn random_input(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut r = rng::stream(&[seed]);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random::<f32>() * 2.0 - 1.0).collect()).unwrap()
}

fn spatial(s: &[usize]) -> [usize; 3] {
    [s[2], s[3], s[4]]
}

#[test]
fn paper_segresnet_shapes() {
    let spec = ModelSpec::paper_segresnet();
    let m = Model::build(&spec).unwrap();
    let (heads, t) = m.trace(1, [128, 128, 96]).unwrap();
    let stages = t.spatial_marks(|tag| match tag {
        Tag::Stage(i) => Some(i),
        _ => None,
    });
    assert_eq!(stages.last().unwrap().1, [4, 4, 3]);
    assert_eq!(heads.len(), 4);
    let dims: Vec<[usize; 3]> = heads.iter().map(|h| spatial(h)).collect();
    assert_eq!(dims, vec![[128, 128, 96], [64, 64, 48], [32, 32, 24], [16, 16, 12]]);
    assert!(heads.iter().all(|h| h[1] == 2));
    let audit = audit_shapes(&spec, [128, 128, 96]).unwrap();
    assert_eq!(audit.param_count, m.param_count());
    assert_eq!(audit.head_dims, dims);
}

#[test]
fn paper_resenc_shapes() {
    let spec = ModelSpec::paper_resenc();
    let m = Model::build(&spec).unwrap();
    let (heads, t) = m.trace(1, [224, 160, 192]).unwrap();
    let deepest = t.spatial_marks(|tag| (tag == Tag::Stage(5)).then_some(5));
    assert_eq!(deepest[0].1, [7, 5, 6]);
    assert_eq!(heads.len(), 4);
    let audit = audit_shapes(&spec, [224, 160, 192]).unwrap();
    assert_eq!(audit.stage_channels, vec![32, 64, 128, 256, 320, 320]);
    assert_eq!(audit.param_count, m.param_count());
}

#[test]
fn indivisible_and_mismatched_specs() {
    let spec = ModelSpec::paper_segresnet();
    let m = Model::build(&spec).unwrap();
    assert_eq!(
        m.trace(1, [30, 30, 30]).unwrap_err(),
        NnError::IndivisibleInput {
            dims: [30; 3],
            factor: 32
        }
    );
    assert!(matches!(
        audit_shapes(&spec, [30; 3]),
        Err(NnError::IndivisibleInput { .. })
    ));

    let mut bad = ModelSpec::desk_resenc();
    bad.features_per_stage.pop();
    assert!(matches!(Model::build(&bad), Err(NnError::SpecMismatch(_))));
    let mut bad = ModelSpec::desk_segresnet();
    bad.deep_supervision_levels = 3;
    assert!(matches!(Model::build(&bad), Err(NnError::SpecMismatch(_))));
}

#[test]
fn width_scaling_floors_at_minimum() {
    let s = ModelSpec::desk_segresnet();
    assert_eq!(s.scaled_features(), vec![4, 8, 16]);
    let d = ModelSpec::desk_densenet();
    assert_eq!(d.scaled_features(), vec![4; 4]);
    let tiny = ModelSpec {
        width_scale: 0.01,
        ..ModelSpec::paper_resenc()
    };
    assert!(tiny.scaled_features().iter().all(|&f| f == MIN_CHANNELS));
}

fn run(model: &Model, store: &ParamStore<f32>, x: &Tensor<f32>, train: bool) -> (Vec<Tensor<f32>>, Vec<Vec<f32>>) {
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let mut b = GraphBackend::new(&mut g, store, train, [7, 0]);
    let heads = model.forward(&mut b, xv).unwrap();
    let mut loss = None;
    for &h in &heads {
        let s = b.graph.mean(h);
        loss = Some(match loss {
            None => s,
            Some(l) => b.graph.add(l, s).unwrap(),
        });
    }
    let outs = heads.iter().map(|&h| b.graph.value(h).clone()).collect();
    let grads = b.graph.backward(loss.unwrap()).unwrap();
    (outs, b.param_grads(&grads))
}

#[test]
fn desk_segresnet_forward_backward() {
    let m = Model::build(&ModelSpec::desk_segresnet()).unwrap();
    let store = ParamStore::init(&m, 1);
    let x = random_input(&[1, 2, 32, 32, 32], 3);
    let (outs, grads) = run(&m, &store, &x, true);
    assert_eq!(outs[0].shape(), &[1, 2, 32, 32, 32]);
    assert_eq!(outs[1].shape(), &[1, 2, 16, 16, 16]);
    assert_eq!(grads.len(), m.params().len());
    assert!(grads.iter().flatten().all(|g| g.is_finite()));
}

#[test]
fn desk_resenc_forward_backward() {
    let m = Model::build(&ModelSpec::desk_resenc()).unwrap();
    let store = ParamStore::init(&m, 1);
    let x = random_input(&[1, 2, 32, 32, 32], 4);
    let (outs, grads) = run(&m, &store, &x, true);
    assert_eq!(outs.len(), 2);
    assert_eq!(outs[1].shape(), &[1, 2, 16, 16, 16]);
    let stem = m.params().iter().position(|p| p.name == "stem.conv.weight").unwrap();
    assert!(grads[stem].iter().any(|&g| g != 0.0));
}

#[test]
fn desk_densenet_single_logit_and_eval_determinism() {
    let m = Model::build(&ModelSpec::desk_densenet()).unwrap();
    let store = ParamStore::init(&m, 2);
    let x = random_input(&[2, 1, 32, 32, 32], 5);
    let (a, _) = run(&m, &store, &x, false);
    let (b, _) = run(&m, &store, &x, false);
    assert_eq!(a[0].shape(), &[2, 1]);
    assert_eq!(a, b);
    let x = random_input(&[1, 1, 64, 64, 64], 6);
    let (e, _) = run(&m, &store, &x, false);
    let (t, _) = run(&m, &store, &x, true);
    assert_ne!(e, t, "dropout must change train-mode output");
}

#[test]
fn paper_classifier_accepts_resize_target() {
    let spec = ModelSpec::paper_densenet121();
    let a = audit_shapes(&spec, [400, 400, 326]).unwrap();
    assert_eq!(
        a.stage_dims,
        vec![[100, 100, 81], [50, 50, 40], [25, 25, 20], [12, 12, 10]]
    );
    assert_eq!(a.stage_channels, vec![256, 512, 1024, 1024]);
    let m = Model::build(&spec).unwrap();
    assert_eq!(m.param_count(), a.param_count);
    let (heads, _) = m.trace(1, [400, 400, 326]).unwrap();
    assert_eq!(heads, vec![vec![1, 1]]);
    assert!(matches!(m.check_input([3, 64, 64]), Err(NnError::SpecMismatch(_))));
}

#[test]
fn init_is_seeded() {
    let m = Model::build(&ModelSpec::desk_resenc()).unwrap();
    assert_eq!(ParamStore::<f32>::init(&m, 9), ParamStore::init(&m, 9));
    assert_ne!(ParamStore::<f32>::init(&m, 9), ParamStore::init(&m, 10));
    ParamStore::<f32>::init(&m, 9).check(&m).unwrap();
}

fn gradcheck_model(spec: &ModelSpec, dims: [usize; 3]) -> f64 {
    let m = Model::build(spec).unwrap();
    let store: ParamStore<f64> = ParamStore::init(&m, 11);
    let x = random_input(&[1, spec.in_channels, dims[0], dims[1], dims[2]], 12).cast::<f64>();
    let mut inputs = vec![x];
    inputs.extend(store.tensors.iter().cloned());
    let weights = random_input(&[4096], 13).cast::<f64>();
    let r = gradcheck::check(&inputs, 1e-5, 1e-6, |g, vars| {
        let mut b = GraphBackend::new(g, &store, false, [0, 0]);
        for (i, &v) in vars[1..].iter().enumerate() {
            b.bind(ParamId(i), v);
        }
        let heads = model_forward(&m, &mut b, vars[0]);
        let mut loss = None;
        for h in heads {
            let n = b.graph.value(h).numel();
            let w = b.graph.mul_const(h, weights.data()[..n].to_vec())?;
            let s = b.graph.sum(w);
            loss = Some(match loss {
                None => s,
                Some(l) => b.graph.add(l, s)?,
            });
        }
        Ok(loss.unwrap())
    })
    .unwrap();
    r.max_rel_err
}

fn model_forward(m: &Model, b: &mut GraphBackend<'_, f64>, x: crate::tensor::Var) -> Vec<crate::tensor::Var> {
    m.forward(b, x).unwrap()
}

#[test]
fn tiny_models_pass_gradcheck() {
    let seg = ModelSpec {
        stages: 2,
        blocks_per_stage: vec![1, 1],
        features_per_stage: vec![4, 4],
        deep_supervision_levels: 1,
        width_scale: 1.0,
        ..ModelSpec::desk_segresnet()
    };
    assert!(gradcheck_model(&seg, [4, 4, 4]) < 1e-4);
    let res = ModelSpec {
        stages: 2,
        blocks_per_stage: vec![1, 2],
        features_per_stage: vec![4, 5],
        deep_supervision_levels: 1,
        ..ModelSpec::desk_resenc()
    };
    assert!(gradcheck_model(&res, [4, 4, 4]) < 1e-4);
    let cls = ModelSpec {
        stages: 2,
        blocks_per_stage: vec![1, 1],
        features_per_stage: vec![4, 4],
        dropout_rate: 0.0,
        width_scale: 1.0,
        ..ModelSpec::desk_densenet()
    };
    assert!(gradcheck_model(&cls, [16, 16, 16]) < 1e-4);
}

fn arb_spec() -> impl Strategy<Value = (ModelSpec, [usize; 3])> {
    (0usize..3, 2usize..5, any::<u64>()).prop_map(|(arch, stages, seed)| {
        let mut r = rng::stream(&[seed]);
        let arch = [Arch::SegResNet, Arch::ResEncUNet, Arch::DenseNetCls][arch];
        let stages = if arch == Arch::DenseNetCls {
            stages.min(3)
        } else {
            stages
        };
        let spec = ModelSpec {
            arch,
            in_channels: r.random_range(1..3),
            out_channels: r.random_range(1..3),
            stages,
            blocks_per_stage: (0..stages).map(|_| r.random_range(1..4)).collect(),
            features_per_stage: (0..stages).map(|_| r.random_range(2..24)).collect(),
            deep_supervision_levels: if arch == Arch::DenseNetCls {
                0
            } else {
                r.random_range(1..stages)
            },
            dropout_rate: 0.0,
            width_scale: [0.5, 1.0, 2.0][r.random_range(0..3)],
        };
        let dims = if arch == Arch::DenseNetCls {
            let lo = 1 << (stages + 1);
            [0; 3].map(|_| r.random_range(lo..3 * lo))
        } else {
            let f = spec.input_divisor();
            [0; 3].map(|_| f * r.random_range(1..4))
        };
        (spec, dims)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn audit_matches_traced_model((spec, dims) in arb_spec()) {
        let m = Model::build(&spec).unwrap();
        let audit = audit_shapes(&spec, dims).unwrap();
        prop_assert_eq!(audit.param_count, m.param_count());
        let (heads, t) = m.trace(2, dims).unwrap();
        let stages = t.spatial_marks(|tag| match tag { Tag::Stage(i) => Some(i), _ => None });
        prop_assert_eq!(stages.iter().map(|s| s.1).collect::<Vec<_>>(), audit.stage_dims.clone());
        for (i, ch) in audit.stage_channels.iter().enumerate() {
            prop_assert_eq!(t.channels_at(Tag::Stage(i)), Some(*ch));
        }
        if spec.arch == Arch::DenseNetCls {
            prop_assert_eq!(heads, vec![vec![2, spec.out_channels]]);
        } else {
            prop_assert_eq!(heads.len(), spec.deep_supervision_levels);
            for (j, h) in heads.iter().enumerate() {
                prop_assert_eq!(spatial(h), dims.map(|d| d >> j));
                prop_assert_eq!(spatial(h), audit.head_dims[j]);
            }
            for (i, s) in audit.stage_dims.iter().enumerate() {
                prop_assert_eq!(*s, dims.map(|d| d >> i));
            }
        }
    }
}
