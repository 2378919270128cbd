//! A pathway layer whose FC branch carries a huge fixed prior precision
//! trains into a translation-equivariant layer.

use symmetria_core::autodiff::Tape;
use symmetria_core::data::{
    gen_glyph_quadrant, standardise, standardise_with, translate, LabelMode, TaskSpec, Transform,
};
use symmetria_core::layers::{build_network, BranchKind, FeatureShape, LayerPlan};
use symmetria_core::parallel::Sequential;
use symmetria_core::priors::{PriorConfig, PriorPlacement, PriorSpec};
use symmetria_core::tensor::Tensor;
use symmetria_core::training::{Mode, TrainConfig, TrainState, Trainer};

#[test]
fn huge_fc_precision_gives_an_equivariant_layer() {
    let task = TaskSpec {
        base_classes: 4,
        label_mode: LabelMode::ClassOnly,
        transform: Transform::None,
        canvas: [12, 12],
        seed: 5,
        noise: 0.1,
    };
    let mut train = gen_glyph_quadrant(&task, 256).unwrap();
    let mut test = gen_glyph_quadrant(&TaskSpec { seed: 6, ..task.clone() }, 16).unwrap();
    let (m, s) = standardise(&mut train);
    standardise_with(&mut test, m, s);
    let plan = LayerPlan {
        out_channels: 4,
        filter: 3,
        menu: vec![BranchKind::Fc, BranchKind::Conv],
        pool: false,
        relu: false,
    };
    let net = build_network(FeatureShape::new(1, 1, 12, 12), &[plan], 4).unwrap();
    let prior = PriorConfig::build(&net, |_, k| PriorSpec {
        placement: PriorPlacement::OnWeights,
        rho: if k == BranchKind::Fc { 1e12f64.ln() } else { 0.0 },
    })
    .unwrap();
    let cfg = TrainConfig { epochs: 200, batch_size: 64, seed: 2, ..TrainConfig::default() };
    let mut trainer = Trainer::new(&net, &train, None, &prior, &cfg, Mode::Map, &Sequential).unwrap();
    let mut state = TrainState::new(&net, &prior, &cfg);
    trainer.run(&mut state).unwrap();
    assert_eq!(state.rhos, prior.rhos());

    let forward = |x: &Tensor| {
        let mut tape = Tape::new();
        let tr = net.forward(&mut tape, &state.params, x).unwrap();
        let layer = &tr.layers[0];
        (tape.value(layer.branches[0].output).clone(), tape.value(layer.output).clone())
    };
    let (fc, out) = forward(&test.images);
    let fc_max = fc.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(fc_max < 1e-6, "FC contribution {fc_max:e}");

    let shape = [4, 12, 12];
    let mut worst = 0.0f64;
    for (dx, dy) in [(1, 0), (0, 1), (3, 5), (11, 7)] {
        let moved: Vec<f64> = (0..test.len()).flat_map(|i| translate(test.image(i), [1, 12, 12], dx, dy)).collect();
        let (_, out_moved) = forward(&Tensor::new(vec![test.len(), 1, 12, 12], moved).unwrap());
        let per = shape.iter().product::<usize>();
        for i in 0..test.len() {
            let expect = translate(&out.data()[i * per..(i + 1) * per], shape, dx, dy);
            for (a, b) in expect.iter().zip(&out_moved.data()[i * per..(i + 1) * per]) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    assert!(worst < 1e-5, "equivariance deviation {worst:e}");
}
