use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::groups::{act, GridAction, GroupFeatureMap};
use crate::oracle;

fn rand_t(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn shift(x: &Tensor, dx: usize, dy: usize) -> Tensor {
    let s = x.shape();
    let (h, w) = (s[2], s[3]);
    Tensor::from_fn(s, |i| x.get(&[i[0], i[1], (i[2] + h - dx) % h, (i[3] + w - dy) % w]))
}

#[test]
fn fc_identity_map() {
    let theta =
        Tensor::from_fn(&[2, 2, 3, 3, 3, 3], |i| if i[0] == i[1] && i[2] == i[4] && i[3] == i[5] { 1.0 } else { 0.0 });
    let x = rand_t(&[2, 2, 3, 3], 1);
    assert_eq!(fc_forward(&theta, &x).unwrap(), x);
}

#[test]
fn fc_all_ones_sums_to_four() {
    let y = fc_forward(&Tensor::full(&[1, 1, 2, 2, 2, 2], 1.0), &Tensor::full(&[1, 1, 2, 2], 1.0)).unwrap();
    assert!(y.data().iter().all(|&v| v == 4.0));
}

#[test]
fn fc_zero_weights() {
    let y = fc_forward(&Tensor::zeros(&[3, 2, 2, 2, 2, 2]), &rand_t(&[2, 2, 2, 2], 2)).unwrap();
    assert_eq!(y.max_abs(), 0.0);
}

#[test]
fn fc_matches_oracle() {
    let theta = rand_t(&[3, 2, 4, 5, 4, 5], 3);
    let x = rand_t(&[2, 2, 4, 5], 4);
    assert!(fc_forward(&theta, &x).unwrap().max_abs_diff(&oracle::fc(&theta, &x)) < 1e-12);
}

#[test]
fn conv_unit_filter_scales() {
    let x = rand_t(&[2, 1, 4, 4], 5);
    let y = conv_forward(&Tensor::full(&[1, 1, 1, 1], 2.0), &x).unwrap();
    assert_eq!(y, x.scale(2.0));
}

#[test]
fn conv_commutes_with_shift() {
    let theta = rand_t(&[3, 2, 3, 3], 6);
    let x = rand_t(&[2, 2, 5, 6], 7);
    for (dx, dy) in [(1, 0), (0, 1), (2, 3), (4, 5)] {
        let a = conv_forward(&theta, &shift(&x, dx, dy)).unwrap();
        let b = shift(&conv_forward(&theta, &x).unwrap(), dx, dy);
        assert_eq!(a, b);
    }
}

#[test]
fn averaging_filter_on_delta() {
    let mut x = Tensor::zeros(&[1, 1, 5, 5]);
    x.set(&[0, 0, 0, 0], 1.0);
    let y = conv_forward(&Tensor::full(&[1, 1, 3, 3], 1.0 / 9.0), &x).unwrap();
    for px in 0..5 {
        for py in 0..5 {
            let near = |v: usize| v == 0 || v == 1 || v == 4;
            let want = if near(px) && near(py) { 1.0 / 9.0 } else { 0.0 };
            assert_eq!(y.get(&[0, 0, px, py]), want);
        }
    }
}

#[test]
fn conv_matches_oracle() {
    for (s, seed) in [(1, 10), (3, 11), (5, 12)] {
        let theta = rand_t(&[4, 3, s, s], seed);
        let x = rand_t(&[2, 3, 6, 5], seed + 100);
        assert!(conv_forward(&theta, &x).unwrap().max_abs_diff(&oracle::conv(&theta, &x)) < 1e-12);
    }
}

#[test]
fn ffc_constant_weights_sum_input() {
    let x = rand_t(&[2, 1, 3, 3], 13);
    let y = ffc_forward(&Tensor::full(&[1, 1, 3, 3], 1.0), &Tensor::full(&[1, 1, 3, 3], 1.0), &x).unwrap();
    for b in 0..2 {
        let total: f64 = x.data()[b * 9..(b + 1) * 9].iter().sum();
        assert!(y.data()[b * 9..(b + 1) * 9].iter().all(|v| (v - total).abs() < 1e-14));
    }
}

#[test]
fn ffc_matches_dense_product() {
    for seed in 0..5 {
        let t1 = rand_t(&[3, 4, 4, 4], 20 + seed);
        let t2 = rand_t(&[3, 4, 4, 4], 40 + seed);
        let x = rand_t(&[2, 4, 4, 4], 60 + seed);
        let dense = oracle::fc(&oracle::ffc_dense(&t1, &t2), &x);
        assert!(ffc_forward(&t1, &t2, &x).unwrap().max_abs_diff(&dense) < 1e-12);
    }
}

#[test]
fn ffc_zero_output_side() {
    let y = ffc_forward(&Tensor::zeros(&[2, 2, 3, 3]), &rand_t(&[2, 2, 3, 3], 1), &rand_t(&[1, 2, 3, 3], 2)).unwrap();
    assert_eq!(y.max_abs(), 0.0);
}

fn random_basis(d: usize, c: usize, m: usize, span: f64, omega: f64, seed: u64) -> BasisConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BasisConfig {
        u: Tensor::from_fn(&[d, c, m], |_| rng.random_range(-1.0..1.0)),
        z: Tensor::from_fn(&[m, 2], |_| rng.random_range(-span..span)),
        omega,
    }
}

fn offsets(s: usize) -> Vec<(f64, f64)> {
    let k = (s / 2) as f64;
    (0..s * s).map(|i| ((i / s) as f64 - k, (i % s) as f64 - k)).collect()
}

#[test]
fn sconv_is_conv_of_materialized_filter() {
    let b = random_basis(3, 2, 5, 1.0, 0.8, 70);
    let x = rand_t(&[2, 2, 5, 5], 71);
    let filt = materialize_filter(&b, &basis::offset_domain(3)).unwrap().into_reshaped(&[3, 2, 3, 3]).unwrap();
    let direct = oracle::basis_field(&b.u, &b.z, b.omega, &offsets(3)).into_reshaped(&[3, 2, 3, 3]).unwrap();
    assert!(filt.max_abs_diff(&direct) < 1e-14);
    assert_eq!(sconv_forward(&b, 3, &x).unwrap(), conv_forward(&filt, &x).unwrap());
    let shifted = sconv_forward(&b, 3, &shift(&x, 2, 1)).unwrap();
    assert_eq!(shifted, shift(&sconv_forward(&b, 3, &x).unwrap(), 2, 1));
}

#[test]
fn sfc_is_ffc_of_materialized_fields() {
    let b1 = random_basis(2, 3, 4, 3.0, 0.6, 72);
    let b2 = random_basis(2, 3, 6, 3.0, 0.9, 73);
    let x = rand_t(&[2, 3, 4, 4], 74);
    let dom = basis::grid_domain(4, 4);
    let s1 = materialize_filter(&b1, &dom).unwrap().into_reshaped(&[2, 3, 4, 4]).unwrap();
    let s2 = materialize_filter(&b2, &dom).unwrap().into_reshaped(&[2, 3, 4, 4]).unwrap();
    assert_eq!(sfc_forward(&b1, &b2, &x).unwrap(), ffc_forward(&s1, &s2, &x).unwrap());
}

#[test]
fn sfc_zero_lengthscale_is_spatially_constant() {
    let b1 = random_basis(2, 2, 3, 3.0, 0.0, 75);
    let b2 = random_basis(2, 2, 3, 3.0, 0.0, 76);
    let x = rand_t(&[1, 2, 4, 4], 77);
    let y = sfc_forward(&b1, &b2, &x).unwrap();
    for d in 0..2 {
        let first = y.get(&[0, d, 0, 0]);
        assert!(y.data()[d * 16..(d + 1) * 16].iter().all(|v| (v - first).abs() < 1e-13));
    }
    // constant output is unchanged by any shift of the input
    let ys = sfc_forward(&b1, &b2, &shift(&x, 1, 3)).unwrap();
    assert!(ys.max_abs_diff(&y) < 1e-13);
}

#[test]
fn sfc_zero_values() {
    let mut b1 = random_basis(2, 2, 3, 3.0, 1.0, 78);
    b1.u = Tensor::zeros(&[2, 2, 3]);
    let b2 = random_basis(2, 2, 3, 3.0, 1.0, 79);
    assert_eq!(sfc_forward(&b1, &b2, &rand_t(&[1, 2, 4, 4], 80)).unwrap().max_abs(), 0.0);
}

fn p4_map(shape: &[usize], seed: u64) -> GroupFeatureMap {
    GroupFeatureMap::new(rand_t(shape, seed)).unwrap()
}

#[test]
fn gconv_is_p4_equivariant() {
    let n = 4;
    let p4 = GridAction::p4(n, n).unwrap();
    for (o_in, seed) in [(1, 90), (4, 91)] {
        let theta = rand_t(&[2, 2, o_in, 3, 3], seed);
        let x = p4_map(&[1, 2, o_in, n, n], seed + 10);
        let y = gconv_forward(&theta, &x).unwrap();
        for g in 0..p4.group().order() {
            let lhs = gconv_forward(&theta, &act(&p4, g, &x).unwrap()).unwrap();
            let rhs = act(&p4, g, &y).unwrap();
            assert!(lhs.tensor().max_abs_diff(rhs.tensor()) < 1e-12, "element {g}");
        }
    }
}

#[test]
fn gconv_matches_rotated_filter_oracle() {
    for (o_in, s) in [(1, 3), (4, 3), (4, 1), (1, 5)] {
        let theta = rand_t(&[3, 2, o_in, s, s], 92 + s as u64);
        let x = rand_t(&[2, 2, o_in, 5, 5], 93);
        let y = gconv_forward(&theta, &GroupFeatureMap::new(x.clone()).unwrap()).unwrap();
        assert!(y.tensor().max_abs_diff(&oracle::gconv(&theta, &x)) < 1e-12);
    }
}

#[test]
fn gconv_with_c4_trivial_filter_is_replicated_conv() {
    // filter constant over the fibre and symmetric under quarter turns
    let base = rand_t(&[2, 3, 3, 3], 94);
    let sym = Tensor::from_fn(&[2, 3, 3, 3], |i| {
        let mut acc = 0.0;
        let (mut a, mut b) = (i[2] as isize - 1, i[3] as isize - 1);
        for _ in 0..4 {
            acc += base.get(&[i[0], i[1], (a + 1) as usize, (b + 1) as usize]);
            (a, b) = (b, -a);
        }
        acc / 4.0
    });
    let theta = Tensor::from_fn(&[2, 3, 4, 3, 3], |i| sym.get(&[i[0], i[1], i[3], i[4]]));
    let x = rand_t(&[2, 3, 4, 5, 5], 95);
    let y = gconv_forward(&theta, &GroupFeatureMap::new(x.clone()).unwrap()).unwrap();
    let summed = Tensor::from_fn(&[2, 3, 5, 5], |i| (0..4).map(|r| x.get(&[i[0], i[1], r, i[2], i[3]])).sum());
    let c = conv_forward(&sym, &summed).unwrap();
    for r in 0..4 {
        let slice = Tensor::from_fn(&[2, 2, 5, 5], |i| y.tensor().get(&[i[0], i[1], r, i[2], i[3]]));
        assert!(slice.max_abs_diff(&c) < 1e-12);
    }
}

#[test]
fn gconv_identity_filter_copies_input() {
    let theta =
        Tensor::from_fn(
            &[2, 2, 4, 3, 3],
            |i| {
                if i[0] == i[1] && i[2] == 0 && i[3] == 1 && i[4] == 1 {
                    1.0
                } else {
                    0.0
                }
            },
        );
    let x = p4_map(&[1, 2, 4, 4, 4], 96);
    assert_eq!(gconv_forward(&theta, &x).unwrap(), x);
}

#[test]
fn pgconv_is_indicator_gconv() {
    let t1 = rand_t(&[3, 2, 3, 3], 97);
    let ext = Tensor::from_fn(&[3, 2, 4, 3, 3], |i| if i[2] == 0 { t1.get(&[i[0], i[1], i[3], i[4]]) } else { 0.0 });
    let x = p4_map(&[2, 2, 4, 5, 5], 98);
    let a = pgconv_forward(&t1, &x).unwrap();
    let b = gconv_forward(&ext, &x).unwrap();
    assert!(a.tensor().max_abs_diff(b.tensor()) < 1e-12);
}

#[test]
fn pgconv_is_p4_equivariant_and_pointwise() {
    let p4 = GridAction::p4(4, 4).unwrap();
    let t1 = rand_t(&[2, 2, 3, 3], 99);
    let x = p4_map(&[1, 2, 4, 4, 4], 100);
    let y = pgconv_forward(&t1, &x).unwrap();
    for g in 0..p4.group().order() {
        let lhs = pgconv_forward(&t1, &act(&p4, g, &x).unwrap()).unwrap();
        assert!(lhs.tensor().max_abs_diff(act(&p4, g, &y).unwrap().tensor()) < 1e-12);
    }
    // perturbing fibre slice 2 of the input only changes fibre slice 2
    let mut x2 = x.tensor().clone();
    for c in 0..2 {
        for p in 0..16 {
            let idx = [0, c, 2, p / 4, p % 4];
            let v = x2.get(&idx) + 1.0;
            x2.set(&idx, v);
        }
    }
    let y2 = pgconv_forward(&t1, &GroupFeatureMap::new(x2).unwrap()).unwrap();
    for r in 0..4 {
        let changed = (0..2).any(|d| {
            (0..16).any(|p| {
                let idx = [0, d, r, p / 4, p % 4];
                y2.tensor().get(&idx) != y.tensor().get(&idx)
            })
        });
        assert_eq!(changed, r == 2);
    }
}

#[test]
fn polyphase_basic_cases() {
    let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(polyphase_pool(&x).unwrap().data(), &[4.0]);
    let flat = Tensor::full(&[1, 2, 4, 4], 3.0);
    assert_eq!(select_components(&flat).unwrap(), vec![0]);
    assert!(polyphase_pool(&Tensor::zeros(&[1, 1, 3, 4])).is_err());
}

#[test]
fn polyphase_follows_shifts() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..20 {
        let x = Tensor::from_fn(&[1, 2, 6, 6], |_| rng.random_range(-1.0..1.0));
        let xs = shift(&x, 1, 0);
        let (c0, c1) = (select_components(&x).unwrap()[0], select_components(&xs).unwrap()[0]);
        let (i, j) = (c0 / 2, c0 % 2);
        // shifting by one row swaps the row parity of the winning component
        assert_eq!(c1, 2 * (1 - i) + j);
        let p0 = polyphase_pool(&x).unwrap();
        let p1 = polyphase_pool(&xs).unwrap();
        // the pooled map moves by i rows
        let want = shift(&p0, i, 0);
        assert_eq!(p1, want);
    }
}

#[test]
fn table_template_parameter_count() {
    let net = build_architecture(10, 32, 3, 10, &[vec![BranchKind::Conv]]).unwrap();
    assert_eq!(net.param_count(), 337_670);
    let m = net.param_count() as f64 / 1e6;
    assert!((0.25..0.35).contains(&m));
}

#[test]
fn ffc_count_is_twice_per_position() {
    let inp = FeatureShape::new(3, 1, 8, 8);
    let f = BranchSpec::new(BranchKind::Ffc, inp, 5, 1, 1, None).unwrap();
    assert_eq!(f.param_count(), 2 * 5 * 3 * 64);
    let d = BranchSpec::new(BranchKind::Fc, inp, 5, 1, 1, None).unwrap();
    assert_eq!(d.param_count(), 5 * 3 * 64 * 64);
}

#[test]
fn closed_form_counts() {
    let inp = FeatureShape::new(3, 1, 6, 6);
    let g = FeatureShape::new(3, 4, 6, 6);
    let cases = [
        (BranchKind::Fc, inp, 1, 4 * 3 * 36 * 36, 0),
        (BranchKind::Ffc, inp, 1, 2 * 4 * 3 * 36, 0),
        (BranchKind::Sfc, inp, 1, 4 * 3 * 36 + 2 * 36, 2),
        (BranchKind::Conv, inp, 1, 4 * 3 * 9, 0),
        (BranchKind::Sconv, inp, 1, 4 * 3 * 5 + 2 * 5, 1),
        (BranchKind::Gconv, g, 4, 4 * 3 * 4 * 9, 0),
        (BranchKind::Pgconv, g, 4, 4 * 3 * 9, 0),
    ];
    for (kind, shape, fib, want, omegas) in cases {
        let spec = BranchSpec::new(kind, shape, 4, fib, 3, None).unwrap();
        assert_eq!(spec.closed_form_count(), want, "{kind}");
        assert_eq!(spec.param_count(), want + omegas, "{kind}");
    }
}

#[test]
fn rejects_bad_specs() {
    let inp = FeatureShape::new(1, 1, 4, 6);
    assert!(BranchSpec::new(BranchKind::Conv, inp, 1, 1, 2, None).is_err());
    assert!(BranchSpec::new(BranchKind::Gconv, inp, 1, 4, 3, None).is_err());
    assert!(build_compact(2, 8, 1, 3, &[vec![], vec![BranchKind::Conv], vec![BranchKind::Conv]]).is_err());
}

#[test]
fn mixed_menu_runs_on_p4() {
    let menu = vec![BranchKind::Fc, BranchKind::Conv, BranchKind::Gconv];
    let net = build_architecture(2, 8, 1, 3, &[menu]).unwrap();
    let params = net.init(1);
    let logits = net.logits(&params, &rand_t(&[2, 1, 8, 8], 3)).unwrap();
    assert_eq!(logits.shape(), &[2, 3]);
    assert!(logits.all_finite());
}

#[test]
fn init_is_seeded() {
    let menu = vec![BranchKind::Ffc, BranchKind::Sconv, BranchKind::Sfc];
    let net = build_compact(2, 6, 1, 3, &[menu]).unwrap();
    assert_eq!(net.init(5), net.init(5));
    assert_ne!(net.init(5), net.init(6));
}

#[test]
fn residual_pathway_reconstructs_fc() {
    for (h, w, seed) in [(3, 3, 110), (4, 4, 111), (3, 5, 112)] {
        let theta = rand_t(&[2, 3, h, w, h, w], seed);
        let (res, bar) = decompose_residual(&theta).unwrap();
        assert!(res.add(&stationary_embedding(&bar).unwrap()).unwrap().max_abs_diff(&theta) < 1e-14);
        let x = rand_t(&[2, 3, h, w], seed + 1);
        let filt = residue_filter_to_conv(&bar).unwrap();
        let path = fc_forward(&res, &x).unwrap().add(&conv_forward(&filt, &x).unwrap()).unwrap();
        assert!(path.max_abs_diff(&fc_forward(&theta, &x).unwrap()) < 1e-12);
        // the stationary part of a residual vanishes
        let (_, bar2) = decompose_residual(&res).unwrap();
        assert!(bar2.max_abs() < 1e-14);
    }
}
