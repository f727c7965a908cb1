use groundaware_core::feature_map::FeatureMap;
use groundaware_core::gac::{gac_backward, gac_forward, MixingMatrix, OffsetField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1f64.max(a.abs()).max(n.abs())
}

struct Case {
    f: FeatureMap,
    p: FeatureMap,
    off: OffsetField,
    m: MixingMatrix,
    g: FeatureMap,
}

fn case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, r, w) = (4, 8, 8);
    let f = FeatureMap::from_fn(c, r, w, |_, _, _| rng.random_range(-1.0..1.0));
    let p = FeatureMap::from_fn(1, r, w, |_, _, _| rng.random_range(0.0..2.0));
    // Totals stay inside the grid and away from integer cell boundaries.
    let residual = (0..r * w)
        .map(|i| {
            let row = (i / w) as f64;
            let target = rng.random_range(0.0..(r - 1) as f64);
            let frac = rng.random_range(0.01..0.99);
            target.floor() + frac - row
        })
        .collect();
    let off = OffsetField::from_residual(r, w, residual).unwrap();
    let m = MixingMatrix::new(c, (0..c * (c + 1)).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let g = FeatureMap::from_fn(c, r, w, |_, _, _| rng.random_range(-1.0..1.0));
    Case { f, p, off, m, g }
}

fn objective(c: &Case) -> f64 {
    let out = gac_forward(&c.f, &c.p, &c.off, &c.m).unwrap();
    out.as_slice().iter().zip(c.g.as_slice()).map(|(a, b)| a * b).sum()
}

fn central(c: &mut Case, slot: impl Fn(&mut Case) -> &mut f64) -> f64 {
    let x = *slot(c);
    *slot(c) = x + H;
    let up = objective(c);
    *slot(c) = x - H;
    let down = objective(c);
    *slot(c) = x;
    (up - down) / (2.0 * H)
}

#[test]
fn gradients_match_central_differences() {
    for seed in 0..100 {
        let mut c = case(seed);
        let grads = gac_backward(&c.g, &c.f, &c.p, &c.off, &c.m).unwrap();
        for i in 0..c.f.as_slice().len() {
            let n = central(&mut c, |c| &mut c.f.as_mut_slice()[i]);
            assert!(rel_err(grads.features.as_slice()[i], n) < 1e-5, "seed {seed} feature {i}");
        }
        for i in 0..c.p.as_slice().len() {
            let n = central(&mut c, |c| &mut c.p.as_mut_slice()[i]);
            assert!(rel_err(grads.prior.as_slice()[i], n) < 1e-5, "seed {seed} prior {i}");
        }
        for i in 0..c.off.residual().len() {
            let n = central(&mut c, |c| &mut c.off.residual_mut()[i]);
            assert!(rel_err(grads.residual[i], n) < 1e-5, "seed {seed} offset {i}");
        }
        for i in 0..c.m.as_slice().len() {
            let n = central(&mut c, |c| &mut c.m.as_mut_slice()[i]);
            assert!(rel_err(grads.mixing.as_slice()[i], n) < 1e-5, "seed {seed} mixing {i}");
        }
    }
}

#[test]
fn forward_is_linear_in_features_and_prior() {
    let a = case(1);
    let b = case(2);
    let (s, t) = (0.7, -1.3);
    let mix = |x: &FeatureMap, y: &FeatureMap| {
        FeatureMap::from_vec(
            x.channels(),
            x.rows(),
            x.cols(),
            x.as_slice().iter().zip(y.as_slice()).map(|(u, v)| s * u + t * v).collect(),
        )
        .unwrap()
    };
    let combined = gac_forward(&mix(&a.f, &b.f), &mix(&a.p, &b.p), &a.off, &a.m).unwrap();
    let fa = gac_forward(&a.f, &a.p, &a.off, &a.m).unwrap();
    let fb = gac_forward(&b.f, &b.p, &a.off, &a.m).unwrap();
    for ((c, x), y) in combined.as_slice().iter().zip(fa.as_slice()).zip(fb.as_slice()) {
        assert!((c - (s * x + t * y)).abs() < 1e-12);
    }
}

#[test]
fn extreme_offsets_stay_in_range() {
    let c = case(9);
    let wild: Vec<f64> = (0..64).map(|i| if i % 2 == 0 { 1e6 } else { -1e6 }).collect();
    let off = OffsetField::from_residual(8, 8, wild).unwrap();
    let out = gac_forward(&c.f, &c.p, &off, &MixingMatrix::identity(4)).unwrap();
    for ch in 0..4 {
        for r in 0..8 {
            for col in 0..8 {
                let sampled = out.get(ch, r, col) - c.f.get(ch, r, col);
                let src = if (r * 8 + col) % 2 == 0 { 7 } else { 0 };
                assert_eq!(sampled, c.f.get(ch, src, col));
            }
        }
    }
}

#[test]
fn zero_prior_zero_offset_is_a_residual_block() {
    let c = case(4);
    let zero_p = FeatureMap::zeros(1, 8, 8);
    let off = OffsetField::from_residual(8, 8, vec![0.0; 64]).unwrap();
    let out = gac_forward(&c.f, &zero_p, &off, &c.m).unwrap();
    for ch in 0..4 {
        for r in 0..8 {
            for col in 0..8 {
                let mixed: f64 = (0..4).map(|k| c.m.get(ch, k) * c.f.get(k, r, col)).sum();
                assert!((out.get(ch, r, col) - c.f.get(ch, r, col) - mixed).abs() < 1e-12);
            }
        }
    }
}
