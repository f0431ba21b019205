use std::sync::Arc;

use mmadmm::blockspace::{BlockOperator, BlockOperatorFamily, BlockVector, LinearMap, RowGroups, WeightMatrix};
use mmadmm::problems::{block_rng, build_latent_lrr, LatentLrrFormulation, SubspaceData};
use mmadmm::surrogates::*;
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

fn random(rows: usize, cols: usize, seed: u64, stream: u64) -> DMatrix<f64> {
    let mut rng = block_rng(seed, stream);
    DMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z
    })
}

fn random_point(shapes: &[(usize, usize)], seed: u64) -> BlockVector<f64> {
    BlockVector::new(shapes.iter().enumerate().map(|(i, &(r, c))| random(r, c, seed, i as u64)).collect()).unwrap()
}

fn scalar(v: f64) -> BlockVector<f64> {
    BlockVector::from_vecs(vec![vec![v]]).unwrap()
}

fn l1_objective() -> ObjectiveFn<f64> {
    Arc::new(|x: &BlockVector<f64>| x.to_flat().iter().map(|v| v.abs()).sum())
}

const SHAPES: [(usize, usize); 3] = [(3, 1), (2, 1), (4, 1)];

fn coupling(seed: u64) -> QuadraticCoupling<f64> {
    let fam =
        BlockOperatorFamily::dense(vec![random(5, 3, seed, 0), random(5, 2, seed, 1), random(5, 4, seed, 2)]).unwrap();
    QuadraticCoupling::new(0.7, fam, BlockVector::new(vec![random(5, 1, seed, 3)]).unwrap()).unwrap()
}

fn cert_of(q: &QuadraticCoupling<f64>) -> Vec<WeightMatrix<f64>> {
    q.smoothness().into_iter().map(WeightMatrix::ScaledIdentity).collect()
}

/// Majorization, touching and proximity over 100 random points.
fn check_surrogate(s: &Surrogate<f64>, seed: u64) {
    let k = s.anchor().clone();
    assert!((s.value(&k) - s.target_value(&k)).abs() <= 1e-12 * (1.0 + s.target_value(&k).abs()));
    for t in 0..100 {
        let x = random_point(&k.dims(), seed * 1000 + t);
        let (fh, f) = (s.value(&x), s.target_value(&x));
        assert!(fh >= f - 1e-10, "majorization: {fh} < {f}");
        assert!((fh - f).abs() <= s.proximity_bound(&x).unwrap() + 1e-10, "proximity");
    }
}

#[test]
fn proximal_surrogate_examples() {
    let s = proximal_surrogate(l1_objective(), scalar(0.0), vec![WeightMatrix::ScaledIdentity(2.0)]).unwrap();
    assert_eq!(s.value(&scalar(1.0)), 2.0);
    let z = proximal_surrogate(l1_objective(), scalar(0.3), vec![WeightMatrix::Zero]).unwrap();
    for v in [-2.0, 0.0, 0.5, 4.0] {
        assert_eq!(z.value(&scalar(v)), z.target_value(&scalar(v)));
    }
    let k = random_point(&SHAPES, 1);
    let l = vec![
        WeightMatrix::ScaledIdentity(0.5),
        WeightMatrix::Zero,
        WeightMatrix::explicit(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 0.0, 3.0]))).unwrap(),
    ];
    check_surrogate(&proximal_surrogate(l1_objective(), k, l).unwrap(), 1);
}

#[test]
fn lipschitz_gradient_examples() {
    let unit = BlockOperatorFamily::dense(vec![DMatrix::from_element(1, 1, 1.0)]).unwrap();
    let half_sq = Arc::new(QuadraticCoupling::new(1.0, unit, scalar(0.0)).unwrap());
    assert!((half_sq.smoothness()[0] - 1.0).abs() < 1e-12);
    let s = lipschitz_gradient_surrogate(half_sq, scalar(0.0), vec![WeightMatrix::ScaledIdentity(1.0)]).unwrap();
    for v in [-3.0, 0.0, 1.5] {
        assert!((s.value(&scalar(v)) - s.target_value(&scalar(v))).abs() < 1e-15);
    }

    let two = BlockOperatorFamily::dense(vec![DMatrix::from_element(1, 1, 2.0)]).unwrap();
    let f = Arc::new(QuadraticCoupling::new(1.0, two, scalar(0.0)).unwrap());
    assert!((f.smoothness()[0] - 4.0).abs() < 1e-12);
    let s = lipschitz_gradient_surrogate(f, scalar(1.0), vec![WeightMatrix::ScaledIdentity(4.0)]).unwrap();
    assert_eq!(s.value(&scalar(0.0)), 0.0);
    assert_eq!(s.target_value(&scalar(0.0)), 0.0);

    for seed in 2..5 {
        let q = coupling(seed);
        let cert = cert_of(&q);
        let s = lipschitz_gradient_surrogate(Arc::new(q), random_point(&SHAPES, seed + 50), cert).unwrap();
        check_surrogate(&s, seed);
    }
}

#[test]
fn proximal_gradient_examples() {
    let q = coupling(6);
    let cert = cert_of(&q);
    let k = random_point(&SHAPES, 7);
    let s = proximal_gradient_surrogate(Arc::new(q.clone()), l1_objective(), k.clone(), cert.clone()).unwrap();
    check_surrogate(&s, 6);

    // f₁ = 0 leaves f₂ plus the proximal term.
    let zero =
        BlockOperatorFamily::new(SHAPES.iter().map(|&sh| BlockOperator::zero(sh, vec![(5, 1)])).collect()).unwrap();
    let q0 =
        Arc::new(QuadraticCoupling::new(1.0, zero, BlockVector::new(vec![DMatrix::zeros(5, 1)]).unwrap()).unwrap());
    let l = vec![WeightMatrix::ScaledIdentity(1.5); 3];
    let pg = proximal_gradient_surrogate(q0, l1_objective(), k.clone(), l.clone()).unwrap();
    let px = proximal_surrogate(l1_objective(), k, l).unwrap();
    let x = random_point(&SHAPES, 8);
    assert!((pg.value(&x) - px.value(&x)).abs() < 1e-14);
}

#[test]
fn latent_lrr_smooth_term_certificate() {
    let data = SubspaceData::generate(20, 2, 3, 20, 0.2, 1).unwrap();
    let p = build_latent_lrr::<f64>(&data.x, 1.0, LatentLrrFormulation::TwoBlock).unwrap();
    let h = p.smooth.as_ref().unwrap();
    let xn = data.x.singular_values().max().powi(2);
    for l in h.smoothness() {
        assert!((l - 2.0 * xn).abs() <= 1e-9 * xn, "{l} vs {}", 2.0 * xn);
    }
    let cert = cert_of(h);
    let s = proximal_gradient_surrogate(Arc::new(h.clone()), Arc::new(|_| 0.0), p.zeros(), cert).unwrap();
    check_surrogate(&s, 9);
}

#[test]
fn key_property_oracle() {
    // f(x) + ⟨u, y − x⟩ − f(y) ≤ ½Σ(‖yᵢ − κᵢ‖²_L − ‖yᵢ − xᵢ‖²_L) with u = ∇f̂(x).
    for seed in 0..100 {
        let q = coupling(10);
        let l = q.smoothness();
        let [x, y, k] = [0, 1, 2].map(|t| random_point(&SHAPES, 300 + 3 * seed + t));
        let grad_k = q.gradient(&k).unwrap();
        let u = BlockVector::new((0..3).map(|i| grad_k.block(i) + (x.block(i) - k.block(i)) * l[i]).collect()).unwrap();
        let lhs = q.value(&x).unwrap() + u.dot(&y.sub(&x).unwrap()).unwrap() - q.value(&y).unwrap();
        let rhs: f64 = (0..3)
            .map(|i| 0.5 * l[i] * ((y.block(i) - k.block(i)).norm_squared() - (y.block(i) - x.block(i)).norm_squared()))
            .sum();
        assert!(lhs <= rhs + 1e-10 * (1.0 + rhs.abs()), "{lhs} > {rhs}");
    }
}

fn check_quad_cert(a: &BlockOperatorFamily<f64>, seed: u64) {
    let cert = quad_coupling_smoothness(a).unwrap();
    let shapes = a.input_shapes();
    for t in 0..100 {
        let x = random_point(&shapes, seed * 1000 + t);
        let y = random_point(&shapes, seed * 1000 + 500 + t);
        let d = x.sub(&y).unwrap();
        let lhs = 0.5 * a.apply(&d).unwrap().norm_sq();
        let rhs: f64 = d.blocks().iter().zip(&cert.eta_prime).map(|(di, e)| 0.5 * e * di.norm_squared()).sum();
        assert!(lhs <= rhs, "{lhs} > {rhs}");
    }
}

#[test]
fn quad_coupling_examples() {
    let single = BlockOperatorFamily::dense(vec![random(6, 4, 11, 0)]).unwrap();
    let c = quad_coupling_smoothness(&single).unwrap();
    assert_eq!(c.eta_prime, single.norms_sq());
    assert_eq!(c.derivation, Derivation::DenseDefault);
    check_quad_cert(&single, 11);

    let dense3 = BlockOperatorFamily::dense((0..3).map(|i| random(6, 2 + i, 12, i as u64)).collect()).unwrap();
    let c = quad_coupling_smoothness(&dense3).unwrap();
    for (e, n) in c.eta_prime.iter().zip(dense3.norms_sq()) {
        assert_eq!(*e, 3.0 * n);
    }
    check_quad_cert(&dense3, 12);

    // Rows 0..4 touched by blocks 0 and 1, rows 4..8 by blocks 2 and 3.
    let mats: Vec<DMatrix<f64>> = (0..4)
        .map(|i| {
            let mut m = DMatrix::zeros(8, 3);
            m.rows_mut(if i < 2 { 0 } else { 4 }, 4).copy_from(&random(4, 3, 13, i as u64));
            m
        })
        .collect();
    let groups = RowGroups::new(vec![(0..4).collect(), (4..8).collect()], 8).unwrap();
    let fam = BlockOperatorFamily::dense(mats).unwrap().with_row_groups(groups).unwrap();
    let c = quad_coupling_smoothness(&fam).unwrap();
    assert_eq!(c.derivation, Derivation::RowGroupAware);
    for (e, n) in c.eta_prime.iter().zip(fam.norms_sq()) {
        assert!((e - 2.0 * n).abs() <= 1e-12 * n, "{e} vs {}", 2.0 * n);
    }
    check_quad_cert(&fam, 13);

    // Structured operators, including blocks that span two rows.
    let x = random(4, 6, 14, 0);
    let mixed = BlockOperatorFamily::new(vec![
        BlockOperator::new(
            (6, 6),
            vec![(1, 6), (4, 6)],
            vec![
                (0, LinearMap::LeftMultiply(DMatrix::from_element(1, 6, 1.0))),
                (1, LinearMap::LeftMultiply(x.clone())),
            ],
        )
        .unwrap(),
        BlockOperator::new((4, 4), vec![(1, 6), (4, 6)], vec![(1, LinearMap::RightMultiply(x))]).unwrap(),
        BlockOperator::new((4, 6), vec![(1, 6), (4, 6)], vec![(1, LinearMap::Negation)]).unwrap(),
    ])
    .unwrap();
    check_quad_cert(&mixed, 14);
    let grouped = mixed.clone().with_row_groups(RowGroups::by_segment(mixed.segments())).unwrap();
    check_quad_cert(&grouped, 15);
}

#[test]
fn parallel_quad_surrogate() {
    let ones = BlockOperatorFamily::dense(vec![DMatrix::from_element(1, 1, 1.0); 2]).unwrap();
    let b = scalar(0.0);
    let y = BlockVector::from_vecs(vec![vec![0.0], vec![0.0]]).unwrap();
    let g = vec![WeightMatrix::ScaledIdentityMinusGram(2.0); 2];
    let q = quad_surrogate_parallel(&ones, &b, &y, &g).unwrap();
    let x = BlockVector::from_vecs(vec![vec![1.0], vec![1.0]]).unwrap();
    assert_eq!(q.surrogate.value(&x), 2.0);
    assert_eq!(q.surrogate.target_value(&x), 2.0);
    // η = 2 sits exactly on the certified threshold, which carries a few ulps of slack.
    let safe = vec![WeightMatrix::ScaledIdentityMinusGram(2.0 + 1e-9); 2];
    assert!(quad_surrogate_parallel(&ones, &b, &y, &safe).unwrap().violations.is_empty());

    let low = vec![WeightMatrix::ScaledIdentityMinusGram(1.0); 2];
    assert_eq!(quad_surrogate_parallel(&ones, &b, &y, &low).unwrap().violations, vec![0, 1]);

    // n = 1 is exact.
    let one = BlockOperatorFamily::dense(vec![random(4, 3, 16, 0)]).unwrap();
    let b1 = BlockVector::new(vec![random(4, 1, 16, 1)]).unwrap();
    let y1 = random_point(&[(3, 1)], 17);
    let q = quad_surrogate_parallel(&one, &b1, &y1, &[WeightMatrix::Zero]).unwrap();
    for t in 0..20 {
        let x = random_point(&[(3, 1)], 200 + t);
        assert!((q.surrogate.value(&x) - q.surrogate.target_value(&x)).abs() < 1e-10);
    }

    let fam = BlockOperatorFamily::dense(vec![random(5, 3, 18, 0), random(5, 2, 18, 1), random(5, 4, 18, 2)]).unwrap();
    let rhs = BlockVector::new(vec![random(5, 1, 18, 3)]).unwrap();
    let cert = quad_coupling_smoothness(&fam).unwrap();
    let anchor = random_point(&SHAPES, 19);
    let lin: Vec<_> = cert.eta_prime.iter().map(|&e| WeightMatrix::ScaledIdentityMinusGram(1.02 * e)).collect();
    let q = quad_surrogate_parallel(&fam, &rhs, &anchor, &lin).unwrap();
    assert!(q.violations.is_empty());
    check_surrogate(&q.surrogate, 19);
    let gi: Vec<_> = cert.excess.iter().map(|&e| WeightMatrix::ScaledIdentity(e)).collect();
    let q = quad_surrogate_parallel(&fam, &rhs, &anchor, &gi).unwrap();
    assert!(q.violations.is_empty());
    check_surrogate(&q.surrogate, 20);
}

#[test]
fn combination_rules() {
    let k = random_point(&SHAPES, 21);
    let p1 = proximal_surrogate(l1_objective(), k.clone(), vec![WeightMatrix::ScaledIdentity(1.0); 3]).unwrap();
    let p2 = proximal_surrogate(l1_objective(), k.clone(), vec![WeightMatrix::ScaledIdentity(1.0); 3]).unwrap();
    let sum = combine_linear(&p1, &p2, 1.0, 1.0).unwrap();
    assert_eq!(sum.cert().per_block_l, vec![WeightMatrix::ScaledIdentity(2.0); 3]);
    check_surrogate(&sum, 21);

    let zero = proximal_surrogate(Arc::new(|_| 0.0), k.clone(), vec![WeightMatrix::Zero; 3]).unwrap();
    let same = combine_linear(&p1, &zero, 1.0, 1.0).unwrap();
    let x = random_point(&SHAPES, 22);
    assert_eq!(same.value(&x), p1.value(&x));
    assert_eq!(same.cert(), p1.cert());

    let other = proximal_surrogate(l1_objective(), random_point(&SHAPES, 23), vec![WeightMatrix::Zero; 3]).unwrap();
    assert!(matches!(combine_linear(&p1, &other, 1.0, 1.0), Err(mmadmm::Error::AnchorMismatch)));
    assert!(matches!(combine_transitive(&other, &p1), Err(mmadmm::Error::AnchorMismatch)));

    // Proximal surrogate of a Lipschitz-gradient surrogate carries Lᵢ + L″ᵢ.
    let q = coupling(24);
    let cert = cert_of(&q);
    let inner = lipschitz_gradient_surrogate(Arc::new(q), k.clone(), cert.clone()).unwrap();
    let outer = proximal_surrogate(inner.as_fn(), k.clone(), vec![WeightMatrix::ScaledIdentity(0.5); 3]).unwrap();
    let t = combine_transitive(&outer, &inner).unwrap();
    let expect: Vec<_> = cert.iter().map(|c| c.add(&WeightMatrix::ScaledIdentity(0.5)).unwrap()).collect();
    assert_eq!(t.cert().per_block_l, expect);
    check_surrogate(&t, 24);

    // An exact inner surrogate passes the outer certificate through.
    let exact = proximal_surrogate(l1_objective(), k.clone(), vec![WeightMatrix::Zero; 3]).unwrap();
    let t = combine_transitive(&p1, &exact).unwrap();
    assert_eq!(t.cert(), p1.cert());
}
