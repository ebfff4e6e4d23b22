mod common;

use common::*;
use lorapre_core::linalg::*;
use lorapre_core::rng::SeededRng;
use nalgebra::DMatrix;
use proptest::prelude::*;

#[test]
fn matmul_identity_and_hand_case() {
    let mut rng = SeededRng::new(1);
    let x = rng.normal_matrix(3, 3, 1.0);
    assert_eq!(Matrix::identity(3).matmul(&x).unwrap(), x);
    let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
    let b = Matrix::from_rows(&[&[0.0], &[1.0]]).unwrap();
    assert_eq!(matmul(&a, &b).unwrap().as_slice(), &[2.0, 4.0]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = SeededRng::new(2);
    let a = rng.normal_matrix(5, 3, 1.0);
    let b = rng.normal_matrix(3, 4, 1.0);
    let c = a.matmul(&b).unwrap();
    for i in 0..5 {
        for j in 0..4 {
            let mut s = 0.0;
            for k in 0..3 {
                s += a.get(i, k) * b.get(k, j);
            }
            assert_eq!(c.get(i, j), s);
        }
    }
    assert!(a.matmul(&a).is_err());
}

#[test]
fn elementwise_ops() {
    let x = Matrix::from_rows(&[&[-2.0, 3.0]]).unwrap();
    assert_eq!(hadamard_square(&x).as_slice(), &[4.0, 9.0]);
    assert_eq!(hadamard_square(&Matrix::zeros(2, 2)), Matrix::zeros(2, 2));
    let y = Matrix::from_rows(&[&[-1.0, 0.0, 2.0]]).unwrap();
    assert_eq!(abs_elementwise(&y).as_slice(), &[1.0, 0.0, 2.0]);
    let pos = Matrix::from_rows(&[&[0.5, 1.5]]).unwrap();
    assert_eq!(abs_elementwise(&pos), pos);

    let mut rng = SeededRng::new(3);
    let r = rng.normal_matrix(4, 5, 2.0);
    let sq = hadamard_square(&r);
    let ab = abs_elementwise(&r);
    for (i, &v) in r.as_slice().iter().enumerate() {
        assert_eq!(sq.as_slice()[i], v * v);
        assert_eq!(ab.as_slice()[i], v.abs());
    }
}

#[test]
fn right_pinv_against_svd_oracle() {
    let mut rng = SeededRng::new(4);
    let a = rng.normal_matrix(3, 7, 1.0);
    let lambda = 1e-4;
    let got = to_na(&damped_right_pinv(&a, lambda).unwrap());
    let want = damped_pinv_svd(&to_na(&a), lambda);
    assert!(rel_err_na(&got, &want) <= 1e-10);
    assert!(got.norm_squared() > 0.0);
    let spec = got.singular_values()[0];
    assert!(spec <= 1.0 / (2.0 * lambda.sqrt()));
}

#[test]
fn left_pinv_against_svd_oracle() {
    let mut rng = SeededRng::new(5);
    let b = rng.normal_matrix(6, 2, 1.0);
    let lambda = 1e-4;
    let got = to_na(&damped_left_pinv(&b, lambda).unwrap());
    let want = damped_pinv_svd(&to_na(&b), lambda);
    assert!(rel_err_na(&got, &want) <= 1e-10);
}

#[test]
fn right_pinv_recovers_identity() {
    let mut rng = SeededRng::new(6);
    for _ in 0..20 {
        let a = rng.normal_matrix(3, 8, 1.0);
        let prod = a.matmul(&damped_right_pinv(&a, 1e-12).unwrap()).unwrap();
        assert!(prod.sub(&Matrix::identity(3)).unwrap().max_abs() <= 1e-6);
    }
}

#[test]
fn pinv_spectral_bound_1000_matrices() {
    let mut rng = SeededRng::new(7);
    for n in 0..1000 {
        let p = 2 + rng.below(15);
        let q = 2 + rng.below(15);
        let lambda: f64 = [1e-8, 1e-4, 1.0][n % 3];
        // scale straddles √λ so the bound is approached
        let scale = lambda.sqrt() * 10f64.powf(rng.uniform_range(-2.0, 2.0));
        let m = rng.normal_matrix(p, q, scale);
        let bound = 1.0 / (2.0 * lambda.sqrt());
        for pinv in [damped_right_pinv(&m, lambda).unwrap(), damped_left_pinv(&m, lambda).unwrap()] {
            let s = to_na(&pinv).singular_values()[0];
            assert!(s <= bound * (1.0 + 1e-12), "{s} > {bound}");
        }
    }
}

#[test]
fn svd_reconstruction_and_gram_eigenvalues() {
    let mut rng = SeededRng::new(8);
    let x = rng.normal_matrix(8, 6, 1.0);
    let svd = svd_small(&x).unwrap();
    assert!(rel_err(&svd.reconstruct(), &x) <= 1e-9);
    let gram = to_na(&x).transpose() * to_na(&x);
    let mut eig: Vec<f64> = gram.symmetric_eigen().eigenvalues.iter().cloned().collect();
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for (s, e) in svd.singular_values.iter().zip(&eig) {
        assert!((s * s - e).abs() <= 1e-10 * eig[0]);
    }
    let u = to_na(&svd.u);
    let v = to_na(&svd.v);
    assert!((u.transpose() * &u - DMatrix::identity(6, 6)).amax() <= 1e-10);
    assert!((v.transpose() * &v - DMatrix::identity(6, 6)).amax() <= 1e-10);
}

#[test]
fn svd_rank_one() {
    let u = Matrix::from_vec(3, 1, vec![2.0, 0.0, 0.0]).unwrap();
    let v = Matrix::from_vec(1, 2, vec![0.0, 1.0]).unwrap();
    let svd = svd_small(&u.matmul(&v).unwrap()).unwrap();
    assert!((svd.singular_values[0] - 2.0).abs() < 1e-14);
    assert!(svd.singular_values[1].abs() < 1e-14);
}

#[test]
fn svd_is_deterministic() {
    let x = SeededRng::new(9).normal_matrix(7, 5, 1.0);
    let a = svd_small(&x).unwrap();
    let b = svd_small(&x).unwrap();
    assert_eq!(a.u, b.u);
    assert_eq!(a.v, b.v);
    assert_eq!(a.singular_values, b.singular_values);
}

#[test]
fn ns_zero_and_orthogonal_input() {
    assert_eq!(newton_schulz5(&Matrix::zeros(4, 4), 5).unwrap(), Matrix::zeros(4, 4));
    let mut rng = SeededRng::new(10);
    let q = from_na(&orthonormal(&mut rng, 4, 4));
    let out = newton_schulz5(&q, 5).unwrap();
    for s in singular_values(&out) {
        assert!((0.7..=1.3).contains(&s), "{s}");
    }
    // same singular subspaces: Qᵀ·O is symmetric positive, i.e. O = c·Q
    let qt_o = to_na(&q).transpose() * to_na(&out);
    let off = &qt_o - DMatrix::from_diagonal(&qt_o.diagonal());
    assert!(off.amax() <= 1e-6);
}

#[test]
fn ns_preserves_singular_subspaces() {
    let mut rng = SeededRng::new(11);
    let m = conditioned(&mut rng, 8, 5, 10.0, 3.0);
    let svd = to_na(&m).svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let out = to_na(&newton_schulz5(&m, 5).unwrap());
    for s in out.singular_values().iter() {
        assert!((0.7..=1.3).contains(s), "{s}");
    }
    let core = u.transpose() * &out * v_t.transpose();
    let off = &core - DMatrix::from_diagonal(&core.diagonal());
    assert!(off.amax() <= 1e-6, "{}", off.amax());
}

#[test]
fn ns_fixed_quintic_is_selectable() {
    let m = SeededRng::new(12).normal_matrix(6, 6, 1.0);
    let a = newton_schulz(&m, 5, NsSchedule::MuonQuintic).unwrap();
    let b = newton_schulz(&m, 5, NsSchedule::PolarExpress).unwrap();
    assert_ne!(a, b);
    assert!(newton_schulz(&m, 0, NsSchedule::MuonQuintic).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ns_transpose_consistent(p in 1usize..12, q in 1usize..12, seed in any::<u64>()) {
        let m = SeededRng::new(seed).normal_matrix(p, q, 1.0);
        let a = newton_schulz5(&m.transpose(), 5).unwrap();
        let b = newton_schulz5(&m, 5).unwrap().transpose();
        prop_assert!(a.sub(&b).unwrap().max_abs() <= 1e-10);
    }

    #[test]
    fn svd_properties(p in 1usize..10, q in 1usize..10, seed in any::<u64>()) {
        let x = SeededRng::new(seed).normal_matrix(p, q, 1.0);
        let svd = svd_small(&x).unwrap();
        prop_assert!(rel_err(&svd.reconstruct(), &x) <= 1e-9);
        prop_assert!(svd.singular_values.windows(2).all(|w| w[0] >= w[1]));
        for r in 0..=p.min(q) {
            let err = svd.truncated(r).sub(&x).unwrap().frobenius_norm();
            prop_assert!((err - svd.truncation_error(r)).abs() <= 1e-9 * x.frobenius_norm().max(1.0));
        }
    }

    #[test]
    fn operations_deterministic(seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let a = rng.normal_matrix(4, 6, 1.0);
        let b = rng.normal_matrix(6, 3, 1.0);
        prop_assert_eq!(a.matmul(&b).unwrap(), a.matmul(&b).unwrap());
        prop_assert_eq!(damped_right_pinv(&a, 1e-6).unwrap(), damped_right_pinv(&a, 1e-6).unwrap());
        prop_assert_eq!(newton_schulz5(&a, 5).unwrap(), newton_schulz5(&a, 5).unwrap());
    }
}
