use nalgebra::DVector;
use num_complex::Complex64;
use proptest::prelude::*;

use unstable_sysid::bounds::{eta_t, min_n_log_power};
use unstable_sysid::dynamics::{self, InitialState, SimilaritySpec, Trajectory};
use unstable_sysid::{estimator, SysIdError};
use unstable_sysid::linalg::{self, CMat, Mat};
use unstable_sysid::noise::{self, NoiseModel};
use unstable_sysid::spectral::{self, JordanBlock};

fn mat(p: usize) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-1.0f64..1.0, p * p).prop_map(move |v| Mat::from_row_slice(p, p, &v))
}

/// `I + 0.4·G`, comfortably invertible.
fn similarity(p: usize) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-0.4f64..0.4, p * p).prop_map(move |v| Mat::from_row_slice(p, p, &v) + linalg::identity(p))
}

fn noisy_traj(a: &Mat, n: usize, seed: u64) -> Trajectory {
    let p = a.nrows();
    let spec = dynamics::SystemSpec::new(a.clone(), NoiseModel::standard_gaussian(p), InitialState::RandomUnit).unwrap();
    dynamics::simulate(&spec, n, seed).unwrap()
}

fn complex_pow(m: &CMat, t: usize) -> CMat {
    (0..t).fold(CMat::identity(m.nrows(), m.ncols()), |acc, _| acc * m)
}

fn inf_norm(m: &CMat) -> f64 {
    m.row_iter().map(|r| r.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gram_recursion(a in mat(3), n in 3usize..40, seed in any::<u64>()) {
        let traj = noisy_traj(&(a * 0.5), n, seed);
        let x = &traj.states[n - 1];
        let lhs = estimator::gram(&traj, n).unwrap();
        let rhs = estimator::gram(&traj, n - 1).unwrap() + x * x.transpose();
        prop_assert!(linalg::norm2(&(lhs - &rhs)) <= 1e-10 * linalg::norm2(&rhs).max(1.0));
    }

    #[test]
    fn ols_minimizes_loss(a in mat(2), dir in mat(2), seed in any::<u64>()) {
        let traj = noisy_traj(&(a * 0.6), 30, seed);
        let est = estimator::ols(&traj, 30, 0.0).unwrap();
        let best = estimator::ls_loss(&traj, 30, &est.a_hat).unwrap();
        for h in [1e-3, 1e-1, 1.0] {
            let other = estimator::ls_loss(&traj, 30, &(&est.a_hat + &dir * h)).unwrap();
            prop_assert!(best <= other * (1.0 + 1e-12));
        }
    }

    #[test]
    fn ols_is_similarity_equivariant(a in mat(3), t in similarity(3), seed in any::<u64>()) {
        let traj = noisy_traj(&(a * 0.7), 40, seed);
        let mapped = Trajectory {
            states: traj.states.iter().map(|x| &t * x).collect(),
            noises: vec![],
            seed,
            overflowed_at: None,
        };
        let a_hat = estimator::ols(&traj, 40, 0.0).unwrap().a_hat;
        let b_hat = estimator::ols(&mapped, 40, 0.0).unwrap().a_hat;
        let expected = &t * &a_hat * linalg::inverse(&t).unwrap();
        prop_assert!(linalg::norm2(&(b_hat - &expected)) <= 1e-8 * linalg::norm2(&expected).max(1.0));
    }

    #[test]
    fn regularity_is_similarity_invariant(
        rho in 1.2f64..3.0,
        jordan in any::<bool>(),
        t in similarity(2),
    ) {
        let a = if jordan {
            Mat::from_row_slice(2, 2, &[rho, 1.0, 0.0, rho])
        } else {
            Mat::from_diagonal(&DVector::from_vec(vec![rho, rho]))
        };
        let b = &t * &a * linalg::inverse(&t).unwrap();
        let ra = spectral::regularity_check(&a, 1e-6).unwrap();
        let rb = spectral::regularity_check(&b, 1e-6).unwrap();
        prop_assert_eq!(ra, jordan);
        prop_assert_eq!(rb, ra);
    }

    #[test]
    fn jordan_round_trip(
        eigs in prop::collection::vec((0.2f64..3.0, any::<bool>()), 1..5),
        pair in proptest::option::of((0.3f64..2.5, 0.3f64..2.5)),
        seed in any::<u64>(),
    ) {
        let mut blocks: Vec<JordanBlock> = eigs
            .iter()
            .enumerate()
            .map(|(k, &(m, neg))| JordanBlock::real(if neg { -m } else { m } + 0.05 * k as f64, 1))
            .collect();
        if let Some((r, th)) = pair {
            let z = Complex64::from_polar(r, th);
            blocks.push(JordanBlock::new(z, 1));
            blocks.push(JordanBlock::new(z.conj(), 1));
        }
        // Keep eigenvalues separated so the clustering is unambiguous.
        let mut all: Vec<Complex64> = blocks.iter().map(|b| b.eigenvalue).collect();
        all.sort_by(|a, b| a.re.total_cmp(&b.re));
        for (i, x) in all.iter().enumerate() {
            for y in &all[i + 1..] {
                prop_assume!((x - y).norm() > 0.05);
            }
        }
        let mut rng = noise::trial_rng(seed, 0, 0);
        let p: usize = blocks.len();
        let spec = dynamics::make_system_from_jordan(
            &blocks,
            &SimilaritySpec::RandomWellconditioned,
            NoiseModel::zero(p),
            InitialState::zero(p),
            &mut rng,
        ).unwrap();
        let jf = spectral::jordan_infer_default(&spec.a0).unwrap();
        let back = linalg::real_part(&jf.assemble());
        prop_assert!(linalg::norm2(&(back - &spec.a0)) <= 1e-8 * linalg::norm2(&spec.a0).max(1.0));
        prop_assert_eq!(jf.dim(), p);
    }

    #[test]
    fn split_keeps_reachability(
        stable in 0.1f64..0.9,
        explosive in 1.1f64..3.0,
        t in similarity(2),
    ) {
        let a = &t * Mat::from_diagonal(&DVector::from_vec(vec![stable, explosive])) * linalg::inverse(&t).unwrap();
        let split = spectral::stable_explosive_split(&a, 1e-6).unwrap();
        prop_assert_eq!((split.p1, split.p2), (1, 1));
        prop_assert!(split.residual(&a) <= 1e-9 * linalg::norm2(&a), "residual {:e}", split.residual(&a));
        let (c1, c2) = split.split_covariance(&linalg::identity(2));
        prop_assert!(spectral::reachability_gramian(&split.a1, &c1).unwrap().is_reachable());
        prop_assert!(spectral::reachability_gramian(&split.a2, &c2).unwrap().is_reachable());
    }

    #[test]
    fn sample_size_is_minimal(k in 0.5f64..6.0, log_rhs in 0.0f64..25.0) {
        let rhs = log_rhs.exp();
        let f = |n: f64| n / n.ln().powf(k);
        let n = match min_n_log_power(k, rhs) {
            Ok(n) => n,
            Err(SysIdError::SampleSizeOverflow { .. }) => {
                prop_assert!(f(u64::MAX as f64) < rhs);
                return Ok(());
            }
            Err(e) => panic!("{e}"),
        };
        prop_assert!(f(n as f64) >= rhs);
        if n > 3 && n < (1u64 << 53) {
            prop_assert!(f((n - 1) as f64) < rhs);
        }
    }

    #[test]
    fn eta_dominates_jordan_powers(
        mags in prop::collection::vec((0.1f64..1.8, 1usize..4), 1..4),
        t in 0usize..30,
    ) {
        let blocks: Vec<JordanBlock> = mags.iter().map(|&(m, s)| JordanBlock::real(m, s)).collect();
        let jf = spectral::JordanForm::from_similarity(blocks.clone(), {
            let p: usize = blocks.iter().map(|b| b.size).sum();
            CMat::identity(p, p)
        }).unwrap();
        let lhs = inf_norm(&complex_pow(&jf.lambda(), t));
        let eta = eta_t(&blocks, t);
        prop_assert!(lhs <= eta * (1.0 + 1e-9) + 1e-300, "t={t}: {lhs} > {eta}");
    }
}
