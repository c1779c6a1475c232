use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dynlap::dynlap::{assemble_system, AssembleOptions, BoundaryCondition, DynLapSystem};
use dynlap::eigen::{pushforward_field, solve_gevp, EigenOptions, EigenResult};
use dynlap::flow::{double_gyre_field, generate_trajectories, uniform_times, TrajectoryEnsemble};
use dynlap::mesh::grid_points;

fn identity_system(n: usize, bc: BoundaryCondition) -> (TrajectoryEnsemble, DynLapSystem) {
    let ens = TrajectoryEnsemble::stationary(&grid_points(n, n, 0.0, 1.0, 0.0, 1.0), vec![0.0, 0.5, 1.0]).unwrap();
    let sys = assemble_system(&ens, bc, &AssembleOptions::default()).unwrap();
    (ens, sys)
}

fn gyre(n: usize) -> (TrajectoryEnsemble, DynLapSystem, EigenResult) {
    let seeds = grid_points(n, n, 0.0, 1.0, 0.0, 1.0);
    let ens = generate_trajectories(&double_gyre_field(), &seeds, &uniform_times(0.0, 1.0, 11), 1e-2).unwrap();
    let sys = assemble_system(&ens, BoundaryCondition::Neumann, &AssembleOptions::default()).unwrap();
    let eig = solve_gevp(&sys.a, &sys.m, 2, &EigenOptions::default()).unwrap();
    (ens, sys, eig)
}

#[test]
fn identity_dynamics_recover_the_square_spectrum() {
    let (_, sys) = identity_system(60, BoundaryCondition::Neumann);
    let eig = solve_gevp(&sys.a, &sys.m, 6, &EigenOptions::default()).unwrap();
    let pi2 = PI * PI;
    let want = [0.0, -pi2, -pi2, -2.0 * pi2, -4.0 * pi2, -4.0 * pi2];
    assert!(eig.eigenvalues[0].abs() <= 1e-8 * pi2);
    for (got, want) in eig.eigenvalues.iter().zip(want).skip(1) {
        assert!((got - want).abs() <= 0.02 * want.abs(), "{got} vs {want}");
    }
    // the kernel vector is constant
    let f1 = &eig.eigenvectors[0];
    let spread = f1.iter().fold(0.0_f64, |m, x| m.max((x - f1[0]).abs()));
    assert!(spread <= 1e-8 * f1[0].abs());
}

#[test]
fn dirichlet_ground_state_is_positive() {
    let (_, sys) = identity_system(40, BoundaryCondition::Dirichlet);
    let eig = solve_gevp(&sys.a, &sys.m, 2, &EigenOptions::default()).unwrap();
    let f1 = &eig.eigenvectors[0];
    let sign = f1[0].signum();
    assert!(f1.iter().all(|x| x * sign > 0.0));
    assert!(eig.eigenvalues[0] < 0.0);
    let full = sys.expand(f1);
    assert_eq!(full.iter().filter(|&&x| x == 0.0).count(), 4 * 39);
}

#[test]
fn pushforward_follows_the_trajectories() {
    let (ens, _, eig) = gyre(20);
    let f2 = &eig.eigenvectors[1];
    let first = pushforward_field(&eig.eigenvectors, &ens, 1, 0).unwrap();
    assert!(first.iter().zip(f2).all(|(a, b)| *a == Some(*b)));
    let last = pushforward_field(&eig.eigenvectors, &ens, 1, 10).unwrap();
    assert!(last.iter().zip(f2).all(|(a, b)| *a == Some(*b)));
    assert!(pushforward_field(&eig.eigenvectors, &ens, 5, 0).is_err());
    assert!(pushforward_field(&eig.eigenvectors, &ens, 1, 11).is_err());

    let hidden = ens.without_observations(&[(3, 10)]).unwrap();
    let gap = pushforward_field(&eig.eigenvectors, &hidden, 1, 10).unwrap();
    assert_eq!(gap[3], None);
}

#[test]
fn identity_pushforward_is_constant_in_time() {
    let (ens, sys) = identity_system(15, BoundaryCondition::Neumann);
    let eig = solve_gevp(&sys.a, &sys.m, 3, &EigenOptions::default()).unwrap();
    let at = |l| pushforward_field(&eig.eigenvectors, &ens, 2, l).unwrap();
    assert_eq!(at(0), at(1));
    assert_eq!(at(1), at(2));
}

#[test]
fn eigenpairs_beat_nearby_frames() {
    let (_, sys, eig) = gyre(30);
    let sum: f64 = eig.eigenvalues.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = sys.a.dim();
    for scale in [1e-1, 1e-3] {
        for _ in 0..25 {
            let cols: Vec<Vec<f64>> = eig
                .eigenvectors
                .iter()
                .map(|v| {
                    v.iter()
                        .map(|x| x + scale * rng.random_range(-1.0..1.0) / (n as f64).sqrt())
                        .collect()
                })
                .collect();
            let k = cols.len();
            let gram = DMatrix::from_fn(k, k, |i, j| sys.m.bilinear(&cols[i], &cols[j]));
            let stiff = DMatrix::from_fn(k, k, |i, j| sys.a.bilinear(&cols[i], &cols[j]));
            let li = gram.cholesky().unwrap().l().try_inverse().unwrap();
            let trace = (&li * stiff * li.transpose()).trace();
            assert!(trace <= sum + 1e-9 * sum.abs(), "{trace} > {sum}");
        }
    }
}

#[test]
fn gyre_eigenvalue_self_converges() {
    let lambdas: Vec<f64> = [35, 50, 71].iter().map(|&n| gyre(n).2.eigenvalues[1]).collect();
    for w in lambdas.windows(2) {
        assert!((w[1] - w[0]).abs() <= 0.03 * w[1].abs(), "{lambdas:?}");
    }
    assert!(lambdas.iter().all(|&l| l < -50.0 && l > -75.0), "{lambdas:?}");
}

#[test]
fn reruns_are_bit_identical() {
    let (_, sys, a) = gyre(25);
    let b = solve_gevp(&sys.a, &sys.m, 2, &EigenOptions::default()).unwrap();
    assert_eq!(a.eigenvalues, b.eigenvalues);
    assert_eq!(a.eigenvectors, b.eigenvectors);
}
