use super::*;
use rand::Rng;

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random())
}

/// Coupled ground truth with exact low-rank tensors.
fn coupled_truth(
    dims: &[Vec<usize>],
    rank: usize,
    coupled: &[usize],
    seed: u64,
) -> (Vec<DenseTensor>, CoupledFactorSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let common: Vec<Matrix> = coupled
        .iter()
        .enumerate()
        .map(|(n, &l)| {
            if l == 0 {
                Matrix::zeros(0, 0)
            } else {
                random_matrix(dims[0][n], l, &mut rng)
            }
        })
        .collect();
    let blocks: Vec<BlockFactors> = dims
        .iter()
        .map(|d| BlockFactors {
            weights: (0..rank).map(|_| 0.5 + rng.random::<f64>()).collect(),
            individual: d
                .iter()
                .zip(coupled)
                .map(|(&i, &l)| random_matrix(i, rank - l, &mut rng))
                .collect(),
        })
        .collect();
    let set = CoupledFactorSet::new(common, blocks).unwrap();
    (set.reconstruct_all().unwrap(), set)
}

fn residual_objective(tensors: &[DenseTensor], set: &CoupledFactorSet) -> f64 {
    tensors
        .iter()
        .zip(set.reconstruct_all().unwrap())
        .map(|(t, r)| 0.5 * t.distance_sq(&r).unwrap())
        .sum()
}

#[test]
fn objective_matches_explicit_residual() {
    let dims = vec![vec![4, 5, 3], vec![4, 5, 3]];
    let (tensors, _) = coupled_truth(&dims, 3, &[1, 0, 2], 1);
    let problem = CoupledProblem::new(tensors.clone(), vec![3, 3], vec![1, 0, 2]).unwrap();
    let x = problem.initial_factors(7);
    let got = problem.objective(&x, Execution::Sequential).unwrap();
    let want = residual_objective(&tensors, &x);
    assert!((got - want).abs() <= 1e-10 * want.max(1.0));
}

#[test]
fn gradients_match_finite_differences() {
    let dims = [4, 3, 5];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = DenseTensor::from_fn(dims.to_vec(), |_| rng.random()).unwrap();
    let factors: Vec<Matrix> = dims
        .iter()
        .map(|&d| random_matrix(d, 2, &mut rng))
        .collect();
    let weights = vec![0.7, 1.3];
    let data = DataTerm::Full(&t);
    let f =
        |fs: &[Matrix], w: &[f64]| block_objective(&data, fs, w, Execution::Sequential).unwrap();
    let h = 1e-6;

    let g = grad_core(&data, &factors, &weights, Execution::Sequential).unwrap();
    for r in 0..2 {
        let mut wp = weights.clone();
        let mut wm = weights.clone();
        wp[r] += h;
        wm[r] -= h;
        let fd = (f(&factors, &wp) - f(&factors, &wm)) / (2.0 * h);
        assert!((fd - g[r]).abs() < 1e-5 * (1.0 + g[r].abs()), "core {r}");
    }
    for n in 0..3 {
        let g = grad_factor(
            &data,
            &factors,
            &weights,
            n,
            &factors[n],
            Execution::Sequential,
        )
        .unwrap();
        for i in 0..dims[n] {
            for r in 0..2 {
                let mut p = factors.clone();
                let mut m = factors.clone();
                let (pv, mv) = (p[n].get(i, r), m[n].get(i, r));
                p[n].set(i, r, pv + h);
                m[n].set(i, r, mv - h);
                let fd = (f(&p, &weights) - f(&m, &weights)) / (2.0 * h);
                let an = g.get(i, r);
                assert!(
                    (fd - an).abs() < 1e-5 * (1.0 + an.abs()),
                    "mode {n} ({i},{r})"
                );
            }
        }
    }
}

#[test]
fn compressed_term_equals_its_reconstruction() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dims = [5, 4, 3];
    let k = KruskalTensor::new(
        dims.iter()
            .map(|&d| random_matrix(d, 3, &mut rng))
            .collect(),
        vec![1.0, 0.4, 2.0],
    )
    .unwrap();
    let dense = k.reconstruct().unwrap();
    let factors: Vec<Matrix> = dims
        .iter()
        .map(|&d| random_matrix(d, 2, &mut rng))
        .collect();
    let exec = Execution::Sequential;
    let (c, f) = (DataTerm::Compressed(&k), DataTerm::Full(&dense));
    assert!((c.norm_sq() - f.norm_sq()).abs() < 1e-10 * f.norm_sq());
    let (a, b) = (
        c.kr_inner(&factors, exec).unwrap(),
        f.kr_inner(&factors, exec).unwrap(),
    );
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-10 * (1.0 + y.abs()));
    }
    for n in 0..3 {
        let a = c.mttkrp(&factors, n, exec).unwrap();
        let b = f.mttkrp(&factors, n, exec).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-10 * (1.0 + b.frobenius_norm()));
    }
}

#[test]
fn problem_validation() {
    let t = DenseTensor::zeros(vec![2, 3, 4]).unwrap();
    let u = DenseTensor::zeros(vec![3, 3, 4]).unwrap();
    assert!(CoupledProblem::new(vec![], vec![], vec![0, 0, 0]).is_err());
    assert!(CoupledProblem::new(vec![t.clone()], vec![2, 2], vec![0, 0, 0]).is_err());
    assert!(CoupledProblem::new(vec![t.clone()], vec![2], vec![3, 0, 0]).is_err());
    assert!(matches!(
        CoupledProblem::new(vec![t.clone(), u.clone()], vec![2, 2], vec![1, 0, 0]),
        Err(Error::Coupling(_))
    ));
    assert!(CoupledProblem::new(vec![t.clone(), u], vec![2, 2], vec![0, 1, 1]).is_ok());
    let neg = DenseTensor::new(vec![1, 1, 1], vec![-1.0]).unwrap();
    assert!(matches!(
        CoupledProblem::new(vec![neg], vec![1], vec![0, 0, 0]),
        Err(Error::InvalidInput(_))
    ));
    let p = CoupledProblem::new(vec![t], vec![2], vec![0, 0, 0]).unwrap();
    for delta_w in [0.0, 1.0] {
        let opts = SolverOptions {
            delta_w,
            ..Default::default()
        };
        assert!(matches!(solve(&p, &opts), Err(Error::InvalidOption(_))));
    }
}

#[test]
fn initial_factors_respect_shapes_and_seed() {
    let dims = [vec![4, 5, 3], vec![4, 6, 3]];
    let (tensors, _) = coupled_truth(&[dims[0].clone(), vec![4, 5, 3]], 3, &[2, 0, 1], 2);
    let tensors = vec![
        tensors[0].clone(),
        DenseTensor::zeros(dims[1].clone()).unwrap(),
    ];
    let p = CoupledProblem::new(tensors, vec![3, 4], vec![2, 0, 1]).unwrap();
    let a = p.initial_factors(5);
    let b = p.initial_factors(5);
    assert_eq!(a.kruskal(1).dims(), vec![4, 6, 3]);
    assert_eq!(a.rank(1), 4);
    assert_eq!(a.common(0).cols(), 2);
    assert_eq!(a.factor(0, 0).columns(0, 2), a.factor(1, 0).columns(0, 2));
    assert_eq!(a.weights(0), b.weights(0));
    let nc = p.clone().with_core_updates(false).initial_factors(5);
    assert!(nc.weights(1).iter().all(|&w| w == 1.0));
}

#[test]
fn working_objective_is_monotone_and_trace_is_consistent() {
    let dims = vec![vec![6, 5, 4]; 3];
    let (tensors, _) = coupled_truth(&dims, 3, &[2, 1, 0], 4);
    let p = CoupledProblem::new(tensors.clone(), vec![3; 3], vec![2, 1, 0]).unwrap();
    let opts = SolverOptions {
        max_iter: 60,
        tol: 0.0,
        seed: 9,
        ..Default::default()
    };
    let res = solve(&p, &opts).unwrap();
    assert_eq!(res.objective_history.len(), res.iterations + 1);
    for w in res.objective_history.windows(2) {
        assert!(w[1] <= w[0] + 1e-10 * w[0].abs().max(1.0));
    }
    assert_eq!(res.trace[0].iter, 0);
    assert_eq!(res.trace.len(), res.iterations + 1);
    let last = res.trace.last().unwrap();
    let explicit = residual_objective(&tensors, &res.factors);
    assert!((last.objfun - explicit).abs() < 1e-8 * explicit.max(1.0));
    assert!(res.factors.is_nonnegative());
    assert_eq!(res.termination, TerminationReason::MaxIterations);
}

#[test]
fn sequential_and_parallel_agree() {
    let dims = vec![vec![5, 4, 6]; 2];
    let (tensors, _) = coupled_truth(&dims, 2, &[1, 1, 0], 6);
    let p = CoupledProblem::new(tensors, vec![2, 2], vec![1, 1, 0]).unwrap();
    let run = |execution| {
        solve(
            &p,
            &SolverOptions {
                max_iter: 25,
                tol: 0.0,
                seed: 1,
                execution,
                ..Default::default()
            },
        )
        .unwrap()
    };
    let a = run(Execution::Sequential);
    let b = run(Execution::Parallel);
    assert!((a.objfun - b.objfun).abs() < 1e-10 * a.objfun.max(1.0));
}

#[test]
fn recovers_exact_coupled_model() {
    let dims = vec![vec![8, 9, 10]; 3];
    let coupled = [2, 2, 2];
    let mut successes = 0;
    for seed in 0..3 {
        let (tensors, _) = coupled_truth(&dims, 4, &coupled, 100 + seed);
        let p = CoupledProblem::new(tensors, vec![4; 3], coupled.to_vec()).unwrap();
        let opts = SolverOptions {
            max_iter: 3000,
            tol: 1e-10,
            seed,
            ..Default::default()
        };
        let res = solve(&p, &opts).unwrap();
        if res.relerr < 1e-3 {
            successes += 1;
        }
    }
    assert!(successes >= 2, "{successes} of 3 runs recovered");
}

#[test]
fn lra_mode_tracks_original_objective() {
    let dims = vec![vec![6, 5, 4]; 2];
    let (tensors, _) = coupled_truth(&dims, 3, &[1, 1, 1], 8);
    let p = CoupledProblem::new(tensors.clone(), vec![3, 3], vec![1, 1, 1])
        .unwrap()
        .with_mode(SolveMode::Lra(LraOptions::default()));
    let res = solve(
        &p,
        &SolverOptions {
            max_iter: 40,
            tol: 0.0,
            ..Default::default()
        },
    )
    .unwrap();
    let compressed = res.compressed.as_ref().unwrap();
    assert_eq!(compressed.len(), 2);
    let explicit = residual_objective(&tensors, &res.factors);
    assert!((res.objfun - explicit).abs() < 1e-8 * explicit.max(1.0));
    for w in res.objective_history.windows(2) {
        assert!(w[1] <= w[0] + 1e-10 * w[0].abs().max(1.0));
    }
    assert!(res.compression_seconds <= res.elapsed_seconds);
}

#[test]
fn frozen_core_keeps_unit_weights() {
    let dims = vec![vec![4, 4, 4]; 2];
    let (tensors, _) = coupled_truth(&dims, 2, &[1, 0, 0], 12);
    let p = CoupledProblem::new(tensors, vec![2, 2], vec![1, 0, 0])
        .unwrap()
        .with_core_updates(false);
    let res = solve(
        &p,
        &SolverOptions {
            max_iter: 10,
            ..Default::default()
        },
    )
    .unwrap();
    for s in 0..2 {
        assert!(res.factors.weights(s).iter().all(|&w| w == 1.0));
    }
}

#[test]
fn zero_tensor_stops_immediately() {
    let t = DenseTensor::zeros(vec![3, 3, 3]).unwrap();
    let p = CoupledProblem::new(vec![t], vec![2], vec![0, 0, 0]).unwrap();
    let res = solve(&p, &SolverOptions::default()).unwrap();
    assert!(res.objfun.is_finite());
    assert!(res.relerr == 0.0);
}

#[test]
fn warm_start_from_truth_stays_exact() {
    let dims = vec![vec![5, 6, 4]; 2];
    let (tensors, truth) = coupled_truth(&dims, 3, &[2, 0, 1], 21);
    let p = CoupledProblem::new(tensors, vec![3, 3], vec![2, 0, 1]).unwrap();
    let res = solve_from(
        &p,
        &SolverOptions {
            max_iter: 5,
            ..Default::default()
        },
        truth,
    )
    .unwrap();
    assert!(res.relerr < 1e-12);
    assert_eq!(res.trace[0].relerr, res.relerr);

    let wrong = p.initial_factors(0);
    let other = CoupledProblem::new(
        vec![DenseTensor::zeros(vec![5, 6, 5]).unwrap(); 2],
        vec![3, 3],
        vec![2, 0, 1],
    )
    .unwrap();
    assert!(matches!(
        solve_from(&other, &SolverOptions::default(), wrong),
        Err(Error::Shape(_))
    ));
}

#[test]
fn metrics_skipped_without_tolerance_still_trace_endpoints() {
    let dims = vec![vec![4, 5, 3]; 2];
    let (tensors, _) = coupled_truth(&dims, 2, &[1, 0, 0], 30);
    let p = CoupledProblem::new(tensors.clone(), vec![2, 2], vec![1, 0, 0]).unwrap();
    let opts = SolverOptions {
        max_iter: 12,
        tol: 0.0,
        trace_every: 5,
        ..Default::default()
    };
    let res = solve(&p, &opts).unwrap();
    let iters: Vec<usize> = res.trace.iter().map(|r| r.iter).collect();
    assert_eq!(iters, vec![0, 5, 10, 12]);
    let explicit = residual_objective(&tensors, &res.factors);
    assert!((res.objfun - explicit).abs() < 1e-8 * explicit.max(1.0));
}
