#![allow(dead_code)]

use std::sync::Arc;

use meshdqn::agent::toy::{state_graph, ToyEnv, N_STATES, STOP_REWARDS};
use meshdqn::agent::{argmax, EpsilonSchedule, Learner, LearnerConfig, Transition};
use meshdqn::flow::{analytic_snapshots, AnalyticKind, AnalyticParams, FluidConstants};
use meshdqn::interp::{interpolate, velocity_dof_points, Locator, SnapshotSet, VelocityOrder};
use meshdqn::mesh::{
    distance, gen_channel_mesh, gen_obstacle_channel_mesh, BoundaryTag, ObstacleCells, Point,
    TriMesh,
};
use meshdqn::nn::layers::{dense, gcn, readout, sage, topk, topk_select};
use meshdqn::nn::{AdamConfig, Graph, GraphBatch, NetworkConfig, NnError, QNetwork, Tape, Var};
use meshdqn::train::{run_training, TrainConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random undirected graph (both directions stored) with `n` nodes.
pub fn random_graph(n: usize, p_edge: f64, rng: &mut impl Rng) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p_edge) {
                edges.push([i, j]);
                edges.push([j, i]);
            }
        }
    }
    let attr = (0..edges.len())
        .map(|_| rng.random_range(0.1..1.0))
        .collect();
    Graph::single(n, edges, attr).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

pub fn random_batch(n: usize, features: usize, rng: &mut impl Rng) -> GraphBatch {
    let g = random_graph(n, 0.3, rng);
    GraphBatch::new(random_matrix(n, features, rng), g).unwrap()
}

/// Largest per-tensor relative error ‖a − n‖ / max(‖a‖ + ‖n‖, 1e-6) between
/// tape gradients and finite differences of `Σ w ⊙ f(params)`.
///
/// Central fourth-order differences where the function is smooth. Top-k and
/// ReLU make it piecewise smooth; when forward and backward slopes disagree
/// the stencil straddles a kink and the side that is stable under halving
/// the step is used instead, since the tape differentiates the piece the
/// point lies on.
pub fn gradient_check(
    params: &[Array2<f64>],
    f: impl Fn(&mut Tape, &[Array2<f64>]) -> Result<Var, NnError>,
    rng: &mut impl Rng,
) -> f64 {
    let mut tape = Tape::new();
    let out = f(&mut tape, params).unwrap();
    let (r, c) = tape.shape(out);
    let w = random_matrix(r, c, rng);
    let loss = tape.weighted_sum(out, w.clone()).unwrap();
    let analytic = tape.backward(loss, params).unwrap();
    let eval = |ps: &[Array2<f64>]| {
        let mut t = Tape::new();
        let o = f(&mut t, ps).unwrap();
        (t.value(o) * &w).sum()
    };
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for (k, a) in analytic.iter().enumerate() {
        let mut numeric = Array2::zeros(a.dim());
        for idx in 0..a.len() {
            let (i, j) = (idx / a.ncols(), idx % a.ncols());
            let at = |step: f64| {
                let mut ps = params.to_vec();
                ps[k][[i, j]] += step;
                eval(&ps)
            };
            let f: Vec<f64> = [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0]
                .iter()
                .map(|&s| at(s * h))
                .collect();
            let [m2, m1, mh, f0, ph, p1, p2] = f[..] else {
                unreachable!()
            };
            let central = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let (fwd, fwd_half) = (
                (-3.0 * f0 + 4.0 * p1 - p2) / (2.0 * h),
                (-3.0 * f0 + 4.0 * ph - p1) / h,
            );
            let (bwd, bwd_half) = (
                (3.0 * f0 - 4.0 * m1 + m2) / (2.0 * h),
                (3.0 * f0 - 4.0 * mh + m1) / h,
            );
            let tol = 1e-5 * (1.0 + central.abs());
            numeric[[i, j]] = if (fwd - bwd).abs() <= tol {
                central
            } else if (fwd - fwd_half).abs() <= (bwd - bwd_half).abs() {
                fwd_half
            } else {
                bwd_half
            };
        }
        let diff = (a - &numeric).mapv(|v| v * v).sum().sqrt();
        let scale = a.mapv(|v| v * v).sum().sqrt() + numeric.mapv(|v| v * v).sum().sqrt();
        worst = worst.max(diff / scale.max(1e-6));
    }
    worst
}

/// Dense SAGE reference: relu(X W1 + M X W2) with explicit row-averaging matrix M.
pub fn dense_sage(x: &Array2<f64>, g: &Graph, w1: &Array2<f64>, w2: &Array2<f64>) -> Array2<f64> {
    let n = g.n_nodes;
    let mut adj = Array2::<f64>::zeros((n, n));
    for &[a, b] in &g.edges {
        if a != b {
            adj[[a, b]] = 1.0;
        }
    }
    for i in 0..n {
        let d: f64 = adj.row(i).sum();
        if d > 0.0 {
            adj.row_mut(i).mapv_inplace(|v| v / d);
        }
    }
    (x.dot(w1) + adj.dot(x).dot(w2)).mapv(|v| v.max(0.0))
}

/// Dense GCN reference: relu(D^-1/2 (A + I) D^-1/2 X W).
pub fn dense_gcn(x: &Array2<f64>, g: &Graph, w: &Array2<f64>) -> Array2<f64> {
    let n = g.n_nodes;
    let mut a = Array2::<f64>::eye(n);
    for &[i, j] in &g.edges {
        if i != j {
            a[[i, j]] = 1.0;
        }
    }
    let d: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    let norm = Array2::from_shape_fn((n, n), |(i, j)| a[[i, j]] / (d[i] * d[j]).sqrt());
    norm.dot(&x.dot(w)).mapv(|v| v.max(0.0))
}

/// Top-k by full sort of (−score, index).
pub fn sorted_topk(scores: &[f64], ratio: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let k = (ratio * scores.len() as f64).ceil() as usize;
    let mut kept = order[..k].to_vec();
    kept.sort();
    kept
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Small learner for the five-state toy environment.
pub fn toy_learner(seed: u64) -> Learner {
    let cfg = NetworkConfig {
        in_features: N_STATES,
        width: 16,
        n_sage: 1,
        n_gcn: 1,
        topk_ratio: 0.5,
        n_actions: 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = QNetwork::new(cfg, 0.9, &mut rng).unwrap();
    let b = QNetwork::new(cfg, 0.9, &mut rng).unwrap();
    let lc = LearnerConfig {
        batch_size: 16,
        adam: AdamConfig {
            lr: 3e-3,
            ..AdamConfig::default()
        },
        ..LearnerConfig::default()
    };
    Learner::new(lc, a, b)
}

pub fn channel_fixture() -> TriMesh {
    gen_channel_mesh(9, 5, 2.0, 1.0).unwrap()
}

pub fn obstacle_fixture() -> TriMesh {
    gen_obstacle_channel_mesh(
        9,
        7,
        2.0,
        1.0,
        ObstacleCells {
            i0: 3,
            i1: 5,
            j0: 2,
            j1: 4,
        },
    )
    .unwrap()
}

/// Channel with interior vertices displaced by up to a fifth of the grid spacing.
pub fn jittered_fixture(seed: u64) -> TriMesh {
    let base = gen_channel_mesh(8, 6, 1.4, 1.0).unwrap();
    let h = 0.2 * (1.4f64 / 7.0).min(1.0 / 5.0) / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let verts = (0..base.n_vertices())
        .map(|v| {
            let p = base.vertex(v);
            if base.tag(v) == BoundaryTag::Interior {
                [
                    p[0] + rng.random_range(-h..h),
                    p[1] + rng.random_range(-h..h),
                ]
            } else {
                p
            }
        })
        .collect();
    TriMesh::new(verts, base.triangles().to_vec(), base.facets().to_vec()).unwrap()
}

pub fn mesh_fixtures() -> Vec<(&'static str, TriMesh)> {
    vec![
        ("channel", channel_fixture()),
        ("obstacle", obstacle_fixture()),
        ("jittered", jittered_fixture(3)),
    ]
}

/// Worst gradient-check error per building block for one seed, on a graph of
/// 5 to 30 nodes.
pub fn gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let x = random_matrix(6, 4, &mut rng);
    let params = vec![random_matrix(4, 3, &mut rng), random_matrix(1, 3, &mut rng)];
    let err = gradient_check(
        &params,
        |t, p| {
            let xv = t.constant(x.clone());
            let (w, b) = (t.param(0, &p[0]), t.param(1, &p[1]));
            dense(t, xv, w, b)
        },
        &mut rng,
    );
    out.push(("dense", err));

    let n = rng.random_range(5..=30);
    let b = random_batch(n, 4, &mut rng);
    let params = vec![
        random_matrix(4, 5, &mut rng),
        random_matrix(4, 5, &mut rng),
        random_matrix(4, 5, &mut rng),
    ];
    let err = gradient_check(
        &params,
        |t, p| {
            let xin = t.constant(b.x.clone());
            let (w1, w2) = (t.param(0, &p[0]), t.param(1, &p[1]));
            sage(t, xin, &b.graph, w1, w2)
        },
        &mut rng,
    );
    out.push(("sage", err));
    let err = gradient_check(
        &params,
        |t, p| {
            let xin = t.constant(b.x.clone());
            let w = t.param(2, &p[2]);
            gcn(t, xin, &b.graph, w)
        },
        &mut rng,
    );
    out.push(("gcn", err));

    // Gradients flow to both the features and the projection.
    let params = vec![b.x.clone(), random_matrix(4, 1, &mut rng)];
    let err = gradient_check(
        &params,
        |t, p| {
            let (x, proj) = (t.param(0, &p[0]), t.param(1, &p[1]));
            let (y, _, _) = topk(t, x, &b.graph, proj, 0.5)?;
            Ok(y)
        },
        &mut rng,
    );
    out.push(("topk", err));
    let err = gradient_check(
        &params[..1],
        |t, p| {
            let x = t.param(0, &p[0]);
            readout(t, x, &b.graph)
        },
        &mut rng,
    );
    out.push(("readout", err));

    // Full depth plus a one-pool-per-kind network: six tanh gates shrink the
    // deepest gradients to ~1e-10, so the shallow one checks every tensor
    // kind against a gradient of real size.
    for (name, depth) in [("network", 3), ("shallow network", 1)] {
        let cfg = NetworkConfig {
            in_features: 4,
            width: 6,
            n_sage: depth,
            n_gcn: depth,
            topk_ratio: 0.5,
            n_actions: 4,
        };
        let net = QNetwork::new(cfg, 0.9, &mut rng).unwrap();
        let n = rng.random_range(5..=30);
        let mut b = random_batch(n, 4, &mut rng);
        b.x *= 4.0;
        let err = gradient_check(
            &net.params,
            |t, p| QNetwork::from_params(cfg, p.to_vec())?.forward(t, &b),
            &mut rng,
        );
        out.push((name, err));
    }
    out
}

/// Largest gap between the sparse SAGE/GCN layers and their dense references
/// over `graphs` random graphs of 1 to 50 nodes.
pub fn dense_oracle_gap(seed: u64, graphs: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..graphs {
        let n = rng.random_range(1..=50);
        let b = random_batch(n, 3, &mut rng);
        let (w1, w2) = (random_matrix(3, 4, &mut rng), random_matrix(3, 4, &mut rng));
        let mut t = Tape::new();
        let x = t.constant(b.x.clone());
        let (a1, a2) = (t.constant(w1.clone()), t.constant(w2.clone()));
        let s = sage(&mut t, x, &b.graph, a1, a2).unwrap();
        worst = worst.max(max_abs_diff(
            t.value(s),
            &dense_sage(&b.x, &b.graph, &w1, &w2),
        ));
        let g = gcn(&mut t, x, &b.graph, a1).unwrap();
        worst = worst.max(max_abs_diff(t.value(g), &dense_gcn(&b.x, &b.graph, &w1)));
    }
    worst
}

/// Trials where top-k selection disagrees with a full sort.
pub fn topk_mismatches(seed: u64, trials: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .filter(|_| {
            let n = rng.random_range(1..=50);
            // Coarse scores force ties.
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
            let ratio = [0.25, 0.5, 0.8, 1.0][rng.random_range(0..4)];
            topk_select(&scores, &vec![0; n], 1, ratio) != sorted_topk(&scores, ratio)
        })
        .count()
}

/// Checks the walk against the scan on uniform points of the bounding box
/// (points in the hole or outside must be rejected by both).
pub fn locate_agrees_with_scan(mesh: &TriMesh, n: usize, seed: u64) -> Result<usize, String> {
    let (lo, hi) = mesh.bounding_box();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut loc = Locator::new(mesh);
    let mut inside = 0;
    for _ in 0..n {
        let p = [
            rng.random_range(lo[0]..hi[0]),
            rng.random_range(lo[1]..hi[1]),
        ];
        match (loc.locate_strict(p), loc.locate_exhaustive(p)) {
            (None, None) => {}
            (Some(a), Some(b)) => {
                inside += 1;
                if a.triangle != b.triangle {
                    return Err(format!("{p:?}: walk {} scan {}", a.triangle, b.triangle));
                }
                let tri = mesh.triangle_points(a.triangle);
                let q = [0, 1].map(|c| (0..3).map(|k| a.barycentric[k] * tri[k][c]).sum::<f64>());
                if distance(p, q) > 1e-12 {
                    return Err(format!("{p:?}: barycentric reconstruction {q:?}"));
                }
            }
            (a, b) => return Err(format!("{p:?}: walk {a:?} scan {b:?}")),
        }
    }
    Ok(inside)
}

pub fn poly2(c: &[f64; 6], p: Point) -> f64 {
    let [x, y] = p;
    c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y
}

/// Largest nodal error after moving an exactly representable field (linear
/// for P1, quadratic for P2) onto `dst`.
pub fn polynomial_transfer_error(
    src_mesh: &TriMesh,
    dst: &TriMesh,
    order: VelocityOrder,
    c: &[f64; 6],
) -> f64 {
    let f = |p: Point| match order {
        VelocityOrder::P1 => c[0] + c[1] * p[0] + c[2] * p[1],
        VelocityOrder::P2 => poly2(c, p),
    };
    let lin = |p: Point| c[0] + c[1] * p[0] + c[2] * p[1];
    let src = SnapshotSet::from_fn(src_mesh, order, 2, |s, p| {
        (f(p), (s + 1) as f64 * f(p), lin(p))
    })
    .unwrap();
    let out = interpolate(&src, src_mesh, dst).unwrap();
    let mut worst: f64 = 0.0;
    for (q, (ux, uy)) in velocity_dof_points(dst, order)
        .iter()
        .zip(out.snapshot(1).ux.iter().zip(&out.snapshot(1).uy))
    {
        worst = worst.max((ux - f(*q)).abs()).max((uy - 2.0 * f(*q)).abs());
    }
    for (q, p) in dst.vertices().iter().zip(&out.snapshot(0).p) {
        worst = worst.max((p - lin(*q)).abs());
    }
    worst
}

/// Fixture with its `k`-th interior vertex removed and the result smoothed.
pub fn edited(mesh: &TriMesh, k: usize) -> TriMesh {
    let v = mesh.interior_vertices().nth(k).unwrap();
    mesh.remove_vertex(v).unwrap().smooth(50).unwrap()
}

/// Largest nodal error of P1 Poiseuille after one central removal and
/// smoothing, with the grid spacing.
pub fn poiseuille_removal_error(ny: usize) -> (f64, f64) {
    let nx = 2 * ny - 1;
    let mesh = gen_channel_mesh(nx, ny, 2.0, 1.0).unwrap();
    let params = AnalyticParams {
        u_max: 1.0,
        length: 2.0,
        height: 1.0,
        n_snapshots: 1,
        order: VelocityOrder::P1,
        fluid: FluidConstants::default(),
    };
    let snaps = analytic_snapshots(AnalyticKind::Poiseuille, &mesh, &params).unwrap();
    let centre = mesh
        .interior_vertices()
        .min_by(|&a, &b| {
            distance(mesh.vertex(a), [1.0, 0.5]).total_cmp(&distance(mesh.vertex(b), [1.0, 0.5]))
        })
        .unwrap();
    let dst = mesh.remove_vertex(centre).unwrap().smooth(50).unwrap();
    let out = interpolate(&snaps, &mesh, &dst).unwrap();
    let err = dst
        .vertices()
        .iter()
        .zip(&out.snapshot(0).ux)
        .map(|(p, u)| (4.0 * p[1] * (1.0 - p[1]) - u).abs())
        .fold(0.0, f64::max);
    (err, 1.0 / (ny - 1) as f64)
}

fn counts(m: &TriMesh) -> [i64; 3] {
    [
        m.n_vertices() as i64,
        m.n_edges() as i64,
        m.n_triangles() as i64,
    ]
}

/// Removes every interior vertex in turn and checks invariants, the
/// (V, E, T) deltas, stable ids and unchanged boundary loops. Returns the
/// number of removals checked.
pub fn removal_sweep(mesh: &TriMesh) -> Result<usize, String> {
    mesh.check_invariants().map_err(|e| e.to_string())?;
    let before = counts(mesh);
    let mut n = 0;
    for v in mesh.interior_vertices() {
        let out = mesh
            .remove_vertex(v)
            .map_err(|e| format!("vertex {v}: {e}"))?;
        out.check_invariants()
            .map_err(|e| format!("vertex {v}: {e}"))?;
        let after = counts(&out);
        let delta = [
            after[0] - before[0],
            after[1] - before[1],
            after[2] - before[2],
        ];
        if delta != [-1, -3, -2] {
            return Err(format!("vertex {v}: deltas {delta:?}"));
        }
        if out.ids().contains(&mesh.ids()[v]) {
            return Err(format!("vertex {v}: removed id still present"));
        }
        if out.boundary_loops() != mesh.boundary_loops() {
            return Err(format!("vertex {v}: boundary loops changed"));
        }
        n += 1;
    }
    Ok(n)
}

/// Smooths after every `stride`-th removal and checks that boundary
/// coordinates keep their exact bits and connectivity is untouched.
pub fn smoothing_keeps_boundary(mesh: &TriMesh, stride: usize) -> Result<usize, String> {
    let mut n = 0;
    for v in mesh.interior_vertices().step_by(stride) {
        let removed = mesh.remove_vertex(v).map_err(|e| e.to_string())?;
        let smoothed = removed.smooth(50).map_err(|e| e.to_string())?;
        smoothed.check_invariants().map_err(|e| e.to_string())?;
        for u in 0..removed.n_vertices() {
            if removed.tag(u).is_boundary()
                && smoothed.vertex(u).map(f64::to_bits) != removed.vertex(u).map(f64::to_bits)
            {
                return Err(format!("boundary vertex {u} moved after removing {v}"));
            }
        }
        if smoothed.triangles() != removed.triangles() {
            return Err(format!("smoothing changed connectivity after removing {v}"));
        }
        n += 1;
    }
    Ok(n)
}

/// Optimal toy policy by enumerating all 2^5 deterministic policies and
/// keeping the one whose return is maximal from every start state.
pub fn optimal_policy() -> Vec<usize> {
    let ret = |policy: u32, start: usize| {
        let mut s = start;
        loop {
            if policy >> s & 1 == 0 {
                return STOP_REWARDS[s];
            }
            if s + 1 == N_STATES {
                return 0.0;
            }
            s += 1;
        }
    };
    let best = (0..1u32 << N_STATES)
        .max_by(|&a, &b| {
            let (ra, rb): (f64, f64) = (
                (0..N_STATES).map(|s| ret(a, s)).sum(),
                (0..N_STATES).map(|s| ret(b, s)).sum(),
            );
            ra.total_cmp(&rb)
        })
        .unwrap();
    (0..N_STATES).map(|s| (best >> s & 1) as usize).collect()
}

pub fn toy_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        episodes: 400,
        workers: 1,
        seed,
        epsilon: EpsilonSchedule {
            start: 1.0,
            end: 0.1,
            decay_steps: 600,
        },
        warmup: 32,
        updates_per_episode: 4,
        ..TrainConfig::default()
    }
}

/// Greedy toy policy of a network trained with `seed`.
pub fn trained_toy_policy(seed: u64) -> Vec<usize> {
    let out = run_training(
        &toy_train_config(seed),
        toy_learner(seed),
        |_| Ok(ToyEnv::new()),
        &mut Vec::new(),
    )
    .unwrap();
    let net = out.learner.q_select();
    (0..N_STATES)
        .map(|s| {
            argmax(
                net.q_values(&state_graph(s))
                    .unwrap()
                    .row(0)
                    .as_slice()
                    .unwrap(),
            )
        })
        .collect()
}

pub fn toy_transitions() -> Vec<Transition> {
    let mut out = Vec::new();
    for s in 0..N_STATES {
        for a in 0..2 {
            let (next, reward) = ToyEnv::transition(s, a);
            out.push(Transition {
                state: Arc::new(state_graph(s)),
                action: a,
                reward,
                next_state: next.map(|n| Arc::new(state_graph(n))),
            });
        }
    }
    out.truncate(8);
    out
}

/// Trains on a frozen batch of eight toy transitions; returns the step at
/// which the loss fell below 1e-3 (or the cap) and the last loss.
pub fn frozen_buffer_fit(seed: u64, cap: usize) -> (usize, f64) {
    let transitions = toy_transitions();
    let batch: Vec<&Transition> = transitions.iter().collect();
    let mut learner = toy_learner(seed);
    let mut last = f64::INFINITY;
    for step in 0..cap {
        last = learner.train_on(&batch).unwrap();
        if last < 1e-3 {
            return (step, last);
        }
    }
    (cap, last)
}
