use proptest::prelude::*;
use semqp_core::effects::{full_total_effects, path_totals};
use semqp_core::linalg::{self, block_lower_inverse, inverse, kron, Matrix};
use semqp_core::model::Edge;
use semqp_core::testkit::ModelGen;
use semqp_core::{enumerate_path_effects, partition_by_treatment, total_effects, SemGraph, SemModel};

fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
    a.shape() == b.shape() && a.max_abs_diff(b) <= tol
}

/// `sum_{k>=1} A^k` for nilpotent `A`.
fn neumann(a: &Matrix) -> Matrix {
    let n = a.rows();
    let mut power = a.clone();
    let mut sum = Matrix::zeros(n, n);
    for _ in 0..n {
        sum = &sum + &power;
        power = &power * a;
    }
    sum
}

/// Sum over simple paths by plain recursion over the edge list.
fn path_sum(edges: &[Edge], from: &str, to: &str) -> f64 {
    if from == to {
        return 1.0;
    }
    edges
        .iter()
        .filter(|e| e.from == from)
        .map(|e| e.coef * path_sum(edges, &e.to, to))
        .sum()
}

fn random_model(seed: u64) -> (SemGraph, SemModel) {
    let mut gen = ModelGen::new(seed);
    let n = gen.int(2, 8);
    let g = gen.graph(n, 0.5);
    let m = gen.partition(&g);
    (g, m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn vec_kron_identity(seed in any::<u64>()) {
        let mut gen = ModelGen::new(seed);
        let (p, q, r, s) = (gen.int(1, 5), gen.int(1, 5), gen.int(1, 5), gen.int(1, 5));
        let b = gen.matrix(p, q, -1.0, 1.0);
        let d = gen.matrix(q, r, -1.0, 1.0);
        let c = gen.matrix(r, s, -1.0, 1.0);
        let lhs = linalg::vec(&(&(&b * &d) * &c));
        let rhs = kron(&c.transpose(), &b).mul_vec(&linalg::vec(&d));
        let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(x, y)| x - y).collect();
        prop_assert!(linalg::max_abs(&diff) <= 1e-10);
    }

    #[test]
    fn block_inverse_matches_dense(seed in any::<u64>()) {
        let mut gen = ModelGen::new(seed);
        let sizes = [gen.int(0, 4), gen.int(0, 4), gen.int(0, 4)];
        let diag = |gen: &mut ModelGen, n: usize| &gen.matrix(n, n, -0.5, 0.5) + &Matrix::identity(n).scale(3.0);
        let b11 = diag(&mut gen, sizes[0]);
        let b22 = diag(&mut gen, sizes[1]);
        let b33 = diag(&mut gen, sizes[2]);
        let b21 = gen.matrix(sizes[1], sizes[0], -1.0, 1.0);
        let b31 = gen.matrix(sizes[2], sizes[0], -1.0, 1.0);
        let b32 = gen.matrix(sizes[2], sizes[1], -1.0, 1.0);
        let full = linalg::assemble_block_lower(&b11, &b21, &b22, &b31, &b32, &b33);
        let fast = block_lower_inverse(&b11, &b21, &b22, &b31, &b32, &b33).unwrap().assemble();
        prop_assert!(close(&fast, &inverse(&full).unwrap(), 1e-9));
    }

    #[test]
    fn total_effects_are_the_neumann_series(seed in any::<u64>()) {
        let (_, m) = random_model(seed);
        let series = neumann(&m.full_coefficients());
        prop_assert!(close(&full_total_effects(&m).unwrap(), &series, 1e-10));
        let te = total_effects(&m).unwrap();
        let (nz, nx) = (m.n_z(), m.n_x());
        let n = m.n_total();
        let z: Vec<usize> = (0..nz).collect();
        let x: Vec<usize> = (nz..nz + nx).collect();
        let y: Vec<usize> = (nz + nx..n).collect();
        prop_assert!(close(&te.xz, &series.select(&x, &z), 1e-10));
        prop_assert!(close(&te.yx, &series.select(&y, &x), 1e-10));
        prop_assert!(close(&te.yz, &series.select(&y, &z), 1e-10));
        prop_assert!(close(&te.zz, &series.select(&z, &z), 1e-10));
        prop_assert!(close(&te.yy, &series.select(&y, &y), 1e-10));
    }

    #[test]
    fn decomposition_and_paths(seed in any::<u64>()) {
        let (g, m) = random_model(seed);
        let te = total_effects(&m).unwrap();
        prop_assert!(close(&te.yz, &(&te.yz_through + &te.yz_avoid), 1e-12));
        for (j, z) in m.covariates.iter().enumerate() {
            for (i, y) in m.outputs.iter().enumerate() {
                let paths = enumerate_path_effects(&m, z, y).unwrap();
                let (through, avoid, total) = path_totals(&paths);
                prop_assert!((total - te.yz[(i, j)]).abs() <= 1e-10);
                prop_assert!((through - te.yz_through[(i, j)]).abs() <= 1e-10);
                prop_assert!((avoid - te.yz_avoid[(i, j)]).abs() <= 1e-10);
                prop_assert!((total - path_sum(&g.edges, z, y)).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn partition_ignores_edge_order(seed in any::<u64>(), rot in 0usize..50) {
        let (g, m) = random_model(seed);
        let mut shuffled = g.clone();
        shuffled.edges.reverse();
        if !shuffled.edges.is_empty() {
            let k = rot % shuffled.edges.len();
            shuffled.edges.rotate_left(k);
        }
        let again = partition_by_treatment(&shuffled, &m.treatments).unwrap();
        prop_assert_eq!(again, m);
    }

    #[test]
    fn graph_round_trip(seed in any::<u64>()) {
        let (_, m) = random_model(seed);
        let back = SemGraph::from_model(&m);
        let again = partition_by_treatment(&back, &m.treatments).unwrap();
        prop_assert_eq!(again, m);
    }
}
