mod common;

use common::*;
use eics::circuit::{macro_jacobian, macro_operator, topological_order};
use eics::rng;
use eics::sheaf::{self, EdgeWeighting};
use eics::toy::{self, ToyConfig};
use eics::LinearMap;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

/// Sum over directed paths `i → … → j` of the product of edge maps,
/// never passing through another clamped node.
fn path_sum(rc: &RandomCircuit, i: usize, j: usize, clamped: &[bool]) -> DMatrix<f64> {
    fn walk(
        rc: &RandomCircuit,
        at: usize,
        j: usize,
        acc: &DMatrix<f64>,
        clamped: &[bool],
        out: &mut DMatrix<f64>,
    ) {
        if at == j {
            *out += acc;
            return;
        }
        for (u, v, m) in &rc.edges {
            if *u == at && !clamped[*v] {
                walk(rc, *v, j, &(m * acc), clamped, out);
            }
        }
    }
    let mut out = DMatrix::zeros(rc.dims[j], rc.dims[i]);
    if i == j {
        out.fill_with_identity();
        return out;
    }
    if clamped[j] {
        return out;
    }
    walk(
        rc,
        i,
        j,
        &DMatrix::identity(rc.dims[i], rc.dims[i]),
        clamped,
        &mut out,
    );
    out
}

fn block_oracle(rc: &RandomCircuit, from: &[usize], to: &[usize]) -> DMatrix<f64> {
    let mut clamped = vec![false; rc.dims.len()];
    for &f in from {
        clamped[f] = true;
    }
    let rows: usize = to.iter().map(|&t| rc.dims[t]).sum();
    let cols: usize = from.iter().map(|&f| rc.dims[f]).sum();
    let mut m = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for &t in to {
        let mut c = 0;
        for &f in from {
            let b = path_sum(rc, f, t, &clamped);
            m.view_mut((r, c), b.shape()).copy_from(&b);
            c += rc.dims[f];
        }
        r += rc.dims[t];
    }
    m
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn macro_jacobian_equals_path_sum(seed in any::<u64>()) {
        let mut g = rng::stream(seed, 0);
        let rc = random_circuit(&mut g, 8, 4, 0.4);
        let n = rc.dims.len();
        // declared inputs to outputs, then a random clamped subset
        let inputs: Vec<usize> = rc.circuit.inputs().iter().map(|s| rc.circuit.node_index(s).unwrap()).collect();
        let outputs: Vec<usize> = rc.circuit.outputs().iter().map(|s| rc.circuit.node_index(s).unwrap()).collect();
        let mut from: Vec<usize> = (0..n).filter(|_| g.random_bool(0.4)).collect();
        if from.is_empty() { from.push(0); }
        let to: Vec<usize> = (0..n).filter(|_| g.random_bool(0.5)).chain([n - 1]).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        for (f, t) in [(inputs, outputs), (from, to)] {
            let ids = |v: &[usize]| v.iter().map(|&i| id(i)).collect::<Vec<_>>();
            let got = macro_jacobian(&rc.circuit, &ids(&f), &ids(&t)).unwrap().map.to_dense();
            let want = block_oracle(&rc, &f, &t);
            prop_assert!(max_abs(&(&got - &want)) <= 1e-12 * (1.0 + max_abs(&want)));
            let op = macro_operator(&rc.circuit, &ids(&f), &ids(&t)).unwrap();
            prop_assert!(max_abs(&(op.to_dense() - &want)) <= 1e-12 * (1.0 + max_abs(&want)));
            prop_assert!(op.adjoint_mismatch(3, seed) <= 1e-12);
        }
    }

    #[test]
    fn operator_forms_match_dense(seed in any::<u64>()) {
        let mut g = rng::stream(seed, 1);
        let rc = random_circuit(&mut g, 7, 5, 0.3);
        prop_assume!(!rc.edges.is_empty());
        let d = sheaf::coboundary_matrix(&rc.circuit).unwrap();
        let dop = sheaf::coboundary_operator(&rc.circuit);
        prop_assert!(max_abs(&(dop.to_dense() - &d)) <= 1e-14);
        for w in [EdgeWeighting::unit(), EdgeWeighting::inverse_operator_norm()] {
            let l = sheaf::sheaf_laplacian(&rc.circuit, &w).unwrap();
            let lop = sheaf::laplacian_operator(&rc.circuit, &w).unwrap();
            prop_assert!(max_abs(&(lop.to_dense() - &l)) <= 1e-12 * (1.0 + max_abs(&l)));
            let weights = sheaf::edge_weights(&rc.circuit, &w).unwrap();
            prop_assert!(max_abs(&(rc.dense_laplacian(&weights) - &l)) <= 1e-12 * (1.0 + max_abs(&l)));
        }
    }

    #[test]
    fn laplacian_quadratic_form_is_weighted_energy(seed in any::<u64>()) {
        let mut g = rng::stream(seed, 2);
        let rc = random_circuit(&mut g, 7, 4, 0.3);
        let w = EdgeWeighting::inverse_operator_norm();
        let weights = sheaf::edge_weights(&rc.circuit, &w).unwrap();
        let s = rc.random_state(&mut g);
        let x = s.stacked(&rc.circuit).unwrap();
        let l = sheaf::sheaf_laplacian(&rc.circuit, &w).unwrap();
        let quad = x.dot(&(&l * &x));
        let energy: f64 = rc.edges.iter().zip(&weights).map(|((u, v, m), w)| {
            w * (m * s.get(&id(*u)).unwrap() - s.get(&id(*v)).unwrap()).norm_squared()
        }).sum();
        prop_assert!((quad - energy).abs() <= 1e-10 * (1.0 + energy));
        prop_assert!(quad >= -1e-12);
    }

    #[test]
    fn least_squares_section_is_a_projection(seed in any::<u64>()) {
        let mut g = rng::stream(seed, 3);
        let rc = random_circuit(&mut g, 6, 4, 0.3);
        let a = rc.random_state(&mut g);
        let (s, residual) = sheaf::least_squares_section(&rc.circuit, &a).unwrap();
        let (ds, _) = sheaf::coboundary_apply(&rc.circuit, &s).unwrap();
        let scale = a.stacked(&rc.circuit).unwrap().norm();
        prop_assert!(ds.energy().sqrt() <= 1e-9 * (1.0 + scale));
        let (s2, _) = sheaf::least_squares_section(&rc.circuit, &s).unwrap();
        let x = s.stacked(&rc.circuit).unwrap();
        prop_assert!((s2.stacked(&rc.circuit).unwrap() - &x).norm() <= 1e-9 * (1.0 + scale));
        // a − ŝ is orthogonal to every global section, in particular ŝ
        let diff = a.stacked(&rc.circuit).unwrap() - &x;
        prop_assert!(diff.dot(&x).abs() <= 1e-9 * (1.0 + scale * scale));
        let (da, _) = sheaf::coboundary_apply(&rc.circuit, &a).unwrap();
        prop_assert!((residual - da.energy()).abs() <= 1e-12 * (1.0 + residual));
    }

    #[test]
    fn inconsistency_is_scale_invariant(seed in any::<u64>(), k in 0.1f64..10.0) {
        let mut g = rng::stream(seed, 4);
        let rc = random_circuit(&mut g, 6, 5, 0.3);
        let a = rc.random_state(&mut g);
        let c1 = sheaf::sheaf_inconsistency(&rc.circuit, &a, 1e-8).unwrap().c_sh;
        let c2 = sheaf::sheaf_inconsistency(&rc.circuit, &a.scaled(k), 1e-8).unwrap().c_sh;
        prop_assert!((c1 - c2).abs() <= 1e-6 * (1.0 + c1));
        prop_assert!(c1 >= 0.0);
    }

    #[test]
    fn dense_and_operator_ei_agree(seed in any::<u64>()) {
        let mut g = rng::stream(seed, 5);
        let r = g.random_range(1..10);
        let c = g.random_range(1..10);
        let m = rng::normal_matrix(&mut g, r, c);
        let dense = eics::ei::ei_gaussian(&LinearMap::dense(m.clone()), 1.3, eics::ei::Evaluation::Exact).unwrap().nats;
        let op = eics::ei::ei_gaussian(&LinearMap::dense_as_operator(m.clone()), 1.3, eics::ei::Evaluation::Exact).unwrap().nats;
        prop_assert!(rel_err(dense, op) <= 1e-10);
        prop_assert!(rel_err(dense, ei_oracle(&m, 1.3)) <= 1e-10);
    }
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let x = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

#[test]
fn toy_topological_order_is_smallest_valid_permutation() {
    let (c, _) = toy::build_toy_circuit(
        &ToyConfig {
            dim: 2,
            ..ToyConfig::default()
        },
        0,
    );
    let names: Vec<String> = c.nodes().iter().map(|n| n.id.clone()).collect();
    let edges: Vec<(usize, usize)> = (0..c.edges().len()).map(|k| c.endpoints(k)).collect();
    let mut valid: Vec<Vec<String>> = permutations(&(0..names.len()).collect::<Vec<_>>())
        .into_iter()
        .filter(|p| {
            let pos = |x: usize| p.iter().position(|&y| y == x).unwrap();
            edges.iter().all(|&(u, v)| pos(u) < pos(v))
        })
        .map(|p| p.into_iter().map(|i| names[i].clone()).collect())
        .collect();
    valid.sort();
    // n4 and n5 commute, as do n1 and n2
    assert_eq!(valid.len(), 4);
    assert_eq!(topological_order(&c).unwrap(), valid[0]);
}

#[test]
fn consistent_forward_state_is_a_global_section() {
    let mut g = rng::stream(9, 0);
    for _ in 0..50 {
        let rc = random_circuit(&mut g, 8, 6, 0.0);
        let s = rc.forward_state(&mut g);
        let (proj, residual) = sheaf::least_squares_section(&rc.circuit, &s).unwrap();
        assert_eq!(residual, 0.0);
        let x = s.stacked(&rc.circuit).unwrap();
        let scale = 1.0 + x.norm();
        assert!((proj.stacked(&rc.circuit).unwrap() - x).norm() <= 1e-9 * scale);
    }
}

#[test]
fn disconnected_lambda2_reports_beta() {
    let rc = build(
        vec![2, 2, 2, 2],
        vec![
            (0, 1, DMatrix::identity(2, 2)),
            (2, 3, DMatrix::identity(2, 2)),
        ],
    );
    let rep = sheaf::lambda2(&rc.circuit, &EdgeWeighting::unit(), 0.0).unwrap();
    assert!(!rep.connected);
    assert_eq!(rep.lambda2, 0.0);
    assert_eq!(
        sheaf::lambda2(&rc.circuit, &EdgeWeighting::unit(), 0.5)
            .unwrap()
            .lambda2,
        0.5
    );
}
