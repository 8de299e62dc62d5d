//! Property-based checks of the structural identities: Gauss-Green
//! duality, norm embeddings, Fenchel-Young nonnegativity, proximal-map
//! optimality, and the kernel of the differential.

use metricflow::energy::Integrand;
use metricflow::space::{CotangentField, Space, VectorField, VertexFunction};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct SpaceRecipe {
    vertex_measures: Vec<f64>,
    tree_parents: Vec<prop::sample::Index>,
    tree_measures: Vec<f64>,
    extra_edges: Vec<(prop::sample::Index, prop::sample::Index, f64)>,
}

fn space_recipe() -> impl Strategy<Value = SpaceRecipe> {
    (2usize..7)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0.5f64..2.0, n),
                prop::collection::vec(any::<prop::sample::Index>(), n - 1),
                prop::collection::vec(0.5f64..2.0, n - 1),
                prop::collection::vec(
                    (
                        any::<prop::sample::Index>(),
                        any::<prop::sample::Index>(),
                        0.5f64..2.0,
                    ),
                    0..4,
                ),
            )
        })
        .prop_map(
            |(vertex_measures, tree_parents, tree_measures, extra_edges)| SpaceRecipe {
                vertex_measures,
                tree_parents,
                tree_measures,
                extra_edges,
            },
        )
}

fn build(recipe: &SpaceRecipe) -> Space {
    let n = recipe.vertex_measures.len();
    let ids: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    let vertices: Vec<(&str, f64)> = ids
        .iter()
        .zip(&recipe.vertex_measures)
        .map(|(id, nu)| (id.as_str(), *nu))
        .collect();
    let mut edges: Vec<(&str, &str, f64)> = Vec::new();
    for i in 1..n {
        let parent = recipe.tree_parents[i - 1].index(i);
        edges.push((ids[parent].as_str(), ids[i].as_str(), recipe.tree_measures[i - 1]));
    }
    for (a, b, m) in &recipe.extra_edges {
        let (a, b) = (a.index(n), b.index(n));
        if a != b {
            edges.push((ids[a].as_str(), ids[b].as_str(), *m));
        }
    }
    Space::build(&vertices, &edges).expect("recipe produces a valid space")
}

fn all_kinds() -> Vec<Integrand> {
    vec![
        Integrand::p_power(1.5).unwrap(),
        Integrand::p_power(2.0).unwrap(),
        Integrand::p_power(3.0).unwrap(),
        Integrand::qp_sum(1.5, 3.0).unwrap(),
        Integrand::one_p_sum(2.0).unwrap(),
    ]
}

proptest! {
    #[test]
    fn gauss_green_identity(
        recipe in space_recipe(),
        raw_u in prop::collection::vec(-3.0f64..3.0, 6),
        raw_x in prop::collection::vec(-3.0f64..3.0, 16),
    ) {
        let space = build(&recipe);
        let u = VertexFunction::new(raw_u[..space.vertex_count()].to_vec()).unwrap();
        let x = VectorField::new(raw_x[..space.edge_count()].to_vec()).unwrap();
        let du = space.differential(&u);
        let div = space.divergence(&x);
        let lhs = space.pairing(&du, &x);
        let rhs = -space.vertex_inner(&u, &div);
        let scale = 1.0 + lhs.abs() + rhs.abs();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);

        // pairing against constants: total divergence mass vanishes
        let total = space.mass(&div);
        let l1 = space.lp_norm(x.as_ref(), 1.0).unwrap();
        prop_assert!(total.abs() <= 1e-12 * (1.0 + l1));
    }

    #[test]
    fn norm_embedding_inequality(
        recipe in space_recipe(),
        raw_v in prop::collection::vec(-4.0f64..4.0, 16),
    ) {
        let space = build(&recipe);
        let v = &raw_v[..space.edge_count()];
        let total = space.total_edge_measure();
        for (q, p) in [(1.0, 2.0), (1.5, 3.0), (2.0, 4.0)] {
            let nq = space.lp_norm(v, q).unwrap();
            let np = space.lp_norm(v, p).unwrap();
            let bound = total.powf(1.0 / q - 1.0 / p) * np;
            prop_assert!(nq <= bound * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn fenchel_young_nonnegative(
        kind in 0usize..5,
        s in -8.0f64..8.0,
        t in -8.0f64..8.0,
    ) {
        let integrand = &all_kinds()[kind];
        let gap = integrand.phi(s) + integrand.conjugate(t) - s * t;
        let scale = 1.0 + integrand.phi(s) + integrand.conjugate(t);
        prop_assert!(gap >= -1e-14 * scale, "gap {gap}");
    }

    #[test]
    fn prox_satisfies_first_order_conditions(
        kind in 0usize..5,
        lambda in 0.01f64..5.0,
        w in -5.0f64..5.0,
    ) {
        let integrand = &all_kinds()[kind];
        let s = integrand.prox(lambda, w);
        if s != 0.0 {
            let resid = s + lambda * integrand.grad(s) - w;
            prop_assert!(resid.abs() <= 1e-9 * (1.0 + w.abs()), "resid {resid}");
        } else if integrand.is_q1() {
            // the kink absorbs |w| <= lambda
            prop_assert!(w.abs() <= lambda * (1.0 + 1e-12) + 1e-12);
        } else {
            prop_assert!(w.abs() <= 1e-9);
        }
    }

    #[test]
    fn differential_vanishes_iff_componentwise_constant(
        recipe in space_recipe(),
        raw_u in prop::collection::vec(-3.0f64..3.0, 6),
    ) {
        let space = build(&recipe);
        let u = VertexFunction::new(raw_u[..space.vertex_count()].to_vec()).unwrap();
        let du = space.differential(&u);
        let labels = space.components();
        let mut constant = true;
        for c in 0..space.vertex_count() {
            for d in 0..space.vertex_count() {
                if labels[c] == labels[d]
                    && (u.values()[c] - u.values()[d]).abs() > 1e-13
                {
                    constant = false;
                }
            }
        }
        let du_zero = du.values().iter().all(|v| v.abs() <= 1e-13);
        prop_assert_eq!(constant, du_zero);
    }

    #[test]
    fn energy_convexity(
        recipe in space_recipe(),
        raw_a in prop::collection::vec(-3.0f64..3.0, 16),
        raw_b in prop::collection::vec(-3.0f64..3.0, 16),
        lambda in 0.0f64..1.0,
        kind in 0usize..5,
    ) {
        let space = build(&recipe);
        let integrand = &all_kinds()[kind];
        let m = space.edge_count();
        let a = CotangentField::new(raw_a[..m].to_vec()).unwrap();
        let b = CotangentField::new(raw_b[..m].to_vec()).unwrap();
        let mix = CotangentField::new(
            a.values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
                .collect(),
        )
        .unwrap();
        let lhs = metricflow::energy::energy(&space, integrand, &mix).value;
        let rhs = lambda * metricflow::energy::energy(&space, integrand, &a).value
            + (1.0 - lambda) * metricflow::energy::energy(&space, integrand, &b).value;
        prop_assert!(lhs <= rhs + 1e-11 * (1.0 + rhs.abs()));
    }
}
