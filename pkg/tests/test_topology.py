import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tro_opt.errors import DegenerateDataError, FormatError, InvalidInputError
from tro_opt.model import MLP, ModelSpec, Predictor, init_predictor
from tro_opt.topology import (
    DATA,
    PHYSICAL,
    TopologyGraph,
    build_knn_graph,
    diffusion_emd,
    diffusion_operator,
    extract_features,
    load_physical_topology,
    median_heuristic_sigma2,
    multiscale_densities,
    pairwise_group_distances,
    rbf_affinity,
)

# -- affinity and kernel scale ---------------------------------------------------


def test_rbf_identical_points():
    np.testing.assert_array_equal(rbf_affinity([[1.0, 2.0], [1.0, 2.0]], 0.7), np.ones((2, 2)))


def test_rbf_quarter_value():
    s2 = 1.3
    K = rbf_affinity([[0.0], [np.sqrt(s2 * np.log(4))]], s2)
    assert K[0, 1] == pytest.approx(0.25, abs=1e-14)


def test_rbf_symmetric_unit_diagonal():
    F = np.random.default_rng(0).normal(size=(30, 3))
    K = rbf_affinity(F, 2.0)
    assert np.max(np.abs(K - K.T)) <= 1e-12
    assert np.all(np.diag(K) == 1.0)


@pytest.mark.parametrize("s2", [0.0, -1.0, np.nan])
def test_rbf_rejects_bad_scale(s2):
    with pytest.raises(InvalidInputError):
        rbf_affinity([[0.0], [1.0]], s2)


def test_rbf_rejects_nonfinite_features():
    with pytest.raises(InvalidInputError):
        rbf_affinity([[0.0], [np.inf]], 1.0)


def test_median_heuristic_examples():
    assert median_heuristic_sigma2([0.0, 1.0]) == 1.0
    assert median_heuristic_sigma2([0.0, 1.0, 3.0]) == 4.0
    F = np.random.default_rng(1).normal(size=(20, 2))
    assert median_heuristic_sigma2(3 * F) == pytest.approx(9 * median_heuristic_sigma2(F), rel=1e-12)
    with pytest.raises(DegenerateDataError):
        median_heuristic_sigma2([[1.0, 1.0]] * 4)


# -- diffusion operator ----------------------------------------------------------------


def test_operator_uniform():
    np.testing.assert_allclose(diffusion_operator(np.ones((3, 3))).P, np.full((3, 3), 1 / 3), atol=1e-15)


def test_operator_two_point_hand_example():
    P = diffusion_operator([[1.0, 0.5], [0.5, 1.0]]).P
    np.testing.assert_allclose(P, [[2 / 3, 1 / 3], [1 / 3, 2 / 3]], atol=1e-15)


def test_operator_rejects_isolated_point():
    with pytest.raises(DegenerateDataError):
        diffusion_operator([[0.0, 0.0], [0.0, 1.0]])


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 30), st.integers(0, 10_000))
def test_operator_row_stochastic(n, seed):
    A = np.random.default_rng(seed).random((n, n))
    P = diffusion_operator((A + A.T) / 2 + np.eye(n)).P
    assert np.max(np.abs(P.sum(axis=1) - 1)) <= 1e-9
    assert P.min() >= 0 and P.max() <= 1


def test_dyadic_powers_match_matrix_power():
    A = np.random.default_rng(2).random((6, 6))
    op = diffusion_operator(A + A.T)
    for k, Pk in enumerate(op.dyadic_powers(4)):
        np.testing.assert_allclose(Pk, np.linalg.matrix_power(op.P, 2**k), atol=1e-12)


# -- densities and diffusion EMD ---------------------------------------------------------


def test_densities_uniform_operator():
    op = diffusion_operator(np.ones((4, 4)))
    dens = multiscale_densities(op, [1, 0, 1, 0], 3)
    for mu in dens.scales:
        np.testing.assert_allclose(mu, 0.25, atol=1e-15)


def test_densities_two_point_example():
    op = diffusion_operator([[1.0, 0.5], [0.5, 1.0]])
    dens = multiscale_densities(op, [1, 0], 0)
    np.testing.assert_allclose(dens.scales[0], [2 / 3, 1 / 3], atol=1e-15)


def test_densities_reject_empty_group():
    op = diffusion_operator(np.ones((3, 3)))
    with pytest.raises(InvalidInputError):
        multiscale_densities(op, [0, 0, 0], 2)


def _random_groups(rng, m, n_per, d=2):
    return [rng.normal(loc=rng.normal(scale=2, size=d), size=(n_per, d)) for _ in range(m)]


def test_densities_are_probability_vectors():
    rng = np.random.default_rng(3)
    F = np.vstack(_random_groups(rng, 3, 20))
    op = diffusion_operator(rbf_affinity(F, median_heuristic_sigma2(F)))
    ind = np.zeros(60)
    ind[20:40] = 1
    for mu in multiscale_densities(op, ind, 4).scales:
        assert mu.min() >= 0 and abs(mu.sum() - 1) <= 1e-9


def test_emd_identity_symmetry_triangle():
    rng = np.random.default_rng(4)
    F = np.vstack(_random_groups(rng, 4, 15))
    op = diffusion_operator(rbf_affinity(F, median_heuristic_sigma2(F)))
    dens = []
    for g in range(4):
        ind = np.zeros(60)
        ind[15 * g : 15 * (g + 1)] = 1
        dens.append(multiscale_densities(op, ind, 4))
    for a in dens:
        assert diffusion_emd(a, a) == 0.0
        for b in dens:
            assert diffusion_emd(a, b) == diffusion_emd(b, a)
            for c in dens:
                assert diffusion_emd(a, c) <= diffusion_emd(a, b) + diffusion_emd(b, c) + 1e-9


def test_emd_hand_computed():
    # two scales; weights 2^{-(K-k-1) alpha} with K=1 give weight 1 on the single difference
    op = diffusion_operator([[1.0, 0.5], [0.5, 1.0]])
    a = multiscale_densities(op, [1, 0], 1)
    b = multiscale_densities(op, [0, 1], 1)
    P = op.P
    mu_a = [np.array([1.0, 0.0]) @ P, np.array([1.0, 0.0]) @ P @ P]
    mu_b = [np.array([0.0, 1.0]) @ P, np.array([0.0, 1.0]) @ P @ P]
    expected = np.abs((mu_a[1] - mu_a[0]) - (mu_b[1] - mu_b[0])).sum() + np.abs(mu_a[1] - mu_b[1]).sum()
    assert diffusion_emd(a, b, alpha=0.5) == pytest.approx(expected, abs=1e-15)


def test_emd_mismatched_scales():
    op = diffusion_operator(np.ones((3, 3)))
    with pytest.raises(InvalidInputError):
        diffusion_emd(multiscale_densities(op, [1, 0, 0], 2), multiscale_densities(op, [1, 0, 0], 3))


def test_pairwise_identical_groups_zero():
    F = np.random.default_rng(5).normal(size=(20, 2))
    G = np.random.default_rng(6).normal(size=(20, 2)) + 3
    D = pairwise_group_distances([F, F.copy(), G])
    assert D[0, 1] <= 1e-9
    assert D[0, 2] > 0.1


def test_pairwise_monotone_in_separation():
    rng = np.random.default_rng(7)
    groups = [c + 0.3 * rng.normal(size=(25, 1)) for c in (0.0, 1.0, 10.0)]
    D = pairwise_group_distances(groups)
    assert D[0, 1] < D[0, 2]
    assert np.max(np.abs(D - D.T)) <= 1e-9 and np.all(np.diag(D) == 0)


def test_pairwise_invariant_to_point_order_within_group():
    rng = np.random.default_rng(8)
    groups = _random_groups(rng, 3, 12)
    D = pairwise_group_distances(groups)
    shuffled = [g[rng.permutation(len(g))] for g in groups]
    np.testing.assert_allclose(pairwise_group_distances(shuffled), D, atol=1e-10)


def test_pairwise_needs_two_groups():
    with pytest.raises(InvalidInputError):
        pairwise_group_distances([np.zeros((3, 2))])


# -- features and graphs -------------------------------------------------------------------


def test_extract_features():
    X = np.random.default_rng(9).normal(size=(7, 3))
    lin = Predictor("linear", 3, np.ones(4))
    np.testing.assert_array_equal(extract_features(lin, X), X)
    zero = Predictor(MLP, 3, np.zeros(3 * 5 + 2 * 5 + 1), hidden=5)
    np.testing.assert_array_equal(extract_features(zero, X), np.zeros((7, 5)))
    net = init_predictor(ModelSpec(MLP, hidden=6), 3, np.random.default_rng(0))
    assert extract_features(net, X).shape == (7, 6)
    with pytest.raises(InvalidInputError):
        extract_features(net, np.zeros((2, 4)))


def test_knn_examples():
    D3 = np.array([[0, 1, 2], [1, 0, 1.5], [2, 1.5, 0]], dtype=float)
    assert build_knn_graph(D3, k=2).edges == {(0, 1), (0, 2), (1, 2)}
    pos = np.arange(4.0)
    D = np.abs(pos[:, None] - pos[None, :])
    g = build_knn_graph(D, k=1)
    assert g.edges == {(0, 1), (1, 2), (2, 3)}
    assert g.provenance == DATA and g.weight(1, 2) == 1.0
    with pytest.raises(InvalidInputError):
        build_knn_graph(D, k=4)
    with pytest.raises(InvalidInputError):
        build_knn_graph(D, k=0)


def test_knn_ties_go_to_lower_index():
    D = np.ones((4, 4)) - np.eye(4)
    assert build_knn_graph(D, k=1).edges == {(0, 1), (0, 2), (0, 3)}
    assert build_knn_graph(D, k=1).edges == build_knn_graph(D.copy(), k=1).edges


def test_physical_topology_inputs(tmp_path):
    g = load_physical_topology([(0, 1), (1, 2)], 3)
    assert g.edges == {(0, 1), (1, 2)} and g.provenance == PHYSICAL
    assert load_physical_topology([], 4).edges == frozenset()
    assert load_physical_topology([(0, 1), (1, 0), (0, 1)], 2).edges == {(0, 1)}
    with pytest.raises(FormatError):
        load_physical_topology([(1, 1)], 3)
    with pytest.raises(FormatError):
        load_physical_topology([(0, 3)], 3)
    txt = tmp_path / "edges.txt"
    txt.write_text("# chain\nnum_groups 3\n0 1\n1 2  # tail\n")
    assert load_physical_topology(txt).edges == {(0, 1), (1, 2)}
    js = tmp_path / "edges.json"
    js.write_text(json.dumps({"num_groups": 3, "edges": [[2, 1]]}))
    assert load_physical_topology(js).edges == {(1, 2)}
    bad = tmp_path / "bad.txt"
    bad.write_text("num_groups 2\n0 x\n")
    with pytest.raises(FormatError, match="bad.txt:2"):
        load_physical_topology(bad)


def test_graph_json_roundtrip_and_dot():
    D = np.array([[0, 1, 2], [1, 0, 1.5], [2, 1.5, 0]], dtype=float)
    g = build_knn_graph(D, k=1, node_ids=(4, 7, 9), names=("a", "b", "c"))
    back = TopologyGraph.from_dict(json.loads(json.dumps(g.to_dict())))
    assert back.edges == g.edges and back.node_ids == (4, 7, 9) and back.edge_weights == g.edge_weights
    np.testing.assert_array_equal(back.distance_matrix, D)
    dot = g.to_dot()
    assert dot.startswith('graph "data_topology" {') and '0 -- 1 [weight=1.0];' in dot and 'label="c"' in dot
    chain = load_physical_topology([(i, i + 1) for i in range(4)], 5)
    assert chain.to_dot().count(" -- ") == 4


def test_graph_validation():
    with pytest.raises(InvalidInputError):
        TopologyGraph(2, frozenset(), PHYSICAL, distance_matrix=np.array([[0, 1], [2, 0.0]]))
    with pytest.raises(InvalidInputError):
        TopologyGraph(2, frozenset(), "other")
