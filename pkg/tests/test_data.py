import numpy as np
import pytest
from scipy.stats import spearmanr

from tro_opt.data import (
    CLASSIFICATION,
    Group,
    GroupedDataset,
    dataset_to_csv,
    gen_dg_ring,
    gen_grid_regression,
    grid_edges,
    load_csv,
    read_dataset_dir,
    split_groups,
    write_dataset_dir,
)
from tro_opt.errors import FormatError, InvalidInputError
from tro_opt.evaluate import evaluate, hop_distances
from tro_opt.model import LINEAR, LOGISTIC, SQUARED, ModelSpec, Predictor
from tro_opt.optim import TroConfig, train_erm

DG_HASH = "8bf053c8059fffef2651ed8f35d27601ad4d2b4f7d391d5e7355341fc30f4fc3"
GRID_HASH = "f24b9cfee391d2e02eebf6b16d0446a420648d2f4d21c8e3a73e8ebb338c7c7f"


def test_dg_ring_shape_split_and_topology():
    ds, g = gen_dg_ring(m=15, n_per_group=100, seed=0)
    assert len(ds.groups) == 15 and all(grp.n == 100 for grp in ds.groups)
    assert ds.train_ids == tuple(range(6)) and ds.test_ids == tuple(range(6, 15))
    assert g.edges == {(e, e + 1) for e in range(14)}
    assert ds.dim == 2 and set(np.unique(ds.group(3).y)) <= {0.0, 1.0}


def test_dg_ring_train_block_position():
    ds, _ = gen_dg_ring(m=10, n_train=3, train_start=4, seed=0)
    assert ds.train_ids == (4, 5, 6)
    with pytest.raises(InvalidInputError):
        gen_dg_ring(m=10, n_train=3, train_start=8)


@pytest.mark.parametrize("kw", [{"m": 2}, {"n_per_group": 1}, {"noise_sd": -0.1}, {"n_train": 15}])
def test_dg_ring_rejects_bad_sizes(kw):
    with pytest.raises(InvalidInputError):
        gen_dg_ring(**kw)


def test_dg_ring_golden_hash_and_determinism():
    a, _ = gen_dg_ring(seed=0)
    b, _ = gen_dg_ring(seed=0)
    assert a.content_hash() == b.content_hash() == DG_HASH
    assert gen_dg_ring(seed=1)[0].content_hash() != DG_HASH


def test_dg_ring_zero_angle_step_shares_boundary():
    ds, _ = gen_dg_ring(angle_step=0.0, noise_sd=0.0, n_per_group=400, seed=2)
    model = Predictor(LINEAR, 2, np.array([1.0, 0.0, 0.0]))
    acc = evaluate(model, ds, LOGISTIC, group_ids=range(15))
    assert min(acc.values()) == 1.0


def test_dg_ring_opposite_group_is_nearly_flipped():
    ds, _ = gen_dg_ring(m=15, angle_step=2 * np.pi / 15, noise_sd=0.0, n_per_group=1000, seed=3)
    group0_optimal = Predictor(LINEAR, 2, np.array([1.0, 0.0, 0.0]))
    acc = evaluate(group0_optimal, ds, LOGISTIC, group_ids=[0, 7])
    assert acc[0] == 1.0 and acc[7] <= 0.20


def test_dg_ring_label_flips():
    clean, _ = gen_dg_ring(seed=4)
    noisy, _ = gen_dg_ring(seed=4, flip_groups=[0], flip_prob=0.5)
    assert np.array_equal(clean.group(0).X, noisy.group(0).X)
    assert not np.array_equal(clean.group(0).y, noisy.group(0).y)
    assert np.array_equal(clean.group(1).y, noisy.group(1).y)


def test_grid_shape_topology_and_hash():
    ds, g = gen_grid_regression(rows=6, cols=6, seed=0)
    assert len(ds.groups) == 36 and ds.train_ids == tuple(range(18))
    assert g.edges == frozenset(grid_edges(6, 6))
    assert len(g.edges) == 2 * 6 * 5
    assert ds.content_hash() == GRID_HASH
    assert gen_grid_regression(seed=0)[0].content_hash() == GRID_HASH


def test_grid_rejects_bad_sizes():
    with pytest.raises(InvalidInputError):
        gen_grid_regression(rows=1, cols=3)
    with pytest.raises(InvalidInputError):
        gen_grid_regression(train_rows=6)


def test_grid_no_drift_erm_reaches_noise_floor():
    noise = 0.5
    ds, _ = gen_grid_regression(rows=2, cols=2, n_per_group=500, drift_per_hop=0.0, noise_sd=noise, seed=5)
    model = train_erm(ds, ModelSpec(), SQUARED, TroConfig(T=3000, eta_theta=0.05))
    mse = evaluate(model, ds, SQUARED)
    for v in mse.values():
        assert abs(v - noise**2) <= 0.2 * noise**2


def test_grid_error_grows_with_hop_distance():
    for seed in range(3):
        ds, g = gen_grid_regression(seed=seed)
        model = train_erm(ds, ModelSpec(), SQUARED, TroConfig(T=1500, eta_theta=0.05, seed=seed))
        mse = evaluate(model, ds, SQUARED)
        hops = hop_distances(g, ds.train_ids, ds.test_ids)
        rho = spearmanr([hops[k] for k in mse], list(mse.values())).statistic
        assert rho > 0


def _small():
    g1 = Group(0, "a", np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([0.0, 1.0]))
    g2 = Group(1, "b", np.array([[1 / 3, np.pi], [-1e-300, 5e300]]), np.array([1.0, 0.0]))
    return GroupedDataset([g1, g2], CLASSIFICATION, (0,), (1,))


def test_csv_roundtrip_exact(tmp_path):
    ds = _small()
    p = tmp_path / "d.csv"
    dataset_to_csv(ds, p, comment="hello")
    back = load_csv(p, train_groups=["a"], test_groups=["b"])
    assert back.names() == ["a", "b"] and back.train_ids == (0,) and back.test_ids == (1,)
    for g in ds.groups:
        assert np.array_equal(back.group(g.gid).X, g.X) and np.array_equal(back.group(g.gid).y, g.y)


def test_csv_groups_in_first_appearance_order(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("site,f1,label\nz,1,0\na,2,1\nz,3,1\na,4,0\n")
    ds = load_csv(p, feature_cols=["f1"], label_col="label", group_col="site")
    assert ds.names() == ["z", "a"] and [g.n for g in ds.groups] == [2, 2]
    assert ds.train_ids == (0, 1) and ds.test_ids == ()
    np.testing.assert_array_equal(ds.group(0).X.ravel(), [1.0, 3.0])


def test_csv_errors_name_location(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("group,x0,y\na,1.0,0\na,oops,1\n")
    with pytest.raises(FormatError, match=r"d.csv:3.*'x0'.*oops"):
        load_csv(p)
    p.write_text("group,x0\na,1\n")
    with pytest.raises(FormatError, match="missing column 'y'"):
        load_csv(p)
    p.write_text("group,x0,y\na,1\n")
    with pytest.raises(FormatError, match="expected 3 cells"):
        load_csv(p)
    p.write_text("group,x0,y\n")
    with pytest.raises(FormatError, match="no data rows"):
        load_csv(p)
    p.write_text("group,x0,y\na,1,0\n")
    with pytest.raises(FormatError, match="unknown group"):
        load_csv(p, train_groups=["nope"])


def test_dataset_dir_roundtrip(tmp_path):
    ds, _ = gen_dg_ring(m=5, n_train=2, n_per_group=10, seed=0)
    write_dataset_dir(ds, tmp_path, comment="seed=0")
    back = read_dataset_dir(tmp_path)
    assert back.content_hash() == ds.content_hash()


def test_split_counts_and_disjointness():
    ds, _ = gen_dg_ring(seed=0)
    tr, va, te = split_groups(ds, val_fraction=0.2, seed=1)
    for gid in ds.train_ids:
        assert va.group(gid).n == 20 and tr.group(gid).n == 80
        rows = {tuple(r) for r in ds.group(gid).X}
        a = {tuple(r) for r in tr.group(gid).X}
        b = {tuple(r) for r in va.group(gid).X}
        assert a | b == rows and not a & b
    assert te.test_ids == ds.test_ids and set(va.names()) == set(ds.names(ds.train_ids))
    _, va0, _ = split_groups(ds, val_fraction=0.0)
    assert all(va0.group(g).n == 0 for g in ds.train_ids)
    assert split_groups(ds, val_fraction=0.2, seed=1)[1].content_hash() == va.content_hash()
    ds7, _ = gen_dg_ring(n_per_group=7, seed=0)
    assert split_groups(ds7, val_fraction=0.2)[1].group(0).n == 1


def test_split_rejects_bad_fraction():
    ds, _ = gen_dg_ring(seed=0)
    with pytest.raises(InvalidInputError):
        split_groups(ds, val_fraction=1.0)
    with pytest.raises(InvalidInputError):
        split_groups(ds, train_ids=[99])


def test_dataset_invariants():
    g = Group(0, "a", np.zeros((2, 2)), np.zeros(2))
    with pytest.raises(InvalidInputError):
        GroupedDataset([g, Group(1, "b", np.zeros((2, 3)), np.zeros(2))], CLASSIFICATION)
    with pytest.raises(InvalidInputError):
        GroupedDataset([g], CLASSIFICATION, (0,), (0,))
    with pytest.raises(InvalidInputError):
        GroupedDataset([g, Group(1, "b", np.zeros((0, 2)), np.zeros(0))], CLASSIFICATION)
    with pytest.raises(InvalidInputError):
        GroupedDataset([g], "ranking")
