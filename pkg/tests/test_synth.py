import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgpath.kg_store import filter_leakage, load_dataset
from kgpath.synth import SynthConfig, SynthDataset, bfs_distance, generate, verify_distances, write


def test_two_hop_single_chain_construction():
    data = generate(SynthConfig(distances=(2,), n_chains=3, distractor_ratio=0))
    assert ("d2_c0_0", "r2_1", "d2_c0_1") in data.graph
    assert ("d2_c0_1", "r2_2", "d2_c0_2") in data.graph
    queries = data.train + data.valid + data.test
    assert ("d2_c0_0", "q2", "d2_c0_2", 2) in queries
    assert len(data.graph) == 6


def test_symmetric_paths_mirror_the_first_half():
    data = generate(SynthConfig(distances=(4,), n_chains=3, distractor_ratio=0, symmetric=True))
    g = set(data.graph)
    n = [f"d4_c0_{k}" for k in range(5)]
    assert (n[0], "r4_1", n[1]) in g and (n[1], "r4_2", n[2]) in g
    assert (n[3], "r4_2", n[2]) in g and (n[4], "r4_1", n[3]) in g


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(distances=(1, 2))
    with pytest.raises(ValueError):
        SynthConfig(distractor_ratio=-1)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.integers(2, 7), min_size=1, max_size=3, unique=True), st.integers(3, 12),
       st.sampled_from([0, 4]), st.floats(0, 3), st.booleans(), st.integers(0, 50))
def test_bfs_distance_matches_label(distances, n_chains, per_layer, ratio, symmetric, seed):
    cfg = SynthConfig(distances=tuple(distances), n_chains=n_chains, entities_per_layer=per_layer,
                      distractor_ratio=ratio, symmetric=symmetric, seed=seed)
    try:
        data = generate(cfg)
    except ValueError:  # shared layer pools can leave too few distinct queries to split
        return
    for h, r, t, d in data.train + data.valid + data.test:
        assert bfs_distance(data.graph, h, t) == d
    background = {(h, r, t) for h, r, t in data.graph}
    assert not background & {q[:3] for q in data.train + data.valid + data.test}


def test_distractor_ratio_and_disjoint_splits():
    cfg = SynthConfig(distances=(3, 5), n_chains=20, distractor_ratio=2.0, seed=1)
    data = generate(cfg)
    chain_edges = sum(1 for _, r, _ in data.graph if r.startswith("r"))
    assert chain_edges == 20 * (3 + 5)
    assert len(data.graph) - chain_edges == 2 * chain_edges
    splits = [set(x) for x in (data.train, data.valid, data.test)]
    assert not (splits[0] & splits[1] or splits[0] & splits[2] or splits[1] & splits[2])
    for d in (3, 5):
        assert all(any(q[3] == d for q in s) for s in splits)


def test_generation_is_deterministic():
    cfg = SynthConfig(distances=(2, 4), n_chains=10, seed=3)
    assert generate(cfg) == generate(cfg)
    assert generate(cfg) != generate(SynthConfig(distances=(2, 4), n_chains=10, seed=4))


def test_verifier_catches_a_wrong_label():
    data = generate(SynthConfig(distances=(3,), n_chains=5, distractor_ratio=0))
    h, r, t, d = data.test[0]
    bad = SynthDataset(data.graph, data.train, data.valid, [(h, r, t, d + 1)])
    with pytest.raises(AssertionError):
        verify_distances(bad)


def test_written_files_load_with_distances(tmp_path):
    data = generate(SynthConfig(distances=(2, 3), n_chains=10, seed=0))
    write(data, tmp_path)
    ds = load_dataset(tmp_path)
    assert len(ds.test) == len(data.test)
    assert sorted(ds.test_dist) == sorted(q[3] for q in data.test)
    assert ds.separate_graph
    held_out = set(ds.valid) | set(ds.test)
    assert filter_leakage(ds.graph, ds.valid, ds.test) == ds.graph
    assert not set(ds.graph) & held_out
