import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st

from schedcost.primitives import DEFAULT_REGISTRY, Primitive, TensorProgramRecord

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

names = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789._", min_size=1, max_size=6)
numbers = st.floats(allow_nan=False, allow_infinity=False, width=64)
args = st.lists(st.one_of(names, numbers), max_size=10).map(tuple)
primitives = st.builds(Primitive, st.integers(0, len(DEFAULT_REGISTRY) - 1), args)
sequences = st.lists(primitives, max_size=12).map(tuple)
records = st.builds(
    TensorProgramRecord, names, names, names,
    st.floats(min_value=1e-9, max_value=1e3, allow_nan=False), sequences)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_store(seed=0, workloads=4, subgraphs=5, candidates=30, hardware=("hw_a",), rho=0.8,
                holdout=("net3",)):
    """A seeded synthetic store split into train/val/test."""
    from schedcost.dataset import DatasetStore, split
    from schedcost.synthetic import SyntheticOracle, generate_corpus, make_subgraphs

    base = SyntheticOracle(seed)
    oracles = {hardware[0]: base}
    for n, hw in enumerate(hardware[1:], 1):
        oracles[hw] = base.correlated(seed + 100 * n, rho)
    subs = []
    for w in range(workloads):
        subs += make_subgraphs(subgraphs, seed, workload=f"net{w}", prefix=f"net{w}_sg", weights=True)
    corpus = generate_corpus(subs, oracles, candidates, seed)
    store = DatasetStore(corpus.records, weights=corpus.weights())
    return split(store, 0.1, holdout, seed)


TINY = dict(hidden_dim=16, attention_heads=2)


# acceptance criteria lines collected by test_acceptance.py, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
