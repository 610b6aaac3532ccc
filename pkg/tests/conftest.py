import itertools

import numpy as np
import pytest

from erasurenet import _backend
from erasurenet.topology import Topology, builtin_config_path, fig4_topology, load_topology


@pytest.fixture
def fig4():
    return fig4_topology()


@pytest.fixture
def single_relay():
    """n=1, every erasure 0.5."""
    return load_topology(builtin_config_path("single_relay"))


def one_relay(e_s1, e_sd, e_1d, lam=0.0):
    return Topology.from_edges(1, {(0, 1): e_s1, (0, 2): e_sd, (1, 2): e_1d}, lam)


BACKENDS = ["python"] + (["compiled"] if _backend.compiled_kernel is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def brute_receiver_sets(topology, i):
    """(W, p) over every subset of the other nodes, straight from the product form."""
    others = [j for j in range(topology.num_nodes) if j != i]
    eps = topology.erasure
    for bits in itertools.product((0, 1), repeat=len(others)):
        w = 0
        p = 1.0
        for b, j in zip(bits, others):
            if b:
                w |= 1 << j
                p *= 1.0 - eps[i, j]
            else:
                p *= eps[i, j]
        yield w, p


def brute_cut_capacity(topology, cut):
    n = topology.n
    outside = {j for j in range(1, n + 1) if not cut >> (j - 1) & 1} | {n + 1}
    members = [0] + [r for r in range(1, n + 1) if cut >> (r - 1) & 1]
    total = 0.0
    for i in members:
        total += sum(p for w, p in brute_receiver_sets(topology, i) if any(w >> j & 1 for j in outside))
    return total
