"""Shared test fixtures built on the package (the oracles live in oracles.py)."""

import functools

import numpy as np

from oracles import random_integrals
from trimcoo.hamio import GraphModelSpec, IntegralSet, build_hubbard_graph


@functools.lru_cache(maxsize=None)
def hubbard(L: int, alpha: float = 0.0, U: float = 4.0, seed: int = 0) -> IntegralSet:
    return build_hubbard_graph(GraphModelSpec(L=L, U=U, alpha=alpha, seed=seed))


def random_ints(n, na, nb, seed, e_core=0.0) -> IntegralSet:
    h, eri = random_integrals(n, np.random.default_rng(seed))
    return IntegralSet.from_dense(h, eri, e_core, na, nb)
