from itertools import permutations, product

import numpy as np
import pytest

from gm_cycleloss import (
    MatchingTriple,
    cycle_loss_system,
    is_cycle_consistent,
    loss_gradient,
    partial_loss,
    total_loss,
)
from gm_instances import Matching
from utils.errors import ChainMismatchError

from oracles import chain_walk_consistent, partial_injections, triple_count


def m(pairs, n1, n2):
    return Matching(frozenset(pairs), n1, n2)


def random_matching(rng, n1, n2):
    cols = rng.permutation(n2)
    return m([(i, int(cols[i])) for i in range(min(n1, n2)) if rng.random() < 0.7], n1, n2)


def random_triple(rng, max_n=5):
    n1, n2, n3 = (int(v) for v in rng.integers(1, max_n + 1, size=3))
    return MatchingTriple(random_matching(rng, n1, n2), random_matching(rng, n2, n3), random_matching(rng, n3, n1))


def flip(x, i, s, value):
    pairs = set(x.pairs) - {(i, s)}
    if value:
        pairs.add((i, s))
    return Matching(frozenset(pairs), x.n1, x.n2)


SWAP = m({(0, 0), (1, 2), (2, 1)}, 3, 3)


class TestPartialLoss:
    @pytest.mark.parametrize(
        "bits, expected",
        [((0, 1, 1), 1), ((1, 1, 1), 0), ((1, 0, 0), 0), ((0, 0, 0), 0), ((1, 1, 0), 1)],
    )
    def test_values(self, bits, expected):
        assert partial_loss(*bits) == expected

    def test_symmetric(self):
        for bits in product((0, 1), repeat=3):
            assert len({partial_loss(*p) for p in permutations(bits)}) == 1

    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            partial_loss(2, 0, 1)


class TestTotalLoss:
    def test_identities(self):
        ident = Matching.identity(3)
        assert total_loss(MatchingTriple(ident, ident, ident)) == 0

    def test_empty(self):
        empty = Matching.empty(3, 3)
        assert total_loss(MatchingTriple(empty, empty, empty)) == 0

    def test_swap_closing_leg(self):
        ident = Matching.identity(3)
        assert total_loss(MatchingTriple(ident, ident, SWAP)) == 6

    def test_chain_mismatch(self):
        with pytest.raises(ChainMismatchError):
            MatchingTriple(Matching.empty(2, 3), Matching.empty(2, 2), Matching.empty(2, 2))

    def test_matches_bruteforce_counter(self, rng):
        for _ in range(500):
            t = random_triple(rng)
            n1, n2, n3 = t.sizes
            assert total_loss(t) == triple_count(t.x12.pairs, t.x23.pairs, t.x31.pairs, n1, n2, n3)

    def test_zero_iff_consistent_exhaustive(self):
        for n in (1, 2, 3):
            everything = [m(p, n, n) for p in partial_injections(n, n)]
            for x12 in everything:
                for x23 in everything:
                    for x31 in everything:
                        t = MatchingTriple(x12, x23, x31)
                        system = {(0, 1): x12, (1, 2): x23, (0, 2): x31.transpose()}
                        consistent = is_cycle_consistent(system, 3)
                        assert (total_loss(t) == 0) == consistent
                        oracle = {key: set(val.pairs) for key, val in system.items()}
                        assert consistent == chain_walk_consistent(oracle, 3)


class TestLossGradient:
    @pytest.mark.parametrize("x23, x31, expected", [(0, 0, 0), (1, 0, 1), (0, 1, 1), (1, 1, -1)])
    def test_single_cell_table(self, x23, x31, expected):
        t = MatchingTriple(
            Matching.empty(1, 1),
            m({(0, 0)} if x23 else set(), 1, 1),
            m({(0, 0)} if x31 else set(), 1, 1),
        )
        g12, _, _ = loss_gradient(t)
        assert g12[0, 0] == expected

    def test_equals_flip_difference(self, rng):
        for _ in range(100):
            t = random_triple(rng, max_n=4)
            grads = loss_gradient(t)
            legs = ("x12", "x23", "x31")
            for leg, grad in zip(legs, grads):
                x = getattr(t, leg)
                for i in range(x.n1):
                    for s in range(x.n2):
                        on = dict(x12=t.x12, x23=t.x23, x31=t.x31)
                        off = dict(on)
                        on[leg] = flip(x, i, s, 1)
                        off[leg] = flip(x, i, s, 0)
                        # flipped matchings may violate uniqueness; the loss is multilinear regardless
                        diff = triple_count(on["x12"].pairs, on["x23"].pairs, on["x31"].pairs, *t.sizes) - triple_count(
                            off["x12"].pairs, off["x23"].pairs, off["x31"].pairs, *t.sizes
                        )
                        assert grad[i, s] == diff

    def test_independent_of_own_leg(self, rng):
        t = random_triple(rng)
        other = MatchingTriple(Matching.empty(t.x12.n1, t.x12.n2), t.x23, t.x31)
        assert np.array_equal(loss_gradient(t)[0], loss_gradient(other)[0])


def universe_system(rng, d, n, universe):
    labels = [rng.choice(universe, size=n, replace=False) for _ in range(d)]
    system = {}
    for a in range(d):
        for b in range(a + 1, d):
            pairs = {(p, q) for p in range(n) for q in range(n) if labels[a][p] == labels[b][q]}
            system[(a, b)] = m(pairs, n, n)
    return system


class TestSystems:
    def test_three_identities(self):
        ident = Matching.identity(3)
        assert is_cycle_consistent({(0, 1): ident, (1, 2): ident, (0, 2): ident}, 3)

    def test_swap_system_is_inconsistent(self):
        ident = Matching.identity(3)
        assert not is_cycle_consistent({(0, 1): ident, (1, 2): ident, (0, 2): SWAP.transpose()}, 3)

    def test_universe_labelling_is_consistent(self, rng):
        system = universe_system(rng, 4, 3, 5)
        assert is_cycle_consistent(system, 4)
        assert sum(cycle_loss_system(system, 4).values()) == 0

    def test_missing_pair(self):
        ident = Matching.identity(2)
        with pytest.raises(ChainMismatchError):
            is_cycle_consistent({(0, 1): ident, (1, 2): ident}, 3)

    @pytest.mark.parametrize("d", [4, 5])
    def test_triples_suffice(self, rng, d):
        counterexamples = 0
        for trial in range(200):
            n = int(rng.integers(1, 4))
            system = universe_system(rng, d, n, n + 2)
            if trial % 2:
                key = list(system)[int(rng.integers(len(system)))]
                system[key] = random_matching(rng, n, n)
            oracle = {key: set(val.pairs) for key, val in system.items()}
            if is_cycle_consistent(system, d) and not chain_walk_consistent(oracle, d):
                counterexamples += 1
        assert counterexamples == 0
