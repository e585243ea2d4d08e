import functools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eidpki.card.template import (
    FingerprintTemplate,
    angle_difference,
    greedy_pairs,
    match_score,
)
from eidpki.errors import PkiError


def close_enough(p, q):
    d = abs(p[2] - q[2]) % 360
    return abs(p[0] - q[0]) <= 8 and abs(p[1] - q[1]) <= 8 and min(d, 360 - d) <= 20


def optimal_score(enrolled, probe):
    """Largest pairing by exhaustive search over which probe minutiae are taken."""
    @functools.lru_cache(maxsize=None)
    def best(i, used):
        if i == len(enrolled):
            return 0
        top = best(i + 1, used)
        for j, q in enumerate(probe):
            if not used >> j & 1 and close_enough(enrolled[i], q):
                top = max(top, 1 + best(i + 1, used | 1 << j))
        return top

    total = max(len(enrolled), len(probe))
    return best(0, 0) / total if total else 0.0


def scattered(r, n):
    return tuple((r.randint(0, 499), r.randint(0, 499), r.randint(0, 359)) for _ in range(n))


def jitter(r, minutiae, amount):
    return tuple((min(499, max(0, x + r.randint(-amount, amount))),
                  min(499, max(0, y + r.randint(-amount, amount))), (a + r.randint(-25, 25)) % 360)
                 for x, y, a in minutiae)


@pytest.mark.parametrize("seed", range(500))
def test_greedy_close_to_optimal(seed):
    """Probe = noisy partial capture of the enrolled finger plus spurious minutiae."""
    r = random.Random(seed)
    enrolled = scattered(r, r.randint(0, 12))
    probe = list(jitter(r, enrolled, r.randint(2, 12)))
    r.shuffle(probe)
    probe = (tuple(probe[: r.randint(0, len(probe))]) + scattered(r, r.randint(0, 4)))[:12]
    greedy = match_score(FingerprintTemplate(enrolled), FingerprintTemplate(probe))
    best = optimal_score(enrolled, probe)
    assert greedy <= best + 1e-12
    assert best - greedy <= 0.1


def test_greedy_gap_on_crowded_minutiae():
    # nearest-first takes the closest pair and strands the outer two
    enrolled = ((100, 100, 0), (108, 100, 0))
    probe = ((103, 100, 0), (96, 100, 0))
    assert greedy_pairs(enrolled, probe) == [(0, 0)]
    assert match_score(FingerprintTemplate(enrolled), FingerprintTemplate(probe)) == 0.5
    assert optimal_score(enrolled, probe) == 1.0


def test_identity_and_empty():
    t = FingerprintTemplate(((1, 2, 3), (100, 200, 300)))
    assert match_score(t, t) == 1.0
    assert match_score(t, FingerprintTemplate(())) == 0.0
    assert match_score(FingerprintTemplate(()), FingerprintTemplate(())) == 0.0


def test_tolerance_edges():
    a = FingerprintTemplate(((100, 100, 350),))
    assert match_score(a, FingerprintTemplate(((108, 92, 10),))) == 1.0
    assert match_score(a, FingerprintTemplate(((109, 100, 350),))) == 0.0
    assert match_score(a, FingerprintTemplate(((100, 100, 11),))) == 0.0
    assert angle_difference(359, 0) == 1 and angle_difference(0, 180) == 180


def test_each_minutia_used_once():
    enrolled = FingerprintTemplate(((100, 100, 0),))
    probe = FingerprintTemplate(((100, 100, 0), (101, 100, 0), (99, 100, 0)))
    assert match_score(enrolled, probe) == pytest.approx(1 / 3)


@pytest.mark.parametrize("minutiae,quality", [
    (((500, 0, 0),), 50), (((0, -1, 0),), 50), (((0, 0, 360),), 50), ((), 101), (((0, 0, 0),) * 129, 50),
])
def test_invalid_templates(minutiae, quality):
    with pytest.raises(PkiError):
        FingerprintTemplate(minutiae, quality)


minutia = st.tuples(st.integers(0, 499), st.integers(0, 499), st.integers(0, 359))


@given(st.lists(minutia, max_size=128), st.integers(0, 100))
@settings(max_examples=100, deadline=None)
def test_round_trip(minutiae, quality):
    t = FingerprintTemplate(tuple(minutiae), quality)
    assert FingerprintTemplate.from_bytes(t.to_bytes()) == t
    assert FingerprintTemplate.from_dict(t.as_dict()) == t


@given(st.lists(minutia, max_size=10), st.lists(minutia, max_size=10))
@settings(max_examples=200, deadline=None)
def test_score_symmetric_bounds(a, b):
    s = match_score(FingerprintTemplate(tuple(a)), FingerprintTemplate(tuple(b)))
    assert 0.0 <= s <= 1.0
