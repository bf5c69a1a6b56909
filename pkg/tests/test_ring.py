import random
import threading

import pytest

from flowsim.ring import CRing


def test_capacity_must_be_power_of_two():
    with pytest.raises(ValueError):
        CRing(100)
    CRing(128)


def test_push_and_len():
    r = CRing(8)
    assert len(r) == 0
    assert r.push("a")
    assert len(r) == 1


def test_push_full_ring_rejected_and_counted():
    r = CRing(4)
    for i in range(4):
        assert r.push(i)
    assert not r.push(99)
    assert r.drops == 1
    assert len(r) == 4


def test_fifo_order_through_wraparound():
    r = CRing(8)
    out = []
    for round_ in range(5):
        for i in range(6):
            assert r.push((round_, i))
        out.extend(r.drain_up_to(6))
    assert out == [(ro, i) for ro in range(5) for i in range(6)]


def test_drain_up_to_counts():
    r = CRing(128)
    for i in range(100):
        r.push(i)
    got = r.drain_up_to(64)
    assert got == list(range(64))
    assert len(r) == 36
    assert r.drain_up_to(0) == []
    assert len(r) == 36
    assert r.drain_up_to(100) == list(range(64, 100))
    assert len(r) == 0


def test_drain_matching_keeps_miss_order():
    r = CRing(16)
    for i in range(10):
        r.push(i)
    odd = r.drain_matching(lambda x: x % 2 == 1)
    assert odd == [1, 3, 5, 7, 9]
    assert r.drain_up_to(100) == [0, 2, 4, 6, 8]


def test_drain_matching_no_match_leaves_ring_intact():
    r = CRing(8)
    for i in range(5):
        r.push(i)
    assert r.drain_matching(lambda x: False) == []
    assert r.drain_up_to(10) == list(range(5))


def test_spsc_stress_preserves_sequence():
    # one producer, one consumer; consumed sequence must equal the produced
    # prefix, no loss, no duplication, no reordering
    r = CRing(64)
    n = 50_000
    consumed = []
    done = threading.Event()

    def produce():
        i = 0
        while i < n:
            if r.push(i):
                i += 1
        done.set()

    def consume():
        rng = random.Random(3)
        while not (done.is_set() and len(r) == 0):
            batch = r.drain_up_to(rng.randint(1, 17))
            consumed.extend(batch)

    t1 = threading.Thread(target=produce)
    t2 = threading.Thread(target=consume)
    t1.start(); t2.start()
    t1.join(); t2.join()
    assert consumed == list(range(n))


def test_spsc_stress_with_consumer_side_filtering():
    r = CRing(64)
    n = 20_000
    hits = []
    kept = []
    done = threading.Event()

    def produce():
        i = 0
        while i < n:
            if r.push(i):
                i += 1
        done.set()

    def consume():
        while not (done.is_set() and len(r) == 0):
            hits.extend(r.drain_matching(lambda x: x % 3 == 0))
            kept.extend(r.drain_up_to(5))

    t1 = threading.Thread(target=produce)
    t2 = threading.Thread(target=consume)
    t1.start(); t2.start()
    t1.join(); t2.join()
    assert sorted(hits + kept) == list(range(n))
    assert hits == sorted(hits)
    assert kept == sorted(kept)
