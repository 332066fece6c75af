"""Cache models against a brute-force direct-mapped reference, and bus transaction shape."""

import numpy as np
import pytest
from numba import njit

from egpu.apu.runtime import Runtime
from egpu.sim import engine as E
from egpu.sim.device import Device

from conftest import image_for

N_ACCESSES = 100_000


@njit
def _drive_dcache(st, lines, stores, hits):
    buf = st.scratch_lines
    need = st.scratch_need
    for i in range(lines.shape[0]):
        before = st.ev[E.K_DC_HIT]
        buf[0] = lines[i]
        E.dcache_request(st, 0, 0, buf, 1, stores[i], 10 * i, need)
        hits[i] = st.ev[E.K_DC_HIT] - before
        # retire the fill at once so that only tag behaviour is observed
        st.m_valid[:] = 0
        st.m_count[:] = 0
        st.m_wait[:] = 0
        st.dc_pend[:] = -1
        st.q_head[:] = st.q_tail[:]


@njit
def _drive_icache(st, pcs, hits):
    for i in range(pcs.shape[0]):
        before = st.ev[E.K_IC_HIT]
        E.icache_fetch(st, 0, 0, pcs[i], 10 * i)
        hits[i] = st.ev[E.K_IC_HIT] - before
        st.im_valid[:] = 0
        st.im_wait[:] = 0
        st.ic_pend[:] = -1
        st.q_head[:] = st.q_tail[:]


def _reference(addrs, line, slots):
    """Each line maps to exactly one slot; a hit means the slot holds that line."""
    resident = {}
    out = np.zeros(len(addrs), np.int8)
    for i, a in enumerate(addrs.tolist()):
        ln = a // line
        s = ln % slots
        if resident.get(s) == ln:
            out[i] = 1
        else:
            resident[s] = ln
    return out


def _addresses(rng, span, n):
    # a mix of streaming, reuse and scattered accesses
    out = np.empty(n, np.int64)
    a = 0
    for i in range(n):
        r = rng.random()
        if r < 0.4:
            a = (a + 4) % span
        elif r < 0.7:
            a = int(out[rng.integers(0, i)]) if i else 0
        else:
            a = int(rng.integers(0, span // 4)) * 4
        out[i] = a
    return out


def test_dcache_matches_reference(cfg):
    dev = Device(cfg)
    rng = np.random.default_rng(11)
    addrs = _addresses(rng, 4 * cfg.dcache_size, N_ACCESSES)
    stores = (rng.random(N_ACCESSES) < 0.3).astype(np.int64)
    lines = addrs >> int(np.log2(cfg.dcache_line))
    hits = np.zeros(N_ACCESSES, np.int64)
    _drive_dcache(dev.st, lines, stores, hits)
    ref = _reference(addrs, cfg.dcache_line, cfg.dcache_size // cfg.dcache_line)
    assert 0.2 < ref.mean() < 0.9
    assert np.array_equal(hits, ref)


def test_icache_matches_reference(cfg):
    dev = Device(cfg)
    rng = np.random.default_rng(12)
    pcs = _addresses(rng, 4 * cfg.icache_size_per_cu, N_ACCESSES)
    hits = np.zeros(N_ACCESSES, np.int64)
    _drive_icache(dev.st, pcs, hits)
    ref = _reference(pcs, cfg.icache_line, cfg.icache_size_per_cu // cfg.icache_line)
    assert np.array_equal(hits, ref)


def test_probe_sequence_matches_reference(cfg):
    rng = np.random.default_rng(13)
    addrs = _addresses(rng, 4 * cfg.dcache_size, 20_000)
    sets = cfg.dcache_size // (cfg.dcache_banks * cfg.dcache_line)
    got = E.probe_sequence(addrs, np.zeros_like(addrs), int(np.log2(cfg.dcache_line)), cfg.dcache_banks, sets)
    assert np.array_equal(got, _reference(addrs, cfg.dcache_line, cfg.dcache_size // cfg.dcache_line))


def _queued(dev, req):
    st = dev.st
    h, t = int(st.q_head[req]), int(st.q_tail[req])
    qc = int(st.P[E.P_QCAP])
    return [(int(st.q_addr[req, i % qc]), int(st.q_kind[req, i % qc])) for i in range(h, t)]


def test_line_miss_is_serialized_into_word_transactions():
    from egpu.config import load_config
    cfg = load_config(preset="16t")
    assert cfg.dcache_line == 32
    dev = Device(cfg)
    st = dev.st
    nc = cfg.num_cus
    st.scratch_lines[0] = 0x20000 >> 5
    assert E.dcache_request(st, 0, 0, st.scratch_lines, 1, 1, 0, st.scratch_need)
    q = _queued(dev, nc)
    assert q == [(0x20000 + 4 * k, 0) for k in range(8)]
    # conflicting miss on the dirty line: eight write-backs, then eight reads
    st.q_head[:] = st.q_tail[:]
    st.m_valid[:] = 0
    st.m_count[:] = 0
    st.dc_pend[:] = -1
    st.scratch_lines[0] = (0x20000 + cfg.dcache_size) >> 5
    assert E.dcache_request(st, 0, 0, st.scratch_lines, 1, 0, 1, st.scratch_need)
    q = _queued(dev, nc)
    assert [k for _, k in q] == [1] * 8 + [0] * 8
    assert [a for a, _ in q[:8]] == [0x20000 + 4 * k for k in range(8)]


@pytest.mark.parametrize("preset", ["4t", "16t"])
def test_bus_grants_at_most_one_per_cycle(preset):
    from egpu.config import load_config
    cfg = load_config(preset=preset)
    rt = Runtime(cfg, txn_cap=1 << 18)
    n = 32
    rng = np.random.default_rng(3)
    a = rt.alloc_array(rng.integers(-99, 99, n * n))
    b = rt.alloc_array(rng.integers(-99, 99, n * n))
    c = rt.alloc_array(np.zeros(n * n))
    rec = rt.run(image_for("gemm_tile", cfg), (cfg.total_threads,), (1,), [a, b, c, n, cfg.threads_per_cu],
                 static=True, warm=[a, b])
    txn = rt.device.transactions()
    tot = rec.totals()
    assert len(txn) == tot["bus_reads"] + tot["bus_writes"]
    cycles = txn[:, 0]
    assert len(np.unique(cycles)) == len(cycles)
    words = cfg.dcache_line // 4
    data_reads = int(((txn[:, 1] == cfg.num_cus) & (txn[:, 3] == 0)).sum())
    assert data_reads == words * tot["dcache_misses"]
    inst_reads = int((txn[:, 1] < cfg.num_cus).sum())
    assert inst_reads == (cfg.icache_line // 4) * tot["icache_misses"]
