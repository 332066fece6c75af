"""Compiled cycle loop for the device (compute units, caches, bus) and the scalar host core.

All state lives in numpy arrays grouped in :class:`EngineState`; the Python
side (``egpu.sim.device``) builds it, the jitted ``run_device`` advances it.
Caches hold tags only: functional data is read and written in main memory at
issue time, which is unobservable from the host because results are only read
after the completion flush.
"""

from __future__ import annotations

from collections import namedtuple

import numpy as np
from numba import njit

from egpu.isa.encoding import Op

# Reference counting is off: every array is owned by the Python-side state and
# nothing is allocated inside the loop, so the per-call NRT traffic is pure cost.
fast = njit(cache=True, _nrt=False)

M32 = 0xFFFFFFFF

# warp status
W_INACTIVE, W_READY, W_MEM, W_BARRIER, W_ASLEEP, W_FETCH = 0, 1, 2, 3, 4, 5

# run status
RUNNING, DONE, TRAPPED, TIMEOUT = 0, 1, 2, 3

# trap codes
T_ILLEGAL, T_FETCH, T_UNALIGNED, T_BUS, T_IPDOM_OVERFLOW, T_IPDOM_UNDERFLOW = 1, 2, 3, 4, 5, 6
T_DEADLOCK, T_ECALL, T_EBREAK, T_CSR_WRITE, T_BAD_CSR, T_BAD_BARRIER, T_NO_SLEEP = 7, 8, 9, 10, 11, 12, 13

# phase classes (priority order)
C_STARTUP, C_TRANSFER, C_SCHED, C_KERNEL = 0, 1, 2, 3

# event kinds, accumulated per phase class
(K_CYCLES, K_INSTR, K_LANE_INSTR, K_DC_HIT, K_DC_MISS, K_DC_MERGE, K_IC_HIT, K_IC_MISS, K_BUS_RD,
 K_BUS_WR, K_CU_ISSUE, K_CU_IDLE, K_CU_GATED, K_LOADS, K_STORES, K_MSHR_RETRY, K_DIV_BRANCH) = range(17)
NK = 17

# per-CU counters
CU_ISSUE, CU_IDLE, CU_GATED, CU_INSTR, CU_LANE_INSTR = range(5)
NCU_K = 5

# scalar slots in S
(S_CYCLE, S_STATUS, S_TRAP_CODE, S_TRAP_CU, S_TRAP_WARP, S_TRAP_PC, S_TRAP_INFO, S_FLUSHING,
 S_FLUSH_OUT, S_IRQ_CYCLE, S_ARB_LAST, S_TRACE_N, S_TXN_N, S_F_HEAD, S_F_TAIL, S_NWAIT_FILL,
 S_GATED_CYCLE, S_EVENT_N, S_BUS_GRANTS_MAX) = range(19)
NS = 24

# parameter slots in P
(P_NC, P_NW, P_NT, P_DC_BANKS, P_DC_SETS, P_DC_LSHIFT, P_IC_BANKS, P_IC_SETS, P_IC_LSHIFT, P_DC_HIT,
 P_IC_HIT, P_MEMLAT, P_MSHR, P_IPDOM, P_CODE_BASE, P_CODE_WORDS, P_MEM_SIZE, P_ARGS_BASE, P_BOOT_PC,
 P_TRACE_CAP, P_TXN_CAP, P_QCAP, P_NBAR, P_FCAP) = range(24)
NP = 24

NBAR = 32
IP_ELSE, IP_RESTORE = 0, 1

EngineState = namedtuple("EngineState", [
    "P", "S", "mem8", "mem32",
    "dec_op", "dec_rd", "dec_rs1", "dec_rs2", "dec_imm", "dec_region",
    "regs", "w_pc", "w_mask", "w_status", "w_pend", "w_ready", "w_fetch_ok",
    "ip_kind", "ip_mask", "ip_target", "ip_sp", "bar_arrived",
    "cu_rr", "cu_class", "w_class", "cu_gated", "cu_sleep",
    "dc_tag", "dc_valid", "dc_dirty", "dc_pend", "dc_bank_free",
    "m_valid", "m_line", "m_wait", "m_count",
    "ic_tag", "ic_valid", "ic_pend", "im_valid", "im_line", "im_wait",
    "q_addr", "q_kind", "q_tag", "q_last", "q_head", "q_tail",
    "f_cycle", "f_req", "f_kind", "f_tag", "f_last", "f_addr",
    "cnt", "ev", "cu_cnt", "lane_kinstr", "trace", "txn_trace", "events", "scratch_lines", "scratch_need",
])


# --------------------------------------------------------------------------
# integer semantics shared by the device and the host core

@fast
def s32(x):
    return x - 4294967296 if x & 0x80000000 else x


@fast
def mulhu(a, b):
    a0 = a & 0xFFFF
    a1 = a >> 16
    b0 = b & 0xFFFF
    b1 = b >> 16
    p00 = a0 * b0
    p01 = a0 * b1
    p10 = a1 * b0
    p11 = a1 * b1
    mid = (p00 >> 16) + (p01 & 0xFFFF) + (p10 & 0xFFFF)
    return (p11 + (p01 >> 16) + (p10 >> 16) + (mid >> 16)) & M32


@fast
def tdiv(a, b):
    q = abs(a) // abs(b)
    return -q if (a < 0) != (b < 0) else q


@fast
def alu(op, a, b, imm, pc):
    """Result of a register-writing non-memory op; a, b are unsigned 32-bit."""
    if op == 0:  # ADD
        return (a + b) & M32
    if op == 1:
        return (a - b) & M32
    if op == 2:
        return (a << (b & 31)) & M32
    if op == 3:
        return 1 if s32(a) < s32(b) else 0
    if op == 4:
        return 1 if a < b else 0
    if op == 5:
        return a ^ b
    if op == 6:
        return a >> (b & 31)
    if op == 7:
        return (s32(a) >> (b & 31)) & M32
    if op == 8:
        return a | b
    if op == 9:
        return a & b
    if op == 10:  # MUL
        return (a * b) & M32
    if op == 11:
        return ((s32(a) * s32(b)) >> 32) & M32
    if op == 12:
        h = mulhu(a, b)
        return (h - b) & M32 if a & 0x80000000 else h
    if op == 13:
        return mulhu(a, b)
    if op == 14:  # DIV
        if b == 0:
            return M32
        sa = s32(a)
        sb = s32(b)
        if sa == -2147483648 and sb == -1:
            return a
        return tdiv(sa, sb) & M32
    if op == 15:
        return M32 if b == 0 else a // b
    if op == 16:  # REM
        if b == 0:
            return a
        sa = s32(a)
        sb = s32(b)
        if sa == -2147483648 and sb == -1:
            return 0
        return (sa - tdiv(sa, sb) * sb) & M32
    if op == 17:
        return a if b == 0 else a % b
    if op == 18:  # ADDI
        return (a + imm) & M32
    if op == 19:
        return 1 if s32(a) < imm else 0
    if op == 20:
        return 1 if a < (imm & M32) else 0
    if op == 21:
        return a ^ (imm & M32)
    if op == 22:
        return a | (imm & M32)
    if op == 23:
        return a & (imm & M32)
    if op == 24:
        return (a << imm) & M32
    if op == 25:
        return a >> imm
    if op == 26:
        return (s32(a) >> imm) & M32
    if op == 27:  # LUI
        return (imm << 12) & M32
    if op == 28:  # AUIPC
        return (pc + (imm << 12)) & M32
    return 0


@fast
def branch_taken(op, a, b):
    if op == 31:
        return a == b
    if op == 32:
        return a != b
    if op == 33:
        return s32(a) < s32(b)
    if op == 34:
        return s32(a) >= s32(b)
    if op == 35:
        return a < b
    return a >= b


@fast
def mem_width(op):
    if op == 37 or op == 40 or op == 42:
        return 1
    if op == 38 or op == 41 or op == 43:
        return 2
    return 4


@fast
def mem_load(mem8, mem32, addr, op):
    if op == 39:
        return np.int64(mem32[addr >> 2])
    if op == 37:
        v = np.int64(mem8[addr])
        return (v - 256) & M32 if v & 0x80 else v
    if op == 40:
        return np.int64(mem8[addr])
    v = np.int64(mem8[addr]) | (np.int64(mem8[addr + 1]) << 8)
    if op == 38 and v & 0x8000:
        return (v - 65536) & M32
    return v


@fast
def mem_store(mem8, mem32, addr, op, val):
    if op == 44:
        mem32[addr >> 2] = np.uint32(val & M32)
    elif op == 42:
        mem8[addr] = np.uint8(val & 0xFF)
    else:
        mem8[addr] = np.uint8(val & 0xFF)
        mem8[addr + 1] = np.uint8((val >> 8) & 0xFF)


# op ranges
OP_ALU_LAST = 28        # ADD..AUIPC write rd from alu()
OP_JAL, OP_JALR = 29, 30
OP_BR_FIRST, OP_BR_LAST = 31, 36
OP_LD_FIRST, OP_LD_LAST = 37, 41
OP_ST_FIRST, OP_ST_LAST = 42, 44
OP_FENCE, OP_ECALL, OP_EBREAK = 45, 46, 47
OP_CSR_FIRST, OP_CSR_LAST = 48, 53
OP_TMC, OP_WSPAWN, OP_SPLIT, OP_JOIN, OP_BAR, OP_SLEEP = 54, 55, 56, 57, 58, 59

assert int(Op.AUIPC) == OP_ALU_LAST and int(Op.SLEEP_REQ) == OP_SLEEP and int(Op.CSRRCI) == OP_CSR_LAST


# --------------------------------------------------------------------------
# caches

@fast
def cache_index(addr, lshift, banks, sets):
    line = addr >> lshift
    bank = line % banks
    s = (line // banks) % sets
    tag = line // (banks * sets)
    return bank, s, tag


@njit(cache=True)
def probe_sequence(addrs, stores, lshift, banks, sets):
    """Tag-only direct-mapped lookup sequence; 1 = hit.  Same indexing as the engine."""
    tag = np.zeros((banks, sets), np.int64)
    valid = np.zeros((banks, sets), np.int8)
    out = np.zeros(addrs.shape[0], np.int8)
    for i in range(addrs.shape[0]):
        b, s, t = cache_index(addrs[i], lshift, banks, sets)
        if valid[b, s] and tag[b, s] == t:
            out[i] = 1
        else:
            valid[b, s] = 1
            tag[b, s] = t
    return out


# --------------------------------------------------------------------------
# bus

@fast
def enqueue(st, req, addr, kind, tag, last):
    P = st.P
    qc = P[P_QCAP]
    t = st.q_tail[req]
    i = t % qc
    st.q_addr[req, i] = addr
    st.q_kind[req, i] = kind
    st.q_tag[req, i] = tag
    st.q_last[req, i] = last
    st.q_tail[req] = t + 1


@fast
def arbiter_grant(st, cycle):
    """Grant at most one queued 32-bit transaction, round-robin over requesters."""
    P = st.P
    S = st.S
    nreq = P[P_NC] + 1
    qc = P[P_QCAP]
    for k in range(nreq):
        r = (S[S_ARB_LAST] + 1 + k) % nreq
        h = st.q_head[r]
        if h < st.q_tail[r]:
            i = h % qc
            st.q_head[r] = h + 1
            S[S_ARB_LAST] = r
            fc = P[P_FCAP]
            j = S[S_F_TAIL] % fc
            st.f_cycle[j] = cycle + P[P_MEMLAT]
            st.f_req[j] = r
            st.f_kind[j] = st.q_kind[r, i]
            st.f_tag[j] = st.q_tag[r, i]
            st.f_last[j] = st.q_last[r, i]
            st.f_addr[j] = st.q_addr[r, i]
            S[S_F_TAIL] += 1
            if st.q_kind[r, i] == 0:
                st.ev[K_BUS_RD] += 1
            else:
                st.ev[K_BUS_WR] += 1
            n = S[S_TXN_N]
            if n < P[P_TXN_CAP]:
                st.txn_trace[n, 0] = cycle
                st.txn_trace[n, 1] = r
                st.txn_trace[n, 2] = st.q_addr[r, i]
                st.txn_trace[n, 3] = st.q_kind[r, i]
            S[S_TXN_N] = n + 1
            return


@fast
def complete_transactions(st, cycle):
    P = st.P
    S = st.S
    nc = P[P_NC]
    nw = P[P_NW]
    fc = P[P_FCAP]
    while S[S_F_HEAD] < S[S_F_TAIL]:
        j = S[S_F_HEAD] % fc
        if st.f_cycle[j] > cycle:
            break
        S[S_F_HEAD] += 1
        tag = st.f_tag[j]
        if st.f_kind[j] == 1:
            if tag == -2:
                S[S_FLUSH_OUT] -= 1
            continue
        if not st.f_last[j]:
            continue
        r = st.f_req[j]
        if r == nc:  # data cache line fill
            m = tag
            st.m_valid[m] = 0
            bank = m // P[P_MSHR]
            st.m_count[bank] -= 1
            for g in range(nc * nw):
                if st.m_wait[m, g]:
                    st.m_wait[m, g] = 0
                    c = g // nw
                    w = g % nw
                    st.w_pend[c, w] -= 1
                    if st.w_ready[c, w] < cycle + 1:
                        st.w_ready[c, w] = cycle + 1
                    if st.w_pend[c, w] == 0:
                        S[S_NWAIT_FILL] -= 1
            line = st.m_line[m]
            b, s, t = cache_index(line << P[P_DC_LSHIFT], P[P_DC_LSHIFT], P[P_DC_BANKS], P[P_DC_SETS])
            if st.dc_pend[b, s] == m:
                st.dc_pend[b, s] = -1
        else:  # instruction cache line fill for CU r
            m = tag
            st.im_valid[r, m] = 0
            for w in range(nw):
                if st.im_wait[r, m, w]:
                    st.im_wait[r, m, w] = 0
                    st.w_fetch_ok[r, w] = 1
                    st.w_ready[r, w] = cycle + 1
            line = st.im_line[r, m]
            b, s, t = cache_index(line << P[P_IC_LSHIFT], P[P_IC_LSHIFT], P[P_IC_BANKS], P[P_IC_SETS])
            if st.ic_pend[r, b, s] == m:
                st.ic_pend[r, b, s] = -1


# --------------------------------------------------------------------------
# compute unit

@fast
def trap(st, code, cu, w, pc, info):
    S = st.S
    S[S_STATUS] = TRAPPED
    S[S_TRAP_CODE] = code
    S[S_TRAP_CU] = cu
    S[S_TRAP_WARP] = w
    S[S_TRAP_PC] = pc
    S[S_TRAP_INFO] = info


@fast
def first_lane(mask, nt):
    for l in range(nt):
        if (mask >> l) & 1:
            return l
    return 0


@fast
def popcount(x):
    n = 0
    while x:
        x &= x - 1
        n += 1
    return n


@fast
def icache_fetch(st, cu, w, pc, cycle):
    """Returns 1 if the instruction is available now, 0 if the warp must wait."""
    P = st.P
    b, s, t = cache_index(pc, P[P_IC_LSHIFT], P[P_IC_BANKS], P[P_IC_SETS])
    pend = st.ic_pend[cu, b, s]
    if st.ic_valid[cu, b, s] and st.ic_tag[cu, b, s] == t:
        if pend >= 0:
            st.im_wait[cu, pend, w] = 1
            st.w_status[cu, w] = W_FETCH
            st.w_ready[cu, w] = 1 << 62
            st.ev[K_IC_HIT] += 1
            return 0
        st.ev[K_IC_HIT] += 1
        if P[P_IC_HIT] > 1:
            st.w_fetch_ok[cu, w] = 1
            st.w_status[cu, w] = W_FETCH
            st.w_ready[cu, w] = cycle + P[P_IC_HIT] - 1
            return 0
        return 1
    st.ev[K_IC_MISS] += 1
    nw = P[P_NW]
    m = -1
    for k in range(nw):
        if not st.im_valid[cu, k]:
            m = k
            break
    # at most one fill per waiting warp, so a free slot always exists
    line = pc >> P[P_IC_LSHIFT]
    st.im_valid[cu, m] = 1
    st.im_line[cu, m] = line
    st.im_wait[cu, m, w] = 1
    st.ic_valid[cu, b, s] = 1
    st.ic_tag[cu, b, s] = t
    st.ic_pend[cu, b, s] = m
    words = (1 << P[P_IC_LSHIFT]) >> 2
    base = line << P[P_IC_LSHIFT]
    for k in range(words):
        enqueue(st, cu, base + 4 * k, 0, m, 1 if k == words - 1 else 0)
    st.w_status[cu, w] = W_FETCH
    st.w_ready[cu, w] = 1 << 62
    return 0


@fast
def dcache_request(st, cu, w, lines, nlines, store, cycle, need):
    """Timing for one unified request; returns False (no state change) if MSHRs are short."""
    P = st.P
    S = st.S
    banks = P[P_DC_BANKS]
    sets = P[P_DC_SETS]
    ls = P[P_DC_LSHIFT]
    depth = P[P_MSHR]
    for b in range(banks):
        need[b] = 0
    for i in range(nlines):
        b, s, t = cache_index(lines[i] << ls, ls, banks, sets)
        if not (st.dc_valid[b, s] and st.dc_tag[b, s] == t):
            need[b] += 1
    for b in range(banks):
        if need[b] and st.m_count[b] + need[b] > depth:
            return False
    g = cu * P[P_NW] + w
    ready = cycle
    pend = 0
    words = (1 << ls) >> 2
    for i in range(nlines):
        line = lines[i]
        b, s, t = cache_index(line << ls, ls, banks, sets)
        slot = st.dc_bank_free[b]
        if slot < cycle:
            slot = cycle
        st.dc_bank_free[b] = slot + 1
        done = slot + P[P_DC_HIT]
        if done > ready:
            ready = done
        if st.dc_valid[b, s] and st.dc_tag[b, s] == t:
            st.ev[K_DC_HIT] += 1
            m = st.dc_pend[b, s]
            if m >= 0:
                st.ev[K_DC_MERGE] += 1
                if not st.m_wait[m, g]:
                    st.m_wait[m, g] = 1
                    pend += 1
            if store:
                st.dc_dirty[b, s] = 1
            continue
        st.ev[K_DC_MISS] += 1
        if st.dc_valid[b, s] and st.dc_dirty[b, s]:
            victim = (st.dc_tag[b, s] * sets + s) * banks + b
            for k in range(words):
                enqueue(st, P[P_NC], (victim << ls) + 4 * k, 1, -1, 0)
        m = -1
        for k in range(depth):
            if not st.m_valid[b * depth + k]:
                m = b * depth + k
                break
        st.m_valid[m] = 1
        st.m_line[m] = line
        st.m_count[b] += 1
        st.m_wait[m, g] = 1
        pend += 1
        st.dc_valid[b, s] = 1
        st.dc_tag[b, s] = t
        st.dc_dirty[b, s] = 1 if store else 0
        st.dc_pend[b, s] = m
        for k in range(words):
            enqueue(st, P[P_NC], (line << ls) + 4 * k, 0, m, 1 if k == words - 1 else 0)
    st.w_ready[cu, w] = ready
    st.w_pend[cu, w] = pend
    if pend:
        S[S_NWAIT_FILL] += 1
    st.w_status[cu, w] = W_MEM
    return True


@fast
def read_csr(st, csr, cu, w, lane, cycle):
    P = st.P
    if csr == 0xCC0:
        return lane
    if csr == 0xCC1:
        return w
    if csr == 0xCC2:
        return cu
    if csr == 0xFC0:
        return P[P_NT]
    if csr == 0xFC1:
        return P[P_NW]
    if csr == 0xFC2:
        return P[P_NC]
    if csr == 0xFC3:
        return P[P_ARGS_BASE]
    if csr == 0xC00:
        return cycle & M32
    return -1


@fast
def execute(st, cu, w, cycle, lines, need):
    """Issue the warp's next instruction.  0 = issued, 1 = retry later, 2 = trapped."""
    P = st.P
    nt = P[P_NT]
    pc = st.w_pc[cu, w]
    idx = (pc - P[P_CODE_BASE]) >> 2
    op = st.dec_op[idx]
    rd = st.dec_rd[idx]
    rs1 = st.dec_rs1[idx]
    rs2 = st.dec_rs2[idx]
    imm = st.dec_imm[idx]
    mask = st.w_mask[cu, w]
    R = st.regs
    npc = pc + 4
    if op < 0:
        trap(st, T_ILLEGAL, cu, w, pc, idx)
        return 2
    if op <= OP_ALU_LAST:
        if rd != 0:
            for l in range(nt):
                if (mask >> l) & 1:
                    R[cu, w, l, rd] = alu(op, R[cu, w, l, rs1], R[cu, w, l, rs2], imm, pc)
    elif op == OP_JAL or op == OP_JALR:
        if op == OP_JAL:
            npc = (pc + imm) & M32
        else:
            npc = (R[cu, w, first_lane(mask, nt), rs1] + imm) & 0xFFFFFFFE
        if rd != 0:
            for l in range(nt):
                R[cu, w, l, rd] = (pc + 4) & M32
    elif op <= OP_BR_LAST:
        if mask:
            l0 = first_lane(mask, nt)
            tk = branch_taken(op, R[cu, w, l0, rs1], R[cu, w, l0, rs2])
            for l in range(l0 + 1, nt):
                if (mask >> l) & 1 and branch_taken(op, R[cu, w, l, rs1], R[cu, w, l, rs2]) != tk:
                    st.ev[K_DIV_BRANCH] += 1
                    break
            if tk:
                npc = (pc + imm) & M32
    elif op <= OP_ST_LAST:
        store = op >= OP_ST_FIRST
        width = mem_width(op)
        ls = P[P_DC_LSHIFT]
        nl = 0
        for l in range(nt):
            if (mask >> l) & 1:
                a = (R[cu, w, l, rs1] + imm) & M32
                if a & (width - 1):
                    trap(st, T_UNALIGNED, cu, w, pc, a)
                    return 2
                if a + width > P[P_MEM_SIZE]:
                    trap(st, T_BUS, cu, w, pc, a)
                    return 2
                ln = a >> ls
                seen = False
                for k in range(nl):
                    if lines[k] == ln:
                        seen = True
                        break
                if not seen:
                    lines[nl] = ln
                    nl += 1
        if nl:
            if not dcache_request(st, cu, w, lines, nl, store, cycle, need):
                st.ev[K_MSHR_RETRY] += 1
                return 1
            for l in range(nt):
                if (mask >> l) & 1:
                    a = (R[cu, w, l, rs1] + imm) & M32
                    if store:
                        mem_store(st.mem8, st.mem32, a, op, R[cu, w, l, rs2])
                    elif rd != 0:
                        R[cu, w, l, rd] = mem_load(st.mem8, st.mem32, a, op)
            if store:
                st.ev[K_STORES] += 1
            else:
                st.ev[K_LOADS] += 1
    elif op == OP_FENCE:
        pass
    elif op == OP_ECALL:
        trap(st, T_ECALL, cu, w, pc, 0)
        return 2
    elif op == OP_EBREAK:
        trap(st, T_EBREAK, cu, w, pc, 0)
        return 2
    elif op <= OP_CSR_LAST:
        csr = imm
        writes = op == 48 or op == 51 or rs1 != 0
        if writes:
            trap(st, T_CSR_WRITE, cu, w, pc, csr)
            return 2
        if read_csr(st, csr, cu, w, 0, cycle) < 0:
            trap(st, T_BAD_CSR, cu, w, pc, csr)
            return 2
        if rd != 0:
            for l in range(nt):
                if (mask >> l) & 1:
                    R[cu, w, l, rd] = read_csr(st, csr, cu, w, l, cycle)
    elif op == OP_TMC:
        full = (1 << nt) - 1
        v = R[cu, w, first_lane(mask, nt), rs1] & full
        st.w_mask[cu, w] = v
        if v == 0:
            st.w_status[cu, w] = W_INACTIVE
            st.ip_sp[cu, w] = 0
    elif op == OP_WSPAWN:
        l0 = first_lane(mask, nt)
        n = R[cu, w, l0, rs1]
        target = R[cu, w, l0, rs2]
        nw = P[P_NW]
        if n > nw:
            n = nw
        for k in range(1, n):
            if k != w:
                st.w_pc[cu, k] = target
                st.w_mask[cu, k] = 1
                st.w_status[cu, k] = W_READY
                st.w_fetch_ok[cu, k] = 0
                st.ip_sp[cu, k] = 0
                st.w_class[cu, k] = st.dec_region[idx]
    elif op == OP_SPLIT:
        sp = st.ip_sp[cu, w]
        if sp + 2 > P[P_IPDOM]:
            trap(st, T_IPDOM_OVERFLOW, cu, w, pc, sp)
            return 2
        pred = 0
        for l in range(nt):
            if (mask >> l) & 1 and R[cu, w, l, rs1] != 0:
                pred |= 1 << l
        st.ip_kind[cu, w, sp] = IP_RESTORE
        st.ip_mask[cu, w, sp] = mask
        if pred == 0:
            # nobody takes the first path: go straight to the second one, whose
            # closing JOIN pops the restore entry
            st.ip_sp[cu, w] = sp + 1
            npc = (pc + imm) & M32
        else:
            st.ip_kind[cu, w, sp + 1] = IP_ELSE
            st.ip_mask[cu, w, sp + 1] = mask & ~pred
            st.ip_target[cu, w, sp + 1] = (pc + imm) & M32
            st.ip_sp[cu, w] = sp + 2
            st.w_mask[cu, w] = mask & pred
    elif op == OP_JOIN:
        sp = st.ip_sp[cu, w]
        if sp == 0:
            trap(st, T_IPDOM_UNDERFLOW, cu, w, pc, 0)
            return 2
        sp -= 1
        st.ip_sp[cu, w] = sp
        st.w_mask[cu, w] = st.ip_mask[cu, w, sp]
        if st.ip_kind[cu, w, sp] == IP_ELSE:
            npc = st.ip_target[cu, w, sp]
    elif op == OP_BAR:
        l0 = first_lane(mask, nt)
        bid = R[cu, w, l0, rs1]
        count = R[cu, w, l0, rs2]
        if bid >= NBAR:
            trap(st, T_BAD_BARRIER, cu, w, pc, bid)
            return 2
        if count > 1:
            arr = st.bar_arrived[cu, bid] | (1 << w)
            if popcount(arr) >= count:
                for k in range(P[P_NW]):
                    if (arr >> k) & 1 and k != w:
                        st.w_status[cu, k] = W_READY
                st.bar_arrived[cu, bid] = 0
            else:
                st.bar_arrived[cu, bid] = arr
                st.w_status[cu, w] = W_BARRIER
    elif op == OP_SLEEP:
        st.w_status[cu, w] = W_ASLEEP
        st.cu_sleep[cu] = 1
    st.w_pc[cu, w] = npc
    # accounting
    lanes = popcount(mask)
    st.ev[K_INSTR] += 1
    st.ev[K_LANE_INSTR] += lanes
    st.cu_cnt[cu, CU_INSTR] += 1
    st.cu_cnt[cu, CU_LANE_INSTR] += lanes
    reg = st.dec_region[idx]
    # a unit stays in the most advanced phase any of its live warps has reached
    st.w_class[cu, w] = reg
    c = reg
    for k in range(P[P_NW]):
        if st.w_status[cu, k] != W_INACTIVE and st.w_status[cu, k] != W_ASLEEP and st.w_class[cu, k] > c:
            c = st.w_class[cu, k]
    st.cu_class[cu] = c
    if reg == C_KERNEL:
        for l in range(nt):
            if (mask >> l) & 1:
                st.lane_kinstr[cu, w, l] += 1
    S = st.S
    n = S[S_TRACE_N]
    if n < P[P_TRACE_CAP]:
        st.trace[n, 0] = cycle
        st.trace[n, 1] = cu
        st.trace[n, 2] = w
        st.trace[n, 3] = pc
        st.trace[n, 4] = mask
        st.trace[n, 5] = op
        S[S_TRACE_N] = n + 1
    return 0


@fast
def tick_cu(st, cu, cycle, lines, need):
    """One cycle of one compute unit.  Returns True if an instruction issued."""
    P = st.P
    nw = P[P_NW]
    code_lo = P[P_CODE_BASE]
    code_hi = code_lo + 4 * P[P_CODE_WORDS]
    for k in range(nw):
        w = (st.cu_rr[cu] + 1 + k) % nw
        s = st.w_status[cu, w]
        if s == W_MEM:
            if st.w_pend[cu, w] == 0 and st.w_ready[cu, w] <= cycle:
                st.w_status[cu, w] = W_READY
            else:
                continue
        elif s == W_FETCH:
            if st.w_fetch_ok[cu, w] and st.w_ready[cu, w] <= cycle:
                st.w_status[cu, w] = W_READY
            else:
                continue
        elif s != W_READY:
            continue
        pc = st.w_pc[cu, w]
        if pc & 3 or pc < code_lo or pc >= code_hi:
            trap(st, T_FETCH, cu, w, pc, 0)
            return False
        if st.w_fetch_ok[cu, w]:
            st.w_fetch_ok[cu, w] = 0
        elif not icache_fetch(st, cu, w, pc, cycle):
            continue
        r = execute(st, cu, w, cycle, lines, need)
        if r == 1:
            st.w_fetch_ok[cu, w] = 1  # instruction already fetched; retry issue
            continue
        if r == 2:
            return False
        st.cu_rr[cu] = w
        return True
    return False


@fast
def check_cu_done(st, cu, cycle):
    """Completion event / deadlock detection for a running CU."""
    P = st.P
    nw = P[P_NW]
    n_inactive = 0
    n_asleep = 0
    n_bar = 0
    for w in range(nw):
        s = st.w_status[cu, w]
        if s == W_INACTIVE:
            n_inactive += 1
        elif s == W_ASLEEP:
            n_asleep += 1
        elif s == W_BARRIER:
            n_bar += 1
    if n_inactive + n_asleep == nw:
        if not st.cu_sleep[cu]:
            trap(st, T_NO_SLEEP, cu, 0, 0, 0)
            return
        st.cu_gated[cu] = 1
        S = st.S
        e = S[S_EVENT_N]
        if e < st.events.shape[0]:
            st.events[e, 0] = cycle
            st.events[e, 1] = cu
        S[S_EVENT_N] = e + 1
    elif n_bar and n_inactive + n_asleep + n_bar == nw:
        trap(st, T_DEADLOCK, cu, 0, 0, n_bar)


@fast
def start_flush(st, cycle):
    P = st.P
    S = st.S
    ls = P[P_DC_LSHIFT]
    banks = P[P_DC_BANKS]
    sets = P[P_DC_SETS]
    words = (1 << ls) >> 2
    S[S_FLUSHING] = 1
    S[S_GATED_CYCLE] = cycle
    for s in range(sets):
        for b in range(banks):
            if st.dc_valid[b, s] and st.dc_dirty[b, s]:
                line = (st.dc_tag[b, s] * sets + s) * banks + b
                for k in range(words):
                    enqueue(st, P[P_NC], (line << ls) + 4 * k, 1, -2, 0)
                    S[S_FLUSH_OUT] += 1
                st.dc_dirty[b, s] = 0


@fast
def run_device(st, max_cycles):
    """Advance until the completion interrupt, a trap, or ``max_cycles``."""
    P = st.P
    S = st.S
    nc = P[P_NC]
    lines = st.scratch_lines
    need = st.scratch_need
    while S[S_STATUS] == RUNNING:
        cycle = S[S_CYCLE]
        if cycle >= max_cycles:
            S[S_STATUS] = TIMEOUT
            break
        for k in range(NK):
            st.ev[k] = 0
        complete_transactions(st, cycle)
        issued_any = False
        for cu in range(nc):
            if st.cu_gated[cu]:
                st.cu_cnt[cu, CU_GATED] += 1
                st.ev[K_CU_GATED] += 1
                continue
            if tick_cu(st, cu, cycle, lines, need):
                issued_any = True
                st.cu_cnt[cu, CU_ISSUE] += 1
                st.ev[K_CU_ISSUE] += 1
            else:
                st.cu_cnt[cu, CU_IDLE] += 1
                st.ev[K_CU_IDLE] += 1
            if S[S_STATUS] != RUNNING:
                break
            check_cu_done(st, cu, cycle)
            if S[S_STATUS] != RUNNING:
                break
        if S[S_STATUS] != RUNNING:
            break
        all_gated = True
        cls = -1
        for cu in range(nc):
            if not st.cu_gated[cu]:
                all_gated = False
                if st.cu_class[cu] > cls:
                    cls = st.cu_class[cu]
        if all_gated and not S[S_FLUSHING]:
            start_flush(st, cycle)
        arbiter_grant(st, cycle)
        if all_gated:
            cls = C_TRANSFER
        elif cls == C_KERNEL and not issued_any and S[S_NWAIT_FILL] > 0:
            cls = C_TRANSFER
        st.ev[K_CYCLES] = 1
        for k in range(NK):
            st.cnt[cls, k] += st.ev[k]
        if S[S_FLUSHING] and S[S_FLUSH_OUT] == 0:
            S[S_IRQ_CYCLE] = cycle
            S[S_STATUS] = DONE
        S[S_CYCLE] = cycle + 1
    return S[S_STATUS]


# --------------------------------------------------------------------------
# scalar host core

HOST_ALU, HOST_MEM, HOST_MUL, HOST_DIV, HOST_TAKEN = 0, 1, 2, 3, 4
(H_CYCLES, H_INSTR, H_LOADS, H_STORES, H_MUL, H_DIV, H_TAKEN) = range(7)


@fast
def run_host(mem8, mem32, dec_op, dec_rd, dec_rs1, dec_rs2, dec_imm, code_base, pc, regs, cpi,
             counters, max_cycles, csr_vals):
    """Scalar RV32IM interpreter; halts on ECALL.  Returns (status, pc, info)."""
    n = dec_op.shape[0]
    mem_size = mem8.shape[0]
    cycles = counters[H_CYCLES]
    while True:
        if cycles >= max_cycles:
            counters[H_CYCLES] = cycles
            return TIMEOUT, pc, 0
        idx = (pc - code_base) >> 2
        if pc & 3 or idx < 0 or idx >= n:
            counters[H_CYCLES] = cycles
            return TRAPPED, pc, T_FETCH
        op = dec_op[idx]
        rd = dec_rd[idx]
        rs1 = dec_rs1[idx]
        rs2 = dec_rs2[idx]
        imm = dec_imm[idx]
        npc = pc + 4
        cost = cpi[HOST_ALU]
        counters[H_INSTR] += 1
        if op < 0:
            counters[H_CYCLES] = cycles
            return TRAPPED, pc, T_ILLEGAL
        if op <= OP_ALU_LAST:
            if rd != 0:
                regs[rd] = alu(op, regs[rs1], regs[rs2], imm, pc)
            if 10 <= op <= 13:
                cost = cpi[HOST_MUL]
                counters[H_MUL] += 1
            elif 14 <= op <= 17:
                cost = cpi[HOST_DIV]
                counters[H_DIV] += 1
        elif op == OP_JAL or op == OP_JALR:
            if op == OP_JAL:
                npc = (pc + imm) & M32
            else:
                npc = (regs[rs1] + imm) & 0xFFFFFFFE
            if rd != 0:
                regs[rd] = (pc + 4) & M32
            cost = cpi[HOST_TAKEN]
            counters[H_TAKEN] += 1
        elif op <= OP_BR_LAST:
            if branch_taken(op, regs[rs1], regs[rs2]):
                npc = (pc + imm) & M32
                cost = cpi[HOST_TAKEN]
                counters[H_TAKEN] += 1
        elif op <= OP_ST_LAST:
            width = mem_width(op)
            a = (regs[rs1] + imm) & M32
            if a & (width - 1):
                counters[H_CYCLES] = cycles
                return TRAPPED, pc, T_UNALIGNED
            if a + width > mem_size:
                counters[H_CYCLES] = cycles
                return TRAPPED, pc, T_BUS
            if op >= OP_ST_FIRST:
                mem_store(mem8, mem32, a, op, regs[rs2])
                counters[H_STORES] += 1
            else:
                v = mem_load(mem8, mem32, a, op)
                if rd != 0:
                    regs[rd] = v
                counters[H_LOADS] += 1
            cost = cpi[HOST_MEM]
        elif op == OP_ECALL:
            counters[H_CYCLES] = cycles + cost
            return DONE, pc, 0
        elif op == OP_EBREAK:
            counters[H_CYCLES] = cycles
            return TRAPPED, pc, T_EBREAK
        elif OP_CSR_FIRST <= op <= OP_CSR_LAST:
            if op == 48 or op == 51 or rs1 != 0:
                counters[H_CYCLES] = cycles
                return TRAPPED, pc, T_CSR_WRITE
            v = -1
            if imm == 0xC00:
                v = cycles & M32
            else:
                for k in range(csr_vals.shape[0]):
                    if csr_vals[k, 0] == imm:
                        v = csr_vals[k, 1]
            if v < 0:
                counters[H_CYCLES] = cycles
                return TRAPPED, pc, T_BAD_CSR
            if rd != 0:
                regs[rd] = v
        elif op >= OP_TMC:
            counters[H_CYCLES] = cycles
            return TRAPPED, pc, T_ILLEGAL
        cycles += cost
        pc = npc
