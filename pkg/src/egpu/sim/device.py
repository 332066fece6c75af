"""Python-side device model: state construction, image loading, boot, snapshots."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from egpu.config import SimConfig
from egpu.errors import EgpuError
from egpu.isa.encoding import IllegalInstruction, MNEMONIC, Op, decode
from egpu.sim import engine as E


class DeviceTrap(EgpuError):
    """A simulated trap surfaced as a diagnostic."""

    def __init__(self, name: str, cu: int, warp: int, pc: int, info: int, cycle: int):
        super().__init__(f"{name} on cu {cu} warp {warp} at pc {pc:#x} (info {info:#x}, cycle {cycle})")
        self.name, self.cu, self.warp, self.pc, self.info, self.cycle = name, cu, warp, pc, info, cycle


TRAP_NAMES = {
    E.T_ILLEGAL: "IllegalInstruction", E.T_FETCH: "UnalignedFetch", E.T_UNALIGNED: "UnalignedAccess",
    E.T_BUS: "BusError", E.T_IPDOM_OVERFLOW: "StackOverflow", E.T_IPDOM_UNDERFLOW: "StackUnderflow",
    E.T_DEADLOCK: "BarrierDeadlock", E.T_ECALL: "Ecall", E.T_EBREAK: "Ebreak",
    E.T_CSR_WRITE: "CsrWrite", E.T_BAD_CSR: "UnknownCsr", E.T_BAD_BARRIER: "BadBarrierId",
    E.T_NO_SLEEP: "HaltWithoutSleep",
}
STATUS_NAMES = {E.W_INACTIVE: "inactive", E.W_READY: "ready", E.W_MEM: "stalled_mem",
                E.W_BARRIER: "stalled_barrier", E.W_ASLEEP: "asleep", E.W_FETCH: "stalled_fetch"}
PHASES = ("startup", "transfer", "sched", "kernel")
EVENT_KINDS = ("cycles", "instructions", "lane_instructions", "dcache_hits", "dcache_misses",
               "dcache_merges", "icache_hits", "icache_misses", "bus_reads", "bus_writes",
               "cu_issue_cycles", "cu_idle_cycles", "cu_gated_cycles", "loads", "stores",
               "mshr_retries", "divergent_branches")
assert len(EVENT_KINDS) == E.NK


@dataclass(frozen=True)
class DivergenceEntry:
    kind: str  # "else" | "restore"
    mask: int
    target_pc: int | None = None


@dataclass(frozen=True)
class WarpState:
    warp_id: int
    pc: int
    active_mask: int
    ipdom_stack: tuple[DivergenceEntry, ...]  # bottom first
    status: str
    scoreboard: frozenset = field(default_factory=frozenset)
    registers: np.ndarray | None = None  # [lane, reg]


_DECODE_MEMO: dict[int, tuple] = {}


def predecode_word(word: int) -> tuple:
    hit = _DECODE_MEMO.get(word)
    if hit is None:
        try:
            ins = decode(word)
            hit = (int(ins.op), ins.rd, ins.rs1, ins.rs2, ins.imm)
        except IllegalInstruction:
            hit = (-1, 0, 0, 0, 0)
        _DECODE_MEMO[word] = hit
    return hit


def predecode(words: np.ndarray):
    n = len(words)
    op = np.empty(n, np.int32)
    rd = np.empty(n, np.int32)
    rs1 = np.empty(n, np.int32)
    rs2 = np.empty(n, np.int32)
    imm = np.empty(n, np.int64)
    for i, w in enumerate(words.tolist()):
        op[i], rd[i], rs1[i], rs2[i], imm[i] = predecode_word(w)
    return op, rd, rs1, rs2, imm


def _log2(x: int) -> int:
    return x.bit_length() - 1


class Device:
    """Compute units, caches and the shared bus of one accelerator instance."""

    def __init__(self, cfg: SimConfig, trace_cap: int = 0, txn_cap: int = 0):
        self.cfg = cfg
        nc, nw, nt = cfg.num_cus, cfg.warps_per_cu, cfg.threads_per_cu
        db, dl = cfg.dcache_banks, cfg.dcache_line
        ds = cfg.dcache_size // (db * dl)
        ib, il = cfg.icache_banks, cfg.icache_line
        isets = cfg.icache_size_per_cu // (ib * il)
        depth = cfg.effective_mshr_depth
        code_words = cfg.kernel_region_size // 4
        qcap = cfg.dcache_size // 4 + db * depth * 2 * (dl // 4) + nw * (il // 4) + 64
        fcap = cfg.host_mem_latency + 4
        P = np.zeros(E.NP, np.int64)
        P[[E.P_NC, E.P_NW, E.P_NT]] = nc, nw, nt
        P[[E.P_DC_BANKS, E.P_DC_SETS, E.P_DC_LSHIFT]] = db, ds, _log2(dl)
        P[[E.P_IC_BANKS, E.P_IC_SETS, E.P_IC_LSHIFT]] = ib, isets, _log2(il)
        P[[E.P_DC_HIT, E.P_IC_HIT, E.P_MEMLAT]] = cfg.dcache_hit_latency, cfg.icache_hit_latency, cfg.host_mem_latency
        P[[E.P_MSHR, E.P_IPDOM]] = depth, cfg.ipdom_depth
        P[[E.P_CODE_BASE, E.P_CODE_WORDS, E.P_MEM_SIZE]] = cfg.kernel_base, code_words, cfg.main_mem_size
        P[[E.P_ARGS_BASE, E.P_BOOT_PC]] = cfg.args_base, cfg.kernel_base
        P[[E.P_TRACE_CAP, E.P_TXN_CAP, E.P_QCAP, E.P_NBAR, E.P_FCAP]] = trace_cap, txn_cap, qcap, E.NBAR, fcap
        self.mem8 = np.zeros(cfg.main_mem_size, np.uint8)
        self.mem32 = self.mem8.view(np.uint32)
        z = np.zeros
        nreq = nc + 1
        self.st = E.EngineState(
            P=P, S=z(E.NS, np.int64), mem8=self.mem8, mem32=self.mem32,
            dec_op=np.full(code_words, -1, np.int32), dec_rd=z(code_words, np.int32),
            dec_rs1=z(code_words, np.int32), dec_rs2=z(code_words, np.int32),
            dec_imm=z(code_words, np.int64), dec_region=z(code_words, np.int32),
            regs=z((nc, nw, nt, 32), np.int64), w_pc=z((nc, nw), np.int64), w_mask=z((nc, nw), np.int64),
            w_status=z((nc, nw), np.int32), w_pend=z((nc, nw), np.int32), w_ready=z((nc, nw), np.int64),
            w_fetch_ok=z((nc, nw), np.int32),
            ip_kind=z((nc, nw, cfg.ipdom_depth), np.int32), ip_mask=z((nc, nw, cfg.ipdom_depth), np.int64),
            ip_target=z((nc, nw, cfg.ipdom_depth), np.int64), ip_sp=z((nc, nw), np.int32),
            bar_arrived=z((nc, E.NBAR), np.int64),
            cu_rr=np.full(nc, nw - 1, np.int32), cu_class=z(nc, np.int32), w_class=z((nc, nw), np.int32), cu_gated=z(nc, np.int32),
            cu_sleep=z(nc, np.int32),
            dc_tag=z((db, ds), np.int64), dc_valid=z((db, ds), np.int8), dc_dirty=z((db, ds), np.int8),
            dc_pend=np.full((db, ds), -1, np.int32), dc_bank_free=z(db, np.int64),
            m_valid=z(db * depth, np.int8), m_line=z(db * depth, np.int64),
            m_wait=z((db * depth, nc * nw), np.int8), m_count=z(db, np.int64),
            ic_tag=z((nc, ib, isets), np.int64), ic_valid=z((nc, ib, isets), np.int8),
            ic_pend=np.full((nc, ib, isets), -1, np.int32),
            im_valid=z((nc, nw), np.int8), im_line=z((nc, nw), np.int64), im_wait=z((nc, nw, nw), np.int8),
            q_addr=z((nreq, qcap), np.int64), q_kind=z((nreq, qcap), np.int8), q_tag=z((nreq, qcap), np.int32),
            q_last=z((nreq, qcap), np.int8), q_head=z(nreq, np.int64), q_tail=z(nreq, np.int64),
            f_cycle=z(fcap, np.int64), f_req=z(fcap, np.int64), f_kind=z(fcap, np.int64),
            f_tag=z(fcap, np.int64), f_last=z(fcap, np.int64), f_addr=z(fcap, np.int64),
            cnt=z((4, E.NK), np.int64), ev=z(E.NK, np.int64), cu_cnt=z((nc, E.NCU_K), np.int64),
            lane_kinstr=z((nc, nw, nt), np.int64),
            trace=z((max(trace_cap, 1), 6), np.int64), txn_trace=z((max(txn_cap, 1), 4), np.int64),
            events=z((nc + 1, 2), np.int64), scratch_lines=z(max(nt, 1), np.int64), scratch_need=z(db, np.int64),
        )
        self._code_key = None
        self.regions = np.zeros(code_words, np.int32)
        self.started = False

    # -- memory ------------------------------------------------------------
    def write(self, addr: int, data: bytes | np.ndarray) -> None:
        """Host write into unified memory; overlapping cache lines are invalidated."""
        buf = np.frombuffer(bytes(data), np.uint8) if not isinstance(data, np.ndarray) else data.view(np.uint8).ravel()
        if addr < 0 or addr + len(buf) > len(self.mem8):
            raise EgpuError(f"write [{addr:#x}, +{len(buf)}) outside main memory")
        self.mem8[addr:addr + len(buf)] = buf
        self.invalidate(addr, len(buf))

    def write_words(self, addr: int, words) -> None:
        self.write(addr, np.asarray(words, dtype=np.int64).astype(np.uint32).view(np.uint8))

    def read(self, addr: int, size: int) -> bytes:
        if addr < 0 or addr + size > len(self.mem8):
            raise EgpuError(f"read [{addr:#x}, +{size}) outside main memory")
        return self.mem8[addr:addr + size].tobytes()

    def read_words(self, addr: int, count: int, signed: bool = True) -> np.ndarray:
        raw = np.frombuffer(self.read(addr, 4 * count), np.uint32)
        return raw.view(np.int32).copy() if signed else raw.copy()

    def invalidate(self, addr: int, size: int) -> None:
        if size <= 0:
            return
        st, cfg = self.st, self.cfg
        for lb, tag, valid, banks in ((cfg.dcache_line, st.dc_tag, st.dc_valid, cfg.dcache_banks),
                                      (cfg.icache_line, st.ic_tag, st.ic_valid, cfg.icache_banks)):
            sets = tag.shape[-1]
            b = np.arange(banks)[:, None]
            s = np.arange(sets)[None, :]
            line = (tag * sets + s) * banks + b
            hit = (valid != 0) & (line >= addr // lb) & (line <= (addr + size - 1) // lb)
            valid[hit] = 0
            if tag is st.dc_tag:
                st.dc_dirty[hit] = 0

    def dcache_resident(self, addr: int, size: int) -> float:
        """Fraction of the lines of [addr, addr+size) currently resident in the data cache."""
        cfg, st = self.cfg, self.st
        lb, banks, sets = cfg.dcache_line, cfg.dcache_banks, st.dc_tag.shape[1]
        first, last = addr // lb, (addr + size - 1) // lb
        hits = 0
        for ln in range(first, last + 1):
            b, s, t = ln % banks, (ln // banks) % sets, ln // (banks * sets)
            hits += bool(st.dc_valid[b, s] and st.dc_tag[b, s] == t)
        return hits / (last - first + 1)

    def prefill_dcache(self, addr: int, size: int) -> None:
        """Install clean tags for a range without bus traffic (pre-populated cache)."""
        cfg, st = self.cfg, self.st
        lb, banks, sets = cfg.dcache_line, cfg.dcache_banks, st.dc_tag.shape[1]
        for ln in range(addr // lb, (addr + size - 1) // lb + 1):
            b, s, t = ln % banks, (ln // banks) % sets, ln // (banks * sets)
            st.dc_valid[b, s], st.dc_tag[b, s], st.dc_dirty[b, s] = 1, t, 0

    # -- code ----------------------------------------------------------------
    def set_regions(self, regions: np.ndarray) -> None:
        self.regions = np.asarray(regions, np.int32)

    def _predecode(self) -> None:
        cfg = self.cfg
        lo = cfg.kernel_base // 4
        words = self.mem32[lo:lo + cfg.kernel_region_size // 4]
        key = (hash(words.tobytes()), hash(self.regions.tobytes()))
        if key == self._code_key:
            return
        op, rd, rs1, rs2, imm = predecode(words)
        st = self.st
        st.dec_op[:], st.dec_rd[:], st.dec_rs1[:], st.dec_rs2[:], st.dec_imm[:] = op, rd, rs1, rs2, imm
        st.dec_region[:] = self.regions
        self._code_key = key

    # -- control -------------------------------------------------------------
    def reset(self) -> None:
        """Clear warp, barrier and counter state; caches keep their contents."""
        st = self.st
        for name in ("regs", "w_pc", "w_mask", "w_status", "w_pend", "w_ready", "w_fetch_ok", "ip_sp",
                     "bar_arrived", "cu_class", "w_class", "cu_gated", "cu_sleep", "dc_bank_free", "m_valid",
                     "m_count", "m_wait", "im_valid", "im_wait", "q_head", "q_tail", "cnt", "ev",
                     "cu_cnt", "lane_kinstr", "events", "S"):
            getattr(st, name)[...] = 0
        st.dc_pend[...] = -1
        st.ic_pend[...] = -1
        st.cu_rr[...] = self.cfg.warps_per_cu - 1
        self.started = False

    def boot(self, boot_pc: int, args_base: int) -> None:
        self.reset()
        self._predecode()
        st = self.st
        st.P[E.P_BOOT_PC] = boot_pc
        st.P[E.P_ARGS_BASE] = args_base
        st.w_pc[:, 0] = boot_pc
        st.w_mask[:, 0] = 1
        st.w_status[:, 0] = E.W_READY
        self.started = True

    def run(self, max_cycles: int = 1 << 40) -> int:
        """Advance to ``max_cycles`` (absolute, since boot) or completion; returns run status."""
        S = self.st.S
        if S[E.S_STATUS] == E.TIMEOUT:
            S[E.S_STATUS] = E.RUNNING
        return int(E.run_device(self.st, max_cycles))

    # -- observation -------------------------------------------------------------
    @property
    def cycle(self) -> int:
        return int(self.st.S[E.S_CYCLE])

    @property
    def status(self) -> int:
        return int(self.st.S[E.S_STATUS])

    def trap_error(self) -> DeviceTrap | None:
        S = self.st.S
        if S[E.S_STATUS] != E.TRAPPED:
            return None
        code = int(S[E.S_TRAP_CODE])
        return DeviceTrap(TRAP_NAMES.get(code, f"trap{code}"), int(S[E.S_TRAP_CU]), int(S[E.S_TRAP_WARP]),
                          int(S[E.S_TRAP_PC]), int(S[E.S_TRAP_INFO]), int(S[E.S_CYCLE]))

    def warp_state(self, cu: int, w: int, with_registers: bool = False) -> WarpState:
        st = self.st
        sp = int(st.ip_sp[cu, w])
        stack = tuple(
            DivergenceEntry("else", int(st.ip_mask[cu, w, i]), int(st.ip_target[cu, w, i]))
            if st.ip_kind[cu, w, i] == E.IP_ELSE else DivergenceEntry("restore", int(st.ip_mask[cu, w, i]))
            for i in range(sp))
        status = STATUS_NAMES[int(st.w_status[cu, w])]
        board = frozenset()
        if status == "stalled_mem":
            idx = (int(st.w_pc[cu, w]) - 4 - self.cfg.kernel_base) // 4
            if 0 <= idx < len(st.dec_op) and E.OP_LD_FIRST <= st.dec_op[idx] <= E.OP_LD_LAST and st.dec_rd[idx]:
                board = frozenset({int(st.dec_rd[idx])})
        regs = st.regs[cu, w].copy() if with_registers else None
        return WarpState(w, int(st.w_pc[cu, w]), int(st.w_mask[cu, w]), stack, status, board, regs)

    def counters(self) -> dict[str, dict[str, int]]:
        """Event counts per phase class (startup, transfer, sched, kernel)."""
        cnt = self.st.cnt
        return {ph: {k: int(cnt[i, j]) for j, k in enumerate(EVENT_KINDS)} for i, ph in enumerate(PHASES)}

    def totals(self) -> dict[str, int]:
        s = self.st.cnt.sum(axis=0)
        return {k: int(s[j]) for j, k in enumerate(EVENT_KINDS)}

    def events(self) -> list[tuple[int, int]]:
        n = min(int(self.st.S[E.S_EVENT_N]), self.st.events.shape[0])
        return [(int(c), int(cu)) for c, cu in self.st.events[:n]]

    def trace_lines(self) -> list[str]:
        n = min(int(self.st.S[E.S_TRACE_N]), int(self.st.P[E.P_TRACE_CAP]))
        out = []
        for c, cu, w, pc, mask, op in self.st.trace[:n].tolist():
            out.append(f"{c} {cu} {w} {pc:#010x} {mask:#x} {MNEMONIC[Op(op)]}")
        return out

    def trace_records(self) -> np.ndarray:
        n = min(int(self.st.S[E.S_TRACE_N]), int(self.st.P[E.P_TRACE_CAP]))
        return self.st.trace[:n].copy()

    def transactions(self) -> np.ndarray:
        """Rows of (grant cycle, requester, address, is_write); requester num_cus = data cache."""
        n = min(int(self.st.S[E.S_TXN_N]), int(self.st.P[E.P_TXN_CAP]))
        return self.st.txn_trace[:n].copy()

    def transaction_lines(self) -> list[str]:
        nc = self.cfg.num_cus
        return [f"{c} {'dcache' if r == nc else f'icache{r}'} {a:#010x} {'w' if k else 'r'}"
                for c, r, a, k in self.transactions().tolist()]
