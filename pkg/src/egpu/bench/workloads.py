"""Benchmark workloads expressed once and executed on either the device or the host core."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from egpu.apu.host import HostResult
from egpu.apu.runtime import Buffer, LaunchRecord, Runtime
from egpu.config import SimConfig
from egpu.kernelc.link import MemoryImage, build_scalar, build_simt
from egpu.kernels import TinyBioParams, kernel_source
from egpu.kernels import oracles

STAGES = ("preprocessing", "delineation", "features")

_IMAGE_CACHE: dict[tuple, MemoryImage] = {}


def _image(name: str, cfg: SimConfig, target: str) -> MemoryImage:
    # images depend only on the address map, not on core counts or cache geometry
    key = (name, target, cfg.kernel_base, cfg.kernel_region_size, cfg.stack_base,
           cfg.stack_size_per_thread, cfg.dcache_line, cfg.args_base, cfg.args_size)
    img = _IMAGE_CACHE.get(key)
    if img is None:
        src = kernel_source(name)
        img = build_simt(src, cfg) if target == "simt" else build_scalar(src, cfg)
        _IMAGE_CACHE[key] = img
    return img


class Executor:
    """Owns a runtime (and so a unified memory) and records the cost of each kernel call."""

    target = ""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.rt = Runtime(cfg)
        self.log: list[tuple[str, object]] = []

    def array(self, values) -> Buffer:
        return self.rt.alloc_array(values)

    def zeros(self, n: int) -> Buffer:
        return self.rt.alloc_array(np.zeros(n, np.int32))

    def read(self, buf: Buffer) -> np.ndarray:
        return self.rt.buffer_read(buf)

    def call(self, name: str, dev_global, dev_local, host_global, args):
        raise NotImplementedError


class DeviceExecutor(Executor):
    """Launches on the accelerator.

    ``prefill`` installs every buffer argument in the data cache before the
    launch and skips the firmware warm-up, so that only computation is timed.
    """

    target = "simt"

    def __init__(self, cfg: SimConfig, static: bool = False, prefill: bool = False):
        super().__init__(cfg)
        self.static = static
        self.prefill = prefill

    def call(self, name, dev_global, dev_local, host_global, args) -> LaunchRecord:
        rt = self.rt
        img = _image(name, self.cfg, "simt")
        if rt.image is not img:
            rt.load(img)
        rt.set_args(dev_global, dev_local, args, static=self.static, warm=[] if self.prefill else None)
        if self.prefill:
            for a in args:
                if isinstance(a, Buffer) and a.size:
                    rt.device.prefill_dcache(a.addr, a.size)
        rt.launch()
        rec = rt.wait()
        self.log.append((name, rec))
        return rec


class HostExecutor(Executor):
    target = "scalar"

    def call(self, name, dev_global, dev_local, host_global, args) -> HostResult:
        res = self.rt.run_scalar(_image(name, self.cfg, "scalar"), host_global, args)
        self.log.append((name, res))
        return res


# ---------------------------------------------------------------------------
# TinyBio

@dataclass
class TinyBioOutputs:
    filtered: np.ndarray
    flags: np.ndarray
    peaks: list[int]
    troughs: list[int]
    spectra: tuple[np.ndarray, np.ndarray]
    features: np.ndarray
    label: int
    costs: dict[str, list] = field(default_factory=dict)


def fft_layout(y: np.ndarray, n: int, windows: int, shift: int) -> tuple[np.ndarray, np.ndarray]:
    """Ping-pong buffers holding ``windows`` consecutive blocks of ``y`` scaled into Q16.16."""
    re = np.zeros(2 * n * windows, np.int64)
    for w in range(windows):
        re[2 * n * w:2 * n * w + n] = np.asarray(y[w * n:(w + 1) * n], np.int64) << shift
    return re.astype(np.int32), np.zeros(2 * n * windows, np.int32)


def fft_result_offset(n: int) -> int:
    return 0 if (n.bit_length() - 1) % 2 == 0 else n


def tinybio(ex: Executor, p: TinyBioParams, signal) -> TinyBioOutputs:
    """Run the four-stage pipeline; prediction is folded into feature extraction."""
    cfg = ex.cfg
    n = p.signal_length
    hw = cfg.total_threads
    per_cu = cfg.warps_per_cu * cfg.threads_per_cu
    ntaps = len(p.fir_taps)
    costs: dict[str, list] = {s: [] for s in STAGES}

    xp = ex.array(oracles.fir_padded(signal[:n], ntaps))
    taps = ex.array(p.fir_taps)
    y = ex.zeros(n)
    costs["preprocessing"].append(ex.call("fir", (hw,), (1,), (1,), [xp, taps, y, n, ntaps, p.fir_shift]))

    flags = ex.zeros(n)
    costs["delineation"].append(ex.call("delineate", (hw,), (1,), (1,), [y, flags, n, p.window // 2]))
    pk, tr, cnt = ex.zeros(n), ex.zeros(n), ex.zeros(2)
    costs["delineation"].append(ex.call("alternate", (1,), (1,), (1,), [y, flags, pk, tr, cnt, n]))
    npk, ntr = (int(v) for v in ex.read(cnt))

    N, W = p.fft_size, p.fft_windows
    re0, im0 = fft_layout(ex.read(y), N, W, p.fft_input_shift)
    re, im, tw = ex.array(re0), ex.array(im0), ex.array(oracles.twiddles(N))
    costs["features"].append(ex.call("fft", (W * per_cu,), (per_cu,), (W,), [re, im, tw, N]))
    iv, feat = ex.zeros(max(npk, 1)), ex.zeros(6)
    costs["features"].append(ex.call("features", (1,), (1,), (1,),
                                     [pk, iv, re, im, feat, npk, N, fft_result_offset(N), W, p.band_split]))
    w, label = ex.array(p.svm_weights), ex.zeros(1)
    costs["features"].append(ex.call("svm", (1,), (1,), (1,), [feat, w, label, len(p.svm_weights), p.svm_bias]))

    return TinyBioOutputs(ex.read(y), ex.read(flags), [int(v) for v in ex.read(pk)[:npk]],
                          [int(v) for v in ex.read(tr)[:ntr]], (ex.read(re), ex.read(im)), ex.read(feat),
                          int(ex.read(label)[0]), costs)


def tinybio_reference(p: TinyBioParams, signal) -> TinyBioOutputs:
    """The same pipeline evaluated with the scalar references."""
    n, N, W = p.signal_length, p.fft_size, p.fft_windows
    y = oracles.fir(signal[:n], p.fir_taps, p.fir_shift)
    flags = oracles.delineation_candidates(y, p.window)
    pk, tr = oracles.alternate(y, flags)
    re0, im0 = fft_layout(y, N, W, p.fft_input_shift)
    re, im = re0.copy(), im0.copy()
    off = fft_result_offset(N)
    lo = hi = 0
    for w in range(W):
        a, b = oracles.fft_stockham(re0[2 * N * w:2 * N * w + N], im0[2 * N * w:2 * N * w + N])
        re[2 * N * w + off:2 * N * w + off + N], im[2 * N * w + off:2 * N * w + off + N] = a, b
        l, h = oracles.band_powers(a, b, p.band_split)
        lo, hi = oracles.wrap32(lo + l), oracles.wrap32(hi + h)
    f = oracles.interval_features(pk)
    feat = np.array([f.mean, f.median, f.rms, lo, hi, int(f.valid)], np.int32)
    label = oracles.svm(feat[:len(p.svm_weights)], p.svm_weights, p.svm_bias)
    return TinyBioOutputs(y, flags, pk, tr, (re, im), feat, label)


# ---------------------------------------------------------------------------
# GeMM

def gemm_tile(ex: Executor, A, B, lanes: int | None = None):
    """Product through the tiled kernel with one work-item per hardware thread."""
    cfg = ex.cfg
    n = len(A)
    lanes = lanes or cfg.threads_per_cu
    hw = cfg.total_threads
    if n % lanes or n % (hw // lanes):
        raise ValueError(f"size {n} is not a multiple of the tile steps {lanes} and {hw // lanes}")
    a, b = ex.array(np.asarray(A).ravel()), ex.array(np.asarray(B).ravel())
    c = ex.zeros(n * n)
    if isinstance(ex, DeviceExecutor):
        rt = ex.rt
        img = _image("gemm_tile", cfg, "simt")
        if rt.image is not img:
            rt.load(img)
        rt.set_args((hw,), (1,), [a, b, c, n, lanes], static=ex.static, warm=[a, b])
        rt.launch()
        cost = rt.wait()
        ex.log.append(("gemm_tile", cost))
    else:
        cost = ex.call("gemm_tile", (hw,), (1,), (hw,), [a, b, c, n, lanes])
    return ex.read(c).reshape(n, n), cost
