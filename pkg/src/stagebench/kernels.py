"""Emulation kernels and their timing modes.

A kernel spec names a primitive (one matmul, one FFT, one file write, ...)
and exactly one of four timing modes: run for a target wall time, run a
fixed iteration count, or draw either from a discrete PDF. Time mode loops
the primitive and checks the deadline after each full execution, so the
overshoot is bounded by one primitive.
"""

from __future__ import annotations

import os
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KERNEL_NAMES = (
    "MatMulSimple2D",
    "MatMulGeneral",
    "FFT",
    "AXPY",
    "InplaceCompute",
    "GenerateRandomNumber",
    "ScatterAdd",
    "WriteSingleRank",
    "WriteNonMPI",
    "ReadNonMPI",
)
IO_KERNELS = frozenset(("WriteSingleRank", "WriteNonMPI", "ReadNonMPI"))
_MATRIX_KERNELS = frozenset(("MatMulSimple2D", "MatMulGeneral"))

PDF_PROB_TOL = 1e-9


@dataclass(frozen=True)
class DiscretePdf:
    """Finite discrete distribution over values; probs must sum to 1."""

    values: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if not self.values:
            raise ValueError("pdf needs at least one value")
        if len(self.values) != len(self.probs):
            raise ValueError("values and probs must have equal length")
        if any(p < 0 for p in self.probs):
            raise ValueError("probabilities must be >= 0")
        if abs(sum(self.probs) - 1.0) > PDF_PROB_TOL:
            raise ValueError("probabilities must sum to 1")

    def sample(self, rng: np.random.Generator) -> float:
        idx = rng.choice(len(self.values), p=np.asarray(self.probs))
        return self.values[int(idx)]

    def to_dict(self) -> dict:
        return {"values": list(self.values), "probs": list(self.probs)}

    @classmethod
    def from_dict(cls, data: dict) -> "DiscretePdf":
        return cls(tuple(data["values"]), tuple(data["probs"]))


@dataclass
class KernelSpec:
    """One kernel with its data size and exactly one timing mode."""

    name: str
    data_size: list[int]
    run_time: float | None = None
    run_count: int | None = None
    run_time_pdf: DiscretePdf | None = None
    run_count_pdf: DiscretePdf | None = None
    mini_app_kernel: str | None = None
    device: str = "cpu"
    busy: bool = True

    def __post_init__(self) -> None:
        if self.name not in KERNEL_NAMES:
            raise ValueError(f"unknown kernel {self.name!r}")
        modes = [
            self.run_time is not None,
            self.run_count is not None,
            self.run_time_pdf is not None,
            self.run_count_pdf is not None,
        ]
        if sum(modes) != 1:
            raise ValueError("exactly one of run_time/run_count/"
                             "run_time_pdf/run_count_pdf must be set")
        if self.run_time is not None and self.run_time < 0:
            raise ValueError("run_time must be >= 0")
        if self.run_count is not None and self.run_count < 0:
            raise ValueError("run_count must be >= 0")
        self.data_size = [int(d) for d in self.data_size]
        if self.name in _MATRIX_KERNELS:
            if len(self.data_size) != 2:
                raise ValueError(f"{self.name} needs data_size [rows, cols]")
        elif len(self.data_size) != 1:
            raise ValueError(f"{self.name} needs a single-element data_size")
        if any(d < 1 for d in self.data_size):
            raise ValueError("data_size entries must be >= 1")
        if self.name == "FFT":
            n = self.data_size[0]
            if n & (n - 1):
                raise ValueError("FFT size must be a power of two")

    def to_dict(self) -> dict:
        out: dict = {"name": self.name, "data_size": list(self.data_size)}
        if self.run_time is not None:
            out["run_time"] = self.run_time
        if self.run_count is not None:
            out["run_count"] = self.run_count
        if self.run_time_pdf is not None:
            out["run_time_pdf"] = self.run_time_pdf.to_dict()
        if self.run_count_pdf is not None:
            out["run_count_pdf"] = self.run_count_pdf.to_dict()
        if self.mini_app_kernel:
            out["mini_app_kernel"] = self.mini_app_kernel
        out["device"] = self.device
        out["busy"] = self.busy
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "KernelSpec":
        return cls(
            name=data["name"],
            data_size=list(data["data_size"]),
            run_time=data.get("run_time"),
            run_count=data.get("run_count"),
            run_time_pdf=(
                DiscretePdf.from_dict(data["run_time_pdf"])
                if data.get("run_time_pdf")
                else None
            ),
            run_count_pdf=(
                DiscretePdf.from_dict(data["run_count_pdf"])
                if data.get("run_count_pdf")
                else None
            ),
            mini_app_kernel=data.get("mini_app_kernel"),
            device=data.get("device", "cpu"),
            busy=bool(data.get("busy", True)),
        )


@dataclass
class KernelOutcome:
    """What one run_kernel invocation actually did."""

    name: str
    wall_duration: float
    inner_iterations: int
    bytes_touched: int
    target_time: float | None = None
    target_count: int | None = None


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n, dtype=np.int64)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft_radix2(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT. Length must be 2**k."""
    n = int(x.shape[0])
    if n & (n - 1) or n == 0:
        raise ValueError("FFT size must be a power of two")
    a = np.asarray(x, dtype=np.complex128)[_bit_reverse_indices(n)].copy()
    half = 1
    while half < n:
        w = np.exp((-2j * np.pi / (2 * half)) * np.arange(half))
        a = a.reshape(-1, 2 * half)
        even = a[:, :half].copy()
        odd = a[:, half:] * w
        a[:, :half] = even + odd
        a[:, half:] = even - odd
        a = a.reshape(-1)
        half *= 2
    return a


def ifft_radix2(x: np.ndarray) -> np.ndarray:
    """Inverse of fft_radix2."""
    n = int(x.shape[0])
    return np.conj(fft_radix2(np.conj(np.asarray(x, dtype=np.complex128)))) / n


class KernelRunner:
    """Reusable executor for one KernelSpec.

    Buffers are allocated once, so hot loops pay only the primitive cost.
    I/O kernels need a scratch_dir; compute kernels ignore it.
    """

    def __init__(
        self,
        spec: KernelSpec,
        rng: np.random.Generator | None = None,
        scratch_dir: str | os.PathLike | None = None,
        rank: int = 0,
    ) -> None:
        self.spec = spec
        self.rng = rng if rng is not None else np.random.default_rng()
        self._prim, self.bytes_per_exec = self._build(spec, scratch_dir, rank)

    def _build(self, spec, scratch_dir, rank):
        name = spec.name
        size = spec.data_size
        rng = np.random.default_rng(12345)
        if name == "MatMulSimple2D":
            m, n = size
            a = rng.random((m, n))
            b = rng.random((n, m))
            out = np.empty((m, m))

            def prim():
                np.matmul(a, b, out=out)

            return prim, (a.nbytes + b.nbytes + out.nbytes)
        if name == "MatMulGeneral":
            m, n = size
            a = rng.random((m, n))
            b = rng.random((n, m))
            c = rng.random((m, m))
            tmp = np.empty((m, m))

            def prim():
                np.matmul(a, b, out=tmp)
                np.multiply(c, 0.5, out=c)
                np.add(c, tmp, out=c)

            return prim, (a.nbytes + b.nbytes + 2 * c.nbytes)
        if name == "FFT":
            x = rng.random(size[0]) + 1j * rng.random(size[0])

            def prim():
                fft_radix2(x)

            return prim, 2 * x.nbytes
        if name == "AXPY":
            x = rng.random(size[0])
            y = rng.random(size[0])
            tmp = np.empty_like(x)

            def prim():
                np.multiply(x, 0.001, out=tmp)
                np.add(y, tmp, out=y)

            return prim, 3 * x.nbytes
        if name == "InplaceCompute":
            x = rng.random(size[0]) + 0.5
            tmp = np.empty_like(x)

            def prim():
                np.sin(x, out=tmp)
                np.multiply(tmp, x, out=x)

            return prim, 2 * x.nbytes
        if name == "GenerateRandomNumber":
            gen = self.rng
            count = size[0]

            def prim():
                gen.random(count)

            return prim, 8 * count
        if name == "ScatterAdd":
            n = size[0]
            target = np.zeros(n)
            src = rng.random(n)
            idx = rng.integers(0, n, size=n)

            def prim():
                np.add.at(target, idx, src)

            return prim, 3 * n * 8
        if name in IO_KERNELS:
            if scratch_dir is None:
                raise ValueError(f"{name} requires a scratch_dir")
            scratch = Path(scratch_dir)
            scratch.mkdir(parents=True, exist_ok=True)
            path = scratch / f"{name.lower()}_r{rank}.bin"
            nbytes = size[0]
            buf = rng.integers(0, 256, size=nbytes, dtype=np.uint8).tobytes()
            if name == "ReadNonMPI":
                path.write_bytes(buf)

                def prim():
                    with open(path, "rb") as fh:
                        fh.read()

            else:

                def prim():
                    with open(path, "wb") as fh:
                        fh.write(buf)

            return prim, nbytes
        raise ValueError(f"unknown kernel {name!r}")

    def run(self) -> KernelOutcome:
        """Execute once according to the configured timing mode."""
        spec = self.spec
        target_time: float | None = None
        target_count: int | None = None
        if spec.run_time is not None:
            target_time = spec.run_time
        elif spec.run_time_pdf is not None:
            target_time = spec.run_time_pdf.sample(self.rng)
        elif spec.run_count is not None:
            target_count = spec.run_count
        else:
            target_count = int(round(spec.run_count_pdf.sample(self.rng)))

        prim = self._prim
        iterations = 0
        t0 = time.perf_counter()
        if target_count is not None:
            for _ in range(target_count):
                prim()
            iterations = target_count
            wall = time.perf_counter() - t0
        elif not spec.busy:
            time.sleep(target_time)
            wall = time.perf_counter() - t0
        else:
            deadline = t0 + target_time
            while True:
                prim()
                iterations += 1
                if time.perf_counter() >= deadline:
                    break
            wall = time.perf_counter() - t0
        return KernelOutcome(
            name=spec.name,
            wall_duration=wall,
            inner_iterations=iterations,
            bytes_touched=iterations * self.bytes_per_exec,
            target_time=target_time,
            target_count=target_count,
        )


def run_kernel(
    spec: KernelSpec,
    rng: np.random.Generator | None = None,
    scratch_dir: str | os.PathLike | None = None,
    rank: int = 0,
) -> KernelOutcome:
    """One-shot convenience wrapper around KernelRunner."""
    return KernelRunner(spec, rng, scratch_dir, rank).run()


def calibrate_primitive(
    name: str,
    data_size: list[int],
    scratch_dir: str | os.PathLike | None = None,
    samples: int = 11,
    warmups: int = 3,
) -> float:
    """Median wall time of one primitive execution after warmup."""
    if samples < 11:
        raise ValueError("calibration needs at least 11 samples")
    spec = KernelSpec(name=name, data_size=list(data_size), run_count=1)
    runner = KernelRunner(spec, scratch_dir=scratch_dir)
    for _ in range(warmups):
        runner._prim()
    times = []
    for _ in range(samples):
        t0 = time.perf_counter()
        runner._prim()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)
