"""Hardware description and profiled operator/communication performance.

The two primitive latency functions live here: compute time as work over
profiled throughput, and communication time as bytes over decayed algorithm
bandwidth.  Profiles are immutable after load; lookups are pure.

Communication bandwidth entries are bucketed by message size; lookup
interpolates bandwidth (and decay) piecewise-linearly over log message size
and clamps beyond the profiled range, so the resulting latency curve has no
jumps between buckets.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .arch import ModelArchitecture, decompose
from .errors import ConfigError, InputError, ProfileLookupError
from .plan import ParallelPlan

COLLECTIVE_KINDS = ("all-gather", "reduce-scatter", "all-reduce", "all-to-all", "p2p")

GB = 1e9
DAY_SECONDS = 86400.0


@dataclass(frozen=True)
class HardwareSpec:
    """Node and device capabilities, in SI units (bytes, bytes/s, FLOPs/s)."""
    h2d_bw: float            # host to device bytes/s
    d2h_bw: float            # device to host bytes/s
    disk_load_bw: float
    disk_write_bw: float
    cpu_memory: float        # bytes
    cpu_flops: float         # operations/s
    gpu_peak_flops: float    # specification peak, FLOPs/s
    gpu_memory: float        # bytes
    gpus_per_node: int
    hbm_bw: float            # device memory bandwidth bytes/s
    optimizer_throughput: float  # parameter updates/s

    def __post_init__(self):
        for name in ("h2d_bw", "d2h_bw", "disk_load_bw", "disk_write_bw",
                     "cpu_memory", "cpu_flops", "gpu_peak_flops", "gpu_memory",
                     "hbm_bw", "optimizer_throughput"):
            if getattr(self, name) <= 0:
                raise InputError(f"hardware field {name} must be positive")
        if self.gpus_per_node < 1:
            raise InputError("gpus_per_node must be >= 1")

    @classmethod
    def from_json_dict(cls, data: dict) -> "HardwareSpec":
        """Accepts the config-file key convention (B_H2D .. P_opt) with the
        customary units: bandwidths in GB/s, memory in GB, CPU frequency in
        GHz, GPU compute in TFLOPS, optimizer throughput in Gparams/s."""
        try:
            return cls(
                h2d_bw=data["B_H2D"] * GB,
                d2h_bw=data["B_D2H"] * GB,
                disk_load_bw=data.get("B_DL", 10.0) * GB,
                disk_write_bw=data.get("B_DW", 10.0) * GB,
                cpu_memory=data["M_CPU"] * GB,
                cpu_flops=data["F_CPU"] * 1e9,
                gpu_peak_flops=data["P_GPU"] * 1e12,
                gpu_memory=data["M_GPU"] * GB,
                gpus_per_node=int(data["N"]),
                hbm_bw=data.get("B_HBM", 2000.0) * GB,
                optimizer_throughput=data.get("P_opt", 1.0) * GB,
            )
        except KeyError as exc:
            raise ConfigError(f"hardware spec missing field {exc}") from exc


@dataclass(frozen=True)
class ComputeEntry:
    module: str
    fwd_flops_per_s: float
    bwd_flops_per_s: float | None = None
    shape: str | None = None
    bwd_flops_ratio: float = 2.0     # backward work relative to forward
    intensity: float | None = None   # FLOPs/byte, enables roofline capping

    def __post_init__(self):
        if self.fwd_flops_per_s <= 0:
            raise InputError(f"throughput for {self.module} must be positive")
        if self.bwd_flops_per_s is not None and self.bwd_flops_per_s <= 0:
            raise InputError(f"backward throughput for {self.module} must be positive")


@dataclass(frozen=True)
class ComputeProfile:
    entries: tuple[ComputeEntry, ...]

    def lookup(self, module: str, shape: str | None = None) -> ComputeEntry:
        """Exact (module, shape) match first, then the module's shape-free
        entry, then a '*' wildcard."""
        best = None
        for entry in self.entries:
            if entry.module == module:
                if shape is not None and entry.shape == shape:
                    return entry
                if entry.shape is None and best is None:
                    best = entry
        if best is not None:
            return best
        for entry in self.entries:
            if entry.module == "*" and entry.shape is None:
                return entry
        raise ProfileLookupError(f"no compute profile entry for module={module!r} shape={shape!r}")

    def throughput(self, module: str, backward: bool = False,
                   shape: str | None = None) -> float:
        entry = self.lookup(module, shape)
        if backward and entry.bwd_flops_per_s is not None:
            return entry.bwd_flops_per_s
        return entry.fwd_flops_per_s


@dataclass(frozen=True)
class CommBucket:
    message_bytes: float
    bandwidth: float   # bytes/s
    beta: float = 1.0

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise InputError("bandwidth must be positive")
        if not (0.0 < self.beta <= 1.0):
            raise InputError(f"decay beta must be in (0, 1], got {self.beta}")


@dataclass(frozen=True)
class CommEntry:
    kind: str
    group_size: int
    buckets: tuple[CommBucket, ...]

    def __post_init__(self):
        if self.kind not in COLLECTIVE_KINDS:
            raise InputError(f"unknown collective kind {self.kind!r}")
        if not self.buckets:
            raise InputError(f"collective {self.kind} needs at least one bucket")


@dataclass(frozen=True)
class CommProfile:
    entries: tuple[CommEntry, ...]

    def effective_bandwidth(self, kind: str, group_size: int,
                            message_bytes: float) -> tuple[float, float]:
        """Return (bandwidth, beta) for a collective; group size picks the
        nearest profiled group (log distance), message size interpolates."""
        candidates = [e for e in self.entries if e.kind == kind]
        if not candidates:
            raise ProfileLookupError(f"no bandwidth entry for collective kind={kind!r}")
        entry = min(
            candidates,
            key=lambda e: (abs(math.log(e.group_size) - math.log(max(group_size, 1))),
                           e.group_size),
        )
        buckets = sorted(entry.buckets, key=lambda b: b.message_bytes)
        if message_bytes <= buckets[0].message_bytes:
            b = buckets[0]
            return b.bandwidth, b.beta
        if message_bytes >= buckets[-1].message_bytes:
            b = buckets[-1]
            return b.bandwidth, b.beta
        for lo, hi in zip(buckets, buckets[1:]):
            if lo.message_bytes <= message_bytes <= hi.message_bytes:
                span = math.log(hi.message_bytes) - math.log(lo.message_bytes)
                frac = (math.log(message_bytes) - math.log(lo.message_bytes)) / span
                bw = lo.bandwidth + frac * (hi.bandwidth - lo.bandwidth)
                beta = lo.beta + frac * (hi.beta - lo.beta)
                return bw, beta
        raise AssertionError("unreachable: bucket scan exhausted")


@dataclass(frozen=True)
class ProfileDB:
    """Immutable bundle of a hardware spec plus profiled performance."""
    hardware: HardwareSpec
    compute: ComputeProfile
    comm: CommProfile
    compute_scaling: dict[str, float] = field(default_factory=dict)
    comm_scaling: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_json_dict(cls, data: dict, hardware: HardwareSpec) -> "ProfileDB":
        ops = []
        for raw in data.get("operators", []):
            ops.append(ComputeEntry(
                module=raw["module"],
                fwd_flops_per_s=raw["fwd_TFLOPS"] * 1e12,
                bwd_flops_per_s=(raw["bwd_TFLOPS"] * 1e12
                                 if raw.get("bwd_TFLOPS") is not None else None),
                shape=raw.get("shape"),
                bwd_flops_ratio=raw.get("bwd_flops_ratio", 2.0),
                intensity=raw.get("intensity"),
            ))
        colls = []
        for raw in data.get("collectives", []):
            buckets = raw.get("buckets")
            if buckets is None:
                buckets = [{"size_bytes": 1, "bandwidth_GBps": raw["bandwidth_GBps"],
                            "beta": raw.get("beta", 1.0)}]
            colls.append(CommEntry(
                kind=raw["kind"],
                group_size=int(raw.get("group_size", 2)),
                buckets=tuple(
                    CommBucket(b["size_bytes"], b["bandwidth_GBps"] * GB,
                               b.get("beta", 1.0))
                    for b in buckets
                ),
            ))
        return cls(hardware=hardware, compute=ComputeProfile(tuple(ops)),
                   comm=CommProfile(tuple(colls)),
                   compute_scaling=dict(data.get("compute_scaling", {})),
                   comm_scaling=dict(data.get("comm_scaling", {})))

    @classmethod
    def from_files(cls, profile_path: str, hardware_path: str) -> "ProfileDB":
        with open(hardware_path) as fh:
            hw = HardwareSpec.from_json_dict(json.load(fh))
        with open(profile_path) as fh:
            return cls.from_json_dict(json.load(fh), hw)


def op_time(work_flops: float, throughput: float) -> float:
    """Compute latency: work over profiled throughput."""
    if throughput <= 0:
        raise InputError(f"throughput must be positive, got {throughput}")
    return work_flops / throughput


def comm_time(message_bytes: float, bandwidth: float, beta: float = 1.0) -> float:
    """Communication latency: bytes over decayed algorithm bandwidth."""
    if bandwidth <= 0:
        raise InputError(f"bandwidth must be positive, got {bandwidth}")
    if not (0.0 < beta <= 1.0):
        raise InputError(f"decay beta must be in (0, 1], got {beta}")
    return message_bytes / (beta * bandwidth)


def roofline_bound(work_flops: float, traffic_bytes: float,
                   hw: HardwareSpec) -> float:
    """Attainable throughput: min(arithmetic intensity x HBM bandwidth, peak).

    traffic_bytes == 0 degenerates to the compute-bound limit (peak), by
    definition rather than by error."""
    if traffic_bytes == 0:
        return hw.gpu_peak_flops
    return min(work_flops / traffic_bytes * hw.hbm_bw, hw.gpu_peak_flops)


def roofline_bound_modified(intensity: float, slope: float, intercept: float,
                            hw: HardwareSpec) -> float:
    """Empirical roofline: a fitted linear memory-bound arm replaces the
    ideal one; the compute arm still clamps at specification peak."""
    return min(slope * intensity + intercept, hw.gpu_peak_flops)


def roofline_outliers(points: list[tuple[float, float]], bound_fn,
                      ratio: float = 0.5) -> list[tuple[float, float]]:
    """Profiled (intensity, achieved) points falling below ratio x bound."""
    return [(x, y) for x, y in points if y < ratio * bound_fn(x)]


def comm_volume(
    kind: str,
    plan: ParallelPlan,
    arch: ModelArchitecture | None = None,
    dtype_bytes: float = 2.0,
    grad_dtype_bytes: float | None = None,
    params_per_layer: float | None = None,
) -> float:
    """Bytes moved per collective invocation under the plan.

    'tp' covers one all-gather or reduce-scatter of a full activation;
    'pp' and 'cp' are one point-to-point hop of the context-sharded
    activation; 'ep' is one dispatch (or combine) all-to-all; 'dp' is the
    whole per-step gradient exchange of one device's parameters."""
    b = plan.micro_batch
    if kind == "tp":
        if plan.tp == 1:
            return 0.0
        if arch is None:
            raise InputError("tp volume requires the architecture")
        return b * arch.seq_len * arch.hidden_size * dtype_bytes
    if kind in ("pp", "cp"):
        if (plan.pp if kind == "pp" else plan.cp) == 1:
            return 0.0
        if arch is None:
            raise InputError(f"{kind} volume requires the architecture")
        return b * (arch.seq_len / plan.cp) * arch.hidden_size * dtype_bytes
    if kind == "ep":
        if plan.ep == 1:
            return 0.0
        if arch is None:
            raise InputError("ep volume requires the architecture")
        if not arch.is_moe:
            raise InputError("ep volume requires an MoE architecture")
        return (b * (arch.seq_len / plan.cp) * arch.top_k
                * arch.hidden_size * dtype_bytes)
    if kind == "dp":
        if plan.dp == 1:
            return 0.0
        if params_per_layer is None:
            if arch is None:
                raise InputError("dp volume requires params_per_layer or the architecture")
            params_per_layer = decompose(arch, plan).layer_params
        grad_bytes = grad_dtype_bytes if grad_dtype_bytes is not None else dtype_bytes
        return grad_bytes * plan.chunks * plan.layers_per_stage * params_per_layer
    raise InputError(f"unknown communication kind {kind!r}")
