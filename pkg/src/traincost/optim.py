"""Optimization-feature overlays: scaling, overlap equations, and the
optimizer/activation memory strategies.

Every overlap follows the same pattern: two latencies that the runtime can
execute concurrently collapse into a residual term plus a max of the two,
inflated by contention coefficients alpha (communication side) and beta
(computation side).  Coefficients default to 1.0 and must be >= 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError, InputError
from .plan import ParallelPlan
from .profile import HardwareSpec

OPTIMIZER_STRATEGIES = ("none", "distributed", "cpu")
ACTIVATION_STRATEGIES = ("none", "selective-recompute", "full-recompute", "offload")


@dataclass(frozen=True)
class OverlapCoeffs:
    alpha: float = 1.0   # communication-time inflation under contention
    beta: float = 1.0    # computation-time inflation under contention
    splits: int = 1      # pipelining split count (tensor-parallel overlap only)

    def __post_init__(self):
        if self.alpha < 1.0 or self.beta < 1.0:
            raise InputError("overlap coefficients must be >= 1")
        if self.splits < 1:
            raise InputError("split count must be >= 1")


@dataclass(frozen=True)
class DpOverlapCoeffs:
    alpha_rs: float = 1.0
    beta_bwd: float = 1.0
    alpha_ag: float = 1.0
    beta_fwd: float = 1.0
    mode: str = "exposed-only"   # or "verbatim"

    def __post_init__(self):
        if min(self.alpha_rs, self.beta_bwd, self.alpha_ag, self.beta_fwd) < 1.0:
            raise InputError("overlap coefficients must be >= 1")
        if self.mode not in ("exposed-only", "verbatim"):
            raise InputError(f"unknown dp overlap mode {self.mode!r}")


@dataclass(frozen=True)
class OffloadCoeffs:
    alpha_offload: float = 1.0   # device-to-host transfer inflation
    beta_offload: float = 1.0    # forward compute inflation
    alpha_fetch: float = 1.0     # host-to-device transfer inflation
    beta_fetch: float = 1.0      # backward compute inflation

    def __post_init__(self):
        if min(self.alpha_offload, self.beta_offload,
               self.alpha_fetch, self.beta_fetch) < 1.0:
            raise InputError("offload coefficients must be >= 1")


@dataclass(frozen=True)
class OptimizationSet:
    """Which features are active and with what coefficients.

    Scaling maps are keyed by module name (compute) or collective kind
    (communication), with '*' as the fallback key."""
    compute_scaling: dict[str, float] = field(default_factory=dict)
    comm_scaling: dict[str, float] = field(default_factory=dict)
    tp_overlap: OverlapCoeffs | None = None
    cp_overlap: OverlapCoeffs | None = None
    ep_overlap: OverlapCoeffs | None = None
    pp_overlap: OverlapCoeffs | None = None
    dp_overlap: DpOverlapCoeffs | None = None
    optimizer_strategy: str = "none"
    activation_strategy: str = "none"
    offload_coeffs: OffloadCoeffs = field(default_factory=OffloadCoeffs)
    roofline_cap: bool = True

    def __post_init__(self):
        if self.optimizer_strategy not in OPTIMIZER_STRATEGIES:
            raise InputError(f"unknown optimizer strategy {self.optimizer_strategy!r}")
        if self.activation_strategy not in ACTIVATION_STRATEGIES:
            raise InputError(f"unknown activation strategy {self.activation_strategy!r}")
        for value in (*self.compute_scaling.values(), *self.comm_scaling.values()):
            if value <= 0:
                raise InputError("scaling factors must be positive")

    def compute_lambda(self, module: str) -> float:
        return self.compute_scaling.get(module, self.compute_scaling.get("*", 1.0))

    def comm_lambda(self, kind: str) -> float:
        return self.comm_scaling.get(kind, self.comm_scaling.get("*", 1.0))

    def feature_names(self) -> list[str]:
        """Active features, for report rendering."""
        names = []
        if self.compute_scaling:
            names.append("compute-scaling")
        if self.comm_scaling:
            names.append("comm-scaling")
        for attr in ("tp_overlap", "cp_overlap", "ep_overlap", "pp_overlap", "dp_overlap"):
            if getattr(self, attr) is not None:
                names.append(attr.replace("_", "-"))
        if self.optimizer_strategy != "none":
            names.append(f"{self.optimizer_strategy}-optimizer")
        if self.activation_strategy != "none":
            names.append(self.activation_strategy)
        return names

    @classmethod
    def from_json_dict(cls, data: dict) -> "OptimizationSet":
        kwargs: dict = {}
        kwargs["compute_scaling"] = dict(data.get("compute_scaling", {}))
        kwargs["comm_scaling"] = dict(data.get("comm_scaling", {}))
        for key in ("tp_overlap", "cp_overlap", "ep_overlap", "pp_overlap"):
            raw = data.get(key)
            if raw is not None:
                raw = raw if isinstance(raw, dict) else {}
                kwargs[key] = OverlapCoeffs(**raw)
        raw = data.get("dp_overlap")
        if raw is not None:
            kwargs["dp_overlap"] = DpOverlapCoeffs(**(raw if isinstance(raw, dict) else {}))
        kwargs["optimizer_strategy"] = data.get("optimizer_strategy", "none")
        kwargs["activation_strategy"] = data.get("activation_strategy", "none")
        if "offload_coeffs" in data:
            kwargs["offload_coeffs"] = OffloadCoeffs(**data["offload_coeffs"])
        if "roofline_cap" in data:
            kwargs["roofline_cap"] = bool(data["roofline_cap"])
        return cls(**kwargs)


def default_feature_combos() -> tuple[OptimizationSet, ...]:
    """The default tuning allowlist: every overlap enabled with unit
    coefficients, crossed with each optimizer and activation strategy (those
    are mutually exclusive, so the cross enumerates them). The first entry is
    the strategy-free combination."""
    overlaps = dict(
        tp_overlap=OverlapCoeffs(), cp_overlap=OverlapCoeffs(),
        ep_overlap=OverlapCoeffs(), pp_overlap=OverlapCoeffs(),
        dp_overlap=DpOverlapCoeffs(),
    )
    return tuple(
        OptimizationSet(optimizer_strategy=opt, activation_strategy=act,
                        **overlaps)
        for opt in OPTIMIZER_STRATEGIES
        for act in ACTIVATION_STRATEGIES
    )


def apply_scaling(value: float, scale: float, cap: float | None = None) -> float:
    """Scale a profiled throughput or bandwidth, optionally clamping at an
    attainability bound (roofline)."""
    if scale <= 0:
        raise InputError("scaling factor must be positive")
    scaled = value * scale
    if cap is not None:
        scaled = min(scaled, cap)
    return scaled


def tp_overlap(t_comp: float, t_tp: float, splits: int = 1,
               alpha: float = 1.0, beta: float = 1.0) -> float:
    """Exposed time of a matmul pipelined against its adjacent tensor-parallel
    collective in `splits` stages."""
    if splits < 1:
        raise InputError("splits must be >= 1")
    return min(t_comp, t_tp) / splits + max(alpha * t_comp, beta * t_tp)


def cp_overlap(t_attention: float, t_cp: float, cp: int = 1,
               alpha: float = 1.0, beta: float = 1.0) -> float:
    """Exposed time of ring attention hiding its peer-to-peer transfers."""
    if cp < 1:
        raise InputError("cp must be >= 1")
    return min(t_attention, t_cp) / cp + max(alpha * t_attention, beta * t_cp)


def ep_overlap(t_comp_sum: float, t_ep_sum: float,
               alpha: float = 1.0, beta: float = 1.0) -> float:
    """Exposed time when forward/backward compute mutually hides the expert
    all-to-all traffic."""
    return max(alpha * t_comp_sum, beta * t_ep_sum)


def pp_overlap(t_pp: float, t_layers_sum: float,
               alpha: float = 1.0, beta: float = 1.0) -> float:
    """Exposed steady-phase pipeline hop after hiding behind the next
    micro-batch's layer compute. alpha inflates the hiding compute, beta the
    hop itself."""
    return max(0.0, beta * t_pp - alpha * t_layers_sum)


def dp_overlap(
    chunk_rs: list[float],
    chunk_ag: list[float],
    t_fwd_layer: float,
    t_bwd_layer: float,
    plan: ParallelPlan,
    coeffs: DpOverlapCoeffs = DpOverlapCoeffs(),
) -> float:
    """Effective data-parallel communication time when chunk i+1's gradient
    reduce-scatter hides behind chunk i's backward and the parameter
    all-gather behind the forward.

    The first chunk's transfers are always exposed. In 'verbatim' mode, the
    remaining chunks contribute max(comm, hiding compute) as the source
    equation states; 'exposed-only' mode (default) contributes only the
    excess of comm over compute, since the compute is already counted in the
    pipeline phases."""
    v = plan.chunks
    if len(chunk_rs) != v or len(chunk_ag) != v:
        raise InputError(f"need {v} per-chunk times, got {len(chunk_rs)}/{len(chunk_ag)}")
    rest_rs = coeffs.alpha_rs * sum(chunk_rs[1:])
    rest_ag = coeffs.alpha_ag * sum(chunk_ag[1:])
    hide_bwd = coeffs.beta_bwd * plan.pp * plan.layers_per_stage * (v - 1) * t_bwd_layer
    hide_fwd = coeffs.beta_fwd * plan.pp * plan.layers_per_stage * (v - 1) * t_fwd_layer
    if coeffs.mode == "verbatim":
        tail = max(rest_rs, hide_bwd) + max(rest_ag, hide_fwd)
    else:
        tail = max(0.0, rest_rs - hide_bwd) + max(0.0, rest_ag - hide_fwd)
    return chunk_rs[0] + chunk_ag[0] + tail


def apply_optimizer_strategy(
    strategy: str,
    plan: ParallelPlan,
    optimizer_bytes: float,
    t_update: float,
    *,
    params_total: float = 0.0,
    grad_bytes_total: float = 0.0,
    param_bytes_total: float = 0.0,
    hw: HardwareSpec | None = None,
) -> tuple[float, float]:
    """Return (optimizer state bytes, parameter-update seconds) under the
    chosen strategy.

    'distributed' shards states and update work across the data-parallel
    group.  'cpu' keeps states in host memory (only the overflow beyond host
    capacity stays on device) and pays host-side update plus both transfer
    directions; params_total is the per-device parameter count,
    grad/param_bytes_total the corresponding transfer volumes."""
    if strategy == "none":
        return optimizer_bytes, t_update
    if strategy == "distributed":
        return optimizer_bytes / plan.dp, t_update / plan.dp
    if strategy == "cpu":
        if hw is None:
            raise ConfigError("cpu optimizer strategy requires a hardware spec")
        mem = max(0.0, optimizer_bytes - hw.cpu_memory)
        t = (params_total / hw.cpu_flops
             + grad_bytes_total / hw.h2d_bw
             + param_bytes_total / hw.d2h_bw)
        return mem, t
    raise InputError(f"unknown optimizer strategy {strategy!r}")


def apply_activation_strategy(
    strategy: str,
    plan: ParallelPlan,
    *,
    act_bytes_per_layer: float,
    attention_act_bytes: float,
    input_act_bytes: float,
    t_fwd: float,
    t_bwd: float,
    t_qkv: float = 0.0,
    t_attention: float = 0.0,
    hw: HardwareSpec | None = None,
    coeffs: OffloadCoeffs = OffloadCoeffs(),
    r_pp: int = 0,
) -> tuple[float, float, float]:
    """Return (activation bytes, forward seconds, backward seconds) for one
    layer under the chosen strategy.

    Recomputation variants keep the pipeline-depth retention factor;
    offloading retains a single layer's activations and turns each direction
    into a race between transfer and compute."""
    factor = max(0.0, plan.chunks * plan.pp + plan.pp - 2 * r_pp - 1)
    if strategy == "none":
        return factor * act_bytes_per_layer, t_fwd, t_bwd
    if strategy == "selective-recompute":
        mem = factor * (act_bytes_per_layer - attention_act_bytes)
        return mem, t_fwd, t_bwd + t_qkv + t_attention
    if strategy == "full-recompute":
        return factor * input_act_bytes, t_fwd, t_bwd + t_fwd
    if strategy == "offload":
        if hw is None:
            raise ConfigError("offload strategy requires a hardware spec")
        mem = act_bytes_per_layer
        new_fwd = max(coeffs.alpha_offload * mem / hw.d2h_bw,
                      coeffs.beta_offload * t_fwd)
        new_bwd = max(coeffs.alpha_fetch * mem / hw.h2d_bw,
                      coeffs.beta_fetch * t_bwd)
        return mem, new_fwd, new_bwd
    raise InputError(f"unknown activation strategy {strategy!r}")
