"""Base cost model: layer times, interleaved-1F1B pipeline phases, optimizer
time, memory, step time and achieved TFLOPS, plus the plan evaluator that
overlays the optimization features.

Latency is tracked per exposure channel (compute, tp, cp, ep) so step-level
breakdowns stay exactly consistent with the phase totals: the pipeline phase
formulas are linear in the per-layer times, so evaluating them channel-wise
and summing reproduces the scalar result.
"""

from __future__ import annotations

import warnings as _warnings
from dataclasses import dataclass, field, replace

from . import optim as _optim
from .arch import (
    ATTENTION_CORE_MODULES,
    Decomposition,
    ModelArchitecture,
    decompose,
    model_flops_total,
)
from .errors import InputError
from .optim import OptimizationSet
from .plan import ParallelPlan
from .profile import ProfileDB, comm_time, comm_volume, op_time, roofline_bound


@dataclass(frozen=True)
class Dtypes:
    param_bytes: float = 2.0
    grad_bytes: float = 2.0
    opt_bytes: float = 4.0
    act_bytes: float = 2.0

    @classmethod
    def from_json_dict(cls, data: dict) -> "Dtypes":
        return cls(
            param_bytes=data.get("D_para", 2.0),
            grad_bytes=data.get("D_grad", 2.0),
            opt_bytes=data.get("D_opt", 4.0),
            act_bytes=data.get("D_act", 2.0),
        )


@dataclass(frozen=True)
class TimeParts:
    """One latency split into exposure channels; `total` is their sum."""
    cal: float = 0.0
    tp: float = 0.0
    cp: float = 0.0
    ep: float = 0.0

    @property
    def total(self) -> float:
        return self.cal + self.tp + self.cp + self.ep

    def __add__(self, other: "TimeParts") -> "TimeParts":
        return TimeParts(self.cal + other.cal, self.tp + other.tp,
                         self.cp + other.cp, self.ep + other.ep)

    def scaled(self, k: float) -> "TimeParts":
        return TimeParts(self.cal * k, self.tp * k, self.cp * k, self.ep * k)


@dataclass(frozen=True)
class PipelinePhases:
    warmup: float
    steady: float
    cooldown: float
    total: float
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class CostReport:
    t_fwd: float
    t_bwd: float
    t_warmup: float
    t_steady: float
    t_cooldown: float
    t_pipeline: float
    t_dp: float
    t_update: float
    t_opt: float
    t_step: float
    tflops: float
    t_cal: float
    t_tp: float
    t_pp: float
    t_ep: float
    t_cp: float
    warnings: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "T_step": self.t_step,
            "TFLOPS": self.tflops,
            "T_cal": self.t_cal,
            "T_TP": self.t_tp,
            "T_PP": self.t_pp,
            "T_DP": self.t_dp,
            "T_EP": self.t_ep,
            "T_CP": self.t_cp,
            "T_update": self.t_update,
            "T_FWD": self.t_fwd,
            "T_BWD": self.t_bwd,
            "T_Warmup": self.t_warmup,
            "T_Steady": self.t_steady,
            "T_Cooldown": self.t_cooldown,
            "T_Pipeline": self.t_pipeline,
            "T_Opt": self.t_opt,
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True)
class MemoryReport:
    m_static: float
    m_activation: float
    m_peak: float
    param_bytes: float
    grad_bytes: float
    optimizer_bytes: float
    dtypes: Dtypes = field(default_factory=Dtypes)
    warnings: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "M_sta": self.m_static,
            "M_act": self.m_activation,
            "M_peak": self.m_peak,
            "M_param": self.param_bytes,
            "M_grad": self.grad_bytes,
            "M_optimizer": self.optimizer_bytes,
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True)
class PlanEvaluation:
    cost: CostReport
    memory: MemoryReport


# ---------------------------------------------------------------------------
# Layer level

# Tensor-parallel collectives per layer direction under the sequence-parallel
# layout: an all-gather entering each matmul block, a reduce-scatter leaving it.
_TP_PAIRS = (
    ("all-gather", "qkv"),
    ("reduce-scatter", "o-projection"),
    ("all-gather", "mlp-linear-1"),
    ("reduce-scatter", "mlp-linear-2"),
)


def _module_time(shape, db: ProfileDB, opts: OptimizationSet,
                 backward: bool) -> float:
    if shape.flops_fwd == 0:
        return 0.0
    entry = db.compute.lookup(shape.name)
    throughput = db.compute.throughput(shape.name, backward=backward)
    work = shape.flops_fwd * (entry.bwd_flops_ratio if backward else 1.0)
    scale = (db.compute_scaling.get(shape.name, db.compute_scaling.get("*", 1.0))
             * opts.compute_lambda(shape.name))
    cap = None
    if opts.roofline_cap:
        cap = (roofline_bound(entry.intensity, 1.0, db.hardware)
               if entry.intensity is not None else db.hardware.gpu_peak_flops)
    return op_time(work, _optim.apply_scaling(throughput, scale, cap))


def _collective_time(db: ProfileDB, opts: OptimizationSet, kind: str,
                     group: int, volume: float) -> float:
    if volume == 0:
        return 0.0
    bw, beta = db.comm.effective_bandwidth(kind, group, volume)
    scale = (db.comm_scaling.get(kind, db.comm_scaling.get("*", 1.0))
             * opts.comm_lambda(kind))
    return comm_time(volume, _optim.apply_scaling(bw, scale), beta)


@dataclass(frozen=True)
class LayerCost:
    fwd: TimeParts
    bwd: TimeParts
    t_qkv_fwd: float
    t_attention_fwd: float
    act_bytes: float
    attention_act_bytes: float
    input_act_bytes: float
    params: float


def _assemble_direction(comp: dict[int, float], names: list[str],
                        tp_times: dict[str, float], cp_total: float,
                        ep_total: float, plan: ParallelPlan,
                        opts: OptimizationSet) -> TimeParts:
    cal = sum(comp.values())
    consumed: set[int] = set()
    tp_exposed = cp_exposed = ep_exposed = 0.0

    if plan.tp > 1 and tp_times:
        if opts.tp_overlap is not None:
            ov = opts.tp_overlap
            for kind, partner in _TP_PAIRS:
                idx = next((i for i in comp if names[i] == partner and i not in consumed),
                           None)
                t_comp = comp.get(idx, 0.0) if idx is not None else 0.0
                result = _optim.tp_overlap(t_comp, tp_times[kind], ov.splits,
                                           ov.alpha, ov.beta)
                tp_exposed += result - t_comp
                if idx is not None:
                    consumed.add(idx)
        else:
            tp_exposed = sum(tp_times[kind] for kind, _ in _TP_PAIRS)

    if plan.cp > 1 and cp_total > 0:
        if opts.cp_overlap is not None:
            ov = opts.cp_overlap
            att_idx = [i for i in comp if names[i] in ATTENTION_CORE_MODULES]
            t_att = sum(comp[i] for i in att_idx)
            result = _optim.cp_overlap(t_att, cp_total, plan.cp, ov.alpha, ov.beta)
            cp_exposed = result - t_att
            consumed.update(att_idx)
        else:
            cp_exposed = cp_total

    if plan.ep > 1 and ep_total > 0:
        if opts.ep_overlap is not None:
            ov = opts.ep_overlap
            remaining = sum(t for i, t in comp.items() if i not in consumed)
            result = _optim.ep_overlap(remaining, ep_total, ov.alpha, ov.beta)
            ep_exposed = result - remaining
        else:
            ep_exposed = ep_total

    return TimeParts(cal=cal, tp=tp_exposed, cp=cp_exposed, ep=ep_exposed)


def layer_cost(arch: ModelArchitecture, plan: ParallelPlan, db: ProfileDB,
               opts: OptimizationSet | None = None, dtypes: Dtypes = Dtypes(),
               decomp: Decomposition | None = None) -> LayerCost:
    """Per-layer forward/backward latency with exposure channels, plus the
    per-layer quantities downstream strategies need."""
    opts = opts or OptimizationSet()
    if decomp is None:
        decomp = decompose(arch, plan, act_dtype_bytes=dtypes.act_bytes)
    names = [m.name for m in decomp.layer]

    comp_fwd = {i: _module_time(m, db, opts, False) for i, m in enumerate(decomp.layer)}
    comp_bwd = {i: _module_time(m, db, opts, True) for i, m in enumerate(decomp.layer)}

    tp_times: dict[str, float] = {}
    if plan.tp > 1:
        vol = comm_volume("tp", plan, arch, dtypes.act_bytes)
        tp_times = {kind: _collective_time(db, opts, kind, plan.tp, vol)
                    for kind in ("all-gather", "reduce-scatter")}
    cp_total = 0.0
    if plan.cp > 1:
        vol = comm_volume("cp", plan, arch, dtypes.act_bytes)
        cp_total = (plan.cp - 1) * _collective_time(db, opts, "p2p", 2, vol)
    ep_total = 0.0
    if plan.ep > 1:
        vol = comm_volume("ep", plan, arch, dtypes.act_bytes)
        # dispatch + combine
        ep_total = 2 * _collective_time(db, opts, "all-to-all", plan.ep, vol)

    fwd = _assemble_direction(comp_fwd, names, tp_times, cp_total, ep_total, plan, opts)
    bwd = _assemble_direction(comp_bwd, names, tp_times, cp_total, ep_total, plan, opts)

    att_act = sum(m.act_bytes for m in decomp.layer
                  if m.name in ATTENTION_CORE_MODULES)
    input_act = decomp.layer[0].act_bytes  # first norm retains the layer input
    return LayerCost(
        fwd=fwd,
        bwd=bwd,
        t_qkv_fwd=sum(t for i, t in comp_fwd.items() if names[i] == "qkv"),
        t_attention_fwd=sum(t for i, t in comp_fwd.items()
                            if names[i] in ATTENTION_CORE_MODULES),
        act_bytes=decomp.layer_act_bytes,
        attention_act_bytes=att_act,
        input_act_bytes=input_act,
        params=decomp.layer_params,
    )


def layer_fwd_time(arch: ModelArchitecture, plan: ParallelPlan, db: ProfileDB,
                   opts: OptimizationSet | None = None,
                   dtypes: Dtypes = Dtypes()) -> float:
    """Scalar forward latency of one layer: compute plus exposed comm."""
    return layer_cost(arch, plan, db, opts, dtypes).fwd.total


def layer_bwd_time(arch: ModelArchitecture, plan: ParallelPlan, db: ProfileDB,
                   opts: OptimizationSet | None = None,
                   dtypes: Dtypes = Dtypes()) -> float:
    """Scalar backward latency of one layer."""
    return layer_cost(arch, plan, db, opts, dtypes).bwd.total


# ---------------------------------------------------------------------------
# Pipeline level


def pipeline_time(t_fwd: float, t_bwd: float, plan: ParallelPlan,
                  t_pp: float = 0.0, t_embed: float = 0.0,
                  t_head: float = 0.0, t_embed_bwd: float | None = None,
                  t_head_bwd: float | None = None,
                  t_pp_steady: float | None = None) -> PipelinePhases:
    """Interleaved 1F1B phase times from per-layer forward/backward latency.

    All times are per layer except the embedding/head terms and the pipeline
    hop t_pp; t_pp_steady substitutes an overlapped hop cost in the steady
    phase only."""
    p, v, l, m_b = plan.pp, plan.chunks, plan.layers_per_stage, plan.micro_batches
    e_f = t_embed
    e_b = t_embed if t_embed_bwd is None else t_embed_bwd
    h_f = t_head
    h_b = t_head if t_head_bwd is None else t_head_bwd
    pp_s = t_pp if t_pp_steady is None else t_pp_steady

    warmup = p * (e_f + l * t_fwd + t_pp) + (v * p - p - 1) * (l * t_fwd + t_pp)
    steady = (p * (l * t_fwd + h_f + h_b + l * t_bwd)
              + (m_b - p) * (v * l * t_fwd + h_f + h_b + l * t_bwd)
              + (4 * m_b * v - 2 * m_b + 2 * p - 2) * pp_s)
    cooldown = p * (e_b + l * t_bwd + t_pp) + (v * p - p - 1) * (l * t_bwd + t_pp)

    notes: tuple[str, ...] = ()
    if m_b < p:
        notes = (f"degenerate pipeline: micro_batches={m_b} < pp={p}; "
                 "phase formulas evaluated as defined",)
    return PipelinePhases(warmup, steady, cooldown, warmup + steady + cooldown, notes)


# ---------------------------------------------------------------------------
# Optimizer level


def optimizer_time(plan: ParallelPlan, params_per_layer: float, db: ProfileDB,
                   dtypes: Dtypes = Dtypes(),
                   opts: OptimizationSet | None = None) -> tuple[float, float, float]:
    """(t_dp, t_update, t_opt): gradient exchange plus parameter update.

    Base form only; strategy and overlap adjustments happen in evaluate_plan."""
    opts = opts or OptimizationSet()
    params_total = plan.chunks * plan.layers_per_stage * params_per_layer
    vol = comm_volume("dp", plan, params_per_layer=params_per_layer,
                      grad_dtype_bytes=dtypes.grad_bytes)
    t_dp = _collective_time(db, opts, "all-reduce", plan.dp, vol)
    p_opt = db.hardware.optimizer_throughput * opts.compute_lambda("optimizer")
    t_update = params_total / p_opt if params_total else 0.0
    return t_dp, t_update, t_dp + t_update


# ---------------------------------------------------------------------------
# Step level


def step_time(t_pipeline: float, t_opt: float) -> float:
    total = t_pipeline + t_opt
    if total <= 0:
        raise InputError(f"step time must be positive, got {total}")
    return total


def tflops(model_fwd_flops: float, plan: ParallelPlan, t_step: float,
           mode: str = "fwd-bwd-per-device") -> float:
    """Achieved teraFLOPS from forward model FLOPs per global batch.

    The default convention counts forward+backward as 3x the forward work and
    divides by the world size (per-device number). 'raw' divides the plain
    forward count by step time only."""
    if t_step <= 0:
        raise InputError("t_step must be positive")
    if mode == "raw":
        return model_fwd_flops / 1e12 / t_step
    if mode == "fwd-bwd-per-device":
        return 3.0 * model_fwd_flops / 1e12 / (plan.world_size * t_step)
    raise InputError(f"unknown tflops mode {mode!r}")


# ---------------------------------------------------------------------------
# Memory


def static_memory(plan: ParallelPlan, params_per_layer: float,
                  dtypes: Dtypes = Dtypes()) -> float:
    """Weights + gradients + optimizer states held per device."""
    held = plan.chunks * plan.layers_per_stage * params_per_layer
    return (dtypes.param_bytes + dtypes.grad_bytes + 4 * dtypes.opt_bytes) * held


def activation_memory(plan: ParallelPlan, act_bytes_per_layer: float,
                      r_pp: int = 0) -> float:
    """Peak retained activations at pipeline stage r_pp: warmup stacks
    (chunks*pp + pp - 2*r_pp - 1) live micro-batch activations."""
    if not (0 <= r_pp < plan.pp):
        raise InputError(f"r_pp must be in [0, pp), got {r_pp}")
    factor = plan.chunks * plan.pp + plan.pp - 2 * r_pp - 1
    if factor < 0:
        _warnings.warn("activation retention factor negative; clamped to 0",
                       stacklevel=2)
        factor = 0
    return factor * act_bytes_per_layer


def peak_memory(m_static: float, m_activation: float) -> float:
    return m_static + m_activation


# ---------------------------------------------------------------------------
# Full evaluation


def evaluate_plan(arch: ModelArchitecture, plan: ParallelPlan, db: ProfileDB,
                  opts: OptimizationSet | None = None,
                  dtypes: Dtypes = Dtypes(), r_pp: int = 0,
                  tflops_mode: str = "fwd-bwd-per-device") -> PlanEvaluation:
    """Evaluate one plan end to end: layer times with feature overlays,
    pipeline phases, optimizer, memory, step time and TFLOPS."""
    opts = opts or OptimizationSet()
    plan.validate()
    notes: list[str] = []

    decomp = decompose(arch, plan, act_dtype_bytes=dtypes.act_bytes)
    lc = layer_cost(arch, plan, db, opts, dtypes, decomp=decomp)

    t_embed = _module_time(decomp.embedding, db, opts, False)
    t_embed_bwd = _module_time(decomp.embedding, db, opts, True)
    t_head = _module_time(decomp.head, db, opts, False)
    t_head_bwd = _module_time(decomp.head, db, opts, True)

    # Activation strategy: scalar result from the strategy op, then the delta
    # mirrored onto the channel split so totals stay consistent.
    m_act, fwd_total, bwd_total = _optim.apply_activation_strategy(
        opts.activation_strategy, plan,
        act_bytes_per_layer=lc.act_bytes,
        attention_act_bytes=lc.attention_act_bytes,
        input_act_bytes=lc.input_act_bytes,
        t_fwd=lc.fwd.total, t_bwd=lc.bwd.total,
        t_qkv=lc.t_qkv_fwd, t_attention=lc.t_attention_fwd,
        hw=db.hardware, coeffs=opts.offload_coeffs, r_pp=r_pp,
    )
    fwd_parts, bwd_parts = lc.fwd, lc.bwd
    if opts.activation_strategy == "full-recompute":
        bwd_parts = bwd_parts + fwd_parts
    else:
        bwd_parts = replace(bwd_parts, cal=bwd_parts.cal + (bwd_total - lc.bwd.total))
    fwd_parts = replace(fwd_parts, cal=fwd_parts.cal + (fwd_total - lc.fwd.total))

    # Pipeline hop and its steady-phase overlap.
    t_pp_hop = 0.0
    if plan.pp > 1:
        vol = comm_volume("pp", plan, arch, dtypes.act_bytes)
        t_pp_hop = _collective_time(db, opts, "p2p", 2, vol)
    t_pp_steady = t_pp_hop
    if opts.pp_overlap is not None and t_pp_hop > 0:
        ov = opts.pp_overlap
        # Steady alternates directions; hide behind the mean of one stage's
        # forward and backward layer block.
        hide = plan.layers_per_stage * (fwd_parts.total + bwd_parts.total) / 2.0
        t_pp_steady = _optim.pp_overlap(t_pp_hop, hide, ov.alpha, ov.beta)

    phases = _pipeline_channels(fwd_parts, bwd_parts, plan, t_pp_hop,
                                t_embed, t_head, t_embed_bwd, t_head_bwd,
                                t_pp_steady)
    notes.extend(phases["warnings"])

    # Optimizer: base, then strategy, then overlap.
    t_dp, t_update, _ = optimizer_time(plan, lc.params, db, dtypes, opts)
    params_held = plan.chunks * plan.layers_per_stage * lc.params
    opt_bytes = 4 * dtypes.opt_bytes * params_held
    opt_bytes, t_update = _optim.apply_optimizer_strategy(
        opts.optimizer_strategy, plan, opt_bytes, t_update,
        params_total=lc.params,
        grad_bytes_total=dtypes.grad_bytes * params_held,
        param_bytes_total=dtypes.param_bytes * params_held,
        hw=db.hardware,
    )
    if opts.dp_overlap is not None and plan.dp > 1:
        per_chunk_params = plan.layers_per_stage * lc.params
        rs = [_collective_time(db, opts, "reduce-scatter", plan.dp,
                               dtypes.grad_bytes * per_chunk_params)] * plan.chunks
        ag = [_collective_time(db, opts, "all-gather", plan.dp,
                               dtypes.param_bytes * per_chunk_params)] * plan.chunks
        t_dp = _optim.dp_overlap(rs, ag, fwd_parts.total, bwd_parts.total,
                                 plan, opts.dp_overlap)
    t_opt = t_dp + t_update

    t_step = step_time(phases["total"], t_opt)
    flops = model_flops_total(arch, plan)
    achieved = tflops(flops, plan, t_step, mode=tflops_mode)

    m_static = (dtypes.param_bytes + dtypes.grad_bytes) * params_held + opt_bytes
    cost = CostReport(
        t_fwd=fwd_parts.total, t_bwd=bwd_parts.total,
        t_warmup=phases["warmup"], t_steady=phases["steady"],
        t_cooldown=phases["cooldown"], t_pipeline=phases["total"],
        t_dp=t_dp, t_update=t_update, t_opt=t_opt, t_step=t_step,
        tflops=achieved,
        t_cal=phases["cal"], t_tp=phases["tp"], t_pp=phases["pp"],
        t_ep=phases["ep"], t_cp=phases["cp"],
        warnings=tuple(notes),
    )
    memory = MemoryReport(
        m_static=m_static, m_activation=m_act,
        m_peak=peak_memory(m_static, m_act),
        param_bytes=dtypes.param_bytes * params_held,
        grad_bytes=dtypes.grad_bytes * params_held,
        optimizer_bytes=opt_bytes, dtypes=dtypes,
    )
    return PlanEvaluation(cost=cost, memory=memory)


def _pipeline_channels(fwd: TimeParts, bwd: TimeParts, plan: ParallelPlan,
                       t_pp: float, t_embed: float, t_head: float,
                       t_embed_bwd: float, t_head_bwd: float,
                       t_pp_steady: float) -> dict:
    """Evaluate the phase formulas channel-wise. Each phase is linear in the
    per-layer times, so every exposure channel sums independently; the scalar
    phase values come from pipeline_time itself."""
    p, v, l, m_b = plan.pp, plan.chunks, plan.layers_per_stage, plan.micro_batches

    coef_f = (p + (v * p - p - 1)) * l          # warmup forwards
    coef_f += (p + (m_b - p) * v) * l           # steady forwards
    coef_b = (p + (m_b - p)) * l                # steady backwards
    coef_b += (p + (v * p - p - 1)) * l         # cooldown backwards
    pp_edges = (v * p - 1) * 2                  # warmup + cooldown hops
    pp_steady_edges = 4 * m_b * v - 2 * m_b + 2 * p - 2
    cal_extra = p * (t_embed + t_embed_bwd) + m_b * (t_head + t_head_bwd)

    parts = fwd.scaled(coef_f) + bwd.scaled(coef_b)
    scalar = pipeline_time(fwd.total, bwd.total, plan, t_pp, t_embed, t_head,
                           t_embed_bwd, t_head_bwd, t_pp_steady)
    return {
        "warmup": scalar.warmup, "steady": scalar.steady,
        "cooldown": scalar.cooldown, "total": scalar.total,
        "cal": parts.cal + cal_extra, "tp": parts.tp, "cp": parts.cp,
        "ep": parts.ep,
        "pp": pp_edges * t_pp + pp_steady_edges * t_pp_steady,
        "warnings": list(scalar.warnings),
    }
