"""Strategy search: pruned depth-first enumeration of parallel plans and
optimization-feature combinations minimizing step time, an end-to-end
extension that also picks the checkpoint interval, and parameter sweeps.

Pruning is sound with respect to full-candidate filtering: every rule checked
on a partial assignment is implied by the complete rule set, so the pruned
enumeration returns exactly the feasible set an exhaustive scan would.
Ranking is a total order (step time, then the plan tuple) so results are
bit-stable across runs and worker counts.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from .arch import ModelArchitecture
from .basecost import Dtypes, PlanEvaluation, evaluate_plan
from .errors import InfeasibleError, InputError, ShapeError
from .fault import (
    CheckpointPolicy,
    FaultModel,
    e2e_objective,
    ettr_closed_form,
    optimal_ckpt_interval,
)
from .optim import OptimizationSet, default_feature_combos
from .plan import ParallelPlan
from .profile import ProfileDB

_POOL_THRESHOLD = 256  # candidates below this evaluate serially


def _powers_of_two(limit: int) -> tuple[int, ...]:
    values = []
    x = 1
    while x <= limit:
        values.append(x)
        x *= 2
    return tuple(values)


@dataclass(frozen=True)
class SearchSpace:
    arch: ModelArchitecture
    db: ProfileDB
    total_gpus: int
    global_batch: int
    tp_candidates: tuple[int, ...] = ()
    cp_candidates: tuple[int, ...] = (1,)
    pp_candidates: tuple[int, ...] = ()
    ep_candidates: tuple[int, ...] = ()
    dp_candidates: tuple[int, ...] = ()
    micro_batch_candidates: tuple[int, ...] = ()
    chunk_candidates: tuple[int, ...] = ()
    opt_combos: tuple[OptimizationSet, ...] = ()
    dtypes: Dtypes = field(default_factory=Dtypes)
    tflops_mode: str = "fwd-bwd-per-device"

    def __post_init__(self):
        if self.total_gpus < 1:
            raise InputError("total_gpus must be >= 1")

    def resolved(self) -> "SearchSpace":
        """Fill empty candidate sets with the power-of-two defaults bounded
        by the resources they consume; an empty feature allowlist becomes the
        default one (all features, default coefficients)."""
        arch, hw = self.arch, self.db.hardware
        updates = {}
        if not self.opt_combos:
            updates["opt_combos"] = default_feature_combos()
        if not self.tp_candidates:
            updates["tp_candidates"] = _powers_of_two(
                min(hw.gpus_per_node, self.total_gpus))
        if not self.pp_candidates:
            updates["pp_candidates"] = _powers_of_two(
                min(arch.num_layers, self.total_gpus))
        if not self.ep_candidates:
            limit = arch.num_experts if arch.is_moe else 1
            updates["ep_candidates"] = _powers_of_two(min(limit, self.total_gpus))
        if not self.dp_candidates:
            updates["dp_candidates"] = _powers_of_two(self.total_gpus)
        if not self.micro_batch_candidates:
            updates["micro_batch_candidates"] = _powers_of_two(self.global_batch)
        if not self.chunk_candidates:
            updates["chunk_candidates"] = _powers_of_two(arch.num_layers)
        return replace(self, **updates) if updates else self


@dataclass(frozen=True)
class Candidate:
    plan: ParallelPlan
    opts: OptimizationSet
    opts_index: int
    feasible: bool
    reason: str | None = None
    cost: object | None = None      # CostReport when feasible
    memory: object | None = None    # MemoryReport when feasible
    interval: int | None = None
    ettr: float | None = None
    t_e2e: float | None = None
    fault_note: str | None = None

    @property
    def step_key(self) -> tuple:
        p = self.plan
        return (self.cost.t_step, p.tp, p.cp, p.pp, p.ep, p.dp,
                p.micro_batch, p.chunks, self.opts_index)

    def to_json_dict(self) -> dict:
        out = {
            "plan": self.plan.to_json_dict(),
            "optimization": self.opts.feature_names(),
            "feasible": self.feasible,
        }
        if self.reason:
            out["reason"] = self.reason
        if self.cost is not None:
            out["cost"] = self.cost.to_json_dict()
        if self.memory is not None:
            out["memory"] = self.memory.to_json_dict()
        if self.interval is not None:
            out["I_ckpt"] = self.interval
        if self.ettr is not None:
            out["ETTR"] = self.ettr
        if self.t_e2e is not None:
            out["T_e2e"] = self.t_e2e
        if self.fault_note:
            out["fault_note"] = self.fault_note
        return out


@dataclass(frozen=True)
class TuneResult:
    candidates: tuple[Candidate, ...]
    evaluated: int
    rejections: dict[str, int]

    def to_json_dict(self) -> dict:
        return {
            "candidates": [c.to_json_dict() for c in self.candidates],
            "evaluated": self.evaluated,
            "rejections": dict(sorted(self.rejections.items())),
        }


def prune(space: SearchSpace, assigned: dict[str, int]) -> str | None:
    """Apply the expert rules to a partial assignment; returns a rejection
    reason or None. Dimensions are assigned in the order tp, cp, pp, ep, dp,
    micro_batch, chunks; each rule fires as soon as its inputs exist."""
    hw = space.db.hardware
    product = 1
    for dim in ("tp", "cp", "pp", "ep", "dp"):
        product *= assigned.get(dim, 1)
    if product > space.total_gpus:
        return "resource: parallel product exceeds total gpus"
    if "tp" in assigned and assigned["tp"] > hw.gpus_per_node:
        return "tp exceeds gpus per node"
    if "micro_batch" in assigned:
        m_bs = assigned["micro_batch"]
        if m_bs > space.global_batch:
            return "micro batch exceeds global batch"
        if "dp" in assigned and space.global_batch % (m_bs * assigned["dp"]) != 0:
            return "global batch not divisible by micro_batch*dp"
        if "pp" in assigned and space.global_batch // m_bs < assigned["pp"]:
            return "too few micro batches for the pipeline depth"
    if "chunks" in assigned and "pp" in assigned:
        if space.arch.num_layers % (assigned["pp"] * assigned["chunks"]) != 0:
            return "layers not divisible by pp*chunks"
    return None


def _enumerate_plans(space: SearchSpace, rejections: dict[str, int]):
    """Depth-first walk over the candidate sets with early pruning."""
    dims = (
        ("tp", space.tp_candidates),
        ("cp", space.cp_candidates),
        ("pp", space.pp_candidates),
        ("ep", space.ep_candidates),
        ("dp", space.dp_candidates),
        ("micro_batch", space.micro_batch_candidates),
        ("chunks", space.chunk_candidates),
    )

    def descend(level: int, assigned: dict[str, int]):
        if level == len(dims):
            yield ParallelPlan(
                tp=assigned["tp"], cp=assigned["cp"], pp=assigned["pp"],
                ep=assigned["ep"], dp=assigned["dp"],
                micro_batch=assigned["micro_batch"],
                global_batch=space.global_batch,
                chunks=assigned["chunks"],
                num_layers=space.arch.num_layers,
            )
            return
        name, values = dims[level]
        for value in values:
            assigned[name] = value
            reason = prune(space, assigned)
            if reason is None:
                yield from descend(level + 1, assigned)
            else:
                rejections[reason] = rejections.get(reason, 0) + 1
            del assigned[name]

    yield from descend(0, {})


def _evaluate_candidate(args) -> Candidate:
    space, plan, opts, opts_index = args
    try:
        result: PlanEvaluation = evaluate_plan(
            space.arch, plan, space.db, opts, space.dtypes,
            tflops_mode=space.tflops_mode,
        )
    except (ShapeError, InputError) as exc:
        return Candidate(plan, opts, opts_index, feasible=False, reason=str(exc))
    if result.memory.m_peak > space.db.hardware.gpu_memory:
        return Candidate(
            plan, opts, opts_index, feasible=False,
            reason=(f"memory: peak {result.memory.m_peak / 1e9:.2f} GB exceeds "
                    f"{space.db.hardware.gpu_memory / 1e9:.2f} GB"),
            cost=result.cost, memory=result.memory,
        )
    return Candidate(plan, opts, opts_index, feasible=True,
                     cost=result.cost, memory=result.memory)


def tune_step(space: SearchSpace, top_k: int | None = 4,
              workers: int | None = None) -> TuneResult:
    """Search the space for the plans with the smallest step time.

    Returns the top_k feasible candidates (all of them when top_k is None)
    ranked by ascending step time with a deterministic lexicographic
    tie-break, plus rejection statistics."""
    space = space.resolved()
    rejections: dict[str, int] = {}
    jobs = [
        (space, plan, opts, idx)
        for plan in _enumerate_plans(space, rejections)
        for idx, opts in enumerate(space.opt_combos)
    ]
    if workers is None:
        workers = os.cpu_count() or 1
    if workers > 1 and len(jobs) >= _POOL_THRESHOLD:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            evaluated = list(pool.map(_evaluate_candidate, jobs, chunksize=32))
    else:
        evaluated = [_evaluate_candidate(job) for job in jobs]

    feasible = []
    for cand in evaluated:
        if cand.feasible:
            feasible.append(cand)
        else:
            key = cand.reason.split(":")[0] if cand.reason else "unknown"
            rejections[key] = rejections.get(key, 0) + 1
    feasible.sort(key=lambda c: c.step_key)
    if top_k is not None:
        feasible = feasible[:top_k]
    return TuneResult(tuple(feasible), evaluated=len(evaluated),
                      rejections=rejections)


def tune_e2e(space: SearchSpace, fault: FaultModel, save_s: float,
             total_steps: int, top_k: int = 4,
             workers: int | None = None) -> TuneResult:
    """Two-phase end-to-end tuning: rank plans by step time, then give each
    its own optimal checkpoint interval and rank by total expected duration.

    The interval optimum depends on the plan only through its step time, so
    the phase split loses nothing; candidates whose fault regime is
    infeasible are annotated and ranked last rather than dropped."""
    step_result = tune_step(space, top_k=None, workers=workers)
    annotated = []
    for cand in step_result.candidates:
        t_step = cand.cost.t_step
        try:
            interval, ettr = optimal_ckpt_interval(fault, save_s, total_steps, t_step)
            policy = CheckpointPolicy(interval, save_s, total_steps, t_step)
            t_e2e = e2e_objective(fault, policy)
            annotated.append(replace(cand, interval=interval, ettr=ettr,
                                     t_e2e=t_e2e))
        except InfeasibleError as exc:
            annotated.append(replace(cand, fault_note=str(exc)))
    annotated.sort(key=lambda c: (c.t_e2e if c.t_e2e is not None else float("inf"),
                                  c.step_key))
    return TuneResult(tuple(annotated[:top_k]), evaluated=step_result.evaluated,
                      rejections=step_result.rejections)


def linearity(t_step_small: float, t_step_large: float) -> float:
    """Scaling efficiency between two cluster sizes at fixed work: the ratio
    of the smaller cluster's step time to the larger one's."""
    if t_step_small <= 0 or t_step_large <= 0:
        raise InputError("step times must be positive")
    return t_step_small / t_step_large


# ---------------------------------------------------------------------------
# Sweeps


@dataclass(frozen=True)
class SweepResult:
    parameter: str
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]

    def to_json_dict(self) -> dict:
        return {
            "parameter": self.parameter,
            "columns": list(self.columns),
            "rows": [list(r) for r in self.rows],
        }


_PLAN_DIMS = {"t": "tp_candidates", "c": "cp_candidates", "p": "pp_candidates",
              "e": "ep_candidates", "d": "dp_candidates",
              "m_bs": "micro_batch_candidates", "v": "chunk_candidates"}

_FAULT_PARAMS = ("r_f", "u_b", "T_save", "N_nodes", "I_ckpt")


def sweep(
    space: SearchSpace,
    parameter: str,
    values: list,
    fault: FaultModel | None = None,
    save_s: float | None = None,
    total_steps: int | None = None,
    step_s: float | None = None,
    workers: int | None = None,
) -> SweepResult:
    """Re-tune (or re-evaluate) per parameter value and emit plottable rows.

    Plan dimensions and cluster knobs re-run the step tuner with the swept
    value pinned; fault parameters hold the plan fixed and recompute the
    closed-form ETTR, which needs the fault config and step time."""
    if parameter in _FAULT_PARAMS:
        return _sweep_fault(parameter, values, fault, save_s, total_steps, step_s)

    columns = ("value", "t", "c", "p", "e", "d", "m_bs", "v",
               "T_step", "TFLOPS", "M_peak_GB")
    if parameter == "g_n":
        columns += ("linearity",)
    rows = []
    reference = None  # (gpus, t_step) of the first feasible swept cluster
    for value in values:
        sub = _pin_parameter(space, parameter, value)
        result = tune_step(sub, top_k=1, workers=workers)
        if not result.candidates:
            rows.append((value,) + ("",) * (len(columns) - 1))
            continue
        best = result.candidates[0]
        p = best.plan
        row = (value, p.tp, p.cp, p.pp, p.ep, p.dp, p.micro_batch,
               p.chunks, best.cost.t_step, best.cost.tflops,
               best.memory.m_peak / 1e9)
        if parameter == "g_n":
            # scaling efficiency: ideally-scaled reference time over actual
            if reference is None:
                reference = (int(value), best.cost.t_step)
            ideal = reference[1] * reference[0] / int(value)
            row += (linearity(ideal, best.cost.t_step),)
        rows.append(row)
    return SweepResult(parameter, columns, tuple(rows))


def _pin_parameter(space: SearchSpace, parameter: str, value) -> SearchSpace:
    if parameter in _PLAN_DIMS:
        return replace(space.resolved(), **{_PLAN_DIMS[parameter]: (int(value),)})
    if parameter == "g_bs":
        # candidate micro-batch sets depend on the batch; re-resolve
        return replace(space, global_batch=int(value),
                       micro_batch_candidates=()).resolved()
    if parameter == "g_n":
        return replace(space, total_gpus=int(value), dp_candidates=()).resolved()
    if parameter == "N":
        hw = replace(space.db.hardware, gpus_per_node=int(value))
        return replace(space, db=replace(space.db, hardware=hw),
                       tp_candidates=()).resolved()
    if parameter == "optimizer_strategy":
        combos = tuple(replace(c, optimizer_strategy=str(value))
                       for c in space.resolved().opt_combos)
        return replace(space, opt_combos=_dedupe(combos))
    if parameter == "dp_overlap":
        from .optim import DpOverlapCoeffs
        enabled = value in (True, "on", "true", 1)
        combos = tuple(
            replace(c, dp_overlap=DpOverlapCoeffs() if enabled else None)
            for c in space.resolved().opt_combos
        )
        return replace(space, opt_combos=_dedupe(combos))
    raise InputError(f"unknown sweep parameter {parameter!r}")


def _dedupe(combos: tuple[OptimizationSet, ...]) -> tuple[OptimizationSet, ...]:
    """Pinning an exclusive strategy can collapse allowlist entries into
    duplicates; keep the first of each."""
    unique: list[OptimizationSet] = []
    for combo in combos:
        if combo not in unique:
            unique.append(combo)
    return tuple(unique)


def _sweep_fault(parameter: str, values: list, fault: FaultModel | None,
                 save_s: float | None, total_steps: int | None,
                 step_s: float | None) -> SweepResult:
    if fault is None or save_s is None or total_steps is None or step_s is None:
        raise InputError(
            f"sweeping {parameter!r} needs a fault config, save time, "
            "total steps and step time"
        )
    columns = ("value", "ETTR", "T_e2e", "I_ckpt")
    rows = []
    for value in values:
        f, s = fault, save_s
        if parameter == "r_f":
            f = replace(fault, failures_per_node_day=float(value))
        elif parameter == "u_b":
            f = replace(fault, mean_repair_s=float(value))
        elif parameter == "N_nodes":
            f = replace(fault, nodes=int(value))
        elif parameter == "T_save":
            s = float(value)
        if parameter == "I_ckpt":
            interval = int(value)
        else:
            try:
                interval, _ = optimal_ckpt_interval(f, s, total_steps, step_s)
            except InfeasibleError:
                rows.append((value, "", "", ""))
                continue
        policy = CheckpointPolicy(interval, s, total_steps, step_s)
        try:
            ettr = ettr_closed_form(f, policy)
            rows.append((value, ettr, e2e_objective(f, policy), interval))
        except InfeasibleError:
            rows.append((value, "", "", interval))
    return SweepResult(parameter, columns, tuple(rows))
