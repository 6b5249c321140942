"""Fault-tolerance cost model: effective-training-time ratio (ETTR), the
failure-count fixed point, checkpoint-interval optimization, and the
end-to-end duration objective.

Unit conventions: failure rates enter as failures per node per day and are
converted to per-second internally; every duration is in seconds; checkpoint
intervals are counted in steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InfeasibleError, InputError

DAY_SECONDS = 86400.0

# Defaults for the three-level recovery model (process / pod / job), from
# multi-thousand-GPU cluster operations history.
DEFAULT_RECOVERY_MIX = (0.3, 0.6, 0.1)
DEFAULT_RECOVERY_SECONDS = (141.0, 262.0, 307.0)


@dataclass(frozen=True)
class FaultModel:
    nodes: int
    failures_per_node_day: float
    recovery_process_s: float = DEFAULT_RECOVERY_SECONDS[0]
    recovery_pod_s: float = DEFAULT_RECOVERY_SECONDS[1]
    recovery_job_s: float = DEFAULT_RECOVERY_SECONDS[2]
    mix: tuple[float, float, float] = DEFAULT_RECOVERY_MIX
    init_s: float = 0.0            # first-initialization time u_0
    mean_repair_s: float | None = None  # overrides the mixture when given

    def __post_init__(self):
        if self.nodes < 1:
            raise InputError("nodes must be >= 1")
        if self.failures_per_node_day < 0:
            raise InputError("failure rate must be >= 0")
        if min(self.recovery_process_s, self.recovery_pod_s,
               self.recovery_job_s, self.init_s) < 0:
            raise InputError("recovery times must be >= 0")
        if abs(sum(self.mix) - 1.0) > 1e-9:
            raise InputError(f"fault mix must sum to 1, got {sum(self.mix)}")

    @property
    def failures_per_second(self) -> float:
        """Cluster-wide failure rate: nodes x per-node rate, per second."""
        return self.nodes * self.failures_per_node_day / DAY_SECONDS

    @classmethod
    def from_json_dict(cls, data: dict) -> "FaultModel":
        kwargs = dict(
            nodes=int(data["N_nodes"]),
            failures_per_node_day=float(data["r_f_per_node_day"]),
            init_s=float(data.get("u0", 0.0)),
        )
        if "u_bc" in data:
            kwargs["recovery_process_s"] = float(data["u_bc"])
        if "u_bp" in data:
            kwargs["recovery_pod_s"] = float(data["u_bp"])
        if "u_bj" in data:
            kwargs["recovery_job_s"] = float(data["u_bj"])
        if "mix" in data:
            kwargs["mix"] = tuple(float(x) for x in data["mix"])
        if "u_b" in data:
            kwargs["mean_repair_s"] = float(data["u_b"])
        return cls(**kwargs)


@dataclass(frozen=True)
class CheckpointPolicy:
    interval_steps: int       # steps between checkpoint saves
    save_s: float             # single save duration
    total_steps: int
    step_s: float

    def __post_init__(self):
        if self.interval_steps < 1:
            raise InputError("interval_steps must be >= 1")
        if self.total_steps < 1:
            raise InputError("total_steps must be >= 1")
        if self.step_s <= 0:
            raise InputError("step_s must be > 0")
        if self.save_s < 0:
            raise InputError("save_s must be >= 0")

    @property
    def training_s(self) -> float:
        return self.total_steps * self.step_s

    @property
    def num_saves(self) -> int:
        return math.ceil(self.total_steps / self.interval_steps)


@dataclass(frozen=True)
class EttrReport:
    ettr: float
    training_s: float
    interruption_s: float
    e2e_s: float
    expected_failures: float

    def to_json_dict(self) -> dict:
        return {
            "ETTR": self.ettr,
            "T_tr": self.training_s,
            "T_in": self.interruption_s,
            "T_e2e": self.e2e_s,
            "F_f": self.expected_failures,
        }


def steps_from_tokens(tokens: float, global_batch: int, seq_len: int) -> int:
    """Total training steps needed to consume a token budget."""
    return math.ceil(tokens / (global_batch * seq_len))


def mean_repair_time(fault: FaultModel) -> float:
    """Expected recovery time per failure: the three-level mixture mean, or
    the direct override when the model carries one."""
    if fault.mean_repair_s is not None:
        return fault.mean_repair_s
    a, b, c = fault.mix
    return (a * fault.recovery_process_s + b * fault.recovery_pod_s
            + c * fault.recovery_job_s)


def _denominator(fault: FaultModel, policy: CheckpointPolicy) -> float:
    u_b = mean_repair_time(fault)
    rollback = policy.interval_steps * policy.step_s / 2.0
    return 1.0 - fault.failures_per_second * (u_b + rollback)


def failure_fixed_point(fault: FaultModel, policy: CheckpointPolicy) -> float:
    """Expected failure count over the whole run.

    Failures arrive over total wall time, and each failure lengthens the wall
    time; the mutual recursion solves in closed form provided the per-failure
    cost stays below the failure inter-arrival time."""
    lam = fault.failures_per_second
    if lam == 0:
        return 0.0
    den = _denominator(fault, policy)
    if den <= 0:
        raise InfeasibleError(
            "failure rate too high for checkpointing to converge "
            f"(denominator {den:.3g} <= 0)"
        )
    base = policy.training_s + fault.init_s + policy.num_saves * policy.save_s
    return lam * base / den


def ettr_exact(fault: FaultModel, policy: CheckpointPolicy) -> EttrReport:
    """ETTR from the full interruption-time assembly, keeping the
    first-initialization term and the ceiling on the save count."""
    f_f = failure_fixed_point(fault, policy)
    u_b = mean_repair_time(fault)
    rollback = policy.interval_steps * policy.step_s / 2.0
    t_in = (fault.init_s + f_f * u_b + f_f * rollback
            + policy.num_saves * policy.save_s)
    t_tr = policy.training_s
    return EttrReport(
        ettr=t_tr / (t_tr + t_in),
        training_s=t_tr,
        interruption_s=t_in,
        e2e_s=t_tr + t_in,
        expected_failures=f_f,
    )


def ettr_closed_form(fault: FaultModel, policy: CheckpointPolicy) -> float:
    """Closed-form expected ETTR; drops the initialization term and the
    ceiling on the save count relative to ettr_exact."""
    den = _denominator(fault, policy)
    if den <= 0:
        raise InfeasibleError(
            "failure rate too high for checkpointing to converge "
            f"(numerator {den:.3g} <= 0)"
        )
    save_ratio = policy.save_s / (policy.interval_steps * policy.step_s)
    return den / (1.0 + save_ratio)


def e2e_objective(fault: FaultModel, policy: CheckpointPolicy) -> float:
    """Total expected wall time for the run; algebraically equal to
    training time over the closed-form ETTR."""
    return policy.training_s / ettr_closed_form(fault, policy)


def optimal_ckpt_interval(
    fault: FaultModel,
    save_s: float,
    total_steps: int,
    step_s: float,
) -> tuple[int, float]:
    """(best interval in steps, closed-form ETTR at it).

    The continuous optimum comes from the stationary point of the e2e
    objective; the returned interval is whichever of floor/ceil (clamped to
    >= 1) minimizes the objective. With a zero failure rate any interval
    works and a single final checkpoint is returned; a negative discriminant
    means checkpointing cannot pay for itself at this failure rate."""
    lam = fault.failures_per_second
    if lam == 0:
        policy = CheckpointPolicy(max(total_steps, 1), save_s, total_steps, step_s)
        return policy.interval_steps, ettr_closed_form(fault, policy)
    u_b = mean_repair_time(fault)
    disc = save_s * save_s - 2.0 * save_s * u_b + 2.0 * save_s / lam
    if disc < 0:
        raise InfeasibleError(
            "no finite optimal interval: checkpointing cannot pay for itself "
            f"(discriminant {disc:.3g} < 0)"
        )
    continuous = (-save_s + math.sqrt(disc)) / step_s
    lo = max(1, math.floor(continuous))
    hi = max(1, math.ceil(continuous))
    best, best_g = None, math.inf
    for cand in sorted({lo, hi}):
        policy = CheckpointPolicy(cand, save_s, total_steps, step_s)
        try:
            g = e2e_objective(fault, policy)
        except InfeasibleError:
            continue
        if g < best_g:
            best, best_g = cand, g
    if best is None:
        raise InfeasibleError("no feasible interval near the continuous optimum")
    return best, ettr_closed_form(
        fault, CheckpointPolicy(best, save_s, total_steps, step_s)
    )
