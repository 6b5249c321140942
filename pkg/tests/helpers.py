"""Shared builders for test fixtures: tiny architectures, flat profiles whose
expected costs are easy to compute by hand, and the brute-force tuner
reference."""

from __future__ import annotations

import itertools

from traincost.arch import ModelArchitecture
from traincost.basecost import evaluate_plan
from traincost.errors import InputError, ShapeError
from traincost.plan import ParallelPlan
from traincost.profile import (
    CommBucket,
    CommEntry,
    CommProfile,
    ComputeEntry,
    ComputeProfile,
    HardwareSpec,
    ProfileDB,
)
from traincost.tuner import Candidate


def make_hardware(**overrides) -> HardwareSpec:
    values = dict(
        h2d_bw=32e9, d2h_bw=32e9, disk_load_bw=10e9, disk_write_bw=5e9,
        cpu_memory=2000e9, cpu_flops=3e9, gpu_peak_flops=512e12,
        gpu_memory=32e9, gpus_per_node=8, hbm_bw=1600e9,
        optimizer_throughput=2e9,
    )
    values.update(overrides)
    return HardwareSpec(**values)


def make_db(hw: HardwareSpec | None = None, tflops: float = 1.0,
            bandwidth_gbps: float = 1.0, beta: float = 1.0,
            entries: list[ComputeEntry] | None = None,
            per_kind_gbps: dict[str, float] | None = None) -> ProfileDB:
    """Flat profile: one wildcard throughput and one flat bucket per
    collective kind, so expected latencies are simple ratios."""
    hw = hw or make_hardware()
    compute = ComputeProfile(tuple(entries or ()) + (
        ComputeEntry(module="*", fwd_flops_per_s=tflops * 1e12),
    ))
    kinds = ("all-gather", "reduce-scatter", "all-reduce", "all-to-all", "p2p")
    per_kind = per_kind_gbps or {}
    comm = CommProfile(tuple(
        CommEntry(kind=kind, group_size=8,
                  buckets=(CommBucket(1.0, per_kind.get(kind, bandwidth_gbps) * 1e9,
                                      beta),))
        for kind in kinds
    ))
    return ProfileDB(hardware=hw, compute=compute, comm=comm)


def tiny_dense(l: int = 2, s: int = 8, h: int = 4, a: int = 2, v: int = 16,
               g_d: int = 8, **extra) -> ModelArchitecture:
    return ModelArchitecture(num_layers=l, seq_len=s, hidden_size=h,
                             num_heads=a, vocab_size=v, dense_ffn_size=g_d,
                             **extra)


def tiny_moe(l: int = 2, s: int = 8, h: int = 4, a: int = 2, v: int = 16,
             g_d: int = 8, g_e: int = 4, t_k: int = 2,
             n_experts: int = 4) -> ModelArchitecture:
    return ModelArchitecture(num_layers=l, seq_len=s, hidden_size=h,
                             num_heads=a, vocab_size=v, dense_ffn_size=g_d,
                             expert_ffn_size=g_e, top_k=t_k,
                             num_experts=n_experts, structure_kind="MoE")


def exhaustive_tune_reference(space, top_k):
    """Brute-force tuner oracle: raw Cartesian product, full-candidate
    filtering with the printed rules applied at the end, same ranking key as
    the pruned search. Shares no code with the tuner's enumeration."""
    space = space.resolved()
    hw = space.db.hardware
    survivors = []
    for combo in itertools.product(space.tp_candidates, space.cp_candidates,
                                   space.pp_candidates, space.ep_candidates,
                                   space.dp_candidates,
                                   space.micro_batch_candidates,
                                   space.chunk_candidates):
        t, c, p, e, d, m_bs, v = combo
        if t * c * p * e * d > space.total_gpus:
            continue
        if t > hw.gpus_per_node:
            continue
        if m_bs > space.global_batch:
            continue
        if space.global_batch % (m_bs * d) != 0:
            continue
        if space.global_batch // m_bs < p:
            continue
        if space.arch.num_layers % (p * v) != 0:
            continue
        for idx, opts in enumerate(space.opt_combos):
            plan = ParallelPlan(tp=t, cp=c, pp=p, ep=e, dp=d, micro_batch=m_bs,
                                global_batch=space.global_batch, chunks=v,
                                num_layers=space.arch.num_layers)
            try:
                result = evaluate_plan(space.arch, plan, space.db, opts,
                                       space.dtypes,
                                       tflops_mode=space.tflops_mode)
            except (ShapeError, InputError):
                continue
            if result.memory.m_peak > hw.gpu_memory:
                continue
            survivors.append(Candidate(plan, opts, idx, feasible=True,
                                       cost=result.cost, memory=result.memory))
    survivors.sort(key=lambda cand: cand.step_key)
    return survivors[:top_k]
