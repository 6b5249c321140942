import numpy as np
import pytest

from helpers import make_db, make_hardware, tiny_dense
from traincost.arch import decompose
from traincost.basecost import (
    Dtypes,
    activation_memory,
    evaluate_plan,
    layer_bwd_time,
    layer_fwd_time,
    optimizer_time,
    peak_memory,
    pipeline_time,
    static_memory,
    step_time,
    tflops,
)
from traincost.errors import InputError, ProfileLookupError
from traincost.optim import OptimizationSet
from traincost.plan import ParallelPlan
from traincost.profile import ComputeProfile, ComputeEntry, comm_volume


def simple_plan(**kwargs):
    defaults = dict(micro_batch=1, global_batch=1, num_layers=1)
    defaults.update(kwargs)
    return ParallelPlan(**defaults)


class TestPipeline:
    def test_two_stage_classic(self):
        plan = simple_plan(pp=2, global_batch=4, num_layers=2)
        ph = pipeline_time(1.0, 2.0, plan)
        assert (ph.warmup, ph.steady, ph.cooldown) == (1.0, 12.0, 2.0)
        assert ph.total == 15.0

    def test_single_stage_single_batch(self):
        ph = pipeline_time(1.0, 1.0, simple_plan())
        assert ph.total == 2.0

    def test_v1_reduces_to_classic_formula(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            p = int(rng.integers(1, 9))
            l = int(rng.integers(1, 5))
            m_b = int(rng.integers(p, 3 * p + 1))
            f, b = rng.uniform(0.1, 4.0, size=2)
            plan = simple_plan(pp=p, global_batch=m_b, num_layers=p * l)
            total = pipeline_time(float(f), float(b), plan).total
            assert total == pytest.approx((m_b + p - 1) * l * (f + b), rel=1e-12)

    def test_degenerate_warning_attached(self):
        plan = simple_plan(pp=4, global_batch=2, num_layers=4)
        ph = pipeline_time(1.0, 1.0, plan)
        assert any("degenerate" in w for w in ph.warnings)

    def test_steady_hop_substitution(self):
        plan = simple_plan(pp=2, global_batch=4, num_layers=2)
        base = pipeline_time(1.0, 2.0, plan, t_pp=0.5)
        hidden = pipeline_time(1.0, 2.0, plan, t_pp=0.5, t_pp_steady=0.0)
        steady_hops = 4 * 4 * 1 - 2 * 4 + 2 * 2 - 2
        assert base.total - hidden.total == pytest.approx(steady_hops * 0.5)

    def test_bubble_fraction_shrinks_with_more_micro_batches(self):
        fractions = []
        for m_b in (4, 8, 16, 32):
            plan = simple_plan(pp=4, global_batch=m_b, num_layers=4)
            total = pipeline_time(1.0, 1.0, plan).total
            fractions.append(1.0 - m_b * 2.0 / total)
        assert fractions == sorted(fractions, reverse=True)
        assert all(f > 0 for f in fractions)


class TestLayerTimes:
    def test_compute_only_sum(self):
        arch = tiny_dense()
        plan = simple_plan(num_layers=arch.num_layers)
        db = make_db(tflops=1e-9)  # 1000 FLOPs/s, times are visible numbers
        d = decompose(arch, plan)
        expected = sum(m.flops_fwd / 1000.0 for m in d.layer)
        assert layer_fwd_time(arch, plan, db) == pytest.approx(expected)

    def test_backward_doubles_compute_keeps_comm(self):
        arch = tiny_dense(h=8, a=2)
        plan = simple_plan(tp=2, num_layers=arch.num_layers)
        db = make_db(tflops=1e-9, bandwidth_gbps=1e-9)  # 1 B/s links
        fwd = layer_fwd_time(arch, plan, db)
        bwd = layer_bwd_time(arch, plan, db)
        d = decompose(arch, plan)
        comp_fwd = sum(m.flops_fwd / 1000.0 for m in d.layer)
        comm = fwd - comp_fwd
        assert comm > 0
        assert bwd == pytest.approx(2 * comp_fwd + comm)

    def test_collectives_counted_per_layer(self):
        arch = tiny_dense(h=8, a=2)
        plan = simple_plan(tp=2, num_layers=arch.num_layers)
        db = make_db(tflops=1e-9, bandwidth_gbps=1e-9)
        vol = comm_volume("tp", plan, arch, 2.0)
        comm_expected = 4 * vol / 1.0  # 2 ag + 2 rs at 1 B/s
        d = decompose(arch, plan)
        comp = sum(m.flops_fwd / 1000.0 for m in d.layer)
        assert layer_fwd_time(arch, plan, db) == pytest.approx(comp + comm_expected)

    def test_missing_profile_entry_names_module(self):
        arch = tiny_dense()
        plan = simple_plan(num_layers=arch.num_layers)
        db = make_db()
        object.__setattr__(db, "compute", ComputeProfile(
            (ComputeEntry("qkv", 1e12),)))
        with pytest.raises(ProfileLookupError, match="norm"):
            layer_fwd_time(arch, plan, db)


class TestOptimizerTime:
    def test_direct_evaluation(self):
        # grad bytes 2 x 10 params = 20 B over 20 B/s; update 10 params at 5/s
        hw = make_hardware(optimizer_throughput=5.0)
        db = make_db(hw, per_kind_gbps={"all-reduce": 20e-9})
        plan = simple_plan(dp=2, global_batch=2)
        t_dp, t_update, t_opt = optimizer_time(plan, 10.0, db)
        assert t_dp == pytest.approx(1.0)
        assert t_update == pytest.approx(2.0)
        assert t_opt == pytest.approx(3.0)

    def test_no_data_parallelism_no_exchange(self, flat_db):
        t_dp, _, _ = optimizer_time(simple_plan(dp=1), 10.0, flat_db)
        assert t_dp == 0.0

    def test_zero_params(self, flat_db):
        t_dp, t_update, t_opt = optimizer_time(simple_plan(dp=2, global_batch=2),
                                               0.0, flat_db)
        assert (t_dp, t_update, t_opt) == (0.0, 0.0, 0.0)


class TestStepAndTflops:
    def test_step_sum(self):
        assert step_time(15.0, 3.0) == 18.0

    def test_step_rejects_nonpositive(self):
        with pytest.raises(InputError):
            step_time(0.0, 0.0)

    def test_tflops_convention(self):
        assert tflops(6e12, simple_plan(), 18.0) == pytest.approx(1.0)

    def test_tflops_raw_mode(self):
        assert tflops(6e12, simple_plan(), 18.0, mode="raw") == pytest.approx(1 / 3)

    def test_tflops_divides_by_world_size(self):
        plan = simple_plan(dp=4, global_batch=4)
        assert tflops(6e12, plan, 18.0) == pytest.approx(0.25)


class TestMemory:
    def test_static_direct(self):
        plan = simple_plan()
        dt = Dtypes(param_bytes=2, grad_bytes=2, opt_bytes=4)
        assert static_memory(plan, 10.0, dt) == 200.0

    def test_static_zero_params(self):
        assert static_memory(simple_plan(), 0.0) == 0.0

    def test_static_linear_in_chunks_at_fixed_layers_per_stage(self):
        one = simple_plan(chunks=1, num_layers=1)
        two = simple_plan(chunks=2, num_layers=2)
        assert static_memory(two, 10.0) == 2 * static_memory(one, 10.0)

    def test_activation_peak_stage(self):
        plan = simple_plan(pp=4, chunks=2, global_batch=8, num_layers=8)
        assert activation_memory(plan, 1e9, r_pp=0) == 11e9

    def test_activation_no_pipelining(self):
        assert activation_memory(simple_plan(), 123.0) == 123.0

    def test_activation_stage_bounds(self):
        with pytest.raises(InputError):
            activation_memory(simple_plan(pp=2, global_batch=2), 1.0, r_pp=2)

    def test_peak_sum(self):
        assert peak_memory(200.0, 300.0) == 500.0
        assert peak_memory(0.0, 0.0) == 0.0

    def test_activation_linear_in_bytes(self):
        plan = simple_plan(pp=2, chunks=2, global_batch=4, num_layers=4)
        assert activation_memory(plan, 2e9) == 2 * activation_memory(plan, 1e9)


class TestEvaluatePlan:
    def test_invariants(self, dense_arch, flat_db):
        plan = ParallelPlan(tp=2, pp=2, micro_batch=1, global_batch=8, dp=2,
                            num_layers=dense_arch.num_layers)
        result = evaluate_plan(dense_arch, plan, flat_db)
        c = result.cost
        assert c.t_step == pytest.approx(c.t_pipeline + c.t_opt)
        assert c.t_pipeline == pytest.approx(
            c.t_cal + c.t_tp + c.t_cp + c.t_ep + c.t_pp)
        assert result.memory.m_peak == pytest.approx(
            result.memory.m_static + result.memory.m_activation)

    def test_step_monotone_in_compute_speed(self, dense_arch):
        plan = ParallelPlan(pp=2, micro_batch=1, global_batch=4,
                            num_layers=dense_arch.num_layers)
        slow = evaluate_plan(dense_arch, plan, make_db(tflops=0.5))
        fast = evaluate_plan(dense_arch, plan, make_db(tflops=1.0))
        assert fast.cost.t_step < slow.cost.t_step

    def test_report_field_names(self, dense_arch, flat_db):
        plan = ParallelPlan(num_layers=dense_arch.num_layers)
        payload = evaluate_plan(dense_arch, plan, flat_db).cost.to_json_dict()
        for key in ("T_step", "TFLOPS", "T_cal", "T_TP", "T_PP", "T_DP",
                    "T_EP", "T_update"):
            assert key in payload

    def test_deterministic(self, dense_arch, flat_db):
        plan = ParallelPlan(tp=2, micro_batch=1, global_batch=2, dp=2,
                            num_layers=dense_arch.num_layers)
        a = evaluate_plan(dense_arch, plan, flat_db)
        b = evaluate_plan(dense_arch, plan, flat_db)
        assert a.cost.to_json_dict() == b.cost.to_json_dict()
        assert a.memory.to_json_dict() == b.memory.to_json_dict()

    def test_scaling_speeds_up_exposed_comm(self, dense_arch):
        plan = ParallelPlan(tp=2, micro_batch=1, global_batch=1,
                            num_layers=dense_arch.num_layers)
        db = make_db(tflops=1e-6, bandwidth_gbps=1e-6)
        base = evaluate_plan(dense_arch, plan, db)
        boosted = evaluate_plan(dense_arch, plan, db,
                                OptimizationSet(comm_scaling={"*": 2.0}))
        assert boosted.cost.t_tp == pytest.approx(base.cost.t_tp / 2)

    def test_distributed_optimizer_divides_update(self, dense_arch, flat_db):
        plan = ParallelPlan(dp=4, micro_batch=1, global_batch=4,
                            num_layers=dense_arch.num_layers)
        base = evaluate_plan(dense_arch, plan, flat_db)
        dist = evaluate_plan(dense_arch, plan, flat_db,
                             OptimizationSet(optimizer_strategy="distributed"))
        assert dist.cost.t_update == pytest.approx(base.cost.t_update / 4)
        assert dist.memory.optimizer_bytes == pytest.approx(
            base.memory.optimizer_bytes / 4)

    def test_profile_level_scaling_applies(self, dense_arch):
        plan = ParallelPlan(num_layers=dense_arch.num_layers)
        base = evaluate_plan(dense_arch, plan, make_db(tflops=1e-6))
        db = make_db(tflops=1e-6)
        object.__setattr__(db, "compute_scaling", {"*": 2.0})
        boosted = evaluate_plan(dense_arch, plan, db)
        assert boosted.cost.t_cal == pytest.approx(base.cost.t_cal / 2)

    def test_memory_strategies_never_exceed_baseline_peak(self, flat_db):
        dense_arch = tiny_dense(l=4)
        plan = ParallelPlan(pp=2, chunks=2, micro_batch=1, global_batch=4,
                            num_layers=dense_arch.num_layers)
        base = evaluate_plan(dense_arch, plan, flat_db).memory.m_peak
        for strategy in ("selective-recompute", "full-recompute", "offload"):
            got = evaluate_plan(
                dense_arch, plan, flat_db,
                OptimizationSet(activation_strategy=strategy)).memory.m_peak
            assert got <= base
