"""Simulator tests: analytic agreement, determinism, causality, baselines."""

import pytest

from kgflow.costmodel import bundled_qcloud_catalog
from kgflow.flowline import (
    Flowline,
    NetParams,
    TaskNode,
    TaskProfile,
    apply_partition,
    makespan,
    partitioned_time,
)
from kgflow.scheduler import (
    MakespanPriceFit,
    SchedulePlan,
    _plan_from_instances,
    check_qualification,
    schedule,
)
from kgflow.sim import (
    SimConfig,
    SweepConfig,
    baseline_list,
    baseline_random,
    simulate,
    sweep_eta,
    sweep_to_csv,
    timeline_to_chrome_trace,
)
from kgflow.synth import synthetic_flowline

from test_scheduler import (  # fixtures shared with the scheduler suite
    NET,
    PAPER_CURVE,
    model,
    nine_task_flowline,
    nine_task_profile,
    op,
    qcloud_vms,
)


def single_task_plan(weight=4.65, vm_names=("5XLARGE80", "2XLARGE40")):
    fl = Flowline.build([op("w")], [])
    profile = TaskProfile({"w": weight})
    vms = tuple(qcloud_vms(*vm_names))
    plan = SchedulePlan(_plan_from_instances(vms), vms, {"w": 0}, 0.5, NET)
    return plan, fl, profile


class TestSimulate:
    def test_forty_slices_closed_form(self):
        plan, fl, profile = single_task_plan(weight=4.65)
        config = SimConfig(latency_s=NET.latency_s,
                           bandwidth_Bps=NET.bandwidth_Bps,
                           slice_size=200, corpus_size=8000)
        result = simulate(plan, fl, profile, config)
        assert result.total_time == pytest.approx(186.0, rel=1e-12)
        assert len(result.per_slice_makespan) == 40

    def test_cost_accounting_single_window(self):
        plan, fl, profile = single_task_plan(weight=5.10)
        config = SimConfig(slice_size=200, corpus_size=200)
        result = simulate(plan, fl, profile, config)
        assert result.monetary_cost == pytest.approx(0.0509, abs=5e-5)
        assert round(result.monetary_cost, 2) == 0.05
        plan465, fl465, profile465 = single_task_plan(weight=4.65)
        result465 = simulate(plan465, fl465, profile465, config)
        assert result465.monetary_cost == pytest.approx(0.0464, abs=5e-5)
        assert round(result465.monetary_cost, 3) == 0.046

    def test_zero_jitter_constant_per_slice(self):
        plan = schedule(nine_task_flowline(), nine_task_profile(),
                        bundled_qcloud_catalog(), 0.5, NET, fit=PAPER_CURVE)
        config = SimConfig(latency_s=NET.latency_s,
                           bandwidth_Bps=NET.bandwidth_Bps,
                           slice_size=200, corpus_size=2000)
        result = simulate(plan, nine_task_flowline(), nine_task_profile(),
                          config)
        # Constant modulo float accumulation in absolute event times.
        assert len({round(m, 9) for m in result.per_slice_makespan}) == 1

    def test_matches_analytic_model(self):
        fl, profile = nine_task_flowline(), nine_task_profile()
        plan = schedule(fl, profile, bundled_qcloud_catalog(), 0.5, NET,
                        fit=PAPER_CURVE)
        config = SimConfig(latency_s=NET.latency_s,
                           bandwidth_Bps=NET.bandwidth_Bps,
                           slice_size=200, corpus_size=8000)
        result = simulate(plan, fl, profile, config)
        graph = apply_partition(fl, profile, dict(plan.assignment), NET)
        expected = partitioned_time(graph, 8000, 200)
        assert result.total_time == pytest.approx(expected, rel=1e-9)
        assert result.per_slice_makespan[0] == pytest.approx(makespan(graph),
                                                             rel=1e-12)

    def test_determinism_with_jitter(self):
        fl, profile = nine_task_flowline(), nine_task_profile()
        plan = schedule(fl, profile, bundled_qcloud_catalog(), 0.5, NET,
                        fit=PAPER_CURVE)
        config = SimConfig(latency_s=NET.latency_s,
                           bandwidth_Bps=NET.bandwidth_Bps,
                           slice_size=200, corpus_size=1000,
                           jitter=0.2, seed=7)
        a = simulate(plan, fl, profile, config)
        b = simulate(plan, fl, profile, config)
        assert a == b
        c = simulate(plan, fl, profile,
                     SimConfig(latency_s=NET.latency_s,
                               bandwidth_Bps=NET.bandwidth_Bps,
                               slice_size=200, corpus_size=1000,
                               jitter=0.2, seed=8))
        assert c.total_time != a.total_time

    def test_causality_and_monotone_starts(self):
        fl, profile = nine_task_flowline(), nine_task_profile()
        plan = schedule(fl, profile, bundled_qcloud_catalog(), 0.5, NET,
                        fit=PAPER_CURVE)
        config = SimConfig(latency_s=NET.latency_s,
                           bandwidth_Bps=NET.bandwidth_Bps,
                           slice_size=200, corpus_size=1000,
                           jitter=0.3, seed=3)
        result = simulate(plan, fl, profile, config)
        events = {(ev.task, ev.slice_index): ev for ev in result.timeline}
        for (task, s), ev in events.items():
            for pred in fl.predecessors[task]:
                pe = events[(pred, s)]
                delay = 0.0
                if plan.assignment[pred] != plan.assignment[task]:
                    delay = NET.transfer_time(profile.payload((pred, task)))
                assert ev.start >= pe.end + delay - 1e-12
            if s > 0:
                assert ev.start >= events[(task, s - 1)].start - 1e-12

    def test_overlap_mode_is_faster(self):
        fl, profile = nine_task_flowline(), nine_task_profile()
        plan = schedule(fl, profile, bundled_qcloud_catalog(), 0.5, NET,
                        fit=PAPER_CURVE)
        base = SimConfig(latency_s=NET.latency_s,
                         bandwidth_Bps=NET.bandwidth_Bps,
                         slice_size=200, corpus_size=2000)
        serial = simulate(plan, fl, profile, base)
        pipelined = simulate(plan, fl, profile,
                             SimConfig(latency_s=NET.latency_s,
                                       bandwidth_Bps=NET.bandwidth_Bps,
                                       slice_size=200, corpus_size=2000,
                                       overlap=True))
        assert pipelined.total_time < serial.total_time

    def test_chrome_trace_export(self):
        plan, fl, profile = single_task_plan()
        result = simulate(plan, fl, profile,
                          SimConfig(slice_size=200, corpus_size=400))
        trace = timeline_to_chrome_trace(result)
        assert len(trace) == 2
        assert all(ev["ph"] == "X" for ev in trace)


class TestBaselineRandom:
    def test_seed_reproducibility(self):
        fl = nine_task_flowline()
        catalog = bundled_qcloud_catalog()
        a = baseline_random(fl, catalog, seed=5)
        b = baseline_random(fl, catalog, seed=5)
        assert a.assignment == b.assignment
        assert a.procurement.describe() == b.procurement.describe()

    def test_hundred_seeds_all_qualify(self):
        fl = nine_task_flowline()
        catalog = bundled_qcloud_catalog()
        for seed in range(100):
            plan = baseline_random(fl, catalog, seed)
            assert check_qualification(plan, fl).ok, seed

    def test_single_type_catalog_colocates_when_possible(self):
        fl = Flowline.build([model("m"), op("o", "integrate")], [("m", "o")])
        catalog = qcloud_vms("20XLARGE320")
        plan = baseline_random(fl, catalog, seed=1)
        # Either one or more instances, but every task must land somewhere.
        assert set(plan.assignment) == {"m", "o"}


class TestBaselineList:
    def test_chain_stays_on_one_vm(self):
        fl = Flowline.build(
            [model("m"), op("o1", "filter"), op("o2", "integrate")],
            [("m", "o1"), ("o1", "o2")])
        profile = TaskProfile({"m": 1.0, "o1": 0.1, "o2": 0.1},
                              {e: 1e5 for e in fl.edges})
        plan = baseline_list(fl, profile, bundled_qcloud_catalog(), NET)
        assert len(set(plan.assignment.values())) == 1

    def test_parallel_gpu_branches_split(self):
        fl = Flowline.build(
            [op("s", "data"), model("a"), model("b"), op("t", "integrate")],
            [("s", "a"), ("s", "b"), ("a", "t"), ("b", "t")])
        profile = TaskProfile({"s": 0.0, "a": 1.0, "b": 1.0, "t": 0.05},
                              {e: 1e4 for e in fl.edges})
        catalog = qcloud_vms("2XLARGE40")
        plan = baseline_list(fl, profile, catalog, NET)
        assert plan.assignment["a"] != plan.assignment["b"]

    def test_models_only(self):
        fl = Flowline.build([model("a"), model("b", "BERTRE", "model-CC")],
                            [("a", "b")])
        profile = TaskProfile({"a": 1.0, "b": 1.0}, {("a", "b"): 1e5})
        plan = baseline_list(fl, profile, bundled_qcloud_catalog(), NET)
        assert check_qualification(plan, fl).ok


class TestSweep:
    def test_three_etas_nine_rows(self):
        fl, profile = synthetic_flowline(3, 6, seed=1)
        rows = sweep_eta(fl, profile, bundled_qcloud_catalog(),
                         [0.2, 0.5, 0.8],
                         SweepConfig(random_plans=12, corpus_size=2000))
        assert len(rows) == 9
        assert {r.scheduler for r in rows} == {"compound-greedy", "list",
                                               "random"}

    def test_singleton_eta_three_rows(self):
        fl, profile = synthetic_flowline(3, 6, seed=1)
        rows = sweep_eta(fl, profile, bundled_qcloud_catalog(), [0.5],
                         SweepConfig(random_plans=8, corpus_size=2000))
        assert len(rows) == 3

    def test_heuristic_beats_random_median(self):
        fl, profile = synthetic_flowline(3, 6, seed=1)
        rows = sweep_eta(fl, profile, bundled_qcloud_catalog(),
                         [0.2, 0.5, 0.8],
                         SweepConfig(random_plans=20, corpus_size=2000))
        by_cell = {}
        for r in rows:
            by_cell.setdefault(r.eta, {})[r.scheduler] = r
        for eta, cell in by_cell.items():
            assert cell["compound-greedy"].J <= cell["random"].J, eta

    def test_cpu_only_flowline_converges(self):
        ops = [op(f"o{i}", "integrate") for i in range(4)]
        fl = Flowline.build(ops, [(f"o{i}", f"o{i+1}") for i in range(3)])
        profile = TaskProfile({v.id: 0.05 for v in fl.vertices},
                              {e: 1e4 for e in fl.edges})
        rows = sweep_eta(fl, profile, bundled_qcloud_catalog(), [0.5],
                         SweepConfig(random_plans=6, corpus_size=1000))
        makespans = {round(r.makespan_s, 9) for r in rows}
        assert len(makespans) == 1

    def test_csv_shape(self):
        fl, profile = synthetic_flowline(3, 6, seed=1)
        rows = sweep_eta(fl, profile, bundled_qcloud_catalog(), [0.5],
                         SweepConfig(random_plans=4, corpus_size=1000))
        csv = sweep_to_csv(rows)
        lines = csv.strip().splitlines()
        assert lines[0].startswith("eta,")
        assert len(lines) == 4


class TestSimulatorAgreementSuite:
    def test_ten_plans_match_analytic(self):
        catalog = bundled_qcloud_catalog()
        fixtures = []
        for shape_seed, (m, o) in enumerate([(3, 6), (3, 11), (4, 8)]):
            fl, profile = synthetic_flowline(m, o, seed=shape_seed)
            fixtures.append((fl, profile,
                             schedule(fl, profile, catalog, 0.5, NET,
                                      fit=PAPER_CURVE)))
            fixtures.append((fl, profile, baseline_list(fl, profile, catalog,
                                                        NET)))
            for seed in range(2):
                fixtures.append((fl, profile,
                                 baseline_random(fl, catalog, seed, NET)))
        assert len(fixtures) >= 10
        config = SimConfig(latency_s=NET.latency_s,
                           bandwidth_Bps=NET.bandwidth_Bps,
                           slice_size=200, corpus_size=2000)
        for fl, profile, plan in fixtures:
            result = simulate(plan, fl, profile, config)
            graph = apply_partition(fl, profile, dict(plan.assignment), NET)
            expected = partitioned_time(graph, 2000, 200)
            assert result.total_time == pytest.approx(expected, rel=1e-9)
