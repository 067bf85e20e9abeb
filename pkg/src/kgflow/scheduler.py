"""Cost-aware flowline scheduling: compound, procure, partition, predict.

The pipeline:

1. *Compounding*: each GPU-intensive task anchors a compound that greedily
   absorbs downstream CPU-only tasks whose precursors all lie inside the
   compound. Cutting an edge inside a compound could only add communication
   cost, so compounds are never split. Tasks captured by no compound
   (aggregators fed by several models, and anything downstream of them) are
   orphans.
2. *Procurement*: fit (or accept) the price-to-makespan curve, derive the
   optimal unit price x0 for the preference eta, and buy the instance
   multiset closest to x0 that covers |V^m| GPUs and |V^o| CPU cores.
3. *Greedy partition*: place compounds first, then orphans, each onto the
   VM (GPU capacity descending) with the largest neighbor overlap that still
   has capacity: GPU cards for models, CPU headroom (cores minus one per
   GPU card) for operators.

CPU-only flowlines skip all of this and buy one VM with adequate cores.

Everything is deterministic: identical inputs produce byte-identical plan
JSON.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .costmodel import (
    CostModelError,
    MakespanPriceFit,
    Observation,
    Preference,
    ProcurementPlan,
    ResourceDemand,
    VmType,
    fit_price_makespan,
    objective,
    optimal_unit_price,
    procure,
)
from .flowline import (
    ComputationGraph,
    Flowline,
    NetParams,
    TaskProfile,
    apply_partition,
    makespan,
    partitioned_time,
)


class SchedulingError(ValueError):
    """Infeasible placement or a plan that violates its own constraints."""


@dataclass(frozen=True)
class Compound:
    """An unsplittable unit: one GPU anchor plus its captive operators."""

    members: tuple[str, ...]
    anchor: str | None

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(sorted(self.members,
                                                         key=_natural_key)))


@dataclass(frozen=True)
class CompoundingResult:
    compounds: tuple[Compound, ...]
    orphans: tuple[str, ...]


def _natural_key(text: str):
    return tuple(int(part) if part.isdigit() else part
                 for part in re.split(r"(\d+)", text))


def compound(flowline: Flowline) -> CompoundingResult:
    """GPU-task-guided compounding (fixpoint of the capture rule)."""
    compounds: list[Compound] = []
    captured: set[str] = set()
    for anchor in sorted(flowline.model_ids(), key=_natural_key):
        members = {anchor}
        changed = True
        while changed:
            changed = False
            frontier = sorted({s for m in members
                               for s in flowline.successors[m]
                               if s not in members}, key=_natural_key)
            for succ in frontier:
                node = flowline.node(succ)
                if node.is_model:
                    continue
                if set(flowline.predecessors[succ]) <= members:
                    members.add(succ)
                    changed = True
        compounds.append(Compound(tuple(members), anchor))
        captured |= members
    orphans = tuple(sorted((v.id for v in flowline.vertices
                            if v.id not in captured), key=_natural_key))
    return CompoundingResult(tuple(compounds), orphans)


def _unit_neighbors(flowline: Flowline, members: Sequence[str]) -> set[str]:
    inside = set(members)
    out: set[str] = set()
    for m in members:
        out |= set(flowline.neighbors(m))
    return out - inside


def greedy_partition(flowline: Flowline, compounding: CompoundingResult,
                     vms: Sequence[VmType]) -> dict[str, int]:
    """Assign every task to a VM index, maximizing neighbor overlap.

    ``vms`` must be sorted by GPU capacity descending (``ProcurementPlan.
    expand()`` does this). Placement order: compounds by anchor, then orphans
    by id; candidate VMs by descending overlap with lowest index breaking
    ties. Raises SchedulingError naming the unit when capacity runs out.
    """
    used_gpu = [0] * len(vms)
    used_cpu = [0] * len(vms)
    placed: list[set[str]] = [set() for _ in vms]
    assignment: dict[str, int] = {}

    def place(members: Sequence[str], unit_name: str) -> None:
        models = sum(1 for m in members if flowline.node(m).is_model)
        ops = len(members) - models
        neighborhood = _unit_neighbors(flowline, members)
        overlaps = [len(placed[i] & neighborhood) for i in range(len(vms))]
        order = sorted(range(len(vms)), key=lambda i: (-overlaps[i], i))
        for i in order:
            if used_gpu[i] + models > vms[i].gpu_cards:
                continue
            if used_cpu[i] + ops > vms[i].cpu_headroom:
                continue
            used_gpu[i] += models
            used_cpu[i] += ops
            placed[i].update(members)
            for m in members:
                assignment[m] = i
            return
        raise SchedulingError(
            f"no VM can host {unit_name} (needs {models} GPU card(s), "
            f"{ops} CPU core(s); capacities "
            f"{[(vm.gpu_cards, vm.cpu_headroom) for vm in vms]})")

    for comp in compounding.compounds:
        place(comp.members, f"compound[{comp.anchor}]")
    for orphan in compounding.orphans:
        place([orphan], f"task {orphan!r}")
    return assignment


@dataclass(frozen=True)
class QualificationReport:
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class SchedulePlan:
    """A procurement plus a task-to-VM assignment with predicted costs.

    ``vms`` is the expanded instance list sorted by GPU capacity descending;
    ``assignment`` maps task ids to 0-based indices into it.
    """

    procurement: ProcurementPlan
    vms: tuple[VmType, ...]
    assignment: Mapping[str, int]
    eta: float
    net: NetParams | None = None
    predictions: Mapping[str, float] = field(default_factory=dict)
    scheduler: str = "compound-greedy"

    @property
    def total_unit_price(self) -> float:
        return sum(vm.unit_price for vm in self.vms)


def check_qualification(plan: SchedulePlan,
                        flowline: Flowline) -> QualificationReport:
    """Per-VM resource feasibility and full assignment coverage."""
    violations: list[str] = []
    models = [0] * len(plan.vms)
    ops = [0] * len(plan.vms)
    for task_id in sorted(plan.assignment, key=_natural_key):
        idx = plan.assignment[task_id]
        if not 0 <= idx < len(plan.vms):
            violations.append(f"task {task_id!r} assigned to unknown VM {idx}")
            continue
        if flowline.node(task_id).is_model:
            models[idx] += 1
        else:
            ops[idx] += 1
    for v in sorted(flowline.vertices, key=lambda v: _natural_key(v.id)):
        if v.id not in plan.assignment:
            violations.append(f"uncovered task {v.id!r}")
    for i, vm in enumerate(plan.vms):
        if models[i] > vm.gpu_cards:
            violations.append(
                f"vm {i} ({vm.name}): {models[i]} model task(s) exceed "
                f"{vm.gpu_cards} GPU card(s)")
        if ops[i] > vm.cpu_headroom:
            violations.append(
                f"vm {i} ({vm.name}): {ops[i]} operator task(s) exceed "
                f"{vm.cpu_headroom} spare CPU core(s)")
    return QualificationReport(tuple(violations))


def predict_costs(plan: SchedulePlan, flowline: Flowline, profile: TaskProfile,
                  corpus_size: float, slice_size: float, eta: float,
                  net: NetParams) -> dict[str, float]:
    graph = apply_partition(flowline, profile, dict(plan.assignment), net)
    per_slice = makespan(graph)
    cost_com = partitioned_time(graph, corpus_size, slice_size)
    cost_mon = plan.total_unit_price * cost_com / 3600.0
    return {
        "makespan_s": per_slice,
        "cost_com_s": cost_com,
        "cost_mon": cost_mon,
        "J": objective(cost_com, cost_mon, eta),
    }


def evaluate_plan(plan: SchedulePlan, flowline: Flowline, profile: TaskProfile,
                  corpus_size: float, slice_size: float, eta: float,
                  net: NetParams | None = None) -> dict[str, float]:
    """Analytic cost of an existing plan (must pass qualification)."""
    report = check_qualification(plan, flowline)
    if not report.ok:
        raise SchedulingError("plan fails qualification: "
                              + "; ".join(report.violations))
    if net is None:
        net = plan.net
    if net is None:
        raise SchedulingError("no network parameters: pass net= or use a "
                              "plan that records them")
    return predict_costs(plan, flowline, profile, corpus_size, slice_size,
                         eta, net)


def synthesize_observations(flowline: Flowline, profile: TaskProfile,
                            catalog: Sequence[VmType], net: NetParams,
                            max_instances: int | None = None
                            ) -> list[Observation]:
    """Warm-up-style (price, per-slice makespan) table.

    Enumerates small procurement multisets, partitions the flowline onto
    each, and records the analytic per-slice makespan; combinations that
    cannot host the flowline become infeasible observations (they cap the
    fitted curve's pole).
    """
    n_models = len(flowline.model_ids())
    if max_instances is None:
        max_instances = max(3, min(n_models, 4)) + 1
    types = sorted(catalog, key=lambda v: v.name)
    compounding = compound(flowline)
    observations: dict[tuple[float, float | None], Observation] = {}

    def visit(combo: list[VmType]) -> None:
        if not combo:
            return
        price = sum(vm.unit_price for vm in combo)
        plan = _plan_from_instances(combo)
        vms = plan.expand()
        try:
            assignment = greedy_partition(flowline, compounding, vms)
        except SchedulingError:
            key = (round(price, 9), None)
            observations.setdefault(key, Observation(price, None))
            return
        graph = apply_partition(flowline, profile, assignment, net)
        mk = makespan(graph)
        key = (round(price, 9), round(mk, 12))
        observations.setdefault(key, Observation(price, mk))

    def walk(idx: int, chosen: list[VmType]) -> None:
        visit(list(chosen))
        if idx == len(types) or len(chosen) >= max_instances:
            return
        for j in range(idx, len(types)):
            chosen.append(types[j])
            walk(j, chosen)
            chosen.pop()

    walk(0, [])
    return [observations[k] for k in sorted(observations,
                                            key=lambda k: (k[0], k[1] is None,
                                                           k[1] or 0.0))]


def _plan_from_instances(instances: Iterable[VmType]) -> ProcurementPlan:
    counts: dict[str, int] = {}
    by_name: dict[str, VmType] = {}
    for vm in instances:
        counts[vm.name] = counts.get(vm.name, 0) + 1
        by_name[vm.name] = vm
    return ProcurementPlan(tuple((by_name[name], counts[name])
                                 for name in sorted(counts)))


def schedule(flowline: Flowline, profile: TaskProfile,
             catalog: Sequence[VmType], eta: float, net: NetParams, *,
             fit: MakespanPriceFit | None = None,
             observations: Sequence[Observation] | None = None,
             corpus_size: float = 8000, slice_size: float = 200
             ) -> SchedulePlan:
    """Full scheduling pipeline; returns a qualified plan with predictions.

    The price-to-makespan curve comes from, in order of preference: an
    explicit ``fit``, explicit warm-up ``observations``, or observations
    synthesized from the profile by enumerating candidate procurements.
    """
    Preference(eta)
    profile.check_covers(flowline)
    model_ids = flowline.model_ids()
    n_ops = len(flowline.operator_ids())

    if not model_ids:
        # CPU-only corner case: keep the flowline whole on one adequate VM.
        adequate = [vm for vm in catalog if vm.cpu_headroom >= n_ops]
        if not adequate:
            raise SchedulingError(
                f"no catalog VM has {n_ops} spare CPU cores for a CPU-only "
                "flowline")
        chosen = min(adequate, key=lambda v: (v.unit_price, v.name))
        procurement = ProcurementPlan(((chosen, 1),))
        assignment = {v.id: 0 for v in flowline.vertices}
        plan = SchedulePlan(procurement, procurement.expand(), assignment,
                            eta, net)
    else:
        if fit is None:
            obs = (list(observations) if observations is not None
                   else synthesize_observations(flowline, profile, catalog,
                                                net))
            fit = fit_price_makespan(obs)
        x0 = optimal_unit_price(fit, Preference(eta))
        demand = ResourceDemand(gpus=len(model_ids), cpus=n_ops)
        procurement = procure(catalog, x0, demand)
        vms = procurement.expand()
        compounding = compound(flowline)
        assignment = greedy_partition(flowline, compounding, vms)
        plan = SchedulePlan(procurement, vms, assignment, eta, net)

    predictions = predict_costs(plan, flowline, profile, corpus_size,
                                slice_size, eta, net)
    plan = SchedulePlan(plan.procurement, plan.vms, plan.assignment, eta, net,
                        predictions, plan.scheduler)
    report = check_qualification(plan, flowline)
    if not report.ok:
        raise SchedulingError("scheduler produced an unqualified plan: "
                              + "; ".join(report.violations))
    return plan


# --- plan JSON ------------------------------------------------------------------

def plan_to_dict(plan: SchedulePlan) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "scheduler": plan.scheduler,
        "eta": plan.eta,
        "procurement": [{"type": vm.name, "count": n}
                        for vm, n in plan.procurement.items],
        "vms": [{"name": vm.name, "cpu_cores": vm.cpu_cores,
                 "gpu_cards": vm.gpu_cards, "unit_price": vm.unit_price,
                 "currency": vm.currency} for vm in plan.vms],
        "assignment": {task: idx for task, idx in sorted(plan.assignment.items())},
        "predictions": dict(plan.predictions),
    }
    if plan.net is not None:
        doc["net"] = {"latency_s": plan.net.latency_s,
                      "bandwidth_Bps": plan.net.bandwidth_Bps}
    return doc


def plan_from_dict(doc: Mapping[str, Any]) -> SchedulePlan:
    vms = tuple(VmType(name=v["name"], cpu_cores=int(v["cpu_cores"]),
                       gpu_cards=int(v["gpu_cards"]),
                       unit_price=float(v["unit_price"]),
                       currency=v.get("currency", "USD"))
                for v in doc["vms"])
    by_name = {vm.name: vm for vm in vms}
    items = tuple((by_name[row["type"]], int(row["count"]))
                  for row in doc["procurement"])
    net = None
    if "net" in doc:
        net = NetParams(float(doc["net"]["latency_s"]),
                        float(doc["net"]["bandwidth_Bps"]))
    return SchedulePlan(
        ProcurementPlan(items), vms,
        {task: int(idx) for task, idx in doc["assignment"].items()},
        float(doc.get("eta", 0.5)), net,
        dict(doc.get("predictions", {})),
        doc.get("scheduler", "compound-greedy"))


def plan_to_json(plan: SchedulePlan) -> str:
    return json.dumps(plan_to_dict(plan), indent=2, sort_keys=True) + "\n"


def load_plan(path: str) -> SchedulePlan:
    with open(path, "r", encoding="utf-8") as fh:
        return plan_from_dict(json.load(fh))
