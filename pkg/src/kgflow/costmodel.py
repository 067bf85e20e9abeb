"""Economic models for cloud procurement.

Two fitted relations drive scheduling decisions:

* linear instance pricing, ``price = theta1 * cpu_cores + theta2 * gpu_cards``,
  fitted over a VM catalog;
* the price-to-minimum-makespan curve ``g(x) = a + b / (x - c)``, fitted over
  (unit price, measured makespan) observations. ``c`` acts as the
  infeasibility threshold: below it no procurement can run the workload, so
  any observation with an infinite/absent makespan caps ``c`` from above.

From a fitted curve and a preference ``eta`` the optimal unit price point is
closed-form: ``x0 = sqrt((b / a) * (eta / (1 - eta))) + c``. Procurement then
picks the instance multiset whose total unit price is closest to ``x0``
(a small unbounded-knapsack search).

Unit warning: processing time is in seconds and money in currency units, so
the weighted objective mixes incommensurate quantities. ``objective`` applies
the raw weights; when ranking a candidate set use
``normalized_objectives``, which min-max normalizes both cost axes over the
candidates first so that ``eta`` acts as a meaningful dial.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import least_squares, nnls


class CostModelError(ValueError):
    """Bad input data or a fit that cannot be carried out."""


@dataclass(frozen=True)
class VmType:
    """One priced machine shape from a vendor catalog."""

    name: str
    cpu_cores: int
    gpu_cards: int
    unit_price: float
    currency: str = "USD"

    def __post_init__(self):
        if self.cpu_cores < 1:
            raise CostModelError(f"{self.name}: cpu_cores must be >= 1")
        if self.gpu_cards < 0:
            raise CostModelError(f"{self.name}: gpu_cards must be >= 0")
        if self.unit_price <= 0:
            raise CostModelError(f"{self.name}: unit_price must be > 0")

    @property
    def cpu_headroom(self) -> int:
        """Cores left for operators once each GPU's data loader takes one."""
        return self.cpu_cores - self.gpu_cards


@dataclass(frozen=True)
class PriceFit:
    """Fitted linear price coefficients plus per-row relative errors."""

    theta1: float  # currency per CPU-core-hour
    theta2: float  # currency per GPU-hour
    residuals: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.theta1 < 0 or self.theta2 < 0:
            raise CostModelError("price coefficients must be non-negative")


@dataclass(frozen=True)
class MakespanPriceFit:
    """Coefficients of g(x) = a + b/(x - c) plus per-point residuals."""

    a: float  # seconds, asymptotic makespan
    b: float  # seconds * price
    c: float  # price, infeasibility threshold
    residuals: tuple[float, ...] = ()

    def __post_init__(self):
        if min(self.a, self.b, self.c) <= 0:
            raise CostModelError(
                f"curve coefficients must be positive, got "
                f"a={self.a}, b={self.b}, c={self.c}")

    def makespan_at(self, unit_price: float) -> float:
        if unit_price <= self.c:
            return math.inf
        return self.a + self.b / (unit_price - self.c)


@dataclass(frozen=True)
class Preference:
    """Trade-off dial between processing time (eta) and money (1 - eta)."""

    eta: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.eta < 1.0:
            raise CostModelError(f"eta out of range [0, 1): {self.eta}")


@dataclass(frozen=True)
class ResourceDemand:
    gpus: int
    cpus: int

    def __post_init__(self):
        if self.gpus < 0 or self.cpus < 0:
            raise CostModelError("demand must be non-negative")


@dataclass(frozen=True)
class ProcurementPlan:
    """A purchased multiset of VM types."""

    items: tuple[tuple[VmType, int], ...]

    @property
    def total_price(self) -> float:
        return sum(vm.unit_price * n for vm, n in self.items)

    @property
    def total_gpus(self) -> int:
        return sum(vm.gpu_cards * n for vm, n in self.items)

    @property
    def total_cpu_headroom(self) -> int:
        return sum(vm.cpu_headroom * n for vm, n in self.items)

    @property
    def instance_count(self) -> int:
        return sum(n for _, n in self.items)

    def expand(self) -> tuple[VmType, ...]:
        """Individual VMs, sorted by GPU capacity descending (stable)."""
        vms = [vm for vm, n in self.items for _ in range(n)]
        return tuple(sorted(vms, key=lambda v: (-v.gpu_cards, -v.cpu_cores,
                                                v.name)))

    def describe(self) -> str:
        return " + ".join(f"{vm.name} x{n}" for vm, n in self.items)


def vm_price(cpu: float, gpu: float, fit: PriceFit) -> float:
    """Estimated hourly price of a (cpu, gpu) shape under the linear model."""
    if cpu < 0 or gpu < 0:
        raise CostModelError("negative resource count")
    return fit.theta1 * cpu + fit.theta2 * gpu


def relative_errors(catalog: Sequence[VmType], theta1: float,
                    theta2: float) -> dict[str, float]:
    """Per-row relative error (fraction of the quoted price) at given thetas."""
    out = {}
    for vm in catalog:
        predicted = theta1 * vm.cpu_cores + theta2 * vm.gpu_cards
        out[vm.name] = (vm.unit_price - predicted) / vm.unit_price
    return out


def fit_price_linear(catalog: Sequence[VmType], *,
                     relative: bool = True) -> PriceFit:
    """Least-squares fit of the linear CPU/GPU pricing model.

    By default residuals are relative (each row scaled by its quoted price),
    matching how catalog pricing errors are conventionally reported; pass
    ``relative=False`` for plain absolute least squares. Coefficients are
    constrained non-negative.
    """
    if len(catalog) < 2:
        raise CostModelError("need at least 2 catalog rows to fit prices")
    X = np.array([[vm.cpu_cores, vm.gpu_cards] for vm in catalog], float)
    y = np.array([vm.unit_price for vm in catalog], float)
    if np.linalg.matrix_rank(X) < 2:
        raise CostModelError("catalog rows are linearly dependent; add a row "
                             "with a different CPU:GPU ratio")
    if relative:
        theta, _ = nnls(X / y[:, None], np.ones_like(y))
    else:
        theta, _ = nnls(X, y)
    residuals = tuple(relative_errors(catalog, theta[0], theta[1]).items())
    return PriceFit(float(theta[0]), float(theta[1]), residuals)


@dataclass(frozen=True)
class Observation:
    """One (unit price, measured makespan) point; makespan None = infeasible."""

    unit_price: float
    makespan_s: float | None = None

    @property
    def feasible(self) -> bool:
        return self.makespan_s is not None and math.isfinite(self.makespan_s)


def pareto_frontier(observations: Iterable[Observation]) -> list[Observation]:
    """Minimum-makespan frontier: per-price minima, dominated points dropped.

    A point is dominated when a cheaper (or equally cheap) point achieves a
    strictly smaller makespan.
    """
    by_price: dict[float, float] = {}
    for obs in observations:
        if not obs.feasible:
            continue
        prev = by_price.get(obs.unit_price)
        if prev is None or obs.makespan_s < prev:
            by_price[obs.unit_price] = obs.makespan_s
    frontier: list[Observation] = []
    best = math.inf
    for price in sorted(by_price):
        mk = by_price[price]
        if not best < mk:
            frontier.append(Observation(price, mk))
        best = min(best, mk)
    return frontier


def fit_price_makespan(observations: Sequence[Observation], *,
                       multistart: int = 64) -> MakespanPriceFit:
    """Fit g(x) = a + b/(x - c) to the Pareto frontier of the observations.

    Damped least squares polished from the best of ``multistart`` profiled
    initializations of c (for fixed c the model is linear in a and b). The
    pole c is bounded above by the cheapest feasible price and, when any
    infeasible observation is present, by the largest infeasible price --
    the curve must blow up there.
    """
    frontier = pareto_frontier(observations)
    if len(frontier) < 3:
        raise CostModelError(
            f"need >= 3 Pareto-frontier points to fit the curve, "
            f"got {len(frontier)}")
    x = np.array([o.unit_price for o in frontier])
    y = np.array([o.makespan_s for o in frontier])

    c_cap = float(x.min()) * (1.0 - 1e-9)
    infeasible = [o.unit_price for o in observations if not o.feasible]
    if infeasible and max(infeasible) < x.min():
        c_cap = min(c_cap, max(infeasible))

    def profiled(c: float) -> tuple[float, float, float]:
        design = np.column_stack([np.ones_like(x), 1.0 / (x - c)])
        ab, *_ = np.linalg.lstsq(design, y, rcond=None)
        r = design @ ab - y
        return float(ab[0]), float(ab[1]), float(r @ r)

    best = None
    for c0 in np.linspace(c_cap * 1e-3, c_cap, multistart):
        a0, b0, ss = profiled(c0)
        if a0 > 0 and b0 > 0 and (best is None or ss < best[3]):
            best = (a0, b0, c0, ss)
    if best is None:
        raise CostModelError(
            "divergent fit: no initialization with positive coefficients; "
            f"frontier x={x.tolist()}, y={y.tolist()}")

    def model_residuals(params):
        a, b, c = params
        return a + b / (x - c) - y

    tiny = 1e-12
    solution = least_squares(
        model_residuals, x0=np.array(best[:3]),
        bounds=([tiny, tiny, tiny], [np.inf, np.inf, c_cap]), method="trf")
    if not solution.success:
        raise CostModelError(f"divergent fit: {solution.message}; "
                             f"start={best[:3]}")
    a, b, c = (float(v) for v in solution.x)
    return MakespanPriceFit(a, b, c, tuple(float(r) for r in solution.fun))


def optimal_unit_price(fit: MakespanPriceFit, preference: Preference) -> float:
    """Closed-form minimizer of J(x) = eta*g(x) + (1-eta)*x*g(x)."""
    eta = preference.eta
    if eta >= 1.0:
        raise CostModelError("eta = 1 is degenerate (pure-time preference); "
                             "cap procurement in the scheduler instead")
    return math.sqrt((fit.b / fit.a) * (eta / (1.0 - eta))) + fit.c


def objective(cost_com: float, cost_mon: float, eta: float) -> float:
    """Raw weighted objective J = eta*cost_com + (1-eta)*cost_mon.

    The two terms carry different units (seconds vs currency); prefer
    ``normalized_objectives`` when comparing plans against each other.
    """
    Preference(eta)
    return eta * cost_com + (1.0 - eta) * cost_mon


def normalized_objectives(costs: Sequence[tuple[float, float]],
                          eta: float) -> list[float]:
    """Min-max normalize both cost axes over a candidate set, then weight."""
    Preference(eta)
    if not costs:
        return []

    def norm(values):
        lo, hi = min(values), max(values)
        if hi == lo:
            return [0.0 for _ in values]
        return [(v - lo) / (hi - lo) for v in values]

    coms = norm([c for c, _ in costs])
    mons = norm([m for _, m in costs])
    return [eta * c + (1.0 - eta) * m for c, m in zip(coms, mons)]


def procure(catalog: Sequence[VmType], x0: float,
            demand: ResourceDemand) -> ProcurementPlan:
    """Instance multiset closest in total unit price to x0 meeting demand.

    Feasibility: total GPU cards >= demand.gpus and total CPU headroom
    (cores minus one per GPU card) >= demand.cpus. Ties on |price - x0| fall
    to the plan with fewer instances, then the larger single-instance GPU
    count (high-end instances beat stacks of divided low-end ones), then
    lexicographic names. The search enumerates plans up to a price bound of
    max(2*x0, cheapest feasible), growing the bound if nothing fits.
    """
    if not catalog:
        raise CostModelError("empty catalog")
    types = sorted(catalog, key=lambda v: v.name)
    bound = max(2.0 * x0, max(v.unit_price for v in types))
    for _ in range(16):
        best = _search_plans(types, x0, demand, bound)
        if best is not None:
            return best
        bound *= 2.0
    raise CostModelError(
        f"demand {demand} infeasible with catalog "
        f"{[v.name for v in types]} (searched up to price {bound:.2f})")


def _search_plans(types: Sequence[VmType], x0: float, demand: ResourceDemand,
                  bound: float) -> ProcurementPlan | None:
    best_key: tuple | None = None
    best_counts: tuple[int, ...] | None = None

    counts = [0] * len(types)

    def consider():
        nonlocal best_key, best_counts
        gpus = sum(v.gpu_cards * n for v, n in zip(types, counts))
        cpus = sum(v.cpu_headroom * n for v, n in zip(types, counts))
        if gpus < demand.gpus or cpus < demand.cpus:
            return
        price = sum(v.unit_price * n for v, n in zip(types, counts))
        max_gpu = max((v.gpu_cards for v, n in zip(types, counts) if n > 0),
                      default=0)
        names = tuple(v.name for v, n in zip(types, counts) for _ in range(n))
        # Price distances rounded so float ulps in equal-priced sums cannot
        # mask a genuine tie (catalog prices have at most 2 decimals).
        key = (round(abs(price - x0), 9), sum(counts), -max_gpu, names)
        if best_key is None or key < best_key:
            best_key = key
            best_counts = tuple(counts)

    def walk(idx: int, price_left: float):
        if idx == len(types):
            consider()
            return
        vm = types[idx]
        max_n = int(price_left // vm.unit_price)
        for n in range(max_n + 1):
            counts[idx] = n
            walk(idx + 1, price_left - n * vm.unit_price)
        counts[idx] = 0

    walk(0, bound)
    if best_counts is None:
        return None
    items = tuple((vm, n) for vm, n in zip(types, best_counts) if n > 0)
    return ProcurementPlan(items)


# --- catalog / observation I/O -------------------------------------------------

def catalog_from_dict(doc: Mapping[str, Any]) -> list[VmType]:
    currency = doc.get("currency", "USD")
    return [VmType(name=row["name"], cpu_cores=int(row["cpu_cores"]),
                   gpu_cards=int(row["gpu_cards"]),
                   unit_price=float(row["unit_price"]),
                   currency=row.get("currency", currency))
            for row in doc["vm_types"]]


def load_catalog(path: str) -> list[VmType]:
    with open(path, "r", encoding="utf-8") as fh:
        return catalog_from_dict(json.load(fh))


def observations_from_dict(doc: Mapping[str, Any]) -> list[Observation]:
    out = []
    for row in doc["observations"]:
        mk = row.get("makespan_s")
        out.append(Observation(float(row["unit_price"]),
                               None if mk is None else float(mk)))
    return out


def load_observations(path: str) -> list[Observation]:
    with open(path, "r", encoding="utf-8") as fh:
        return observations_from_dict(json.load(fh))


def _bundled(name: str) -> dict:
    blob = resources.files("kgflow").joinpath("data", name).read_text("utf-8")
    return json.loads(blob)


def bundled_g4dn_catalog() -> list[VmType]:
    """The 7-row AWS g4dn on-demand catalog."""
    return catalog_from_dict(_bundled("g4dn_catalog.json"))


def bundled_qcloud_catalog() -> list[VmType]:
    """The 4-row qCloud GN10Xp catalog."""
    return catalog_from_dict(_bundled("qcloud_catalog.json"))


def bundled_qcloud_observations() -> list[Observation]:
    """Price/makespan measurements of the example pipeline on qCloud."""
    return observations_from_dict(_bundled("qcloud_observations.json"))


def fit_to_dict(fit: MakespanPriceFit) -> dict[str, Any]:
    return {"a": fit.a, "b": fit.b, "c": fit.c,
            "residuals": list(fit.residuals)}


def fit_from_dict(doc: Mapping[str, Any]) -> MakespanPriceFit:
    return MakespanPriceFit(float(doc["a"]), float(doc["b"]), float(doc["c"]),
                            tuple(float(r) for r in doc.get("residuals", ())))
