"""Run reports: per-query certificates, aggregation and (de)serialization."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .search import BOUNDED, INFEASIBLE_QUERY, Certificate

SCHEMA_VERSION = 1


@dataclass
class QueryRecord:
    index: int
    label: object
    certificate: Certificate

    def to_dict(self) -> dict:
        return {"index": self.index, "label": self.label, **self.certificate.to_dict(trace=True)}

    @classmethod
    def from_dict(cls, obj) -> QueryRecord:
        return cls(obj["index"], obj["label"], Certificate.from_dict(obj))


@dataclass
class RunRecord:
    seed: int
    n_generators: int
    queries: list = field(default_factory=list)

    def epsilons(self) -> np.ndarray:
        """Finite upper bounds of the queries that were classified correctly."""
        eps = [q.certificate.epsilon for q in self.queries
               if q.certificate.status != INFEASIBLE_QUERY]
        eps = np.asarray(eps, dtype=float)
        return eps[np.isfinite(eps)]

    def to_dict(self) -> dict:
        return {"seed": self.seed, "n_generators": self.n_generators,
                "queries": [q.to_dict() for q in self.queries]}

    @classmethod
    def from_dict(cls, obj) -> RunRecord:
        return cls(obj["seed"], obj["n_generators"],
                   [QueryRecord.from_dict(q) for q in obj["queries"]])


def mean_ci(values, level: float = 0.95) -> tuple[float, float, float]:
    """Mean and two-sided t-interval; the interval is NaN for fewer than 2 values."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return float("nan"), float("nan"), float("nan")
    mean = float(values.mean())
    if values.size < 2:
        return mean, float("nan"), float("nan")
    half = float(stats.t.ppf(0.5 + level / 2, values.size - 1)
                 * values.std(ddof=1) / np.sqrt(values.size))
    return mean, mean - half, mean + half


def summarize(runs: list[RunRecord]) -> dict:
    """Aggregate statistics.

    The mean is taken over all correctly classified queries with a finite
    bound.  With several runs the confidence interval is over the per-run
    means; with one run it is over the individual queries.
    """
    per_run = [r.epsilons() for r in runs]
    pooled = np.concatenate(per_run) if per_run else np.zeros(0)
    run_means = [float(e.mean()) for e in per_run if e.size]
    spread = run_means if len(runs) > 1 else pooled
    _, lo, hi = mean_ci(spread)
    certs = [q.certificate for r in runs for q in r.queries]
    counted = [c for c in certs if c.status != INFEASIBLE_QUERY]
    lowers = np.array([c.lower_bound for c in counted], dtype=float)
    statuses: dict = {}
    for c in certs:
        statuses[c.status] = statuses.get(c.status, 0) + 1
    return {
        "mean_epsilon": float(pooled.mean()) if pooled.size else None,
        "ci95": [None if np.isnan(lo) else lo, None if np.isnan(hi) else hi],
        "run_means": run_means,
        "mean_lower_bound": float(lowers.mean()) if lowers.size else None,
        "timeout_count": sum(c.timed_out or c.status == BOUNDED for c in certs),
        "status_counts": statuses,
        "n_queries": len(certs),
        "total_wall_time": float(sum(c.wall_time for c in certs)),
    }


@dataclass
class RunReport:
    config: dict
    dataset: dict
    runs: list = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    @property
    def summary(self) -> dict:
        return summarize(self.runs)

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version, "config": self.config,
                "dataset": self.dataset, "summary": self.summary,
                "runs": [r.to_dict() for r in self.runs]}

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, obj) -> RunReport:
        version = obj.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema version {version!r}")
        return cls(obj["config"], obj["dataset"],
                   [RunRecord.from_dict(r) for r in obj["runs"]], version)

    @classmethod
    def from_json(cls, text: str) -> RunReport:
        return cls.from_dict(json.loads(text))

    def write(self, path, emit: str = "json") -> None:
        with open(path, "w", newline="") as fh:
            self.dump(fh, emit)

    def dump(self, fh, emit: str = "json") -> None:
        if emit == "json":
            fh.write(self.to_json())
            fh.write("\n")
        elif emit == "csv":
            self.write_csv(fh)
        else:
            raise ValueError(f"unknown output format {emit!r}")

    def write_csv(self, fh) -> None:
        """Per-query rows only; JSON is the lossless format."""
        w = csv.writer(fh)
        w.writerow(["run", "seed", "index", "label", "status", "epsilon", "lower_bound",
                    "cells_visited", "facets_solved", "facets_pruned", "wall_time", "timed_out"])
        for r, run in enumerate(self.runs):
            for q in run.queries:
                c = q.certificate
                w.writerow([r, run.seed, q.index, q.label, c.status, repr(c.epsilon),
                            repr(c.lower_bound), c.cells_visited, c.facets_solved,
                            c.facets_pruned, repr(c.wall_time), int(c.timed_out)])


@dataclass(frozen=True)
class ClosenessReport:
    per_class_min_kl: tuple
    closeness: float

    def to_dict(self) -> dict:
        return {"per_class_min_kl": list(self.per_class_min_kl), "closeness": self.closeness}


def gaussian_kl(mu_p, mu_q) -> float:
    """KL divergence between two unit-covariance Gaussians: ``|mu_p - mu_q|^2 / 2``."""
    diff = np.asarray(mu_p, float) - np.asarray(mu_q, float)
    return 0.5 * float(diff @ diff)


def class_closeness(means) -> ClosenessReport:
    """Mean over classes of the smallest KL divergence to any other class.

    Each class is compared with the others only; including the class itself
    would make every minimum zero.
    """
    means = [np.asarray(m, float) for m in means]
    if len(means) < 2:
        raise ValueError("closeness needs at least two classes")
    mins = tuple(min(gaussian_kl(mi, mj) for j, mj in enumerate(means) if j != i)
                 for i, mi in enumerate(means))
    return ClosenessReport(mins, float(np.mean(mins)))


def two_gaussian_closeness(alpha: float, d: int = 1) -> ClosenessReport:
    """Closeness of the ``N(+alpha e1, I)`` / ``N(-alpha e1, I)`` pair, i.e. ``2 alpha^2``."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    e1 = np.zeros(d)
    e1[0] = alpha
    return class_closeness([e1, -e1])


__all__ = ["RunReport", "RunRecord", "QueryRecord", "ClosenessReport", "summarize",
           "mean_ci", "class_closeness", "two_gaussian_closeness", "gaussian_kl",
           "SCHEMA_VERSION"]
