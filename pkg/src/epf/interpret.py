"""Absolute normalised contributions (ANC) of LEAR feature groups."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .features import DesignMatrix
from .lear import LassoFit


class GroupMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class AncReport:
    groups: tuple[str, ...]
    values: dict  # group -> ANC, normalised units
    n_forecasts: int

    @property
    def ranking(self) -> list[str]:
        return sorted(self.groups, key=lambda g: (-self.values[g], g))

    def to_dict(self) -> dict:
        return {"schema_version": 1, "n_forecasts": self.n_forecasts,
                "anc": {g: self.values[g] for g in self.groups}, "ranking": self.ranking}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"


def grouped_contributions(fit: LassoFit, rows: DesignMatrix, groups: Sequence[str] | None = None):
    """``C[i, j] = sum_{f in G_j} x[i, f] beta[f]`` for every row of ``rows``."""
    if tuple(rows.columns) != tuple(fit.columns):
        raise GroupMismatchError("design columns do not match the fit's columns")
    gmap = fit.groups or rows.groups
    if set(gmap) != set(fit.columns):
        raise GroupMismatchError("group map does not cover exactly the fit's columns")
    if rows.groups and any(rows.groups.get(c) != gmap[c] for c in fit.columns):
        raise GroupMismatchError("design and fit disagree on feature groups")
    if groups is None:
        groups = list(dict.fromkeys(gmap[c] for c in fit.columns))
    index = {g: j for j, g in enumerate(groups)}
    unknown = {gmap[c] for c in fit.columns} - set(index)
    if unknown:
        raise GroupMismatchError(f"fit has groups not in the report: {sorted(unknown)}")
    member = np.zeros((len(fit.columns), len(groups)))
    for f, c in enumerate(fit.columns):
        member[f, index[gmap[c]]] = 1.0
    return (rows.X * fit.beta) @ member, list(groups)


def anc(pairs: Sequence[tuple[LassoFit, DesignMatrix]]) -> AncReport:
    """ANC over every forecast hour; each row is paired with the fit that produced it."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no forecasts to attribute")
    groups = list(dict.fromkeys(pairs[0][0].groups[c] for c in pairs[0][0].columns))
    total = np.zeros(len(groups))
    n = 0
    for fit, rows in pairs:
        C, _ = grouped_contributions(fit, rows, groups)
        total += np.abs(C).sum(axis=0)
        n += C.shape[0]
    return AncReport(tuple(groups), {g: float(total[j] / n) for j, g in enumerate(groups)}, n)
