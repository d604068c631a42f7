"""Dataset CSV ingestion and artifact persistence (model JSON, report CSVs).

Data CSVs are long format with a header ``subject,time,y,x1,...,xp``; rows
need not be sorted. Artifact files start with a ``# `` provenance comment
line (JSON artifacts carry the same information in a ``provenance`` field).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .basis import BSplineBasis
from .model import (FittedModel, LongitudinalDataset, ModelSpec, SubjectRecord,
                    second_difference_penalty)


def _subject_sort_key(label: str):
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, 0.0, label)


def load_csv(path) -> LongitudinalDataset:
    """Load a long-format dataset; groups by subject, sorts by time within subject.

    Subjects are ordered by their label (numerically when possible) so that
    row order in the file never matters. Comment lines starting with '#' are
    skipped.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = None
        for lineno, row in enumerate(reader, start=1):
            if not row or (row[0].lstrip().startswith("#")):
                continue
            if header is None:
                header = [c.strip() for c in row]
                if len(header) < 3 or header[:3] != ["subject", "time", "y"]:
                    raise ValueError(
                        f"{path}: header must start with subject,time,y (line {lineno})")
                continue
            if len(row) != len(header):
                raise ValueError(
                    f"{path}: line {lineno}: {len(row)} fields, expected {len(header)}")
            try:
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
            if not all(np.isfinite(values)):
                raise ValueError(f"{path}: line {lineno}: non-finite value")
            rows.append((row[0].strip(), values))
    if header is None:
        raise ValueError(f"{path}: empty file")
    if not rows:
        raise ValueError(f"{path}: no data rows")
    p = len(header) - 3

    groups: dict[str, list] = {}
    for label, values in rows:
        groups.setdefault(label, []).append(values)
    subjects = []
    for label in sorted(groups, key=_subject_sort_key):
        block = np.array(groups[label], dtype=float)
        order = np.argsort(block[:, 0], kind="stable")
        block = block[order]
        subjects.append(SubjectRecord(
            id=label, times=block[:, 0], responses=block[:, 1],
            covariates=block[:, 2:].reshape(len(block), p)))
    return LongitudinalDataset(subjects=tuple(subjects), p=p)


def _fmt(x) -> str:
    return repr(float(x))


def save_dataset_csv(data: LongitudinalDataset, path, comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["subject", "time", "y"] + [f"x{k}" for k in range(1, data.p + 1)])
        for subj in data.subjects:
            for i in range(subj.n_obs):
                writer.writerow([subj.id, _fmt(subj.times[i]), _fmt(subj.responses[i])]
                                + [_fmt(v) for v in subj.covariates[i]])


def save_model(path, model: FittedModel, spec: ModelSpec,
               penalty_kind: str = "identity", provenance: dict | None = None) -> None:
    """Persist a fitted model with enough structure to rebuild its spec."""
    doc = {
        "provenance": provenance or {},
        "has_intercept": spec.has_intercept,
        "penalize_intercept": spec.penalize_intercept,
        "penalty_kind": penalty_kind,
        "p": spec.p,
        "bases": [
            {"order": b.order, "t_min": b.t_min, "t_max": b.t_max,
             "interior_knots": list(b.interior_knots)}
            for b in spec.bases
        ],
        "lambdas": model.lambdas.tolist(),
        "gammas": [g.tolist() for g in model.gammas],
        "sigma2": model.sigma2,
        "iterations": model.iterations,
        "converged": model.converged,
        "final_delta": model.final_delta,
        "sigma2_clamped": model.sigma2_clamped,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_model(path) -> tuple[ModelSpec, FittedModel, dict]:
    doc = json.loads(Path(path).read_text())
    bases = tuple(
        BSplineBasis(order=b["order"], interior_knots=tuple(b["interior_knots"]),
                     t_min=b["t_min"], t_max=b["t_max"])
        for b in doc["bases"])
    kind = doc.get("penalty_kind", "identity")
    if kind == "identity":
        penalties = None
    elif kind == "second-diff":
        penalties = tuple(second_difference_penalty(b.M) for b in bases)
    else:
        raise ValueError(f"{path}: cannot rebuild penalty kind {kind!r}")
    spec = ModelSpec(bases=bases, penalties=penalties,
                     penalize_intercept=doc["penalize_intercept"],
                     has_intercept=doc["has_intercept"])
    model = FittedModel(
        gammas=tuple(np.asarray(g, dtype=float) for g in doc["gammas"]),
        sigma2=doc["sigma2"], lambdas=np.asarray(doc["lambdas"], dtype=float),
        iterations=doc["iterations"], converged=doc["converged"],
        final_delta=doc["final_delta"], sigma2_clamped=doc["sigma2_clamped"])
    return spec, model, doc.get("provenance", {})


def write_csv(path, header: list[str], rows, comment: str | None = None) -> None:
    """Write a small table; floats use repr so round-trips are exact."""
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else
                             (_fmt(v) if isinstance(v, (float, np.floating)) else str(v))
                             for v in row])
