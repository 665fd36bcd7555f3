"""JSON serialization for problems, weights, duals and reports.

Matrices are stored row-major as nested lists.  Every document carries a
``schema_version`` field; the current version is 1.
"""

import json

import numpy as np

from .core import BlockPartition, CglProblem, DualCertificate

SCHEMA_VERSION = 1


def _matrix(a):
    return [[float(x) for x in row] for row in np.asarray(a, dtype=float)]


def _vector(a):
    return [float(x) for x in np.asarray(a, dtype=float).ravel()]


def _check_version(doc):
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version {version!r}")


def problem_to_dict(problem):
    return {
        "schema_version": SCHEMA_VERSION,
        "X": _matrix(problem.X),
        "y": _vector(problem.y),
        "blocks": [[int(i) for i in b] for b in problem.partition.blocks],
        "constraints": [
            None if K is None else _matrix(K) for K in problem.constraints
        ],
        "lambda": float(problem.lam),
    }


def problem_from_dict(doc):
    _check_version(doc)
    partition = BlockPartition([np.asarray(b, dtype=int) for b in doc["blocks"]])
    constraints = [
        None if K is None else np.asarray(K, dtype=float) for K in doc["constraints"]
    ]
    return CglProblem(
        np.asarray(doc["X"], dtype=float),
        np.asarray(doc["y"], dtype=float),
        partition,
        constraints,
        float(doc["lambda"]),
    )


def weights_to_dict(w):
    return {"schema_version": SCHEMA_VERSION, "w": _vector(w)}


def weights_from_dict(doc):
    _check_version(doc)
    return np.asarray(doc["w"], dtype=float)


def dual_to_dict(rho):
    return {
        "schema_version": SCHEMA_VERSION,
        "rho": [_vector(r) for r in rho.rho],
    }


def dual_from_dict(doc):
    _check_version(doc)
    return DualCertificate([np.asarray(r, dtype=float) for r in doc["rho"]])


def kkt_report_to_dict(report):
    return {
        "schema_version": SCHEMA_VERSION,
        "residual": _vector(report.residual),
        "correlations": [_vector(c) for c in report.correlations],
        "v_vectors": [_vector(v) for v in report.v_vectors],
        "stationarity_violation": report.stationarity_violation,
        "feasibility_violation": report.feasibility_violation,
        "slackness_violation": report.slackness_violation,
        "equicorrelation": list(report.equicorrelation),
        "active": list(report.active),
        "satisfied": report.satisfied,
        "tol": report.tol,
    }


def dump_json(doc, path):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path):
    with open(path) as fh:
        return json.load(fh)
