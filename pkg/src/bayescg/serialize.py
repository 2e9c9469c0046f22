"""JSON export and import of posteriors.

Matrices are stored column-major as flat lists together with their
shape.  Floats are written with ``repr`` precision, so a reloaded
posterior reproduces every derived statistic bit for bit.
"""

import json
import math

import numpy as np

from .linalg import DENSE_LIMIT
from .priors import Prior, PriorSpec, dense_covariance
from .solver import GaussianPosterior

SCHEMA = "bayescg.posterior/1"


def _mat(M):
    M = np.asarray(M, dtype=float)
    return {"shape": list(M.shape), "data": M.ravel(order="F").tolist()}


def _unmat(obj):
    return np.asarray(obj["data"], dtype=float).reshape(obj["shape"], order="F")


def _num(v):
    v = float(v)
    return v if math.isfinite(v) else None


def posterior_to_dict(post: GaussianPosterior, include_prior_cov=True):
    """Serializable form of a BayesCG posterior."""
    prior = {"mean": post.prior.mean.tolist()}
    if post.prior.spec is not None:
        prior["spec"] = post.prior.spec.to_dict()
    if include_prior_cov and post.d <= DENSE_LIMIT:
        prior["cov"] = _mat(post.prior.cov.to_dense())
    return {
        "schema": SCHEMA,
        "method": "bayescg",
        "d": post.d,
        "m": post.m,
        "mean": post.mean.tolist(),
        "factor": _mat(post.factor),
        "directions": _mat(post.directions),
        "nu": _num(post.nu),
        "residual_history": post.residual_history.tolist(),
        "converged": post.converged,
        "mode": post.info.get("mode"),
        "prior": prior,
    }


def posterior_from_dict(obj) -> GaussianPosterior:
    """Rebuild a posterior written by :func:`posterior_to_dict`.

    The prior covariance is restored as a dense operator, so the reloaded
    object supports every dense computation but not the original
    matrix-free products.
    """
    if obj.get("schema") != SCHEMA or obj.get("method") != "bayescg":
        raise ValueError("not a BayesCG posterior document")
    pr = obj["prior"]
    if "cov" not in pr:
        raise ValueError("posterior document carries no prior covariance")
    spec = PriorSpec.from_dict(pr["spec"]) if "spec" in pr else None
    prior = Prior(np.asarray(pr["mean"], dtype=float), dense_covariance(_unmat(pr["cov"]), check=False), spec)
    nu = obj["nu"]
    return GaussianPosterior(
        np.asarray(obj["mean"], dtype=float),
        _unmat(obj["factor"]),
        prior,
        int(obj["m"]),
        np.asarray(obj["residual_history"], dtype=float),
        math.nan if nu is None else float(nu),
        _unmat(obj["directions"]),
        converged=bool(obj["converged"]),
        info={"mode": obj.get("mode")},
    )


def gaussian_to_dict(mean, cov, method, **extra):
    """Solution-space Gaussian from another method, in the same schema."""
    return {
        "schema": SCHEMA,
        "method": method,
        "d": int(np.asarray(mean).shape[0]),
        "mean": np.asarray(mean, dtype=float).tolist(),
        "cov": _mat(cov),
        **extra,
    }


def dumps(obj):
    return json.dumps(obj, indent=1, allow_nan=False) + "\n"


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def save_posterior(path, post: GaussianPosterior):
    write_json(path, posterior_to_dict(post))


def load_posterior(path) -> GaussianPosterior:
    return posterior_from_dict(read_json(path))
