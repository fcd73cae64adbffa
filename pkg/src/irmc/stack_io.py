"""Binary persistence for fitted surrogate stacks.

Self-describing format: magic ``IRMC``, a format version, the step count and
state dimension, a JSON metadata blob, then one record per step holding the
training domain and the surrogate coefficients (little-endian float64).
Stacks round-trip exactly: loaded surrogates reproduce in-memory predictions
bit for bit.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import VersionMismatch
from .surrogate import GpHyper, GpSurrogate, SurrogateStack, TpsSurrogate

MAGIC = b"IRMC"
FORMAT_VERSION = 1

_KIND_NONE, _KIND_GP, _KIND_TPS = 0, 1, 2
_GP_KERNELS = {"se": 0, "matern52": 1}
_TPS_KERNELS = {"tps": 0, "cubic": 1}
_GP_KERNELS_INV = {v: k for k, v in _GP_KERNELS.items()}
_TPS_KERNELS_INV = {v: k for k, v in _TPS_KERNELS.items()}


def _write_array(fh, arr):
    a = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
    fh.write(struct.pack("<I", a.size))
    fh.write(a.tobytes())


def _read_array(fh, shape=None):
    (size,) = struct.unpack("<I", fh.read(4))
    a = np.frombuffer(fh.read(8 * size), dtype="<f8").copy()
    return a.reshape(shape) if shape is not None else a


def _write_gp(fh, fit: GpSurrogate):
    n, d = fit.train_x.shape
    fh.write(struct.pack("<BII", _GP_KERNELS[fit.kernel], n, d))
    fh.write(struct.pack("<dddd", fit.hyper.signal_var, fit.hyper.noise_var,
                         fit.nugget, fit.mean_const))
    _write_array(fh, fit.hyper.lengthscales)
    _write_array(fh, fit.train_x)
    _write_array(fh, fit.train_y)
    _write_array(fh, fit.alpha)


def _read_gp(fh) -> GpSurrogate:
    kid, n, d = struct.unpack("<BII", fh.read(9))
    sv, nv, nugget, mean_const = struct.unpack("<dddd", fh.read(32))
    ls = _read_array(fh)
    train_x = _read_array(fh, (n, d))
    train_y = _read_array(fh)
    alpha = _read_array(fh)
    hyper = GpHyper(lengthscales=ls, signal_var=sv, noise_var=nv)
    return GpSurrogate(train_x, train_y, hyper, mean_const, alpha, nugget,
                       kernel=_GP_KERNELS_INV[kid])


def _write_tps(fh, fit: TpsSurrogate):
    n, d = fit.knots.shape
    fh.write(struct.pack("<BII", _TPS_KERNELS[fit.kernel], n, d))
    fh.write(struct.pack("<d", fit.lam))
    _write_array(fh, fit.lo)
    _write_array(fh, fit.hi)
    _write_array(fh, fit.coef_beta)
    _write_array(fh, fit.knots)
    _write_array(fh, fit.coef_alpha)


def _read_tps(fh) -> TpsSurrogate:
    kid, n, d = struct.unpack("<BII", fh.read(9))
    (lam,) = struct.unpack("<d", fh.read(8))
    lo = _read_array(fh)
    hi = _read_array(fh)
    beta = _read_array(fh)
    knots = _read_array(fh, (n, d))
    alpha = _read_array(fh)
    return TpsSurrogate(knots, alpha, beta, lam, lo, hi,
                        kernel=_TPS_KERNELS_INV[kid])


def _write_fit(fh, fit):
    if fit is None:
        fh.write(struct.pack("<B", _KIND_NONE))
    elif isinstance(fit, GpSurrogate):
        fh.write(struct.pack("<B", _KIND_GP))
        _write_gp(fh, fit)
    elif isinstance(fit, TpsSurrogate):
        fh.write(struct.pack("<B", _KIND_TPS))
        _write_tps(fh, fit)
    else:
        raise TypeError(f"cannot persist surrogate of type {type(fit).__name__}")


def _read_fit(fh):
    (kind,) = struct.unpack("<B", fh.read(1))
    if kind == _KIND_NONE:
        return None
    if kind == _KIND_GP:
        return _read_gp(fh)
    if kind == _KIND_TPS:
        return _read_tps(fh)
    raise VersionMismatch(f"unknown surrogate record kind {kind}")


def save_stack(stack: SurrogateStack, path) -> None:
    meta = json.dumps(stack.meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, stack.n_steps, stack.dim))
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        for k in range(stack.n_steps):
            _write_array(fh, stack.domains[k])
            _write_fit(fh, stack.fits[k])
            _write_fit(fh, stack.zfits[k])


def load_stack(path, terminal=None) -> SurrogateStack:
    """Load a persisted stack; ``terminal`` re-attaches the terminal map."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise VersionMismatch(f"not a surrogate stack file: magic {magic!r}")
        version, n_steps, dim = struct.unpack("<III", fh.read(12))
        if version != FORMAT_VERSION:
            raise VersionMismatch(f"stack format version {version} unsupported")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        domains = np.zeros((n_steps, dim, 2))
        fits = []
        zfits = []
        for k in range(n_steps):
            domains[k] = _read_array(fh, (dim, 2))
            fits.append(_read_fit(fh))
            zfits.append(_read_fit(fh))
    return SurrogateStack(n_steps=n_steps, dim=dim, fits=fits, terminal=terminal,
                          domains=domains, zfits=zfits, meta=meta)
