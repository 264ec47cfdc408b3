"""On-disk artifacts: trained transform (EPT + sidecar) and training trace.

The EPT matrix is an f32 view for interoperability; the sidecar stores the
exact f64 parameters as hex floats so a run can be resumed bit-exactly.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import FormatError
from .headmodel import DisentanglementTransform
from .tensorio import EptTensor, read_tensor, write_tensor
from .trainer import TrainTrace


def sidecar_path(matrix_path) -> Path:
    p = Path(matrix_path)
    return p.with_name(p.name + ".meta")


def save_transform(u: DisentanglementTransform, matrix_path) -> None:
    write_tensor(EptTensor(u.matrix), matrix_path)
    lines = [
        f"mode: {u.mode}",
        f"dim: {u.dim}",
        "params: " + " ".join(float(x).hex() for x in u.params),
    ]
    dest = sidecar_path(matrix_path)
    tmp = dest.with_name(dest.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, dest)


def load_transform(matrix_path) -> DisentanglementTransform:
    """Load a transform; exact from the sidecar, else free-mode from the matrix."""
    meta = sidecar_path(matrix_path)
    if meta.exists():
        fields = {}
        for line in meta.read_text().splitlines():
            key, _, value = line.partition(":")
            fields[key.strip()] = value.strip()
        try:
            mode = fields["mode"]
            dim = int(fields["dim"])
            params = np.array(
                [float.fromhex(x) for x in fields["params"].split()] or [], dtype=np.float64
            )
            u = DisentanglementTransform(mode, dim, params)
        except (KeyError, ValueError) as e:
            raise FormatError(f"{meta}: bad transform sidecar: {e}") from e
        stored = read_tensor(matrix_path).data.astype(np.float64)
        if np.max(np.abs(stored - u.matrix)) > 1e-5:
            raise FormatError(f"{meta}: sidecar params disagree with stored matrix")
        return u
    mat = read_tensor(matrix_path).data.astype(np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise FormatError(f"{matrix_path}: transform matrix must be square rank-2")
    return DisentanglementTransform("free", mat.shape[0], mat.ravel())


def save_trace(trace: TrainTrace, destination) -> None:
    dest = Path(destination)
    lines = []
    for rec in trace.epochs:
        lines.append(
            f"epoch: {rec.epoch} m={rec.m} loss={rec.loss!r} "
            f"mean-purity={rec.mean_purity!r} min-purity={rec.min_purity!r} "
            f"step-warnings={rec.step_warnings} seconds={rec.seconds:.3f}"
        )
    if trace.preservation is not None:
        p = trace.preservation
        lines.append(
            f"preservation: samples={p.samples} "
            f"max-dev={p.max_abs_logit_dev!r} mismatches={p.argmax_mismatches}"
        )
    tmp = dest.with_name(dest.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, dest)
