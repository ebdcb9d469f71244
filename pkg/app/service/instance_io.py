"""
Instance bundles on disk.

A bundle is a directory holding ``manifest.json`` and one raw payload per
matrix (``S.bin``, ``X.bin``, ``y.bin``): little-endian complex128, real and
imaginary float64 interleaved, column-major. ``y`` is stored as an N x 1 matrix.
"""

import logging
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from app.errors.exceptions import InstanceFormatError
from app.models.matrix import ComplexMatrix
from app.schemas.experiment import InstanceManifest, PayloadDescriptor
from app.service.harness_service import Instance
from app.service.operator_service import build_operator

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
PAYLOAD_DTYPE = np.dtype("<c16")


def _write_payload(directory: Path, name: str, matrix: ComplexMatrix) -> PayloadDescriptor:
    m = matrix.reshape(-1, 1) if matrix.ndim == 1 else matrix
    descriptor = PayloadDescriptor(file=f"{name}.bin", rows=m.shape[0], cols=m.shape[1])
    np.asarray(m, dtype=PAYLOAD_DTYPE).ravel(order="F").tofile(directory / descriptor.file)
    return descriptor


def _read_payload(directory: Path, descriptor: PayloadDescriptor) -> ComplexMatrix:
    path = directory / descriptor.file
    try:
        raw = np.fromfile(path, dtype=PAYLOAD_DTYPE)
    except OSError as exc:
        msg = f"cannot read payload {path}: {exc}"
        raise InstanceFormatError(msg) from exc
    if raw.size * PAYLOAD_DTYPE.itemsize != descriptor.nbytes:
        msg = f"{path} holds {raw.size} entries, manifest expects {descriptor.rows}x{descriptor.cols}"
        raise InstanceFormatError(msg)
    return raw.astype(np.complex128).reshape((descriptor.rows, descriptor.cols), order="F")


def write_instance(instance: Instance, directory: Path) -> InstanceManifest:
    """
    Write an instance bundle.

    Raises:
        InstanceFormatError: If the directory cannot be written.
    """
    try:
        directory.mkdir(parents=True, exist_ok=True)
        payloads = {
            "S": _write_payload(directory, "S", instance.s),
            "X": _write_payload(directory, "X", instance.x),
            "y": _write_payload(directory, "y", instance.y),
        }
        l, k = instance.s.shape  # noqa: E741
        manifest = InstanceManifest(
            l=l,
            k=k,
            t=instance.x.shape[1],
            n=instance.y.size,
            seed=instance.seed,
            snr_db=instance.snr_db,
            sigma2=instance.sigma2,
            operator=instance.op_spec,
            payloads=payloads,
        )
        (directory / MANIFEST).write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        msg = f"cannot write instance bundle to {directory}: {exc.strerror}"
        raise InstanceFormatError(msg) from exc
    log.info("instance bundle written to %s", directory)
    return manifest


def read_instance(directory: Path) -> tuple[Instance, InstanceManifest]:
    """
    Load an instance bundle written by ``write_instance``.

    Raises:
        InstanceFormatError: If the manifest or a payload is missing or inconsistent.
    """
    try:
        text = (directory / MANIFEST).read_text(encoding="utf-8")
    except OSError as exc:
        msg = f"cannot read {directory / MANIFEST}: {exc.strerror}"
        raise InstanceFormatError(msg) from exc
    try:
        manifest = InstanceManifest.model_validate_json(text)
    except ValidationError as exc:
        msg = f"{directory / MANIFEST}: {exc.error_count()} invalid fields"
        raise InstanceFormatError(msg) from exc

    s = _read_payload(directory, manifest.payloads["S"])
    x = _read_payload(directory, manifest.payloads["X"])
    y = _read_payload(directory, manifest.payloads["y"])
    expected = {"S": (manifest.l, manifest.k), "X": (manifest.k, manifest.t), "y": (manifest.n, 1)}
    actual = {"S": s.shape, "X": x.shape, "y": y.shape}
    if expected != actual:
        msg = f"payload shapes {actual} do not match manifest dims {expected}"
        raise InstanceFormatError(msg)

    instance = Instance(
        s=s,
        x=x,
        op=build_operator(manifest.operator),
        op_spec=manifest.operator,
        y=y[:, 0].copy(),
        sigma2=manifest.sigma2,
        seed=manifest.seed,
        snr_db=manifest.snr_db,
    )
    return instance, manifest
