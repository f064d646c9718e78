"""CSV, JSON and sample-file IO, and the configuration digest written into every artifact."""

import hashlib
import logging
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from smallmass.core.functionals import TRAJECTORY_COLUMNS
from smallmass.core.metrics import EmpiricalMeasure
from smallmass.core.spectral_domain import Basis
from smallmass.utils.validators import ValidationError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"

PathLike = Union[str, Path]


def config_hash(sections: Union[BaseModel, Mapping[str, Mapping[str, object]]]) -> str:
    """First 16 hex digits of the SHA-256 of the sorted, whitespace-normalized key=value listing."""
    if isinstance(sections, BaseModel):
        sections = sections.model_dump()
    lines = []
    for section in sorted(sections):
        values = sections[section]
        for key in sorted(values):
            text = " ".join(str(values[key]).split())
            lines.append(f"{section}.{key}={text}")
    digest = hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()
    return digest[:16]


def _prepare(path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_trajectory_csv(table: pd.DataFrame, path: PathLike) -> Path:
    """Trajectory functionals, one row per record, at full precision."""
    missing = [column for column in TRAJECTORY_COLUMNS if column not in table.columns]
    if missing:
        raise ValidationError("size-mismatch", f"trajectory table lacks columns {missing}")
    path = _prepare(path)
    table.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote {len(table)} records to {path}")
    return path


def read_trajectory_csv(path: PathLike) -> pd.DataFrame:
    table = pd.read_csv(path, float_precision="round_trip")
    missing = [column for column in TRAJECTORY_COLUMNS if column not in table.columns]
    if missing:
        raise ValidationError("header-mismatch", f"{path} lacks columns {missing}")
    return table


def write_series_csv(series: Dict[str, np.ndarray], path: PathLike) -> Path:
    """Plotted series of a probe as columns of equal length."""
    path = _prepare(path)
    pd.DataFrame({name: np.asarray(values, dtype=float) for name, values in series.items()}).to_csv(
        path, index=False, float_format=FLOAT_FORMAT
    )
    return path


def write_report_json(report: BaseModel, path: PathLike) -> Path:
    path = _prepare(path)
    path.write_text(report.model_dump_json(indent=2))
    logger.info(f"Wrote report to {path}")
    return path


def save_measure_npz(measure: EmpiricalMeasure, path: PathLike) -> Path:
    """Samples plus the basis header (lengths, modes) and the measure kind."""
    path = _prepare(path)
    domain = measure.basis.domain
    arrays = {
        "lengths": np.asarray(domain.lengths, dtype=float),
        "modes": np.asarray(domain.modes, dtype=int),
        "kind": np.asarray(measure.kind),
        "u": measure.u,
    }
    if measure.v is not None:
        arrays["v"] = measure.v
    np.savez(path, **arrays)
    return path


def load_measure_npz(path: PathLike, basis: Basis) -> EmpiricalMeasure:
    """Samples saved by ``save_measure_npz``; the header must match ``basis``."""
    with np.load(path, allow_pickle=False) as archive:
        lengths = tuple(float(x) for x in archive["lengths"])
        modes = tuple(int(n) for n in archive["modes"])
        if lengths != basis.domain.lengths or modes != basis.domain.modes:
            raise ValidationError(
                "header-mismatch",
                f"samples on lengths={lengths}, modes={modes} do not match {basis.domain.lengths}, {basis.domain.modes}",
            )
        kind = str(archive["kind"])
        u = archive["u"]
        v = archive["v"] if "v" in archive.files else None
    return EmpiricalMeasure(basis=basis, u=u, v=v, kind=kind)
