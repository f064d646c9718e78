"""Shared fixtures: a small interval basis, preset nonlinearities and noise, config files on disk."""

import numpy as np
import pytest

from smallmass.core.dynamics import SimConfig
from smallmass.core.noise_model import QSpec
from smallmass.core.nonlinearity import PhiSpec
from smallmass.core.spectral_domain import DomainSpec, build_basis
from smallmass.data.presets import RUN_CONFIG_PRESETS
from smallmass.schemas.run_config import render_run_config


@pytest.fixture
def basis():
    return build_basis(DomainSpec.interval(np.pi, 16))


@pytest.fixture
def canonical_phi():
    return PhiSpec.from_pairs([(1.0, 1.0), (-1.0, 1.5)])


@pytest.fixture
def linear_phi():
    return PhiSpec.from_pairs([(-1.0, 1.0)])


@pytest.fixture
def smooth_q():
    return QSpec(sigma=1.0, gamma=2.0)


@pytest.fixture
def make_config(basis, smooth_q):
    def make(**kwargs):
        values = {"basis": basis, "q": smooth_q, "mass": 0.1, "step": 1e-3, "horizon": 0.05}
        values.update(kwargs)
        return SimConfig(**values)
    return make


@pytest.fixture
def write_config(tmp_path):
    """Write a preset, with per-section overrides, to a .ini file under tmp_path."""
    def write(preset, name=None, **overrides):
        sections = {section: dict(values) for section, values in RUN_CONFIG_PRESETS[preset].items()}
        for section, values in overrides.items():
            sections.setdefault(section, {}).update(values)
        sections.setdefault("run", {})["output"] = str(tmp_path / "out")
        path = tmp_path / f"{name or preset}.ini"
        path.write_text(render_run_config(sections))
        return path
    return write
