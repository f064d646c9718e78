# smallmass/data/presets.py
"""Preset nonlinearities, noise operators and run configurations."""

from typing import Dict

# Signed-power terms "c:p" of phi(x) = sum c sign(x)|x|^p
PHI_PRESETS = {
    "canonical": "1:1, -1:1.5",   # x - x|x|^{1/2}, lambda = 1.5, a_phi = 1
    "linear": "-1:1",             # -x, a_phi = -1
    "cubic": "1:1, -1:3",         # x - x^3, rejected (lambda = 3)
}

# Noise amplitudes; parametric specs use q_k = sigma (1 + alpha_k)^(-gamma)
NOISE_PRESETS = {
    "smooth": {"sigma": "1.0", "gamma": "2.0"},       # tail exponent -2 in d = 1
    "unit-low": {"coefficients": "1, 1, 1, 1"},        # first four modes forced
    "rough": {"sigma": "1.0", "gamma": "1.0"},        # trace-divergent in d = 1
}

_DOMAIN = {"dimension": "1", "lengths": "3.141592653589793", "modes": "32"}

_SIM = {
    "mass": "0.1",
    "step": "0.001",
    "horizon": "1.0",
    "stride": "10",
    "scheme": "exponential-euler",
    "noise_mode": "exact",
    "initial": "zero",
}

_METRIC = {"N": "1.0", "beta": "0.01", "nodes": "16"}

_PROBE = {
    "trajectories": "256",
    "burn_in": "0.5",
    "thinning": "10",
    "masses": "1, 0.3, 0.1, 0.03, 0.01",
    "sample_size": "256",
}

_RUN = {"seed": "20240501", "output": "./out", "workers": "1"}

RUN_CONFIG_PRESETS: Dict[str, Dict[str, Dict[str, str]]] = {
    "canonical": {
        "domain": dict(_DOMAIN),
        "phi": {"terms": PHI_PRESETS["canonical"]},
        "noise": dict(NOISE_PRESETS["smooth"]),
        "sim": dict(_SIM),
        "metric": dict(_METRIC),
        "probe": dict(_PROBE),
        "run": dict(_RUN),
    },
    "linear": {
        "domain": {"dimension": "1", "lengths": "3.141592653589793", "modes": "16"},
        "phi": {"terms": PHI_PRESETS["linear"]},
        "noise": dict(NOISE_PRESETS["smooth"]),
        "sim": {**_SIM, "horizon": "2.0"},
        "metric": dict(_METRIC),
        "probe": {**_PROBE, "trajectories": "2000", "masses": "1, 0.1", "burn_in": "1.0"},
        "run": dict(_RUN),
    },
    "rejected-cubic": {
        "domain": dict(_DOMAIN),
        "phi": {"terms": PHI_PRESETS["cubic"]},
        "noise": dict(NOISE_PRESETS["smooth"]),
        "sim": dict(_SIM),
        "run": dict(_RUN),
    },
}
