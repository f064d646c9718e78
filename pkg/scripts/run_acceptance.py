"""Run the acceptance probes end to end and write their reports."""

import argparse
import logging
import sys
import time
from pathlib import Path

# Add the parent directory to the path so we can import smallmass modules
sys.path.append(str(Path(__file__).parent.parent))

from smallmass.data.presets import RUN_CONFIG_PRESETS
from smallmass.schemas.run_config import parse_run_config
from smallmass.core.probes import run_probe
from smallmass.utils.persistence import write_report_json, write_series_csv
from smallmass.utils.validators import ValidationError

UNIT_NOISE = {"coefficients": ", ".join(["1"] * 16)}

# (label, preset, section overrides, probe); a [noise] override replaces the whole section
ACCEPTANCE = [
    ("langevin-m1", "linear", {"noise": UNIT_NOISE, "sim": {"horizon": "10"},
                               "probe": {"masses": "1", "tolerance": "0.02", "burn_in": "0"}}, "linear-check"),
    ("langevin-m0.5", "linear", {"noise": UNIT_NOISE, "sim": {"horizon": "5"},
                                 "probe": {"masses": "0.5", "tolerance": "0.02", "burn_in": "0"}}, "linear-check"),
    ("langevin-m0.1", "linear", {"noise": UNIT_NOISE, "sim": {"horizon": "1"},
                                 "probe": {"masses": "0.1", "tolerance": "0.02", "burn_in": "0"}}, "linear-check"),
    ("stationary-variance", "linear", {"sim": {"horizon": "6"},
                                       "probe": {"masses": "0, 0.1, 1", "burn_in": "3", "thinning": "20"}},
     "invariant-sample"),
    ("linear-coincide", "linear", {"sim": {"horizon": "6"},
                                   "probe": {"masses": "1", "burn_in": "3", "thinning": "20",
                                             "expect": "coincide", "trajectories": "512"}},
     "invariant-gap"),
    ("tangent", "canonical", {"probe": {"masses": "0.1", "burn_in": "0"}}, "tangent-check"),
    ("generator", "canonical", {"probe": {"masses": "0.1", "burn_in": "0"}}, "generator-check"),
    ("moments", "canonical", {"sim": {"horizon": "4"}, "probe": {"masses": "1, 0.1, 0.01", "burn_in": "0"}},
     "moments"),
    ("contraction", "canonical", {"sim": {"horizon": "4"},
                                  "probe": {"masses": "1, 0.1, 0.01", "burn_in": "0"}}, "contraction"),
    ("contraction-linear", "linear", {"sim": {"horizon": "8"},
                                      "probe": {"masses": "1, 0.1, 0.01", "burn_in": "0", "trajectories": "64"}},
     "contraction"),
    ("mass-gap", "canonical", {"domain": {"modes": "64"}, "probe": {"burn_in": "0"}}, "mass-gap"),
    ("invariant-gap", "canonical", {"sim": {"horizon": "4"},
                                    "probe": {"burn_in": "2", "thinning": "10", "sample_size": "512",
                                              "masses": "1, 0.1, 0.01"}}, "invariant-gap"),
    ("metric-audit", "canonical", {"probe": {"masses": "1, 0.1, 0.01", "burn_in": "0"}}, "metric-audit"),
    ("convergence", "canonical", {"sim": {"step": "0.01"},
                                  "probe": {"masses": "1, 0.1, 0", "burn_in": "0", "trajectories": "64"}},
     "convergence"),
]


def build_sections(preset: str, overrides: dict) -> dict:
    sections = {name: dict(values) for name, values in RUN_CONFIG_PRESETS[preset].items()}
    for name, values in overrides.items():
        if name == "noise":
            sections[name] = dict(values)
        else:
            sections.setdefault(name, {}).update(values)
    return sections


def main():
    parser = argparse.ArgumentParser(description="Run the acceptance probes")
    parser.add_argument("--out", default="./out/acceptance", help="Report directory")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--only", nargs="*", help="Labels to run")
    args = parser.parse_args()

    logging.basicConfig(level=logging.WARNING, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    out = Path(args.out)
    failures = []

    for label, preset, overrides, probe in ACCEPTANCE:
        if args.only and label not in args.only:
            continue
        sections = build_sections(preset, overrides)
        sections["run"]["workers"] = str(args.workers)
        started = time.time()
        try:
            run_config = parse_run_config(sections)
            digest = run_config.digest()
            result = run_probe(probe, run_config.ensemble_config(digest), run_config.probe_options())
        except ValidationError as e:
            print(f"❌ {label}: {e}")
            failures.append(label)
            continue

        report = result.report
        write_report_json(report, out / f"{label}.json")
        for key, series in result.series.items():
            write_series_csv(series, out / f"{label}_{key}.csv")

        elapsed = time.time() - started
        if report.passed:
            print(f"✅ {label} ({probe}) passed in {elapsed:.1f}s")
        else:
            print(f"❌ {label} ({probe}) failed in {elapsed:.1f}s: {', '.join(report.failing)}")
            failures.append(label)

    print(f"\n{len(failures)} failing: {', '.join(failures)}" if failures else "\nAll acceptance probes passed")
    sys.exit(1 if failures else 0)


if __name__ == "__main__":
    main()
