"""Regenerate the example run-configuration files under configs/ from the presets."""

import sys
from pathlib import Path

# Add the parent directory to the path so we can import smallmass modules
sys.path.append(str(Path(__file__).parent.parent))

from smallmass.data.presets import RUN_CONFIG_PRESETS
from smallmass.schemas.run_config import render_run_config


def main():
    """Write one .ini file per preset."""
    target = Path(__file__).parent.parent / "configs"
    target.mkdir(exist_ok=True)

    for name, sections in RUN_CONFIG_PRESETS.items():
        path = target / f"{name}.ini"
        path.write_text(render_run_config(sections))
        print(f"✅ Wrote {path}")


if __name__ == "__main__":
    main()
