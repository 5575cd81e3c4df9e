"""Run simulate -> calibrate -> train -> compare through the CLI.

    python3 demos/run_pipeline.py [config.toml]

Defaults to demos/tiny.toml. Pass --full to use the built-in
full-budget defaults instead (hours on one CPU).
"""

import sys
from pathlib import Path

from cutlearn.harness.cli import main

here = Path(__file__).parent
args = sys.argv[1:]
config = [] if "--full" in args else ["--config", args[0] if args else str(here / "tiny.toml")]

for cmd in ("simulate", "calibrate", "train", "compare"):
    print(f"== {cmd}")
    code = main([cmd, *config, "--seed", "0"])
    if code:
        sys.exit(code)
