"""
Traffic classification with confidence-based abstention - command-line entry point.

    python app.py run configs/synth_small.toml
    python app.py validate-manifest --run-dir runs/synth_small
"""

import sys

from cli.commands import main

if __name__ == "__main__":
    sys.exit(main())
