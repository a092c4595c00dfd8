#!/usr/bin/env python3
"""Regenerate all theory-figure datasets (correlation map, spectra, both
two-level sweeps and the four-level exciton-line sweep) into out/theory/."""

import sys

from photonpurity.cli import main

OUT = sys.argv[1] if len(sys.argv) > 1 else "out/theory"

for cmd in ("g2map", "spectrum", "sweep-pulse", "sweep-filter", "sweep-fourlevel"):
    code = main([cmd, "--out", OUT])
    if code != 0:
        sys.exit(code)
print(f"theory datasets written to {OUT}")
