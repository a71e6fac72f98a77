"""
Entry point for the AFC pipeline CLI.

Usage:
    python main.py synth --out data/synthetic
    python main.py preprocess --config data/synthetic/afc.env --out out
"""

import os
import sys

# Modules live in afc/ and import each other by bare name
sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), 'afc'))

from cli import main


if __name__ == "__main__":
    sys.exit(main())
