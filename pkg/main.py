"""Command-line runner."""

import sys

from qoptimal.cli import main

if __name__ == "__main__":
    sys.exit(main())
