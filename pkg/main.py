"""Entry point for the hbtm command line."""

import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
