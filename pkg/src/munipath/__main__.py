"""Module entry point: ``python -m munipath``."""

import sys

from .cli import main

sys.exit(main())
