import sys

from tracereg.cli import main

sys.exit(main())
