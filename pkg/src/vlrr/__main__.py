import sys

from vlrr.cli import main

sys.exit(main())
