import sys

from mdphom.cli import main

sys.exit(main())
