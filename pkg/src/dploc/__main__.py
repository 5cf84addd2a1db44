import sys

from dploc.cli import main

sys.exit(main())
