import sys

from agd.cli import main

sys.exit(main())
