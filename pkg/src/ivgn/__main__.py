import sys

from ivgn.cli import main

sys.exit(main())
