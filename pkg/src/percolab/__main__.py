import sys

from percolab.cli import main

sys.exit(main())
