import sys

from dsmo.cli import main

sys.exit(main())
