import sys

from lexidate.cli import main

sys.exit(main())
