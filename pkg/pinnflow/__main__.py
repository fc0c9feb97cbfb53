import sys

from pinnflow.cli import main

sys.exit(main())
