import sys

from resonate.cli import main

sys.exit(main())
