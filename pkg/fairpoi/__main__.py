import sys

from fairpoi.cli import main

sys.exit(main())
