import sys

from semcolor.cli import main

sys.exit(main())
