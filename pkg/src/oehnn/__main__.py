import sys

from oehnn.cli import main

sys.exit(main())
