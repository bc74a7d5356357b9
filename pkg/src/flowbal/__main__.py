import sys

from flowbal.cli import main

sys.exit(main())
